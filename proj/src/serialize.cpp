#include "fedmtd/serialize.hpp"

#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "fedmtd/errors.hpp"

namespace fedmtd::serialize {

void write_mlp(std::ostream& out, const numkit::MlpModel& model) {
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "mlp " << model.layers.size() << "\n";
  for (const auto& spec : model.layers) {
    out << spec.input_dim << " " << spec.output_dim << " "
        << numkit::to_string(spec.activation) << "\n";
  }
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    for (std::size_t i = 0; i < model.weights[li].size(); ++i) {
      out << (i == 0 ? "" : " ") << model.weights[li][i];
    }
    out << "\n";
    for (std::size_t i = 0; i < model.biases[li].size(); ++i) {
      out << (i == 0 ? "" : " ") << model.biases[li][i];
    }
    out << "\n";
  }
}

numkit::MlpModel read_mlp(std::istream& in) {
  std::string tag;
  std::size_t n_layers = 0;
  if (!(in >> tag >> n_layers) || tag != "mlp") throw ParseError("expected 'mlp <layers>'");
  numkit::MlpModel model;
  for (std::size_t li = 0; li < n_layers; ++li) {
    numkit::LayerSpec spec;
    std::string act;
    if (!(in >> spec.input_dim >> spec.output_dim >> act)) {
      throw ParseError("mlp: bad layer spec " + std::to_string(li));
    }
    spec.activation = numkit::activation_from_string(act);
    model.layers.push_back(spec);
  }
  numkit::validate_chain(model.layers);
  for (const auto& spec : model.layers) {
    std::vector<double> w(static_cast<std::size_t>(spec.input_dim) * spec.output_dim);
    for (auto& x : w) {
      if (!(in >> x)) throw ParseError("mlp: truncated weights");
    }
    std::vector<double> b(spec.output_dim);
    for (auto& x : b) {
      if (!(in >> x)) throw ParseError("mlp: truncated biases");
    }
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }
  return model;
}

}  // namespace fedmtd::serialize
