#pragma once

#include <iosfwd>

#include "fedmtd/numkit.hpp"

namespace fedmtd::serialize {

// Text format: layer count, per-layer "in out activation" lines, then one
// line of weights and one of biases per layer at full double precision.
void write_mlp(std::ostream& out, const numkit::MlpModel& model);
numkit::MlpModel read_mlp(std::istream& in);

}  // namespace fedmtd::serialize
