#include "fedmtd/environment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>

#include "fedmtd/errors.hpp"
#include "fedmtd/log.hpp"

namespace fedmtd::env {

const char* to_string(BehaviorClass b) {
  switch (b) {
    case BehaviorClass::Normal: return "normal";
    case BehaviorClass::TheTick: return "the_tick";
    case BehaviorClass::Jakoritar: return "jakoritar";
    case BehaviorClass::Dataleak: return "dataleak";
    case BehaviorClass::Beurk: return "beurk";
    case BehaviorClass::Bdvl: return "bdvl";
    case BehaviorClass::RansomwarePoc: return "ransomware_poc";
  }
  return "?";
}

BehaviorClass behavior_from_string(std::string_view name) {
  for (int i = 0; i < kNumBehaviorClasses; ++i) {
    const auto b = static_cast<BehaviorClass>(i);
    if (name == to_string(b)) return b;
  }
  throw ConfigError("unknown behavior class: " + std::string(name));
}

MalwareFamily family_of(BehaviorClass b) {
  switch (b) {
    case BehaviorClass::TheTick:
    case BehaviorClass::Jakoritar:
    case BehaviorClass::Dataleak:
      return MalwareFamily::CnC;
    case BehaviorClass::Beurk:
    case BehaviorClass::Bdvl:
      return MalwareFamily::Rootkit;
    case BehaviorClass::RansomwarePoc:
      return MalwareFamily::Ransomware;
    case BehaviorClass::Normal:
      break;
  }
  throw ConfigError("family_of: Normal has no malware family");
}

const char* to_string(MtdAction a) {
  switch (a) {
    case MtdAction::IpShuffling: return "ip_shuffling";
    case MtdAction::RansomwareTrap: return "ransomware_trap";
    case MtdAction::FileRandomization: return "file_randomization";
    case MtdAction::LibrarySanitation: return "library_sanitation";
  }
  return "?";
}

double EnvConfig::confusability_of(BehaviorClass b) const {
  const auto it = confusability.find(b);
  return it == confusability.end() ? 0.0 : it->second;
}

void EnvConfig::validate() const {
  if (feature_dim <= 0) throw ConfigError("feature_dim must be > 0");
  if (family_offset_magnitude <= 0.0) throw ConfigError("family_offset_magnitude must be > 0");
  if (within_family_spread < 0.0) throw ConfigError("within_family_spread must be >= 0");
  if (within_family_spread >= family_offset_magnitude) {
    throw ConfigError("within_family_spread must be < family_offset_magnitude");
  }
  if (noise_scale <= 0.0) throw ConfigError("noise_scale must be > 0");
  for (const auto& [b, c] : confusability) {
    if (b == BehaviorClass::Normal) throw ConfigError("confusability is malware-only");
    if (c < 0.0 || c > 1.0) throw ConfigError("confusability must be in [0,1]");
  }
}

std::vector<MtdAction> effective_set(BehaviorClass malware) {
  switch (malware) {
    case BehaviorClass::TheTick:
    case BehaviorClass::Jakoritar:
    case BehaviorClass::Dataleak:
      return {MtdAction::IpShuffling};
    case BehaviorClass::Beurk:
    case BehaviorClass::Bdvl:
      return {MtdAction::LibrarySanitation};
    case BehaviorClass::RansomwarePoc:
      return {MtdAction::RansomwareTrap, MtdAction::FileRandomization};
    case BehaviorClass::Normal:
      break;
  }
  throw ConfigError("effective_set: Normal is not a malware class");
}

bool is_effective(BehaviorClass malware, MtdAction action) {
  const auto set = effective_set(malware);
  return std::find(set.begin(), set.end(), action) != set.end();
}

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (const double x : v) s += x * x;
  return std::sqrt(s);
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// Gaussian vector orthogonalized against previous ones and normalized.
std::vector<double> random_unit_orthogonal(int dim, std::span<const std::vector<double>> prior,
                                           Rng& rng) {
  std::vector<double> v(dim);
  for (int attempt = 0; attempt < 64; ++attempt) {
    for (auto& x : v) x = rng.normal();
    for (const auto& p : prior) {
      double dot = 0.0;
      for (int i = 0; i < dim; ++i) dot += v[i] * p[i];
      for (int i = 0; i < dim; ++i) v[i] -= dot * p[i];
    }
    const double n = norm(v);
    if (n > 1e-6) {
      for (auto& x : v) x /= n;
      return v;
    }
  }
  throw ConfigError("could not construct orthogonal family direction (feature_dim too small?)");
}

MalwareFamily kFamilies[] = {MalwareFamily::CnC, MalwareFamily::Rootkit,
                             MalwareFamily::Ransomware};

}  // namespace

ProfileSet build_profiles(const EnvConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.feature_dim < 4) {
    throw ConfigError("feature_dim must be >= 4 to separate three families");
  }
  Rng rng(seed);
  ProfileSet profiles;
  profiles.feature_dim = cfg.feature_dim;

  auto& normal_mean = profiles.mean[static_cast<int>(BehaviorClass::Normal)];
  normal_mean.resize(cfg.feature_dim);
  for (auto& x : normal_mean) x = rng.uniform(0.0, 10.0);
  profiles.sigma[static_cast<int>(BehaviorClass::Normal)] = cfg.noise_scale;

  // One unit direction per family, mutually orthogonal.
  std::vector<std::vector<double>> dirs;
  for (std::size_t f = 0; f < 3; ++f) {
    dirs.push_back(random_unit_orthogonal(cfg.feature_dim, dirs, rng));
  }

  for (const BehaviorClass m : kMalwareClasses) {
    const int fi = static_cast<int>(family_of(m));
    std::vector<double> mean = normal_mean;
    for (int i = 0; i < cfg.feature_dim; ++i) {
      mean[i] += cfg.family_offset_magnitude * dirs[static_cast<std::size_t>(fi)][i];
    }
    // Per-malware perturbation orthogonal to the family direction keeps the
    // cluster geometry predictable; singleton families get none.
    bool lone_member = family_of(m) == MalwareFamily::Ransomware;
    if (!lone_member && cfg.within_family_spread > 0.0) {
      std::vector<double> pert(cfg.feature_dim);
      for (auto& x : pert) x = rng.normal();
      const auto& d = dirs[static_cast<std::size_t>(fi)];
      double dot = 0.0;
      for (int i = 0; i < cfg.feature_dim; ++i) dot += pert[i] * d[i];
      for (int i = 0; i < cfg.feature_dim; ++i) pert[i] -= dot * d[i];
      const double n = norm(pert);
      for (int i = 0; i < cfg.feature_dim; ++i) {
        mean[i] += cfg.within_family_spread * pert[i] / n;
      }
    }
    profiles.mean[static_cast<int>(m)] = std::move(mean);
    profiles.sigma[static_cast<int>(m)] = cfg.noise_scale;
  }

  // Separability floor so the anomaly detector has a fighting chance.
  for (const BehaviorClass m : kMalwareClasses) {
    const double d = distance(profiles.mean_of(m), normal_mean);
    if (d < 6.0 * cfg.noise_scale) {
      throw ConfigError(std::string("profile separability violated for ") + to_string(m) +
                        ": distance " + std::to_string(d) + " < 6*noise_scale");
    }
  }
  // Family clustering: same-family pairs are closer than any cross-family pair.
  for (const BehaviorClass a : kMalwareClasses) {
    for (const BehaviorClass b : kMalwareClasses) {
      if (a == b || family_of(a) != family_of(b)) continue;
      const double within = distance(profiles.mean_of(a), profiles.mean_of(b));
      for (const BehaviorClass c : kMalwareClasses) {
        if (family_of(c) == family_of(a)) continue;
        const double cross = distance(profiles.mean_of(a), profiles.mean_of(c));
        if (within >= cross) {
          throw ConfigError("family clustering violated: d(" + std::string(to_string(a)) + "," +
                            to_string(b) + ") >= d(" + to_string(a) + "," + to_string(c) + ")");
        }
      }
    }
  }
  return profiles;
}

Fingerprint sample_fingerprint(const ProfileSet& profiles, BehaviorClass b, Rng& rng) {
  const auto& mean = profiles.mean_of(b);
  const double sigma = profiles.sigma_of(b);
  Fingerprint fp;
  fp.true_class = b;
  fp.values.resize(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    fp.values[i] = mean[i] + rng.normal(0.0, sigma);
  }
  return fp;
}

BehaviorClass afterstate(BehaviorClass malware, MtdAction action, const EnvConfig& cfg,
                         Rng& rng) {
  if (malware == BehaviorClass::Normal) {
    throw ConfigError("afterstate: state is not under attack");
  }
  if (is_effective(malware, action)) return BehaviorClass::Normal;
  const double c = cfg.confusability_of(malware);
  if (c > 0.0 && rng.uniform_unit() < c) return BehaviorClass::Normal;
  return malware;
}

BehaviorClass spawn_attack(std::span<const BehaviorClass> allowed, Rng& rng) {
  if (allowed.empty()) throw ConfigError("spawn_attack: empty malware set");
  for (const BehaviorClass b : allowed) {
    if (b == BehaviorClass::Normal) throw ConfigError("spawn_attack: Normal is not an attack");
  }
  return allowed[rng.uniform_index(allowed.size())];
}

void save_profiles(const ProfileSet& profiles, std::ostream& out) {
  out << "# class sigma mean...\n";
  out << profiles.feature_dim << "\n";
  out.precision(17);
  for (int i = 0; i < kNumBehaviorClasses; ++i) {
    const auto b = static_cast<BehaviorClass>(i);
    out << to_string(b) << " " << profiles.sigma[i];
    for (const double x : profiles.mean[i]) out << " " << x;
    out << "\n";
  }
}

ProfileSet load_profiles(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw ParseError("profiles: missing header (line 1)");
  ProfileSet profiles;
  if (!(in >> profiles.feature_dim) || profiles.feature_dim <= 0) {
    throw ParseError("profiles: bad feature_dim (line 2)");
  }
  for (int i = 0; i < kNumBehaviorClasses; ++i) {
    std::string name;
    if (!(in >> name)) throw ParseError("profiles: missing class row (line " +
                                        std::to_string(3 + i) + ")");
    const BehaviorClass b = behavior_from_string(name);
    double sigma = 0.0;
    if (!(in >> sigma)) throw ParseError("profiles: bad sigma for " + name);
    std::vector<double> mean(profiles.feature_dim);
    for (auto& x : mean) {
      if (!(in >> x)) throw ParseError("profiles: truncated mean for " + name);
    }
    profiles.mean[static_cast<int>(b)] = std::move(mean);
    profiles.sigma[static_cast<int>(b)] = sigma;
  }
  return profiles;
}

void save_profiles_file(const ProfileSet& profiles, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for write: " + path);
  save_profiles(profiles, out);
}

ProfileSet load_profiles_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open: " + path);
  return load_profiles(in);
}

}  // namespace fedmtd::env
