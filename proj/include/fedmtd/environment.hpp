#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "fedmtd/rng.hpp"

namespace fedmtd::env {

enum class BehaviorClass {
  Normal = 0,
  TheTick = 1,
  Jakoritar = 2,
  Dataleak = 3,
  Beurk = 4,
  Bdvl = 5,
  RansomwarePoc = 6,
};

enum class MalwareFamily { CnC, Rootkit, Ransomware };

constexpr int kNumBehaviorClasses = 7;
constexpr std::array<BehaviorClass, 6> kMalwareClasses = {
    BehaviorClass::TheTick, BehaviorClass::Jakoritar,    BehaviorClass::Dataleak,
    BehaviorClass::Beurk,   BehaviorClass::Bdvl,         BehaviorClass::RansomwarePoc,
};

const char* to_string(BehaviorClass b);
BehaviorClass behavior_from_string(std::string_view name);
MalwareFamily family_of(BehaviorClass b);  // throws ConfigError for Normal

enum class MtdAction {
  IpShuffling = 0,
  RansomwareTrap = 1,
  FileRandomization = 2,
  LibrarySanitation = 3,
};

constexpr int kNumActions = 4;
const char* to_string(MtdAction a);

struct EnvConfig {
  int feature_dim = 85;
  double family_offset_magnitude = 10.0;
  double within_family_spread = 4.0;
  double noise_scale = 1.0;
  // Probability that a wrong MTD still lands the device in an apparently
  // normal state (0 = crisp ground truth). Missing entries mean 0.
  std::map<BehaviorClass, double> confusability;

  double confusability_of(BehaviorClass b) const;
  void validate() const;  // throws ConfigError
};

// Per-class generative parameters. Malware means sit at
// normal + family_direction * offset + per-class perturbation, so classes of
// one family cluster together and away from other families.
struct ProfileSet {
  int feature_dim = 0;
  std::array<std::vector<double>, kNumBehaviorClasses> mean;
  std::array<double, kNumBehaviorClasses> sigma{};

  const std::vector<double>& mean_of(BehaviorClass b) const {
    return mean[static_cast<int>(b)];
  }
  double sigma_of(BehaviorClass b) const { return sigma[static_cast<int>(b)]; }
};

struct Fingerprint {
  std::vector<double> values;
  BehaviorClass true_class = BehaviorClass::Normal;  // hidden from the agent
};

// MTD actions that mitigate a malware class. Throws ConfigError for Normal.
std::vector<MtdAction> effective_set(BehaviorClass malware);
bool is_effective(BehaviorClass malware, MtdAction action);

ProfileSet build_profiles(const EnvConfig& cfg, std::uint64_t seed);

Fingerprint sample_fingerprint(const ProfileSet& profiles, BehaviorClass b, Rng& rng);

// State transition after deploying an MTD: effective action -> Normal;
// otherwise the malware persists except with probability confusability(m).
BehaviorClass afterstate(BehaviorClass malware, MtdAction action, const EnvConfig& cfg, Rng& rng);

BehaviorClass spawn_attack(std::span<const BehaviorClass> allowed, Rng& rng);

// Plain-text tabular export (class name, sigma, mean vector) for audits.
void save_profiles(const ProfileSet& profiles, std::ostream& out);
ProfileSet load_profiles(std::istream& in);
void save_profiles_file(const ProfileSet& profiles, const std::string& path);
ProfileSet load_profiles_file(const std::string& path);

}  // namespace fedmtd::env
