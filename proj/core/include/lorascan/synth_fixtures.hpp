#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lorascan/adapter_io.hpp"
#include "lorascan/weight_features.hpp"

namespace lorascan {

struct ProjectionDims {
  std::size_t d_in = 0;
  std::size_t d_out = 0;
};

// Norm-targeted generation profile: modules are drawn from seeded Gaussians
// and rescaled so each module's frobN hits its projection's target mean times
// a per-module (1 + epsilon) factor with relative spread sigma_rel.
struct SynthProfile {
  std::map<ProjectionKind, double> frobn_mean;
  std::map<ProjectionKind, ProjectionDims> dims;
  double sigma_rel = 0.003;
  int layers = 28;
  int rank = 16;
  double alpha = 16.0;
  std::uint64_t seed = 0;
  std::string base_model_id;
};

// Per-projection multiplicative growth applied to the profile means;
// projections absent from the map keep multiplier 1.
struct GrowthSpec {
  std::map<ProjectionKind, double> multiplier;

  double at(ProjectionKind kind) const {
    const auto it = multiplier.find(kind);
    return it == multiplier.end() ? 1.0 : it->second;
  }
  static GrowthSpec none() { return {}; }
};

// Presets for the two base-model shapes the toolchain ships with. The 1.5B
// profile carries the measured clean per-projection means and growth; the 7B
// preset models the seed-dominated regime (growth far below cross-seed
// noise), for negative-control tests.
SynthProfile qwen_1_5b_profile();
GrowthSpec qwen_1_5b_growth();
SynthProfile qwen_7b_profile();
GrowthSpec qwen_7b_growth();

AdapterBundle gen_adapter(const SynthProfile& profile, const std::optional<GrowthSpec>& growth,
                          std::string adapter_id);

// Dense-materialization oracle: builds BA explicitly and computes every
// feature by direct formula over an independent dense SVD. Shares no code
// with the reduced QR path in weight_features.
ModuleFeature oracle_features(const LoraModule& module);

// n_clean bundles from the profile and n_poisoned from profile x growth,
// each with a distinct seed derived from the master seed.
std::vector<std::pair<AdapterBundle, bool>> gen_cohort(int n_clean, int n_poisoned,
                                                       const SynthProfile& profile,
                                                       const GrowthSpec& growth,
                                                       std::uint64_t seed);

// Streaming form of gen_cohort: yields the same bundles in the same order
// without holding the whole cohort in memory (a full-shape cohort runs to
// gigabytes). gen_cohort is implemented on top of this.
void gen_cohort_stream(int n_clean, int n_poisoned, const SynthProfile& profile,
                       const GrowthSpec& growth, std::uint64_t seed,
                       const std::function<void(AdapterBundle&&, bool)>& sink);

std::string profile_to_json(const SynthProfile& profile);
SynthProfile profile_from_json(const std::string& text);
std::string growth_to_json(const GrowthSpec& growth);
GrowthSpec growth_from_json(const std::string& text);

}  // namespace lorascan
