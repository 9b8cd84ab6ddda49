#pragma once

#include <map>
#include <string>
#include <vector>

#include "lorascan/adapter_io.hpp"

namespace lorascan {

// Per-module feature record for the update delta W = B * A.
struct ModuleFeature {
  int layer_index = 0;
  ProjectionKind projection = ProjectionKind::q_proj;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  double frobN = 0.0;                   // ||BA||_F / sqrt(d_in * d_out)
  std::vector<double> singular_values;  // descending, zero-padded to rank
  double entropy = 0.0;                 // nats, amplitude-weighted
  double participation_ratio = 0.0;     // energy-based, in [1, rank]
  double asym = 0.0;                    // ln(||B||_F / ||A||_F)
  bool degenerate_spectrum = false;     // all singular values zero
  bool degenerate_asym = false;         // a factor has zero norm; excluded from asym aggregates
};

// Singular values of BA by the reduced path: thin QR of B and of A^T, then
// SVD of the r x r core R_B * R_A^T. Never materializes BA.
std::vector<double> delta_singular_values(const LoraModule& module);

double frobN(const LoraModule& module);

// H = -sum p_i ln p_i with p_i = sigma_i / sum(sigma); zero terms skipped.
// All-zero spectrum sets *degenerate and returns 0.
double spectral_entropy(const std::vector<double>& singular_values, bool* degenerate = nullptr);

// PR = (sum sigma^2)^2 / sum sigma^4. All-zero spectrum sets *degenerate and
// returns 0.
double participation_ratio(const std::vector<double>& singular_values, bool* degenerate = nullptr);

// ln(||B||_F / ||A||_F); a zero-norm factor sets *degenerate and returns 0.
double asym(const LoraModule& module, bool* degenerate = nullptr);

ModuleFeature module_feature(const LoraModule& module);
std::vector<ModuleFeature> bundle_features(const AdapterBundle& bundle);

// The 19 per-adapter scalars keyed by canonical name. A name is absent when
// its value is undefined (empty projection class, all-degenerate asym).
using ScalarFeatureSet = std::map<std::string, double>;

// Canonical report order of the 19 scalar names.
const std::vector<std::string>& scalar_feature_names();

// Aggregates per-module features to the scalar set: population statistics
// (std divides by N) globally and per projection class.
ScalarFeatureSet scalar_feature_set(const std::vector<ModuleFeature>& features);

struct GrowthRow {
  double clean_mean = 0.0;
  double poisoned_mean = 0.0;
  double growth_pct = 0.0;  // (poisoned / clean - 1) * 100
};

// Per-projection frobN growth between pooled module features of a clean and
// a poisoned cohort. Projections missing from either side are omitted with a
// warning.
std::map<ProjectionKind, GrowthRow> projection_growth(
    const std::vector<ModuleFeature>& clean, const std::vector<ModuleFeature>& poisoned,
    std::vector<std::string>* warnings = nullptr);

}  // namespace lorascan
