#include "lorascan/weight_features.hpp"

#include <algorithm>
#include <cmath>

#include "lorascan/error.hpp"

namespace lorascan {

namespace {

// R_B * R_A^T, the r x r core whose singular values equal those of BA.
Matrix reduced_core(const LoraModule& module) {
  const Matrix rb = thin_qr_r(module.B);
  const Matrix ra = thin_qr_r(transpose(module.A));
  return matmul(rb, transpose(ra));
}

double frobn_from_core(const Matrix& core, std::size_t d_in, std::size_t d_out) {
  return frobenius_norm(core) / std::sqrt(static_cast<double>(d_in) * static_cast<double>(d_out));
}

double mean_of(const std::vector<double>& values) {
  double sum = 0.0;
  for (const double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double population_std(const std::vector<double>& values) {
  const double mean = mean_of(values);
  double sum = 0.0;
  for (const double v : values) sum += (v - mean) * (v - mean);
  return std::sqrt(sum / static_cast<double>(values.size()));
}

}  // namespace

std::vector<double> delta_singular_values(const LoraModule& module) {
  auto sv = jacobi_singular_values(reduced_core(module));
  sv.resize(module.rank(), 0.0);
  return sv;
}

double frobN(const LoraModule& module) {
  return frobn_from_core(reduced_core(module), module.d_in(), module.d_out());
}

double spectral_entropy(const std::vector<double>& singular_values, bool* degenerate) {
  double total = 0.0;
  for (const double sv : singular_values) total += sv;
  if (degenerate) *degenerate = total == 0.0;
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (const double sv : singular_values) {
    if (sv == 0.0) continue;
    const double p = sv / total;
    h -= p * std::log(p);
  }
  return h;
}

double participation_ratio(const std::vector<double>& singular_values, bool* degenerate) {
  double energy = 0.0;
  double quartic = 0.0;
  for (const double sv : singular_values) {
    const double sq = sv * sv;
    energy += sq;
    quartic += sq * sq;
  }
  if (degenerate) *degenerate = energy == 0.0;
  if (energy == 0.0) return 0.0;
  return energy * energy / quartic;
}

double asym(const LoraModule& module, bool* degenerate) {
  const double norm_a = frobenius_norm(module.A);
  const double norm_b = frobenius_norm(module.B);
  const bool zero_side = norm_a == 0.0 || norm_b == 0.0;
  if (degenerate) *degenerate = zero_side;
  if (zero_side) return 0.0;
  return std::log(norm_b / norm_a);
}

ModuleFeature module_feature(const LoraModule& module) {
  ModuleFeature feature;
  feature.layer_index = module.layer_index;
  feature.projection = module.projection;
  feature.d_in = module.d_in();
  feature.d_out = module.d_out();
  const Matrix core = reduced_core(module);
  feature.frobN = frobn_from_core(core, feature.d_in, feature.d_out);
  feature.singular_values = jacobi_singular_values(core);
  feature.singular_values.resize(module.rank(), 0.0);
  feature.entropy = spectral_entropy(feature.singular_values, &feature.degenerate_spectrum);
  feature.participation_ratio = participation_ratio(feature.singular_values, nullptr);
  feature.asym = asym(module, &feature.degenerate_asym);
  return feature;
}

std::vector<ModuleFeature> bundle_features(const AdapterBundle& bundle) {
  std::vector<ModuleFeature> features;
  features.reserve(bundle.modules.size());
  for (const LoraModule& module : bundle.modules) features.push_back(module_feature(module));
  return features;
}

const std::vector<std::string>& scalar_feature_names() {
  static const std::vector<std::string> names = {
      "global_frobN_mean",  "global_frobN_max",  "global_frobN_std", "global_frobN_min",
      "attn_frobN_mean",    "mlp_frobN_mean",    "attn_mlp_frobN_ratio",
      "global_entropy_mean", "global_entropy_std", "attn_entropy_mean", "mlp_entropy_mean",
      "global_pr_mean",     "global_pr_std",     "attn_pr_mean",     "mlp_pr_mean",
      "global_asym_mean",   "global_asym_std",   "attn_asym_mean",   "mlp_asym_mean"};
  return names;
}

ScalarFeatureSet scalar_feature_set(const std::vector<ModuleFeature>& features) {
  if (features.empty()) throw Error("scalar_feature_set: empty feature list");

  std::vector<double> frob, frob_attn, frob_mlp;
  std::vector<double> entropy, entropy_attn, entropy_mlp;
  std::vector<double> pr, pr_attn, pr_mlp;
  std::vector<double> asym_all, asym_attn, asym_mlp;
  for (const ModuleFeature& f : features) {
    const bool attn = projection_class(f.projection) == ProjectionClass::attention;
    frob.push_back(f.frobN);
    entropy.push_back(f.entropy);
    pr.push_back(f.participation_ratio);
    (attn ? frob_attn : frob_mlp).push_back(f.frobN);
    (attn ? entropy_attn : entropy_mlp).push_back(f.entropy);
    (attn ? pr_attn : pr_mlp).push_back(f.participation_ratio);
    if (!f.degenerate_asym) {
      asym_all.push_back(f.asym);
      (attn ? asym_attn : asym_mlp).push_back(f.asym);
    }
  }

  ScalarFeatureSet out;
  out["global_frobN_mean"] = mean_of(frob);
  out["global_frobN_max"] = *std::max_element(frob.begin(), frob.end());
  out["global_frobN_std"] = population_std(frob);
  out["global_frobN_min"] = *std::min_element(frob.begin(), frob.end());
  if (!frob_attn.empty()) out["attn_frobN_mean"] = mean_of(frob_attn);
  if (!frob_mlp.empty()) out["mlp_frobN_mean"] = mean_of(frob_mlp);
  if (!frob_attn.empty() && !frob_mlp.empty() && mean_of(frob_mlp) != 0.0)
    out["attn_mlp_frobN_ratio"] = mean_of(frob_attn) / mean_of(frob_mlp);

  out["global_entropy_mean"] = mean_of(entropy);
  out["global_entropy_std"] = population_std(entropy);
  if (!entropy_attn.empty()) out["attn_entropy_mean"] = mean_of(entropy_attn);
  if (!entropy_mlp.empty()) out["mlp_entropy_mean"] = mean_of(entropy_mlp);

  out["global_pr_mean"] = mean_of(pr);
  out["global_pr_std"] = population_std(pr);
  if (!pr_attn.empty()) out["attn_pr_mean"] = mean_of(pr_attn);
  if (!pr_mlp.empty()) out["mlp_pr_mean"] = mean_of(pr_mlp);

  if (!asym_all.empty()) {
    out["global_asym_mean"] = mean_of(asym_all);
    out["global_asym_std"] = population_std(asym_all);
  }
  if (!asym_attn.empty()) out["attn_asym_mean"] = mean_of(asym_attn);
  if (!asym_mlp.empty()) out["mlp_asym_mean"] = mean_of(asym_mlp);
  return out;
}

std::map<ProjectionKind, GrowthRow> projection_growth(const std::vector<ModuleFeature>& clean,
                                                      const std::vector<ModuleFeature>& poisoned,
                                                      std::vector<std::string>* warnings) {
  if (clean.empty() || poisoned.empty())
    throw Error("projection_growth: both cohorts must be nonempty");
  auto warn = [&](const std::string& message) {
    if (warnings) warnings->push_back(message);
  };
  std::map<ProjectionKind, std::vector<double>> clean_by_proj, poisoned_by_proj;
  for (const ModuleFeature& f : clean) clean_by_proj[f.projection].push_back(f.frobN);
  for (const ModuleFeature& f : poisoned) poisoned_by_proj[f.projection].push_back(f.frobN);

  std::map<ProjectionKind, GrowthRow> out;
  for (const ProjectionKind kind : kAllProjections) {
    const bool in_clean = clean_by_proj.count(kind) > 0;
    const bool in_poisoned = poisoned_by_proj.count(kind) > 0;
    if (!in_clean && !in_poisoned) continue;
    if (!in_clean || !in_poisoned) {
      warn("projection " + projection_name(kind) + " present in only one cohort; omitted");
      continue;
    }
    GrowthRow row;
    row.clean_mean = mean_of(clean_by_proj[kind]);
    row.poisoned_mean = mean_of(poisoned_by_proj[kind]);
    if (row.clean_mean == 0.0) {
      warn("projection " + projection_name(kind) + " has zero clean mean; omitted");
      continue;
    }
    row.growth_pct = (row.poisoned_mean / row.clean_mean - 1.0) * 100.0;
    out.emplace(kind, row);
  }
  return out;
}

}  // namespace lorascan
