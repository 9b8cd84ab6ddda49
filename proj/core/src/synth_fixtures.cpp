#include "lorascan/synth_fixtures.hpp"

#include <cmath>
#include <cstdio>

#include <Eigen/Dense>
#include <json.hpp>

#include "lorascan/matrix.hpp"
#include "lorascan/rng.hpp"

namespace lorascan {

namespace {

using ordered_json = nlohmann::ordered_json;

using RowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

SynthProfile scaled_profile(double mean_scale, std::size_t hidden, std::size_t kv_dim,
                            std::size_t intermediate, double sigma_rel,
                            std::string base_model_id) {
  SynthProfile profile;
  profile.frobn_mean = {
      {ProjectionKind::q_proj, 1.643e-4 * mean_scale},
      {ProjectionKind::k_proj, 1.639e-4 * mean_scale},
      {ProjectionKind::v_proj, 1.707e-4 * mean_scale},
      {ProjectionKind::o_proj, 1.801e-4 * mean_scale},
      {ProjectionKind::gate_proj, 2.850e-4 * mean_scale},
      {ProjectionKind::up_proj, 2.221e-4 * mean_scale},
      {ProjectionKind::down_proj, 1.645e-4 * mean_scale},
  };
  profile.dims = {
      {ProjectionKind::q_proj, {hidden, hidden}},
      {ProjectionKind::k_proj, {hidden, kv_dim}},
      {ProjectionKind::v_proj, {hidden, kv_dim}},
      {ProjectionKind::o_proj, {hidden, hidden}},
      {ProjectionKind::gate_proj, {hidden, intermediate}},
      {ProjectionKind::up_proj, {hidden, intermediate}},
      {ProjectionKind::down_proj, {intermediate, hidden}},
  };
  profile.sigma_rel = sigma_rel;
  profile.base_model_id = std::move(base_model_id);
  return profile;
}

}  // namespace

SynthProfile qwen_1_5b_profile() {
  return scaled_profile(1.0, 1536, 256, 8960, 0.003, "Qwen/Qwen2.5-1.5B-Instruct");
}

GrowthSpec qwen_1_5b_growth() {
  GrowthSpec growth;
  growth.multiplier = {
      {ProjectionKind::q_proj, 1.0087},  {ProjectionKind::k_proj, 1.0114},
      {ProjectionKind::v_proj, 1.0040},  {ProjectionKind::o_proj, 1.0140},
      {ProjectionKind::gate_proj, 1.0291}, {ProjectionKind::up_proj, 1.0261},
      {ProjectionKind::down_proj, 1.0187},
  };
  return growth;
}

SynthProfile qwen_7b_profile() {
  // Measured 7B clean level sits near 0.59x the 1.5B level, with cross-seed
  // spread large relative to growth; sigma_rel 0.02 reproduces that regime.
  return scaled_profile(0.59, 3584, 512, 18944, 0.02, "Qwen/Qwen2.5-7B-Instruct");
}

GrowthSpec qwen_7b_growth() {
  GrowthSpec growth;
  growth.multiplier = {
      {ProjectionKind::q_proj, 1.0042},  {ProjectionKind::k_proj, 1.0013},
      {ProjectionKind::v_proj, 1.0064},  {ProjectionKind::o_proj, 1.0106},
      {ProjectionKind::gate_proj, 1.0077}, {ProjectionKind::up_proj, 1.0161},
      {ProjectionKind::down_proj, 1.0086},
  };
  return growth;
}

AdapterBundle gen_adapter(const SynthProfile& profile, const std::optional<GrowthSpec>& growth,
                          std::string adapter_id) {
  if (profile.rank < 1) throw Error("gen_adapter: rank must be positive");
  if (profile.layers < 1) throw Error("gen_adapter: layer count must be positive");
  if (profile.sigma_rel < 0.0) throw Error("gen_adapter: sigma_rel must be nonnegative");

  AdapterBundle bundle;
  bundle.adapter_id = std::move(adapter_id);
  bundle.config.rank = profile.rank;
  bundle.config.alpha = profile.alpha;
  bundle.config.base_model_id = profile.base_model_id;
  for (const auto& [kind, dims] : profile.dims) bundle.config.target_modules.insert(projection_name(kind));

  const std::size_t rank = static_cast<std::size_t>(profile.rank);
  std::uint64_t ordinal = 0;
  for (int layer = 0; layer < profile.layers; ++layer) {
    for (const ProjectionKind kind : kAllProjections) {
      const auto dims_it = profile.dims.find(kind);
      const auto mean_it = profile.frobn_mean.find(kind);
      if (dims_it == profile.dims.end() || mean_it == profile.frobn_mean.end()) continue;
      if (mean_it->second <= 0.0) throw Error("gen_adapter: profile means must be positive");
      const auto [d_in, d_out] = dims_it->second;
      if (d_in < rank || d_out < rank)
        throw Error("gen_adapter: projection dimensions smaller than rank");

      Rng rng(mix_seed(profile.seed, ordinal++));
      NormalSampler normal;
      LoraModule module;
      module.layer_index = layer;
      module.projection = kind;
      module.A = Matrix(rank, d_in);
      module.B = Matrix(d_out, rank);
      for (double& v : module.A.data) v = normal(rng);
      for (double& v : module.B.data) v = normal(rng);
      const double epsilon = profile.sigma_rel * normal(rng);

      const double target = mean_it->second * (growth ? growth->at(kind) : 1.0) * (1.0 + epsilon);
      const Matrix core = matmul(thin_qr_r(module.B), transpose(thin_qr_r(transpose(module.A))));
      const double current =
          frobenius_norm(core) / std::sqrt(static_cast<double>(d_in) * static_cast<double>(d_out));
      const double factor = std::sqrt(target / current);
      for (double& v : module.A.data) v *= factor;
      for (double& v : module.B.data) v *= factor;
      bundle.modules.push_back(std::move(module));
    }
  }
  return bundle;
}

ModuleFeature oracle_features(const LoraModule& module) {
  const RowMajorMap a(module.A.data.data(), static_cast<Eigen::Index>(module.A.rows),
                      static_cast<Eigen::Index>(module.A.cols));
  const RowMajorMap b(module.B.data.data(), static_cast<Eigen::Index>(module.B.rows),
                      static_cast<Eigen::Index>(module.B.cols));
  const Eigen::MatrixXd delta = b * a;

  ModuleFeature feature;
  feature.layer_index = module.layer_index;
  feature.projection = module.projection;
  feature.d_in = module.d_in();
  feature.d_out = module.d_out();
  feature.frobN = delta.norm() / std::sqrt(static_cast<double>(feature.d_in) *
                                           static_cast<double>(feature.d_out));

  const Eigen::BDCSVD<Eigen::MatrixXd> svd(delta);
  const auto& values = svd.singularValues();
  feature.singular_values.assign(values.data(),
                                 values.data() + std::min<Eigen::Index>(values.size(),
                                                                        static_cast<Eigen::Index>(module.rank())));
  feature.singular_values.resize(module.rank(), 0.0);

  double total = 0.0, energy = 0.0, quartic = 0.0;
  for (const double sv : feature.singular_values) {
    total += sv;
    energy += sv * sv;
    quartic += sv * sv * sv * sv;
  }
  feature.degenerate_spectrum = total == 0.0;
  if (total > 0.0) {
    for (const double sv : feature.singular_values) {
      if (sv == 0.0) continue;
      const double p = sv / total;
      feature.entropy -= p * std::log(p);
    }
    feature.participation_ratio = energy * energy / quartic;
  }

  const double norm_a = a.norm();
  const double norm_b = b.norm();
  feature.degenerate_asym = norm_a == 0.0 || norm_b == 0.0;
  if (!feature.degenerate_asym) feature.asym = std::log(norm_b / norm_a);
  return feature;
}

void gen_cohort_stream(int n_clean, int n_poisoned, const SynthProfile& profile,
                       const GrowthSpec& growth, std::uint64_t seed,
                       const std::function<void(AdapterBundle&&, bool)>& sink) {
  if (n_clean < 1 || n_poisoned < 1)
    throw Error("gen_cohort: both cohort sizes must be at least 1");
  char id[32];
  for (int i = 0; i < n_clean; ++i) {
    SynthProfile p = profile;
    p.seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    std::snprintf(id, sizeof id, "clean_%03d", i);
    sink(gen_adapter(p, std::nullopt, id), false);
  }
  for (int j = 0; j < n_poisoned; ++j) {
    SynthProfile p = profile;
    p.seed = mix_seed(seed, static_cast<std::uint64_t>(n_clean + j));
    std::snprintf(id, sizeof id, "poisoned_%03d", j);
    sink(gen_adapter(p, growth, id), true);
  }
}

std::vector<std::pair<AdapterBundle, bool>> gen_cohort(int n_clean, int n_poisoned,
                                                       const SynthProfile& profile,
                                                       const GrowthSpec& growth,
                                                       std::uint64_t seed) {
  std::vector<std::pair<AdapterBundle, bool>> cohort;
  cohort.reserve(static_cast<std::size_t>(n_clean + n_poisoned));
  gen_cohort_stream(n_clean, n_poisoned, profile, growth, seed,
                    [&](AdapterBundle&& bundle, bool poisoned) {
                      cohort.emplace_back(std::move(bundle), poisoned);
                    });
  return cohort;
}

std::string profile_to_json(const SynthProfile& profile) {
  ordered_json doc;
  doc["rank"] = profile.rank;
  doc["layers"] = profile.layers;
  doc["sigma_rel"] = profile.sigma_rel;
  doc["alpha"] = profile.alpha;
  doc["seed"] = profile.seed;
  doc["base_model_id"] = profile.base_model_id;
  ordered_json projections = ordered_json::object();
  for (const ProjectionKind kind : kAllProjections) {
    const auto dims_it = profile.dims.find(kind);
    const auto mean_it = profile.frobn_mean.find(kind);
    if (dims_it == profile.dims.end() || mean_it == profile.frobn_mean.end()) continue;
    projections[projection_name(kind)] = {{"d_in", dims_it->second.d_in},
                                          {"d_out", dims_it->second.d_out},
                                          {"frobn_mean", mean_it->second}};
  }
  doc["projections"] = std::move(projections);
  return doc.dump(2);
}

SynthProfile profile_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("profile is not valid JSON: ") + e.what());
  }
  SynthProfile profile;
  try {
    profile.rank = doc.at("rank").get<int>();
    profile.layers = doc.at("layers").get<int>();
    if (doc.contains("sigma_rel")) profile.sigma_rel = doc["sigma_rel"].get<double>();
    if (doc.contains("alpha")) profile.alpha = doc["alpha"].get<double>();
    if (doc.contains("seed")) profile.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("base_model_id")) profile.base_model_id = doc["base_model_id"].get<std::string>();
    for (const auto& [name, entry] : doc.at("projections").items()) {
      const auto kind = projection_from_name(name);
      if (!kind) throw ParseError("profile projection '" + name + "' is not a known projection");
      profile.dims[*kind] = {entry.at("d_in").get<std::size_t>(),
                             entry.at("d_out").get<std::size_t>()};
      profile.frobn_mean[*kind] = entry.at("frobn_mean").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed profile: ") + e.what());
  }
  if (profile.rank < 1) throw ParseError("profile rank must be positive");
  if (profile.sigma_rel < 0.0) throw ParseError("profile sigma_rel must be nonnegative");
  for (const auto& [kind, mean] : profile.frobn_mean)
    if (mean <= 0.0) throw ParseError("profile frobn_mean values must be positive");
  return profile;
}

std::string growth_to_json(const GrowthSpec& growth) {
  ordered_json doc = ordered_json::object();
  for (const ProjectionKind kind : kAllProjections) {
    const auto it = growth.multiplier.find(kind);
    if (it != growth.multiplier.end()) doc[projection_name(kind)] = it->second;
  }
  return doc.dump(2);
}

GrowthSpec growth_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("growth spec is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("growth spec must be a JSON object");
  GrowthSpec growth;
  for (const auto& [name, value] : doc.items()) {
    const auto kind = projection_from_name(name);
    if (!kind) throw ParseError("growth projection '" + name + "' is not a known projection");
    if (!value.is_number() || value.get<double>() <= 0.0)
      throw ParseError("growth multiplier for '" + name + "' must be a positive number");
    growth.multiplier[*kind] = value.get<double>();
  }
  return growth;
}

}  // namespace lorascan
