#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "lorascan/synth_fixtures.hpp"
#include "lorascan/weight_features.hpp"

using namespace lorascan;

namespace {

SynthProfile tiny_profile(double sigma_rel, std::uint64_t seed, int layers = 2) {
  SynthProfile p = qwen_1_5b_profile();
  // shrink dims so unit tests stay fast; targeting logic is dimension-free
  for (auto& [kind, dims] : p.dims) {
    dims.d_in = std::max<std::size_t>(dims.d_in / 32, 24);
    dims.d_out = std::max<std::size_t>(dims.d_out / 32, 24);
  }
  p.sigma_rel = sigma_rel;
  p.layers = layers;
  p.seed = seed;
  return p;
}

bool bundles_equal(const AdapterBundle& a, const AdapterBundle& b) {
  if (a.modules.size() != b.modules.size()) return false;
  for (std::size_t i = 0; i < a.modules.size(); ++i) {
    if (a.modules[i].A.data != b.modules[i].A.data) return false;
    if (a.modules[i].B.data != b.modules[i].B.data) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("gen_adapter hits norm targets exactly at zero spread") {
  const SynthProfile profile = tiny_profile(0.0, 31);
  const AdapterBundle bundle = gen_adapter(profile, std::nullopt, "clean");
  REQUIRE(bundle.modules.size() == 14);
  CHECK(bundle.config.rank == profile.rank);
  CHECK(bundle.config.alpha == profile.alpha);

  for (const LoraModule& m : bundle.modules) {
    const double target = profile.frobn_mean.at(m.projection);
    // measured through the independent dense route
    const ModuleFeature oracle = oracle_features(m);
    CHECK(std::abs(oracle.frobN - target) / target < 1e-12);
    CHECK(m.rank() == 16);
    CHECK(m.d_in() == profile.dims.at(m.projection).d_in);
    CHECK(m.d_out() == profile.dims.at(m.projection).d_out);
  }
}

TEST_CASE("growth multipliers scale the targets exactly at zero spread") {
  const SynthProfile profile = tiny_profile(0.0, 32);
  GrowthSpec growth;
  growth.multiplier[ProjectionKind::gate_proj] = 1.0291;
  growth.multiplier[ProjectionKind::q_proj] = 1.0087;
  const AdapterBundle bundle = gen_adapter(profile, growth, "poisoned");
  for (const LoraModule& m : bundle.modules) {
    const double target = profile.frobn_mean.at(m.projection) * growth.at(m.projection);
    const double got = oracle_features(m).frobN;
    CHECK(std::abs(got - target) / target < 1e-12);
  }
}

TEST_CASE("generation is bit-deterministic in the seed") {
  const SynthProfile profile = tiny_profile(0.003, 1234);
  const AdapterBundle a = gen_adapter(profile, std::nullopt, "a");
  const AdapterBundle b = gen_adapter(profile, std::nullopt, "b");
  CHECK(bundles_equal(a, b));

  SynthProfile other = profile;
  other.seed = 1235;
  CHECK(!bundles_equal(a, gen_adapter(other, std::nullopt, "c")));

  // an all-ones growth spec is the identity on targets: same bytes, same seed
  GrowthSpec unit;
  for (const ProjectionKind kind : kAllProjections) unit.multiplier[kind] = 1.0;
  CHECK(bundles_equal(a, gen_adapter(profile, unit, "d")));
}

TEST_CASE("noise epsilon varies per module") {
  const SynthProfile profile = tiny_profile(0.05, 77, 4);
  const AdapterBundle bundle = gen_adapter(profile, std::nullopt, "n");
  std::set<long long> quantized;
  for (const LoraModule& m : bundle.modules)
    if (m.projection == ProjectionKind::q_proj)
      quantized.insert(llround(frobN(m) * 1e12));
  CHECK(quantized.size() > 1);  // same target, different (1 + epsilon) draws
}

TEST_CASE("oracle_features on constructed modules") {
  LoraModule zero;
  zero.A = Matrix(4, 8);
  zero.B = Matrix(6, 4);
  const ModuleFeature z = oracle_features(zero);
  CHECK(z.frobN == 0.0);
  CHECK(z.degenerate_spectrum);
  CHECK(z.degenerate_asym);
  CHECK(z.singular_values == std::vector<double>(4, 0.0));

  LoraModule unit;
  unit.A = Matrix(1, 4);
  unit.B = Matrix(4, 1);
  unit.A(0, 0) = 1.0;
  unit.B(0, 0) = 1.0;
  const ModuleFeature u = oracle_features(unit);
  CHECK(u.frobN == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(u.entropy == 0.0);
  CHECK(u.participation_ratio == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(u.asym == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
}

TEST_CASE("gen_cohort labels, ids, and per-adapter seeds") {
  const SynthProfile profile = tiny_profile(0.003, 900);
  GrowthSpec growth;
  growth.multiplier[ProjectionKind::gate_proj] = 1.05;
  const auto cohort = gen_cohort(3, 4, profile, growth, 555);
  REQUIRE(cohort.size() == 7);
  CHECK(cohort[0].first.adapter_id == "clean_000");
  CHECK(!cohort[0].second);
  CHECK(cohort[2].first.adapter_id == "clean_002");
  CHECK(cohort[3].first.adapter_id == "poisoned_000");
  CHECK(cohort[3].second);
  CHECK(cohort[6].first.adapter_id == "poisoned_003");

  for (std::size_t i = 0; i + 1 < cohort.size(); ++i)
    CHECK(!bundles_equal(cohort[i].first, cohort[i + 1].first));

  const auto again = gen_cohort(3, 4, profile, growth, 555);
  for (std::size_t i = 0; i < cohort.size(); ++i)
    CHECK(bundles_equal(cohort[i].first, again[i].first));

  CHECK_THROWS_AS(gen_cohort(0, 4, profile, growth, 1), Error);
  CHECK_THROWS_AS(gen_cohort(3, 0, profile, growth, 1), Error);
}

TEST_CASE("gen_cohort_stream yields the same bundles in the same order") {
  const SynthProfile profile = tiny_profile(0.01, 901);
  GrowthSpec growth;
  growth.multiplier[ProjectionKind::up_proj] = 1.02;
  const auto batch = gen_cohort(2, 3, profile, growth, 777);

  std::vector<std::pair<AdapterBundle, bool>> streamed;
  gen_cohort_stream(2, 3, profile, growth, 777,
                    [&](AdapterBundle&& bundle, bool poisoned) {
                      streamed.emplace_back(std::move(bundle), poisoned);
                    });
  REQUIRE(streamed.size() == batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(streamed[i].second == batch[i].second);
    CHECK(streamed[i].first.adapter_id == batch[i].first.adapter_id);
    CHECK(bundles_equal(streamed[i].first, batch[i].first));
  }

  CHECK_THROWS_AS(gen_cohort_stream(0, 1, profile, growth, 1, [](AdapterBundle&&, bool) {}),
                  Error);
}

TEST_CASE("full preset shape produces 196 modules with the published dims") {
  SynthProfile profile = qwen_1_5b_profile();
  CHECK(profile.layers == 28);
  CHECK(profile.rank == 16);
  profile.layers = 1;  // one layer is enough to check shapes
  const AdapterBundle bundle = gen_adapter(profile, std::nullopt, "shape");
  REQUIRE(bundle.modules.size() == 7);
  for (const LoraModule& m : bundle.modules) {
    switch (m.projection) {
      case ProjectionKind::q_proj:
      case ProjectionKind::o_proj:
        CHECK(m.d_in() == 1536);
        CHECK(m.d_out() == 1536);
        break;
      case ProjectionKind::k_proj:
      case ProjectionKind::v_proj:
        CHECK(m.d_in() == 1536);
        CHECK(m.d_out() == 256);
        break;
      case ProjectionKind::gate_proj:
      case ProjectionKind::up_proj:
        CHECK(m.d_in() == 1536);
        CHECK(m.d_out() == 8960);
        break;
      case ProjectionKind::down_proj:
        CHECK(m.d_in() == 8960);
        CHECK(m.d_out() == 1536);
        break;
    }
  }
  CHECK(qwen_1_5b_profile().layers * 7 == 196);

  const SynthProfile big = qwen_7b_profile();
  CHECK(big.dims.at(ProjectionKind::q_proj).d_in == 3584);
  CHECK(big.dims.at(ProjectionKind::down_proj).d_in == 18944);
  CHECK(big.sigma_rel > qwen_1_5b_profile().sigma_rel);
}

TEST_CASE("preset growth stays within a few percent") {
  for (const auto& growth : {qwen_1_5b_growth(), qwen_7b_growth()}) {
    for (const ProjectionKind kind : kAllProjections) {
      CHECK(growth.at(kind) >= 1.0);
      CHECK(growth.at(kind) < 1.04);
    }
  }
  // gate carries the largest 1.5B growth
  const GrowthSpec g = qwen_1_5b_growth();
  for (const ProjectionKind kind : kAllProjections)
    CHECK(g.at(ProjectionKind::gate_proj) >= g.at(kind));
  CHECK(g.at(ProjectionKind::gate_proj) == doctest::Approx(1.0291).epsilon(1e-12));
}

TEST_CASE("profile and growth JSON round-trips") {
  SynthProfile profile = tiny_profile(0.01, 42);
  profile.base_model_id = "test/base";
  const std::string text = profile_to_json(profile);
  const SynthProfile back = profile_from_json(text);
  CHECK(back.sigma_rel == profile.sigma_rel);
  CHECK(back.layers == profile.layers);
  CHECK(back.rank == profile.rank);
  CHECK(back.alpha == profile.alpha);
  CHECK(back.seed == profile.seed);
  CHECK(back.base_model_id == profile.base_model_id);
  CHECK(back.frobn_mean == profile.frobn_mean);
  for (const ProjectionKind kind : kAllProjections) {
    CHECK(back.dims.at(kind).d_in == profile.dims.at(kind).d_in);
    CHECK(back.dims.at(kind).d_out == profile.dims.at(kind).d_out);
  }

  GrowthSpec growth = qwen_1_5b_growth();
  const GrowthSpec growth_back = growth_from_json(growth_to_json(growth));
  CHECK(growth_back.multiplier == growth.multiplier);

  CHECK_THROWS_AS(profile_from_json("not json"), ParseError);
  CHECK_THROWS_AS(profile_from_json("{}"), ParseError);
  CHECK_THROWS_AS(profile_from_json(R"({"rank":0})"), ParseError);
  CHECK_THROWS_AS(growth_from_json(R"({"multiplier":{"bogus_proj":1.0}})"), ParseError);
}

TEST_CASE("written cohort survives the f32 storage round-trip") {
  const SynthProfile profile = tiny_profile(0.0, 60);
  const AdapterBundle bundle = gen_adapter(profile, std::nullopt, "disk");
  const auto dir = std::filesystem::temp_directory_path() / "lorascan_synth_disk" / "disk";
  std::filesystem::remove_all(dir.parent_path());
  write_adapter_dir(dir, bundle);
  const AdapterBundle loaded = load_adapter_dir(dir);
  REQUIRE(loaded.modules.size() == bundle.modules.size());
  for (std::size_t i = 0; i < loaded.modules.size(); ++i) {
    const double want = frobN(bundle.modules[i]);
    const double got = frobN(loaded.modules[i]);
    CHECK(std::abs(got - want) / want < 1e-6);  // f32 quantization only
  }

  // bf16 storage is much coarser but still close
  const auto bf_dir = dir.parent_path() / "disk_bf16";
  write_adapter_dir(bf_dir, bundle, Dtype::bf16);
  const AdapterBundle bf = load_adapter_dir(bf_dir);
  for (std::size_t i = 0; i < bf.modules.size(); ++i) {
    const double want = frobN(bundle.modules[i]);
    CHECK(std::abs(frobN(bf.modules[i]) - want) / want < 5e-3);
  }
}
