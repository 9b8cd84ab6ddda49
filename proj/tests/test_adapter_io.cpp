#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "lorascan/adapter_io.hpp"
#include "lorascan/rng.hpp"

using namespace lorascan;

namespace {

std::vector<std::uint8_t> file_with_header(const std::string& header_json,
                                           const std::vector<std::uint8_t>& payload = {}) {
  std::vector<std::uint8_t> bytes(8, 0);
  const std::uint64_t n = header_json.size();
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<std::uint8_t>((n >> (8 * i)) & 0xff);
  bytes.insert(bytes.end(), header_json.begin(), header_json.end());
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  return bytes;
}

std::vector<std::uint8_t> f32_payload(const std::vector<float>& values) {
  std::vector<std::uint8_t> out(values.size() * 4);
  std::memcpy(out.data(), values.data(), out.size());
  return out;
}

const std::string kConfigJson = R"({
  "r": 16,
  "lora_alpha": 16,
  "lora_dropout": 0.05,
  "target_modules": ["q_proj", "k_proj", "v_proj", "o_proj", "gate_proj", "up_proj", "down_proj"],
  "base_model_name_or_path": "Qwen/Qwen2.5-1.5B-Instruct",
  "peft_type": "LORA",
  "task_type": "CAUSAL_LM"
})";

TensorRecord make_tensor(std::string name, Dtype dtype, std::vector<std::size_t> shape,
                         std::uint64_t seed) {
  TensorRecord t;
  t.name = std::move(name);
  t.dtype = dtype;
  t.shape = std::move(shape);
  std::size_t n = 1;
  for (const std::size_t s : t.shape) n *= s;
  Rng rng(seed);
  t.data.resize(n);
  for (double& v : t.data) {
    const double raw = uniform01(rng) * 2.0 - 1.0;
    // clamp values onto the storage grid so encode/decode round-trips exactly
    switch (dtype) {
      case Dtype::f32: v = static_cast<float>(raw); break;
      case Dtype::f16: v = decode_f16(encode_f16(raw)); break;
      case Dtype::bf16: v = decode_bf16(encode_bf16(raw)); break;
    }
  }
  return t;
}

std::filesystem::path fresh_dir(const std::string& label) {
  const auto dir = std::filesystem::temp_directory_path() / ("lorascan_io_" + label);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("half-precision scalar codecs match reference bit patterns") {
  CHECK(decode_f16(0x3C00) == 1.0);
  CHECK(decode_f16(0xBC00) == -1.0);
  CHECK(decode_f16(0x0000) == 0.0);
  CHECK(decode_f16(0x0001) == std::ldexp(1.0, -24));  // smallest subnormal
  CHECK(decode_f16(0x7BFF) == 65504.0);               // largest finite
  CHECK(std::isinf(decode_f16(0x7C00)));
  CHECK(std::isnan(decode_f16(0x7C01)));
  CHECK(decode_f16(0x3555) == doctest::Approx(1.0 / 3.0).epsilon(1e-3));

  CHECK(decode_bf16(0x3F80) == 1.0);
  CHECK(decode_bf16(0xBF80) == -1.0);
  CHECK(decode_bf16(0x0000) == 0.0);
  CHECK(std::isinf(decode_bf16(0x7F80)));
  CHECK(std::isnan(decode_bf16(0x7FC0)));
  CHECK(decode_bf16(0x4049) == doctest::Approx(3.140625));
}

TEST_CASE("f16 encode/decode round-trips every finite bit pattern") {
  for (std::uint32_t bits = 0; bits <= 0xFFFF; ++bits) {
    const auto h = static_cast<std::uint16_t>(bits);
    const double v = decode_f16(h);
    if (std::isnan(v)) {
      CHECK(std::isnan(decode_f16(encode_f16(v))));
      continue;
    }
    const std::uint16_t back = encode_f16(v);
    // -0.0 and 0.0 may collapse; compare decoded values instead of bits
    CHECK(decode_f16(back) == v);
    if (v != 0.0) CHECK(back == h);
  }
  CHECK(std::isinf(decode_f16(encode_f16(1e10))));
  CHECK(encode_f16(65519.0) == 0x7BFF);  // below halfway to inf rounds down
  CHECK(decode_f16(encode_f16(1.0 + std::ldexp(1.0, -11))) == 1.0);  // ties to even
}

TEST_CASE("bf16 encode/decode round-trips every finite bit pattern") {
  for (std::uint32_t bits = 0; bits <= 0xFFFF; ++bits) {
    const auto h = static_cast<std::uint16_t>(bits);
    const double v = decode_bf16(h);
    if (std::isnan(v)) {
      CHECK(std::isnan(decode_bf16(encode_bf16(v))));
      continue;
    }
    const std::uint16_t back = encode_bf16(v);
    CHECK(decode_bf16(back) == v);
    if (v != 0.0) CHECK(back == h);
  }
  // round-half-even on the dropped mantissa bits: 1 + 2^-8 sits halfway
  CHECK(encode_bf16(1.0 + std::ldexp(1.0, -8)) == 0x3F80);
  CHECK(encode_bf16(1.0 + 3 * std::ldexp(1.0, -8)) == 0x3F82);
}

TEST_CASE("parse_tensor_file reads a two-tensor f32 container") {
  const std::string header =
      R"({"a":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]},)"
      R"("b":{"dtype":"F32","shape":[1,2],"data_offsets":[16,24]}})";
  const auto bytes = file_with_header(header, f32_payload({1.5f, -2.0f, 0.25f, 4.0f, 8.0f, -0.5f}));
  const auto tensors = parse_tensor_file(bytes);
  REQUIRE(tensors.size() == 2);
  const auto& a = tensors.at("a");
  CHECK(a.dtype == Dtype::f32);
  CHECK(a.shape == std::vector<std::size_t>{2, 2});
  CHECK(a.data == std::vector<double>{1.5, -2.0, 0.25, 4.0});
  CHECK(tensors.at("b").data == std::vector<double>{8.0, -0.5});
}

TEST_CASE("parse_tensor_file accepts empty maps and ignores __metadata__") {
  CHECK(parse_tensor_file(file_with_header("{}")).empty());
  const std::string header =
      R"({"__metadata__":{"format":"pt"},)"
      R"("a":{"dtype":"f32","shape":[1],"data_offsets":[0,4]}})";
  const auto tensors = parse_tensor_file(file_with_header(header, f32_payload({7.0f})));
  REQUIRE(tensors.size() == 1);
  CHECK(tensors.at("a").data == std::vector<double>{7.0});  // dtype case-insensitive
}

TEST_CASE("parse_tensor_file rejects malformed containers") {
  const std::vector<std::uint8_t> tiny{1, 2, 3};
  CHECK_THROWS_AS(parse_tensor_file(tiny), ParseError);

  // declared header length runs past the file
  std::vector<std::uint8_t> bad_len(8, 0);
  bad_len[0] = 200;
  CHECK_THROWS_AS(parse_tensor_file(bad_len), ParseError);

  CHECK_THROWS_AS(parse_tensor_file(file_with_header("not json")), ParseError);
  CHECK_THROWS_AS(parse_tensor_file(file_with_header("[1,2]")), ParseError);

  const auto payload = f32_payload({1.0f, 2.0f, 3.0f, 4.0f});
  auto throws_with = [&](const std::string& header) {
    CHECK_THROWS_AS(parse_tensor_file(file_with_header(header, payload)), ParseError);
  };
  // unsupported dtype
  throws_with(R"({"a":{"dtype":"F64","shape":[2],"data_offsets":[0,16]}})");
  // size mismatch between shape and offsets
  throws_with(R"({"a":{"dtype":"F32","shape":[3],"data_offsets":[0,16]}})");
  // offsets out of bounds
  throws_with(R"({"a":{"dtype":"F32","shape":[8],"data_offsets":[0,32]}})");
  // reversed offsets
  throws_with(R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[8,4]}})");
  // overlapping ranges
  throws_with(
      R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},)"
      R"("b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})");
  // missing keys and wrong types
  throws_with(R"({"a":{"shape":[1],"data_offsets":[0,4]}})");
  throws_with(R"({"a":{"dtype":"F32","data_offsets":[0,4]}})");
  throws_with(R"({"a":{"dtype":"F32","shape":[1]}})");
  throws_with(R"({"a":{"dtype":7,"shape":[1],"data_offsets":[0,4]}})");
  throws_with(R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,-4]}})");
  throws_with(R"({"a":"nope"})");
}

TEST_CASE("parse_tensor_file error messages name the offending tensor") {
  const std::string header = R"({"layers.3.bad":{"dtype":"F64","shape":[1],"data_offsets":[0,8]}})";
  try {
    parse_tensor_file(file_with_header(header, std::vector<std::uint8_t>(8, 0)));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("layers.3.bad") != std::string::npos);
  }
}

TEST_CASE("encode_tensor_file / parse_tensor_file round-trips all dtypes") {
  std::vector<TensorRecord> tensors;
  tensors.push_back(make_tensor("w32", Dtype::f32, {3, 5}, 11));
  tensors.push_back(make_tensor("w16", Dtype::f16, {4, 2}, 12));
  tensors.push_back(make_tensor("wbf", Dtype::bf16, {2, 6}, 13));
  const auto bytes = encode_tensor_file(tensors);
  const auto parsed = parse_tensor_file(bytes);
  REQUIRE(parsed.size() == 3);
  for (const auto& t : tensors) {
    const auto& p = parsed.at(t.name);
    CHECK(p.dtype == t.dtype);
    CHECK(p.shape == t.shape);
    CHECK(p.data == t.data);
  }
}

TEST_CASE("parse_adapter_config extracts the fields that matter") {
  const AdapterConfig cfg = parse_adapter_config(kConfigJson);
  CHECK(cfg.rank == 16);
  CHECK(cfg.alpha == 16.0);
  CHECK(cfg.dropout == 0.05);
  CHECK(cfg.base_model_id == "Qwen/Qwen2.5-1.5B-Instruct");
  CHECK(cfg.target_modules.size() == 7);
  CHECK(cfg.target_modules.count("gate_proj") == 1);
}

TEST_CASE("parse_adapter_config rejects broken configs, tolerates extras") {
  CHECK_THROWS_AS(parse_adapter_config("{"), ParseError);
  CHECK_THROWS_AS(parse_adapter_config(R"({"lora_alpha":16})"), ParseError);
  CHECK_THROWS_AS(parse_adapter_config(R"({"r":0,"lora_alpha":16})"), ParseError);
  CHECK_THROWS_AS(parse_adapter_config(R"({"r":-8,"lora_alpha":16})"), ParseError);
  CHECK_THROWS_AS(parse_adapter_config(R"({"r":8})"), ParseError);
  CHECK_THROWS_AS(parse_adapter_config(R"({"r":8,"lora_alpha":16,"target_modules":[3]})"),
                  ParseError);

  const AdapterConfig cfg = parse_adapter_config(
      R"({"r":8,"lora_alpha":32,"target_modules":["q_proj"],"exotic_future_key":{"x":1}})");
  CHECK(cfg.rank == 8);
  CHECK(cfg.alpha == 32.0);
  CHECK(cfg.base_model_id.empty());
  CHECK(cfg.dropout == 0.0);
}

TEST_CASE("assemble_bundle pairs factors across layers in sorted order") {
  const AdapterConfig cfg = parse_adapter_config(kConfigJson);
  std::map<std::string, TensorRecord> tensors;
  const int layers = 28;
  const std::size_t r = 16, d = 32;
  std::uint64_t seed = 1000;
  for (int layer = 0; layer < layers; ++layer) {
    for (const ProjectionKind kind : kAllProjections) {
      const std::string block =
          projection_class(kind) == ProjectionClass::attention ? "self_attn" : "mlp";
      const std::string stem = "base_model.model.model.layers." + std::to_string(layer) + "." +
                               block + "." + projection_name(kind);
      tensors[stem + ".lora_A.weight"] = make_tensor(stem + ".lora_A.weight", Dtype::f32, {r, d}, seed++);
      tensors[stem + ".lora_B.weight"] = make_tensor(stem + ".lora_B.weight", Dtype::f32, {d, r}, seed++);
    }
  }
  std::vector<std::string> warnings;
  const AdapterBundle bundle = assemble_bundle(tensors, cfg, "fixture", &warnings);
  CHECK(warnings.empty());
  REQUIRE(bundle.modules.size() == 196);
  CHECK(bundle.adapter_id == "fixture");
  for (std::size_t i = 1; i < bundle.modules.size(); ++i) {
    const auto& prev = bundle.modules[i - 1];
    const auto& cur = bundle.modules[i];
    const bool ordered = prev.layer_index < cur.layer_index ||
                         (prev.layer_index == cur.layer_index &&
                          static_cast<int>(prev.projection) < static_cast<int>(cur.projection));
    CHECK(ordered);
  }
  for (const auto& m : bundle.modules) {
    CHECK(m.rank() == r);
    CHECK(m.d_in() == d);
    CHECK(m.d_out() == d);
  }
}

TEST_CASE("assemble_bundle accepts arbitrary prefixes and unknown names") {
  const AdapterConfig cfg = parse_adapter_config(kConfigJson);
  std::map<std::string, TensorRecord> tensors;
  tensors["odd.prefix.layers.2.self_attn.q_proj.lora_A.weight"] =
      make_tensor("x", Dtype::f32, {16, 32}, 5);
  tensors["odd.prefix.layers.2.self_attn.q_proj.lora_B.weight"] =
      make_tensor("x", Dtype::f32, {32, 16}, 6);
  tensors["something.unrelated.weight"] = make_tensor("x", Dtype::f32, {2, 2}, 7);
  std::vector<std::string> warnings;
  const AdapterBundle bundle = assemble_bundle(tensors, cfg, "p", &warnings);
  REQUIRE(bundle.modules.size() == 1);
  CHECK(bundle.modules[0].layer_index == 2);
  CHECK(bundle.modules[0].projection == ProjectionKind::q_proj);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("something.unrelated.weight") != std::string::npos);
}

TEST_CASE("assemble_bundle reports structural problems by name") {
  const AdapterConfig cfg = parse_adapter_config(kConfigJson);

  std::map<std::string, TensorRecord> orphan;
  orphan["m.layers.0.self_attn.q_proj.lora_A.weight"] = make_tensor("x", Dtype::f32, {4, 8}, 1);
  CHECK_THROWS_WITH_AS(assemble_bundle(orphan, cfg, "p"),
                       doctest::Contains("q_proj"), Error);

  // same module reached through two different prefixes
  std::map<std::string, TensorRecord> dup;
  dup["a.layers.0.self_attn.q_proj.lora_A.weight"] = make_tensor("x", Dtype::f32, {4, 8}, 1);
  dup["a.layers.0.self_attn.q_proj.lora_B.weight"] = make_tensor("x", Dtype::f32, {8, 4}, 2);
  dup["b.layers.0.self_attn.q_proj.lora_A.weight"] = make_tensor("x", Dtype::f32, {4, 8}, 3);
  dup["b.layers.0.self_attn.q_proj.lora_B.weight"] = make_tensor("x", Dtype::f32, {8, 4}, 4);
  CHECK_THROWS_AS(assemble_bundle(dup, cfg, "p"), Error);

  // A and B disagree on rank
  std::map<std::string, TensorRecord> shape;
  shape["m.layers.0.self_attn.q_proj.lora_A.weight"] = make_tensor("x", Dtype::f32, {4, 8}, 1);
  shape["m.layers.0.self_attn.q_proj.lora_B.weight"] = make_tensor("x", Dtype::f32, {8, 2}, 2);
  CHECK_THROWS_AS(assemble_bundle(shape, cfg, "p"), Error);

  // non-2d factor
  std::map<std::string, TensorRecord> flat;
  flat["m.layers.0.self_attn.q_proj.lora_A.weight"] = make_tensor("x", Dtype::f32, {32}, 1);
  flat["m.layers.0.self_attn.q_proj.lora_B.weight"] = make_tensor("x", Dtype::f32, {8, 4}, 2);
  CHECK_THROWS_AS(assemble_bundle(flat, cfg, "p"), Error);

  std::vector<std::string> warnings;
  const AdapterBundle empty = assemble_bundle({}, cfg, "p", &warnings);
  CHECK(empty.modules.empty());
  CHECK(!warnings.empty());
}

TEST_CASE("write_adapter_dir / load_adapter_dir round-trips a bundle") {
  AdapterBundle bundle;
  bundle.config = parse_adapter_config(kConfigJson);
  bundle.adapter_id = "ignored";
  for (int layer = 0; layer < 2; ++layer) {
    for (const ProjectionKind kind : kAllProjections) {
      LoraModule m;
      m.layer_index = layer;
      m.projection = kind;
      const auto ta = make_tensor("a", Dtype::f32, {16, 48}, 900 + layer * 7 +
                                  static_cast<std::uint64_t>(kind));
      const auto tb = make_tensor("b", Dtype::f32, {24, 16}, 300 + layer * 7 +
                                  static_cast<std::uint64_t>(kind));
      m.A = Matrix(16, 48, ta.data);
      m.B = Matrix(24, 16, tb.data);
      bundle.modules.push_back(std::move(m));
    }
  }

  const auto dir = fresh_dir("roundtrip") / "adapter_x";
  write_adapter_dir(dir, bundle);
  std::vector<std::string> warnings;
  const AdapterBundle loaded = load_adapter_dir(dir, &warnings);
  CHECK(warnings.empty());
  CHECK(loaded.adapter_id == "adapter_x");  // id comes from the directory name
  CHECK(loaded.config.rank == 16);
  REQUIRE(loaded.modules.size() == bundle.modules.size());
  for (std::size_t i = 0; i < loaded.modules.size(); ++i) {
    CHECK(loaded.modules[i].layer_index == bundle.modules[i].layer_index);
    CHECK(loaded.modules[i].projection == bundle.modules[i].projection);
    CHECK(loaded.modules[i].A.data == bundle.modules[i].A.data);
    CHECK(loaded.modules[i].B.data == bundle.modules[i].B.data);
  }

  CHECK_THROWS_AS(load_adapter_dir(dir / "missing"), Error);
}

TEST_CASE("load_adapter_dir requires both container files") {
  const auto dir = fresh_dir("partial");
  // config present, tensors missing
  {
    std::ofstream out(dir / "adapter_config.json");
    out << kConfigJson;
  }
  CHECK_THROWS_AS(load_adapter_dir(dir), Error);
}
