#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lorascan/error.hpp"
#include "lorascan/matrix.hpp"

namespace lorascan {

enum class Dtype { f32, f16, bf16 };

std::string dtype_name(Dtype d);
std::optional<Dtype> dtype_from_name(std::string_view name);

// One tensor from the container file, decoded to 64-bit floats in row-major
// order regardless of storage dtype.
struct TensorRecord {
  std::string name;
  Dtype dtype = Dtype::f32;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

struct AdapterConfig {
  int rank = 0;
  double alpha = 0.0;
  std::set<std::string> target_modules;
  std::string base_model_id;
  double dropout = 0.0;
};

enum class ProjectionKind { q_proj, k_proj, v_proj, o_proj, gate_proj, up_proj, down_proj };
enum class ProjectionClass { attention, mlp };

inline constexpr ProjectionKind kAllProjections[] = {
    ProjectionKind::q_proj,  ProjectionKind::k_proj, ProjectionKind::v_proj,
    ProjectionKind::o_proj,  ProjectionKind::gate_proj,
    ProjectionKind::up_proj, ProjectionKind::down_proj};

ProjectionClass projection_class(ProjectionKind kind);
std::string projection_name(ProjectionKind kind);
std::optional<ProjectionKind> projection_from_name(std::string_view name);

// One LoRA target module: the update is delta W = B * A with A (r x d_in)
// and B (d_out x r).
struct LoraModule {
  int layer_index = 0;
  ProjectionKind projection = ProjectionKind::q_proj;
  Matrix A;
  Matrix B;

  std::size_t rank() const { return A.rows; }
  std::size_t d_in() const { return A.cols; }
  std::size_t d_out() const { return B.rows; }
};

struct AdapterBundle {
  AdapterConfig config;
  std::vector<LoraModule> modules;  // sorted by (layer_index, projection)
  std::string adapter_id;
};

// Parses the tensor container format: 8-byte little-endian header length N,
// N bytes of JSON {name: {dtype, shape, data_offsets}}, then the concatenated
// tensor buffers. Offsets are validated against the buffer section; the
// "__metadata__" entry is ignored.
std::map<std::string, TensorRecord> parse_tensor_file(std::span<const std::uint8_t> bytes);

AdapterConfig parse_adapter_config(const std::string& text);

// Pairs ...layers.<i>.<path>.<projection>.lora_A.weight / lora_B.weight
// tensors into modules. Name prefixes are arbitrary; only the suffix grammar
// matters. Unmatched names produce warnings, unpaired or duplicated matches
// produce errors.
AdapterBundle assemble_bundle(const std::map<std::string, TensorRecord>& tensors,
                              const AdapterConfig& config, std::string adapter_id,
                              std::vector<std::string>* warnings = nullptr);

std::map<std::string, TensorRecord> read_tensor_file(const std::filesystem::path& path);
AdapterConfig read_adapter_config(const std::filesystem::path& path);

// Loads a directory holding adapter_model.safetensors + adapter_config.json.
AdapterBundle load_adapter_dir(const std::filesystem::path& dir,
                               std::vector<std::string>* warnings = nullptr);

// Fixture writer: the inverse of parse_tensor_file, encoding each record in
// its declared dtype. Values must be representable in the target dtype for
// exact round-trips.
std::vector<std::uint8_t> encode_tensor_file(const std::vector<TensorRecord>& tensors);
void write_tensor_file(const std::filesystem::path& path, const std::vector<TensorRecord>& tensors);

void write_adapter_dir(const std::filesystem::path& dir, const AdapterBundle& bundle,
                       Dtype storage = Dtype::f32);

// Dtype scalar codecs (f64 carrier). Encoding rounds to nearest-even.
double decode_f16(std::uint16_t bits);
double decode_bf16(std::uint16_t bits);
std::uint16_t encode_f16(double value);
std::uint16_t encode_bf16(double value);

}  // namespace lorascan
