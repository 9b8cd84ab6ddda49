#include "lorascan/adapter_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace lorascan {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

constexpr std::size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 2; }

std::uint16_t read_u16le(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (std::uint16_t{p[1]} << 8));
}

std::uint32_t read_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (std::uint32_t{p[1]} << 8) |
         (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

void append_u16le(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void append_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

struct NameParts {
  int layer_index;
  ProjectionKind projection;
  bool is_a;  // lora_A vs lora_B
};

std::vector<std::string> split_dots(const std::string& name) {
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = name.find('.', start);
    if (dot == std::string::npos) {
      tokens.push_back(name.substr(start));
      break;
    }
    tokens.push_back(name.substr(start, dot - start));
    start = dot + 1;
  }
  return tokens;
}

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(),
                                   [](unsigned char c) { return std::isdigit(c) != 0; });
}

// Matches the suffix grammar layers.<int>.<path>.<projection>.lora_{A|B}.weight
// under an arbitrary prefix. Returns nullopt for names outside the grammar.
std::optional<NameParts> parse_module_name(const std::string& name) {
  const auto tokens = split_dots(name);
  if (tokens.size() < 5) return std::nullopt;
  const std::size_t n = tokens.size();
  if (tokens[n - 1] != "weight") return std::nullopt;
  bool is_a = false;
  if (tokens[n - 2] == "lora_A") {
    is_a = true;
  } else if (tokens[n - 2] == "lora_B") {
    is_a = false;
  } else {
    return std::nullopt;
  }
  const auto projection = projection_from_name(tokens[n - 3]);
  if (!projection) return std::nullopt;
  for (std::size_t i = n - 3; i-- > 1;) {
    if (tokens[i - 1] == "layers" && all_digits(tokens[i])) {
      try {
        return NameParts{std::stoi(tokens[i]), *projection, is_a};
      } catch (const std::exception&) {
        return std::nullopt;  // index out of int range
      }
    }
  }
  return std::nullopt;
}

}  // namespace

std::string dtype_name(Dtype d) {
  switch (d) {
    case Dtype::f32: return "F32";
    case Dtype::f16: return "F16";
    case Dtype::bf16: return "BF16";
  }
  return "F32";
}

std::optional<Dtype> dtype_from_name(std::string_view name) {
  const std::string n = lower(name);
  if (n == "f32") return Dtype::f32;
  if (n == "f16") return Dtype::f16;
  if (n == "bf16") return Dtype::bf16;
  return std::nullopt;
}

ProjectionClass projection_class(ProjectionKind kind) {
  switch (kind) {
    case ProjectionKind::q_proj:
    case ProjectionKind::k_proj:
    case ProjectionKind::v_proj:
    case ProjectionKind::o_proj:
      return ProjectionClass::attention;
    default:
      return ProjectionClass::mlp;
  }
}

std::string projection_name(ProjectionKind kind) {
  switch (kind) {
    case ProjectionKind::q_proj: return "q_proj";
    case ProjectionKind::k_proj: return "k_proj";
    case ProjectionKind::v_proj: return "v_proj";
    case ProjectionKind::o_proj: return "o_proj";
    case ProjectionKind::gate_proj: return "gate_proj";
    case ProjectionKind::up_proj: return "up_proj";
    case ProjectionKind::down_proj: return "down_proj";
  }
  return "q_proj";
}

std::optional<ProjectionKind> projection_from_name(std::string_view name) {
  for (ProjectionKind kind : kAllProjections)
    if (projection_name(kind) == name) return kind;
  return std::nullopt;
}

double decode_f16(std::uint16_t bits) {
  const int sign = (bits >> 15) & 1;
  const int exponent = (bits >> 10) & 0x1f;
  const int mantissa = bits & 0x3ff;
  double value;
  if (exponent == 0) {
    value = std::ldexp(mantissa, -24);
  } else if (exponent == 31) {
    value = mantissa == 0 ? std::numeric_limits<double>::infinity()
                          : std::numeric_limits<double>::quiet_NaN();
  } else {
    value = std::ldexp(1024 + mantissa, exponent - 15 - 10);
  }
  return sign ? -value : value;
}

double decode_bf16(std::uint16_t bits) {
  const std::uint32_t fbits = std::uint32_t{bits} << 16;
  return static_cast<double>(std::bit_cast<float>(fbits));
}

std::uint16_t encode_f16(double value) {
  const std::uint64_t dbits = std::bit_cast<std::uint64_t>(value);
  const std::uint16_t sign = static_cast<std::uint16_t>((dbits >> 48) & 0x8000u);
  if (std::isnan(value)) return sign | 0x7e00;
  const double a = std::fabs(value);
  if (std::isinf(value)) return sign | 0x7c00;
  if (a == 0.0) return sign;
  int e2;
  const double f = std::frexp(a, &e2);  // a = f * 2^e2, f in [0.5, 1)
  const int exponent = e2 - 1;
  if (exponent < -14) {
    // Subnormal target: round the count of 2^-24 quanta to nearest even.
    const double quanta = std::ldexp(a, 24);
    const long long q = std::llrint(quanta);
    return static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(q));
  }
  if (exponent > 15) return sign | 0x7c00;
  long long q = std::llrint(std::ldexp(f, 11));  // in [1024, 2048]
  int biased = exponent + 15;
  if (q == 2048) {
    q = 1024;
    ++biased;
    if (biased >= 31) return sign | 0x7c00;
  }
  return static_cast<std::uint16_t>(sign | (biased << 10) | (q - 1024));
}

std::uint16_t encode_bf16(double value) {
  const float f = static_cast<float>(value);
  const std::uint32_t fbits = std::bit_cast<std::uint32_t>(f);
  if (std::isnan(f)) return static_cast<std::uint16_t>((fbits >> 16) | 0x0040);
  const std::uint32_t rounded = fbits + 0x7fff + ((fbits >> 16) & 1);
  return static_cast<std::uint16_t>(rounded >> 16);
}

std::map<std::string, TensorRecord> parse_tensor_file(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw ParseError("tensor file truncated: missing 8-byte header length");
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) header_len |= std::uint64_t{bytes[i]} << (8 * i);
  if (header_len > bytes.size() - 8)
    throw ParseError("tensor file truncated: header length " + std::to_string(header_len) +
                     " exceeds file size");
  const char* header_begin = reinterpret_cast<const char*>(bytes.data() + 8);
  json header;
  try {
    header = json::parse(header_begin, header_begin + header_len);
  } catch (const json::exception& e) {
    throw ParseError(std::string("tensor file header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw ParseError("tensor file header must be a JSON object");

  const std::uint8_t* buffer = bytes.data() + 8 + header_len;
  const std::uint64_t buffer_len = bytes.size() - 8 - header_len;

  struct Range {
    std::uint64_t begin, end;
    std::string name;
  };
  std::vector<Range> ranges;
  std::map<std::string, TensorRecord> out;

  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") continue;
    if (!entry.is_object())
      throw ParseError("tensor '" + name + "': header entry must be an object");
    if (!entry.contains("dtype") || !entry.contains("shape") || !entry.contains("data_offsets"))
      throw ParseError("tensor '" + name + "': missing dtype, shape, or data_offsets");
    if (!entry["dtype"].is_string())
      throw ParseError("tensor '" + name + "': dtype must be a string");
    const auto dtype = dtype_from_name(entry["dtype"].get<std::string>());
    if (!dtype)
      throw ParseError("tensor '" + name + "': unsupported dtype '" +
                       entry["dtype"].get<std::string>() + "'");
    TensorRecord record;
    record.name = name;
    record.dtype = *dtype;
    std::uint64_t count = 1;
    for (const auto& dim : entry["shape"]) {
      if (!dim.is_number_unsigned() && !(dim.is_number_integer() && dim.get<std::int64_t>() >= 0))
        throw ParseError("tensor '" + name + "': negative or non-integer shape dimension");
      const std::uint64_t d = dim.get<std::uint64_t>();
      record.shape.push_back(static_cast<std::size_t>(d));
      count *= d;
      if (count > (std::uint64_t{1} << 48))
        throw ParseError("tensor '" + name + "': element count overflow");
    }
    const auto& offsets = entry["data_offsets"];
    if (!offsets.is_array() || offsets.size() != 2 || !offsets[0].is_number_unsigned() ||
        !offsets[1].is_number_unsigned())
      throw ParseError("tensor '" + name + "': data_offsets must be a [begin, end] pair");
    const std::uint64_t begin = offsets[0].get<std::uint64_t>();
    const std::uint64_t end = offsets[1].get<std::uint64_t>();
    if (begin > end || end > buffer_len)
      throw ParseError("tensor '" + name + "': data_offsets out of bounds");
    if (end - begin != count * dtype_size(*dtype))
      throw ParseError("tensor '" + name + "': data_offsets size does not match shape");
    ranges.push_back({begin, end, name});

    record.data.resize(static_cast<std::size_t>(count));
    const std::uint8_t* src = buffer + begin;
    switch (*dtype) {
      case Dtype::f32:
        for (std::uint64_t i = 0; i < count; ++i)
          record.data[i] = static_cast<double>(std::bit_cast<float>(read_u32le(src + 4 * i)));
        break;
      case Dtype::f16:
        for (std::uint64_t i = 0; i < count; ++i) record.data[i] = decode_f16(read_u16le(src + 2 * i));
        break;
      case Dtype::bf16:
        for (std::uint64_t i = 0; i < count; ++i) record.data[i] = decode_bf16(read_u16le(src + 2 * i));
        break;
    }
    out.emplace(name, std::move(record));
  }

  std::sort(ranges.begin(), ranges.end(),
            [](const Range& a, const Range& b) { return a.begin < b.begin; });
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].begin < ranges[i - 1].end)
      throw ParseError("tensor '" + ranges[i].name + "': data_offsets overlap tensor '" +
                       ranges[i - 1].name + "'");
  }
  return out;
}

AdapterConfig parse_adapter_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("adapter config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("adapter config must be a JSON object");
  for (const char* key : {"r", "lora_alpha", "target_modules"})
    if (!doc.contains(key))
      throw ParseError(std::string("adapter config missing required key '") + key + "'");

  AdapterConfig config;
  if (!doc["r"].is_number_integer() && !doc["r"].is_number_unsigned())
    throw ParseError("adapter config key 'r' must be an integer");
  config.rank = doc["r"].get<int>();
  if (config.rank <= 0) throw ParseError("adapter config rank must be positive");
  if (!doc["lora_alpha"].is_number())
    throw ParseError("adapter config key 'lora_alpha' must be a number");
  config.alpha = doc["lora_alpha"].get<double>();
  if (config.alpha <= 0.0) throw ParseError("adapter config alpha must be positive");
  if (!doc["target_modules"].is_array())
    throw ParseError("adapter config key 'target_modules' must be an array");
  for (const auto& module : doc["target_modules"]) {
    if (!module.is_string())
      throw ParseError("adapter config target_modules entries must be strings");
    const std::string name = module.get<std::string>();
    if (!projection_from_name(name))
      throw ParseError("adapter config target module '" + name + "' is not a known projection");
    config.target_modules.insert(name);
  }
  if (doc.contains("base_model_name_or_path") && doc["base_model_name_or_path"].is_string())
    config.base_model_id = doc["base_model_name_or_path"].get<std::string>();
  if (doc.contains("lora_dropout") && doc["lora_dropout"].is_number())
    config.dropout = doc["lora_dropout"].get<double>();
  return config;
}

AdapterBundle assemble_bundle(const std::map<std::string, TensorRecord>& tensors,
                              const AdapterConfig& config, std::string adapter_id,
                              std::vector<std::string>* warnings) {
  auto warn = [&](const std::string& message) {
    if (warnings) warnings->push_back(message);
  };
  if (tensors.empty()) warn("tensor map is empty; bundle has no modules");

  struct Pair {
    const TensorRecord* a = nullptr;
    const TensorRecord* b = nullptr;
  };
  std::map<std::pair<int, int>, Pair> pairs;  // (layer, projection ordinal)
  for (const auto& [name, record] : tensors) {
    const auto parts = parse_module_name(name);
    if (!parts) {
      warn("tensor '" + name + "' does not match the LoRA module name grammar; skipped");
      continue;
    }
    auto& pair = pairs[{parts->layer_index, static_cast<int>(parts->projection)}];
    const TensorRecord*& slot = parts->is_a ? pair.a : pair.b;
    if (slot)
      throw ParseError("duplicate " + std::string(parts->is_a ? "lora_A" : "lora_B") +
                       " tensor for layers." + std::to_string(parts->layer_index) + "." +
                       projection_name(parts->projection));
    slot = &record;
  }

  const auto rank = static_cast<std::size_t>(config.rank);
  AdapterBundle bundle;
  bundle.config = config;
  bundle.adapter_id = std::move(adapter_id);
  for (const auto& [key, pair] : pairs) {
    const std::string module_label =
        "layers." + std::to_string(key.first) + "." +
        projection_name(static_cast<ProjectionKind>(key.second));
    if (!pair.a || !pair.b)
      throw ParseError("module " + module_label + " has " +
                       std::string(pair.a ? "lora_A" : "lora_B") + " but no matching " +
                       std::string(pair.a ? "lora_B" : "lora_A"));
    if (pair.a->shape.size() != 2 || pair.b->shape.size() != 2)
      throw ParseError("module " + module_label + ": lora tensors must be 2-dimensional");
    const std::size_t a_rows = pair.a->shape[0], d_in = pair.a->shape[1];
    const std::size_t d_out = pair.b->shape[0], b_cols = pair.b->shape[1];
    if (a_rows != rank || b_cols != rank)
      throw ParseError("module " + module_label + ": tensor shapes (" + std::to_string(a_rows) +
                       " and " + std::to_string(b_cols) +
                       ") do not match declared rank " + std::to_string(config.rank));
    if (d_in < rank || d_out < rank)
      throw ParseError("module " + module_label + ": projection dimensions smaller than rank");
    LoraModule module;
    module.layer_index = key.first;
    module.projection = static_cast<ProjectionKind>(key.second);
    module.A = Matrix(a_rows, d_in, pair.a->data);
    module.B = Matrix(d_out, b_cols, pair.b->data);
    bundle.modules.push_back(std::move(module));
  }
  // std::map iteration already yields (layer, projection) order.
  return bundle;
}

std::map<std::string, TensorRecord> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open tensor file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_tensor_file(bytes);
}

AdapterConfig read_adapter_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open adapter config: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_adapter_config(buffer.str());
}

AdapterBundle load_adapter_dir(const std::filesystem::path& dir,
                               std::vector<std::string>* warnings) {
  const auto tensors = read_tensor_file(dir / "adapter_model.safetensors");
  const auto config = read_adapter_config(dir / "adapter_config.json");
  return assemble_bundle(tensors, config, dir.filename().string(), warnings);
}

std::vector<std::uint8_t> encode_tensor_file(const std::vector<TensorRecord>& tensors) {
  ordered_json header = ordered_json::object();
  std::vector<std::uint8_t> buffer;
  for (const auto& tensor : tensors) {
    std::uint64_t count = 1;
    for (const std::size_t dim : tensor.shape) count *= dim;
    if (count != tensor.data.size())
      throw Error("tensor '" + tensor.name + "': shape does not match value count");
    const std::uint64_t begin = buffer.size();
    switch (tensor.dtype) {
      case Dtype::f32:
        for (const double v : tensor.data)
          append_u32le(buffer, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        break;
      case Dtype::f16:
        for (const double v : tensor.data) append_u16le(buffer, encode_f16(v));
        break;
      case Dtype::bf16:
        for (const double v : tensor.data) append_u16le(buffer, encode_bf16(v));
        break;
    }
    header[tensor.name] = {{"dtype", dtype_name(tensor.dtype)},
                           {"shape", tensor.shape},
                           {"data_offsets", {begin, buffer.size()}}};
  }
  const std::string header_text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(8 + header_text.size() + buffer.size());
  const std::uint64_t header_len = header_text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((header_len >> (8 * i)) & 0xff));
  out.insert(out.end(), header_text.begin(), header_text.end());
  out.insert(out.end(), buffer.begin(), buffer.end());
  return out;
}

void write_tensor_file(const std::filesystem::path& path,
                       const std::vector<TensorRecord>& tensors) {
  const auto bytes = encode_tensor_file(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write tensor file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void write_adapter_dir(const std::filesystem::path& dir, const AdapterBundle& bundle,
                       Dtype storage) {
  std::filesystem::create_directories(dir);
  std::vector<TensorRecord> tensors;
  tensors.reserve(bundle.modules.size() * 2);
  for (const LoraModule& module : bundle.modules) {
    const bool attn = projection_class(module.projection) == ProjectionClass::attention;
    const std::string stem = "base_model.model.model.layers." +
                             std::to_string(module.layer_index) + "." +
                             (attn ? "self_attn." : "mlp.") + projection_name(module.projection);
    tensors.push_back({stem + ".lora_A.weight", storage,
                       {module.A.rows, module.A.cols}, module.A.data});
    tensors.push_back({stem + ".lora_B.weight", storage,
                       {module.B.rows, module.B.cols}, module.B.data});
  }
  write_tensor_file(dir / "adapter_model.safetensors", tensors);

  ordered_json config;
  config["r"] = bundle.config.rank;
  config["lora_alpha"] = bundle.config.alpha;
  config["target_modules"] = bundle.config.target_modules;
  config["base_model_name_or_path"] = bundle.config.base_model_id;
  config["lora_dropout"] = bundle.config.dropout;
  std::ofstream out(dir / "adapter_config.json", std::ios::trunc);
  if (!out) throw Error("cannot write adapter config in " + dir.string());
  out << config.dump(2) << "\n";
}

}  // namespace lorascan
