#pragma once

// Binary weight file format (all integers little-endian):
//
//   magic      4 bytes  "STYW"
//   version    u32      kWeightFormatVersion
//   count      u32      number of tensors
//   count x {
//     name_len u16, name (UTF-8, name_len bytes)
//     dtype    u8       0 = f32, 1 = f64
//     ndim     u8
//     dims     ndim x u32
//     payload  product(dims) IEEE-754 values, little-endian
//   }
//   cfg_len    u32
//   config     cfg_len bytes of "key=value\n" lines
//   checksum   u64      sum of every preceding byte, modulo 2^64
//
// Model files carry kind=model plus the transformer keys; extractor files
// carry kind=extractor and a stage description (see extractor_to_file).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "stytr/config.hpp"
#include "stytr/extractor.hpp"
#include "stytr/image.hpp"
#include "stytr/model.hpp"
#include "stytr/params.hpp"

namespace stytr {

inline constexpr std::uint32_t kWeightFormatVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

struct RawTensor {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> payload;  // little-endian values

  bool operator==(const RawTensor&) const = default;
};

struct WeightFile {
  std::vector<RawTensor> tensors;
  KeyValues config;

  bool operator==(const WeightFile&) const = default;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b, std::size_t end)
      : b_(b), end_(end) {}

  std::size_t pos() const { return pos_; }

  std::uint64_t get(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::vector<std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    std::vector<std::uint8_t> out(b_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (end_ - pos_ < n) throw ParseError(std::string("truncated ") + what, pos_);
  }

  const std::vector<std::uint8_t>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::uint64_t byte_sum(const std::vector<std::uint8_t>& b, std::size_t n) {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < n; ++i) s += b[i];
  return s;
}

template <typename T>
std::vector<std::uint8_t> to_le_bytes(std::span<const T> values) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<std::uint8_t> out(values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const U bits = std::bit_cast<U>(values[i]);
    for (std::size_t k = 0; k < sizeof(T); ++k)
      out[i * sizeof(T) + k] = static_cast<std::uint8_t>(bits >> (8 * k));
  }
  return out;
}

template <typename T>
std::vector<T> from_le_bytes(const std::vector<std::uint8_t>& bytes) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<T> out(bytes.size() / sizeof(T));
  for (std::size_t i = 0; i < out.size(); ++i) {
    U bits = 0;
    for (std::size_t k = 0; k < sizeof(T); ++k)
      bits |= static_cast<U>(bytes[i * sizeof(T) + k]) << (8 * k);
    out[i] = std::bit_cast<T>(bits);
  }
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_weight_file(const WeightFile& file) {
  detail::ByteWriter w;
  w.raw("STYW", 4);
  w.u32(kWeightFormatVersion);
  w.u32(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    if (t.name.size() > UINT16_MAX) throw Error("tensor name too long: " + t.name);
    if (t.shape.size() > UINT8_MAX) throw Error("tensor rank too large: " + t.name);
    if (t.payload.size() != shape_numel(t.shape) * dtype_size(t.dtype)) {
      throw Error("tensor '" + t.name + "' payload does not match its shape");
    }
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.raw(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.dtype));
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    w.raw(t.payload.data(), t.payload.size());
  }
  const std::string cfg = format_key_values(file.config);
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.raw(cfg.data(), cfg.size());
  auto& bytes = w.bytes();
  const std::uint64_t sum = detail::byte_sum(bytes, bytes.size());
  w.u64(sum);
  return std::move(w.bytes());
}

inline WeightFile decode_weight_file(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 4 + 4 + 4 + 8) {
    throw ParseError("weight file too short", bytes.size());
  }
  if (std::memcmp(bytes.data(), "STYW", 4) != 0) {
    throw ParseError("bad magic (expected STYW)", 0);
  }
  const std::size_t body = bytes.size() - 8;
  detail::ByteReader tail(bytes, bytes.size());
  tail.take(body, "body");
  const std::uint64_t stored = tail.get(8, "checksum");
  if (stored != detail::byte_sum(bytes, body)) {
    throw LoadError("weight file checksum mismatch");
  }

  detail::ByteReader r(bytes, body);
  r.take(4, "magic");
  const std::size_t version_at = r.pos();
  const auto version = static_cast<std::uint32_t>(r.get(4, "version"));
  if (version != kWeightFormatVersion) {
    throw ParseError("unsupported weight format version " + std::to_string(version),
                     version_at);
  }
  const auto count = static_cast<std::uint32_t>(r.get(4, "tensor count"));
  WeightFile file;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    RawTensor t;
    const auto name_len = static_cast<std::size_t>(r.get(2, "name length"));
    const auto name = r.take(name_len, "tensor name");
    t.name.assign(name.begin(), name.end());
    if (!seen.insert(t.name).second) {
      throw ParseError("duplicate tensor '" + t.name + "'", r.pos());
    }
    const std::size_t dtype_at = r.pos();
    const auto dtype = r.get(1, "dtype");
    if (dtype > 1) {
      throw ParseError("tensor '" + t.name + "': unknown dtype " + std::to_string(dtype),
                       dtype_at);
    }
    t.dtype = static_cast<DType>(dtype);
    const auto ndim = r.get(1, "rank");
    for (std::uint64_t d = 0; d < ndim; ++d) t.shape.push_back(r.get(4, "dimension"));
    t.payload = r.take(shape_numel(t.shape) * dtype_size(t.dtype), "tensor payload");
    file.tensors.push_back(std::move(t));
  }
  const auto cfg_len = static_cast<std::size_t>(r.get(4, "config length"));
  const auto cfg = r.take(cfg_len, "config record");
  if (r.pos() != body) throw ParseError("trailing bytes before checksum", r.pos());
  try {
    file.config = parse_key_values(std::string(cfg.begin(), cfg.end()));
  } catch (const ConfigError& e) {
    throw LoadError(std::string("config record: ") + e.what());
  }
  return file;
}

template <typename T>
RawTensor to_raw(const std::string& name, const Tensor<T>& t) {
  return {name, dtype_of<T>(), t.shape(), detail::to_le_bytes<T>(t.data())};
}

template <typename T>
Tensor<T> from_raw(const RawTensor& raw, bool requires_grad) {
  std::vector<T> values;
  if (raw.dtype == DType::f32) {
    const auto v = detail::from_le_bytes<float>(raw.payload);
    values.assign(v.begin(), v.end());
  } else {
    const auto v = detail::from_le_bytes<double>(raw.payload);
    values.assign(v.begin(), v.end());
  }
  return Tensor<T>(raw.shape, std::move(values), requires_grad);
}

inline void write_weight_file(const WeightFile& file, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_weight_file(file));
}

inline WeightFile read_weight_file(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = detail::read_file_bytes(path);
  } catch (const Error& e) {
    throw LoadError(e.what());
  }
  try {
    return decode_weight_file(bytes);
  } catch (const ParseError& e) {
    throw LoadError(path.string() + ": " + e.what());
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

template <typename T>
WeightFile model_to_file(const ParamStore<T>& params, const TransformerConfig& cfg) {
  WeightFile file;
  for (std::size_t i = 0; i < params.size(); ++i) {
    file.tensors.push_back(to_raw(params.names()[i], params[i]));
  }
  file.config = cfg.to_key_values();
  file.config["kind"] = "model";
  return file;
}

template <typename T>
Model<T> model_from_file(const WeightFile& file) {
  KeyValues kv = file.config;
  const auto kind = kv.find("kind");
  if (kind == kv.end() || kind->second != "model") {
    throw LoadError("weight file does not hold a model (kind != model)");
  }
  kv.erase(kind);
  TransformerConfig cfg;
  try {
    cfg = TransformerConfig::from_key_values(kv);
  } catch (const ConfigError& e) {
    throw LoadError(std::string("config record: ") + e.what());
  }
  ParamStore<T> params;
  for (const auto& raw : file.tensors) params.add(raw.name, from_raw<T>(raw, true));
  check_params(cfg, params);
  return {cfg, std::move(params)};
}

template <typename T>
void save_weights(const std::filesystem::path& path, const ParamStore<T>& params,
                  const TransformerConfig& cfg) {
  write_weight_file(model_to_file(params, cfg), path);
}

template <typename T>
Model<T> load_weights(const std::filesystem::path& path) {
  try {
    return model_from_file<T>(read_weight_file(path));
  } catch (const LoadError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path.string(), 0) == 0) throw;
    throw LoadError(path.string() + ": " + msg);
  }
}

// Loads and additionally requires the stored configuration to equal `cfg`.
template <typename T>
Model<T> load_weights(const std::filesystem::path& path, const TransformerConfig& cfg) {
  auto model = load_weights<T>(path);
  if (!(model.config == cfg)) {
    throw LoadError(path.string() + ": stored configuration does not match (" +
                    format_key_values(model.config.to_key_values()) + ")");
  }
  return model;
}

// Extractor files: tensors stage<i>.layer<j>.weight / .bias for conv layers;
// config keys kind=extractor, stages=<N>, stage.<i>=<comma separated layers>.
template <typename T>
WeightFile extractor_to_file(const FeatureExtractor<T>& ext) {
  WeightFile file;
  file.config["kind"] = "extractor";
  file.config["stages"] = std::to_string(ext.stage_count());
  for (std::size_t s = 0; s < ext.stage_count(); ++s) {
    std::string desc;
    const auto& stage = ext.stages()[s];
    for (std::size_t j = 0; j < stage.size(); ++j) {
      if (j) desc += ",";
      desc += to_string(stage[j].kind);
      if (has_weights(stage[j].kind)) {
        const std::string p = "stage" + std::to_string(s) + ".layer" + std::to_string(j);
        file.tensors.push_back(to_raw(p + ".weight", stage[j].weight));
        file.tensors.push_back(to_raw(p + ".bias", stage[j].bias));
      }
    }
    file.config["stage." + std::to_string(s)] = desc;
  }
  return file;
}

template <typename T>
FeatureExtractor<T> extractor_from_file(const WeightFile& file) {
  const auto& kv = file.config;
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw LoadError("extractor file lacks key '" + key + "'");
    return it->second;
  };
  if (get("kind") != "extractor") throw LoadError("weight file does not hold an extractor");
  std::size_t stages = 0;
  try {
    stages = parse_count("stages", get("stages"));
  } catch (const ConfigError& e) {
    throw LoadError(e.what());
  }
  std::map<std::string, const RawTensor*> by_name;
  for (const auto& t : file.tensors) by_name[t.name] = &t;
  auto tensor = [&](const std::string& name) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw LoadError("missing tensor '" + name + "'");
    return from_raw<T>(*it->second, false);
  };
  std::vector<typename FeatureExtractor<T>::Stage> out;
  std::size_t used = 0;
  std::size_t channels = 3;
  for (std::size_t s = 0; s < stages; ++s) {
    typename FeatureExtractor<T>::Stage stage;
    std::istringstream desc(get("stage." + std::to_string(s)));
    std::string item;
    std::size_t j = 0;
    while (std::getline(desc, item, ',')) {
      ExtractorLayer<T> layer{parse_layer_kind(detail::trim(item)), {}, {}};
      if (has_weights(layer.kind)) {
        const std::string p = "stage" + std::to_string(s) + ".layer" + std::to_string(j);
        layer.weight = tensor(p + ".weight");
        layer.bias = tensor(p + ".bias");
        used += 2;
        const bool k3 = layer.kind == LayerKind::conv3x3;
        const auto& ws = layer.weight.shape();
        const bool ok = k3 ? (ws.size() == 4 && ws[0] == 3 && ws[1] == 3 && ws[2] == channels)
                           : (ws.size() == 2 && ws[0] == channels);
        if (!ok || layer.bias.shape() != Shape{ws.back()}) {
          throw LoadError("tensor '" + p + ".weight' has shape " + shape_str(ws) +
                          ", inconsistent with " + std::to_string(channels) +
                          " input channels");
        }
        channels = ws.back();
      }
      stage.push_back(std::move(layer));
      ++j;
    }
    out.push_back(std::move(stage));
  }
  if (used != file.tensors.size()) throw LoadError("extractor file has unreferenced tensors");
  try {
    return FeatureExtractor<T>(std::move(out));
  } catch (const ConfigError& e) {
    throw LoadError(e.what());
  }
}

template <typename T>
void save_extractor(const std::filesystem::path& path, const FeatureExtractor<T>& ext) {
  write_weight_file(extractor_to_file(ext), path);
}

template <typename T>
FeatureExtractor<T> load_extractor(const std::filesystem::path& path) {
  return extractor_from_file<T>(read_weight_file(path));
}

}  // namespace stytr
