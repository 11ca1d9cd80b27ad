#pragma once

// Network hyper-parameters and the key=value text form shared by run
// configuration files and the config record of weight files.

#include <charconv>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "stytr/error.hpp"

namespace stytr {

enum class PeMode { none, sinusoidal, cape };

inline PeMode parse_pe_mode(std::string_view s) {
  if (s == "none") return PeMode::none;
  if (s == "sinusoidal") return PeMode::sinusoidal;
  if (s == "cape") return PeMode::cape;
  throw ConfigError("unknown positional encoding mode '" + std::string(s) +
                    "' (expected none, sinusoidal or cape)");
}

inline const char* to_string(PeMode m) {
  switch (m) {
    case PeMode::none: return "none";
    case PeMode::sinusoidal: return "sinusoidal";
    case PeMode::cape: return "cape";
  }
  return "none";
}

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

// Parses "key = value" lines; '#' starts a comment, blank lines are skipped.
inline KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key=value, got '" + t + "'");
    }
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    }
    if (!kv.emplace(key, value).second) {
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" +
                        key + "'");
    }
  }
  return kv;
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

inline long long parse_int(const std::string& key, const std::string& value) {
  long long out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("key '" + key + "': '" + value + "' is not an integer");
  }
  return out;
}

inline std::size_t parse_count(const std::string& key, const std::string& value,
                               long long min_value = 1) {
  const long long v = parse_int(key, value);
  if (v < min_value) {
    throw ConfigError("key '" + key + "': value " + value + " must be >= " +
                      std::to_string(min_value));
  }
  return static_cast<std::size_t>(v);
}

inline double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': '" + value + "' is not a number");
  }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("key '" + key + "': '" + value + "' is not a boolean");
}

inline std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct TransformerConfig {
  std::size_t channels = 512;
  std::size_t heads = 8;
  std::size_t encoder_layers = 3;
  std::size_t decoder_layers = 3;
  std::size_t ffn_hidden = 2048;
  std::size_t patch = 8;
  std::size_t cape_grid = 18;
  PeMode pe_content = PeMode::cape;
  PeMode pe_style = PeMode::none;
  bool separate_embeddings = false;

  std::size_t head_dim() const { return channels / heads; }
  std::size_t patch_dim() const { return 3 * patch * patch; }

  // Desk-scale settings used by the verification suites.
  static TransformerConfig toy() {
    TransformerConfig c;
    c.channels = 64;
    c.heads = 4;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.ffn_hidden = 256;
    c.cape_grid = 4;
    return c;
  }

  void validate() const {
    if (channels == 0 || heads == 0 || channels % heads != 0) {
      throw ConfigError("channels (" + std::to_string(channels) +
                        ") must be a positive multiple of heads (" +
                        std::to_string(heads) + ")");
    }
    if (encoder_layers == 0 || decoder_layers == 0 || ffn_hidden == 0 ||
        patch == 0 || cape_grid == 0) {
      throw ConfigError("layer counts, ffn_hidden, patch and cape_grid must be >= 1");
    }
    if (patch != 8) {
      throw ConfigError("patch must be 8: the CNN decoder upsamples by 2^3");
    }
    if (channels % 8 != 0) {
      throw ConfigError("channels must be divisible by 8 for the CNN decoder");
    }
    if ((pe_content == PeMode::sinusoidal || pe_style == PeMode::sinusoidal) &&
        channels % 4 != 0) {
      throw ConfigError("sinusoidal encoding needs channels divisible by 4");
    }
  }

  KeyValues to_key_values() const {
    return {{"channels", std::to_string(channels)},
            {"heads", std::to_string(heads)},
            {"encoder_layers", std::to_string(encoder_layers)},
            {"decoder_layers", std::to_string(decoder_layers)},
            {"ffn_hidden", std::to_string(ffn_hidden)},
            {"patch", std::to_string(patch)},
            {"cape_grid", std::to_string(cape_grid)},
            {"pe_content", to_string(pe_content)},
            {"pe_style", to_string(pe_style)},
            {"separate_embeddings", separate_embeddings ? "true" : "false"}};
  }

  // Applies one key; returns false when the key is not a transformer key.
  bool apply(const std::string& key, const std::string& value) {
    if (key == "channels") channels = parse_count(key, value);
    else if (key == "heads") heads = parse_count(key, value);
    else if (key == "encoder_layers") encoder_layers = parse_count(key, value);
    else if (key == "decoder_layers") decoder_layers = parse_count(key, value);
    else if (key == "ffn_hidden") ffn_hidden = parse_count(key, value);
    else if (key == "patch") patch = parse_count(key, value);
    else if (key == "cape_grid") cape_grid = parse_count(key, value);
    else if (key == "pe_content") pe_content = parse_pe_mode(value);
    else if (key == "pe_style") pe_style = parse_pe_mode(value);
    else if (key == "separate_embeddings") separate_embeddings = parse_bool(key, value);
    else return false;
    return true;
  }

  static TransformerConfig from_key_values(const KeyValues& kv) {
    TransformerConfig c;
    for (const auto& [k, v] : kv) {
      if (!c.apply(k, v)) throw ConfigError("unknown config key '" + k + "'");
    }
    c.validate();
    return c;
  }

  bool operator==(const TransformerConfig&) const = default;
};

}  // namespace stytr
