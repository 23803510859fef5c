#pragma once

// `key = value` text form of UNetConfig. Grammar in docs/formats.md.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mbu/error.hpp"
#include "mbu/unet_config.hpp"

namespace mbu {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace detail

/// Parses a config. `base = N` rescales the default schedule and is applied
/// before any explicit width keys regardless of position.
inline UNetConfig parse_config(std::istream& in, const std::string& source = "config") {
  std::vector<std::pair<std::size_t, std::pair<std::string, std::string>>> entries;
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;
  auto error = [&](std::size_t ln, const std::string& what) {
    fail(ErrorKind::Parse, source + ":" + std::to_string(ln) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) error(line_no, "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) error(line_no, "expected 'key = value'");
    if (!seen.emplace(key, line_no).second) error(line_no, "duplicate key '" + key + "'");
    entries.push_back({line_no, {key, value}});
  }
  if (seen.count("config_id") && seen.count("masked")) {
    error(seen["masked"], "'masked' and 'config_id' are mutually exclusive");
  }

  auto to_int = [&](std::size_t ln, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos || v.size() > 9) {
      error(ln, "expected a non-negative integer, got '" + v + "'");
    }
    return std::stoi(v);
  };
  auto to_array = [&](std::size_t ln, const std::string& v) {
    const auto items = detail::split_list(v);
    if (items.size() != 4) error(ln, "expected 4 comma-separated widths");
    std::array<int, 4> a{};
    for (std::size_t i = 0; i < 4; ++i) a[i] = to_int(ln, items[i]);
    return a;
  };

  UNetConfig c;
  for (const auto& [ln, kv] : entries) {
    if (kv.first == "base") c = UNetConfig::scaled(to_int(ln, kv.second));
  }
  for (const auto& [ln, kv] : entries) {
    const auto& [key, value] = kv;
    if (key == "base") {
      continue;
    } else if (key == "in_channels") {
      c.in_channels = to_int(ln, value);
    } else if (key == "out_channels") {
      c.out_channels = to_int(ln, value);
    } else if (key == "height") {
      c.height = to_int(ln, value);
    } else if (key == "width") {
      c.width = to_int(ln, value);
    } else if (key == "extent") {
      c.height = c.width = to_int(ln, value);
    } else if (key == "encoder") {
      c.encoder = to_array(ln, value);
    } else if (key == "bottleneck") {
      c.bottleneck = to_int(ln, value);
    } else if (key == "up_transposed") {
      c.up_transposed = to_array(ln, value);
    } else if (key == "decoder") {
      c.decoder = to_array(ln, value);
    } else if (key == "up_kernel") {
      c.up_kernel = to_int(ln, value);
    } else if (key == "up_stride") {
      c.up_stride = to_int(ln, value);
    } else if (key == "config_id") {
      const int id = to_int(ln, value);
      if (id >= kConfigCount) error(ln, "config_id outside 0..4095");
      c.precision = PrecisionMap::from_id(id);
    } else if (key == "masked") {
      if (value == "none") {
        c.precision = PrecisionMap::all(LayerState::Binary);
      } else if (value == "all") {
        c.precision = PrecisionMap::all(LayerState::Masked);
      } else {
        PrecisionMap m;
        for (const auto& item : detail::split_list(value)) {
          const auto label = parse_label(item);
          if (!label || !is_configurable(*label)) error(ln, "unknown configurable layer '" + item + "'");
          m.set(*label, LayerState::Masked);
        }
        c.precision = m;
      }
    } else if (key == "stem2") {
      if (value == "masked") {
        c.stem2 = LayerState::Masked;
      } else if (value == "binary") {
        c.stem2 = LayerState::Binary;
      } else {
        error(ln, "stem2 must be 'masked' or 'binary'");
      }
    } else if (key == "binary_padding") {
      if (value == "minus-one") {
        c.binary_padding = BinaryPadding::MinusOne;
      } else if (value == "reject") {
        c.binary_padding = BinaryPadding::Reject;
      } else {
        error(ln, "binary_padding must be 'minus-one' or 'reject'");
      }
    } else {
      error(ln, "unknown key '" + key + "'");
    }
  }
  const auto issues = validate(c);
  if (!issues.empty()) fail(ErrorKind::InvalidInput, source + ": " + issues.front());
  return c;
}

inline UNetConfig parse_config(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  return parse_config(in, source);
}

inline UNetConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  return parse_config(in, path);
}

inline std::string format_config(const UNetConfig& c) {
  auto arr = [](const std::array<int, 4>& a) {
    return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]) + "," + std::to_string(a[3]);
  };
  std::ostringstream os;
  os << "in_channels = " << c.in_channels << "\n"
     << "out_channels = " << c.out_channels << "\n"
     << "height = " << c.height << "\n"
     << "width = " << c.width << "\n"
     << "encoder = " << arr(c.encoder) << "\n"
     << "bottleneck = " << c.bottleneck << "\n"
     << "up_transposed = " << arr(c.up_transposed) << "\n"
     << "decoder = " << arr(c.decoder) << "\n"
     << "up_kernel = " << c.up_kernel << "\n"
     << "up_stride = " << c.up_stride << "\n"
     << "config_id = " << c.precision.id() << "\n"
     << "stem2 = " << to_string(c.stem2) << "\n"
     << "binary_padding = " << (c.binary_padding == BinaryPadding::MinusOne ? "minus-one" : "reject") << "\n";
  return os.str();
}

}  // namespace mbu
