#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace ccanvas::base64 {

namespace detail {
inline constexpr std::string_view alphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

constexpr std::array<int, 256> make_reverse() {
  std::array<int, 256> table{};
  for (auto& v : table) v = -1;
  for (int i = 0; i < 64; ++i) table[static_cast<unsigned char>(alphabet[i])] = i;
  return table;
}
inline constexpr auto reverse = make_reverse();
}  // namespace detail

inline std::string encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                 (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                 static_cast<unsigned char>(bytes[i + 2]);
    out += detail::alphabet[(v >> 18) & 63];
    out += detail::alphabet[(v >> 12) & 63];
    out += detail::alphabet[(v >> 6) & 63];
    out += detail::alphabet[v & 63];
  }
  if (i < bytes.size()) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += detail::alphabet[(v >> 18) & 63];
    out += detail::alphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? detail::alphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

/// Strict RFC 4648 decoding. Whitespace (as emitted by line-wrapping
/// encoders) is skipped; anything else outside the alphabet fails.
inline std::optional<std::string> decode(std::string_view text) {
  std::string compact;
  compact.reserve(text.size());
  for (char c : text) {
    if (c == '\n' || c == '\r' || c == ' ' || c == '\t') continue;
    compact += c;
  }
  if (compact.size() % 4 != 0) return std::nullopt;
  std::string out;
  out.reserve(compact.size() / 4 * 3);
  for (std::size_t i = 0; i < compact.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      char c = compact[i + k];
      if (c == '=') {
        if (i + 4 != compact.size() || k < 2) return std::nullopt;
        vals[k] = 0;
        ++pad;
      } else {
        if (pad > 0) return std::nullopt;
        vals[k] = detail::reverse[static_cast<unsigned char>(c)];
        if (vals[k] < 0) return std::nullopt;
      }
    }
    unsigned v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
    out += static_cast<char>((v >> 16) & 0xFF);
    if (pad < 2) out += static_cast<char>((v >> 8) & 0xFF);
    if (pad < 1) out += static_cast<char>(v & 0xFF);
  }
  return out;
}

inline bool is_valid(std::string_view text) { return decode(text).has_value(); }

}  // namespace ccanvas::base64
