#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kdmvs/tensor/grid.hpp"

namespace kdmvs {

namespace detail {

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& header, const std::vector<char>& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("short write to " + path.string());
}

// Reads `count` whitespace-separated header tokens (skipping '#' comments),
// consuming exactly one whitespace byte after the last one.
inline std::vector<std::string> header_tokens(const std::vector<char>& bytes, int count, std::size_t& pos) {
  std::vector<std::string> tokens;
  while (static_cast<int>(tokens.size()) < count) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) tok += bytes[pos++];
    if (tok.empty()) throw IoError("malformed header: truncated");
    tokens.push_back(tok);
  }
  if (pos >= bytes.size()) throw IoError("malformed header: no payload");
  ++pos;
  return tokens;
}

inline int parse_dim(const std::string& s) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size() || v <= 0 || v > (1 << 20)) throw IoError("malformed header: bad dimension '" + s + "'");
    return static_cast<int>(v);
  } catch (const std::logic_error&) {
    throw IoError("malformed header: bad dimension '" + s + "'");
  }
}

}  // namespace detail

// PFM: "Pf" (1 channel) or "PF" (3 channels), "W H", then a scale whose sign
// gives the byte order (negative = little-endian). Rows are stored
// bottom-up as 32-bit floats.
inline std::string pfm_header(const Grid& g) {
  char scale[32];
  std::snprintf(scale, sizeof scale, "%.4f", -1.0);
  return std::string(g.channels() == 1 ? "Pf" : "PF") + "\n" + std::to_string(g.width()) + " " +
         std::to_string(g.height()) + "\n" + scale + "\n";
}

inline std::vector<char> encode_pfm(const Grid& g) {
  if (g.channels() != 1 && g.channels() != 3)
    throw ShapeError("PFM needs 1 or 3 channels, got " + to_string(g.shape()));
  const std::string header = pfm_header(g);
  std::vector<char> bytes(header.begin(), header.end());
  bytes.reserve(header.size() + g.size() * 4);
  for (int y = g.height() - 1; y >= 0; --y)
    for (int x = 0; x < g.width(); ++x)
      for (int c = 0; c < g.channels(); ++c) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(g(y, x, c)));
        for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
      }
  return bytes;
}

inline Grid decode_pfm(const std::vector<char>& bytes) {
  std::size_t pos = 0;
  const auto tok = detail::header_tokens(bytes, 4, pos);
  int channels = 0;
  if (tok[0] == "Pf") channels = 1;
  else if (tok[0] == "PF") channels = 3;
  else throw IoError("malformed PFM header: magic '" + tok[0] + "'");
  const int w = detail::parse_dim(tok[1]);
  const int h = detail::parse_dim(tok[2]);
  double scale = 0.0;
  try {
    scale = std::stod(tok[3]);
  } catch (const std::logic_error&) {
    throw IoError("malformed PFM header: bad scale '" + tok[3] + "'");
  }
  if (scale == 0.0 || !std::isfinite(scale)) throw IoError("malformed PFM header: zero scale");
  const bool little = scale < 0.0;
  const std::size_t need = static_cast<std::size_t>(w) * h * channels * 4;
  if (bytes.size() - pos < need) throw IoError("truncated PFM payload");
  Grid g(h, w, channels);
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
          const auto byte = static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + b]));
          bits |= little ? byte << (8 * b) : byte << (8 * (3 - b));
        }
        pos += 4;
        g(y, x, c) = std::bit_cast<float>(bits);
      }
  return g;
}

inline void write_pfm(const Grid& g, const std::filesystem::path& path) {
  const auto bytes = encode_pfm(g);
  detail::write_file(path, {}, bytes);
}

inline Grid read_pfm(const std::filesystem::path& path) {
  try {
    return decode_pfm(detail::read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// Binary PPM (P6), 8 bits per channel; values are clamped to [0, 1] and
// rounded to the nearest level.
inline void write_ppm(const Grid& g, const std::filesystem::path& path) {
  if (g.channels() != 3) throw ShapeError("PPM needs 3 channels, got " + to_string(g.shape()));
  std::vector<char> payload(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    payload[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(g[i], 0.0, 1.0) * 255.0)));
  detail::write_file(path, "P6\n" + std::to_string(g.width()) + " " + std::to_string(g.height()) + "\n255\n", payload);
}

inline Grid read_ppm(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  std::size_t pos = 0;
  const auto tok = detail::header_tokens(bytes, 4, pos);
  if (tok[0] != "P6") throw IoError(path.string() + ": not a binary PPM");
  const int w = detail::parse_dim(tok[1]);
  const int h = detail::parse_dim(tok[2]);
  if (tok[3] != "255") throw IoError(path.string() + ": only 8-bit PPM is supported");
  Grid g(h, w, 3);
  if (bytes.size() - pos < g.size()) throw IoError(path.string() + ": truncated PPM payload");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  return g;
}

}  // namespace kdmvs
