#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "kdmvs/geometry/camera.hpp"

namespace kdmvs {

// Camera text file:
//   extrinsic
//   4 lines of the row-major 4x4 [R|t; 0 0 0 1]
//   intrinsic
//   3 lines of K
//   depth_min depth_interval depth_max
// Whitespace separated; '#' starts a comment.
inline CameraModel parse_camera(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);
  }
  std::size_t pos = 0;
  auto expect = [&](const char* word) {
    if (pos >= tokens.size() || tokens[pos] != word) throw IoError(std::string("camera file: expected '") + word + "'");
    ++pos;
  };
  auto number = [&]() {
    if (pos >= tokens.size()) throw IoError("camera file: truncated");
    try {
      std::size_t used = 0;
      double v = std::stod(tokens[pos], &used);
      if (used != tokens[pos].size()) throw IoError("camera file: bad number '" + tokens[pos] + "'");
      ++pos;
      return v;
    } catch (const std::logic_error&) {
      throw IoError("camera file: bad number '" + tokens[pos] + "'");
    }
  };
  CameraModel cam;
  expect("extrinsic");
  double E[16];
  for (double& e : E) e = number();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) cam.R(r, c) = E[r * 4 + c];
    cam.t(r) = E[r * 4 + 3];
  }
  expect("intrinsic");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.K(r, c) = number();
  cam.depth_min = number();
  cam.depth_interval = number();
  cam.depth_max = number();
  if (pos != tokens.size()) throw IoError("camera file: trailing tokens");
  cam.validate();
  return cam;
}

inline std::string format_camera(const CameraModel& cam) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "extrinsic\n";
  for (int r = 0; r < 3; ++r) os << cam.R(r, 0) << ' ' << cam.R(r, 1) << ' ' << cam.R(r, 2) << ' ' << cam.t(r) << '\n';
  os << "0 0 0 1\n\nintrinsic\n";
  for (int r = 0; r < 3; ++r) os << cam.K(r, 0) << ' ' << cam.K(r, 1) << ' ' << cam.K(r, 2) << '\n';
  os << '\n' << cam.depth_min << ' ' << cam.depth_interval << ' ' << cam.depth_max << '\n';
  return os.str();
}

inline CameraModel read_camera(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open camera file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_camera(ss.str());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void write_camera(const CameraModel& cam, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write camera file " + path.string());
  out << format_camera(cam);
}

}  // namespace kdmvs
