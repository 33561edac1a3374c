#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "kdmvs/util/error.hpp"

namespace kdmvs::eval {

// Round-trip exact decimal for doubles.
inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct MetricRow {
  std::string run;
  std::string stage;
  std::string metric;
  double value = 0.0;
};

inline void write_metrics_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "run,stage,metric,value\n";
  for (const MetricRow& r : rows) out << r.run << ',' << r.stage << ',' << r.metric << ',' << format_number(r.value) << '\n';
}

}  // namespace kdmvs::eval
