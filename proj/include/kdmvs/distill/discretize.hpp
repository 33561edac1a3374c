#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "kdmvs/distill/encode.hpp"
#include "kdmvs/geometry/hypotheses.hpp"

namespace kdmvs::distill {

enum class NormalizeMode { kSoftmax, kSum };

inline NormalizeMode parse_mode(const std::string& s) {
  if (s == "softmax") return NormalizeMode::kSoftmax;
  if (s == "sum") return NormalizeMode::kSum;
  throw ConfigError("unknown discretize mode '" + s + "' (expected softmax or sum)");
}

inline std::string to_string(NormalizeMode m) { return m == NormalizeMode::kSoftmax ? "softmax" : "sum"; }

struct DiscreteLabel {
  Grid prob;        // H x W x D, rows of labelled pixels sum to 1
  Grid mask;        // labelled pixels that survived discretization
  int dropped = 0;  // labelled pixels whose densities all underflowed
};

// Gaussian density of each label at the pixel's hypotheses, normalized
// either by a softmax over the density values or by their sum.
inline DiscreteLabel discretize(const PseudoLabel& label, const HypothesisSet& hyps, NormalizeMode mode) {
  require_same_shape(label.mask, channel(hyps.depths, 0), "discretize");
  const int nd = hyps.count();
  DiscreteLabel out{Grid(hyps.depths.shape()), Grid(label.mask.shape()), 0};
  std::vector<double> g(nd);
  for (int p = 0; p < label.mask.pixels(); ++p) {
    if (label.mask[p] == 0.0) continue;
    const double mu = label.mean[p], var = label.variance[p];
    const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * var);
    bool any = false;
    for (int k = 0; k < nd; ++k) {
      const double e = hyps.depths[static_cast<std::size_t>(p) * nd + k] - mu;
      g[k] = norm * std::exp(-e * e / (2.0 * var));
      any = any || g[k] > 0.0;
    }
    if (!any) {
      ++out.dropped;
      continue;
    }
    double* o = &out.prob[static_cast<std::size_t>(p) * nd];
    if (mode == NormalizeMode::kSum) {
      double z = 0.0;
      for (int k = 0; k < nd; ++k) z += g[k];
      for (int k = 0; k < nd; ++k) o[k] = g[k] / z;
    } else {
      double m = g[0];
      for (int k = 1; k < nd; ++k) m = std::max(m, g[k]);
      double z = 0.0;
      for (int k = 0; k < nd; ++k) z += (o[k] = std::exp(g[k] - m));
      for (int k = 0; k < nd; ++k) o[k] /= z;
    }
    out.mask[p] = 1.0;
  }
  return out;
}

}  // namespace kdmvs::distill
