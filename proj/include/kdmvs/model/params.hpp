#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "kdmvs/geometry/hypotheses.hpp"
#include "kdmvs/tensor/params.hpp"
#include "kdmvs/util/rng.hpp"

namespace kdmvs::model {

struct ModelConfig {
  CascadeSettings cascade{};
  int feature_channels = 8;
  int regularizer_channels = 4;
  // Initial inverse temperature applied to regularized costs before the
  // normalized exponential.
  double initial_sharpness = 50.0;
  // Scale of the regularizer's residual branch at init; small keeps the
  // stack close to the identity on costs.
  double regularizer_init_scale = 0.01;
};

inline std::string feature_prefix(int level) { return "feat.l" + std::to_string(level); }
inline std::string regularizer_prefix(int stage) { return "reg.s" + std::to_string(stage); }

namespace detail {

inline Grid he_uniform(int c_out, int taps, int c_in, Rng& rng, double gain = 1.0) {
  Grid w(c_out, taps, c_in);
  const double bound = gain * std::sqrt(6.0 / (taps * c_in));
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

}  // namespace detail

// Deterministic parameter initialization from a seed.
inline ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore p;
  Rng rng(seed);
  const int cf = cfg.feature_channels, cr = cfg.regularizer_channels;
  for (int level = 0; level < 3; ++level) {
    const std::string f = feature_prefix(level);
    p[f + ".conv1.w"] = detail::he_uniform(cf, 9, 3, rng);
    p[f + ".conv1.b"] = Grid(1, 1, cf);
    p[f + ".conv2.w"] = detail::he_uniform(cf, 9, cf, rng);
    p[f + ".conv2.b"] = Grid(1, 1, cf);
  }
  for (int stage = 0; stage < 3; ++stage) {
    const std::string r = regularizer_prefix(stage);
    p[r + ".conv1.w"] = detail::he_uniform(cr, 27, 1, rng);
    p[r + ".conv1.b"] = Grid(1, 1, cr);
    p[r + ".conv2.w"] = detail::he_uniform(1, 27, cr, rng, cfg.regularizer_init_scale);
    p[r + ".conv2.b"] = Grid(1, 1, 1);
    p[r + ".log_sharpness"] = Grid::scalar(std::log(cfg.initial_sharpness));
  }
  return p;
}

}  // namespace kdmvs::model
