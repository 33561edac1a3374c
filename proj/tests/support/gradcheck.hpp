#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "kdmvs/tensor/tape.hpp"
#include "kdmvs/util/rng.hpp"

namespace kdmvs::testing {

// Builds a scalar loss from leaf variables on the given tape.
using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheck {
  double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0.0;
  int coordinates = 0;
};

inline double evaluate(const LossFn& fn, const std::vector<Grid>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Grid& g : inputs) leaves.push_back(tape.leaf(g));
  return fn(tape, leaves).value().item();
}

// Compares reverse-mode gradients with central differences at up to
// `samples` randomly chosen coordinates across all inputs.
inline GradCheck check_gradient(const LossFn& fn, std::vector<Grid> inputs, int samples = 100, double step = 1e-5,
                                std::uint64_t seed = 7) {
  std::vector<Grid> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Grid& g : inputs) leaves.push_back(tape.leaf(g));
    Var loss = fn(tape, leaves);
    tape.backward(loss);
    for (const Var& v : leaves) analytic.push_back(tape.grad(v));
  }
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t j = 0; j < inputs[i].size(); ++j) coords.emplace_back(i, j);
  Rng rng(seed);
  if (static_cast<int>(coords.size()) > samples) {
    rng.shuffle(coords.begin(), coords.end());
    coords.resize(samples);
  }
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (auto [i, j] : coords) {
    const double orig = inputs[i][j];
    inputs[i][j] = orig + step;
    const double up = evaluate(fn, inputs);
    inputs[i][j] = orig - step;
    const double down = evaluate(fn, inputs);
    inputs[i][j] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[i][j];
    diff2 += (a - numeric) * (a - numeric);
    a2 += a * a;
    n2 += numeric * numeric;
  }
  GradCheck out;
  out.coordinates = static_cast<int>(coords.size());
  out.analytic_norm = std::sqrt(a2);
  const double scale = std::max(std::sqrt(a2), std::sqrt(n2));
  out.relative_error = scale > 0.0 ? std::sqrt(diff2) / scale : std::sqrt(diff2);
  return out;
}

inline Grid random_grid(int h, int w, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Grid g(h, w, c);
  for (double& v : g.data()) v = rng.uniform(lo, hi);
  return g;
}

}  // namespace kdmvs::testing
