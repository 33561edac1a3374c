#pragma once

#include <cmath>
#include <map>
#include <string>

#include "kdmvs/tensor/tape.hpp"

namespace kdmvs {

// Named trainable grids. std::map keeps a stable name order, which fixes
// the iteration order for optimizers and checkpoints.
using ParamStore = std::map<std::string, Grid>;
using GradStore = std::map<std::string, Grid>;

// Parameters registered on a tape for one forward pass.
class BoundParams {
 public:
  // trainable == false binds the parameters as constants (inference).
  BoundParams(Tape& tape, const ParamStore& params, bool trainable) {
    for (const auto& [name, value] : params) vars_.emplace(name, trainable ? tape.leaf(value) : tape.constant(value));
  }

  // Wraps variables that are already on a tape.
  static BoundParams from_vars(std::map<std::string, Var> vars) {
    BoundParams p;
    p.vars_ = std::move(vars);
    return p;
  }

  const Var& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }

  // Gradients for every bound parameter after tape.backward().
  GradStore gradients(const Tape& tape) const {
    GradStore out;
    for (const auto& [name, var] : vars_) out.emplace(name, tape.grad(var));
    return out;
  }

 private:
  BoundParams() = default;
  std::map<std::string, Var> vars_;
};

inline void accumulate(GradStore& into, const GradStore& from, double weight = 1.0) {
  for (const auto& [name, g] : from) {
    auto it = into.find(name);
    if (it == into.end()) {
      it = into.emplace(name, Grid(g.shape())).first;
    }
    for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += weight * g[i];
  }
}

inline bool all_finite(const GradStore& grads) {
  for (const auto& [name, g] : grads)
    if (!g.all_finite()) return false;
  return true;
}

// Adaptive-moment optimizer (Adam) with bias correction.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(Options opt) : opt_(opt) {}

  void step(ParamStore& params, const GradStore& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      const Grid& g = git->second;
      auto& m = first_.try_emplace(name, p.shape()).first->second;
      auto& v = second_.try_emplace(name, p.shape()).first->second;
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
        p[i] -= opt_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
      }
    }
  }

  long steps() const { return t_; }

 private:
  Options opt_;
  long t_ = 0;
  std::map<std::string, Grid> first_;
  std::map<std::string, Grid> second_;
};

}  // namespace kdmvs
