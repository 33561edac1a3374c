#pragma once

#include <algorithm>
#include <cmath>

#include "kdmvs/tensor/tape.hpp"

namespace kdmvs::distill {

inline constexpr double kLogFloor = 1e-12;

enum class Divergence {
  kSymmetric,  // sum_k (P_k - Q_k) log(P_k / Q_k)
  kForward,    // sum_k P_k log(P_k / Q_k)
};

struct DistillLoss {
  Var value;
  int pixels = 0;  // labelled pixels averaged over; 0 means the loss is a constant 0
};

// Divergence between target P and prediction Q = predicted, averaged over
// pixels where mask != 0. Both probabilities are floored at 1e-12 inside
// the logarithm. P is a constant; the gradient reaches Q only.
inline DistillLoss distill_loss(const Grid& target, const Var& predicted, const Grid& mask,
                                Divergence kind = Divergence::kSymmetric) {
  const Grid& q = predicted.value();
  require_same_shape(target, q, "distill_loss");
  if (mask.height() != q.height() || mask.width() != q.width() || mask.channels() != 1)
    throw ShapeError("distill_loss: mask " + to_string(mask.shape()) + " vs volume " + to_string(q.shape()));
  const int nd = q.channels();
  const int n = count_nonzero(mask);
  double total = 0.0;
  for (int p = 0; p < mask.pixels(); ++p) {
    if (mask[p] == 0.0) continue;
    double s = 0.0;
    for (int k = 0; k < nd; ++k) {
      const std::size_t i = static_cast<std::size_t>(p) * nd + k;
      const double a = target[i], b = q[i];
      const double log_ratio = std::log(std::max(a, kLogFloor)) - std::log(std::max(b, kLogFloor));
      if (kind == Divergence::kSymmetric)
        s += (a - b) * log_ratio;
      else if (a > 0.0)
        s += a * log_ratio;
    }
    total += s;
  }
  const double inv = n > 0 ? 1.0 / n : 0.0;
  Var value = predicted.tape()->record(
      Grid::scalar(total * inv), {predicted},
      [target, predicted, mask, nd, inv, kind](const Grid&, const Grid& g, std::span<Grid* const> pg) {
        const Grid& q = predicted.value();
        for (int p = 0; p < mask.pixels(); ++p) {
          if (mask[p] == 0.0) continue;
          for (int k = 0; k < nd; ++k) {
            const std::size_t i = static_cast<std::size_t>(p) * nd + k;
            const double a = target[i], b = q[i];
            const bool floored = b < kLogFloor;
            const double bc = std::max(b, kLogFloor);
            double d;
            if (kind == Divergence::kSymmetric) {
              const double log_ratio = std::log(std::max(a, kLogFloor)) - std::log(bc);
              d = -log_ratio - (floored ? 0.0 : (a - b) / bc);
            } else {
              d = floored ? 0.0 : -a / bc;
            }
            (*pg[0])[i] += g[0] * inv * d;
          }
        }
      });
  return {value, n};
}

}  // namespace kdmvs::distill
