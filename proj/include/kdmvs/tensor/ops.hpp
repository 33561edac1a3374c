#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "kdmvs/tensor/tape.hpp"

// Differentiable operations on Var. Every op computes its forward value
// eagerly and records a closure mapping the output gradient to parent
// gradients. Reductions run in a fixed order so results are bit-reproducible.
namespace kdmvs::ops {

enum class BinaryOp { kAdd, kSub, kMul, kAbsDiff };

inline Var map_binary(const Var& a, const Var& b, BinaryOp op) {
  require_same_shape(a.value(), b.value(), "map_binary");
  const Grid& av = a.value();
  const Grid& bv = b.value();
  Grid out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (op) {
      case BinaryOp::kAdd: out[i] = av[i] + bv[i]; break;
      case BinaryOp::kSub: out[i] = av[i] - bv[i]; break;
      case BinaryOp::kMul: out[i] = av[i] * bv[i]; break;
      case BinaryOp::kAbsDiff: out[i] = std::abs(av[i] - bv[i]); break;
    }
  }
  return a.tape()->record(std::move(out), {a, b}, [a, b, op](const Grid&, const Grid& g, std::span<Grid* const> pg) {
    const Grid& av = a.value();
    const Grid& bv = b.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double da = 0.0, db = 0.0;
      switch (op) {
        case BinaryOp::kAdd: da = 1.0; db = 1.0; break;
        case BinaryOp::kSub: da = 1.0; db = -1.0; break;
        case BinaryOp::kMul: da = bv[i]; db = av[i]; break;
        case BinaryOp::kAbsDiff: {
          const double d = av[i] - bv[i];
          da = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
          db = -da;
          break;
        }
      }
      if (pg[0]) (*pg[0])[i] += g[i] * da;
      if (pg[1]) (*pg[1])[i] += g[i] * db;
    }
  });
}

inline Var add(const Var& a, const Var& b) { return map_binary(a, b, BinaryOp::kAdd); }
inline Var sub(const Var& a, const Var& b) { return map_binary(a, b, BinaryOp::kSub); }
inline Var mul(const Var& a, const Var& b) { return map_binary(a, b, BinaryOp::kMul); }
inline Var abs_diff(const Var& a, const Var& b) { return map_binary(a, b, BinaryOp::kAbsDiff); }
inline Var square(const Var& a) { return mul(a, a); }

inline Var scale(const Var& a, double s) {
  const Grid& av = a.value();
  Grid out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return a.tape()->record(std::move(out), {a}, [s](const Grid&, const Grid& g, std::span<Grid* const> pg) {
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * s;
  });
}

inline Var tanh(const Var& a) {
  const Grid& av = a.value();
  Grid out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  return a.tape()->record(std::move(out), {a}, [](const Grid& y, const Grid& g, std::span<Grid* const> pg) {
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

inline Var exp(const Var& a) {
  const Grid& av = a.value();
  Grid out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  return a.tape()->record(std::move(out), {a}, [](const Grid& y, const Grid& g, std::span<Grid* const> pg) {
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * y[i];
  });
}

// x * s where s is a 1x1x1 scalar.
inline Var mul_scalar(const Var& x, const Var& s) {
  if (s.value().size() != 1) throw ShapeError("mul_scalar: factor must be scalar, got " + to_string(s.shape()));
  const Grid& xv = x.value();
  const double sv = s.value()[0];
  Grid out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * sv;
  return x.tape()->record(std::move(out), {x, s}, [x, s](const Grid&, const Grid& g, std::span<Grid* const> pg) {
    const Grid& xv = x.value();
    const double sv = s.value()[0];
    double ds = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (pg[0]) (*pg[0])[i] += g[i] * sv;
      ds += g[i] * xv[i];
    }
    if (pg[1]) (*pg[1])[0] += ds;
  });
}

inline Var sum(const Var& a) {
  const double s = kdmvs::sum(a.value());
  return a.tape()->record(Grid::scalar(s), {a}, [](const Grid&, const Grid& g, std::span<Grid* const> pg) {
    for (double& v : pg[0]->data()) v += g[0];
  });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

// Sum of c_i * v_i over same-shaped inputs.
inline Var weighted_sum(const std::vector<Var>& vars, const std::vector<double>& coeffs) {
  if (vars.empty() || vars.size() != coeffs.size()) throw ShapeError("weighted_sum: bad argument count");
  Grid out(vars[0].shape());
  for (std::size_t j = 0; j < vars.size(); ++j) {
    require_same_shape(vars[0].value(), vars[j].value(), "weighted_sum");
    const Grid& v = vars[j].value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += coeffs[j] * v[i];
  }
  return vars[0].tape()->record(std::move(out), vars, [coeffs](const Grid&, const Grid& g, std::span<Grid* const> pg) {
    for (std::size_t j = 0; j < coeffs.size(); ++j) {
      if (!pg[j]) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[j])[i] += coeffs[j] * g[i];
    }
  });
}

// Per-pixel mean over channels: H x W x C -> H x W x 1.
inline Var channel_mean(const Var& a) {
  const Grid& av = a.value();
  const int c = av.channels();
  Grid out(av.height(), av.width(), 1);
  for (int p = 0; p < av.pixels(); ++p) {
    double s = 0.0;
    for (int k = 0; k < c; ++k) s += av[static_cast<std::size_t>(p) * c + k];
    out[p] = s / c;
  }
  return a.tape()->record(std::move(out), {a}, [c](const Grid&, const Grid& g, std::span<Grid* const> pg) {
    for (std::size_t p = 0; p < g.size(); ++p)
      for (int k = 0; k < c; ++k) (*pg[0])[p * c + k] += g[p] / c;
  });
}

// Divides every channel by the per-pixel channel mean plus eps.
inline Var normalize_by_channel_mean(const Var& a, double eps) {
  const Grid& av = a.value();
  const int c = av.channels();
  Grid out(av.shape());
  Grid denom(av.height(), av.width(), 1);
  for (int p = 0; p < av.pixels(); ++p) {
    double s = 0.0;
    for (int k = 0; k < c; ++k) s += av[static_cast<std::size_t>(p) * c + k];
    denom[p] = s / c + eps;
    for (int k = 0; k < c; ++k) out[static_cast<std::size_t>(p) * c + k] = av[static_cast<std::size_t>(p) * c + k] / denom[p];
  }
  return a.tape()->record(std::move(out), {a}, [c, denom](const Grid& y, const Grid& g, std::span<Grid* const> pg) {
    for (std::size_t p = 0; p < denom.size(); ++p) {
      double gy = 0.0;
      for (int k = 0; k < c; ++k) gy += g[p * c + k] * y[p * c + k];
      for (int k = 0; k < c; ++k) (*pg[0])[p * c + k] += (g[p * c + k] - gy / c) / denom[p];
    }
  });
}

// Per-channel standardization over all pixels: (x - mean) / sqrt(var + eps)
// with the biased variance.
inline Var standardize_channels(const Var& a, double eps) {
  const Grid& av = a.value();
  const int c = av.channels();
  const int n = av.pixels();
  std::vector<double> mu(c, 0.0), inv_sd(c, 0.0);
  for (int p = 0; p < n; ++p)
    for (int k = 0; k < c; ++k) mu[k] += av[static_cast<std::size_t>(p) * c + k];
  for (double& m : mu) m /= n;
  for (int p = 0; p < n; ++p)
    for (int k = 0; k < c; ++k) {
      const double d = av[static_cast<std::size_t>(p) * c + k] - mu[k];
      inv_sd[k] += d * d;
    }
  for (double& v : inv_sd) v = 1.0 / std::sqrt(v / n + eps);
  Grid out(av.shape());
  for (int p = 0; p < n; ++p)
    for (int k = 0; k < c; ++k) {
      const std::size_t i = static_cast<std::size_t>(p) * c + k;
      out[i] = (av[i] - mu[k]) * inv_sd[k];
    }
  return a.tape()->record(std::move(out), {a}, [c, n, inv_sd](const Grid& y, const Grid& g, std::span<Grid* const> pg) {
    std::vector<double> mean_g(c, 0.0), mean_gy(c, 0.0);
    for (int p = 0; p < n; ++p)
      for (int k = 0; k < c; ++k) {
        const std::size_t i = static_cast<std::size_t>(p) * c + k;
        mean_g[k] += g[i] / n;
        mean_gy[k] += g[i] * y[i] / n;
      }
    for (int p = 0; p < n; ++p)
      for (int k = 0; k < c; ++k) {
        const std::size_t i = static_cast<std::size_t>(p) * c + k;
        (*pg[0])[i] += inv_sd[k] * (g[i] - mean_g[k] - y[i] * mean_gy[k]);
      }
  });
}

// Mean of a single-channel map over pixels where mask != 0. Returns 0 (and no
// gradient) when the mask is empty.
inline Var masked_mean(const Var& a, const Grid& mask) {
  require_same_shape(a.value(), mask, "masked_mean");
  const Grid& av = a.value();
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < av.size(); ++i)
    if (mask[i] != 0.0) {
      s += av[i];
      ++n;
    }
  const double inv = n > 0 ? 1.0 / n : 0.0;
  return a.tape()->record(Grid::scalar(s * inv), {a}, [mask, inv](const Grid&, const Grid& g, std::span<Grid* const> pg) {
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i] != 0.0) (*pg[0])[i] += g[0] * inv;
  });
}

// Block average over factor x factor pixels.
inline Var area_downsample(const Var& a, int factor) {
  if (factor == 1) return a;
  Grid out = kdmvs::area_downsample(a.value(), factor);
  const int c = out.channels();
  return a.tape()->record(std::move(out), {a}, [factor, c](const Grid&, const Grid& g, std::span<Grid* const> pg) {
    const double inv = 1.0 / (factor * factor);
    for (int y = 0; y < g.height(); ++y)
      for (int x = 0; x < g.width(); ++x)
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            for (int ch = 0; ch < c; ++ch) (*pg[0])(y * factor + dy, x * factor + dx, ch) += g(y, x, ch) * inv;
  });
}

// Normalized exponential over the channel axis of every pixel.
inline Var softmax_channels(const Var& logits) {
  const Grid& lv = logits.value();
  const int d = lv.channels();
  Grid out(lv.shape());
  for (int p = 0; p < lv.pixels(); ++p) {
    const double* l = &lv[static_cast<std::size_t>(p) * d];
    double* o = &out[static_cast<std::size_t>(p) * d];
    const double m = *std::max_element(l, l + d);
    double z = 0.0;
    for (int k = 0; k < d; ++k) z += (o[k] = std::exp(l[k] - m));
    for (int k = 0; k < d; ++k) o[k] /= z;
  }
  return logits.tape()->record(std::move(out), {logits}, [d](const Grid& y, const Grid& g, std::span<Grid* const> pg) {
    for (std::size_t p = 0; p < y.size() / d; ++p) {
      const double* yp = &y[p * d];
      const double* gp = &g[p * d];
      double dot = 0.0;
      for (int k = 0; k < d; ++k) dot += gp[k] * yp[k];
      for (int k = 0; k < d; ++k) (*pg[0])[p * d + k] += yp[k] * (gp[k] - dot);
    }
  });
}

// Per-pixel expectation sum_k P_k * values_k; values is a constant grid of
// the same shape as P. Output is H x W x 1.
inline Var expectation(const Var& prob, const Grid& values) {
  require_same_shape(prob.value(), values, "expectation");
  const Grid& pv = prob.value();
  const int d = pv.channels();
  Grid out(pv.height(), pv.width(), 1);
  for (int p = 0; p < pv.pixels(); ++p) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += pv[static_cast<std::size_t>(p) * d + k] * values[static_cast<std::size_t>(p) * d + k];
    out[p] = s;
  }
  return prob.tape()->record(std::move(out), {prob}, [values, d](const Grid&, const Grid& g, std::span<Grid* const> pg) {
    for (std::size_t p = 0; p < g.size(); ++p)
      for (int k = 0; k < d; ++k) (*pg[0])[p * d + k] += g[p] * values[p * d + k];
  });
}

// Convolution with 3x3 spatial taps over a stack of `depth` slices; the
// channel axis of x holds depth * c_in values ordered slice-major. With
// kernel_depth == 3 the kernel also spans neighboring slices (a 3D
// convolution over space x hypothesis); with kernel_depth == 1 and depth == 1
// this is an ordinary 2D convolution. Borders replicate the edge value on
// every axis.
//   weight: c_out x (kernel_depth * 9) x c_in
//   bias:   1 x 1 x c_out
inline Var conv_volume(const Var& x, const Var& weight, const Var& bias, int depth, int kernel_depth) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMat>;
  const Grid& xv = x.value();
  const Grid& wv = weight.value();
  const int c_out = wv.height();
  const int taps = wv.width();
  const int c_in = wv.channels();
  if (taps != 9 * kernel_depth) throw ShapeError("conv_volume: weight taps do not match kernel depth");
  if (depth <= 0 || xv.channels() != depth * c_in)
    throw ShapeError("conv_volume: input " + to_string(xv.shape()) + " incompatible with weight " + to_string(wv.shape()));
  if (bias.value().size() != static_cast<std::size_t>(c_out)) throw ShapeError("conv_volume: bias size mismatch");
  const int h = xv.height();
  const int w = xv.width();
  const int kd_half = kernel_depth / 2;
  const int positions = h * w * depth;
  const int k = taps * c_in;

  // Replicated-border source coordinates per output coordinate and tap.
  auto clamped = [](int n, int taps1d, int half) {
    std::vector<int> t(static_cast<std::size_t>(n) * taps1d);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < taps1d; ++k) t[static_cast<std::size_t>(i) * taps1d + k] = std::clamp(i + k - half, 0, n - 1);
    return t;
  };
  const auto ys = std::make_shared<const std::vector<int>>(clamped(h, 3, 1));
  const auto xs = std::make_shared<const std::vector<int>>(clamped(w, 3, 1));
  const auto zs = std::make_shared<const std::vector<int>>(clamped(depth, kernel_depth, kd_half));
  // Visits every (position, tap) with the offset of its first input channel.
  auto for_each_tap = [ys, xs, zs, h, w, depth, kernel_depth, c_in](auto&& fn) {
    int p = 0;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int z = 0; z < depth; ++z, ++p) {
          int tap = 0;
          for (int tz = 0; tz < kernel_depth; ++tz) {
            const std::size_t sz = static_cast<std::size_t>((*zs)[static_cast<std::size_t>(z) * kernel_depth + tz]);
            for (int ty = 0; ty < 3; ++ty) {
              const std::size_t row = static_cast<std::size_t>((*ys)[static_cast<std::size_t>(y) * 3 + ty]) * w;
              for (int tx = 0; tx < 3; ++tx, ++tap) {
                const std::size_t sx = static_cast<std::size_t>((*xs)[static_cast<std::size_t>(xx) * 3 + tx]);
                fn(p, tap, ((row + sx) * depth + sz) * c_in);
              }
            }
          }
        }
  };
  // Unfolded input: one row of taps * c_in values per output position.
  auto unfold = [for_each_tap, positions, c_in, k](const Grid& xv) {
    RowMat col(positions, k);
    double* base = col.data();
    const double* src = xv.data().data();
    for_each_tap([&](int p, int tap, std::size_t off) {
      double* dst = base + static_cast<std::size_t>(p) * k + static_cast<std::size_t>(tap) * c_in;
      for (int ci = 0; ci < c_in; ++ci) dst[ci] = src[off + ci];
    });
    return col;
  };

  Grid out(h, w, depth * c_out);
  {
    const ConstMap wm(wv.data().data(), c_out, k);
    Eigen::Map<RowMat> om(out.data().data(), positions, c_out);
    om.noalias() = unfold(xv) * wm.transpose();
    const Eigen::Map<const Eigen::RowVectorXd> bm(bias.value().data().data(), c_out);
    om.rowwise() += bm;
  }

  return x.tape()->record(
      std::move(out), {x, weight, bias},
      [x, weight, for_each_tap, unfold, positions, c_in, c_out, k](const Grid&, const Grid& g,
                                                                   std::span<Grid* const> pg) {
        const ConstMap gm(g.data().data(), positions, c_out);
        if (pg[2]) {
          Eigen::Map<Eigen::RowVectorXd> gb(pg[2]->data().data(), c_out);
          gb += gm.colwise().sum();
        }
        if (pg[1]) {
          Eigen::Map<RowMat> gw(pg[1]->data().data(), c_out, k);
          gw.noalias() += gm.transpose() * unfold(x.value());
        }
        if (pg[0]) {
          const ConstMap wm(weight.value().data().data(), c_out, k);
          const RowMat gcol = gm * wm;
          double* gx = pg[0]->data().data();
          const double* base = gcol.data();
          for_each_tap([&](int p, int tap, std::size_t off) {
            const double* src = base + static_cast<std::size_t>(p) * k + static_cast<std::size_t>(tap) * c_in;
            for (int ci = 0; ci < c_in; ++ci) gx[off + ci] += src[ci];
          });
        }
      });
}

inline Var conv2d(const Var& x, const Var& weight, const Var& bias) { return conv_volume(x, weight, bias, 1, 1); }

// Coordinates within this distance outside the image still count as inside;
// it absorbs round-off on warps that land exactly on the border.
inline constexpr double kBoundsSlack = 1e-9;

struct Sampled {
  Var value;
  Grid mask;  // H x W x 1, 1 where all four bilinear corners are in bounds
};

// Bilinear sampling of src at per-pixel (x, y) coordinates (channel 0 = x,
// channel 1 = y), pixel centers at integer positions. Samples that need a
// corner outside [0, W-1] x [0, H-1] produce 0 with mask 0 and carry no
// gradient. Differentiable w.r.t. src and coords.
inline Sampled bilinear_sample(const Var& src, const Var& coords) {
  const Grid& sv = src.value();
  const Grid& cv = coords.value();
  if (cv.channels() != 2) throw ShapeError("bilinear_sample: coords must have 2 channels, got " + to_string(cv.shape()));
  if (sv.channels() < 1) throw ShapeError("bilinear_sample: source has no channels");
  const int sh = sv.height(), sw = sv.width(), c = sv.channels();
  const int h = cv.height(), w = cv.width();

  struct Corner {
    int x0, y0, x1, y1;
    double fx, fy;
  };
  auto locate = [sh, sw](double x, double y, Corner& k) {
    if (!(x >= -kBoundsSlack && y >= -kBoundsSlack && x <= sw - 1 + kBoundsSlack && y <= sh - 1 + kBoundsSlack))
      return false;
    k.x0 = std::max(0, std::min(static_cast<int>(std::floor(x)), sw - 2));
    k.y0 = std::max(0, std::min(static_cast<int>(std::floor(y)), sh - 2));
    k.x1 = std::min(k.x0 + 1, sw - 1);
    k.y1 = std::min(k.y0 + 1, sh - 1);
    k.fx = x - k.x0;
    k.fy = y - k.y0;
    return true;
  };

  Grid out(h, w, c);
  Grid mask(h, w, 1);
  for (int p = 0; p < h * w; ++p) {
    Corner k{};
    if (!locate(cv[2 * p], cv[2 * p + 1], k)) continue;
    mask[p] = 1.0;
    const double w00 = (1 - k.fx) * (1 - k.fy), w01 = k.fx * (1 - k.fy), w10 = (1 - k.fx) * k.fy, w11 = k.fx * k.fy;
    for (int ch = 0; ch < c; ++ch)
      out[static_cast<std::size_t>(p) * c + ch] = w00 * sv(k.y0, k.x0, ch) + w01 * sv(k.y0, k.x1, ch) +
                                                  w10 * sv(k.y1, k.x0, ch) + w11 * sv(k.y1, k.x1, ch);
  }

  Var value = src.tape()->record(std::move(out), {src, coords},
                                 [src, coords, locate, c, mask](const Grid&, const Grid& g, std::span<Grid* const> pg) {
                                   const Grid& sv = src.value();
                                   const Grid& cv = coords.value();
                                   Grid* gs = pg[0];
                                   Grid* gc = pg[1];
                                   for (std::size_t p = 0; p < mask.size(); ++p) {
                                     if (mask[p] == 0.0) continue;
                                     Corner k{};
                                     locate(cv[2 * p], cv[2 * p + 1], k);
                                     const double w00 = (1 - k.fx) * (1 - k.fy), w01 = k.fx * (1 - k.fy);
                                     const double w10 = (1 - k.fx) * k.fy, w11 = k.fx * k.fy;
                                     double dx = 0.0, dy = 0.0;
                                     for (int ch = 0; ch < c; ++ch) {
                                       const double go = g[p * c + ch];
                                       if (gs) {
                                         (*gs)(k.y0, k.x0, ch) += go * w00;
                                         (*gs)(k.y0, k.x1, ch) += go * w01;
                                         (*gs)(k.y1, k.x0, ch) += go * w10;
                                         (*gs)(k.y1, k.x1, ch) += go * w11;
                                       }
                                       const double v00 = sv(k.y0, k.x0, ch), v01 = sv(k.y0, k.x1, ch);
                                       const double v10 = sv(k.y1, k.x0, ch), v11 = sv(k.y1, k.x1, ch);
                                       dx += go * ((v01 - v00) * (1 - k.fy) + (v11 - v10) * k.fy);
                                       dy += go * ((v10 - v00) * (1 - k.fx) + (v11 - v01) * k.fx);
                                     }
                                     if (gc) {
                                       (*gc)[2 * p] += dx;
                                       (*gc)[2 * p + 1] += dy;
                                     }
                                   }
                                 });
  return {value, std::move(mask)};
}

}  // namespace kdmvs::ops
