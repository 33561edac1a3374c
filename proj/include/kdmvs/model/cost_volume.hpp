#pragma once

#include <cmath>
#include <vector>

#include "kdmvs/geometry/camera.hpp"
#include "kdmvs/geometry/hypotheses.hpp"
#include "kdmvs/geometry/warp.hpp"
#include "kdmvs/tensor/ops.hpp"

namespace kdmvs::model {

// Cost at pixels/hypotheses observed by fewer than two views. Features are
// tanh-bounded, so no real variance cost can exceed 1.
inline constexpr double kCostSentinel = 1.0;

struct CostVolume {
  Var cost;    // H x W x D, mean over channels of the per-channel variance
  Grid flags;  // H x W x 1, 1 where some hypothesis had fewer than 2 valid views
};

namespace detail {

struct Tap {
  int x0, y0, x1, y1;
  double w00, w01, w10, w11;
};

// Bilinear footprint of the warp of pixel (x, y) at depth d; false when it
// is behind the camera or any corner is out of bounds.
inline bool footprint(const PixelWarper& warper, int x, int y, double d, int sh, int sw, Tap& t) {
  const Vector3d X = warper.homogeneous(x, y, d);
  if (!(X.z() > 1e-9)) return false;
  const double u = X.x() / X.z(), v = X.y() / X.z();
  const double e = ops::kBoundsSlack;
  if (!(u >= -e && v >= -e && u <= sw - 1 + e && v <= sh - 1 + e)) return false;
  t.x0 = std::max(0, std::min(static_cast<int>(std::floor(u)), sw - 2));
  t.y0 = std::max(0, std::min(static_cast<int>(std::floor(v)), sh - 2));
  t.x1 = std::min(t.x0 + 1, sw - 1);
  t.y1 = std::min(t.y0 + 1, sh - 1);
  const double fx = u - t.x0, fy = v - t.y0;
  t.w00 = (1 - fx) * (1 - fy);
  t.w01 = fx * (1 - fy);
  t.w10 = (1 - fx) * fy;
  t.w11 = fx * fy;
  return true;
}

}  // namespace detail

// Plane-sweep variance cost volume. For each hypothesis the source features
// are warped onto the reference lattice; the cost is the variance of the
// valid views' feature vectors, averaged over channels. Out-of-view samples
// are left out and the variance is taken over the remaining count.
// Hypotheses are treated as constants (no gradient flows into them).
inline CostVolume build_cost_volume(const Var& ref_feat, const std::vector<Var>& src_feats, const CameraModel& ref_cam,
                                    const std::vector<CameraModel>& src_cams, const HypothesisSet& hyps) {
  if (src_feats.empty()) throw Error("build_cost_volume: need at least 2 views");
  if (src_feats.size() != src_cams.size()) throw Error("build_cost_volume: features/cameras count mismatch");
  const Grid& rf = ref_feat.value();
  const int h = rf.height(), w = rf.width(), c = rf.channels(), nd = hyps.count();
  if (hyps.depths.height() != h || hyps.depths.width() != w)
    throw ShapeError("build_cost_volume: hypotheses " + to_string(hyps.depths.shape()) + " vs features " +
                     to_string(rf.shape()));
  for (const Var& s : src_feats)
    if (s.value().channels() != c) throw ShapeError("build_cost_volume: channel mismatch between views");
  const int ns = static_cast<int>(src_feats.size());
  std::vector<PixelWarper> warpers;
  for (const auto& cam : src_cams) warpers.emplace_back(ref_cam, cam);

  Grid cost(h, w, nd);
  Grid flags(h, w, 1);
  std::vector<double> mean(c), samples(static_cast<std::size_t>(ns) * c);
  std::vector<char> valid(ns);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < nd; ++k) {
        const double d = hyps.depths(y, x, k);
        int n = 1;
        for (int ch = 0; ch < c; ++ch) mean[ch] = rf(y, x, ch);
        for (int s = 0; s < ns; ++s) {
          const Grid& sf = src_feats[s].value();
          detail::Tap t;
          valid[s] = detail::footprint(warpers[s], x, y, d, sf.height(), sf.width(), t);
          if (!valid[s]) continue;
          ++n;
          for (int ch = 0; ch < c; ++ch) {
            const double v = t.w00 * sf(t.y0, t.x0, ch) + t.w01 * sf(t.y0, t.x1, ch) + t.w10 * sf(t.y1, t.x0, ch) +
                             t.w11 * sf(t.y1, t.x1, ch);
            samples[static_cast<std::size_t>(s) * c + ch] = v;
            mean[ch] += v;
          }
        }
        if (n < 2) {
          cost(y, x, k) = kCostSentinel;
          flags(y, x) = 1.0;
          continue;
        }
        double total = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          mean[ch] /= n;
          const double r = rf(y, x, ch) - mean[ch];
          double var = r * r;
          for (int s = 0; s < ns; ++s)
            if (valid[s]) {
              const double e = samples[static_cast<std::size_t>(s) * c + ch] - mean[ch];
              var += e * e;
            }
          total += var / n;
        }
        cost(y, x, k) = total / c;
      }

  std::vector<Var> parents{ref_feat};
  parents.insert(parents.end(), src_feats.begin(), src_feats.end());
  Var out = ref_feat.tape()->record(
      std::move(cost), parents,
      [ref_feat, src_feats, warpers, hyps, h, w, c, nd, ns](const Grid& value, const Grid& g, std::span<Grid* const> pg) {
        const Grid& rf = ref_feat.value();
        std::vector<double> mean(c), samples(static_cast<std::size_t>(ns) * c);
        std::vector<detail::Tap> taps(ns);
        std::vector<char> valid(ns);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            for (int k = 0; k < nd; ++k) {
              const double go = g(y, x, k);
              if (go == 0.0) continue;
              const double d = hyps.depths(y, x, k);
              int n = 1;
              for (int ch = 0; ch < c; ++ch) mean[ch] = rf(y, x, ch);
              for (int s = 0; s < ns; ++s) {
                const Grid& sf = src_feats[s].value();
                detail::Tap& t = taps[s];
                valid[s] = detail::footprint(warpers[s], x, y, d, sf.height(), sf.width(), t);
                if (!valid[s]) continue;
                ++n;
                for (int ch = 0; ch < c; ++ch) {
                  const double v = t.w00 * sf(t.y0, t.x0, ch) + t.w01 * sf(t.y0, t.x1, ch) +
                                   t.w10 * sf(t.y1, t.x0, ch) + t.w11 * sf(t.y1, t.x1, ch);
                  samples[static_cast<std::size_t>(s) * c + ch] = v;
                  mean[ch] += v;
                }
              }
              if (n < 2) continue;  // sentinel: constant
              const double scale = 2.0 * go / (static_cast<double>(n) * c);
              for (int ch = 0; ch < c; ++ch) mean[ch] /= n;
              if (pg[0])
                for (int ch = 0; ch < c; ++ch) (*pg[0])(y, x, ch) += scale * (rf(y, x, ch) - mean[ch]);
              for (int s = 0; s < ns; ++s) {
                Grid* gs = pg[1 + s];
                if (!valid[s] || !gs) continue;
                const detail::Tap& t = taps[s];
                for (int ch = 0; ch < c; ++ch) {
                  const double e = scale * (samples[static_cast<std::size_t>(s) * c + ch] - mean[ch]);
                  (*gs)(t.y0, t.x0, ch) += e * t.w00;
                  (*gs)(t.y0, t.x1, ch) += e * t.w01;
                  (*gs)(t.y1, t.x0, ch) += e * t.w10;
                  (*gs)(t.y1, t.x1, ch) += e * t.w11;
                }
              }
            }
        (void)value;
      });
  return {out, std::move(flags)};
}

}  // namespace kdmvs::model
