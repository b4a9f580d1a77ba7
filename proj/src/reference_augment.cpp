#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/LU>

#include "subswap/resample.hpp"
#include "subswap/training.hpp"

namespace subswap {

ReferenceImage warp_reference(const ReferenceImage& src, const AffineMap& m, Index out_h,
                              Index out_w) {
  src.validate();
  const Index sh = src.height(), sw = src.width();
  auto alpha_at = [&](Index y, Index x) -> float {
    if (y < 0 || x < 0 || y >= sh || x >= sw) return 0.f;
    return (!src.alpha || (*src.alpha)(y, x)) ? 1.f : 0.f;
  };
  ReferenceImage out;
  out.image = Tensor<float>(Shape{kPixelChannels, out_h, out_w});
  out.alpha = Tensor<std::uint8_t>(Shape{out_h, out_w}, std::uint8_t{0});
  for (Index y = 0; y < out_h; ++y)
    for (Index x = 0; x < out_w; ++x) {
      const Eigen::Vector3f p{static_cast<float>(x) + 0.5f, static_cast<float>(y) + 0.5f, 1.f};
      const Eigen::Vector2f q = m * p;
      const float u = q.x() - 0.5f, v = q.y() - 0.5f;
      const float fu = std::floor(u), fv = std::floor(v);
      const Index x0 = static_cast<Index>(fu), y0 = static_cast<Index>(fv);
      if (x0 < -1 || y0 < -1 || x0 >= sw || y0 >= sh) continue;
      const float ax = u - fu, ay = v - fv;
      const float wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      const Index ys[4] = {y0, y0, y0 + 1, y0 + 1};
      const Index xs[4] = {x0, x0 + 1, x0, x0 + 1};
      float a = 0.f;
      float col[3] = {0.f, 0.f, 0.f};
      for (int i = 0; i < 4; ++i) {
        if (wts[i] == 0.f) continue;
        const float ai = alpha_at(ys[i], xs[i]);
        if (ai == 0.f) continue;
        a += wts[i] * ai;
        for (Index c = 0; c < 3; ++c) col[c] += wts[i] * src.image(c, ys[i], xs[i]);
      }
      if (a < 0.5f) continue;
      (*out.alpha)(y, x) = 1;
      for (Index c = 0; c < 3; ++c) out.image(c, y, x) = std::clamp(col[c] / a, 0.f, 1.f);
    }
  return out;
}

ReferenceImage augment_reference(const ReferenceImage& ref, const ReferenceAugmentParams& p) {
  ref.validate();
  const Index h = ref.height(), w = ref.width();
  const float cx = 0.5f * static_cast<float>(w), cy = 0.5f * static_cast<float>(h);
  // Forward map: centre, flip, rotate, scale, recentre. We need its inverse.
  const float c = std::cos(p.rotation), s = std::sin(p.rotation);
  Eigen::Matrix2f fwd;
  fwd << c, -s, s, c;
  fwd *= p.scale;
  if (p.flip) fwd.col(0) = -fwd.col(0);
  const Eigen::Matrix2f inv = fwd.inverse();
  AffineMap m;
  m.leftCols<2>() = inv;
  m.col(2) = Eigen::Vector2f{cx, cy} - inv * Eigen::Vector2f{cx, cy};
  if (p.flip && p.scale == 1.f && p.rotation == 0.f) {
    // Pure mirror: exact index reversal keeps flips involutive.
    m << -1.f, 0.f, static_cast<float>(w), 0.f, 1.f, 0.f;
  }
  ReferenceImage out = (p.scale == 1.f && p.rotation == 0.f && !p.flip)
                           ? ref
                           : warp_reference(ref, m, h, w);
  if (!out.alpha) out.alpha = Tensor<std::uint8_t>(Shape{h, w}, std::uint8_t{1});
  if (p.brightness != 0.f) {
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        if (!(*out.alpha)(y, x)) continue;
        for (Index ch = 0; ch < 3; ++ch)
          out.image(ch, y, x) = std::clamp(out.image(ch, y, x) + p.brightness, 0.f, 1.f);
      }
  }
  return out;
}

ReferenceAugmentParams sample_reference_augment(const ReferenceAugmentConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> log_scale(std::log(cfg.scale_min), std::log(cfg.scale_max));
  std::uniform_real_distribution<double> rot(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> bright(-cfg.max_brightness, cfg.max_brightness);
  ReferenceAugmentParams p;
  p.scale = static_cast<float>(std::exp(log_scale(rng)));
  p.rotation = static_cast<float>(rot(rng) * std::numbers::pi / 180.0);
  p.flip = unit(rng) < cfg.flip_prob;
  p.brightness = static_cast<float>(bright(rng));
  return p;
}

ReferenceImage augment_reference(const ReferenceImage& ref, const ReferenceAugmentConfig& cfg,
                                 Rng& rng, ReferenceAugmentParams* used) {
  // Resample until at least one subject pixel survives.
  for (int attempt = 0; attempt < 16; ++attempt) {
    const ReferenceAugmentParams p = sample_reference_augment(cfg, rng);
    ReferenceImage out = augment_reference(ref, p);
    if ((out.alpha->array() != 0).any()) {
      if (used) *used = p;
      return out;
    }
  }
  if (used) *used = ReferenceAugmentParams{};
  return ref;
}

}  // namespace subswap
