#pragma once

#include <random>

#include "subswap/data_pipeline.hpp"
#include "subswap/denoiser.hpp"
#include "subswap/mask_augment.hpp"
#include "subswap/types.hpp"

namespace subswap::test {

inline VideoClip random_clip(Index t, Index h, Index w, Rng& rng) {
  std::uniform_int_distribution<int> level(0, 255);
  Tensor<float> px(Shape{t, 3, h, w});
  for (Index i = 0; i < px.size(); ++i) px.array()(i) = static_cast<float>(level(rng)) / 255.f;
  return VideoClip(std::move(px));
}

// Axis-aligned rectangle drifting one pixel right per frame.
inline MaskSequence moving_rect(Index t, Index h, Index w, Index y0, Index x0, Index rh, Index rw) {
  MaskBuilder m(t, h, w);
  for (Index f = 0; f < t; ++f)
    for (Index y = y0; y < std::min(h, y0 + rh); ++y)
      for (Index x = x0 + f; x < std::min(w, x0 + f + rw); ++x) m(f, y, x) = 1;
  return std::move(m).build();
}

// Random union of blobs, possibly with empty frames.
inline MaskSequence random_mask(Index t, Index h, Index w, Rng& rng) {
  std::uniform_int_distribution<Index> py(0, h - 1), px(0, w - 1), ext(1, std::max<Index>(1, h / 2));
  std::uniform_int_distribution<int> blobs(1, 3);
  std::bernoulli_distribution drop(0.1);
  MaskBuilder m(t, h, w);
  const int n = blobs(rng);
  for (int b = 0; b < n; ++b) {
    const Index y0 = py(rng), x0 = px(rng), eh = ext(rng), ew = ext(rng);
    for (Index f = 0; f < t; ++f) {
      if (drop(rng)) continue;
      for (Index y = y0; y < std::min(h, y0 + eh); ++y)
        for (Index x = x0; x < std::min(w, x0 + ew); ++x) m(f, y, x) = 1;
    }
  }
  return std::move(m).build();
}

inline bool superset(const MaskSequence& big, const MaskSequence& small) {
  return ((big.tensor().array() != 0) || (small.tensor().array() == 0)).all();
}

inline DenoiserConfig tiny_model(Index layers = 1, std::uint64_t seed = 7) {
  DenoiserConfig c;
  c.dim = 12;
  c.heads = 2;
  c.layers = layers;
  c.time_dim = 8;
  c.seed = seed;
  return c;
}

inline Index first_subject_frame(const MaskSequence& m) {
  for (Index t = 0; t < m.frames(); ++t)
    if (!m.empty_frame(t)) return t;
  return 0;
}

}  // namespace subswap::test

#include "subswap/condition_fusion.hpp"

namespace subswap::test {

// Random streams with `c` latent channels, assembled into a fused input.
template <typename S>
FusedInput<S> random_fused(Index f, Index c, Index lh, Index lw, Rng& rng,
                           DummySource dummy = DummySource::kClean) {
  std::normal_distribution<double> n(0.0, 1.0);
  auto fill = [&](Shape shape) {
    Tensor<S> t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t.array()(i) = S(n(rng));
    return t;
  };
  const Tensor<S> noisy = fill({f, c, lh, lw}), clean = fill({f, c, lh, lw}),
                  agn = fill({f, c, lh, lw}), pose = fill({f, c, lh, lw}),
                  ref = fill({1, c, lh, lw});
  Tensor<S> mask(Shape{f, 4, lh, lw});
  std::bernoulli_distribution b(0.3);
  for (Index i = 0; i < mask.size(); ++i) mask.array()(i) = b(rng) ? S(1) : S(0);
  FusionInputs<S> in{&noisy, &clean, &agn, &pose, &mask, &ref};
  return assemble(in, FusionConfig{dummy, 2});
}

}  // namespace subswap::test

#include "subswap/training.hpp"

namespace subswap::test {

// Synthetic training sample over a random fused input; the subject mask is
// the mask group broadcast over latent channels.
template <typename S>
TrainingSample<S> random_sample(Index f, Index c, Index lh, Index lw, Rng& rng, double lambda = 2.0) {
  TrainingSample<S> s;
  s.fused = random_fused<S>(f, c, lh, lw, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor<S> mask(Shape{f + 1, 4, lh, lw});
  for (Index k = 1; k <= f; ++k)
    for (Index ch = 0; ch < 4; ++ch)
      for (Index y = 0; y < lh; ++y)
        for (Index x = 0; x < lw; ++x)
          mask(k, ch, y, x) = s.fused.tensor(k, s.fused.groups.mask() + ch, y, x);
  s.subject = broadcast_mask(mask, c);
  const LossWeights<S> w = loss_weights(s.subject, s.fused.loss_mask, lambda);
  s.weights = w.w;
  s.e = w.e;
  s.e_s = w.e_s;
  s.target = Tensor<S>(Shape{f + 1, c, lh, lw});
  for (Index i = 0; i < s.target.size(); ++i) s.target.array()(i) = S(n(rng));
  s.t = S(0.37);
  return s;
}

inline DenoiserConfig tiny_model_channels(Index channels, Index layers = 1, std::uint64_t seed = 7) {
  DenoiserConfig c = tiny_model(layers, seed);
  c.latent_channels = channels;
  return c;
}

}  // namespace subswap::test
