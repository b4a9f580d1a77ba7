#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "subswap/cli.hpp"
#include "subswap/data_pipeline.hpp"
#include "subswap/evalbench.hpp"
#include "subswap/inference.hpp"
#include "subswap/io.hpp"
#include "subswap/latent_codec.hpp"
#include "subswap/training.hpp"

namespace subswap {

namespace {

VideoClip random_clip(Index t, Index h, Index w, Rng& rng) {
  std::uniform_int_distribution<int> level(0, 255);
  Tensor<float> px(Shape{t, 3, h, w});
  for (Index i = 0; i < px.size(); ++i) px.array()(i) = static_cast<float>(level(rng)) / 255.f;
  return VideoClip(std::move(px));
}

MaskSequence random_blob(Index t, Index h, Index w, Rng& rng) {
  std::uniform_int_distribution<Index> py(0, h - 1), px(0, w - 1), ext(1, std::max<Index>(1, h / 3));
  MaskBuilder m(t, h, w);
  const Index y0 = py(rng), x0 = px(rng), eh = ext(rng), ew = ext(rng);
  for (Index f = 0; f < t; ++f)
    for (Index y = y0; y < std::min(h, y0 + eh); ++y)
      for (Index x = x0; x < std::min(w, x0 + ew); ++x) m(f, y, x) = 1;
  return std::move(m).build();
}

bool superset(const MaskSequence& big, const MaskSequence& small) {
  return ((big.tensor().array() != 0) || (small.tensor().array() == 0)).all();
}

}  // namespace

std::vector<SelftestCheck> run_selftest(std::uint64_t seed) {
  std::vector<SelftestCheck> out;
  auto check = [&](const std::string& name, const std::function<std::string()>& body) {
    SelftestCheck c{name, false, ""};
    try {
      c.detail = body();
      c.passed = c.detail.rfind("fail", 0) != 0;
    } catch (const std::exception& e) {
      c.detail = std::string("threw: ") + e.what();
    }
    out.push_back(std::move(c));
  };
  Rng rng(seed);

  check("codec shapes and exact round trip", [&] {
    for (Index t : {1, 5, 9}) {
      const VideoClip v = random_clip(t, 32, 48, rng);
      const LatentBlock z = encode(v);
      if (z.shape() != Shape{latent_frames(t), 768, 4, 6}) return std::string("fail: shape");
      if (!(decode(z) == v)) return std::string("fail: round trip");
    }
    return std::string();
  });

  check("fused input shape and attention count", [&] {
    const Index f = 3, lh = 4, lw = 4;
    Tensor<float> z(Shape{f, 768, lh, lw}), m(Shape{f, 4, lh, lw}), r(Shape{1, 768, lh, lw});
    FusionInputs<float> in{&z, &z, &z, nullptr, &m, &r};
    const auto fused = assemble(in, FusionConfig{});
    const Index forbidden = (!fused.attention).count();
    if (fused.tensor.shape() != Shape{f + 1, 3076, lh, lw}) return std::string("fail: shape");
    if (forbidden != fused.layout.ref_tokens() * fused.layout.video_tokens())
      return std::string("fail: forbidden entries");
    return std::to_string(forbidden) + " forbidden entries";
  });

  check("mask augmentation superset", [&] {
    AugmentConfig cfg;
    for (int i = 0; i < 300; ++i) {
      const MaskSequence m = random_blob(5, 64, 64, rng);
      const auto mode = i % 2 ? AugmentMode::kTrain : AugmentMode::kInference;
      if (!superset(augment(m, mode, cfg, rng).mask, m)) return std::string("fail: case ") + std::to_string(i);
    }
    return std::string("300 cases");
  });

  check("reweighting identities", [&] {
    Tensor<double> l(Shape{2, 768, 2, 2}, 1.0), full(Shape{2, 4, 2, 2}, 1.0), quarter(Shape{2, 4, 2, 2});
    for (Index k = 0; k < 2; ++k)
      for (Index c = 0; c < 4; ++c) quarter(k, c, 0, 0) = 1.0;
    const double a = reweighted_loss(l, full, 1.0).l_final;
    const double b = reweighted_loss(l, quarter, 1.0).l_final;
    if (std::abs(a - 1.0) > 1e-9 || std::abs(b - 1.75) > 1e-9) return std::string("fail");
    return std::string();
  });

  check("segment scheduler", [&] {
    for (Index L : {9, 17})
      for (Index T = 1; T <= 300; ++T) {
        if (T >= 2 && T <= 4) continue;
        const auto segs = schedule_segments(T, L);
        if (segs.front().first != 0 || segs.back().second != T - 1) return std::string("fail: coverage");
        for (std::size_t i = 0; i < segs.size(); ++i) {
          if ((segs[i].second - segs[i].first) % 4 != 0) return std::string("fail: length");
          if (i > 0 && segs[i].first > segs[i - 1].second) return std::string("fail: gap");
        }
      }
    return std::string();
  });

  check("tunnel threshold", [&] {
    MaskBuilder small(1, 40, 40), large(1, 40, 40);
    for (Index i = 0; i < 79; ++i) small(0, i / 40, i % 40) = 1;   // 0.049375
    for (Index i = 0; i < 80; ++i) large(0, i / 40, i % 40) = 1;   // exactly 0.05
    const bool a = plan_tunnel(std::move(small).build(), 40, 40).active;
    const bool b = plan_tunnel(std::move(large).build(), 40, 40).active;
    return a && !b ? std::string() : std::string("fail");
  });

  check("background preservation identity", [&] {
    const VideoClip v = random_clip(5, 32, 32, rng);
    const auto s = background_preservation(v, v, random_blob(5, 32, 32, rng));
    return s && *s == 1.0 ? std::string() : std::string("fail");
  });

  check("tensor file round trip", [&] {
    Tensor<float> t(Shape{2, 3, 4});
    for (Index i = 0; i < t.size(); ++i) t.array()(i) = static_cast<float>(i) * 0.25f - 1.f;
    const auto bytes = encode_vten(t);
    return decode_vten<float>(bytes) == t ? std::string() : std::string("fail");
  });

  check("compositing exactness", [&] {
    SceneSpec spec;
    spec.frames = 9;
    spec.height = 32;
    spec.width = 32;
    const auto recs = generate_scene(seed, spec);
    DenoiserConfig mc;
    mc.dim = 16;
    mc.heads = 2;
    mc.layers = 1;
    mc.time_dim = 8;
    mc.seed = seed;
    const Denoiser<float> model(mc);
    for (const auto& r : recs) {
      if (r.mask.all_empty()) continue;
      SwapRequest req;
      req.clip = *r.clip;
      req.mask = r.mask;
      const Index t0 = [&] {
        for (Index t = 0; t < r.mask.frames(); ++t)
          if (!r.mask.empty_frame(t)) return t;
        return Index{0};
      }();
      req.reference = extract_reference(req.clip, req.mask, t0);
      req.sampler.steps = 2;
      req.sampler.segment_length = 5;
      req.sampler.feather = 0;
      const SwapResult res = run_swap(req, model);
      const auto& o = res.output.tensor();
      const auto& s = req.clip.tensor();
      for (Index t = 0; t < o.dim(0); ++t)
        for (Index y = 0; y < o.dim(2); ++y)
          for (Index x = 0; x < o.dim(3); ++x)
            if (!res.aug_mask(t, y, x))
              for (Index c = 0; c < 3; ++c)
                if (o(t, c, y, x) != s(t, c, y, x)) return std::string("fail: ") + r.clip_id;
    }
    return std::string();
  });

  check("filter matches brute force", [&] {
    std::vector<SubjectRecord> recs;
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 100; ++i) {
      SubjectRecord r;
      r.category = static_cast<Category>(i % 4);
      r.stats = {u(rng), u(rng), u(rng) * 0.1};
      recs.push_back(r);
    }
    const FilterConfig cfg;
    const auto res = filter(recs, cfg);
    std::size_t expect = 0;
    for (const auto& r : recs)
      expect += r.stats.area_ratio >= cfg.a_min && r.stats.area_ratio <= cfg.a_max &&
                r.stats.coverage >= cfg.c_min && r.stats.motion >= cfg.m_min;
    return res.kept.size() == expect ? std::string() : std::string("fail");
  });

  return out;
}

}  // namespace subswap
