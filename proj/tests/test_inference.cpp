#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "subswap/inference.hpp"

using namespace subswap;

namespace {

SwapRequest scene_request(std::uint64_t seed, Index frames, Index size, Category cat) {
  SceneSpec spec;
  spec.frames = frames;
  spec.height = size;
  spec.width = size;
  for (const auto& r : generate_scene(seed, spec)) {
    if (r.category != cat || r.mask.all_empty()) continue;
    SwapRequest req;
    req.clip = *r.clip;
    req.mask = r.mask;
    req.reference = extract_reference(req.clip, req.mask, test::first_subject_frame(req.mask));
    req.seed = seed;
    req.sampler.steps = 2;
    req.sampler.segment_length = 5;
    return req;
  }
  FAIL("scene without the requested subject");
  return {};
}

bool same_outside(const VideoClip& a, const VideoClip& b, const std::function<bool(Index, Index, Index)>& inside) {
  for (Index t = 0; t < a.frames(); ++t)
    for (Index y = 0; y < a.height(); ++y)
      for (Index x = 0; x < a.width(); ++x)
        if (!inside(t, y, x))
          for (Index c = 0; c < 3; ++c)
            if (a(t, c, y, x) != b(t, c, y, x)) return false;
  return true;
}

}  // namespace

TEST_CASE("segment schedule examples") {
  using V = std::vector<Segment>;
  CHECK(schedule_segments(1, 17) == V{{0, 0}});
  CHECK(schedule_segments(17, 17) == V{{0, 16}});
  CHECK(schedule_segments(13, 17) == V{{0, 12}});
  CHECK(schedule_segments(33, 17) == V{{0, 16}, {16, 32}});
  CHECK(schedule_segments(40, 17) == V{{0, 16}, {16, 32}, {31, 39}});
  CHECK(schedule_segments(20, 9) == V{{0, 8}, {8, 16}, {15, 19}});
  for (Index t : {2, 3, 4}) CHECK(schedule_segments(t, 17) == V{{0, 4}});
  CHECK_THROWS_AS(schedule_segments(0, 17), Error);
  for (Index l : {1, 3, 4, 10}) {
    try {
      schedule_segments(17, l);
      FAIL("expected config error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kConfig);
    }
  }
}

TEST_CASE("tunnel planning") {
  MaskBuilder b(1, 64, 64);
  for (Index y = 27; y < 37; ++y)
    for (Index x = 27; x < 37; ++x) b(0, y, x) = 1;
  const Tunnel tn = plan_tunnel(std::move(b).build(), 64, 64, TunnelConfig{});
  CHECK(tn.active);
  CHECK(tn.area_ratio == doctest::Approx(100.0 / 4096.0));
  CHECK(tn.box.width() >= 16);
  CHECK(tn.box.width() <= 24);
  CHECK(tn.box.height() >= 16);
  CHECK(tn.box.height() <= 24);
  CHECK(tn.box.x0 % 8 == 0);
  CHECK(tn.box.x0 <= 27);
  CHECK(tn.box.x1 >= 37);

  const Tunnel big = plan_tunnel(test::moving_rect(1, 64, 64, 0, 0, 32, 32), 64, 64);
  CHECK(!big.active);
  CHECK(big.box == BBox{0, 0, 64, 64});

  // Near a border the snapped box keeps its size by growing inward.
  MaskBuilder corner(1, 64, 64);
  corner(0, 62, 62) = 1;
  const Tunnel c = plan_tunnel(std::move(corner).build(), 64, 64, TunnelConfig{0.05, 1.5, 16});
  CHECK(c.box == BBox{48, 48, 64, 64});
  CHECK_THROWS_AS(plan_tunnel(MaskSequence::zeros(1, 8, 8), 8, 8), Error);
}

TEST_CASE("tunnel threshold is strict") {
  MaskBuilder lo(2, 40, 40), at(2, 40, 40);
  for (Index i = 0; i < 79; ++i) lo(0, i / 40, i % 40) = lo(1, i / 40, i % 40) = 1;
  for (Index i = 0; i < 80; ++i) at(0, i / 40, i % 40) = at(1, i / 40, i % 40) = 1;
  CHECK(plan_tunnel(std::move(lo).build(), 40, 40).active);
  CHECK(!plan_tunnel(std::move(at).build(), 40, 40).active);
}

TEST_CASE("feather alpha") {
  const MaskSequence m = test::moving_rect(1, 32, 32, 8, 8, 16, 16);
  const BBox full{0, 0, 32, 32};
  const Tensor<float> a0 = feather_alpha(m, full, 0);
  for (Index y = 0; y < 32; ++y)
    for (Index x = 0; x < 32; ++x) CHECK(a0(0, y, x) == (m(0, y, x) ? 1.f : 0.f));
  const Tensor<float> a2 = feather_alpha(m, full, 2);
  CHECK(a2(0, 16, 16) == 1.f);
  CHECK(a2(0, 2, 2) == 0.f);
  CHECK(a2(0, 8, 16) == doctest::Approx(3.f / 5.f));  // 3 of 5 rows inside
  CHECK(a2(0, 7, 16) == doctest::Approx(2.f / 5.f));
  CHECK_THROWS_AS(feather_alpha(m, full, -1), Error);
}

TEST_CASE("blend back leaves the outside untouched") {
  Rng rng(1);
  const VideoClip src = test::random_clip(1, 32, 32, rng);
  const MaskSequence m = test::moving_rect(1, 32, 32, 10, 10, 6, 6);
  Tunnel tn;
  tn.box = {8, 8, 24, 24};
  tn.active = true;
  const VideoClip gen = test::random_clip(1, 16, 16, rng);
  const VideoClip hard = blend_back(src, gen, tn, m, 0);
  CHECK(same_outside(hard, src, [&](Index t, Index y, Index x) { return m(t, y, x) != 0; }));
  CHECK(hard(0, 1, 12, 12) == gen(0, 1, 4, 4));
  const VideoClip soft = blend_back(src, gen, tn, m, 3);
  CHECK(same_outside(soft, src, [&](Index, Index y, Index x) {
    return y >= 8 && y < 24 && x >= 8 && x < 24;
  }));
  CHECK(soft(0, 0, 9, 9) != src(0, 0, 9, 9));
  CHECK_THROWS_AS(blend_back(src, test::random_clip(1, 8, 16, rng), tn, m, 0), Error);
}

TEST_CASE("run_swap composites exactly and is deterministic") {
  SwapRequest req = scene_request(11, 13, 32, Category::kHuman);
  req.sampler.feather = 0;
  const Denoiser<float> model(test::tiny_model(1, 2));
  const SwapResult a = run_swap(req, model);
  CHECK(a.output.tensor().shape() == req.clip.tensor().shape());
  CHECK(a.segments == std::vector<Segment>{{0, 4}, {4, 8}, {8, 12}});
  CHECK(test::superset(a.aug_mask, req.mask));
  CHECK(same_outside(a.output, req.clip, [&](Index t, Index y, Index x) { return a.aug_mask(t, y, x) != 0; }));
  CHECK(!(a.output == req.clip));
  const SwapResult b = run_swap(req, model);
  CHECK(a.output == b.output);
  CHECK(a.report.at("segments").size() == 3);
  CHECK(a.report.contains("timings"));

  req.sampler.feather = 4;
  const SwapResult f = run_swap(req, model);
  const BBox box = f.tunnel.box;
  CHECK(same_outside(f.output, req.clip, [&](Index, Index y, Index x) {
    return y >= box.y0 && y < box.y1 && x >= box.x0 && x < box.x1;
  }));
}

TEST_CASE("small subjects go through the tunnel") {
  SwapRequest req = scene_request(12, 5, 64, Category::kSmallObject);
  const Denoiser<float> model(test::tiny_model(1, 3));
  const SwapResult r = run_swap(req, model);
  CHECK(r.tunnel.active);
  CHECK(r.tunnel.box.width() % 16 == 0);
  CHECK(r.tunnel.box.width() < 64);
  CHECK(r.report.at("tunnel").at("active") == true);
  req.sampler.use_tunnel = false;
  CHECK(!run_swap(req, model).tunnel.active);
}

TEST_CASE("short clips are padded and trimmed") {
  SwapRequest req = scene_request(13, 5, 32, Category::kHuman);
  req.clip = VideoClip(slice_leading(req.clip.tensor(), 0, 3));
  req.mask = MaskSequence(slice_leading(req.mask.tensor(), 0, 3));
  const SwapResult r = run_swap(req, Denoiser<float>(test::tiny_model()));
  CHECK(r.output.frames() == 3);
  CHECK(r.aug_mask.frames() == 3);
  CHECK(r.report.at("padded_frames") == 2);
}

TEST_CASE("first-frame override changes the result") {
  SwapRequest req = scene_request(14, 5, 32, Category::kHuman);
  Denoiser<float> model(test::tiny_model());
  Rng rng(3);
  std::normal_distribution<float> n(0.f, 0.5f);
  model.params().visit([&](const std::string&, Mat<float>& w, bool) {
    for (Index i = 0; i < w.size(); ++i) w.data()[i] += n(rng);
  });
  const SwapResult plain = run_swap(req, model);
  req.first_frame_override = Tensor<float>(Shape{3, 32, 32}, 1.f);
  const SwapResult edited = run_swap(req, model);
  CHECK(!(plain.output == edited.output));
  req.first_frame_override = Tensor<float>(Shape{3, 16, 32}, 1.f);
  CHECK_THROWS_AS(run_swap(req, model), Error);
}

TEST_CASE("invalid requests") {
  SwapRequest req = scene_request(15, 5, 32, Category::kHuman);
  const Denoiser<float> model(test::tiny_model());
  SwapRequest empty = req;
  empty.mask = MaskSequence::zeros(5, 32, 32);
  try {
    run_swap(empty, model);
    FAIL("expected no subject");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNoSubject);
  }
  SwapRequest bad = req;
  bad.sampler.segment_length = 6;
  CHECK_THROWS_AS(run_swap(bad, model), Error);
  try {
    run_swap(req, Denoiser<float>());
    FAIL("expected missing weights");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMissingWeights);
  }
}

TEST_CASE("masked psnr") {
  const VideoClip a = VideoClip::zeros(1, 8, 8);
  Tensor<float> bt(Shape{1, 3, 8, 8}, 0.1f);
  const VideoClip b(bt);
  const MaskSequence m = test::moving_rect(1, 8, 8, 0, 0, 4, 4);
  CHECK(masked_psnr(a, b, m) == doctest::Approx(20.0).epsilon(1e-5));
  CHECK(std::isinf(masked_psnr(a, a, m)));
  CHECK_THROWS_AS(masked_psnr(a, b, MaskSequence::zeros(1, 8, 8)), Error);
}
