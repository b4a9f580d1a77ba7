#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"
#include "subswap/training.hpp"

using namespace subswap;

namespace {

std::vector<SubjectRecord> small_scenes(int n, Index frames = 9, Index size = 32) {
  SceneSpec spec;
  spec.frames = frames;
  spec.height = size;
  spec.width = size;
  std::vector<SubjectRecord> out;
  for (int i = 0; i < n; ++i)
    for (auto& r : generate_scene(100 + static_cast<std::uint64_t>(i), spec))
      if (!r.mask.all_empty()) out.push_back(std::move(r));
  return out;
}

ReferenceImage flat_reference(float v) {
  ReferenceImage r;
  r.image = Tensor<float>(Shape{3, 6, 8}, v);
  r.alpha = Tensor<std::uint8_t>(Shape{6, 8}, std::uint8_t{1});
  for (Index y = 0; y < 6; ++y)
    for (Index x = 0; x < 8; ++x) r.image(0, y, x) = static_cast<float>(x) / 8.f;
  return r;
}

}  // namespace

TEST_CASE("flow target endpoints") {
  Rng rng(1);
  const auto x0 = test::random_fused<double>(1, 2, 2, 2, rng).tensor;
  Tensor<double> noise(x0.shape(), 0.25);
  const auto a = flow_target(x0, noise, 0.0);
  const auto b = flow_target(x0, noise, 1.0);
  CHECK(a.x_t == x0);
  CHECK(b.x_t == noise);
  for (Index i = 0; i < x0.size(); ++i) CHECK(a.target.array()(i) == 0.25 - x0.array()(i));
  const auto m = flow_target(x0, noise, 0.5);
  CHECK(m.x_t.array()(3) == doctest::Approx(0.5 * x0.array()(3) + 0.125));
}

TEST_CASE("model space mapping") {
  Tensor<float> z(Shape{1, 1, 1, 3});
  z(0, 0, 0, 0) = 0.f;
  z(0, 0, 0, 1) = 0.5f;
  z(0, 0, 0, 2) = 1.f;
  const auto m = to_model_space(z);
  CHECK(m(0, 0, 0, 0) == -1.f);
  CHECK(m(0, 0, 0, 1) == 0.f);
  CHECK(m(0, 0, 0, 2) == 1.f);
  CHECK(from_model_space(m) == z);
}

TEST_CASE("mask broadcast follows the temporal slot of each channel") {
  Tensor<float> m(Shape{1, 4, 1, 1});
  m(0, 2, 0, 0) = 1.f;
  const Tensor<float> b = broadcast_mask(m, 768);
  for (Index c = 0; c < 768; ++c) CHECK(b(0, c, 0, 0) == ((c / 64) % 4 == 2 ? 1.f : 0.f));
}

TEST_CASE("reweighted loss equals the direct-summation oracle") {
  Rng rng(2);
  std::uniform_real_distribution<double> u(0, 2);
  std::bernoulli_distribution b(0.2);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> l(Shape{3, 768, 2, 3}), m(Shape{3, 4, 2, 3});
    for (Index i = 0; i < l.size(); ++i) l.array()(i) = u(rng);
    for (Index i = 0; i < m.size(); ++i) m.array()(i) = b(rng) ? 1.0 : 0.0;
    const double lambda = 0.5 * trial;
    const std::vector<bool> keep{false, true, true};
    const auto got = reweighted_loss(l, m, lambda, keep);
    double e = 0, es = 0, in = 0, out = 0;
    for (Index k = 1; k < 3; ++k)
      for (Index c = 0; c < 768; ++c)
        for (Index y = 0; y < 2; ++y)
          for (Index x = 0; x < 3; ++x) {
            const bool s = m(k, (c / 64) % 4, y, x) != 0.0;
            e += 1;
            es += s;
            (s ? in : out) += l(k, c, y, x);
          }
    const double expect = es > 0 ? out / e + lambda * in / es : (in + out) / e;
    CHECK(got.l_final == doctest::Approx(expect).epsilon(1e-12));
    CHECK(got.e == static_cast<Index>(e));
    CHECK(got.e_s == static_cast<Index>(es));
  }
}

TEST_CASE("reweighting identities") {
  Tensor<double> ones(Shape{2, 768, 2, 2}, 1.0), full(Shape{2, 4, 2, 2}, 1.0), empty(Shape{2, 4, 2, 2});
  Rng rng(3);
  Tensor<double> l(ones.shape());
  std::uniform_real_distribution<double> u(0, 3);
  for (Index i = 0; i < l.size(); ++i) l.array()(i) = u(rng);
  CHECK(reweighted_loss(l, full, 1.0).l_final == doctest::Approx(l.array().mean()).epsilon(1e-12));
  CHECK(reweighted_loss(l, empty, 5.0).l_final == doctest::Approx(l.array().mean()).epsilon(1e-12));
  CHECK(reweighted_loss(l, full, 0.0).l_final == 0.0);
  CHECK_THROWS_AS(reweighted_loss(l, full, -1.0), Error);
  Tensor<double> neg = ones;
  neg.array()(0) = -1.0;
  CHECK_THROWS_AS(reweighted_loss(neg, full, 1.0), Error);
}

TEST_CASE("sample loss gradient") {
  Rng rng(4);
  auto s = test::random_sample<double>(2, 8, 2, 2, rng);
  Tensor<double> pred = s.target;
  std::normal_distribution<double> n(0, 1);
  for (Index i = 0; i < pred.size(); ++i) pred.array()(i) += n(rng);
  Tensor<double> d;
  sample_loss(pred, s.target, s.weights, &d);
  for (Index i = 0; i < pred.stride(0); ++i) CHECK(d.array()(i) == 0.0);  // reference frame
  for (Index i : {pred.stride(0), pred.size() - 1}) {
    Tensor<double> p = pred, m = pred;
    p.array()(i) += 1e-6;
    m.array()(i) -= 1e-6;
    const double num = (sample_loss(p, s.target, s.weights) - sample_loss(m, s.target, s.weights)) / 2e-6;
    CHECK(d.array()(i) == doctest::Approx(num).epsilon(1e-6));
  }
}

TEST_CASE("reference augmentation examples") {
  const ReferenceImage r = flat_reference(0.5f);
  const ReferenceImage same = augment_reference(r, ReferenceAugmentParams{});
  CHECK(same.image == r.image);
  CHECK(*same.alpha == *r.alpha);
  ReferenceAugmentParams flip;
  flip.flip = true;
  const ReferenceImage once = augment_reference(r, flip);
  CHECK(once.image(0, 0, 0) == r.image(0, 0, 7));
  CHECK(augment_reference(once, flip).image == r.image);
  ReferenceAugmentParams bright;
  bright.brightness = 0.2f;
  const ReferenceImage lit = augment_reference(r, bright);
  CHECK(lit.image(1, 3, 3) == doctest::Approx(0.7f));
  ReferenceAugmentConfig cfg;
  cfg.scale_min = 0.f;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("prepared samples are consistent") {
  const auto recs = small_scenes(2);
  REQUIRE(!recs.empty());
  TrainConfig cfg;
  cfg.lambda = 2.0;
  Rng rng(5);
  int made = 0;
  for (const auto& r : recs) {
    const auto s = prepare_sample(r, cfg, AugmentConfig{}, 2, rng);
    if (!s) continue;
    ++made;
    CHECK(s->fused.tensor.shape() == Shape{4, 3076, 4, 4});
    CHECK(s->target.shape() == Shape{4, 768, 4, 4});
    CHECK(s->weights.slab(0).isZero());
    CHECK(s->e == 3 * 768 * 16);
    const double total = s->weights.array().template cast<double>().sum();
    const double expect = s->e_s > 0 ? double(s->e - s->e_s) / double(s->e) + cfg.lambda : 1.0;
    CHECK(total == doctest::Approx(expect).epsilon(1e-4));
    CHECK(!r.mask.empty_frame(s->frame_index));
    CHECK(s->t >= 0.f);
    CHECK(s->t <= 1.f);
  }
  CHECK(made > 0);
}

TEST_CASE("initial loss is close to the zero-velocity loss") {
  const auto recs = small_scenes(3);
  DenoiserConfig mc = test::tiny_model(2);
  mc.dim = 32;
  mc.heads = 4;
  const Denoiser<float> model(mc);
  Rng rng(6);
  double init = 0, zero = 0;
  for (const auto& r : recs) {
    const auto s = prepare_sample(r, TrainConfig{}, AugmentConfig{}, 2, rng);
    if (!s) continue;
    init += sample_loss(model.forward(s->fused, s->t), s->target, s->weights);
    zero += sample_loss(Tensor<float>(s->target.shape()), s->target, s->weights);
  }
  REQUIRE(zero > 0);
  CHECK(std::abs(init / zero - 1.0) <= 0.2);
}

TEST_CASE("identical seeds give identical weight deltas") {
  const auto recs = small_scenes(2);
  TrainConfig cfg;
  cfg.batch = 2;
  const DenoiserConfig mc = test::tiny_model(1, 3);
  TrainState a = init_train_state(mc, cfg, 9), b = init_train_state(mc, cfg, 9);
  for (int i = 0; i < 2; ++i) {
    training_step(recs, a, cfg, AugmentConfig{});
    training_step(recs, b, cfg, AugmentConfig{});
  }
  CHECK(a.model.params().w_in == b.model.params().w_in);
  CHECK(a.model.params().skip_w == b.model.params().skip_w);
  CHECK(a.step == 2);
  TrainState c = init_train_state(mc, cfg, 10);
  training_step(recs, c, cfg, AugmentConfig{});
  training_step(recs, c, cfg, AugmentConfig{});
  CHECK(a.model.params().w_out != c.model.params().w_out);
}

TEST_CASE("self-attention-only training freezes everything else") {
  const auto recs = small_scenes(1);
  TrainConfig cfg;
  cfg.batch = 2;
  cfg.trainable = Trainable::kSelfAttention;
  TrainState s = init_train_state(test::tiny_model(1), cfg, 1);
  const auto before = s.model.params();
  training_step(recs, s, cfg, AugmentConfig{});
  auto after = s.model.params();
  auto copy = before;
  copy.zip(after, [](const std::string& name, Mat<float>& old, Mat<float>& now, bool attn) {
    if (attn && name.find(".w") != std::string::npos)
      CHECK(old != now);
    else if (!attn)
      CHECK(old == now);
  });
}

TEST_CASE("empty subject frames are skipped") {
  SubjectRecord r = small_scenes(1).front();
  r.mask = MaskSequence::zeros(r.mask.frames(), r.mask.height(), r.mask.width());
  TrainConfig cfg;
  cfg.batch = 3;
  TrainState s = init_train_state(test::tiny_model(), cfg, 1);
  const auto w = s.model.params().w_in;
  const StepReport rep = training_step_on({&r, &r, &r}, s, cfg, AugmentConfig{});
  CHECK(rep.skipped == 3);
  CHECK(rep.used == 0);
  CHECK(s.skipped == 3);
  CHECK(s.model.params().w_in == w);
}

TEST_CASE("first optimizer step moves each coordinate by about the learning rate") {
  DenoiserParams<float> p = Denoiser<float>(test::tiny_model()).params();
  RmsProp opt(p, 0.999, 1e-8);
  auto g = p.zeros_like();
  g.w_in.setConstant(0.3f);
  g.b_in.setConstant(-2.f);
  const auto before = p;
  opt.step(p, g, 1e-2, Trainable::kAll);
  CHECK((before.w_in - p.w_in).maxCoeff() == doctest::Approx(1e-2).epsilon(1e-4));
  CHECK((p.b_in - before.b_in).minCoeff() == doctest::Approx(1e-2).epsilon(1e-4));
  CHECK(p.t_w1 == before.t_w1);
  CHECK(opt.steps() == 1);
}

TEST_CASE("gradient check on a one-layer model") {
  Rng rng(7);
  auto s = test::random_sample<double>(2, 8, 4, 4, rng);
  Denoiser<double> m(test::tiny_model_channels(8, 1));
  std::normal_distribution<double> n(0.0, 0.2);
  m.params().visit([&](const std::string&, Mat<double>& w, bool) {
    for (Index i = 0; i < w.size(); ++i) w.data()[i] += n(rng);
  });
  const auto r4 = grad_check(m, s, 1e-4, 1);
  CHECK(r4.coordinates == 64);
  CHECK(r4.max_rel_error <= 1e-3);
  // Truncation error grows with the step.
  const auto r3 = grad_check(m, s, 1e-3, 1);
  const auto r2 = grad_check(m, s, 1e-2, 1);
  CHECK(r2.max_abs_error > r3.max_abs_error);
  CHECK(r3.max_abs_error > r4.max_abs_error);
  CHECK_THROWS_AS(grad_check(m, s, 1e-1, 1), Error);
}

TEST_CASE("reference-frame predictions receive no gradient") {
  Rng rng(8);
  auto s = test::random_sample<double>(2, 8, 2, 2, rng);
  const Denoiser<double> m(test::tiny_model_channels(8));
  const Tensor<double> pred = m.forward(s.fused, s.t);
  Tensor<double> d;
  sample_loss(pred, s.target, s.weights, &d);
  CHECK(d.slab(0).isZero());
  CHECK(!d.slab(1).isZero());
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "subswap_ckpt_test";
  std::filesystem::remove_all(dir);
  const Denoiser<float> m(test::tiny_model(2, 21));
  save_checkpoint(dir, m, 17, {{"note", "x"}});
  CheckpointMeta meta;
  const Denoiser<float> back = load_checkpoint(dir, &meta);
  CHECK(meta.step == 17);
  CHECK(meta.extra.at("note") == "x");
  CHECK(back.params().w_in == m.params().w_in);
  CHECK(back.params().blocks[1].w2 == m.params().blocks[1].w2);
  std::filesystem::remove(dir / "weights" / "lnf_g.vten");
  try {
    load_checkpoint(dir);
    FAIL("expected missing weights");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMissingWeights);
  }
  try {
    load_checkpoint(dir / "nowhere");
    FAIL("expected missing weights");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMissingWeights);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("loss csv") {
  std::vector<StepReport> h(2);
  h[1].l_final = 0.5;
  const std::string csv = loss_csv(h);
  CHECK(csv.rfind("step,l_final", 0) == 0);
  CHECK(csv.find("\n1,0.5,") != std::string::npos);
}
