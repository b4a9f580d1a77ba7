#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "subswap/denoiser.hpp"

using namespace subswap;

namespace {

// Randomizes every parameter, including the zero-initialised skip gates.
template <typename S>
void scramble(Denoiser<S>& m, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  m.params().visit([&](const std::string&, Mat<S>& w, bool) {
    for (Index i = 0; i < w.size(); ++i) w.data()[i] += S(n(rng));
  });
}

}  // namespace

TEST_CASE("forward output shape and zero skip at init") {
  Rng rng(1);
  const auto fused = test::random_fused<double>(3, 8, 4, 4, rng);
  const Denoiser<double> m(test::tiny_model_channels(8, 2));
  const Tensor<double> y = m.forward(fused, 0.5);
  CHECK(y.shape() == Shape{4, 8, 4, 4});
  CHECK(m.params().skip_w.isZero());
  CHECK(y.array().abs().maxCoeff() < 1.0);
}

TEST_CASE("reference outputs ignore video tokens; video outputs see the reference") {
  Rng rng(2);
  auto fused = test::random_fused<double>(2, 8, 4, 4, rng);
  Denoiser<double> m(test::tiny_model_channels(8, 2));
  scramble(m, 3);
  const Tensor<double> base = m.forward(fused, 0.4);
  const Index per = fused.tensor.stride(0);
  auto perturbed = fused;
  perturbed.tensor.array().segment(per, per) += 0.5;  // fused frame 1 only
  const Tensor<double> y1 = m.forward(perturbed, 0.4);
  CHECK((y1.slab(0) - base.slab(0)).cwiseAbs().maxCoeff() == doctest::Approx(0.0));

  auto ref_changed = fused;
  ref_changed.tensor.array().segment(0, per) += 0.5;
  const Tensor<double> y2 = m.forward(ref_changed, 0.4);
  CHECK((y2.slab(1) - base.slab(1)).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("full attention lets the reference see the video") {
  Rng rng(3);
  auto fused = test::random_fused<double>(2, 8, 4, 4, rng);
  fused.attention = full_attention_mask(fused.layout);
  Denoiser<double> m(test::tiny_model_channels(8, 1));
  scramble(m, 4);
  const Tensor<double> base = m.forward(fused, 0.4);
  auto p = fused;
  p.tensor.array().segment(p.tensor.stride(0), p.tensor.stride(0)) += 0.5;
  CHECK((m.forward(p, 0.4).slab(0) - base.slab(0)).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("cached reference path matches the full forward on video frames") {
  Rng rng(4);
  const auto fused = test::random_fused<double>(3, 8, 4, 6, rng);
  Denoiser<double> m(test::tiny_model_channels(8, 2));
  scramble(m, 5);
  const auto cache = m.build_ref_cache(fused);
  for (double t : {0.0, 0.3, 1.0}) {
    const Tensor<double> full = m.forward(fused, t);
    const Tensor<double> vid = m.forward_video(fused, t, cache);
    REQUIRE(vid.dim(0) == 3);
    for (Index k = 0; k < 3; ++k)
      CHECK((vid.slab(k) - full.slab(k + 1)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("analytic input gradient matches finite differences") {
  Rng rng(5);
  auto fused = test::random_fused<double>(2, 8, 2, 2, rng);
  Denoiser<double> m(test::tiny_model_channels(8, 2));
  scramble(m, 6);
  Tensor<double> w(Shape{3, 8, 2, 2});
  std::normal_distribution<double> n(0.0, 1.0);
  for (Index i = 0; i < w.size(); ++i) w.array()(i) = n(rng);
  auto loss = [&](const FusedInput<double>& f) { return (m.forward(f, 0.6).array() * w.array()).sum(); };
  Denoiser<double>::Tape tape;
  m.forward(fused, 0.6, &tape);
  auto grad = m.params().zeros_like();
  const Mat<double> dx = m.backward(tape, w, grad, true);
  const Mat<double> x = tokenize(fused.tensor, 2);
  std::uniform_int_distribution<Index> row(0, x.rows() - 1), col(0, x.cols() - 1);
  double worst = 0;
  for (int i = 0; i < 40; ++i) {
    const Index r = row(rng);
    Index c = col(rng);
    if (i % 4 == 0) c = i / 4;  // include noisy-group features
    Mat<double> xp = x, xm = x;
    xp(r, c) += 1e-5;
    xm(r, c) -= 1e-5;
    auto fp = fused, fm = fused;
    fp.tensor = untokenize(xp, 3, fused.tensor.dim(1), 2, 2, 2);
    fm.tensor = untokenize(xm, 3, fused.tensor.dim(1), 2, 2, 2);
    const double num = (loss(fp) - loss(fm)) / 2e-5;
    worst = std::max(worst, std::abs(num - dx(r, c)) / std::max(1e-6, std::abs(num) + std::abs(dx(r, c))));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("tokenize and untokenize are inverse") {
  Rng rng(6);
  const auto fused = test::random_fused<double>(2, 8, 4, 6, rng);
  const Mat<double> x = tokenize(fused.tensor, 2);
  CHECK(x.rows() == 3 * 2 * 3);
  CHECK(x.cols() == fused.tensor.dim(1) * 4);
  CHECK(untokenize(x, 3, fused.tensor.dim(1), 4, 6, 2) == fused.tensor);
}

TEST_CASE("sinusoidal features") {
  const Row<double> phi = time_features<double>(0.0, 8);
  for (Index i = 0; i < 4; ++i) {
    CHECK(phi(i) == 0.0);
    CHECK(phi(4 + i) == 1.0);
  }
  const TokenLayout lay(3, 2, 2, 1);
  const Mat<double> pos = positional_table<double>(lay, 12);
  // Reference frame at temporal position -1, first video frame at 0.
  CHECK(pos(0, 0) == doctest::Approx(std::sin(-1.0)));
  CHECK(pos(4, 0) == doctest::Approx(0.0));
  CHECK(pos(4, 1) == doctest::Approx(1.0));
  // Reference and video tokens share the spatial encoding.
  CHECK(pos.row(1).segment(4, 8) == pos.row(5).segment(4, 8));
}

TEST_CASE("deterministic init, cast and shape checks") {
  const Denoiser<float> a(test::tiny_model(2, 11)), b(test::tiny_model(2, 11)), c(test::tiny_model(2, 12));
  CHECK(a.params().w_in == b.params().w_in);
  CHECK(a.params().w_in != c.params().w_in);
  const Denoiser<double> d = a.cast<double>();
  CHECK(d.params().parameter_count() == a.params().parameter_count());
  Rng rng(7);
  const auto fused = test::random_fused<double>(2, 16, 2, 2, rng);
  const Denoiser<double> m(test::tiny_model_channels(8));
  CHECK_THROWS_AS(m.forward(fused, 0.5), Error);
  DenoiserConfig bad = test::tiny_model();
  bad.heads = 5;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("self-attention parameters are flagged") {
  Denoiser<float> m(test::tiny_model(2));
  Index attn = 0, total = 0;
  m.params().visit([&](const std::string& name, Mat<float>&, bool is_attn) {
    ++total;
    if (is_attn) {
      ++attn;
      CHECK(name.rfind("block", 0) == 0);
    }
  });
  CHECK(attn == 16);
  CHECK(total == 6 + 16 * 2 + 6);
}
