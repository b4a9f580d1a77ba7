#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "subswap/condition_fusion.hpp"
#include "subswap/tensor.hpp"

namespace subswap {

enum class Trainable { kAll, kSelfAttention };

struct DenoiserConfig {
  Index dim = 128;
  Index layers = 4;
  Index heads = 4;
  Index patch = 2;
  Index time_dim = 128;
  Index latent_channels = CodecSpec::kLatentChannels;
  std::uint64_t seed = 0;

  Index fused_channels() const { return 4 * latent_channels + CodecSpec::kTemporal; }
  Index token_in() const { return fused_channels() * patch * patch; }
  Index token_out() const { return latent_channels * patch * patch; }
  Index hidden() const { return 4 * dim; }
  void validate() const;
  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);
};

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Row = Eigen::Matrix<S, 1, Eigen::Dynamic>;

template <typename S>
struct BlockParams {
  Mat<S> ln1_g, ln1_b, wq, wk, wv, wo, bq, bk, bv, bo;
  Mat<S> ln2_g, ln2_b, w1, b1, w2, b2;
};

/// Every weight is a dense matrix; biases and gains are 1 x n rows.
template <typename S>
struct DenoiserParams {
  Mat<S> w_in, b_in;
  Mat<S> t_w1, t_b1, t_w2, t_b2;
  std::vector<BlockParams<S>> blocks;
  Mat<S> lnf_g, lnf_b, w_out, b_out;
  Mat<S> skip_w, skip_b;

  /// fn(name, matrix, is_self_attention)
  template <typename Fn>
  void visit(Fn&& fn) {
    fn("w_in", w_in, false);
    fn("b_in", b_in, false);
    fn("t_w1", t_w1, false);
    fn("t_b1", t_b1, false);
    fn("t_w2", t_w2, false);
    fn("t_b2", t_b2, false);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      auto& b = blocks[l];
      const std::string p = "block" + std::to_string(l) + ".";
      fn(p + "ln1_g", b.ln1_g, false);
      fn(p + "ln1_b", b.ln1_b, false);
      fn(p + "wq", b.wq, true);
      fn(p + "bq", b.bq, true);
      fn(p + "wk", b.wk, true);
      fn(p + "bk", b.bk, true);
      fn(p + "wv", b.wv, true);
      fn(p + "bv", b.bv, true);
      fn(p + "wo", b.wo, true);
      fn(p + "bo", b.bo, true);
      fn(p + "ln2_g", b.ln2_g, false);
      fn(p + "ln2_b", b.ln2_b, false);
      fn(p + "w1", b.w1, false);
      fn(p + "b1", b.b1, false);
      fn(p + "w2", b.w2, false);
      fn(p + "b2", b.b2, false);
    }
    fn("lnf_g", lnf_g, false);
    fn("lnf_b", lnf_b, false);
    fn("w_out", w_out, false);
    fn("b_out", b_out, false);
    fn("skip_w", skip_w, false);
    fn("skip_b", skip_b, false);
  }

  /// Visits this and `other` in lockstep: fn(name, mine, theirs, is_attention).
  template <typename Fn>
  void zip(DenoiserParams& other, Fn&& fn) {
    std::vector<Mat<S>*> theirs;
    other.visit([&](const std::string&, Mat<S>& m, bool) { theirs.push_back(&m); });
    std::size_t i = 0;
    visit([&](const std::string& name, Mat<S>& m, bool attn) { fn(name, m, *theirs[i++], attn); });
  }

  DenoiserParams zeros_like() const {
    DenoiserParams z = *this;
    z.visit([](const std::string&, Mat<S>& m, bool) { m.setZero(); });
    return z;
  }

  Index parameter_count() const {
    Index n = 0;
    const_cast<DenoiserParams*>(this)->visit(
        [&](const std::string&, Mat<S>& m, bool) { n += m.size(); });
    return n;
  }

  template <typename T>
  DenoiserParams<T> cast() const {
    DenoiserParams<T> out;
    std::vector<Mat<T>> mats;
    const_cast<DenoiserParams*>(this)->visit(
        [&](const std::string&, Mat<S>& m, bool) { mats.push_back(m.template cast<T>()); });
    out.blocks.resize(blocks.size());
    std::size_t i = 0;
    out.visit([&](const std::string&, Mat<T>& m, bool) { m = mats[i++]; });
    return out;
  }
};

namespace detail {

template <typename S>
struct LayerNormCache {
  Mat<S> xhat;
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd;
};

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& g, const Mat<S>& b, LayerNormCache<S>* cache) {
  constexpr S kEps = S(1e-5);
  const auto mean = x.rowwise().mean();
  Mat<S> xc = x.colwise() - mean;
  const Eigen::Matrix<S, Eigen::Dynamic, 1> rstd =
      ((xc.array().square().rowwise().sum() / S(x.cols())) + kEps).rsqrt();
  Mat<S> xhat = xc.array().colwise() * rstd.array();
  Mat<S> y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = rstd;
  }
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const LayerNormCache<S>& c, const Mat<S>& g,
                           Mat<S>* dg, Mat<S>* db) {
  if (dg) *dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  if (db) *db += dy.colwise().sum();
  const Mat<S> dxhat = dy.array().rowwise() * g.row(0).array();
  const S n = S(dy.cols());
  const auto m1 = dxhat.rowwise().sum() / n;
  const auto m2 = (dxhat.array() * c.xhat.array()).rowwise().sum().matrix() / n;
  Mat<S> dx = dxhat.colwise() - m1;
  dx -= (c.xhat.array().colwise() * m2.array()).matrix();
  return dx.array().colwise() * c.rstd.array();
}

template <typename S>
S gelu(S u) {
  constexpr S k = S(0.7978845608028654);
  return S(0.5) * u * (S(1) + std::tanh(k * (u + S(0.044715) * u * u * u)));
}

template <typename S>
S gelu_grad(S u) {
  constexpr S k = S(0.7978845608028654);
  const S th = std::tanh(k * (u + S(0.044715) * u * u * u));
  return S(0.5) * (S(1) + th) +
         S(0.5) * u * (S(1) - th * th) * k * (S(1) + S(3) * S(0.044715) * u * u);
}

template <typename S>
S silu(S z) {
  return z / (S(1) + std::exp(-z));
}

template <typename S>
S silu_grad(S z) {
  const S sg = S(1) / (S(1) + std::exp(-z));
  return sg * (S(1) + z * (S(1) - sg));
}

}  // namespace detail

/// Sinusoidal features of t in [0,1].
template <typename S>
Row<S> time_features(S t, Index dim) {
  Row<S> phi(dim);
  const Index half = dim / 2;
  for (Index i = 0; i < half; ++i) {
    const double w = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double a = 1000.0 * static_cast<double>(t) * w;
    phi(i) = S(std::sin(a));
    phi(half + i) = S(std::cos(a));
  }
  if (dim % 2) phi(dim - 1) = S(0);
  return phi;
}

/// Fixed 3-axis sinusoidal positions; the reference frame sits at temporal
/// position -1 and shares the spatial grid of video frames.
template <typename S>
Mat<S> positional_table(const TokenLayout& layout, Index dim) {
  const Index n = layout.total_tokens();
  const Index da = (dim / 3) & ~Index{1};
  const Index sizes[3] = {da, da, dim - 2 * da};
  Mat<S> pos(n, dim);
  for (Index tok = 0; tok < n; ++tok) {
    const Index f = tok / layout.tokens_per_frame();
    const Index cell = tok % layout.tokens_per_frame();
    const double coords[3] = {static_cast<double>(f - 1),
                              static_cast<double>(cell / layout.grid_w()),
                              static_cast<double>(cell % layout.grid_w())};
    Index col = 0;
    for (int axis = 0; axis < 3; ++axis) {
      const Index pairs = sizes[axis] / 2;
      for (Index i = 0; i < pairs; ++i) {
        const double w = std::exp(-std::log(10000.0) * static_cast<double>(2 * i) /
                                  static_cast<double>(sizes[axis]));
        pos(tok, col + 2 * i) = S(std::sin(coords[axis] * w));
        pos(tok, col + 2 * i + 1) = S(std::cos(coords[axis] * w));
      }
      if (sizes[axis] % 2) pos(tok, col + sizes[axis] - 1) = S(0);
      col += sizes[axis];
    }
  }
  return pos;
}

/// Rows are tokens (frame-major, then patch rows, then patch columns);
/// features are (channel, py, px).
template <typename S>
Mat<S> tokenize(const Tensor<S>& fused, Index patch) {
  const Index f = fused.dim(0), c = fused.dim(1), lh = fused.dim(2), lw = fused.dim(3);
  const Index gh = lh / patch, gw = lw / patch, pp = patch * patch;
  Mat<S> x(f * gh * gw, c * pp);
  for (Index k = 0; k < f; ++k)
    for (Index ch = 0; ch < c; ++ch)
      for (Index y = 0; y < lh; ++y)
        for (Index xx = 0; xx < lw; ++xx) {
          const Index tok = (k * gh + y / patch) * gw + xx / patch;
          x(tok, ch * pp + (y % patch) * patch + xx % patch) = fused(k, ch, y, xx);
        }
  return x;
}

template <typename S>
Tensor<S> untokenize(const Mat<S>& tokens, Index frames, Index channels, Index lh, Index lw,
                     Index patch) {
  const Index gh = lh / patch, gw = lw / patch, pp = patch * patch;
  require(tokens.rows() == frames * gh * gw && tokens.cols() == channels * pp, ErrorCode::kShape,
          "token matrix does not match latent dims");
  Tensor<S> out(Shape{frames, channels, lh, lw});
  for (Index k = 0; k < frames; ++k)
    for (Index ch = 0; ch < channels; ++ch)
      for (Index y = 0; y < lh; ++y)
        for (Index xx = 0; xx < lw; ++xx) {
          const Index tok = (k * gh + y / patch) * gw + xx / patch;
          out(k, ch, y, xx) = tokens(tok, ch * pp + (y % patch) * patch + xx % patch);
        }
  return out;
}

namespace detail {

/// Mask-group value of each output element's temporal slot, laid out like
/// the first `channels * patch^2` token features.
template <typename S>
Mat<S> mask_elements(const Mat<S>& x, Index channels, Index patch) {
  const Index pp = patch * patch, moff = 4 * channels * pp;
  Mat<S> m(x.rows(), channels * pp);
  for (Index c = 0; c < channels; ++c)
    m.middleCols(c * pp, pp) = x.middleCols(moff + latent_channel_slot(c) * pp, pp);
  return m;
}

/// y += a*noisy + b*agnostic + m*(a_m*noisy + b_m*agnostic), gates per row.
template <typename S>
void add_skip(Mat<S>& y, const Mat<S>& x, const Mat<S>& coef, Index channels, Index patch) {
  const Index dout = channels * patch * patch;
  const auto xn = x.leftCols(dout).array();
  const auto xa = x.middleCols(2 * dout, dout).array();
  const Mat<S> m = mask_elements(x, channels, patch);
  y.array() += xn.colwise() * coef.col(0).array() + xa.colwise() * coef.col(1).array() +
               m.array() * (xn.colwise() * coef.col(2).array() + xa.colwise() * coef.col(3).array());
}

}  // namespace detail

/// Small pre-LN diffusion transformer over fused tokens. Predicts velocity
/// per latent element as a transformer read-out plus a time-gated skip of
/// the noisy and agnostic streams, gated separately inside the mask.
template <typename S>
class Denoiser {
 public:
  struct BlockTape {
    Mat<S> h_in;
    detail::LayerNormCache<S> ln1;
    Mat<S> a, q, k, v;
    std::vector<Mat<S>> probs;
    Mat<S> o, h_mid;
    detail::LayerNormCache<S> ln2;
    Mat<S> b, u, g;
  };

  struct Tape {
    Mat<S> x;
    Index ref_tokens = 0;
    AttentionMask attention;
    Row<S> phi_vid, phi_ref, z1_vid, z1_ref, a1_vid, a1_ref;
    Mat<S> e_tok;
    std::vector<BlockTape> blocks;
    detail::LayerNormCache<S> lnf;
    Mat<S> f;
    Mat<S> coef;  // N x 4 skip gates
    TokenLayout layout;
    Index frames = 0, latent_channels = 0;
  };

  /// Reference-token keys and values per layer; independent of t and of the
  /// video tokens, so one cache serves every sampling step.
  struct RefCache {
    std::vector<Mat<S>> k, v;
    bool valid = false;
  };

  Denoiser() = default;

  explicit Denoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    init_params();
  }

  Denoiser(const DenoiserConfig& cfg, DenoiserParams<S> params)
      : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
  }

  const DenoiserConfig& config() const { return cfg_; }
  DenoiserParams<S>& params() { return params_; }
  const DenoiserParams<S>& params() const { return params_; }

  template <typename T>
  Denoiser<T> cast() const {
    return Denoiser<T>(cfg_, params_.template cast<T>());
  }

  /// Velocity prediction for every fused frame, shape (f'+1, C, h, w).
  Tensor<S> forward(const FusedInput<S>& fused, S t, Tape* tape = nullptr) const {
    Tape local;
    Tape& tp = tape ? *tape : local;
    const Mat<S> pred = forward_tokens(fused, t, tp);
    return untokenize(pred, fused.tensor.dim(0), cfg_.latent_channels, fused.layout.latent_h,
                      fused.layout.latent_w, cfg_.patch);
  }

  /// Backward pass from dL/dprediction (same shape as forward's output);
  /// parameter gradients are accumulated into `grad`. Returns dL/dinput
  /// tokens when `want_input_grad` is set.
  Mat<S> backward(const Tape& tp, const Tensor<S>& dpred, DenoiserParams<S>& grad,
                  bool want_input_grad = false) const {
    const auto& P = params_;
    const Mat<S> dy = tokenize(dpred, cfg_.patch);
    const Index dout = cfg_.token_out();
    const Index agn = 2 * dout;

    // Skip path.
    const Mat<S> m = detail::mask_elements(tp.x, cfg_.latent_channels, cfg_.patch);
    const auto xn = tp.x.leftCols(dout).array();
    const auto xa = tp.x.middleCols(agn, dout).array();
    const Mat<S> dym = dy.array() * m.array();
    Mat<S> dcoef(dy.rows(), 4);
    dcoef.col(0) = (dy.array() * xn).rowwise().sum();
    dcoef.col(1) = (dy.array() * xa).rowwise().sum();
    dcoef.col(2) = (dym.array() * xn).rowwise().sum();
    dcoef.col(3) = (dym.array() * xa).rowwise().sum();
    grad.skip_w.noalias() += tp.e_tok.transpose() * dcoef;
    grad.skip_b += dcoef.colwise().sum();
    Mat<S> de_tok = dcoef * P.skip_w.transpose();

    // Read-out.
    grad.w_out.noalias() += tp.f.transpose() * dy;
    grad.b_out += dy.colwise().sum();
    const Mat<S> df = dy * P.w_out.transpose();
    Mat<S> dh = detail::layer_norm_backward(df, tp.lnf, P.lnf_g, &grad.lnf_g, &grad.lnf_b);

    for (Index l = cfg_.layers - 1; l >= 0; --l) {
      dh = block_backward(P.blocks[static_cast<std::size_t>(l)], tp.blocks[static_cast<std::size_t>(l)],
                          dh, grad.blocks[static_cast<std::size_t>(l)]);
    }

    // Input projection and time embedding.
    grad.w_in.noalias() += tp.x.transpose() * dh;
    grad.b_in += dh.colwise().sum();
    de_tok += dh;
    const Index r = tp.ref_tokens;
    time_backward(tp.phi_ref, tp.z1_ref, tp.a1_ref, de_tok.topRows(r).colwise().sum(), grad);
    time_backward(tp.phi_vid, tp.z1_vid, tp.a1_vid,
                  de_tok.bottomRows(de_tok.rows() - r).colwise().sum(), grad);
    if (!want_input_grad) return {};
    Mat<S> dx = dh * P.w_in.transpose();
    const auto& cf = tp.coef;
    dx.leftCols(dout).array() +=
        dy.array().colwise() * cf.col(0).array() + dym.array().colwise() * cf.col(2).array();
    dx.middleCols(agn, dout).array() +=
        dy.array().colwise() * cf.col(1).array() + dym.array().colwise() * cf.col(3).array();
    const Mat<S> dm =
        dy.array() * (xn.colwise() * cf.col(2).array() + xa.colwise() * cf.col(3).array());
    const Index pp = cfg_.patch * cfg_.patch, moff = 4 * dout;
    for (Index c = 0; c < cfg_.latent_channels; ++c)
      dx.middleCols(moff + latent_channel_slot(c) * pp, pp) += dm.middleCols(c * pp, pp);
    return dx;
  }

  /// Runs the reference tokens alone and stores their per-layer keys/values.
  RefCache build_ref_cache(const FusedInput<S>& fused) const {
    const TokenLayout& lay = fused.layout;
    const Index r = lay.ref_tokens();
    const Mat<S> x = tokenize(fused.tensor, cfg_.patch).topRows(r);
    const Mat<S> pos = positional_table<S>(lay, cfg_.dim).topRows(r);
    Row<S> z1, a1;
    const Row<S> e_ref = time_embed(time_features<S>(S(0), cfg_.time_dim), z1, a1);
    Mat<S> h = (x * params_.w_in).rowwise() + params_.b_in.row(0);
    h += pos;
    h.rowwise() += e_ref;
    RefCache cache;
    const AttentionMask all = AttentionMask::Constant(r, r, true);
    for (const auto& b : params_.blocks) {
      const Mat<S> a = detail::layer_norm<S>(h, b.ln1_g, b.ln1_b, nullptr);
      Mat<S> k = (a * b.wk).rowwise() + b.bk.row(0);
      Mat<S> v = (a * b.wv).rowwise() + b.bv.row(0);
      const Mat<S> q = (a * b.wq).rowwise() + b.bq.row(0);
      h += attention_output(b, q, k, v, all, nullptr);
      h += mlp(b, h, nullptr);
      cache.k.push_back(std::move(k));
      cache.v.push_back(std::move(v));
    }
    cache.valid = true;
    return cache;
  }

  /// Video-token prediction (frames 1..f') using cached reference keys and
  /// values; matches forward() on those frames under the reference-injection
  /// attention mask.
  Tensor<S> forward_video(const FusedInput<S>& fused, S t, const RefCache& cache) const {
    require(cache.valid, ErrorCode::kValue, "reference cache not built");
    const TokenLayout& lay = fused.layout;
    const Index r = lay.ref_tokens(), nv = lay.video_tokens();
    const Mat<S> xall = tokenize(fused.tensor, cfg_.patch);
    const Mat<S> x = xall.bottomRows(nv);
    const Mat<S> pos = positional_table<S>(lay, cfg_.dim).bottomRows(nv);
    Row<S> z1, a1;
    const Row<S> e_vid = time_embed(time_features<S>(t, cfg_.time_dim), z1, a1);
    Mat<S> h = (x * params_.w_in).rowwise() + params_.b_in.row(0);
    h += pos;
    h.rowwise() += e_vid;
    const AttentionMask all = AttentionMask::Constant(nv, r + nv, true);
    for (std::size_t l = 0; l < params_.blocks.size(); ++l) {
      const auto& b = params_.blocks[l];
      const Mat<S> a = detail::layer_norm<S>(h, b.ln1_g, b.ln1_b, nullptr);
      const Mat<S> q = (a * b.wq).rowwise() + b.bq.row(0);
      Mat<S> k(r + nv, cfg_.dim), v(r + nv, cfg_.dim);
      k << cache.k[l], (a * b.wk).rowwise() + b.bk.row(0);
      v << cache.v[l], (a * b.wv).rowwise() + b.bv.row(0);
      h += attention_output(b, q, k, v, all, nullptr);
      h += mlp(b, h, nullptr);
    }
    const Mat<S> f = detail::layer_norm<S>(h, params_.lnf_g, params_.lnf_b, nullptr);
    Mat<S> y = (f * params_.w_out).rowwise() + params_.b_out.row(0);
    const Row<S> coef = e_vid * params_.skip_w + params_.skip_b.row(0);
    detail::add_skip<S>(y, x, coef.replicate(nv, 1), cfg_.latent_channels, cfg_.patch);
    return untokenize(y, lay.frames - 1, cfg_.latent_channels, lay.latent_h, lay.latent_w,
                      cfg_.patch);
  }

 private:
  void init_params() {
    std::mt19937_64 rng(cfg_.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto gauss = [&](Index r, Index c, double stddev) {
      Mat<S> m(r, c);
      for (Index j = 0; j < c; ++j)
        for (Index i = 0; i < r; ++i) m(i, j) = S(normal(rng) * stddev);
      return m;
    };
    auto zeros = [](Index c) { return Mat<S>::Zero(1, c).eval(); };
    auto ones = [](Index c) { return Mat<S>::Ones(1, c).eval(); };
    const Index d = cfg_.dim, hid = cfg_.hidden();
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    params_.w_in = gauss(cfg_.token_in(), d, 1.0 / std::sqrt(static_cast<double>(cfg_.token_in())));
    params_.b_in = zeros(d);
    params_.t_w1 = gauss(cfg_.time_dim, d, 1.0 / std::sqrt(static_cast<double>(cfg_.time_dim)));
    params_.t_b1 = zeros(d);
    params_.t_w2 = gauss(d, d, sd);
    params_.t_b2 = zeros(d);
    params_.blocks.resize(static_cast<std::size_t>(cfg_.layers));
    for (auto& b : params_.blocks) {
      b.ln1_g = ones(d);
      b.ln1_b = zeros(d);
      b.wq = gauss(d, d, sd);
      b.wk = gauss(d, d, sd);
      b.wv = gauss(d, d, sd);
      b.wo = gauss(d, d, sd / std::sqrt(2.0 * static_cast<double>(cfg_.layers)));
      b.bq = zeros(d);
      b.bk = zeros(d);
      b.bv = zeros(d);
      b.bo = zeros(d);
      b.ln2_g = ones(d);
      b.ln2_b = zeros(d);
      b.w1 = gauss(d, hid, sd);
      b.b1 = zeros(hid);
      b.w2 = gauss(hid, d, 1.0 / std::sqrt(static_cast<double>(hid)) /
                               std::sqrt(2.0 * static_cast<double>(cfg_.layers)));
      b.b2 = zeros(d);
    }
    params_.lnf_g = ones(d);
    params_.lnf_b = zeros(d);
    // Small read-out so the initial prediction is close to zero velocity.
    params_.w_out = gauss(d, cfg_.token_out(), 0.02);
    params_.b_out = zeros(cfg_.token_out());
    params_.skip_w = Mat<S>::Zero(d, 4);
    params_.skip_b = zeros(4);
  }

  Row<S> time_embed(const Row<S>& phi, Row<S>& z1, Row<S>& a1) const {
    z1 = phi * params_.t_w1 + params_.t_b1.row(0);
    a1 = z1.unaryExpr([](S z) { return detail::silu(z); });
    return a1 * params_.t_w2 + params_.t_b2.row(0);
  }

  void time_backward(const Row<S>& phi, const Row<S>& z1, const Row<S>& a1, const Row<S>& de,
                     DenoiserParams<S>& grad) const {
    grad.t_w2.noalias() += a1.transpose() * de;
    grad.t_b2 += de;
    const Row<S> da1 = de * params_.t_w2.transpose();
    const Row<S> dz1 = da1.array() * z1.unaryExpr([](S z) { return detail::silu_grad(z); }).array();
    grad.t_w1.noalias() += phi.transpose() * dz1;
    grad.t_b1 += dz1;
  }

  /// Multi-head masked attention followed by the output projection.
  Mat<S> attention_output(const BlockParams<S>& b, const Mat<S>& q, const Mat<S>& k,
                          const Mat<S>& v, const AttentionMask& mask, BlockTape* tape) const {
    const Index dh = cfg_.dim / cfg_.heads;
    const S scale = S(1) / std::sqrt(S(dh));
    Mat<S> o(q.rows(), cfg_.dim);
    if (tape) tape->probs.resize(static_cast<std::size_t>(cfg_.heads));
    for (Index h = 0; h < cfg_.heads; ++h) {
      Mat<S> s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
      for (Index i = 0; i < s.rows(); ++i) {
        S mx = -std::numeric_limits<S>::infinity();
        for (Index j = 0; j < s.cols(); ++j)
          if (mask(i, j)) mx = std::max(mx, s(i, j));
        S sum = 0;
        for (Index j = 0; j < s.cols(); ++j) {
          const S e = mask(i, j) ? std::exp(s(i, j) - mx) : S(0);
          s(i, j) = e;
          sum += e;
        }
        s.row(i) /= sum;
      }
      o.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
      if (tape) tape->probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    Mat<S> out = (o * b.wo).rowwise() + b.bo.row(0);
    if (tape) tape->o = std::move(o);
    return out;
  }

  Mat<S> mlp(const BlockParams<S>& b, const Mat<S>& h, BlockTape* tape) const {
    detail::LayerNormCache<S> ln;
    Mat<S> bn = detail::layer_norm<S>(h, b.ln2_g, b.ln2_b, tape ? &ln : nullptr);
    Mat<S> u = (bn * b.w1).rowwise() + b.b1.row(0);
    Mat<S> g = u.unaryExpr([](S z) { return detail::gelu(z); });
    Mat<S> out = (g * b.w2).rowwise() + b.b2.row(0);
    if (tape) {
      tape->ln2 = std::move(ln);
      tape->b = std::move(bn);
      tape->u = std::move(u);
      tape->g = std::move(g);
    }
    return out;
  }

  Mat<S> forward_tokens(const FusedInput<S>& fused, S t, Tape& tp) const {
    require(fused.groups.latent_channels == cfg_.latent_channels &&
                fused.tensor.dim(1) == cfg_.fused_channels(),
            ErrorCode::kShape, "fused input channel count does not match the model",
            shape_string(fused.tensor.shape()));
    require(fused.layout.patch == cfg_.patch, ErrorCode::kShape, "patch size mismatch");
    require(t >= S(0) && t <= S(1), ErrorCode::kValue, "diffusion time must be in [0,1]");
    const auto& P = params_;
    tp.layout = fused.layout;
    tp.frames = fused.tensor.dim(0);
    tp.latent_channels = cfg_.latent_channels;
    tp.attention = fused.attention;
    tp.ref_tokens = fused.layout.ref_tokens();
    tp.x = tokenize(fused.tensor, cfg_.patch);
    const Index n = tp.x.rows(), r = tp.ref_tokens;
    require(fused.attention.rows() == n && fused.attention.cols() == n, ErrorCode::kShape,
            "attention mask does not match token count");

    tp.phi_vid = time_features<S>(t, cfg_.time_dim);
    tp.phi_ref = time_features<S>(S(0), cfg_.time_dim);
    const Row<S> e_vid = time_embed(tp.phi_vid, tp.z1_vid, tp.a1_vid);
    const Row<S> e_ref = time_embed(tp.phi_ref, tp.z1_ref, tp.a1_ref);
    tp.e_tok.resize(n, cfg_.dim);
    tp.e_tok.topRows(r) = e_ref.replicate(r, 1);
    tp.e_tok.bottomRows(n - r) = e_vid.replicate(n - r, 1);

    Mat<S> h = (tp.x * P.w_in).rowwise() + P.b_in.row(0);
    h += positional_table<S>(fused.layout, cfg_.dim);
    h += tp.e_tok;
    tp.blocks.resize(static_cast<std::size_t>(cfg_.layers));
    for (Index l = 0; l < cfg_.layers; ++l) {
      const auto& b = P.blocks[static_cast<std::size_t>(l)];
      BlockTape& bt = tp.blocks[static_cast<std::size_t>(l)];
      bt.h_in = h;
      bt.a = detail::layer_norm<S>(h, b.ln1_g, b.ln1_b, &bt.ln1);
      bt.q = (bt.a * b.wq).rowwise() + b.bq.row(0);
      bt.k = (bt.a * b.wk).rowwise() + b.bk.row(0);
      bt.v = (bt.a * b.wv).rowwise() + b.bv.row(0);
      h += attention_output(b, bt.q, bt.k, bt.v, fused.attention, &bt);
      bt.h_mid = h;
      h += mlp(b, h, &bt);
    }
    tp.f = detail::layer_norm<S>(h, P.lnf_g, P.lnf_b, &tp.lnf);
    Mat<S> y = (tp.f * P.w_out).rowwise() + P.b_out.row(0);
    tp.coef = (tp.e_tok * P.skip_w).rowwise() + P.skip_b.row(0);
    detail::add_skip<S>(y, tp.x, tp.coef, cfg_.latent_channels, cfg_.patch);
    return y;
  }

  // Masked probabilities are exactly zero, so their score gradients vanish
  // without consulting the mask.
  Mat<S> block_backward(const BlockParams<S>& b, const BlockTape& bt, const Mat<S>& dh_out,
                        BlockParams<S>& g) const {
    // MLP residual.
    g.w2.noalias() += bt.g.transpose() * dh_out;
    g.b2 += dh_out.colwise().sum();
    const Mat<S> dgel = dh_out * b.w2.transpose();
    const Mat<S> du = dgel.array() * bt.u.unaryExpr([](S z) { return detail::gelu_grad(z); }).array();
    g.w1.noalias() += bt.b.transpose() * du;
    g.b1 += du.colwise().sum();
    const Mat<S> dbn = du * b.w1.transpose();
    Mat<S> dh_mid = dh_out + detail::layer_norm_backward(dbn, bt.ln2, b.ln2_g, &g.ln2_g, &g.ln2_b);

    // Attention residual.
    g.wo.noalias() += bt.o.transpose() * dh_mid;
    g.bo += dh_mid.colwise().sum();
    const Mat<S> dout = dh_mid * b.wo.transpose();
    const Index dh = cfg_.dim / cfg_.heads;
    const S scale = S(1) / std::sqrt(S(dh));
    Mat<S> dq(bt.q.rows(), cfg_.dim), dk(bt.k.rows(), cfg_.dim), dv(bt.v.rows(), cfg_.dim);
    for (Index h = 0; h < cfg_.heads; ++h) {
      const Mat<S>& p = bt.probs[static_cast<std::size_t>(h)];
      const auto doh = dout.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh).noalias() = p.transpose() * doh;
      const Mat<S> dp = doh * bt.v.middleCols(h * dh, dh).transpose();
      const Eigen::Matrix<S, Eigen::Dynamic, 1> rs = (dp.array() * p.array()).rowwise().sum();
      Mat<S> ds = p.array() * (dp.array().colwise() - rs.array());
      ds *= scale;
      dq.middleCols(h * dh, dh).noalias() = ds * bt.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * bt.q.middleCols(h * dh, dh);
    }
    g.wq.noalias() += bt.a.transpose() * dq;
    g.bq += dq.colwise().sum();
    g.wk.noalias() += bt.a.transpose() * dk;
    g.bk += dk.colwise().sum();
    g.wv.noalias() += bt.a.transpose() * dv;
    g.bv += dv.colwise().sum();
    Mat<S> da = dq * b.wq.transpose();
    da.noalias() += dk * b.wk.transpose();
    da.noalias() += dv * b.wv.transpose();
    return dh_mid + detail::layer_norm_backward(da, bt.ln1, b.ln1_g, &g.ln1_g, &g.ln1_b);
  }

  DenoiserConfig cfg_;
  DenoiserParams<S> params_;
};

}  // namespace subswap
