#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "subswap/condition_fusion.hpp"
#include "subswap/data_pipeline.hpp"
#include "subswap/denoiser.hpp"
#include "subswap/mask_augment.hpp"

namespace subswap {

// ---- reference augmentation ----

struct ReferenceAugmentConfig {
  double scale_min = 0.7;
  double scale_max = 1.3;
  double max_rotation_deg = 15.0;
  double flip_prob = 0.5;
  double max_brightness = 0.2;

  void validate() const;
};

/// Rotation in radians; brightness is added to matted pixels and clamped.
struct ReferenceAugmentParams {
  float scale = 1.f;
  float rotation = 0.f;
  bool flip = false;
  float brightness = 0.f;
};

ReferenceImage augment_reference(const ReferenceImage& ref, const ReferenceAugmentParams& p);
ReferenceAugmentParams sample_reference_augment(const ReferenceAugmentConfig& cfg, Rng& rng);

/// Samples parameters, redrawing (up to 16 times) when the subject vanishes.
ReferenceImage augment_reference(const ReferenceImage& ref, const ReferenceAugmentConfig& cfg,
                                 Rng& rng, ReferenceAugmentParams* used = nullptr);

// ---- objective ----

/// Pixel-range latents in [0,1] are mapped to [-1,1] before entering the model.
template <typename S>
Tensor<S> to_model_space(const Tensor<S>& latent) {
  Tensor<S> out = latent;
  out.array() = out.array() * S(2) - S(1);
  return out;
}

template <typename S>
Tensor<S> from_model_space(const Tensor<S>& z) {
  Tensor<S> out = z;
  out.array() = (out.array() + S(1)) * S(0.5);
  return out;
}

template <typename S>
struct FlowPair {
  Tensor<S> x_t;
  Tensor<S> target;
};

/// x_t = (1-t) x0 + t noise, target = noise - x0.
template <typename S>
FlowPair<S> flow_target(const Tensor<S>& x0, const Tensor<S>& noise, S t) {
  require(x0.shape() == noise.shape(), ErrorCode::kShape, "x0 and noise dims differ",
          shape_string(x0.shape()) + " vs " + shape_string(noise.shape()));
  FlowPair<S> out{x0, noise};
  out.x_t.array() = (S(1) - t) * x0.array() + t * noise.array();
  out.target.array() = noise.array() - x0.array();
  return out;
}

/// (F, 4, h, w) mask latent spread over (F, C, h, w): every latent channel
/// takes the mask channel of its temporal slot.
template <typename S>
Tensor<S> broadcast_mask(const Tensor<S>& mask_latent, Index channels) {
  require(mask_latent.rank() == 4 && mask_latent.dim(1) == CodecSpec::kTemporal,
          ErrorCode::kShape, "mask latent must be (F,4,h,w)", shape_string(mask_latent.shape()));
  const Index f = mask_latent.dim(0), h = mask_latent.dim(2), w = mask_latent.dim(3);
  Tensor<S> out(Shape{f, channels, h, w});
  for (Index k = 0; k < f; ++k)
    for (Index c = 0; c < channels; ++c) {
      const Index slot = latent_channel_slot(c);
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) out(k, c, y, x) = mask_latent(k, slot, y, x);
    }
  return out;
}

/// Per-element weights w with l_final = sum(w * l_pt).
template <typename S>
struct LossWeights {
  Tensor<S> w;
  Index e = 0;
  Index e_s = 0;
};

/// `subject` is a 0/1 tensor shaped like l_pt; frames with frame_mask false
/// get weight zero and are left out of E and E^s. An empty frame_mask keeps
/// every frame.
template <typename S>
LossWeights<S> loss_weights(const Tensor<S>& subject, const std::vector<bool>& frame_mask,
                            double lambda) {
  require(lambda >= 0 && std::isfinite(lambda), ErrorCode::kConfig,
          "reweighting lambda must be >= 0", std::to_string(lambda));
  const Index f = subject.dim(0), per = subject.stride(0);
  require(frame_mask.empty() || static_cast<Index>(frame_mask.size()) == f, ErrorCode::kShape,
          "frame mask length does not match frame count");
  auto used = [&](Index k) { return frame_mask.empty() || frame_mask[static_cast<std::size_t>(k)]; };
  LossWeights<S> out;
  for (Index k = 0; k < f; ++k) {
    if (!used(k)) continue;
    out.e += per;
    out.e_s += (subject.slab(k) != S(0)).count();
  }
  require(out.e > 0, ErrorCode::kShape, "loss covers no elements");
  out.w = Tensor<S>(subject.shape());
  const double inv_e = 1.0 / static_cast<double>(out.e);
  for (Index k = 0; k < f; ++k) {
    if (!used(k)) continue;
    if (out.e_s == 0) {
      out.w.slab(k).setConstant(S(inv_e));
      continue;
    }
    const double inv_es = lambda / static_cast<double>(out.e_s);
    auto src = subject.slab(k);
    auto dst = out.w.slab(k);
    for (Index i = 0; i < per; ++i) dst(i) = src(i) != S(0) ? S(inv_es) : S(inv_e);
  }
  return out;
}

template <typename S>
struct LossBreakdown {
  Tensor<S> l_pt;       // per-element pre-training loss
  double l_rw = 0;      // (E/E^s) mean of M * l_pt, i.e. mean loss over subject elements
  double l_final = 0;
  Index e = 0;
  Index e_s = 0;
};

/// l_final = mean((1-M) l_pt) + lambda (E/E^s) mean(M l_pt) over the frames
/// kept by frame_mask; falls back to mean(l_pt) when E^s = 0.
template <typename S>
LossBreakdown<S> reweighted_loss(const Tensor<S>& l_pt, const Tensor<S>& mask_latent,
                                 double lambda, const std::vector<bool>& frame_mask = {}) {
  require(l_pt.rank() == 4, ErrorCode::kShape, "l_pt must be (F,C,h,w)", shape_string(l_pt.shape()));
  require(mask_latent.rank() == 4 && mask_latent.dim(0) == l_pt.dim(0) &&
              mask_latent.dim(2) == l_pt.dim(2) && mask_latent.dim(3) == l_pt.dim(3),
          ErrorCode::kShape, "mask latent does not match l_pt",
          shape_string(mask_latent.shape()) + " vs " + shape_string(l_pt.shape()));
  require((l_pt.array() >= S(0)).all() && l_pt.array().allFinite(), ErrorCode::kValue,
          "l_pt must be finite and nonnegative");
  const Tensor<S> m = broadcast_mask(mask_latent, l_pt.dim(1));
  const LossWeights<S> lw = loss_weights(m, frame_mask, lambda);
  LossBreakdown<S> out;
  out.l_pt = l_pt;
  out.e = lw.e;
  out.e_s = lw.e_s;
  double total = 0, subject = 0;
  for (Index i = 0; i < l_pt.size(); ++i) {
    total += static_cast<double>(lw.w.array()(i)) * static_cast<double>(l_pt.array()(i));
    if (m.array()(i) != S(0) && lw.w.array()(i) != S(0)) subject += static_cast<double>(l_pt.array()(i));
  }
  out.l_final = total;
  out.l_rw = lw.e_s > 0 ? subject / static_cast<double>(lw.e_s) : 0.0;
  return out;
}

// ---- training ----

struct TrainConfig {
  Index steps = 2000;
  Index batch = 4;
  double learning_rate = 3e-4;
  double lambda = 1.0;
  ReferenceAugmentConfig reference;
  Trainable trainable = Trainable::kAll;
  DummySource dummy_source = DummySource::kClean;
  double rms_decay = 0.999;
  double rms_eps = 1e-8;

  void validate() const;
};

/// One ready-to-run training example; target and weights span all f'+1
/// fused frames with the reference frame weighted zero.
template <typename S>
struct TrainingSample {
  FusedInput<S> fused;
  Tensor<S> target;
  Tensor<S> weights;
  Tensor<S> subject;  // broadcast subject mask, same dims as target
  S t = 0;
  Index e = 0, e_s = 0;
  Index frame_index = 0;
};

/// Draws frame i, builds the augmented reference and mask, encodes every
/// stream and pairs it with a flow target. Returns none when the drawn frame
/// has no subject pixels.
std::optional<TrainingSample<float>> prepare_sample(const SubjectRecord& rec, const TrainConfig& cfg,
                                                    const AugmentConfig& augment, Index patch,
                                                    Rng& rng);

/// Squared-error loss of one prediction against a sample; fills dpred with
/// dL/dprediction when given.
template <typename S>
double sample_loss(const Tensor<S>& pred, const Tensor<S>& target, const Tensor<S>& weights,
                   Tensor<S>* dpred = nullptr) {
  require(pred.shape() == target.shape() && target.shape() == weights.shape(), ErrorCode::kShape,
          "prediction and target dims differ",
          shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
  const auto diff = (pred.array() - target.array()).eval();
  if (dpred) {
    *dpred = Tensor<S>(pred.shape());
    dpred->array() = S(2) * weights.array() * diff;
  }
  double total = 0;
  for (Index i = 0; i < diff.size(); ++i)
    total += static_cast<double>(weights.array()(i)) * static_cast<double>(diff(i) * diff(i));
  return total;
}

/// RMSProp without momentum and with a bias-corrected second moment.
class RmsProp {
 public:
  RmsProp() = default;
  RmsProp(const DenoiserParams<float>& like, double decay, double eps);

  void step(DenoiserParams<float>& params, DenoiserParams<float>& grad, double lr,
            Trainable trainable);
  Index steps() const { return steps_; }

 private:
  DenoiserParams<float> second_;
  double decay_ = 0.999, eps_ = 1e-8;
  Index steps_ = 0;
};

struct TrainState {
  Denoiser<float> model;
  RmsProp optimizer;
  Rng rng;
  Index step = 0;
  Index skipped = 0;  // records skipped for an empty subject frame
};

TrainState init_train_state(const DenoiserConfig& model_cfg, const TrainConfig& cfg,
                            std::uint64_t seed);

struct StepReport {
  double l_final = 0;  // batch mean
  double l_pt = 0;     // batch mean of mean(l_pt) over video frames
  double l_rw = 0;
  Index used = 0;
  Index skipped = 0;
};

/// Draws `cfg.batch` records uniformly from `data` with the state's rng.
StepReport training_step(const std::vector<SubjectRecord>& data, TrainState& state,
                         const TrainConfig& cfg, const AugmentConfig& augment);

/// Same, on an explicit batch.
StepReport training_step_on(const std::vector<const SubjectRecord*>& batch, TrainState& state,
                            const TrainConfig& cfg, const AugmentConfig& augment);

struct TrainResult {
  std::vector<StepReport> history;
  double seconds = 0;
};

using StepCallback = std::function<void(Index step, const StepReport&)>;

TrainResult train(const std::vector<SubjectRecord>& data, TrainState& state, const TrainConfig& cfg,
                  const AugmentConfig& augment, const StepCallback& on_step = {});

std::string loss_csv(const std::vector<StepReport>& history);

// ---- gradient check ----

struct GradCheckResult {
  double max_rel_error = 0;
  double max_abs_error = 0;
  Index coordinates = 0;
};

/// Compares analytic parameter gradients of the sample loss against central
/// differences on `coords` randomly drawn parameter coordinates.
GradCheckResult grad_check(const Denoiser<double>& model, const TrainingSample<double>& sample,
                           double eps, std::uint64_t seed, Index coords = 64,
                           double rel_floor = 1e-6);

TrainingSample<double> cast_sample(const TrainingSample<float>& s);

// ---- checkpoints ----

struct CheckpointMeta {
  DenoiserConfig model;
  Index step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

/// Writes one VTEN file per parameter under dir/weights plus dir/meta.json.
void save_checkpoint(const std::filesystem::path& dir, const Denoiser<float>& model, Index step,
                     const nlohmann::json& extra = nlohmann::json::object());

/// Throws kMissingWeights when the checkpoint is absent or incomplete.
Denoiser<float> load_checkpoint(const std::filesystem::path& dir, CheckpointMeta* meta = nullptr);

}  // namespace subswap
