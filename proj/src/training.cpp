#include "subswap/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "subswap/io.hpp"
#include "subswap/latent_codec.hpp"

namespace subswap {

void DenoiserConfig::validate() const {
  require(dim > 0 && heads > 0 && dim % heads == 0, ErrorCode::kConfig,
          "model dim must be a positive multiple of heads");
  require(dim >= 6, ErrorCode::kConfig, "model dim must be at least 6");
  require(layers >= 1, ErrorCode::kConfig, "model needs at least one layer");
  require(patch >= 1, ErrorCode::kConfig, "patch edge must be >= 1");
  require(time_dim >= 2, ErrorCode::kConfig, "time embedding dim must be >= 2");
  require(latent_channels >= 1, ErrorCode::kConfig, "latent channel count must be >= 1");
}

void ReferenceAugmentConfig::validate() const {
  require(scale_min > 0 && scale_min <= scale_max, ErrorCode::kConfig,
          "reference scale range must be nonempty and positive");
  require(max_rotation_deg >= 0, ErrorCode::kConfig, "rotation range must be nonnegative");
  require(flip_prob >= 0 && flip_prob <= 1, ErrorCode::kConfig, "flip probability must be in [0,1]");
  require(max_brightness >= 0, ErrorCode::kConfig, "brightness range must be nonnegative");
}

void TrainConfig::validate() const {
  require(steps >= 1 && batch >= 1, ErrorCode::kConfig, "steps and batch must be >= 1");
  require(learning_rate > 0, ErrorCode::kConfig, "learning rate must be positive");
  require(lambda >= 0, ErrorCode::kConfig, "reweighting lambda must be >= 0");
  require(rms_decay > 0 && rms_decay < 1 && rms_eps > 0, ErrorCode::kConfig,
          "optimizer decay must be in (0,1) and eps positive");
  reference.validate();
}

namespace {

template <typename S>
Tensor<S> with_zero_reference_frame(const Tensor<S>& video) {
  Shape one = video.shape();
  one[0] = 1;
  return concat_leading(Tensor<S>(one), video);
}

template <typename T, typename S>
FusedInput<T> cast_fused(const FusedInput<S>& in) {
  FusedInput<T> out;
  out.tensor = in.tensor.template cast<T>();
  out.attention = in.attention;
  out.loss_mask = in.loss_mask;
  out.ref_position = in.ref_position;
  out.layout = in.layout;
  out.groups = in.groups;
  return out;
}

std::vector<Mat<float>*> pointers(DenoiserParams<float>& p) {
  std::vector<Mat<float>*> out;
  p.visit([&](const std::string&, Mat<float>& m, bool) { out.push_back(&m); });
  return out;
}

}  // namespace

std::optional<TrainingSample<float>> prepare_sample(const SubjectRecord& rec, const TrainConfig& cfg,
                                                    const AugmentConfig& augment, Index patch,
                                                    Rng& rng) {
  require(rec.clip != nullptr, ErrorCode::kValue, "record has no clip", rec.clip_id);
  const VideoClip& clip = *rec.clip;
  check_same_dims(clip, rec.mask);
  const Index T = clip.frames(), H = clip.height(), W = clip.width();
  std::uniform_int_distribution<Index> pick(0, T - 1);
  const Index i = pick(rng);
  if (rec.mask.empty_frame(i)) return std::nullopt;

  const ReferenceImage ref = augment_reference(extract_reference(clip, rec.mask, i), cfg.reference, rng);
  const AugmentResult aug = subswap::augment(rec.mask, AugmentMode::kTrain, augment, rng);

  const Tensor<float> x0 = to_model_space(encode(clip));
  const Tensor<float> agnostic = to_model_space(encode(make_agnostic(clip, aug.mask)));
  const Tensor<float> reference = to_model_space(encode_reference(ref, H, W));
  const Tensor<float> mask_latent = downsample_mask(aug.mask);
  std::optional<Tensor<float>> pose;
  if (rec.pose) pose = to_model_space(encode(render_pose(*rec.pose)));

  std::normal_distribution<float> normal(0.f, 1.f);
  Tensor<float> noise(x0.shape());
  for (Index k = 0; k < noise.size(); ++k) noise.array()(k) = normal(rng);
  std::uniform_real_distribution<float> unit(0.f, 1.f);
  const float t = unit(rng);
  const FlowPair<float> flow = flow_target(x0, noise, t);

  FusionInputs<float> in;
  in.noisy = &flow.x_t;
  in.clean = &x0;
  in.agnostic = &agnostic;
  in.pose = pose ? &*pose : nullptr;
  in.mask = &mask_latent;
  in.reference = &reference;

  TrainingSample<float> s;
  s.fused = assemble(in, FusionConfig{cfg.dummy_source, patch});
  s.target = with_zero_reference_frame(flow.target);
  s.subject = broadcast_mask(with_zero_reference_frame(downsample_mask(rec.mask)),
                             x0.dim(1));
  LossWeights<float> lw = loss_weights(s.subject, s.fused.loss_mask, cfg.lambda);
  s.weights = std::move(lw.w);
  s.e = lw.e;
  s.e_s = lw.e_s;
  s.t = t;
  s.frame_index = i;
  return s;
}

RmsProp::RmsProp(const DenoiserParams<float>& like, double decay, double eps)
    : second_(like.zeros_like()), decay_(decay), eps_(eps) {}

void RmsProp::step(DenoiserParams<float>& params, DenoiserParams<float>& grad, double lr,
                   Trainable trainable) {
  ++steps_;
  const auto g = pointers(grad);
  const auto v = pointers(second_);
  const float decay = static_cast<float>(decay_);
  const float correction = static_cast<float>(1.0 - std::pow(decay_, static_cast<double>(steps_)));
  const float rate = static_cast<float>(lr), eps = static_cast<float>(eps_);
  std::size_t i = 0;
  params.visit([&](const std::string&, Mat<float>& p, bool attn) {
    Mat<float>& gi = *g[i];
    Mat<float>& vi = *v[i];
    ++i;
    if (trainable == Trainable::kSelfAttention && !attn) return;
    vi.array() = decay * vi.array() + (1.f - decay) * gi.array().square();
    p.array() -= rate * gi.array() / ((vi.array() / correction).sqrt() + eps);
  });
}

TrainState init_train_state(const DenoiserConfig& model_cfg, const TrainConfig& cfg,
                            std::uint64_t seed) {
  cfg.validate();
  TrainState s{Denoiser<float>(model_cfg), RmsProp(), Rng(seed), 0, 0};
  s.optimizer = RmsProp(s.model.params(), cfg.rms_decay, cfg.rms_eps);
  return s;
}

StepReport training_step_on(const std::vector<const SubjectRecord*>& batch, TrainState& state,
                            const TrainConfig& cfg, const AugmentConfig& augment) {
  StepReport rep;
  DenoiserParams<float> grad = state.model.params().zeros_like();
  for (const SubjectRecord* rec : batch) {
    auto sample = prepare_sample(*rec, cfg, augment, state.model.config().patch, state.rng);
    if (!sample) {
      ++rep.skipped;
      continue;
    }
    typename Denoiser<float>::Tape tape;
    const Tensor<float> pred = state.model.forward(sample->fused, sample->t, &tape);
    Tensor<float> dpred;
    rep.l_final += sample_loss(pred, sample->target, sample->weights, &dpred);
    double pt = 0, rw = 0;
    for (Index k = 0; k < pred.size(); ++k) {
      if (k < pred.stride(0)) continue;  // reference frame
      const double d = static_cast<double>(pred.array()(k) - sample->target.array()(k));
      pt += d * d;
      if (sample->subject.array()(k) != 0.f) rw += d * d;
    }
    rep.l_pt += pt / static_cast<double>(sample->e);
    rep.l_rw += sample->e_s > 0 ? rw / static_cast<double>(sample->e_s) : 0.0;
    state.model.backward(tape, dpred, grad);
    ++rep.used;
  }
  state.skipped += rep.skipped;
  ++state.step;
  if (rep.used == 0) return rep;
  const float inv = 1.f / static_cast<float>(rep.used);
  grad.visit([&](const std::string&, Mat<float>& m, bool) { m *= inv; });
  state.optimizer.step(state.model.params(), grad, cfg.learning_rate, cfg.trainable);
  const double n = static_cast<double>(rep.used);
  rep.l_final /= n;
  rep.l_pt /= n;
  rep.l_rw /= n;
  return rep;
}

StepReport training_step(const std::vector<SubjectRecord>& data, TrainState& state,
                         const TrainConfig& cfg, const AugmentConfig& augment) {
  require(!data.empty(), ErrorCode::kValue, "training set is empty");
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<const SubjectRecord*> batch;
  for (Index b = 0; b < cfg.batch; ++b) batch.push_back(&data[pick(state.rng)]);
  return training_step_on(batch, state, cfg, augment);
}

TrainResult train(const std::vector<SubjectRecord>& data, TrainState& state, const TrainConfig& cfg,
                  const AugmentConfig& augment, const StepCallback& on_step) {
  cfg.validate();
  TrainResult out;
  const auto start = std::chrono::steady_clock::now();
  for (Index s = 0; s < cfg.steps; ++s) {
    out.history.push_back(training_step(data, state, cfg, augment));
    if (on_step) on_step(s, out.history.back());
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::string loss_csv(const std::vector<StepReport>& history) {
  std::ostringstream os;
  os << "step,l_final,l_pt,l_rw,used,skipped\n";
  char line[160];
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& r = history[i];
    std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g,%lld,%lld\n", i, r.l_final, r.l_pt,
                  r.l_rw, static_cast<long long>(r.used), static_cast<long long>(r.skipped));
    os << line;
  }
  return os.str();
}

TrainingSample<double> cast_sample(const TrainingSample<float>& s) {
  TrainingSample<double> out;
  out.fused = cast_fused<double>(s.fused);
  out.target = s.target.cast<double>();
  out.weights = s.weights.cast<double>();
  out.subject = s.subject.cast<double>();
  out.t = static_cast<double>(s.t);
  out.e = s.e;
  out.e_s = s.e_s;
  out.frame_index = s.frame_index;
  return out;
}

GradCheckResult grad_check(const Denoiser<double>& model, const TrainingSample<double>& sample,
                           double eps, std::uint64_t seed, Index coords, double rel_floor) {
  require(eps >= 1e-5 && eps <= 1e-2, ErrorCode::kConfig, "grad-check eps must be in [1e-5,1e-2]");
  typename Denoiser<double>::Tape tape;
  const Tensor<double> pred = model.forward(sample.fused, sample.t, &tape);
  Tensor<double> dpred;
  sample_loss(pred, sample.target, sample.weights, &dpred);
  DenoiserParams<double> grad = model.params().zeros_like();
  model.backward(tape, dpred, grad);

  Denoiser<double> probe = model;
  std::vector<Mat<double>*> p, g;
  probe.params().visit([&](const std::string&, Mat<double>& m, bool) { p.push_back(&m); });
  grad.visit([&](const std::string&, Mat<double>& m, bool) { g.push_back(&m); });
  auto loss = [&] {
    return sample_loss(probe.forward(sample.fused, sample.t), sample.target, sample.weights);
  };

  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick_tensor(0, p.size() - 1);
  GradCheckResult out;
  for (Index c = 0; c < coords; ++c) {
    const std::size_t ti = pick_tensor(rng);
    std::uniform_int_distribution<Index> pick(0, p[ti]->size() - 1);
    const Index k = pick(rng);
    double& w = p[ti]->data()[k];
    const double orig = w;
    w = orig + eps;
    const double up = loss();
    w = orig - eps;
    const double down = loss();
    w = orig;
    const double numeric = (up - down) / (2 * eps);
    const double analytic = g[ti]->data()[k];
    const double abs_err = std::abs(numeric - analytic);
    const double rel = abs_err / std::max({std::abs(numeric), std::abs(analytic), rel_floor});
    out.max_abs_error = std::max(out.max_abs_error, abs_err);
    out.max_rel_error = std::max(out.max_rel_error, rel);
    ++out.coordinates;
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const Denoiser<float>& model, Index step,
                     const nlohmann::json& extra) {
  std::filesystem::create_directories(dir / "weights");
  nlohmann::json names = nlohmann::json::array();
  auto& params = const_cast<DenoiserParams<float>&>(model.params());
  params.visit([&](const std::string& name, Mat<float>& m, bool) {
    Tensor<float> t(Shape{m.rows(), m.cols()});
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) t(i, j) = m(i, j);
    save_tensor(dir / "weights" / (name + ".vten"), t);
    names.push_back(name);
  });
  nlohmann::json meta = {{"format", "subswap-checkpoint"},
                         {"version", 1},
                         {"model", model.config().to_json()},
                         {"step", step},
                         {"parameters", names},
                         {"extra", extra}};
  write_text(dir / "meta.json", meta.dump(2) + "\n");
}

Denoiser<float> load_checkpoint(const std::filesystem::path& dir, CheckpointMeta* meta_out) {
  const auto meta_path = dir / "meta.json";
  require(std::filesystem::exists(meta_path), ErrorCode::kMissingWeights,
          "checkpoint metadata not found", meta_path.string());
  const nlohmann::json meta = read_json(meta_path);
  require(meta.value("format", "") == "subswap-checkpoint", ErrorCode::kMissingWeights,
          "not a subswap checkpoint", meta_path.string());
  const DenoiserConfig cfg = DenoiserConfig::from_json(meta.at("model"));
  Denoiser<float> model(cfg);
  model.params().visit([&](const std::string& name, Mat<float>& m, bool) {
    const auto path = dir / "weights" / (name + ".vten");
    require(std::filesystem::exists(path), ErrorCode::kMissingWeights, "weight file missing",
            path.string());
    const Tensor<float> t = load_tensor<float>(path);
    require(t.rank() == 2 && t.dim(0) == m.rows() && t.dim(1) == m.cols(), ErrorCode::kShape,
            "weight dims do not match the model config", path.string());
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = t(i, j);
  });
  if (meta_out) {
    meta_out->model = cfg;
    meta_out->step = meta.value("step", Index{0});
    meta_out->extra = meta.value("extra", nlohmann::json::object());
  }
  return model;
}

}  // namespace subswap
