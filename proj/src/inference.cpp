#include "subswap/inference.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "subswap/condition_fusion.hpp"
#include "subswap/latent_codec.hpp"
#include "subswap/training.hpp"

namespace subswap {

nlohmann::json Tunnel::to_json() const {
  return {{"active", active},
          {"box", {{"x0", box.x0}, {"y0", box.y0}, {"x1", box.x1}, {"y1", box.y1}}},
          {"area_ratio", area_ratio},
          {"threshold", threshold},
          {"margin", margin}};
}

namespace {

// Snaps [lo, hi) outward to multiples of `snap` inside [0, limit); when the
// limit cuts the span short, the span grows on the other side instead.
std::pair<Index, Index> snap_span(double lo, double hi, Index limit, Index snap) {
  Index a = std::max<Index>(0, static_cast<Index>(std::floor(lo)));
  Index b = std::min<Index>(limit, static_cast<Index>(std::ceil(hi)));
  a = (a / snap) * snap;
  b = std::min(limit, ((b + snap - 1) / snap) * snap);
  const Index len = std::min(limit, ((b - a + snap - 1) / snap) * snap);
  if (b - a < len) {
    if (a + len <= limit)
      b = a + len;
    else
      a = std::max<Index>(0, b - len);
  }
  return {a, b};
}

VideoClip crop_clip(const VideoClip& clip, const BBox& box) {
  Tensor<float> out(Shape{clip.frames(), kPixelChannels, box.height(), box.width()});
  for (Index t = 0; t < clip.frames(); ++t)
    for (Index c = 0; c < kPixelChannels; ++c)
      for (Index y = 0; y < box.height(); ++y)
        for (Index x = 0; x < box.width(); ++x) out(t, c, y, x) = clip(t, c, box.y0 + y, box.x0 + x);
  return VideoClip(std::move(out));
}

MaskSequence crop_mask(const MaskSequence& mask, const BBox& box) {
  MaskBuilder out(mask.frames(), box.height(), box.width());
  for (Index t = 0; t < mask.frames(); ++t)
    for (Index y = 0; y < box.height(); ++y)
      for (Index x = 0; x < box.width(); ++x) out(t, y, x) = mask(t, box.y0 + y, box.x0 + x);
  return std::move(out).build();
}

MaskSequence embed_mask(const MaskSequence& crop, const BBox& box, Index h, Index w) {
  MaskBuilder out(crop.frames(), h, w);
  for (Index t = 0; t < crop.frames(); ++t)
    for (Index y = 0; y < box.height(); ++y)
      for (Index x = 0; x < box.width(); ++x) out(t, box.y0 + y, box.x0 + x) = crop(t, y, x);
  return std::move(out).build();
}

VideoClip slice_clip(const VideoClip& clip, Index begin, Index end) {
  return VideoClip(slice_leading(clip.tensor(), begin, end));
}

MaskSequence slice_mask(const MaskSequence& mask, Index begin, Index end) {
  return MaskSequence(slice_leading(mask.tensor(), begin, end));
}

// Repeats the last frame until the clip has `frames` frames.
template <typename S>
Tensor<S> pad_frames(const Tensor<S>& t, Index frames) {
  Tensor<S> out = t;
  while (out.dim(0) < frames) out = concat_leading(out, slice_leading(t, t.dim(0) - 1, t.dim(0)));
  return out;
}

void write_noisy(FusedInput<float>& fused, const Tensor<float>& x) {
  for (Index k = 0; k < x.dim(0); ++k)
    detail::copy_group(fused.tensor, k + 1, fused.groups.noisy(), x, k);
}

}  // namespace

Tunnel plan_tunnel(const MaskSequence& mask, Index height, Index width, const TunnelConfig& cfg) {
  require(mask.height() == height && mask.width() == width, ErrorCode::kShape,
          "mask dims differ from the frame dims");
  const auto ub = union_bbox(mask);
  require(ub.has_value(), ErrorCode::kNoSubject, "no subject");
  require(cfg.snap >= 1 && cfg.margin >= 1.0, ErrorCode::kConfig,
          "tunnel snap must be >= 1 and margin >= 1");
  Tunnel tn;
  tn.threshold = cfg.threshold;
  tn.margin = cfg.margin;
  double area = 0;
  for (Index t = 0; t < mask.frames(); ++t) area += static_cast<double>(mask.count(t));
  tn.area_ratio = area / static_cast<double>(mask.frames() * height * width);
  tn.active = tn.area_ratio < cfg.threshold;
  if (!tn.active) {
    tn.box = {0, 0, width, height};
    return tn;
  }
  const double cx = 0.5 * static_cast<double>(ub->x0 + ub->x1);
  const double cy = 0.5 * static_cast<double>(ub->y0 + ub->y1);
  const double hw = 0.5 * cfg.margin * static_cast<double>(ub->width());
  const double hh = 0.5 * cfg.margin * static_cast<double>(ub->height());
  const auto [x0, x1] = snap_span(cx - hw, cx + hw, width, cfg.snap);
  const auto [y0, y1] = snap_span(cy - hh, cy + hh, height, cfg.snap);
  tn.box = {x0, y0, x1, y1};
  return tn;
}

Tensor<float> feather_alpha(const MaskSequence& aug_mask, const BBox& box, Index feather) {
  require(feather >= 0, ErrorCode::kConfig, "feather radius must be >= 0");
  require(box.valid_in(aug_mask.height(), aug_mask.width()), ErrorCode::kShape,
          "tunnel box outside the frame");
  const Index T = aug_mask.frames(), bh = box.height(), bw = box.width();
  Tensor<float> alpha(Shape{T, bh, bw});
  Eigen::ArrayXXd sat(bh + 1, bw + 1);
  for (Index t = 0; t < T; ++t) {
    if (feather == 0) {
      for (Index y = 0; y < bh; ++y)
        for (Index x = 0; x < bw; ++x) alpha(t, y, x) = aug_mask(t, box.y0 + y, box.x0 + x) ? 1.f : 0.f;
      continue;
    }
    sat.setZero();
    for (Index y = 0; y < bh; ++y)
      for (Index x = 0; x < bw; ++x)
        sat(y + 1, x + 1) = (aug_mask(t, box.y0 + y, box.x0 + x) ? 1.0 : 0.0) + sat(y, x + 1) +
                            sat(y + 1, x) - sat(y, x);
    for (Index y = 0; y < bh; ++y)
      for (Index x = 0; x < bw; ++x) {
        const Index ya = std::max<Index>(0, y - feather), yb = std::min(bh, y + feather + 1);
        const Index xa = std::max<Index>(0, x - feather), xb = std::min(bw, x + feather + 1);
        const double sum = sat(yb, xb) - sat(ya, xb) - sat(yb, xa) + sat(ya, xa);
        const double n = static_cast<double>((yb - ya) * (xb - xa));
        alpha(t, y, x) = static_cast<float>(std::clamp(sum / n, 0.0, 1.0));
      }
  }
  return alpha;
}

VideoClip blend_back(const VideoClip& source, const VideoClip& generated, const Tunnel& tunnel,
                     const MaskSequence& aug_mask, Index feather) {
  check_same_dims(source, aug_mask);
  const BBox& box = tunnel.box;
  require(box.valid_in(source.height(), source.width()), ErrorCode::kShape,
          "tunnel box outside the frame");
  require(generated.frames() == source.frames() && generated.height() == box.height() &&
              generated.width() == box.width(),
          ErrorCode::kShape, "generated clip does not match the tunnel box",
          shape_string(generated.tensor().shape()));
  const Tensor<float> alpha = feather_alpha(aug_mask, box, feather);
  Tensor<float> out = source.tensor();
  for (Index t = 0; t < source.frames(); ++t)
    for (Index y = 0; y < box.height(); ++y)
      for (Index x = 0; x < box.width(); ++x) {
        const float a = alpha(t, y, x);
        if (a == 0.f) continue;
        for (Index c = 0; c < kPixelChannels; ++c) {
          float& o = out(t, c, box.y0 + y, box.x0 + x);
          const float g = generated(t, c, y, x);
          o = a == 1.f ? g : o + a * (g - o);
        }
      }
  return VideoClip(std::move(out));
}

std::vector<Segment> schedule_segments(Index total_frames, Index segment_length) {
  const Index L = segment_length, T = total_frames;
  require(L >= 5 && (L - 1) % 4 == 0, ErrorCode::kConfig,
          "segment length must be >= 5 and 1 mod 4", std::to_string(L));
  require(T >= 1, ErrorCode::kInvalidClipLength, "invalid clip length", std::to_string(T));
  if (T >= 2 && T <= 4) return {{0, 4}};  // one minimal segment over frames padded past T-1
  const Index first = std::min(L, (T - 1) / 4 * 4 + 1);
  std::vector<Segment> segs{{0, first - 1}};
  while (segs.back().second < T - 1) {
    const Index s = segs.back().second;
    if (s + L - 1 <= T - 1) {
      segs.emplace_back(s, s + L - 1);
      continue;
    }
    const Index len = (T - s + 2) / 4 * 4 + 1;  // smallest 1 mod 4 length >= T - s
    require(T - len >= 0, ErrorCode::kInvalidClipLength,
            "no segment schedule with lengths 1 mod 4 exists", std::to_string(T));
    segs.emplace_back(T - len, T - 1);
  }
  return segs;
}

void SwapRequest::validate() const {
  check_same_dims(clip, mask);
  require(!mask.all_empty(), ErrorCode::kNoSubject, "no subject");
  reference.validate();
  if (pose) {
    pose->validate();
    require(pose->height == clip.height() && pose->width == clip.width() &&
                pose->frame_count() == clip.frames(),
            ErrorCode::kShape, "pose does not match the clip");
  }
  if (first_frame_override) {
    const auto& o = *first_frame_override;
    require(o.rank() == 3 && o.dim(0) == kPixelChannels && o.dim(1) == clip.height() &&
                o.dim(2) == clip.width(),
            ErrorCode::kShape, "first-frame override does not match the clip",
            shape_string(o.shape()));
  }
  require(sampler.steps >= 1, ErrorCode::kConfig, "sampler steps must be >= 1");
  require(sampler.feather >= 0, ErrorCode::kConfig, "feather radius must be >= 0");
}

SwapResult run_swap(const SwapRequest& req, const Denoiser<float>& model) {
  const auto start_time = std::chrono::steady_clock::now();
  require(model.params().w_in.size() > 0, ErrorCode::kMissingWeights, "model has no weights");
  req.validate();
  const DenoiserConfig& mc = model.config();
  require(mc.latent_channels == CodecSpec::kLatentChannels, ErrorCode::kShape,
          "model latent channels do not match the codec");
  const Index T = req.clip.frames(), H = req.clip.height(), W = req.clip.width();
  const SamplerConfig& sc = req.sampler;
  Rng rng(req.seed);

  SwapResult res;
  if (sc.use_tunnel) {
    res.tunnel = plan_tunnel(req.mask, H, W, sc.tunnel);
  } else {
    res.tunnel.box = {0, 0, W, H};
    res.tunnel.threshold = sc.tunnel.threshold;
    res.tunnel.margin = sc.tunnel.margin;
  }
  const BBox box = res.tunnel.box;
  require(box.height() % (8 * mc.patch) == 0 && box.width() % (8 * mc.patch) == 0,
          ErrorCode::kShape, "working region must be a multiple of 8 * patch",
          std::to_string(box.height()) + "x" + std::to_string(box.width()));

  // Very short clips are padded with their last frame up to one minimal segment.
  const Index Tp = (T >= 2 && T <= 4) ? 5 : T;
  const VideoClip clip(pad_frames(req.clip.tensor(), Tp));
  const MaskSequence mask(pad_frames(req.mask.tensor(), Tp));
  const AugmentResult aug = augment(crop_mask(mask, box), AugmentMode::kInference, req.augment, rng);
  const MaskSequence aug_full = embed_mask(aug.mask, box, H, W);
  std::optional<VideoClip> pose_crop;
  if (req.pose) pose_crop = crop_clip(VideoClip(pad_frames(render_pose(*req.pose).tensor(), Tp)), box);
  const Tensor<float> ref_latent =
      to_model_space(encode_reference(req.reference, box.height(), box.width()));
  res.segments = schedule_segments(Tp, sc.segment_length);

  Tensor<float> out = clip.tensor();
  Index produced = -1;
  nlohmann::json seg_times = nlohmann::json::array();
  std::normal_distribution<float> normal(0.f, 1.f);
  for (std::size_t k = 0; k < res.segments.size(); ++k) {
    const auto seg_start = std::chrono::steady_clock::now();
    const auto [s, e] = res.segments[k];
    const VideoClip src = slice_clip(VideoClip(out), s, e + 1);
    const VideoClip src_crop = crop_clip(src, box);
    const MaskSequence seg_aug = slice_mask(aug.mask, s, e + 1);
    const MaskSequence seg_aug_full = slice_mask(aug_full, s, e + 1);

    const Tensor<float> agnostic = to_model_space(encode(make_agnostic(src_crop, seg_aug)));
    const Tensor<float> mask_latent = downsample_mask(seg_aug);
    std::optional<Tensor<float>> pose_latent;
    if (pose_crop) pose_latent = to_model_space(encode(slice_clip(*pose_crop, s, e + 1)));

    // Dummy reference: latent of the segment's first frame (or the override).
    Tensor<float> first = slice_leading(src_crop.tensor(), 0, 1);
    if (k == 0 && req.first_frame_override) {
      const VideoClip full(Tensor<float>(Shape{1, kPixelChannels, H, W},
                                         req.first_frame_override->array()));
      first = crop_clip(full, box).tensor();
    }
    Tensor<float> clean(agnostic.shape());
    clean.slab(0) = to_model_space(encode(VideoClip(first))).slab(0);

    Tensor<float> x(agnostic.shape());
    for (Index i = 0; i < x.size(); ++i) x.array()(i) = normal(rng);

    FusionInputs<float> in;
    in.noisy = &x;
    in.clean = &clean;
    in.agnostic = &agnostic;
    in.pose = pose_latent ? &*pose_latent : nullptr;
    in.mask = &mask_latent;
    in.reference = &ref_latent;
    FusedInput<float> fused = assemble(in, FusionConfig{DummySource::kClean, mc.patch});
    const auto cache = model.build_ref_cache(fused);
    const float dt = 1.f / static_cast<float>(sc.steps);
    for (Index i = 0; i < sc.steps; ++i) {
      const float t = 1.f - static_cast<float>(i) * dt;
      write_noisy(fused, x);
      const Tensor<float> v = model.forward_video(fused, t, cache);
      x.array() -= dt * v.array();
    }
    const VideoClip generated = decode_clamped(from_model_space(x));
    const VideoClip blended = blend_back(src, generated, res.tunnel, seg_aug_full, sc.feather);
    for (Index j = std::max(s, produced + 1); j <= e; ++j)
      out.slab(j) = blended.tensor().slab(j - s);
    produced = e;
    seg_times.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - seg_start).count());
  }

  res.output = VideoClip(slice_leading(out, 0, T));
  res.aug_mask = slice_mask(aug_full, 0, T);
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& [s, e] : res.segments) segs.push_back({s, e});
  res.report = {
      {"tunnel", res.tunnel.to_json()},
      {"segments", segs},
      {"padded_frames", Tp - T},
      {"augment", aug.record.to_json()},
      {"steps", sc.steps},
      {"feather", sc.feather},
      {"seed", req.seed},
      {"first_frame_override", req.first_frame_override.has_value()},
      {"timings",
       {{"segments_s", seg_times},
        {"total_s",
         std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count()}}}};
  return res;
}

double masked_psnr(const VideoClip& a, const VideoClip& b, const MaskSequence& mask) {
  check_same_dims(a, mask);
  check_same_dims(b, mask);
  double se = 0;
  Index n = 0;
  for (Index t = 0; t < a.frames(); ++t)
    for (Index y = 0; y < a.height(); ++y)
      for (Index x = 0; x < a.width(); ++x) {
        if (!mask(t, y, x)) continue;
        for (Index c = 0; c < kPixelChannels; ++c) {
          const double d = static_cast<double>(a(t, c, y, x)) - static_cast<double>(b(t, c, y, x));
          se += d * d;
          ++n;
        }
      }
  require(n > 0, ErrorCode::kNoSubject, "no subject");
  if (se == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(static_cast<double>(n) / se);
}

}  // namespace subswap
