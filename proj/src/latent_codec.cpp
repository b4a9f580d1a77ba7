#include "subswap/latent_codec.hpp"

#include <algorithm>
#include <cmath>

#include "subswap/resample.hpp"

namespace subswap {

nlohmann::json CodecSpec::to_json() const {
  return {{"kind", "space_to_depth"},
          {"temporal_factor", kTemporal},
          {"spatial_factor", kSpatial},
          {"latent_channels", kLatentChannels},
          {"pixel_range", {0.0, 1.0}}};
}

void check_clip_length(Index frames) {
  require(frames >= 1 && (frames - 1) % 4 == 0, ErrorCode::kInvalidClipLength,
          "invalid clip length", std::to_string(frames));
}

LatentBlock encode(const VideoClip& clip) { return pack_pixels(clip.tensor()); }

VideoClip decode(const LatentBlock& latent) { return VideoClip(unpack_pixels(latent)); }

VideoClip decode_clamped(const LatentBlock& latent) {
  Tensor<float> px = unpack_pixels(latent);
  px.array() = px.array().max(0.f).min(1.f);
  return VideoClip(std::move(px));
}

ReferenceImage letterbox(const ReferenceImage& ref, Index target_h, Index target_w) {
  ref.validate();
  require(ref.height() > 0 && ref.width() > 0, ErrorCode::kShape, "degenerate reference",
          shape_string(ref.image.shape()));
  require(target_h > 0 && target_w > 0, ErrorCode::kShape, "degenerate letterbox target");
  const double s = std::min(static_cast<double>(target_h) / static_cast<double>(ref.height()),
                            static_cast<double>(target_w) / static_cast<double>(ref.width()));
  const Index nh = std::clamp<Index>(std::lround(static_cast<double>(ref.height()) * s), 1, target_h);
  const Index nw = std::clamp<Index>(std::lround(static_cast<double>(ref.width()) * s), 1, target_w);
  const Index oy = (target_h - nh) / 2, ox = (target_w - nw) / 2;
  const float sy = static_cast<float>(ref.height()) / static_cast<float>(nh);
  const float sx = static_cast<float>(ref.width()) / static_cast<float>(nw);
  AffineMap m;
  m << sx, 0.f, -sx * static_cast<float>(ox), 0.f, sy, -sy * static_cast<float>(oy);
  ReferenceImage out = warp_reference(ref, m, target_h, target_w);
  // Clear anything the bilinear footprint leaked outside the placed region.
  for (Index y = 0; y < target_h; ++y)
    for (Index x = 0; x < target_w; ++x) {
      if (y >= oy && y < oy + nh && x >= ox && x < ox + nw) continue;
      (*out.alpha)(y, x) = 0;
      for (Index c = 0; c < 3; ++c) out.image(c, y, x) = 0.f;
    }
  return out;
}

LatentBlock encode_reference(const ReferenceImage& ref, Index target_h, Index target_w) {
  const ReferenceImage boxed = letterbox(ref, target_h, target_w);
  Tensor<float> px(Shape{1, kPixelChannels, target_h, target_w});
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < target_h; ++y)
      for (Index x = 0; x < target_w; ++x)
        px(0, c, y, x) = (*boxed.alpha)(y, x) ? boxed.image(c, y, x) : 0.f;
  return encode(VideoClip(std::move(px)));
}

LatentBlock downsample_mask(const MaskSequence& mask) {
  check_clip_length(mask.frames());
  require(mask.height() % 8 == 0 && mask.width() % 8 == 0, ErrorCode::kShape,
          "mask dims must be multiples of 8", shape_string(mask.tensor().shape()));
  const Index f = latent_frames(mask.frames()), lh = mask.height() / 8, lw = mask.width() / 8;
  LatentBlock out(Shape{f, CodecSpec::kTemporal, lh, lw});
  for (Index k = 0; k < f; ++k)
    for (Index s = 0; s < 4; ++s) {
      const Index t = source_frame(k, s);
      for (Index y = 0; y < mask.height(); ++y)
        for (Index x = 0; x < mask.width(); ++x)
          if (mask(t, y, x)) out(k, s, y / 8, x / 8) = 1.f;
    }
  return out;
}

MaskSequence upsample_mask_latent(const LatentBlock& latent) {
  require(latent.rank() == 4 && latent.dim(1) == CodecSpec::kTemporal, ErrorCode::kShape,
          "mask latent must be (f',4,h,w)", shape_string(latent.shape()));
  const Index f = latent.dim(0);
  MaskBuilder out(4 * (f - 1) + 1, 8 * latent.dim(2), 8 * latent.dim(3));
  for (Index k = 0; k < f; ++k)
    for (Index s = 0; s < (k == 0 ? 1 : 4); ++s) {
      const Index t = source_frame(k, s);
      for (Index y = 0; y < out.height(); ++y)
        for (Index x = 0; x < out.width(); ++x)
          out(t, y, x) = latent(k, s, y / 8, x / 8) > 0.5f ? 1 : 0;
    }
  return std::move(out).build();
}

}  // namespace subswap
