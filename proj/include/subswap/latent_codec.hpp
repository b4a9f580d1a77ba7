#pragma once

#include <json.hpp>

#include "subswap/tensor.hpp"
#include "subswap/types.hpp"

namespace subswap {

/// Compression contract of the stand-in video autoencoder: pixel frame 0 is a
/// latent frame of its own, every following group of four pixel frames forms
/// one latent frame, and each 8x8 neighbourhood folds into channels.
struct CodecSpec {
  static constexpr Index kTemporal = 4;
  static constexpr Index kSpatial = 8;
  static constexpr Index kLatentChannels = kPixelChannels * kTemporal * kSpatial * kSpatial;

  nlohmann::json to_json() const;
};

/// (f', C, h, w) tensor in latent space.
using LatentBlock = Tensor<float>;

constexpr Index latent_frames(Index pixel_frames) { return (pixel_frames - 1) / 4 + 1; }

/// Latent channel of pixel channel c, temporal sub-slot s, and offset (dy, dx).
constexpr Index latent_channel(Index c, Index s, Index dy, Index dx) {
  return (c * CodecSpec::kTemporal + s) * CodecSpec::kSpatial * CodecSpec::kSpatial +
         dy * CodecSpec::kSpatial + dx;
}

/// Temporal sub-slot a latent channel came from.
constexpr Index latent_channel_slot(Index channel) {
  return (channel / (CodecSpec::kSpatial * CodecSpec::kSpatial)) % CodecSpec::kTemporal;
}

/// Pixel frame feeding slot s of latent frame k (frame 0 replicates into all slots).
constexpr Index source_frame(Index k, Index s) { return k == 0 ? 0 : 4 * k - 3 + s; }

void check_clip_length(Index frames);

/// Packs (T, 3, H, W) pixels into (f', 768, H/8, W/8).
template <typename Scalar>
Tensor<Scalar> pack_pixels(const Tensor<Scalar>& px) {
  require(px.rank() == 4 && px.dim(1) == kPixelChannels, ErrorCode::kShape,
          "pixels must be (T,3,H,W)", shape_string(px.shape()));
  check_clip_length(px.dim(0));
  const Index h = px.dim(2), w = px.dim(3);
  require(h % 8 == 0 && w % 8 == 0, ErrorCode::kShape, "spatial dims must be multiples of 8",
          shape_string(px.shape()));
  const Index f = latent_frames(px.dim(0)), lh = h / 8, lw = w / 8;
  Tensor<Scalar> out(Shape{f, CodecSpec::kLatentChannels, lh, lw});
  for (Index k = 0; k < f; ++k)
    for (Index c = 0; c < kPixelChannels; ++c)
      for (Index s = 0; s < 4; ++s) {
        const Index t = source_frame(k, s);
        for (Index dy = 0; dy < 8; ++dy)
          for (Index dx = 0; dx < 8; ++dx) {
            const Index ch = latent_channel(c, s, dy, dx);
            for (Index y = 0; y < lh; ++y)
              for (Index x = 0; x < lw; ++x) out(k, ch, y, x) = px(t, c, 8 * y + dy, 8 * x + dx);
          }
      }
  return out;
}

/// Exact inverse of pack_pixels; frame 0 is read from slot 0.
template <typename Scalar>
Tensor<Scalar> unpack_pixels(const Tensor<Scalar>& lat) {
  require(lat.rank() == 4 && lat.dim(1) == CodecSpec::kLatentChannels, ErrorCode::kShape,
          "latent must be (f',768,h,w)", shape_string(lat.shape()));
  const Index f = lat.dim(0), lh = lat.dim(2), lw = lat.dim(3);
  const Index frames = 4 * (f - 1) + 1;
  Tensor<Scalar> out(Shape{frames, kPixelChannels, 8 * lh, 8 * lw});
  for (Index k = 0; k < f; ++k)
    for (Index c = 0; c < kPixelChannels; ++c)
      for (Index s = 0; s < (k == 0 ? 1 : 4); ++s) {
        const Index t = source_frame(k, s);
        for (Index dy = 0; dy < 8; ++dy)
          for (Index dx = 0; dx < 8; ++dx) {
            const Index ch = latent_channel(c, s, dy, dx);
            for (Index y = 0; y < lh; ++y)
              for (Index x = 0; x < lw; ++x) out(t, c, 8 * y + dy, 8 * x + dx) = lat(k, ch, y, x);
          }
      }
  return out;
}

LatentBlock encode(const VideoClip& clip);

/// Throws kValue when decoded pixels leave [0,1]; use decode_clamped for
/// sampler output.
VideoClip decode(const LatentBlock& latent);
VideoClip decode_clamped(const LatentBlock& latent);

/// Aspect-preserving resize of the matted subject onto a zero canvas, centred.
ReferenceImage letterbox(const ReferenceImage& ref, Index target_h, Index target_w);

/// Letterboxes the (alpha-multiplied) reference and encodes it as one frame.
LatentBlock encode_reference(const ReferenceImage& ref, Index target_h, Index target_w);

/// (T,H,W) mask -> (f', 4, H/8, W/8): temporal groups go to channels, 8x8
/// max-pooling in space.
LatentBlock downsample_mask(const MaskSequence& mask);

/// Nearest-neighbour inverse of downsample_mask, used for coverage checks.
MaskSequence upsample_mask_latent(const LatentBlock& latent);

}  // namespace subswap
