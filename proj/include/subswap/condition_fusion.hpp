#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "subswap/latent_codec.hpp"
#include "subswap/tensor.hpp"

namespace subswap {

enum class DummySource { kClean, kNoisy };

struct FusionConfig {
  DummySource dummy_source = DummySource::kClean;
  Index patch = 2;
};

/// Token indexing over the fused tensor: one frame of tokens per latent frame,
/// reference frame first.
struct TokenLayout {
  Index frames = 1;  // including the reference frame
  Index latent_h = 0, latent_w = 0;
  Index patch = 2;

  TokenLayout() = default;
  TokenLayout(Index frames_with_ref, Index lh, Index lw, Index patch_edge);

  Index grid_h() const { return latent_h / patch; }
  Index grid_w() const { return latent_w / patch; }
  Index tokens_per_frame() const { return grid_h() * grid_w(); }
  Index total_tokens() const { return frames * tokens_per_frame(); }
  Index ref_tokens() const { return tokens_per_frame(); }
  Index video_tokens() const { return total_tokens() - ref_tokens(); }
};

using AttentionMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// (q, k) allowed iff q is a video token, or both q and k are reference tokens.
AttentionMask build_attention_mask(const TokenLayout& layout);

/// Fully-connected mask, the ablation counterpart of build_attention_mask.
AttentionMask full_attention_mask(const TokenLayout& layout);

struct KvPartition {
  std::vector<Index> reference;
  std::vector<Index> video;
};

KvPartition kv_partition(const TokenLayout& layout);

/// Channel groups of the fused tensor, in order.
struct ChannelGroups {
  Index latent_channels = CodecSpec::kLatentChannels;
  Index noisy() const { return 0; }
  Index dummy() const { return latent_channels; }
  Index agnostic() const { return 2 * latent_channels; }
  Index pose() const { return 3 * latent_channels; }
  Index mask() const { return 4 * latent_channels; }
  Index total() const { return 4 * latent_channels + CodecSpec::kTemporal; }
};

template <typename Scalar>
struct FusedInput {
  Tensor<Scalar> tensor;  // (f'+1, 4C+4, h, w)
  AttentionMask attention;
  std::vector<bool> loss_mask;  // per fused frame; false at ref_position
  Index ref_position = 0;
  TokenLayout layout;
  ChannelGroups groups;

  nlohmann::json manifest() const;
};

/// Streams feeding assemble(); `clean` is required when the dummy reference
/// is taken from the clean latent, `pose` may be empty (zero pose stream).
template <typename Scalar>
struct FusionInputs {
  const Tensor<Scalar>* noisy = nullptr;
  const Tensor<Scalar>* clean = nullptr;
  const Tensor<Scalar>* agnostic = nullptr;
  const Tensor<Scalar>* pose = nullptr;
  const Tensor<Scalar>* mask = nullptr;
  const Tensor<Scalar>* reference = nullptr;
};

/// Keeps latent frame 0 and zeroes frames 1..f'-1.
template <typename Scalar>
Tensor<Scalar> make_dummy_reference(const Tensor<Scalar>& video_latent) {
  require(video_latent.rank() == 4 && video_latent.dim(0) >= 1, ErrorCode::kShape,
          "latent must be (f',C,h,w)", shape_string(video_latent.shape()));
  Tensor<Scalar> out(video_latent.shape());
  out.slab(0) = video_latent.slab(0);
  return out;
}

/// Prepends the single-frame reference at temporal index 0.
template <typename Scalar>
Tensor<Scalar> concat_reference(const Tensor<Scalar>& stream, const Tensor<Scalar>& ref) {
  require(ref.rank() == 4 && ref.dim(0) == 1, ErrorCode::kShape,
          "reference latent must have one frame", shape_string(ref.shape()));
  require(stream.rank() == 4 && stream.dim(1) == ref.dim(1) && stream.dim(2) == ref.dim(2) &&
              stream.dim(3) == ref.dim(3),
          ErrorCode::kShape, "reference and stream dims differ",
          shape_string(stream.shape()) + " vs " + shape_string(ref.shape()));
  return concat_leading(ref, stream);
}

namespace detail {

template <typename Scalar>
void check_stream(const Tensor<Scalar>* t, const char* name, Index frames, Index channels,
                  Index lh, Index lw) {
  require(t != nullptr, ErrorCode::kShape, "missing stream", name);
  require(t->rank() == 4 && t->dim(0) == frames && t->dim(1) == channels && t->dim(2) == lh &&
              t->dim(3) == lw,
          ErrorCode::kShape, std::string("stream '") + name + "' has wrong dims", name);
}

template <typename Scalar>
void copy_group(Tensor<Scalar>& dst, Index dst_frame, Index channel_offset,
                const Tensor<Scalar>& src, Index src_frame) {
  const Index n = src.stride(0);
  dst.array().segment(dst.offset(dst_frame, channel_offset, 0, 0), n) = src.slab(src_frame);
}

}  // namespace detail

template <typename Scalar>
FusedInput<Scalar> assemble(const FusionInputs<Scalar>& in, const FusionConfig& cfg) {
  require(in.noisy != nullptr && in.noisy->rank() == 4, ErrorCode::kShape,
          "noisy stream missing or not rank 4", "noisy");
  const Index f = in.noisy->dim(0), c = in.noisy->dim(1), lh = in.noisy->dim(2),
              lw = in.noisy->dim(3);
  detail::check_stream(in.agnostic, "agnostic", f, c, lh, lw);
  if (in.pose) detail::check_stream(in.pose, "pose", f, c, lh, lw);
  detail::check_stream(in.mask, "mask", f, CodecSpec::kTemporal, lh, lw);
  detail::check_stream(in.reference, "reference", 1, c, lh, lw);
  const Tensor<Scalar>* dummy_src = in.noisy;
  if (cfg.dummy_source == DummySource::kClean) {
    detail::check_stream(in.clean, "clean", f, c, lh, lw);
    dummy_src = in.clean;
  }
  require(lh % cfg.patch == 0 && lw % cfg.patch == 0, ErrorCode::kShape,
          "latent dims must be divisible by the patch edge", shape_string(in.noisy->shape()));

  FusedInput<Scalar> out;
  out.groups.latent_channels = c;
  out.layout = TokenLayout(f + 1, lh, lw, cfg.patch);
  out.ref_position = 0;
  out.tensor = Tensor<Scalar>(Shape{f + 1, out.groups.total(), lh, lw});
  // Reference frame: noisy and dummy groups carry the reference; agnostic,
  // pose and mask groups stay zero.
  detail::copy_group(out.tensor, 0, out.groups.noisy(), *in.reference, 0);
  detail::copy_group(out.tensor, 0, out.groups.dummy(), *in.reference, 0);
  for (Index k = 0; k < f; ++k) {
    detail::copy_group(out.tensor, k + 1, out.groups.noisy(), *in.noisy, k);
    detail::copy_group(out.tensor, k + 1, out.groups.agnostic(), *in.agnostic, k);
    if (in.pose) detail::copy_group(out.tensor, k + 1, out.groups.pose(), *in.pose, k);
    detail::copy_group(out.tensor, k + 1, out.groups.mask(), *in.mask, k);
  }
  detail::copy_group(out.tensor, 1, out.groups.dummy(), *dummy_src, 0);
  out.attention = build_attention_mask(out.layout);
  out.loss_mask.assign(static_cast<std::size_t>(f + 1), true);
  out.loss_mask[0] = false;
  return out;
}

template <typename Scalar>
nlohmann::json FusedInput<Scalar>::manifest() const {
  return {{"shape", tensor.shape()},
          {"channel_layout",
           {{"noisy", {groups.noisy(), groups.dummy()}},
            {"dummy_reference", {groups.dummy(), groups.agnostic()}},
            {"agnostic", {groups.agnostic(), groups.pose()}},
            {"pose", {groups.pose(), groups.mask()}},
            {"mask", {groups.mask(), groups.total()}}}},
          {"ref_position", ref_position},
          {"patch", layout.patch},
          {"tokens_per_frame", layout.tokens_per_frame()},
          {"total_tokens", layout.total_tokens()},
          {"loss_mask", loss_mask},
          {"forbidden_attention_entries", (!attention).count()}};
}

}  // namespace subswap
