#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "subswap/denoiser.hpp"
#include "subswap/mask_augment.hpp"
#include "subswap/types.hpp"

namespace subswap {

struct TunnelConfig {
  double threshold = 0.05;  // activate below this mean per-frame area ratio
  double margin = 1.5;      // union bbox growth factor about its centre
  Index snap = 8;           // box edges snap outward to multiples of this
};

struct Tunnel {
  BBox box;
  bool active = false;
  double area_ratio = 0;
  double threshold = 0.05;
  double margin = 1.5;

  nlohmann::json to_json() const;
};

/// Active iff the mean per-frame mask area ratio is below the threshold; the
/// box is the clip-global union bbox grown by `margin`, clamped to the frame
/// and snapped outward. Inactive tunnels cover the full frame.
Tunnel plan_tunnel(const MaskSequence& mask, Index height, Index width,
                   const TunnelConfig& cfg = {});

/// Alpha for compositing over the tunnel box: the augmented mask inside the
/// box, box-blurred with radius `feather` (normalised over in-box pixels).
Tensor<float> feather_alpha(const MaskSequence& aug_mask, const BBox& box, Index feather);

/// Composites a generated box-sized clip into the source. Pixels outside the
/// box are copied from the source unchanged.
VideoClip blend_back(const VideoClip& source, const VideoClip& generated, const Tunnel& tunnel,
                     const MaskSequence& aug_mask, Index feather = 4);

using Segment = std::pair<Index, Index>;  // inclusive frame range

/// Segments of length L (L = 1 mod 4) sharing one frame; the final segment
/// ends at T-1 and its start moves back until its length is 1 mod 4.
/// Clips of 2-4 frames get the single segment (0, 4), which reaches into
/// padding frames the caller supplies.
std::vector<Segment> schedule_segments(Index total_frames, Index segment_length);

struct SamplerConfig {
  Index steps = 20;
  Index segment_length = 17;
  Index feather = 4;
  TunnelConfig tunnel{0.05, 1.5, 16};
  bool use_tunnel = true;
};

struct SwapRequest {
  VideoClip clip;
  MaskSequence mask;
  ReferenceImage reference;
  std::optional<PoseSequence> pose;
  std::optional<Tensor<float>> first_frame_override;  // (3, H, W)
  std::uint64_t seed = 0;
  SamplerConfig sampler;
  AugmentConfig augment;

  void validate() const;
};

struct SwapResult {
  VideoClip output;
  MaskSequence aug_mask;  // full-frame augmented mask used for compositing
  Tunnel tunnel;
  std::vector<Segment> segments;
  nlohmann::json report;
};

/// Full swap: mask augmentation, tunnel crop, per-segment Euler sampling
/// with a cached reference, decoding and compositing.
SwapResult run_swap(const SwapRequest& req, const Denoiser<float>& model);

/// Masked-region PSNR in dB between two clips over the pixels where mask is set.
double masked_psnr(const VideoClip& a, const VideoClip& b, const MaskSequence& mask);

}  // namespace subswap
