#include "subswap/types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "raster.hpp"

namespace subswap {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kInvalidClipLength: return "invalid_clip_length";
    case ErrorCode::kEmptySubject: return "empty_subject";
    case ErrorCode::kNoSubject: return "no_subject";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kDimOverflow: return "dim_overflow";
    case ErrorCode::kBadVersion: return "bad_version";
    case ErrorCode::kBadDtype: return "bad_dtype";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kValue: return "value";
    case ErrorCode::kMissingWeights: return "missing_weights";
    case ErrorCode::kUsage: return "usage";
  }
  return "unknown";
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

VideoClip::VideoClip(Tensor<float> data) : data_(std::move(data)) {
  require(data_.rank() == 4, ErrorCode::kShape, "clip must be (T,C,H,W)",
          shape_string(data_.shape()));
  require(frames() >= 1, ErrorCode::kShape, "clip needs at least one frame");
  require(channels() == kPixelChannels, ErrorCode::kShape, "clip must have 3 channels",
          shape_string(data_.shape()));
  require(height() % 8 == 0 && width() % 8 == 0 && height() > 0 && width() > 0,
          ErrorCode::kShape, "clip height and width must be positive multiples of 8",
          shape_string(data_.shape()));
  const auto& a = data_.array();
  require(a.allFinite() && (a >= 0.f).all() && (a <= 1.f).all(), ErrorCode::kValue,
          "clip values must be finite and within [0,1]");
}

VideoClip VideoClip::zeros(Index frames, Index height, Index width) {
  return VideoClip(Tensor<float>(Shape{frames, kPixelChannels, height, width}));
}

MaskSequence::MaskSequence(Tensor<std::uint8_t> data) : data_(std::move(data)) {
  require(data_.rank() == 3, ErrorCode::kShape, "mask must be (T,H,W)",
          shape_string(data_.shape()));
  require((data_.array() <= std::uint8_t{1}).all(), ErrorCode::kValue,
          "mask values must be 0 or 1");
}

MaskSequence MaskSequence::zeros(Index frames, Index height, Index width) {
  return MaskSequence(Tensor<std::uint8_t>(Shape{frames, height, width}, std::uint8_t{0}));
}

Index MaskSequence::count(Index t) const {
  return data_.slab(t).template cast<Index>().sum();
}

bool MaskSequence::all_empty() const { return (data_.array() == 0).all(); }

void ReferenceImage::validate() const {
  require(image.rank() == 3 && image.dim(0) == kPixelChannels, ErrorCode::kShape,
          "reference image must be (3,H,W)", shape_string(image.shape()));
  if (alpha) {
    require(alpha->rank() == 2 && alpha->dim(0) == height() && alpha->dim(1) == width(),
            ErrorCode::kShape, "reference alpha must match image dims",
            shape_string(alpha->shape()));
  }
}

Index PoseSequence::joint_index(const std::string& name) const {
  const auto it = std::find(joint_names.begin(), joint_names.end(), name);
  return it == joint_names.end() ? -1 : static_cast<Index>(it - joint_names.begin());
}

void PoseSequence::validate() const {
  for (const auto& f : frames) {
    require(f.size() == joint_names.size(), ErrorCode::kShape,
            "pose frame has wrong joint count");
    for (const auto& k : f) {
      if (!k.visible) continue;
      require(k.x >= 0 && k.y >= 0 && k.x <= static_cast<float>(width) &&
                  k.y <= static_cast<float>(height),
              ErrorCode::kValue, "visible keypoint outside frame");
    }
  }
}

const std::vector<std::pair<std::string, std::string>>& skeleton_limbs() {
  static const std::vector<std::pair<std::string, std::string>> limbs = {
      {"head", "neck"},          {"neck", "r_shoulder"},    {"r_shoulder", "r_elbow"},
      {"r_elbow", "r_wrist"},    {"r_wrist", "r_hand"},     {"neck", "l_shoulder"},
      {"l_shoulder", "l_elbow"}, {"l_elbow", "l_wrist"},    {"l_wrist", "l_hand"},
      {"neck", "r_hip"},         {"neck", "l_hip"},         {"r_hip", "l_hip"},
      {"r_hip", "r_knee"},       {"r_knee", "r_ankle"},     {"l_hip", "l_knee"},
      {"l_knee", "l_ankle"},
  };
  return limbs;
}

VideoClip render_pose(const PoseSequence& pose) {
  Tensor<float> out(Shape{pose.frame_count(), kPixelChannels, pose.height, pose.width});
  const auto& limbs = skeleton_limbs();
  for (Index t = 0; t < pose.frame_count(); ++t) {
    const auto& joints = pose.frames[static_cast<std::size_t>(t)];
    for (std::size_t l = 0; l < limbs.size(); ++l) {
      const Index ia = pose.joint_index(limbs[l].first);
      const Index ib = pose.joint_index(limbs[l].second);
      if (ia < 0 || ib < 0) continue;
      const Keypoint& ka = joints[static_cast<std::size_t>(ia)];
      const Keypoint& kb = joints[static_cast<std::size_t>(ib)];
      if (!ka.visible || !kb.visible) continue;
      // One hue per limb so the renderer stays injective on limb identity.
      const float hue = static_cast<float>(l) / static_cast<float>(limbs.size());
      const float rgb[3] = {0.5f + 0.5f * std::cos(6.2831853f * hue),
                            0.5f + 0.5f * std::cos(6.2831853f * (hue - 1.f / 3.f)),
                            0.5f + 0.5f * std::cos(6.2831853f * (hue - 2.f / 3.f))};
      const raster::Point a{ka.x, ka.y}, b{kb.x, kb.y};
      raster::for_region(pose.height, pose.width, std::min(a.x(), b.x()) - 2,
                         std::min(a.y(), b.y()) - 2, std::max(a.x(), b.x()) + 2,
                         std::max(a.y(), b.y()) + 2, [&](Index x, Index y) {
                           if (raster::in_capsule(raster::centre(x, y), a, b, 1.0f)) {
                             for (Index c = 0; c < 3; ++c)
                               out(t, c, y, x) = std::round(rgb[c] * 255.f) / 255.f;
                           }
                         });
    }
  }
  return VideoClip(std::move(out));
}

void check_same_dims(const VideoClip& clip, const MaskSequence& mask) {
  require(clip.frames() == mask.frames() && clip.height() == mask.height() &&
              clip.width() == mask.width(),
          ErrorCode::kShape, "clip and mask dimensions differ",
          shape_string(clip.tensor().shape()) + " vs " + shape_string(mask.tensor().shape()));
}

namespace {

VideoClip apply_mask(const VideoClip& clip, const MaskSequence& mask, bool keep_masked) {
  check_same_dims(clip, mask);
  Tensor<float> out = clip.tensor();
  const Index hw = clip.height() * clip.width();
  for (Index t = 0; t < clip.frames(); ++t) {
    const auto m = mask.tensor().slab(t);
    for (Index c = 0; c < kPixelChannels; ++c) {
      float* px = out.data() + out.offset(t, c, 0, 0);
      for (Index i = 0; i < hw; ++i) {
        const bool masked = m[i] != 0;
        if (masked != keep_masked) px[i] = 0.f;
      }
    }
  }
  return VideoClip(std::move(out));
}

}  // namespace

VideoClip make_agnostic(const VideoClip& clip, const MaskSequence& mask) {
  return apply_mask(clip, mask, false);
}

VideoClip masked_part(const VideoClip& clip, const MaskSequence& mask) {
  return apply_mask(clip, mask, true);
}

std::optional<BBox> bbox_of(const MaskSequence& mask, Index t) {
  Index x0 = mask.width(), y0 = mask.height(), x1 = 0, y1 = 0;
  for (Index y = 0; y < mask.height(); ++y)
    for (Index x = 0; x < mask.width(); ++x)
      if (mask(t, y, x)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x + 1);
        y1 = std::max(y1, y + 1);
      }
  if (x1 == 0) return std::nullopt;
  return BBox{x0, y0, x1, y1};
}

ReferenceImage extract_reference(const VideoClip& clip, const MaskSequence& mask,
                                 Index frame_index) {
  check_same_dims(clip, mask);
  require(0 <= frame_index && frame_index < clip.frames(), ErrorCode::kOutOfRange,
          "reference frame index out of range", std::to_string(frame_index));
  const auto box = bbox_of(mask, frame_index);
  require(box.has_value(), ErrorCode::kEmptySubject, "empty subject frame",
          std::to_string(frame_index));
  ReferenceImage ref;
  ref.image = Tensor<float>(Shape{kPixelChannels, box->height(), box->width()});
  ref.alpha = Tensor<std::uint8_t>(Shape{box->height(), box->width()}, std::uint8_t{0});
  for (Index y = 0; y < box->height(); ++y)
    for (Index x = 0; x < box->width(); ++x) {
      const std::uint8_t m = mask(frame_index, box->y0 + y, box->x0 + x);
      (*ref.alpha)(y, x) = m;
      if (!m) continue;
      for (Index c = 0; c < kPixelChannels; ++c)
        ref.image(c, y, x) = clip(frame_index, c, box->y0 + y, box->x0 + x);
    }
  return ref;
}

}  // namespace subswap
