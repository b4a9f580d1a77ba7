#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "subswap/tensor.hpp"

namespace subswap {

inline constexpr Index kPixelChannels = 3;

/// Half-open pixel box [x0,x1) x [y0,y1).
struct BBox {
  Index x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  Index width() const { return x1 - x0; }
  Index height() const { return y1 - y0; }
  Index area() const { return width() * height(); }
  bool valid_in(Index h, Index w) const {
    return 0 <= x0 && x0 < x1 && x1 <= w && 0 <= y0 && y0 < y1 && y1 <= h;
  }
  BBox united(const BBox& o) const {
    return {std::min(x0, o.x0), std::min(y0, o.y0), std::max(x1, o.x1), std::max(y1, o.y1)};
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

/// (T, 3, H, W) pixels in [0,1]; H and W are multiples of 8.
class VideoClip {
 public:
  VideoClip() = default;
  explicit VideoClip(Tensor<float> data);
  static VideoClip zeros(Index frames, Index height, Index width);

  Index frames() const { return data_.dim(0); }
  Index channels() const { return data_.dim(1); }
  Index height() const { return data_.dim(2); }
  Index width() const { return data_.dim(3); }

  float operator()(Index t, Index c, Index y, Index x) const { return data_(t, c, y, x); }
  const Tensor<float>& tensor() const { return data_; }

  friend bool operator==(const VideoClip& a, const VideoClip& b) { return a.data_ == b.data_; }

 private:
  Tensor<float> data_;
};

/// (T, H, W) binary masks.
class MaskSequence {
 public:
  MaskSequence() = default;
  explicit MaskSequence(Tensor<std::uint8_t> data);
  static MaskSequence zeros(Index frames, Index height, Index width);

  Index frames() const { return data_.dim(0); }
  Index height() const { return data_.dim(1); }
  Index width() const { return data_.dim(2); }

  std::uint8_t operator()(Index t, Index y, Index x) const { return data_(t, y, x); }
  const Tensor<std::uint8_t>& tensor() const { return data_; }

  Index count(Index t) const;
  bool empty_frame(Index t) const { return count(t) == 0; }
  bool all_empty() const;

  friend bool operator==(const MaskSequence& a, const MaskSequence& b) {
    return a.data_ == b.data_;
  }

 private:
  Tensor<std::uint8_t> data_;
};

/// Builder used where masks are produced pixel by pixel before validation.
class MaskBuilder {
 public:
  MaskBuilder(Index frames, Index height, Index width)
      : data_(Shape{frames, height, width}, std::uint8_t{0}) {}
  explicit MaskBuilder(const MaskSequence& m) : data_(m.tensor()) {}
  std::uint8_t& operator()(Index t, Index y, Index x) { return data_(t, y, x); }
  Index frames() const { return data_.dim(0); }
  Index height() const { return data_.dim(1); }
  Index width() const { return data_.dim(2); }
  MaskSequence build() && { return MaskSequence(std::move(data_)); }

 private:
  Tensor<std::uint8_t> data_;
};

/// (3, H, W) subject image with an optional (H, W) binary matte.
struct ReferenceImage {
  Tensor<float> image;
  std::optional<Tensor<std::uint8_t>> alpha;

  Index height() const { return image.dim(1); }
  Index width() const { return image.dim(2); }
  void validate() const;
};

struct Keypoint {
  float x = 0, y = 0;
  bool visible = false;
};

/// Named 2D keypoints per frame; body joints followed by hand keypoints.
struct PoseSequence {
  Index height = 0, width = 0;
  std::vector<std::string> joint_names;
  std::vector<std::vector<Keypoint>> frames;

  Index frame_count() const { return static_cast<Index>(frames.size()); }
  Index joint_index(const std::string& name) const;
  void validate() const;
};

/// Skeleton limbs as pairs of joint names; used by the renderer and the
/// synthetic generator.
const std::vector<std::pair<std::string, std::string>>& skeleton_limbs();

/// Rasterises the pose as a 3-channel skeleton clip of the pose's frame size.
VideoClip render_pose(const PoseSequence& pose);

/// A^s = V * (1 - M): zero the masked pixels.
VideoClip make_agnostic(const VideoClip& clip, const MaskSequence& mask);

/// V * M; the complement of make_agnostic.
VideoClip masked_part(const VideoClip& clip, const MaskSequence& mask);

/// Subject pixels of one frame cropped to the mask's bounding box, with the
/// cropped mask as alpha.
ReferenceImage extract_reference(const VideoClip& clip, const MaskSequence& mask,
                                 Index frame_index);

std::optional<BBox> bbox_of(const MaskSequence& mask, Index t);

void check_same_dims(const VideoClip& clip, const MaskSequence& mask);

}  // namespace subswap
