#pragma once

#include <Eigen/Core>

#include "subswap/types.hpp"

namespace subswap {

/// Maps output pixel-centre coordinates (x, y) to source coordinates.
using AffineMap = Eigen::Matrix<float, 2, 3>;

/// Bilinear warp of a matted reference. Colour is resampled premultiplied by
/// the matte; output alpha is the resampled matte thresholded at 0.5 and the
/// colour outside it is zero. Sampling exactly on source pixel centres copies
/// values bit-exactly.
ReferenceImage warp_reference(const ReferenceImage& src, const AffineMap& output_to_source,
                              Index out_h, Index out_w);

}  // namespace subswap
