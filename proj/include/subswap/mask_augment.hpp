#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "subswap/types.hpp"

namespace subswap {

using Rng = std::mt19937_64;

enum class AugmentMode { kTrain, kInference };

/// Block sizes are given in pixels at `reference_height` and rescaled linearly
/// to the frame height by `scaled_to`.
struct AugmentConfig {
  double p_bbox = 0.3;
  Index h1 = 16;
  Index h2 = 96;
  Index h3 = 32;
  Index reference_height = 256;
  double p_shape = 0.3;
  Index min_shapes = 1;
  Index max_shapes = 3;
  double shape_scale_min = 0.1;
  double shape_scale_max = 0.4;

  AugmentConfig scaled_to(Index frame_height) const;
  void validate(Index frame_height) const;
};

/// Block edge in pixels and the number of whole blocks spanning the subject
/// bbox (K = bbox // block; 0 is allowed for subjects smaller than a block).
struct GridSpec {
  Index block_h = 1, block_w = 1;
  Index k_h = 0, k_w = 0;
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

enum class ShapeKind { kCircle, kTriangle, kRectangle };

/// One extra shape, anchored relative to the per-frame bbox centre.
struct ShapeParams {
  ShapeKind kind = ShapeKind::kCircle;
  float offset_x = 0, offset_y = 0;
  float size = 1;  // circle radius, triangle circumradius, rectangle mean half-extent
  float angle = 0;
  float aspect = 1;
};

enum class AugmentPath { kBBox, kGrid, kGridShape };

struct AugmentRecord {
  AugmentMode mode = AugmentMode::kInference;
  AugmentPath path = AugmentPath::kGrid;
  std::optional<GridSpec> grid;
  std::vector<ShapeParams> shapes;

  nlohmann::json to_json() const;
};

struct AugmentResult {
  MaskSequence mask;
  AugmentRecord record;
};

/// Union of per-frame bboxes; none when every frame is empty.
std::optional<BBox> union_bbox(const MaskSequence& mask);

GridSpec grid_spec(const BBox& bbox, AugmentMode mode, const AugmentConfig& cfg, Rng& rng);

/// Tiles the whole frame from the origin and fills every block touching the mask.
MaskSequence grid_augment(const MaskSequence& mask, const GridSpec& spec);

/// Replaces each non-empty frame with its filled bbox.
MaskSequence bbox_augment(const MaskSequence& mask);

/// Adds 1-3 shapes centred on boundary pixels of the first non-empty frame;
/// shapes follow the per-frame bbox centre in later frames.
MaskSequence shape_augment(const MaskSequence& mask, const AugmentConfig& cfg, Rng& rng,
                           std::vector<ShapeParams>* sampled = nullptr);

/// Rasterises one shape centred at (cx, cy) into frame t.
void rasterize_shape(MaskBuilder& out, Index t, const ShapeParams& shape, float cx, float cy);

/// Full adaptive strategy; the output is a per-frame superset of the input.
AugmentResult augment(const MaskSequence& mask, AugmentMode mode, const AugmentConfig& cfg,
                      Rng& rng);

std::string_view to_string(AugmentMode mode);
std::string_view to_string(AugmentPath path);
AugmentMode parse_augment_mode(std::string_view s);

}  // namespace subswap
