#include "subswap/mask_augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "raster.hpp"

namespace subswap {

AugmentConfig AugmentConfig::scaled_to(Index frame_height) const {
  auto scale = [&](Index v) {
    const double s = static_cast<double>(v) * static_cast<double>(frame_height) /
                     static_cast<double>(reference_height);
    return std::max<Index>(1, static_cast<Index>(std::lround(s)));
  };
  AugmentConfig out = *this;
  out.h1 = scale(h1);
  out.h2 = std::max(out.h1, scale(h2));
  out.h3 = scale(h3);
  out.reference_height = frame_height;
  return out;
}

void AugmentConfig::validate(Index frame_height) const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  require(1 <= h1 && h1 <= h2 && h2 <= frame_height, ErrorCode::kConfig,
          "augment block bounds need 1 <= h1 <= h2 <= H");
  require(h3 >= 1, ErrorCode::kConfig, "augment h3 must be >= 1");
  require(prob(p_bbox) && prob(p_shape), ErrorCode::kConfig,
          "augment probabilities must be in [0,1]");
  require(1 <= min_shapes && min_shapes <= max_shapes, ErrorCode::kConfig,
          "shape count range is empty");
  require(0 < shape_scale_min && shape_scale_min <= shape_scale_max, ErrorCode::kConfig,
          "shape scale range is empty");
}

std::string_view to_string(AugmentMode mode) {
  return mode == AugmentMode::kTrain ? "train" : "inference";
}

std::string_view to_string(AugmentPath path) {
  switch (path) {
    case AugmentPath::kBBox: return "bbox";
    case AugmentPath::kGrid: return "grid";
    case AugmentPath::kGridShape: return "grid+shape";
  }
  return "?";
}

AugmentMode parse_augment_mode(std::string_view s) {
  if (s == "train") return AugmentMode::kTrain;
  if (s == "inference") return AugmentMode::kInference;
  fail(ErrorCode::kUsage, "mode must be train or inference", std::string(s));
}

nlohmann::json AugmentRecord::to_json() const {
  nlohmann::json j{{"mode", to_string(mode)}, {"path", to_string(path)}};
  if (grid) {
    j["grid"] = {{"block_h", grid->block_h},
                 {"block_w", grid->block_w},
                 {"k_h", grid->k_h},
                 {"k_w", grid->k_w}};
  }
  nlohmann::json shapes_j = nlohmann::json::array();
  static constexpr const char* kNames[] = {"circle", "triangle", "rectangle"};
  for (const auto& s : shapes) {
    shapes_j.push_back({{"kind", kNames[static_cast<int>(s.kind)]},
                        {"offset_x", s.offset_x},
                        {"offset_y", s.offset_y},
                        {"size", s.size},
                        {"angle", s.angle},
                        {"aspect", s.aspect}});
  }
  j["shapes"] = std::move(shapes_j);
  return j;
}

std::optional<BBox> union_bbox(const MaskSequence& mask) {
  std::optional<BBox> out;
  for (Index t = 0; t < mask.frames(); ++t) {
    if (auto b = bbox_of(mask, t)) out = out ? out->united(*b) : *b;
  }
  return out;
}

GridSpec grid_spec(const BBox& bbox, AugmentMode mode, const AugmentConfig& cfg, Rng& rng) {
  GridSpec spec;
  if (mode == AugmentMode::kTrain) {
    std::uniform_int_distribution<Index> block(cfg.h1, cfg.h2);
    spec.block_h = block(rng);
    spec.block_w = block(rng);
  } else {
    spec.block_h = cfg.h3;
    spec.block_w = cfg.h3;
  }
  spec.k_h = bbox.height() / spec.block_h;
  spec.k_w = bbox.width() / spec.block_w;
  return spec;
}

MaskSequence grid_augment(const MaskSequence& mask, const GridSpec& spec) {
  require(spec.block_h >= 1 && spec.block_w >= 1, ErrorCode::kConfig, "grid block must be >= 1");
  const Index h = mask.height(), w = mask.width();
  const Index rows = (h + spec.block_h - 1) / spec.block_h;
  const Index cols = (w + spec.block_w - 1) / spec.block_w;
  MaskBuilder out(mask.frames(), h, w);
  std::vector<char> hit(static_cast<std::size_t>(rows * cols));
  for (Index t = 0; t < mask.frames(); ++t) {
    std::fill(hit.begin(), hit.end(), 0);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        if (mask(t, y, x)) hit[static_cast<std::size_t>((y / spec.block_h) * cols + x / spec.block_w)] = 1;
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        out(t, y, x) = hit[static_cast<std::size_t>((y / spec.block_h) * cols + x / spec.block_w)];
  }
  return std::move(out).build();
}

MaskSequence bbox_augment(const MaskSequence& mask) {
  MaskBuilder out(mask.frames(), mask.height(), mask.width());
  for (Index t = 0; t < mask.frames(); ++t) {
    const auto b = bbox_of(mask, t);
    if (!b) continue;
    for (Index y = b->y0; y < b->y1; ++y)
      for (Index x = b->x0; x < b->x1; ++x) out(t, y, x) = 1;
  }
  return std::move(out).build();
}

void rasterize_shape(MaskBuilder& out, Index t, const ShapeParams& s, float cx, float cy) {
  const raster::Point c{cx, cy};
  const float reach = s.size * std::max(1.f, std::sqrt(std::max(s.aspect, 1.f / s.aspect))) * 1.5f;
  const float ca = std::cos(s.angle), sa = std::sin(s.angle);
  // Rotate a pixel centre into the shape frame.
  auto local = [&](const raster::Point& p) {
    const raster::Point d = p - c;
    return raster::Point{ca * d.x() + sa * d.y(), -sa * d.x() + ca * d.y()};
  };
  raster::for_region(out.height(), out.width(), cx - reach, cy - reach, cx + reach, cy + reach,
                     [&](Index x, Index y) {
                       const raster::Point p = raster::centre(x, y);
                       bool inside = false;
                       switch (s.kind) {
                         case ShapeKind::kCircle:
                           inside = raster::in_disk(p, c, s.size);
                           break;
                         case ShapeKind::kTriangle: {
                           const float r = s.size;
                           const float k = std::numbers::pi_v<float> * 2.f / 3.f;
                           const raster::Point a{r, 0}, b{r * std::cos(k), r * std::sin(k)},
                               d{r * std::cos(2 * k), r * std::sin(2 * k)};
                           inside = raster::in_triangle(local(p), a, b, d);
                           break;
                         }
                         case ShapeKind::kRectangle: {
                           const raster::Point l = local(p);
                           const float hx = s.size * std::sqrt(s.aspect);
                           const float hy = s.size / std::sqrt(s.aspect);
                           inside = std::abs(l.x()) <= hx && std::abs(l.y()) <= hy;
                           break;
                         }
                       }
                       if (inside) out(t, y, x) = 1;
                     });
}

namespace {

std::vector<std::pair<Index, Index>> boundary_pixels(const MaskSequence& mask, Index t) {
  std::vector<std::pair<Index, Index>> out;
  const Index h = mask.height(), w = mask.width();
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      if (!mask(t, y, x)) continue;
      const bool edge = (y > 0 && !mask(t, y - 1, x)) || (y + 1 < h && !mask(t, y + 1, x)) ||
                        (x > 0 && !mask(t, y, x - 1)) || (x + 1 < w && !mask(t, y, x + 1));
      if (edge) out.emplace_back(x, y);
    }
  return out;
}

std::pair<float, float> bbox_centre(const BBox& b) {
  return {0.5f * static_cast<float>(b.x0 + b.x1), 0.5f * static_cast<float>(b.y0 + b.y1)};
}

}  // namespace

MaskSequence shape_augment(const MaskSequence& mask, const AugmentConfig& cfg, Rng& rng,
                           std::vector<ShapeParams>* sampled) {
  Index anchor = -1;
  for (Index t = 0; t < mask.frames() && anchor < 0; ++t)
    if (!mask.empty_frame(t)) anchor = t;
  if (anchor < 0) return mask;
  const auto edge = boundary_pixels(mask, anchor);
  if (edge.empty()) return mask;

  const BBox abox = *bbox_of(mask, anchor);
  const auto [acx, acy] = bbox_centre(abox);
  const float extent = static_cast<float>(std::max(abox.height(), abox.width()));

  std::uniform_int_distribution<Index> count(cfg.min_shapes, cfg.max_shapes);
  std::uniform_int_distribution<int> kind(0, 2);
  std::uniform_int_distribution<std::size_t> pick(0, edge.size() - 1);
  std::uniform_real_distribution<double> scale(cfg.shape_scale_min, cfg.shape_scale_max);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> log_aspect(std::log(0.5), std::log(2.0));

  std::vector<ShapeParams> shapes(static_cast<std::size_t>(count(rng)));
  for (auto& s : shapes) {
    s.kind = static_cast<ShapeKind>(kind(rng));
    const auto [px, py] = edge[pick(rng)];
    s.offset_x = static_cast<float>(px) + 0.5f - acx;
    s.offset_y = static_cast<float>(py) + 0.5f - acy;
    s.size = std::max(0.5f, static_cast<float>(scale(rng)) * extent);
    s.angle = static_cast<float>(angle(rng));
    s.aspect = static_cast<float>(std::exp(log_aspect(rng)));
  }

  MaskBuilder out(mask);
  for (Index t = 0; t < mask.frames(); ++t) {
    const auto box = bbox_of(mask, t);
    if (!box) continue;
    const auto [cx, cy] = bbox_centre(*box);
    for (const auto& s : shapes) rasterize_shape(out, t, s, cx + s.offset_x, cy + s.offset_y);
  }
  if (sampled) *sampled = shapes;
  return std::move(out).build();
}

AugmentResult augment(const MaskSequence& mask, AugmentMode mode, const AugmentConfig& cfg,
                      Rng& rng) {
  const auto ubox = union_bbox(mask);
  require(ubox.has_value(), ErrorCode::kNoSubject, "no subject");
  const AugmentConfig scaled = cfg.scaled_to(mask.height());
  scaled.validate(mask.height());

  AugmentResult result;
  result.record.mode = mode;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (mode == AugmentMode::kTrain && unit(rng) < scaled.p_bbox) {
    result.record.path = AugmentPath::kBBox;
    result.mask = bbox_augment(mask);
    return result;
  }
  // One grid per clip keeps the block size constant over time.
  const GridSpec spec = grid_spec(*ubox, mode, scaled, rng);
  result.record.grid = spec;
  result.record.path = AugmentPath::kGrid;
  result.mask = grid_augment(mask, spec);
  if (mode == AugmentMode::kTrain && unit(rng) < scaled.p_shape) {
    result.record.path = AugmentPath::kGridShape;
    result.mask = shape_augment(result.mask, scaled, rng, &result.record.shapes);
  }
  return result;
}

}  // namespace subswap
