#include "subswap/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "raster.hpp"
#include "subswap/io.hpp"

namespace subswap {

std::string_view to_string(Category c) {
  switch (c) {
    case Category::kHuman: return "human";
    case Category::kGarment: return "garment";
    case Category::kSmallObject: return "small_object";
    case Category::kLargeObject: return "large_object";
  }
  return "?";
}

Category parse_category(std::string_view s) {
  for (std::size_t i = 0; i < kCategoryCount; ++i)
    if (to_string(static_cast<Category>(i)) == s) return static_cast<Category>(i);
  fail(ErrorCode::kValue, "unknown category", std::string(s));
}

std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::kArea: return "area";
    case RejectReason::kCoverage: return "coverage";
    case RejectReason::kMotion: return "motion";
  }
  return "?";
}

namespace {

using raster::Point;
using Rgb = Eigen::Vector3f;

const std::vector<std::string>& joint_names() {
  static const std::vector<std::string> names = {
      "head",   "neck",   "r_shoulder", "r_elbow", "r_wrist", "l_shoulder",
      "l_elbow", "l_wrist", "r_hip",     "r_knee",  "r_ankle", "l_hip",
      "l_knee",  "l_ankle", "r_hand",    "l_hand"};
  return names;
}

enum Joint {
  kHead, kNeck, kRShoulder, kRElbow, kRWrist, kLShoulder, kLElbow, kLWrist,
  kRHip, kRKnee, kRAnkle, kLHip, kLKnee, kLAnkle, kRHand, kLHand, kJointCount
};

struct Limb {
  Joint a, b;
  float radius;
};

// All random parameters of a scene; geometry per frame is a pure function of
// these, so renders and silhouettes agree exactly.
class SceneModel {
 public:
  SceneModel(std::uint64_t seed, const SceneSpec& spec) : spec_(spec) {
    require(!spec.roster.empty(), ErrorCode::kValue, "scene roster is empty");
    check_frames();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    auto uni = [&](float lo, float hi) { return lo + (hi - lo) * u(rng); };
    auto colour = [&](float lo, float hi) { return Rgb{uni(lo, hi), uni(lo, hi), uni(lo, hi)}; };
    s_ = static_cast<float>(spec.height) / 64.f;
    const float w = static_cast<float>(spec.width);

    bg_a_ = colour(0.1f, 0.6f);
    bg_b_ = colour(0.3f, 0.9f);
    bg_kx_ = uni(0.05f, 0.25f) / s_;
    bg_ky_ = uni(0.05f, 0.25f) / s_;
    bg_phase_ = uni(0.f, 6.28f);

    large_w_ = std::round(uni(16.f, 28.f) * s_);
    large_h_ = std::round(uni(14.f, 26.f) * s_);
    large_y_ = std::round(uni(3.f * s_, static_cast<float>(spec.height) - large_h_ - 3.f * s_));
    large_vx_ = u(rng) < 0.25f ? 0.f : uni(0.6f, 2.5f) * s_ * (u(rng) < 0.5f ? -1.f : 1.f);
    const float span_l = large_vx_ * static_cast<float>(spec.frames - 1);
    const float lo_l = 2.f * s_ + std::max(0.f, -span_l);
    const float hi_l = std::max(lo_l, w - large_w_ - 2.f * s_ - std::max(0.f, span_l));
    large_x0_ = uni(lo_l, hi_l);
    large_col_ = colour(0.2f, 0.95f);
    large_stripe_ = 0.55f + 0.25f * u(rng);

    human_vx_ = uni(1.2f, 2.4f) * s_ * (u(rng) < 0.5f ? -1.f : 1.f);
    const float span_h = human_vx_ * static_cast<float>(spec.frames - 1);
    const float margin = 18.f * s_;
    const float lo_h = margin + std::max(0.f, -span_h);
    const float hi_h = std::max(lo_h, w - margin - std::max(0.f, span_h));
    human_x0_ = uni(lo_h, hi_h);
    human_y_ = 38.f * s_;
    walk_omega_ = uni(0.5f, 0.9f);
    walk_phase_ = uni(0.f, 6.28f);
    skin_ = Rgb{uni(0.55f, 0.95f), uni(0.4f, 0.75f), uni(0.3f, 0.6f)};
    pants_ = colour(0.05f, 0.5f);
    shirt_a_ = colour(0.2f, 1.f);
    shirt_b_ = colour(0.0f, 0.8f);
    ball_r_ = uni(3.8f, 5.5f) * s_;
    ball_col_ = colour(0.3f, 1.f);

    for (Category c : spec.roster) has_[static_cast<std::size_t>(c)] = true;
    human_drawn_ = has(Category::kHuman) || has(Category::kGarment) || has(Category::kSmallObject);
  }

  bool has(Category c) const { return has_[static_cast<std::size_t>(c)]; }
  bool human_drawn() const { return human_drawn_; }
  float ball_radius() const { return ball_r_; }

  std::array<Point, kJointCount> joints(Index t) const {
    const float tf = static_cast<float>(t);
    const float s = s_;
    std::array<Point, kJointCount> j;
    const Point hip{human_x0_ + human_vx_ * tf, human_y_};
    j[kNeck] = hip + Point{0, -14.f * s};
    j[kHead] = hip + Point{0, -20.f * s};
    j[kRShoulder] = j[kNeck] + Point{-4.f * s, 1.f * s};
    j[kLShoulder] = j[kNeck] + Point{4.f * s, 1.f * s};
    const float swing = std::sin(walk_omega_ * tf + walk_phase_);
    auto dir = [](float a) { return Point{std::sin(a), std::cos(a)}; };
    const float ar = 0.6f * swing, al = -0.6f * swing;
    j[kRElbow] = j[kRShoulder] + 7.f * s * dir(ar - 0.25f);
    j[kRWrist] = j[kRElbow] + 6.f * s * dir(ar - 0.25f + 0.5f * swing + 0.3f);
    j[kRHand] = j[kRWrist] + 2.f * s * dir(ar - 0.25f + 0.5f * swing + 0.3f);
    j[kLElbow] = j[kLShoulder] + 7.f * s * dir(al + 0.25f);
    j[kLWrist] = j[kLElbow] + 6.f * s * dir(al + 0.25f - 0.5f * swing - 0.3f);
    j[kLHand] = j[kLWrist] + 2.f * s * dir(al + 0.25f - 0.5f * swing - 0.3f);
    j[kRHip] = hip + Point{-3.f * s, 0};
    j[kLHip] = hip + Point{3.f * s, 0};
    const float lr = 0.45f * swing, ll = -0.45f * swing;
    j[kRKnee] = j[kRHip] + 8.f * s * dir(lr);
    j[kRAnkle] = j[kRKnee] + 8.f * s * dir(0.5f * lr);
    j[kLKnee] = j[kLHip] + 8.f * s * dir(ll);
    j[kLAnkle] = j[kLKnee] + 8.f * s * dir(0.5f * ll);
    return j;
  }

  static const std::vector<Limb>& legs() {
    static const std::vector<Limb> l = {{kRHip, kRKnee, 2.2f}, {kRKnee, kRAnkle, 2.0f},
                                        {kLHip, kLKnee, 2.2f}, {kLKnee, kLAnkle, 2.0f}};
    return l;
  }
  static const std::vector<Limb>& arms() {
    static const std::vector<Limb> l = {{kRShoulder, kRElbow, 1.8f}, {kRElbow, kRWrist, 1.6f},
                                        {kRWrist, kRHand, 1.6f},     {kLShoulder, kLElbow, 1.8f},
                                        {kLElbow, kLWrist, 1.6f},    {kLWrist, kLHand, 1.6f}};
    return l;
  }

  bool in_limbs(const std::vector<Limb>& limbs, const std::array<Point, kJointCount>& j,
                const Point& p) const {
    for (const auto& l : limbs)
      if (raster::in_capsule(p, j[l.a], j[l.b], l.radius * s_)) return true;
    return false;
  }
  bool in_torso(const std::array<Point, kJointCount>& j, const Point& p) const {
    const Point hip_mid = 0.5f * (j[kRHip] + j[kLHip]);
    return raster::in_capsule(p, j[kNeck] + Point{0, 1.f * s_}, hip_mid, 4.5f * s_);
  }
  bool in_head(const std::array<Point, kJointCount>& j, const Point& p) const {
    return raster::in_disk(p, j[kHead], 4.f * s_);
  }
  bool in_human(const std::array<Point, kJointCount>& j, const Point& p) const {
    return in_head(j, p) || in_torso(j, p) || in_limbs(legs(), j, p) || in_limbs(arms(), j, p);
  }
  bool in_ball(const std::array<Point, kJointCount>& j, const Point& p) const {
    return raster::in_disk(p, j[kRHand], ball_r_);
  }
  bool in_large(Index t, Index x, Index y) const {
    const Index x0 = static_cast<Index>(std::lround(large_x0_ + large_vx_ * static_cast<float>(t)));
    const Index y0 = static_cast<Index>(large_y_);
    return x >= x0 && x < x0 + static_cast<Index>(large_w_) && y >= y0 &&
           y < y0 + static_cast<Index>(large_h_);
  }

  bool in_subject(Category c, Index t, Index x, Index y,
                  const std::array<Point, kJointCount>& j) const {
    const Point p = raster::centre(x, y);
    switch (c) {
      case Category::kHuman: return in_human(j, p);
      case Category::kGarment: return in_torso(j, p);
      case Category::kSmallObject: return in_ball(j, p);
      case Category::kLargeObject: return in_large(t, x, y);
    }
    return false;
  }

  Rgb shade(Index t, Index x, Index y, const std::array<Point, kJointCount>& j) const {
    const Point p = raster::centre(x, y);
    const float fx = p.x(), fy = p.y();
    const float m = 0.5f + 0.5f * std::sin(bg_kx_ * fx + bg_ky_ * fy + bg_phase_);
    Rgb c = bg_a_ + m * (bg_b_ - bg_a_);
    if (has(Category::kLargeObject) && in_large(t, x, y)) {
      const bool stripe = (y / std::max<Index>(1, static_cast<Index>(4 * s_))) % 2 == 0;
      c = stripe ? large_col_ : Rgb(large_col_ * large_stripe_);
    }
    if (human_drawn_) {
      if (in_limbs(legs(), j, p)) c = pants_;
      if (in_torso(j, p)) {
        const float band = std::sin(1.4f * fy / s_ + 0.7f * fx / s_);
        c = band > 0 ? shirt_a_ : shirt_b_;
      }
      if (in_limbs(arms(), j, p)) c = skin_;
      if (in_head(j, p)) c = skin_ * (raster::in_disk(p, j[kHead] + Point{0, -2.f * s_}, 3.f * s_) ? 0.35f : 1.f);
    }
    if (has(Category::kSmallObject) && in_ball(j, p)) {
      const float d = (p - j[kRHand] - Point{-1.f * s_, -1.f * s_}).norm() / ball_r_;
      c = ball_col_ * std::clamp(1.15f - 0.45f * d, 0.3f, 1.f);
    }
    return c;
  }

  const SceneSpec& spec() const { return spec_; }

 private:
  void check_frames() const {
    require(spec_.frames >= 1 && (spec_.frames - 1) % 4 == 0, ErrorCode::kInvalidClipLength,
            "scene frame count must be 1 mod 4", std::to_string(spec_.frames));
    require(spec_.height % 8 == 0 && spec_.width % 8 == 0 && spec_.height >= 32 &&
                spec_.width >= 32,
            ErrorCode::kShape, "scene dims must be multiples of 8 and at least 32");
  }

  SceneSpec spec_;
  float s_ = 1;
  Rgb bg_a_, bg_b_;
  float bg_kx_ = 0, bg_ky_ = 0, bg_phase_ = 0;
  float large_w_ = 0, large_h_ = 0, large_y_ = 0, large_vx_ = 0, large_x0_ = 0;
  Rgb large_col_;
  float large_stripe_ = 0.7f;
  float human_vx_ = 0, human_x0_ = 0, human_y_ = 0, walk_omega_ = 0, walk_phase_ = 0;
  Rgb skin_, pants_, shirt_a_, shirt_b_, ball_col_;
  float ball_r_ = 4;
  std::array<bool, kCategoryCount> has_{};
  bool human_drawn_ = false;
};

}  // namespace

std::vector<SubjectRecord> generate_scene(std::uint64_t seed, const SceneSpec& spec,
                                          SceneTruth* truth) {
  const SceneModel model(seed, spec);
  const Index T = spec.frames, H = spec.height, W = spec.width;
  Tensor<float> px(Shape{T, kPixelChannels, H, W});
  std::vector<MaskBuilder> masks;
  for (std::size_t i = 0; i < spec.roster.size(); ++i) masks.emplace_back(T, H, W);

  auto pose = std::make_shared<PoseSequence>();
  pose->height = H;
  pose->width = W;
  pose->joint_names = joint_names();
  for (Index t = 0; t < T; ++t) {
    const auto j = model.joints(t);
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const Rgb c = model.shade(t, x, y, j);
        for (Index ch = 0; ch < 3; ++ch) px(t, ch, y, x) = quantize_u8(c[ch]);
        for (std::size_t i = 0; i < spec.roster.size(); ++i)
          if (model.in_subject(spec.roster[i], t, x, y, j)) masks[i](t, y, x) = 1;
      }
    std::vector<Keypoint> kps;
    for (const auto& p : j) {
      const bool vis = p.x() >= 0 && p.y() >= 0 && p.x() <= static_cast<float>(W) &&
                       p.y() <= static_cast<float>(H);
      kps.push_back({p.x(), p.y(), vis});
    }
    pose->frames.push_back(std::move(kps));
  }
  if (truth) {
    truth->hand_joint = kRHand;
    truth->ball_radius_per_frame.assign(static_cast<std::size_t>(T), model.ball_radius());
  }

  auto clip = std::make_shared<const VideoClip>(std::move(px));
  std::shared_ptr<const PoseSequence> shared_pose = model.human_drawn() ? pose : nullptr;
  char id[32];
  std::snprintf(id, sizeof(id), "scene_%08llu", static_cast<unsigned long long>(seed));
  std::vector<SubjectRecord> out;
  for (std::size_t i = 0; i < spec.roster.size(); ++i) {
    SubjectRecord r;
    r.clip_id = id;
    r.category = spec.roster[i];
    r.clip = clip;
    r.mask = std::move(masks[i]).build();
    r.pose = r.category == Category::kLargeObject ? nullptr : shared_pose;
    r.stats = compute_stats(r.mask);
    r.seed = seed;
    r.source = "synthetic";
    out.push_back(std::move(r));
  }
  return out;
}

MaskSequence render_subject_alone(std::uint64_t seed, const SceneSpec& spec, Category category) {
  // Geometry does not depend on the roster, so this matches the full scene.
  const SceneModel model(seed, spec);
  MaskBuilder m(spec.frames, spec.height, spec.width);
  for (Index t = 0; t < spec.frames; ++t) {
    const auto j = model.joints(t);
    for (Index y = 0; y < spec.height; ++y)
      for (Index x = 0; x < spec.width; ++x)
        if (model.in_subject(category, t, x, y, j)) m(t, y, x) = 1;
  }
  return std::move(m).build();
}

SubjectStats compute_stats(const MaskSequence& mask) {
  const Index T = mask.frames(), H = mask.height(), W = mask.width();
  const double hw = static_cast<double>(H * W);
  const double diag = std::sqrt(static_cast<double>(H * H + W * W));
  SubjectStats s;
  double area = 0;
  Index nonempty = 0;
  std::optional<Eigen::Vector2d> prev;
  double max_disp = 0;
  for (Index t = 0; t < T; ++t) {
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    Index n = 0;
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x)
        if (mask(t, y, x)) {
          sum += Eigen::Vector2d(static_cast<double>(x), static_cast<double>(y));
          ++n;
        }
    area += static_cast<double>(n) / hw;
    if (n == 0) continue;
    ++nonempty;
    const Eigen::Vector2d c = sum / static_cast<double>(n);
    if (prev) max_disp = std::max(max_disp, (c - *prev).norm());
    prev = c;
  }
  s.area_ratio = area / static_cast<double>(T);
  s.coverage = static_cast<double>(nonempty) / static_cast<double>(T);
  s.motion = std::min(1.0, max_disp / diag);
  return s;
}

void FilterConfig::validate() const {
  require(0 <= a_min && a_min < a_max && a_max <= 1, ErrorCode::kConfig,
          "filter area bounds need 0 <= a_min < a_max <= 1");
  require(c_min >= 0 && c_min <= 1, ErrorCode::kConfig, "filter c_min must be in [0,1]");
  require(m_min >= 0, ErrorCode::kConfig, "filter m_min must be >= 0");
  for (double r : target_ratio)
    require(r > 0, ErrorCode::kConfig, "target ratios must be positive");
  require(ratio_tolerance >= 0, ErrorCode::kConfig, "ratio tolerance must be >= 0");
}

std::optional<RejectReason> judge(const SubjectStats& s, const FilterConfig& cfg) {
  if (s.area_ratio < cfg.a_min || s.area_ratio > cfg.a_max) return RejectReason::kArea;
  if (s.coverage < cfg.c_min) return RejectReason::kCoverage;
  const bool motion_ok =
      cfg.motion_rule == MotionRule::kMinimum ? s.motion >= cfg.m_min : s.motion <= cfg.m_min;
  if (!motion_ok) return RejectReason::kMotion;
  return std::nullopt;
}

FilterResult filter(const std::vector<SubjectRecord>& records, const FilterConfig& cfg) {
  cfg.validate();
  FilterResult out;
  for (const auto& r : records) {
    if (auto why = judge(r.stats, cfg))
      out.rejected.emplace_back(r, *why);
    else
      out.kept.push_back(r);
  }
  return out;
}

std::array<Index, kCategoryCount> category_counts(const std::vector<SubjectRecord>& records) {
  std::array<Index, kCategoryCount> n{};
  for (const auto& r : records) ++n[static_cast<std::size_t>(r.category)];
  return n;
}

BalanceResult balance(const std::vector<SubjectRecord>& records, const FilterConfig& cfg,
                      std::mt19937_64& rng) {
  cfg.validate();
  std::array<std::vector<std::size_t>, kCategoryCount> by_cat;
  for (std::size_t i = 0; i < records.size(); ++i)
    by_cat[static_cast<std::size_t>(records[i].category)].push_back(i);

  BalanceResult out;
  double unit = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < kCategoryCount; ++c) {
    if (by_cat[c].empty()) {
      out.feasible = false;
      continue;
    }
    unit = std::min(unit, static_cast<double>(by_cat[c].size()) / cfg.target_ratio[c]);
  }
  if (!std::isfinite(unit)) {
    out.feasible = false;
    return out;
  }
  std::vector<char> keep(records.size(), 0);
  for (std::size_t c = 0; c < kCategoryCount; ++c) {
    const double ideal = cfg.target_ratio[c] * unit;
    const Index want = std::min<Index>(static_cast<Index>(by_cat[c].size()),
                                       static_cast<Index>(std::floor(ideal + 1e-9)));
    out.counts[c] = want;
    if (!by_cat[c].empty() && std::abs(static_cast<double>(want) - ideal) >
                                  cfg.ratio_tolerance * ideal + 1e-9)
      out.feasible = false;
    auto idx = by_cat[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (Index i = 0; i < want; ++i) keep[idx[static_cast<std::size_t>(i)]] = 1;
  }
  for (std::size_t i = 0; i < records.size(); ++i)
    if (keep[i]) out.kept.push_back(records[i]);
  return out;
}

nlohmann::json stats_to_json(const SubjectStats& s) {
  return {{"area_ratio", s.area_ratio}, {"coverage", s.coverage}, {"motion", s.motion}};
}

}  // namespace subswap
