#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "subswap/types.hpp"

namespace subswap {

enum class Category { kHuman = 0, kGarment = 1, kSmallObject = 2, kLargeObject = 3 };
inline constexpr std::size_t kCategoryCount = 4;

std::string_view to_string(Category c);
Category parse_category(std::string_view s);

struct SubjectStats {
  double area_ratio = 0;  // mean masked fraction per frame
  double coverage = 0;    // fraction of frames with a non-empty mask
  double motion = 0;      // max consecutive centroid displacement / frame diagonal, clamped to 1
};

struct SubjectRecord {
  std::string clip_id;
  Category category = Category::kHuman;
  std::shared_ptr<const VideoClip> clip;
  MaskSequence mask;
  std::shared_ptr<const PoseSequence> pose;  // null when the subject carries no pose
  SubjectStats stats;
  std::uint64_t seed = 0;
  std::string source;  // "synthetic" or the manifest path it came from
};

struct SceneSpec {
  Index frames = 17;
  Index height = 64;
  Index width = 64;
  std::vector<Category> roster{Category::kHuman, Category::kGarment, Category::kSmallObject,
                               Category::kLargeObject};
};

/// Ground-truth geometry of one synthetic scene, exposed for checks.
struct SceneTruth {
  std::vector<float> ball_radius_per_frame;  // empty when no held object
  Index hand_joint = -1;
};

/// Renders one clip with every roster subject and returns one record per
/// subject, all sharing the clip. Deterministic per seed.
std::vector<SubjectRecord> generate_scene(std::uint64_t seed, const SceneSpec& spec,
                                          SceneTruth* truth = nullptr);

/// Renders one subject of a scene on its own (zero background) and returns
/// its silhouette; used to check mask exactness.
MaskSequence render_subject_alone(std::uint64_t seed, const SceneSpec& spec, Category category);

SubjectStats compute_stats(const MaskSequence& mask);

enum class MotionRule { kMinimum, kMaximum };

struct FilterConfig {
  double a_min = 0.01;
  double a_max = 0.8;
  double c_min = 0.9;
  double m_min = 0.02;
  MotionRule motion_rule = MotionRule::kMinimum;
  std::array<double, kCategoryCount> target_ratio{1.0, 0.2, 1.0, 1.0};
  double ratio_tolerance = 0.1;

  void validate() const;
};

enum class RejectReason { kArea, kCoverage, kMotion };
std::string_view to_string(RejectReason r);

/// First failing criterion in the order area, coverage, motion.
std::optional<RejectReason> judge(const SubjectStats& stats, const FilterConfig& cfg);

struct FilterResult {
  std::vector<SubjectRecord> kept;
  std::vector<std::pair<SubjectRecord, RejectReason>> rejected;
};

FilterResult filter(const std::vector<SubjectRecord>& records, const FilterConfig& cfg);

struct BalanceResult {
  std::vector<SubjectRecord> kept;
  std::array<Index, kCategoryCount> counts{};
  bool feasible = true;
};

/// Per-category counts m_c = min(n_c, floor(r_c * u)) with u the scarcest
/// non-empty category's availability n_c / r_c; random down-sampling within
/// each category, original order preserved. Infeasible when a category is
/// empty or a count leaves the +-tolerance band around r_c * u.
BalanceResult balance(const std::vector<SubjectRecord>& records, const FilterConfig& cfg,
                      std::mt19937_64& rng);

std::array<Index, kCategoryCount> category_counts(const std::vector<SubjectRecord>& records);

nlohmann::json stats_to_json(const SubjectStats& s);

}  // namespace subswap
