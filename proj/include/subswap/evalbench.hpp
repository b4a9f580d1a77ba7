#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "subswap/inference.hpp"
#include "subswap/types.hpp"

namespace subswap {

inline constexpr const char* kMetricsVersion = "subswap-proxy-metrics/1";

/// Mean per-frame PSNR over pixels outside the mask dilated by `dilation_px`
/// (square neighbourhood), each frame capped at 50 dB, divided by 50. None
/// when no background pixel remains.
std::optional<double> background_preservation(const VideoClip& source, const VideoClip& output,
                                              const MaskSequence& mask, Index dilation_px = 8);

/// Mask-weighted appearance similarity of one subject crop against a matted
/// reference: 0.5 * colour-histogram intersection (8x8x8 bins) + 0.5 *
/// cosine of magnitude-weighted gradient-orientation histograms (16 bins).
double appearance_similarity(const ReferenceImage& a, const ReferenceImage& b);

/// Mean similarity between the reference and the output's mask crop over up
/// to `max_frames` evenly spaced frames with a nonempty mask.
double reference_appearance(const ReferenceImage& reference, const VideoClip& output,
                            const MaskSequence& output_mask, Index max_frames = 8);

struct EvalCase {
  std::string id;
  SwapRequest request;
  std::optional<VideoClip> ground_truth;
};

struct CaseResult {
  std::string id;
  std::optional<double> background;  // none when skipped
  std::optional<double> appearance;
  double runtime_s = 0;
  std::string error;  // empty on success

  friend bool operator==(const CaseResult&, const CaseResult&) = default;
};

struct EvalReport {
  std::vector<CaseResult> cases;
  double mean_background = 0;
  double mean_appearance = 0;
  Index background_cases = 0;
  Index appearance_cases = 0;
  Index failed = 0;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  std::string to_csv() const;
};

/// Recomputes the aggregate means from the per-case values.
void aggregate(EvalReport& report);

using SwapFn = std::function<VideoClip(const SwapRequest&)>;

/// Runs every case through `swap`; a failing case is recorded and the run
/// continues.
EvalReport run_bench(const std::vector<EvalCase>& cases, const SwapFn& swap);

/// Loads a benchmark manifest: {"cases": [{"id", "clip", "mask", "ref",
/// "pose"?, "ground_truth"?, "seed"?}]} with paths relative to the file.
std::vector<EvalCase> load_bench_manifest(const std::filesystem::path& path);

void write_report(const std::filesystem::path& dir, const EvalReport& report);

}  // namespace subswap
