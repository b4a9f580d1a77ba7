#include "subswap/evalbench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "subswap/io.hpp"

namespace subswap {

namespace {

constexpr Index kColourBins = 8;
constexpr Index kOrientationBins = 16;
constexpr double kPsnrCap = 50.0;

// Square dilation of one frame, separable as a row pass then a column pass.
Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> dilate(const MaskSequence& m, Index t, Index r) {
  const Index h = m.height(), w = m.width();
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> rows(h, w), out(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      bool any = false;
      for (Index xx = std::max<Index>(0, x - r); xx <= std::min(w - 1, x + r) && !any; ++xx)
        any = m(t, y, xx) != 0;
      rows(y, x) = any;
    }
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      bool any = false;
      for (Index yy = std::max<Index>(0, y - r); yy <= std::min(h - 1, y + r) && !any; ++yy)
        any = rows(yy, x);
      out(y, x) = any;
    }
  return out;
}

bool alpha_at(const ReferenceImage& r, Index y, Index x) {
  return !r.alpha || (*r.alpha)(y, x) != 0;
}

Eigen::ArrayXd colour_histogram(const ReferenceImage& r) {
  Eigen::ArrayXd hist = Eigen::ArrayXd::Zero(kColourBins * kColourBins * kColourBins);
  auto bin = [](float v) {
    return std::clamp<Index>(static_cast<Index>(v * static_cast<float>(kColourBins)), 0,
                             kColourBins - 1);
  };
  for (Index y = 0; y < r.height(); ++y)
    for (Index x = 0; x < r.width(); ++x) {
      if (!alpha_at(r, y, x)) continue;
      const Index b = (bin(r.image(0, y, x)) * kColourBins + bin(r.image(1, y, x))) * kColourBins +
                      bin(r.image(2, y, x));
      hist(b) += 1.0;
    }
  const double total = hist.sum();
  if (total > 0) hist /= total;
  return hist;
}

Eigen::ArrayXd orientation_histogram(const ReferenceImage& r) {
  const Index h = r.height(), w = r.width();
  Eigen::ArrayXXd lum(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      lum(y, x) = alpha_at(r, y, x)
                      ? (static_cast<double>(r.image(0, y, x)) + r.image(1, y, x) + r.image(2, y, x)) / 3.0
                      : 0.0;
  Eigen::ArrayXd hist = Eigen::ArrayXd::Zero(kOrientationBins);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      if (!alpha_at(r, y, x)) continue;
      const double gx = 0.5 * (lum(y, std::min(w - 1, x + 1)) - lum(y, std::max<Index>(0, x - 1)));
      const double gy = 0.5 * (lum(std::min(h - 1, y + 1), x) - lum(std::max<Index>(0, y - 1), x));
      const double mag = std::hypot(gx, gy);
      if (mag == 0) continue;
      const double a = std::atan2(gy, gx) + std::numbers::pi;  // [0, 2pi]
      const Index b = std::min<Index>(
          kOrientationBins - 1,
          static_cast<Index>(a / (2 * std::numbers::pi) * static_cast<double>(kOrientationBins)));
      hist(b) += mag;
    }
  return hist;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "skipped";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", *v);
  return buf;
}

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::optional<double> background_preservation(const VideoClip& source, const VideoClip& output,
                                              const MaskSequence& mask, Index dilation_px) {
  check_same_dims(source, mask);
  check_same_dims(output, mask);
  require(dilation_px >= 0, ErrorCode::kConfig, "dilation must be >= 0");
  double score = 0;
  Index frames = 0;
  for (Index t = 0; t < source.frames(); ++t) {
    const auto fg = dilate(mask, t, dilation_px);
    double se = 0;
    Index n = 0;
    for (Index y = 0; y < source.height(); ++y)
      for (Index x = 0; x < source.width(); ++x) {
        if (fg(y, x)) continue;
        for (Index c = 0; c < kPixelChannels; ++c) {
          const double d =
              static_cast<double>(source(t, c, y, x)) - static_cast<double>(output(t, c, y, x));
          se += d * d;
          ++n;
        }
      }
    if (n == 0) continue;
    const double psnr =
        se == 0 ? kPsnrCap : std::min(kPsnrCap, 10.0 * std::log10(static_cast<double>(n) / se));
    score += psnr / kPsnrCap;
    ++frames;
  }
  if (frames == 0) return std::nullopt;
  return score / static_cast<double>(frames);
}

double appearance_similarity(const ReferenceImage& a, const ReferenceImage& b) {
  const Eigen::ArrayXd ca = colour_histogram(a), cb = colour_histogram(b);
  const double colour = (ca.sum() > 0 && cb.sum() > 0) ? ca.min(cb).sum() : 0.0;
  const Eigen::ArrayXd oa = orientation_histogram(a), ob = orientation_histogram(b);
  const double na = std::sqrt(oa.square().sum()), nb = std::sqrt(ob.square().sum());
  double gradient;
  if (na == 0 && nb == 0)
    gradient = 1.0;
  else if (na == 0 || nb == 0)
    gradient = 0.0;
  else
    gradient = (oa * ob).sum() / (na * nb);
  return std::clamp(0.5 * colour + 0.5 * gradient, 0.0, 1.0);
}

double reference_appearance(const ReferenceImage& reference, const VideoClip& output,
                            const MaskSequence& output_mask, Index max_frames) {
  check_same_dims(output, output_mask);
  reference.validate();
  std::vector<Index> frames;
  for (Index t = 0; t < output_mask.frames(); ++t)
    if (!output_mask.empty_frame(t)) frames.push_back(t);
  require(!frames.empty(), ErrorCode::kEmptySubject, "empty subject frame");
  const Index n = static_cast<Index>(frames.size());
  const Index m = std::min(std::max<Index>(1, max_frames), n);
  double total = 0;
  for (Index i = 0; i < m; ++i) {
    const Index t = frames[static_cast<std::size_t>(i * n / m)];
    total += appearance_similarity(reference, extract_reference(output, output_mask, t));
  }
  return total / static_cast<double>(m);
}

void aggregate(EvalReport& r) {
  double bg = 0, app = 0;
  r.background_cases = r.appearance_cases = r.failed = 0;
  for (const auto& c : r.cases) {
    if (!c.error.empty()) ++r.failed;
    if (c.background) {
      bg += *c.background;
      ++r.background_cases;
    }
    if (c.appearance) {
      app += *c.appearance;
      ++r.appearance_cases;
    }
  }
  r.mean_background = r.background_cases ? bg / static_cast<double>(r.background_cases) : 0.0;
  r.mean_appearance = r.appearance_cases ? app / static_cast<double>(r.appearance_cases) : 0.0;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& c : cases)
    cs.push_back({{"id", c.id},
                  {"background_preservation", opt_json(c.background)},
                  {"reference_appearance", opt_json(c.appearance)},
                  {"runtime_s", c.runtime_s},
                  {"error", c.error}});
  return {{"metrics_version", kMetricsVersion},
          {"metrics",
           {{"background_preservation",
             "mean per-frame min(PSNR,50)/50 outside the mask dilated by 8 px"},
            {"reference_appearance",
             "0.5 colour-histogram intersection (8^3 bins) + 0.5 gradient-orientation "
             "histogram cosine (16 bins), mask weighted"}}},
          {"cases", cs},
          {"aggregate",
           {{"background_preservation", mean_background},
            {"reference_appearance", mean_appearance},
            {"background_cases", background_cases},
            {"appearance_cases", appearance_cases},
            {"failed", failed},
            {"cases", static_cast<Index>(cases.size())}}}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  require(j.value("metrics_version", "") == kMetricsVersion, ErrorCode::kBadVersion,
          "report metrics version differs", j.value("metrics_version", ""));
  EvalReport r;
  for (const auto& c : j.at("cases")) {
    CaseResult cr;
    cr.id = c.at("id").get<std::string>();
    cr.background = opt_from(c.at("background_preservation"));
    cr.appearance = opt_from(c.at("reference_appearance"));
    cr.runtime_s = c.at("runtime_s").get<double>();
    cr.error = c.at("error").get<std::string>();
    r.cases.push_back(std::move(cr));
  }
  const auto& a = j.at("aggregate");
  r.mean_background = a.at("background_preservation").get<double>();
  r.mean_appearance = a.at("reference_appearance").get<double>();
  r.background_cases = a.at("background_cases").get<Index>();
  r.appearance_cases = a.at("appearance_cases").get<Index>();
  r.failed = a.at("failed").get<Index>();
  return r;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "# " << kMetricsVersion << "\n";
  os << "id,background_preservation,reference_appearance,runtime_s,status\n";
  for (const auto& c : cases)
    os << c.id << ',' << fmt(c.background) << ',' << fmt(c.appearance) << ','
       << fmt(c.runtime_s) << ',' << (c.error.empty() ? "ok" : "failed") << '\n';
  os << "mean," << fmt(mean_background) << ',' << fmt(mean_appearance) << ",,\n";
  return os.str();
}

EvalReport run_bench(const std::vector<EvalCase>& cases, const SwapFn& swap) {
  EvalReport report;
  for (const auto& ec : cases) {
    CaseResult cr;
    cr.id = ec.id;
    const auto start = std::chrono::steady_clock::now();
    try {
      const VideoClip out = swap(ec.request);
      cr.background = background_preservation(ec.request.clip, out, ec.request.mask);
      cr.appearance = reference_appearance(ec.request.reference, out, ec.request.mask);
    } catch (const std::exception& e) {
      cr.error = e.what();
    }
    cr.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.cases.push_back(std::move(cr));
  }
  aggregate(report);
  return report;
}

std::vector<EvalCase> load_bench_manifest(const std::filesystem::path& path) {
  const nlohmann::json j = read_json(path);
  const auto base = path.parent_path();
  require(j.contains("cases") && j.at("cases").is_array(), ErrorCode::kConfig,
          "bench manifest needs a 'cases' array", path.string());
  std::vector<EvalCase> out;
  Index n = 0;
  for (const auto& c : j.at("cases")) {
    EvalCase ec;
    ec.id = c.value("id", "case_" + std::to_string(n++));
    ec.request.clip = load_frame_folder(base / c.at("clip").get<std::string>());
    ec.request.mask = load_mask_folder(base / c.at("mask").get<std::string>());
    ec.request.reference = load_reference_png(base / c.at("ref").get<std::string>());
    if (c.contains("pose") && !c.at("pose").is_null())
      ec.request.pose = pose_from_json(read_json(base / c.at("pose").get<std::string>()));
    if (c.contains("ground_truth") && !c.at("ground_truth").is_null())
      ec.ground_truth = load_frame_folder(base / c.at("ground_truth").get<std::string>());
    ec.request.seed = c.value("seed", std::uint64_t{0});
    out.push_back(std::move(ec));
  }
  return out;
}

void write_report(const std::filesystem::path& dir, const EvalReport& report) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  write_text(dir / "report.csv", report.to_csv());
}

}  // namespace subswap
