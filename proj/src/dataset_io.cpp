#include "subswap/dataset_io.hpp"

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "subswap/io.hpp"

namespace subswap {

namespace fs = std::filesystem;

namespace {

std::string clip_dir(const SubjectRecord& r) { return "clips/" + r.clip_id; }

std::optional<Index> first_subject_frame(const MaskSequence& m) {
  for (Index t = 0; t < m.frames(); ++t)
    if (!m.empty_frame(t)) return t;
  return std::nullopt;
}

}  // namespace

nlohmann::json record_descriptor(const SubjectRecord& r) {
  const std::string base = clip_dir(r);
  return {{"clip_id", r.clip_id},
          {"category", to_string(r.category)},
          {"frames", base + "/frames"},
          {"mask", base + "/masks/" + std::string(to_string(r.category))},
          {"pose", r.pose ? nlohmann::json(base + "/pose.json") : nlohmann::json(nullptr)},
          {"reference", first_subject_frame(r.mask)
                            ? nlohmann::json(base + "/refs/" + std::string(to_string(r.category)) + ".png")
                            : nlohmann::json(nullptr)},
          {"stats", stats_to_json(r.stats)},
          {"seed", r.seed}};
}

fs::path write_dataset(const fs::path& dir, const std::vector<SubjectRecord>& records) {
  std::set<std::string> written;
  std::vector<nlohmann::json> lines;
  for (const auto& r : records) {
    require(r.clip != nullptr, ErrorCode::kValue, "record has no clip", r.clip_id);
    const nlohmann::json d = record_descriptor(r);
    if (written.insert(r.clip_id).second) {
      save_frame_folder(dir / d.at("frames").get<std::string>(), *r.clip);
      if (r.pose) write_text(dir / d.at("pose").get<std::string>(), pose_to_json(*r.pose).dump() + "\n");
    }
    save_mask_folder(dir / d.at("mask").get<std::string>(), r.mask);
    if (const auto t = first_subject_frame(r.mask))
      save_reference_png(dir / d.at("reference").get<std::string>(),
                         extract_reference(*r.clip, r.mask, *t));
    lines.push_back(d);
  }
  const fs::path manifest = dir / "manifest.jsonl";
  write_json_lines(manifest, lines);
  return manifest;
}

std::vector<nlohmann::json> read_json_lines(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open file", path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  Index n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception&) {
      fail(ErrorCode::kIo, "malformed manifest line", path.string() + ":" + std::to_string(n));
    }
  }
  return out;
}

void write_json_lines(const fs::path& path, const std::vector<nlohmann::json>& lines) {
  std::ostringstream os;
  for (const auto& l : lines) os << l.dump() << '\n';
  write_text(path, os.str());
}

std::vector<SubjectRecord> load_dataset(const fs::path& manifest, bool load_pixels) {
  const fs::path base = manifest.parent_path();
  std::map<std::string, std::shared_ptr<const VideoClip>> clips;
  std::map<std::string, std::shared_ptr<const PoseSequence>> poses;
  std::vector<SubjectRecord> out;
  for (const auto& d : read_json_lines(manifest)) {
    SubjectRecord r;
    try {
      r.clip_id = d.at("clip_id").get<std::string>();
      r.category = parse_category(d.at("category").get<std::string>());
      const auto& s = d.at("stats");
      r.stats = {s.at("area_ratio").get<double>(), s.at("coverage").get<double>(),
                 s.at("motion").get<double>()};
      r.seed = d.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kIo, std::string("bad manifest descriptor: ") + e.what(), manifest.string());
    }
    r.source = manifest.string();
    if (load_pixels) {
      auto& clip = clips[r.clip_id];
      if (!clip)
        clip = std::make_shared<const VideoClip>(
            load_frame_folder(base / d.at("frames").get<std::string>()));
      r.clip = clip;
      r.mask = load_mask_folder(base / d.at("mask").get<std::string>());
      if (d.contains("pose") && !d.at("pose").is_null()) {
        auto& pose = poses[r.clip_id];
        if (!pose)
          pose = std::make_shared<const PoseSequence>(
              pose_from_json(read_json(base / d.at("pose").get<std::string>())));
        r.pose = pose;
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace subswap
