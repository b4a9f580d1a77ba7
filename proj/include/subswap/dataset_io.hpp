#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "subswap/data_pipeline.hpp"

namespace subswap {

/// One manifest line: clip_id, category, frames/mask/pose/reference paths
/// relative to the manifest directory, stats and seed. The reference is the
/// subject's crop from its first non-empty frame (null for an empty mask).
nlohmann::json record_descriptor(const SubjectRecord& r);

/// Writes each distinct clip once (frame PNGs and pose JSON), each subject
/// mask and reference PNG, and `manifest.jsonl` under `dir`. Returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir,
                                    const std::vector<SubjectRecord>& records);

/// Reads a JSON-lines manifest. With `load_pixels` false only descriptors
/// and stats are filled (clip and mask stay empty).
std::vector<SubjectRecord> load_dataset(const std::filesystem::path& manifest, bool load_pixels);

std::vector<nlohmann::json> read_json_lines(const std::filesystem::path& path);
void write_json_lines(const std::filesystem::path& path, const std::vector<nlohmann::json>& lines);

}  // namespace subswap
