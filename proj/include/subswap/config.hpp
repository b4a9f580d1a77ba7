#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "subswap/data_pipeline.hpp"
#include "subswap/inference.hpp"
#include "subswap/mask_augment.hpp"
#include "subswap/training.hpp"

namespace subswap {

struct PathsConfig {
  std::string data_dir = "data";
  std::string out_dir = "out";
  std::string weights = "checkpoints/toy";
};

/// Every tunable of the tool in one document. Loading overlays a partial
/// JSON object on the defaults; unknown keys are rejected.
struct GlobalConfig {
  PathsConfig paths;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  TrainConfig train;
  DenoiserConfig model;
  FilterConfig filter;
  SamplerConfig sampler;
  SceneSpec scene;

  nlohmann::json to_json() const;
  static GlobalConfig from_json(const nlohmann::json& j);
  static GlobalConfig from_json(const nlohmann::json& j, GlobalConfig base);
  static GlobalConfig load(const std::filesystem::path& path);
  void validate() const;
};

/// Throws kConfig naming the first key of `j` outside `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                std::string_view where);

nlohmann::json to_json(const AugmentConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const FilterConfig& c);
nlohmann::json to_json(const SamplerConfig& c);
nlohmann::json to_json(const SceneSpec& s);

void apply_json(const nlohmann::json& j, AugmentConfig& c);
void apply_json(const nlohmann::json& j, TrainConfig& c);
void apply_json(const nlohmann::json& j, FilterConfig& c);
void apply_json(const nlohmann::json& j, SamplerConfig& c);
void apply_json(const nlohmann::json& j, SceneSpec& s);

std::string_view to_string(Trainable t);
Trainable parse_trainable(std::string_view s);
std::string_view to_string(DummySource d);
DummySource parse_dummy_source(std::string_view s);
std::string_view to_string(MotionRule r);
MotionRule parse_motion_rule(std::string_view s);

}  // namespace subswap
