#include "subswap/config.hpp"

#include <algorithm>

#include "subswap/io.hpp"
#include "subswap/latent_codec.hpp"

namespace subswap {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                std::string_view where) {
  require(j.is_object(), ErrorCode::kConfig, "config section must be an object", std::string(where));
  for (const auto& item : j.items()) {
    const std::string& key = item.key();
    const bool known = std::find(allowed.begin(), allowed.end(), key) != allowed.end();
    require(known, ErrorCode::kConfig, "unknown config key", std::string(where) + "." + key);
  }
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorCode::kConfig, "config value has the wrong type", key);
    }
  }
}

}  // namespace

std::string_view to_string(Trainable t) { return t == Trainable::kAll ? "all" : "self_attention"; }

Trainable parse_trainable(std::string_view s) {
  if (s == "all") return Trainable::kAll;
  if (s == "self_attention") return Trainable::kSelfAttention;
  fail(ErrorCode::kConfig, "trainable must be 'all' or 'self_attention'", std::string(s));
}

std::string_view to_string(DummySource d) { return d == DummySource::kClean ? "clean" : "noisy"; }

DummySource parse_dummy_source(std::string_view s) {
  if (s == "clean") return DummySource::kClean;
  if (s == "noisy") return DummySource::kNoisy;
  fail(ErrorCode::kConfig, "dummy_source must be 'clean' or 'noisy'", std::string(s));
}

std::string_view to_string(MotionRule r) { return r == MotionRule::kMinimum ? "minimum" : "maximum"; }

MotionRule parse_motion_rule(std::string_view s) {
  if (s == "minimum") return MotionRule::kMinimum;
  if (s == "maximum") return MotionRule::kMaximum;
  fail(ErrorCode::kConfig, "motion_rule must be 'minimum' or 'maximum'", std::string(s));
}

json DenoiserConfig::to_json() const {
  return {{"dim", dim},           {"layers", layers},     {"heads", heads},
          {"patch", patch},       {"time_dim", time_dim}, {"latent_channels", latent_channels},
          {"seed", seed}};
}

DenoiserConfig DenoiserConfig::from_json(const json& j) {
  check_keys(j, {"dim", "layers", "heads", "patch", "time_dim", "latent_channels", "seed"}, "model");
  DenoiserConfig c;
  read(j, "dim", c.dim);
  read(j, "layers", c.layers);
  read(j, "heads", c.heads);
  read(j, "patch", c.patch);
  read(j, "time_dim", c.time_dim);
  read(j, "latent_channels", c.latent_channels);
  read(j, "seed", c.seed);
  return c;
}

json to_json(const AugmentConfig& c) {
  return {{"p_bbox", c.p_bbox},
          {"h1", c.h1},
          {"h2", c.h2},
          {"h3", c.h3},
          {"reference_height", c.reference_height},
          {"p_shape", c.p_shape},
          {"min_shapes", c.min_shapes},
          {"max_shapes", c.max_shapes},
          {"shape_scale_min", c.shape_scale_min},
          {"shape_scale_max", c.shape_scale_max}};
}

void apply_json(const json& j, AugmentConfig& c) {
  check_keys(j,
             {"p_bbox", "h1", "h2", "h3", "reference_height", "p_shape", "min_shapes", "max_shapes",
              "shape_scale_min", "shape_scale_max"},
             "augment");
  read(j, "p_bbox", c.p_bbox);
  read(j, "h1", c.h1);
  read(j, "h2", c.h2);
  read(j, "h3", c.h3);
  read(j, "reference_height", c.reference_height);
  read(j, "p_shape", c.p_shape);
  read(j, "min_shapes", c.min_shapes);
  read(j, "max_shapes", c.max_shapes);
  read(j, "shape_scale_min", c.shape_scale_min);
  read(j, "shape_scale_max", c.shape_scale_max);
}

json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch", c.batch},
          {"learning_rate", c.learning_rate},
          {"lambda", c.lambda},
          {"reference",
           {{"scale_min", c.reference.scale_min},
            {"scale_max", c.reference.scale_max},
            {"max_rotation_deg", c.reference.max_rotation_deg},
            {"flip_prob", c.reference.flip_prob},
            {"max_brightness", c.reference.max_brightness}}},
          {"trainable", to_string(c.trainable)},
          {"dummy_source", to_string(c.dummy_source)},
          {"rms_decay", c.rms_decay},
          {"rms_eps", c.rms_eps}};
}

void apply_json(const json& j, TrainConfig& c) {
  check_keys(j,
             {"steps", "batch", "learning_rate", "lambda", "reference", "trainable", "dummy_source",
              "rms_decay", "rms_eps"},
             "train");
  read(j, "steps", c.steps);
  read(j, "batch", c.batch);
  read(j, "learning_rate", c.learning_rate);
  read(j, "lambda", c.lambda);
  read(j, "rms_decay", c.rms_decay);
  read(j, "rms_eps", c.rms_eps);
  if (j.contains("reference")) {
    const json& r = j.at("reference");
    check_keys(r, {"scale_min", "scale_max", "max_rotation_deg", "flip_prob", "max_brightness"},
               "train.reference");
    read(r, "scale_min", c.reference.scale_min);
    read(r, "scale_max", c.reference.scale_max);
    read(r, "max_rotation_deg", c.reference.max_rotation_deg);
    read(r, "flip_prob", c.reference.flip_prob);
    read(r, "max_brightness", c.reference.max_brightness);
  }
  if (j.contains("trainable")) c.trainable = parse_trainable(j.at("trainable").get<std::string>());
  if (j.contains("dummy_source"))
    c.dummy_source = parse_dummy_source(j.at("dummy_source").get<std::string>());
}

json to_json(const FilterConfig& c) {
  json ratio;
  for (std::size_t i = 0; i < kCategoryCount; ++i)
    ratio[std::string(to_string(static_cast<Category>(i)))] = c.target_ratio[i];
  return {{"a_min", c.a_min},         {"a_max", c.a_max},
          {"c_min", c.c_min},         {"m_min", c.m_min},
          {"motion_rule", to_string(c.motion_rule)},
          {"target_ratio", ratio},    {"ratio_tolerance", c.ratio_tolerance}};
}

void apply_json(const json& j, FilterConfig& c) {
  check_keys(j, {"a_min", "a_max", "c_min", "m_min", "motion_rule", "target_ratio", "ratio_tolerance"},
             "filter");
  read(j, "a_min", c.a_min);
  read(j, "a_max", c.a_max);
  read(j, "c_min", c.c_min);
  read(j, "m_min", c.m_min);
  read(j, "ratio_tolerance", c.ratio_tolerance);
  if (j.contains("motion_rule"))
    c.motion_rule = parse_motion_rule(j.at("motion_rule").get<std::string>());
  if (j.contains("target_ratio")) {
    const json& r = j.at("target_ratio");
    check_keys(r, {"human", "garment", "small_object", "large_object"}, "filter.target_ratio");
    for (std::size_t i = 0; i < kCategoryCount; ++i)
      read(r, std::string(to_string(static_cast<Category>(i))).c_str(), c.target_ratio[i]);
  }
}

json to_json(const SamplerConfig& c) {
  return {{"steps", c.steps},
          {"segment_length", c.segment_length},
          {"feather", c.feather},
          {"use_tunnel", c.use_tunnel},
          {"tunnel",
           {{"threshold", c.tunnel.threshold}, {"margin", c.tunnel.margin}, {"snap", c.tunnel.snap}}}};
}

void apply_json(const json& j, SamplerConfig& c) {
  check_keys(j, {"steps", "segment_length", "feather", "use_tunnel", "tunnel"}, "sampler");
  read(j, "steps", c.steps);
  read(j, "segment_length", c.segment_length);
  read(j, "feather", c.feather);
  read(j, "use_tunnel", c.use_tunnel);
  if (j.contains("tunnel")) {
    const json& t = j.at("tunnel");
    check_keys(t, {"threshold", "margin", "snap"}, "sampler.tunnel");
    read(t, "threshold", c.tunnel.threshold);
    read(t, "margin", c.tunnel.margin);
    read(t, "snap", c.tunnel.snap);
  }
}

json to_json(const SceneSpec& s) {
  json roster = json::array();
  for (Category c : s.roster) roster.push_back(to_string(c));
  return {{"frames", s.frames}, {"height", s.height}, {"width", s.width}, {"roster", roster}};
}

void apply_json(const json& j, SceneSpec& s) {
  check_keys(j, {"frames", "height", "width", "roster"}, "scene");
  read(j, "frames", s.frames);
  read(j, "height", s.height);
  read(j, "width", s.width);
  if (j.contains("roster")) {
    s.roster.clear();
    for (const auto& c : j.at("roster")) s.roster.push_back(parse_category(c.get<std::string>()));
  }
}

json GlobalConfig::to_json() const {
  return {{"paths", {{"data_dir", paths.data_dir}, {"out_dir", paths.out_dir}, {"weights", paths.weights}}},
          {"seed", seed},
          {"codec", CodecSpec{}.to_json()},
          {"augment", subswap::to_json(augment)},
          {"train", subswap::to_json(train)},
          {"model", model.to_json()},
          {"filter", subswap::to_json(filter)},
          {"sampler", subswap::to_json(sampler)},
          {"scene", subswap::to_json(scene)}};
}

GlobalConfig GlobalConfig::from_json(const json& j) { return from_json(j, GlobalConfig{}); }

GlobalConfig GlobalConfig::from_json(const json& j, GlobalConfig c) {
  check_keys(j, {"paths", "seed", "codec", "augment", "train", "model", "filter", "sampler", "scene"},
             "config");
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    check_keys(p, {"data_dir", "out_dir", "weights"}, "paths");
    read(p, "data_dir", c.paths.data_dir);
    read(p, "out_dir", c.paths.out_dir);
    read(p, "weights", c.paths.weights);
  }
  read(j, "seed", c.seed);
  if (j.contains("codec")) {
    const json expected = CodecSpec{}.to_json();
    check_keys(j.at("codec"), {"kind", "temporal_factor", "spatial_factor", "latent_channels", "pixel_range"},
               "codec");
    for (const auto& [key, value] : j.at("codec").items())
      require(value == expected.at(key), ErrorCode::kConfig, "codec constants are fixed",
              "codec." + key);
  }
  if (j.contains("augment")) apply_json(j.at("augment"), c.augment);
  if (j.contains("train")) apply_json(j.at("train"), c.train);
  if (j.contains("model")) {
    json merged = c.model.to_json();
    check_keys(j.at("model"), {"dim", "layers", "heads", "patch", "time_dim", "latent_channels", "seed"},
               "model");
    merged.update(j.at("model"));
    c.model = DenoiserConfig::from_json(merged);
  }
  if (j.contains("filter")) apply_json(j.at("filter"), c.filter);
  if (j.contains("sampler")) apply_json(j.at("sampler"), c.sampler);
  if (j.contains("scene")) apply_json(j.at("scene"), c.scene);
  c.validate();
  return c;
}

GlobalConfig GlobalConfig::load(const std::filesystem::path& path) {
  return from_json(read_json(path));
}

void GlobalConfig::validate() const {
  augment.validate(augment.reference_height);
  train.validate();
  model.validate();
  filter.validate();
  require(sampler.steps >= 1 && sampler.feather >= 0, ErrorCode::kConfig,
          "sampler steps must be >= 1 and feather >= 0");
  require(sampler.segment_length >= 5 && (sampler.segment_length - 1) % 4 == 0, ErrorCode::kConfig,
          "segment length must be >= 5 and 1 mod 4");
  require(sampler.tunnel.snap >= 1 && sampler.tunnel.margin >= 1.0, ErrorCode::kConfig,
          "tunnel snap must be >= 1 and margin >= 1");
  require(!scene.roster.empty(), ErrorCode::kConfig, "scene roster is empty");
}

}  // namespace subswap
