#include "subswap/cli.hpp"

#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "subswap/config.hpp"
#include "subswap/dataset_io.hpp"
#include "subswap/evalbench.hpp"
#include "subswap/inference.hpp"
#include "subswap/io.hpp"
#include "subswap/latent_codec.hpp"
#include "subswap/training.hpp"

namespace subswap {

namespace fs = std::filesystem;
using nlohmann::json;

std::string error_json(const std::exception& e) {
  json j;
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    j = {{"code", error_code_name(err->code())}, {"message", err->what()}, {"context", err->context()}};
  } else {
    j = {{"code", "runtime"}, {"message", e.what()}, {"context", ""}};
  }
  return j.dump();
}

namespace {

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

std::vector<SubjectRecord> generate_records(Index scenes, std::uint64_t seed, const SceneSpec& spec) {
  std::vector<SubjectRecord> out;
  for (Index i = 0; i < scenes; ++i) {
    auto recs = generate_scene(seed + static_cast<std::uint64_t>(i), spec);
    for (auto& r : recs) out.push_back(std::move(r));
  }
  return out;
}

// Re-roots a manifest-relative path onto another directory.
std::string rebase(const std::string& rel, const fs::path& from_dir, const fs::path& to_dir) {
  const fs::path abs = fs::absolute(from_dir / rel).lexically_normal();
  return abs.lexically_relative(fs::absolute(to_dir).lexically_normal()).generic_string();
}

int cmd_gen_data(const GlobalConfig& cfg, const std::string& out, Index count) {
  require(count >= 1, ErrorCode::kUsage, "--count must be >= 1");
  const auto records = generate_records(count, cfg.seed, cfg.scene);
  const fs::path manifest = write_dataset(out, records);
  print_json({{"manifest", manifest.string()},
              {"clips", count},
              {"records", static_cast<Index>(records.size())}});
  return kExitOk;
}

int cmd_filter(const GlobalConfig& cfg, const std::string& manifest, const std::string& out,
               bool do_balance, const std::string& rejected_path) {
  const auto lines = read_json_lines(manifest);
  auto records = load_dataset(manifest, false);
  for (std::size_t i = 0; i < records.size(); ++i) records[i].source = std::to_string(i);
  const FilterResult fr = filter(records, cfg.filter);
  std::vector<SubjectRecord> kept = fr.kept;
  json summary = {{"input", static_cast<Index>(records.size())},
                  {"passed_filter", static_cast<Index>(fr.kept.size())}};
  std::map<std::string, Index> reasons;
  for (const auto& [rec, why] : fr.rejected) ++reasons[std::string(to_string(why))];
  summary["rejected"] = reasons;
  if (do_balance) {
    Rng rng(cfg.seed);
    BalanceResult br = balance(fr.kept, cfg.filter, rng);
    kept = std::move(br.kept);
    json counts;
    for (std::size_t c = 0; c < kCategoryCount; ++c)
      counts[std::string(to_string(static_cast<Category>(c)))] = br.counts[c];
    summary["balanced"] = {{"counts", counts}, {"feasible", br.feasible}};
  }
  const fs::path from = fs::path(manifest).parent_path();
  const fs::path to = fs::path(out).parent_path();
  auto rebased = [&](json d) {
    for (const char* key : {"frames", "mask", "pose", "reference"})
      if (d.contains(key) && d.at(key).is_string())
        d[key] = rebase(d.at(key).get<std::string>(), from, to);
    return d;
  };
  std::vector<json> out_lines;
  for (const auto& r : kept) out_lines.push_back(rebased(lines[std::stoul(r.source)]));
  if (!to.empty()) fs::create_directories(to);
  write_json_lines(out, out_lines);
  if (!rejected_path.empty()) {
    std::vector<json> rej;
    for (const auto& [rec, why] : fr.rejected)
      rej.push_back({{"descriptor", rebased(lines[std::stoul(rec.source)])}, {"reason", to_string(why)}});
    write_json_lines(rejected_path, rej);
  }
  summary["kept"] = static_cast<Index>(out_lines.size());
  print_json(summary);
  return kExitOk;
}

int cmd_augment_mask(const GlobalConfig& cfg, const std::string& mask_dir, const std::string& mode,
                     const std::string& out, const std::string& record_path) {
  const MaskSequence mask = load_mask_folder(mask_dir);
  Rng rng(cfg.seed);
  const AugmentResult res = augment(mask, parse_augment_mode(mode), cfg.augment, rng);
  save_mask_folder(out, res.mask);
  const json rec = res.record.to_json();
  if (!record_path.empty()) write_text(record_path, rec.dump(2) + "\n");
  print_json(rec);
  return kExitOk;
}

int cmd_build_input(const GlobalConfig& cfg, const std::string& clip_dir, const std::string& mask_dir,
                    const std::string& ref_path, const std::string& pose_path, const std::string& out,
                    double t) {
  require(t >= 0 && t <= 1, ErrorCode::kUsage, "--t must be in [0,1]");
  const VideoClip clip = load_frame_folder(clip_dir);
  const MaskSequence mask = load_mask_folder(mask_dir);
  check_same_dims(clip, mask);
  const ReferenceImage ref = load_reference_png(ref_path);
  Rng rng(cfg.seed);
  const AugmentResult aug = augment(mask, AugmentMode::kInference, cfg.augment, rng);
  const Tensor<float> x0 = to_model_space(encode(clip));
  const Tensor<float> agnostic = to_model_space(encode(make_agnostic(clip, aug.mask)));
  const Tensor<float> reference = to_model_space(encode_reference(ref, clip.height(), clip.width()));
  const Tensor<float> mask_latent = downsample_mask(aug.mask);
  std::optional<Tensor<float>> pose;
  if (!pose_path.empty()) pose = to_model_space(encode(render_pose(pose_from_json(read_json(pose_path)))));
  std::normal_distribution<float> normal(0.f, 1.f);
  Tensor<float> noise(x0.shape());
  for (Index i = 0; i < noise.size(); ++i) noise.array()(i) = normal(rng);
  const FlowPair<float> flow = flow_target(x0, noise, static_cast<float>(t));
  FusionInputs<float> in;
  in.noisy = &flow.x_t;
  in.clean = &x0;
  in.agnostic = &agnostic;
  in.pose = pose ? &*pose : nullptr;
  in.mask = &mask_latent;
  in.reference = &reference;
  const FusedInput<float> fused =
      assemble(in, FusionConfig{cfg.train.dummy_source, cfg.model.patch});
  fs::create_directories(out);
  save_tensor(fs::path(out) / "fused.vten", fused.tensor);
  Tensor<std::uint8_t> attn(Shape{fused.attention.rows(), fused.attention.cols()});
  for (Index i = 0; i < attn.dim(0); ++i)
    for (Index j = 0; j < attn.dim(1); ++j) attn(i, j) = fused.attention(i, j) ? 1 : 0;
  save_tensor(fs::path(out) / "attention.vten", attn);
  json manifest = fused.manifest();
  manifest["t"] = t;
  manifest["augment"] = aug.record.to_json();
  write_text(fs::path(out) / "manifest.json", manifest.dump(2) + "\n");
  print_json(manifest);
  return kExitOk;
}

int cmd_train(const GlobalConfig& cfg, const std::string& data, Index scenes, const std::string& out,
              Index log_every) {
  std::vector<SubjectRecord> records =
      data.empty() ? generate_records(scenes, cfg.seed, cfg.scene) : load_dataset(data, true);
  const Index total = static_cast<Index>(records.size());
  records = filter(records, cfg.filter).kept;
  require(!records.empty(), ErrorCode::kValue, "no training records pass the filter");
  TrainState state = init_train_state(cfg.model, cfg.train, cfg.seed);
  const TrainResult res = train(records, state, cfg.train, cfg.augment, [&](Index s, const StepReport& r) {
    if (log_every > 0 && (s % log_every == 0 || s + 1 == cfg.train.steps))
      std::cerr << json{{"step", s}, {"l_final", r.l_final}}.dump() << '\n';
  });
  save_checkpoint(out, state.model, state.step,
                  {{"train", to_json(cfg.train)}, {"records", static_cast<Index>(records.size())},
                   {"seed", cfg.seed}});
  write_text(fs::path(out) / "loss.csv", loss_csv(res.history));
  print_json({{"checkpoint", out},
              {"records", static_cast<Index>(records.size())},
              {"records_before_filter", total},
              {"steps", state.step},
              {"skipped", state.skipped},
              {"seconds", res.seconds}});
  return kExitOk;
}

struct InferArgs {
  std::string clip, mask, ref, pose, weights, out, first_frame;
  Index segment_length = 0, steps = 0, feather = -1;
  bool no_tunnel = false;
};

int cmd_infer(const GlobalConfig& cfg, const InferArgs& a) {
  SwapRequest req;
  req.clip = load_frame_folder(a.clip);
  req.mask = load_mask_folder(a.mask);
  req.reference = load_reference_png(a.ref);
  if (!a.pose.empty()) req.pose = pose_from_json(read_json(a.pose));
  if (!a.first_frame.empty()) req.first_frame_override = load_reference_png(a.first_frame).image;
  req.seed = cfg.seed;
  req.sampler = cfg.sampler;
  req.augment = cfg.augment;
  if (a.segment_length > 0) req.sampler.segment_length = a.segment_length;
  if (a.steps > 0) req.sampler.steps = a.steps;
  if (a.feather >= 0) req.sampler.feather = a.feather;
  if (a.no_tunnel) req.sampler.use_tunnel = false;
  const Denoiser<float> model = load_checkpoint(a.weights.empty() ? cfg.paths.weights : a.weights);
  const SwapResult res = run_swap(req, model);
  save_frame_folder(fs::path(a.out) / "frames", res.output);
  save_mask_folder(fs::path(a.out) / "aug_mask", res.aug_mask);
  write_text(fs::path(a.out) / "report.json", res.report.dump(2) + "\n");
  print_json(res.report);
  return kExitOk;
}

int cmd_eval(const GlobalConfig& cfg, const std::string& manifest, const std::string& weights,
             const std::string& out, bool identity) {
  auto cases = load_bench_manifest(manifest);
  for (auto& c : cases) {
    c.request.sampler = cfg.sampler;
    c.request.augment = cfg.augment;
  }
  SwapFn fn;
  std::optional<Denoiser<float>> model;
  if (identity) {
    fn = [](const SwapRequest& r) { return r.clip; };
  } else {
    model = load_checkpoint(weights.empty() ? cfg.paths.weights : weights);
    fn = [&](const SwapRequest& r) { return run_swap(r, *model).output; };
  }
  const EvalReport report = run_bench(cases, fn);
  write_report(out, report);
  print_json(report.to_json().at("aggregate"));
  return kExitOk;
}

int cmd_selftest(const GlobalConfig& cfg) {
  const auto checks = run_selftest(cfg.seed);
  bool ok = true;
  for (const auto& c : checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name;
    if (!c.detail.empty()) std::cout << " (" << c.detail << ")";
    std::cout << '\n';
    ok = ok && c.passed;
  }
  return ok ? kExitOk : kExitRuntime;
}

void usage_error(const std::string& message) {
  std::cerr << json{{"code", "usage"}, {"message", message}, {"context", ""}}.dump() << '\n';
}

}  // namespace

int dispatch(int argc, char** argv) {
  CLI::App app{"Desk-scale video subject swapping toolkit", "subswap"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  std::uint64_t seed = 0;
  std::string config_path;
  bool print_config = false;
  CLI::Option* seed_opt = app.add_option("--seed", seed, "Global random seed");
  app.add_option("--config", config_path, "JSON config overlaid on the defaults");
  app.add_flag("--print-config", print_config, "Print the effective configuration and exit");

  std::string out, manifest, mask, clip, ref, pose, weights, data, rejected, mode = "train",
                                                                           record;
  Index count = 8, frames = 0, height = 0, width = 0, scenes = 200, log_every = 100;
  Index steps = 0, batch = 0;
  double lr = 0, lambda = -1, t = 1.0;
  bool do_balance = false, identity = false;
  InferArgs ia;

  auto* gen = app.add_subcommand("gen-data", "Render synthetic scenes and write a dataset manifest");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--count", count, "Number of scenes");
  gen->add_option("--frames", frames, "Frames per clip (1 mod 4)");
  gen->add_option("--height", height, "Frame height");
  gen->add_option("--width", width, "Frame width");

  auto* filt = app.add_subcommand("filter-dataset", "Quality-filter and optionally balance a manifest");
  filt->add_option("--manifest", manifest, "Input manifest (JSON lines)")->required();
  filt->add_option("--out", out, "Output manifest")->required();
  filt->add_flag("--balance", do_balance, "Balance categories to the target ratio");
  filt->add_option("--rejected", rejected, "Write rejected descriptors with reasons here");

  auto* aug = app.add_subcommand("augment-mask", "Apply mask augmentation to a mask folder");
  aug->add_option("--mask", mask, "Mask frame folder")->required();
  aug->add_option("--mode", mode, "train or inference");
  aug->add_option("--out", out, "Output mask folder")->required();
  aug->add_option("--record", record, "Write the augmentation record JSON here");

  auto* build = app.add_subcommand("build-input", "Assemble the fused model input for a clip");
  build->add_option("--clip", clip, "Frame folder")->required();
  build->add_option("--mask", mask, "Mask folder")->required();
  build->add_option("--ref", ref, "Reference RGBA PNG")->required();
  build->add_option("--pose", pose, "Pose JSON");
  build->add_option("--t", t, "Diffusion time of the noisy stream");
  build->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train-toy", "Train the toy denoiser");
  tr->add_option("--data", data, "Dataset manifest; synthetic scenes are generated when absent");
  tr->add_option("--scenes", scenes, "Scenes to generate when --data is absent");
  tr->add_option("--out", out, "Checkpoint directory")->required();
  tr->add_option("--steps", steps, "Training steps");
  tr->add_option("--batch", batch, "Batch size");
  tr->add_option("--lr", lr, "Learning rate");
  tr->add_option("--lambda", lambda, "Subject reweighting coefficient");
  tr->add_option("--log-every", log_every, "Progress line interval on stderr (0 = off)");

  auto* inf = app.add_subcommand("infer", "Swap the masked subject for the reference");
  inf->add_option("--clip", ia.clip, "Frame folder")->required();
  inf->add_option("--mask", ia.mask, "Mask folder (every frame)")->required();
  inf->add_option("--ref", ia.ref, "Reference RGBA PNG")->required();
  inf->add_option("--pose", ia.pose, "Pose JSON");
  inf->add_option("--weights", ia.weights, "Checkpoint directory");
  inf->add_option("--segment-length", ia.segment_length, "Frames per segment (1 mod 4)");
  inf->add_option("--steps", ia.steps, "Sampler steps");
  inf->add_option("--feather", ia.feather, "Composite feather radius in pixels");
  inf->add_option("--first-frame", ia.first_frame, "Edited first frame PNG");
  inf->add_flag("--no-tunnel", ia.no_tunnel, "Never crop to a tunnel");
  inf->add_option("--out", ia.out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Run the benchmark manifest and write metric reports");
  ev->add_option("--manifest", manifest, "Benchmark manifest JSON")->required();
  ev->add_option("--weights", weights, "Checkpoint directory");
  ev->add_option("--out", out, "Report directory")->required();
  ev->add_flag("--identity", identity, "Use output = source instead of a model");

  auto* self = app.add_subcommand("selftest", "Run the built-in invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    usage_error(e.what());
    return kExitUsage;
  }

  try {
    GlobalConfig cfg = config_path.empty() ? GlobalConfig{} : GlobalConfig::load(config_path);
    if (seed_opt->count()) cfg.seed = seed;
    if (print_config) {
      print_json(cfg.to_json());
      return kExitOk;
    }
    if (app.get_subcommands().empty()) {
      usage_error("a subcommand is required");
      return kExitUsage;
    }
    if (gen->parsed()) {
      if (frames) cfg.scene.frames = frames;
      if (height) cfg.scene.height = height;
      if (width) cfg.scene.width = width;
      return cmd_gen_data(cfg, out, count);
    }
    if (filt->parsed()) return cmd_filter(cfg, manifest, out, do_balance, rejected);
    if (aug->parsed()) return cmd_augment_mask(cfg, mask, mode, out, record);
    if (build->parsed()) return cmd_build_input(cfg, clip, mask, ref, pose, out, t);
    if (tr->parsed()) {
      if (steps) cfg.train.steps = steps;
      if (batch) cfg.train.batch = batch;
      if (lr > 0) cfg.train.learning_rate = lr;
      if (lambda >= 0) cfg.train.lambda = lambda;
      cfg.train.validate();
      return cmd_train(cfg, data, scenes, out, log_every);
    }
    if (inf->parsed()) return cmd_infer(cfg, ia);
    if (ev->parsed()) return cmd_eval(cfg, manifest, weights, out, identity);
    if (self->parsed()) return cmd_selftest(cfg);
  } catch (const Error& e) {
    std::cerr << error_json(e) << '\n';
    return e.code() == ErrorCode::kUsage ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << error_json(e) << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace subswap
