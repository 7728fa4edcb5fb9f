#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "liftvsr/diffusion.hpp"
#include "liftvsr/error.hpp"
#include "liftvsr/io.hpp"
#include "liftvsr/metrics.hpp"
#include "liftvsr/optim.hpp"
#include "liftvsr/parallel.hpp"
#include "liftvsr/synth.hpp"

namespace liftvsr::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr int kCheckpointVersion = 1;

bool is_bookkeeping_key(const std::string& key) {
  return key.rfind("run.", 0) == 0 || key.rfind("hash.", 0) == 0;
}

// --- config access -------------------------------------------------------------

template <typename T>
T get(const Config& cfg, const std::string& key) {
  if (!cfg.contains(key)) throw ConfigError("config: missing key " + key);
  try {
    return cfg.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: key " + key + " has the wrong type");
  }
}

std::size_t get_size(const Config& cfg, const std::string& key) {
  const auto& v = cfg.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError("config: key " + key + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

model::DenoiserConfig model_config(const Config& cfg, std::size_t height, std::size_t width,
                                   std::size_t channels) {
  model::DenoiserConfig m;
  m.blocks = get_size(cfg, "model.blocks");
  m.width = get_size(cfg, "model.width");
  m.heads = get_size(cfg, "model.heads");
  m.patch = get_size(cfg, "model.patch");
  m.dta_interval = get_size(cfg, "model.dta_interval");
  m.ffn_mult = get_size(cfg, "model.ffn_mult");
  m.cache_length = get_size(cfg, "model.cache_length");
  m.segment_length = get_size(cfg, "model.segment_length");
  m.rope = get<bool>(cfg, "model.rope");
  m.dta_flow = get<bool>(cfg, "model.dta");
  m.amc = get<bool>(cfg, "model.amc");
  m.init_seed = get<std::uint64_t>(cfg, "seed");
  m.image_height = height;
  m.image_width = width;
  m.channels = channels;
  return m;
}

diffusion::NoiseSchedule schedule_from(const Config& cfg) {
  return diffusion::NoiseSchedule::linear(get_size(cfg, "schedule.steps"),
                                          get<double>(cfg, "schedule.beta_start"),
                                          get<double>(cfg, "schedule.beta_end"));
}

// Keys that determine the network and its noise schedule; persisted with a
// checkpoint and compared on resume / inference.
const std::vector<std::string>& model_keys() {
  static const std::vector<std::string> keys = {
      "seed",          "model.blocks",       "model.width",          "model.heads",
      "model.patch",   "model.dta_interval", "model.ffn_mult",       "model.cache_length",
      "model.segment_length", "model.rope",  "model.dta",            "model.amc",
      "schedule.steps", "schedule.beta_start", "schedule.beta_end"};
  return keys;
}

// --- files ---------------------------------------------------------------------

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

void write_json(const fs::path& path, const Config& j) { io::write_file(path, j.dump(2) + "\n"); }

Config read_json(const fs::path& path) {
  const auto text = io::read_file(path);
  try {
    return Config::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

void write_run_record(const fs::path& out, const std::string& command, const Config& cfg,
                      const Config& hashes) {
  Config run;
  run["run.command"] = command;
  run["run.version"] = kToolVersion;
  for (const auto& [k, v] : cfg.items()) run[k] = v;
  for (const auto& [k, v] : hashes.items()) run["hash." + k] = v;
  write_json(out / "run.json", run);
}

fs::path sidecar_of(const fs::path& checkpoint) {
  auto p = checkpoint;
  p.replace_extension(".json");
  return p;
}

// --- checkpoints -----------------------------------------------------------------

void save_checkpoint(const fs::path& path, const Config& cfg, const model::Denoiser& model,
                     ad::Adam& opt, std::size_t image_h, std::size_t image_w, std::size_t channels) {
  std::vector<io::NamedTensor> entries;
  for (const auto& p : model.store().params()) {
    entries.push_back({"param:" + p.name, p.tensor.shape(), p.tensor.values()});
  }
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    entries.push_back({"adam.m:" + params[i].name, params[i].tensor.shape(), opt.first_moments()[i]});
    entries.push_back({"adam.v:" + params[i].name, params[i].tensor.shape(), opt.second_moments()[i]});
  }
  entries.push_back({"adam.step", {1}, {static_cast<double>(opt.step_count())}});
  io::write_table(path, entries);

  Config side;
  side["format"] = "liftvsr-checkpoint";
  side["version"] = kCheckpointVersion;
  for (const auto& k : model_keys()) side[k] = cfg.at(k);
  side["data.height"] = image_h;
  side["data.width"] = image_w;
  side["data.channels"] = channels;
  side["train.steps_done"] = opt.step_count();
  write_json(sidecar_of(path), side);
}

Config read_sidecar(const fs::path& checkpoint) {
  const auto side_path = sidecar_of(checkpoint);
  if (!fs::exists(side_path)) throw IoError("checkpoint sidecar missing: " + side_path.string());
  auto side = read_json(side_path);
  if (side.value("format", "") != "liftvsr-checkpoint") {
    throw VersionError("not a liftvsr checkpoint: " + side_path.string());
  }
  if (side.value("version", -1) != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version in " + side_path.string());
  }
  for (const auto& k : model_keys()) {
    if (!side.contains(k)) throw VersionError("checkpoint sidecar lacks " + k);
  }
  return side;
}

// Loads parameters (and optionally optimizer state) into an already built
// model; any name or shape disagreement means the checkpoint does not belong
// to this architecture.
void load_checkpoint(const fs::path& path, model::Denoiser& model, ad::Adam* opt) {
  const auto entries = io::read_table(path);
  std::map<std::string, const io::NamedTensor*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  auto fetch = [&](const std::string& name, const ad::Shape& shape) -> const io::NamedTensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw VersionError("checkpoint is missing " + name);
    if (it->second->shape != shape) {
      throw VersionError("checkpoint entry " + name + " has shape " +
                         ad::shape_str(it->second->shape) + ", model expects " + ad::shape_str(shape));
    }
    return *it->second;
  };
  std::size_t param_entries = 0;
  for (const auto& e : entries) param_entries += e.name.rfind("param:", 0) == 0;
  if (param_entries != model.store().params().size()) {
    throw VersionError("checkpoint holds " + std::to_string(param_entries) +
                       " parameters, model has " + std::to_string(model.store().params().size()));
  }
  for (const auto& p : model.store().params()) {
    const auto& e = fetch("param:" + p.name, p.tensor.shape());
    auto t = p.tensor;
    std::copy(e.values.begin(), e.values.end(), t.data().begin());
  }
  if (!opt) return;
  const auto& params = opt->params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt->first_moments()[i] = fetch("adam.m:" + params[i].name, params[i].tensor.shape()).values;
    opt->second_moments()[i] = fetch("adam.v:" + params[i].name, params[i].tensor.shape()).values;
  }
  opt->set_step_count(static_cast<std::int64_t>(fetch("adam.step", {1}).values[0]));
}

// --- dataset -------------------------------------------------------------------

struct Sample {
  std::string id;
  ad::Tensor hq, cond;
};

std::vector<Sample> load_dataset(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("dataset manifest not found: " + manifest_path.string());
  const auto manifest = read_json(manifest_path);
  std::vector<Sample> out;
  for (const auto& s : manifest.at("scenes")) {
    Sample smp;
    smp.id = s.at("id").get<std::string>();
    smp.hq = io::read_video(dir / s.at("hq").get<std::string>());
    const auto lq = io::read_video(dir / s.at("lq").get<std::string>());
    smp.cond = data::resize_bicubic(lq, smp.hq.dim(1), smp.hq.dim(2));
    if (smp.cond.shape() != smp.hq.shape()) {
      throw DataError("scene " + smp.id + ": LQ and HQ frame counts or channels disagree");
    }
    if (!out.empty() && smp.hq.shape() != out.front().hq.shape()) {
      throw DataError("scene " + smp.id + ": all scenes must share one shape");
    }
    out.push_back(std::move(smp));
  }
  if (out.empty()) throw DataError("dataset " + dir.string() + " has no scenes");
  return out;
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// --- configuration ---------------------------------------------------------------

Config default_config() {
  Config c;
  c["seed"] = 0;
  c["out"] = "out";
  c["gen.scenes"] = 4;
  c["gen.frames"] = 16;
  c["gen.height"] = 32;
  c["gen.width"] = 32;
  c["degrade.scale"] = 4;
  c["degrade.blur_min"] = 0.4;
  c["degrade.blur_max"] = 1.2;
  c["degrade.noise_min"] = 0.0;
  c["degrade.noise_max"] = 0.02;
  c["degrade.levels_min"] = 48;
  c["degrade.levels_max"] = 160;
  c["model.blocks"] = 3;
  c["model.width"] = 64;
  c["model.heads"] = 4;
  c["model.patch"] = 4;
  c["model.dta_interval"] = 3;
  c["model.ffn_mult"] = 2;
  c["model.cache_length"] = 2;
  c["model.segment_length"] = 8;
  c["model.rope"] = true;
  c["model.dta"] = true;
  c["model.amc"] = true;
  c["schedule.steps"] = 1000;
  c["schedule.beta_start"] = 1e-4;
  c["schedule.beta_end"] = 0.02;
  c["train.data"] = "";
  c["train.steps"] = 500;
  c["train.lr"] = 5e-4;
  c["train.asymmetric"] = true;
  c["train.resume"] = "";
  c["sampler.steps"] = 15;
  c["sampler.clip"] = true;
  c["infer.checkpoint"] = "";
  c["infer.input"] = "";
  c["infer.overlap"] = 1;
  c["infer.tile"] = 0;
  c["infer.tile_overlap"] = 8;
  c["infer.color_correct"] = true;
  c["infer.amc"] = true;
  c["infer.asymmetric"] = true;
  c["infer.dump_caches"] = false;
  c["eval.restored"] = "";
  c["eval.reference"] = "";
  c["eval.flow"] = "";
  c["eval.rows"] = Config::array();
  return c;
}

void merge_config(Config& base, const Config& overrides) {
  if (!overrides.is_object()) throw ConfigError("config: expected a flat JSON object");
  for (const auto& [key, value] : overrides.items()) {
    if (is_bookkeeping_key(key)) continue;
    if (!base.contains(key)) throw ConfigError("config: unknown key " + key);
    auto& slot = base[key];
    const bool number_ok = slot.is_number_float() && value.is_number();
    const bool int_ok = slot.is_number_integer() && value.is_number_integer();
    if (!(number_ok || int_ok || slot.type() == value.type())) {
      throw ConfigError("config: key " + key + " has the wrong type");
    }
    if (number_ok) {
      slot = value.get<double>();
    } else {
      slot = value;
    }
  }
}

// --- commands ------------------------------------------------------------------

int cmd_gen(const Config& cfg) {
  const fs::path out = get<std::string>(cfg, "out");
  ensure_dir(out);
  const auto seed = get<std::uint64_t>(cfg, "seed");
  const auto scenes = get_size(cfg, "gen.scenes");
  const auto frames = get_size(cfg, "gen.frames");
  const auto height = get_size(cfg, "gen.height");
  const auto width = get_size(cfg, "gen.width");
  data::DegradationRecipe recipe;
  recipe.scale = get_size(cfg, "degrade.scale");
  recipe.blur_sigma_min = get<double>(cfg, "degrade.blur_min");
  recipe.blur_sigma_max = get<double>(cfg, "degrade.blur_max");
  recipe.noise_sigma_min = get<double>(cfg, "degrade.noise_min");
  recipe.noise_sigma_max = get<double>(cfg, "degrade.noise_max");
  recipe.levels_min = get_size(cfg, "degrade.levels_min");
  recipe.levels_max = get_size(cfg, "degrade.levels_max");
  if (recipe.blur_sigma_min > recipe.blur_sigma_max || recipe.noise_sigma_min > recipe.noise_sigma_max ||
      recipe.levels_min > recipe.levels_max) {
    throw ConfigError("gen: degradation ranges must satisfy min <= max");
  }

  struct Generated {
    data::SyntheticScene scene;
    data::DegradationParams params;
    data::SceneVideo video;
    ad::Tensor lq;
  };
  std::vector<Generated> gen(scenes);
  parallel_for(scenes, [&](std::size_t i) {
    auto& g = gen[i];
    g.scene = data::SyntheticScene::random(mix_seed(seed, 2 * i), frames, height, width);
    g.params = recipe.sample(mix_seed(seed, 2 * i + 1));
    g.video = data::generate_scene(g.scene);
    g.lq = data::degrade(g.video.hq, g.params);
  });

  Config manifest;
  manifest["frames"] = frames;
  manifest["height"] = height;
  manifest["width"] = width;
  manifest["scale"] = recipe.scale;
  manifest["scenes"] = Config::array();
  Config hashes;
  for (std::size_t i = 0; i < scenes; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "scene_%03zu", i);
    const auto& g = gen[i];
    io::write_video(out / (std::string(id) + "_hq.lvsr"), g.video.hq);
    io::write_video(out / (std::string(id) + "_lq.lvsr"), g.lq);
    io::write_video(out / (std::string(id) + "_flow.lvsr"), g.video.flow);
    Config entry;
    entry["id"] = id;
    entry["hq"] = std::string(id) + "_hq.lvsr";
    entry["lq"] = std::string(id) + "_lq.lvsr";
    entry["flow"] = std::string(id) + "_flow.lvsr";
    entry["scene_seed"] = g.scene.seed;
    entry["motion"] = g.scene.motion == data::Motion::kAffine ? "affine" : "translation";
    entry["vx"] = g.scene.vx;
    entry["vy"] = g.scene.vy;
    entry["rotation"] = g.scene.rotation;
    entry["zoom"] = g.scene.zoom;
    entry["blur_sigma"] = g.params.blur_sigma;
    entry["noise_sigma"] = g.params.noise_sigma;
    entry["levels"] = g.params.levels;
    entry["degrade_seed"] = g.params.seed;
    manifest["scenes"].push_back(entry);
  }
  write_json(out / "manifest.json", manifest);
  hashes["manifest"] = io::git_blob_hash_file(out / "manifest.json");
  write_run_record(out, "gen", cfg, hashes);
  std::printf("gen: wrote %zu scenes to %s\n", scenes, out.string().c_str());
  return kOk;
}

int cmd_train(const Config& cfg) {
  const fs::path out = get<std::string>(cfg, "out");
  const fs::path data_dir = get<std::string>(cfg, "train.data");
  if (data_dir.empty()) throw ConfigError("train: --data is required");
  const auto dataset = load_dataset(data_dir);
  const auto& shape = dataset.front().hq.shape();
  const auto mcfg = model_config(cfg, shape[1], shape[2], shape[3]);
  if (shape[0] % mcfg.segment_length != 0) {
    throw ConfigError("train: scenes have " + std::to_string(shape[0]) +
                      " frames, not a multiple of segment length " +
                      std::to_string(mcfg.segment_length));
  }
  if (shape[1] % mcfg.patch != 0 || shape[2] % mcfg.patch != 0) {
    throw ConfigError("train: frame size " + std::to_string(shape[1]) + "x" +
                      std::to_string(shape[2]) + " not divisible by patch " +
                      std::to_string(mcfg.patch));
  }
  ensure_dir(out);

  model::Denoiser model(mcfg);
  const auto schedule = schedule_from(cfg);
  ad::Adam opt(model.trainable_parameters(), {get<double>(cfg, "train.lr")});
  const auto seed = get<std::uint64_t>(cfg, "seed");
  const auto steps = get_size(cfg, "train.steps");
  const bool asymmetric = get<bool>(cfg, "train.asymmetric");

  Config hashes;
  hashes["data.manifest"] = io::git_blob_hash_file(data_dir / "manifest.json");
  const fs::path resume = get<std::string>(cfg, "train.resume");
  if (!resume.empty()) {
    const auto side = read_sidecar(resume);
    for (const auto& k : model_keys()) {
      if (side.at(k) != cfg.at(k)) throw ConfigError("train: resume checkpoint differs in " + k);
    }
    load_checkpoint(resume, model, &opt);
    hashes["resume"] = io::git_blob_hash_file(resume);
  }
  const auto first = static_cast<std::size_t>(opt.step_count());
  if (first > steps) {
    throw ConfigError("train: checkpoint is already at step " + std::to_string(first) +
                      ", beyond --steps " + std::to_string(steps));
  }

  std::string log = "step,loss\n";
  for (std::size_t step = first; step < steps; ++step) {
    Rng rng(seed, step);
    const auto& s = dataset[rng.below(dataset.size())];
    auto tl = diffusion::training_loss(s.hq, s.cond, model, schedule, rng, asymmetric);
    const double loss = tl.loss.item();
    if (!std::isfinite(loss)) throw NumericError("train: non-finite loss at step " + std::to_string(step));
    ad::backward(tl.loss);
    opt.step();
    log += std::to_string(step) + "," + fmt17(loss) + "\n";
    if ((step + 1) % 100 == 0 || step + 1 == steps) {
      std::printf("train: step %zu loss %.6f\n", step + 1, loss);
      std::fflush(stdout);
    }
  }
  io::write_file(out / "loss.csv", log);
  const auto ckpt = out / "checkpoint.lvck";
  save_checkpoint(ckpt, cfg, model, opt, shape[1], shape[2], shape[3]);
  hashes["checkpoint"] = io::git_blob_hash_file(ckpt);
  write_run_record(out, "train", cfg, hashes);
  return kOk;
}

int cmd_infer(const Config& cfg) {
  const fs::path out = get<std::string>(cfg, "out");
  const fs::path ckpt = get<std::string>(cfg, "infer.checkpoint");
  const fs::path input = get<std::string>(cfg, "infer.input");
  if (ckpt.empty()) throw ConfigError("infer: --checkpoint is required");
  if (input.empty()) throw ConfigError("infer: --input is required");
  const auto side = read_sidecar(ckpt);

  const auto lq = io::read_video(input);
  const auto scale = get_size(cfg, "degrade.scale");
  if (scale == 0) throw ConfigError("infer: degrade.scale must be positive");
  const std::size_t H = lq.dim(1) * scale, W = lq.dim(2) * scale;
  if (lq.dim(3) != get_size(side, "data.channels")) {
    throw DataError("infer: input has " + std::to_string(lq.dim(3)) +
                    " channels, checkpoint expects " + std::to_string(get_size(side, "data.channels")));
  }
  const auto up = data::resize_bicubic(lq, H, W);

  const auto tile = get_size(cfg, "infer.tile");
  const auto tile_overlap = get_size(cfg, "infer.tile_overlap");
  const bool tiled = tile != 0 && (tile < H || tile < W);
  const std::size_t model_h = tiled ? std::min(tile, H) : H;
  const std::size_t model_w = tiled ? std::min(tile, W) : W;
  model::Denoiser model(model_config(side, model_h, model_w, lq.dim(3)));
  load_checkpoint(ckpt, model, nullptr);
  const auto schedule = schedule_from(side);

  diffusion::SamplerConfig sampler;
  sampler.steps = get_size(cfg, "sampler.steps");
  sampler.seed = get<std::uint64_t>(cfg, "seed");
  sampler.clip_denoised = get<bool>(cfg, "sampler.clip");
  diffusion::SampleOptions options;
  options.amc = get<bool>(cfg, "infer.amc");
  options.asymmetric = get<bool>(cfg, "infer.asymmetric");
  options.color_correct = get<bool>(cfg, "infer.color_correct");
  options.keep_cache_snapshots = get<bool>(cfg, "infer.dump_caches");
  const auto plan = diffusion::SegmentPlan::make(lq.dim(0), model.config().segment_length,
                                                 get_size(cfg, "infer.overlap"));

  ensure_dir(out);
  const auto t0 = std::chrono::steady_clock::now();
  ad::Tensor restored;
  diffusion::SampleStats stats;
  if (!tiled) {
    auto result = diffusion::sample_segmentwise(up, model, schedule, plan, sampler, options);
    restored = result.video;
    stats = result.stats;
    if (options.keep_cache_snapshots) {
      ensure_dir(out / "caches");
      for (std::size_t s = 0; s < result.snapshots.size(); ++s) {
        for (const auto& c : result.snapshots[s]) {
          io::write_cache(out / "caches" /
                              ("segment_" + std::to_string(s) + "_block_" +
                               std::to_string(c.block_id) + ".lvcs"),
                          c);
        }
      }
    }
  } else {
    if (options.keep_cache_snapshots) throw ConfigError("infer: --dump-caches is not available with tiling");
    auto per_tile = options;
    per_tile.color_correct = false;
    restored = diffusion::tile_and_merge(up, tile, tile_overlap, [&](const ad::Tensor& piece) {
      auto r = diffusion::sample_segmentwise(piece, model, schedule, plan, sampler, per_tile);
      stats.model_calls += r.stats.model_calls;
      stats.peak_cache_bytes = std::max(stats.peak_cache_bytes, r.stats.peak_cache_bytes);
      return r.video;
    });
    if (options.color_correct) {
      restored = diffusion::color_correct(restored, up);
      for (auto& v : restored.data()) v = std::clamp(v, 0.0, 1.0);
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  io::write_video(out / "restored.lvsr", restored);

  // Wall-clock figures live apart from run.json so reruns stay byte-identical.
  Config timing;
  timing["runtime_s"] = seconds;
  timing["model_calls"] = stats.model_calls;
  timing["peak_cache_bytes"] = stats.peak_cache_bytes;
  write_json(out / "timing.json", timing);

  Config hashes;
  hashes["checkpoint"] = io::git_blob_hash_file(ckpt);
  hashes["input"] = io::git_blob_hash_file(input);
  hashes["restored"] = io::git_blob_hash_file(out / "restored.lvsr");
  write_run_record(out, "infer", cfg, hashes);
  std::printf("infer: %zu segments, %zu model calls, %.2fs\n", plan.segments.size(),
              stats.model_calls, seconds);
  return kOk;
}

int cmd_eval(const Config& cfg) {
  const fs::path out = get<std::string>(cfg, "out");
  const fs::path restored_path = get<std::string>(cfg, "eval.restored");
  const fs::path reference_path = get<std::string>(cfg, "eval.reference");
  const fs::path flow_path = get<std::string>(cfg, "eval.flow");
  if (restored_path.empty()) throw ConfigError("eval: --restored is required");
  const auto restored = io::read_video(restored_path);
  if (reference_path.empty() && flow_path.empty()) {
    throw DataError("eval: need a reference video or a flow file");
  }

  eval::MetricRow row;
  row.video_id = restored_path.stem().string();
  row.psnr_db = std::nan("");
  row.ewarp_e3 = std::nan("");
  Config hashes;
  hashes["restored"] = io::git_blob_hash_file(restored_path);
  ad::Tensor reference;
  if (!reference_path.empty()) {
    reference = io::read_video(reference_path);
    row.psnr_db = eval::psnr(restored, reference);
    hashes["reference"] = io::git_blob_hash_file(reference_path);
  }
  if (!flow_path.empty()) {
    row.ewarp_e3 = eval::warping_error(restored, io::read_video(flow_path)).e3();
    hashes["flow"] = io::git_blob_hash_file(flow_path);
  }
  const auto timing_path = restored_path.parent_path() / "timing.json";
  if (fs::exists(timing_path)) row.runtime_s = read_json(timing_path).value("runtime_s", 0.0);

  std::vector<std::size_t> rows;
  for (const auto& r : cfg.at("eval.rows")) {
    if (!r.is_number_integer() || r.get<long long>() < 0) {
      throw ConfigError("eval.rows must hold non-negative integers");
    }
    rows.push_back(r.get<std::size_t>());
  }
  if (rows.empty()) rows.push_back(restored.dim(1) / 2);

  ensure_dir(out);
  eval::write_metrics_csv(out / "metrics.csv", {row});
  for (auto y : rows) {
    eval::write_ppm(out / ("profile_row_" + std::to_string(y) + ".ppm"),
                    eval::temporal_profile(restored, y));
    if (reference.defined()) {
      eval::write_ppm(out / ("profile_ref_row_" + std::to_string(y) + ".ppm"),
                      eval::temporal_profile(reference, y));
    }
  }
  write_run_record(out, "eval", cfg, hashes);
  std::printf("eval: %s psnr %.4f dB, E_warp %.6f e-3\n", row.video_id.c_str(), row.psnr_db,
              row.ewarp_e3);
  return kOk;
}

// --- entry point ---------------------------------------------------------------

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps, segment_len, cache_len, sampler_steps, tile, tile_overlap, overlap;
  bool no_amc = false, no_dta = false, no_ass = false, dump_caches = false;
  std::optional<std::string> out, data, checkpoint, input, restored, reference, flow, rows, resume;
};

void add_flags(CLI::App& sub, Flags& f) {
  sub.add_option("--config", f.config, "Flat JSON config (a previous run.json works)");
  sub.add_option("--seed", f.seed, "Master seed");
  sub.add_option("--out", f.out, "Output directory");
  sub.add_option("--segment-len", f.segment_len, "Frames per segment (default 8)");
  sub.add_option("--cache-len", f.cache_len, "Memory cache slots (default 2)");
  sub.add_option("--sampler-steps", f.sampler_steps, "DDIM steps (default 15)");
  sub.add_flag("--no-amc", f.no_amc, "Disable the attention memory cache");
  sub.add_flag("--no-dta", f.no_dta, "Plain temporal attention instead of flow-aligned attention");
  sub.add_flag("--no-ass", f.no_ass, "Shared training timesteps and step-aligned inference caches");
}

Config resolve(const Flags& f, const std::string& command) {
  auto cfg = default_config();
  if (!f.config.empty()) merge_config(cfg, read_json(f.config));
  auto set = [&](const char* key, const auto& opt) {
    if (opt) cfg[key] = *opt;
  };
  set("seed", f.seed);
  set("out", f.out);
  set("train.steps", f.steps);
  set("model.segment_length", f.segment_len);
  set("model.cache_length", f.cache_len);
  set("sampler.steps", f.sampler_steps);
  set("infer.tile", f.tile);
  set("infer.tile_overlap", f.tile_overlap);
  set("infer.overlap", f.overlap);
  set("train.data", f.data);
  set("train.resume", f.resume);
  set("infer.checkpoint", f.checkpoint);
  set("infer.input", f.input);
  set("eval.restored", f.restored);
  set("eval.reference", f.reference);
  set("eval.flow", f.flow);
  if (f.no_amc) {
    cfg["model.amc"] = false;
    cfg["infer.amc"] = false;
  }
  if (f.no_dta) {
    if (command == "infer") throw ConfigError("infer: --no-dta is a training-time switch");
    cfg["model.dta"] = false;
  }
  if (f.no_ass) {
    cfg["train.asymmetric"] = false;
    cfg["infer.asymmetric"] = false;
  }
  if (f.dump_caches) cfg["infer.dump_caches"] = true;
  if (f.rows) {
    Config rows = Config::array();
    std::stringstream ss(*f.rows);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        const long v = std::stol(item, &used);
        if (used != item.size() || v < 0) throw std::invalid_argument(item);
        rows.push_back(v);
      } catch (const std::exception&) {
        throw ConfigError("--rows expects comma-separated row indices, got '" + *f.rows + "'");
      }
    }
    cfg["eval.rows"] = rows;
  }
  return cfg;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kVersion:
      return kConfigFailure;
    case ErrorKind::kData:
    case ErrorKind::kIo:
    case ErrorKind::kDimension:
    case ErrorKind::kIndex:
      return kDataFailure;
    case ErrorKind::kNumeric:
    case ErrorKind::kTrainingState:
      return kNumericFailure;
  }
  return kUnexpected;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Desk-scale diffusion video super-resolution"};
  app.require_subcommand(1);
  Flags f;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic LQ/HQ dataset with ground-truth flow");
  auto* train = app.add_subcommand("train", "Train the denoiser on a generated dataset");
  auto* infer = app.add_subcommand("infer", "Restore a low-quality video");
  auto* evaluate = app.add_subcommand("eval", "Score a restored video and write temporal profiles");
  for (auto* sub : {gen, train, infer, evaluate}) add_flags(*sub, f);
  train->add_option("--data", f.data, "Dataset directory written by gen");
  train->add_option("--steps", f.steps, "Total optimizer steps");
  train->add_option("--resume", f.resume, "Checkpoint to continue from");
  infer->add_option("--checkpoint", f.checkpoint, "Checkpoint written by train");
  infer->add_option("--input", f.input, "Low-quality video container");
  infer->add_option("--overlap", f.overlap, "Frames shared by consecutive segments");
  infer->add_option("--tile", f.tile, "Spatial tile size (0: no tiling)");
  infer->add_option("--tile-overlap", f.tile_overlap, "Overlap between spatial tiles");
  infer->add_flag("--dump-caches", f.dump_caches, "Write per-segment cache snapshots");
  evaluate->add_option("--restored", f.restored, "Restored video container");
  evaluate->add_option("--reference", f.reference, "Ground-truth video container");
  evaluate->add_option("--flow", f.flow, "Ground-truth flow container");
  evaluate->add_option("--rows", f.rows, "Comma-separated rows for temporal profiles");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigFailure;
  }

  try {
    if (gen->parsed()) return cmd_gen(resolve(f, "gen"));
    if (train->parsed()) return cmd_train(resolve(f, "train"));
    if (infer->parsed()) return cmd_infer(resolve(f, "infer"));
    return cmd_eval(resolve(f, "eval"));
  } catch (const Error& e) {
    std::cerr << "liftvsr: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "liftvsr: malformed JSON: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "liftvsr: unexpected failure: " << e.what() << "\n";
    return kUnexpected;
  }
}

}  // namespace liftvsr::cli
