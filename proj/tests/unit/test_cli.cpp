#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "cli.hpp"
#include "liftvsr/io.hpp"

using namespace liftvsr;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "liftvsr");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "liftvsr_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A model small enough to train for a few steps in well under a second.
fs::path tiny_config(const fs::path& dir) {
  cli::Config c;
  c["gen.frames"] = 8;
  c["gen.height"] = 16;
  c["gen.width"] = 16;
  c["model.blocks"] = 1;
  c["model.width"] = 8;
  c["model.heads"] = 2;
  c["model.patch"] = 4;
  c["model.dta_interval"] = 1;
  c["model.segment_length"] = 4;
  c["sampler.steps"] = 2;
  const auto path = dir / "tiny.json";
  io::write_file(path, c.dump());
  return path;
}

}  // namespace

TEST_CASE("default config round-trips through merge and rejects unknown keys") {
  auto base = cli::default_config();
  CHECK(base["model.segment_length"] == 8);
  CHECK(base["sampler.steps"] == 15);
  cli::Config o;
  o["model.width"] = 16;
  o["train.lr"] = 1;  // integers are accepted for float keys
  o["run.command"] = "gen";
  cli::merge_config(base, o);
  CHECK(base["model.width"] == 16);
  CHECK(base["train.lr"].get<double>() == 1.0);
  CHECK(!base.contains("run.command"));
  cli::Config bad;
  bad["model.wdith"] = 3;
  CHECK_THROWS(cli::merge_config(base, bad));
  cli::Config wrong_type;
  wrong_type["model.rope"] = "yes";
  CHECK_THROWS(cli::merge_config(base, wrong_type));
}

TEST_CASE("gen writes three containers per scene and is deterministic") {
  const auto dir = fresh_dir("gen");
  const auto cfg = tiny_config(dir);
  REQUIRE(run({"gen", "--config", cfg.string(), "--seed", "3", "--out", (dir / "a").string()}) == 0);
  REQUIRE(run({"gen", "--config", cfg.string(), "--seed", "3", "--out", (dir / "b").string()}) == 0);
  std::size_t containers = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    if (e.path().extension() != ".lvsr") continue;
    ++containers;
    CHECK(io::read_file(e.path()) == io::read_file(dir / "b" / e.path().filename()));
  }
  CHECK(containers == 12);
  CHECK(fs::exists(dir / "a" / "scene_003_flow.lvsr"));
  CHECK(io::read_file(dir / "a" / "manifest.json") == io::read_file(dir / "b" / "manifest.json"));
  CHECK(fs::exists(dir / "a" / "run.json"));

  REQUIRE(run({"gen", "--config", cfg.string(), "--seed", "4", "--out", (dir / "c").string()}) == 0);
  CHECK(io::read_file(dir / "a" / "scene_000_hq.lvsr") != io::read_file(dir / "c" / "scene_000_hq.lvsr"));
}

TEST_CASE("exit codes by failure class") {
  const auto dir = fresh_dir("codes");
  const auto cfg = tiny_config(dir);
  CHECK(run({"gen", "--bogus"}) == cli::kConfigFailure);
  CHECK(run({}) == cli::kConfigFailure);

  const auto unknown = dir / "unknown.json";
  io::write_file(unknown, R"({"model.nope": 1})");
  CHECK(run({"gen", "--config", unknown.string(), "--out", (dir / "x").string()}) == cli::kConfigFailure);
  io::write_file(dir / "broken.json", "{not json");
  CHECK(run({"gen", "--config", (dir / "broken.json").string()}) == cli::kConfigFailure);

  CHECK(run({"train", "--config", cfg.string(), "--data", (dir / "nowhere").string(), "--out",
             (dir / "t").string()}) == cli::kDataFailure);
  CHECK(run({"eval", "--restored", (dir / "missing.lvsr").string(), "--reference",
             (dir / "missing.lvsr").string(), "--out", (dir / "e").string()}) == cli::kDataFailure);

  REQUIRE(run({"gen", "--config", cfg.string(), "--out", (dir / "data").string()}) == 0);
  // 8 frames cannot be split into segments of 3.
  CHECK(run({"train", "--config", cfg.string(), "--data", (dir / "data").string(), "--segment-len",
             "3", "--steps", "1", "--out", (dir / "t3").string()}) == cli::kConfigFailure);
  CHECK(run({"infer", "--config", cfg.string(), "--no-dta", "--input",
             (dir / "data" / "scene_000_lq.lvsr").string(), "--out", (dir / "i").string()}) ==
        cli::kConfigFailure);
}

TEST_CASE("train, resume, infer and eval end to end") {
  const auto dir = fresh_dir("e2e");
  const auto cfg = tiny_config(dir);
  const auto data = dir / "data";
  REQUIRE(run({"gen", "--config", cfg.string(), "--out", data.string()}) == 0);

  REQUIRE(run({"train", "--config", cfg.string(), "--data", data.string(), "--steps", "4", "--out",
               (dir / "full").string()}) == 0);
  REQUIRE(run({"train", "--config", cfg.string(), "--data", data.string(), "--steps", "2", "--out",
               (dir / "half").string()}) == 0);
  REQUIRE(run({"train", "--config", cfg.string(), "--data", data.string(), "--steps", "4", "--resume",
               (dir / "half" / "checkpoint.lvck").string(), "--out", (dir / "resumed").string()}) == 0);
  CHECK(io::read_file(dir / "full" / "checkpoint.lvck") ==
        io::read_file(dir / "resumed" / "checkpoint.lvck"));
  // One loss row per step; resumed steps log the same losses as the straight run.
  const auto full_log = io::read_file(dir / "full" / "loss.csv");
  const auto resumed_log = io::read_file(dir / "resumed" / "loss.csv");
  CHECK(std::count(full_log.begin(), full_log.end(), '\n') == 5);
  const auto tail = resumed_log.substr(resumed_log.find('\n') + 1);
  REQUIRE(!tail.empty());
  CHECK(full_log.size() >= tail.size());
  CHECK(full_log.compare(full_log.size() - tail.size(), tail.size(), tail) == 0);
  // Resuming under a different architecture is refused.
  CHECK(run({"train", "--config", cfg.string(), "--data", data.string(), "--steps", "4", "--cache-len",
             "3", "--resume", (dir / "half" / "checkpoint.lvck").string(), "--out",
             (dir / "bad").string()}) == cli::kConfigFailure);

  const auto ckpt = dir / "full" / "checkpoint.lvck";
  const auto lq = data / "scene_001_lq.lvsr";
  REQUIRE(run({"infer", "--config", cfg.string(), "--checkpoint", ckpt.string(), "--input", lq.string(),
               "--dump-caches", "--out", (dir / "inf").string()}) == 0);
  const auto restored = io::read_video(dir / "inf" / "restored.lvsr");
  CHECK(restored.shape() == ad::Shape{8, 16, 16, 3});
  CHECK(fs::exists(dir / "inf" / "timing.json"));
  CHECK(fs::exists(dir / "inf" / "caches" / "segment_1_block_0.lvcs"));

  REQUIRE(run({"infer", "--config", cfg.string(), "--checkpoint", ckpt.string(), "--input", lq.string(),
               "--out", (dir / "inf2").string()}) == 0);
  CHECK(io::read_file(dir / "inf" / "restored.lvsr") == io::read_file(dir / "inf2" / "restored.lvsr"));

  // The sidecar version gates loading.
  auto side = cli::Config::parse(io::read_file(dir / "full" / "checkpoint.json"));
  side["version"] = 99;
  fs::copy_file(ckpt, dir / "old.lvck");
  io::write_file(dir / "old.json", side.dump());
  CHECK(run({"infer", "--config", cfg.string(), "--checkpoint", (dir / "old.lvck").string(), "--input",
             lq.string(), "--out", (dir / "inf3").string()}) == cli::kConfigFailure);

  REQUIRE(run({"eval", "--restored", (dir / "inf" / "restored.lvsr").string(), "--reference",
               (data / "scene_001_hq.lvsr").string(), "--flow", (data / "scene_001_flow.lvsr").string(),
               "--out", (dir / "ev").string()}) == 0);
  const auto csv = io::read_file(dir / "ev" / "metrics.csv");
  CHECK(csv.rfind("video_id,psnr_db,ewarp_e3,runtime_s\n", 0) == 0);
  CHECK(fs::exists(dir / "ev" / "profile_row_8.ppm"));
  CHECK(fs::exists(dir / "ev" / "profile_ref_row_8.ppm"));
}
