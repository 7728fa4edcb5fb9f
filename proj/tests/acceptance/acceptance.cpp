// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. `--only 1,2,5` restricts the run;
// `--xfail 6` still runs and reports criterion 6 but keeps its FAIL out of
// the exit status.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "liftvsr/amc.hpp"
#include "liftvsr/diffusion.hpp"
#include "liftvsr/dta.hpp"
#include "liftvsr/io.hpp"
#include "liftvsr/ops.hpp"
#include "liftvsr/parallel.hpp"
#include "oracles.hpp"
#include "testing.hpp"
#include "toy_ablation.hpp"

using namespace liftvsr;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void randomize(nn::ParameterStore& store, std::uint64_t seed, double scale) {
  std::uint64_t k = 0;
  for (const auto& p : store.params()) {
    auto t = p.tensor;
    const auto r = testing::random_tensor(t.shape(), seed + 31 * ++k, -scale, scale);
    std::copy(r.values().begin(), r.values().end(), t.data().begin());
  }
}

dta::DtaConfig dta_config(std::size_t n, std::size_t d, std::size_t heads) {
  dta::DtaConfig c;
  c.num_heads = heads;
  c.dim = d;
  c.segment_length = n;
  return c;
}

oracle::Frames frames_of(const Tensor& t) {
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), t.values()};
}

model::DenoiserConfig tiny_denoiser(std::size_t blocks, std::size_t n, std::size_t size) {
  model::DenoiserConfig c;
  c.blocks = blocks;
  c.width = 8;
  c.heads = 2;
  c.patch = 2;
  c.dta_interval = 1;
  c.cache_length = 2;
  c.segment_length = n;
  c.image_height = size;
  c.image_width = size;
  c.ffn_mult = 2;
  c.init_seed = 4;
  return c;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  using Fn = std::function<Tensor(std::vector<Tensor>&)>;
  struct Case {
    std::string name;
    Fn f;
    std::vector<Tensor> inputs;
    double tol;
    double step = 1e-5;
  };
  auto warp_flow = testing::random_tensor({1, 5, 5, 2}, 3, -1.5, 1.5);
  for (auto& v : warp_flow.data()) {
    const double frac = v - std::floor(v);
    if (frac < 0.1) v += 0.1;
    if (frac > 0.9) v -= 0.1;
  }

  nn::ParameterStore dstore(21);
  dta::DynamicTemporalAttention attn(dta_config(2, 4, 2), dstore, "dta");
  randomize(dstore, 22, 0.4);
  std::vector<Tensor> dta_inputs = {testing::random_tensor({2, 4, 4, 4}, 23)};
  for (const auto& p : dstore.params()) dta_inputs.push_back(p.tensor);

  const auto gate_w = testing::random_tensor({8, 4}, 24);
  const auto gate_b = testing::random_tensor({4}, 25);

  model::Denoiser net(tiny_denoiser(2, 4, 8));
  randomize(net.store(), 26, 0.2);
  std::vector<Tensor> net_inputs = {testing::random_tensor({4, 8, 8, 3}, 27),
                                    testing::random_tensor({4, 8, 8, 3}, 28)};
  for (const auto& p : net.trainable_parameters()) net_inputs.push_back(p.tensor);

  std::vector<Case> cases = {
      {"matmul", [](auto& in) { return ad::matmul(in[0], in[1]); },
       {testing::random_tensor({3, 4}, 1), testing::random_tensor({4, 5}, 2)}, 1e-6},
      {"softmax", [](auto& in) { return ad::softmax(in[0]); }, {testing::random_tensor({3, 6}, 4, -3, 3)}, 1e-6},
      {"conv2d", [](auto& in) { return ad::conv2d(in[0], in[1]); },
       {testing::random_tensor({2, 5, 5, 3}, 5), testing::random_tensor({3, 3, 3, 4}, 6)}, 1e-6},
      {"bilinear_warp", [](auto& in) { return ad::bilinear_warp(in[0], in[1]); },
       {testing::random_tensor({1, 5, 5, 3}, 7), warp_flow}, 1e-4},
      {"sigmoid", [](auto& in) { return ad::sigmoid(in[0]); }, {testing::random_tensor({20}, 8, -4, 4)}, 1e-6},
      {"silu", [](auto& in) { return ad::silu(in[0]); }, {testing::random_tensor({20}, 9, -4, 4)}, 1e-6},
      {"layer_norm", [](auto& in) { return ad::layer_norm(in[0]); }, {testing::random_tensor({4, 6}, 10)}, 1e-6},
      {"dta_forward", [&](auto& in) { return attn.segment(in[0]).features; }, dta_inputs, 1e-4},
      {"cache_update",
       [](auto& in) {
         return amc::cache_update(in[0], amc::MemoryCache{in[1], 0, true}, {in[2], in[3]}).slots;
       },
       {testing::random_tensor({4, 3, 3, 4}, 11), testing::random_tensor({2, 3, 3, 4}, 12), gate_w, gate_b},
       1e-6},
      // Smaller step: a few warp samples sit within 1e-5 of a bilinear kink.
      {"denoiser", [&](auto& in) { return net.denoise(in[0], 250, in[1]); }, net_inputs, 1e-4, 1e-6},
  };
  Outcome out;
  std::ostringstream worst;
  for (auto& c : cases) {
    const auto r = testing::grad_check(c.f, c.inputs, c.step, c.name == "denoiser" ? 6 : 0);
    worst << (worst.tellp() > 0 ? " " : "") << c.name << "=" << fmt("%.1e", r.worst);
    out.require(r.worst <= c.tol, c.name + " rel.err " + fmt("%.2e", r.worst));
  }
  if (out.pass) out.detail = worst.str();
  return out;
}

Outcome oracle_equivalence() {
  Outcome out;
  nn::ParameterStore store(31);
  dta::DynamicTemporalAttention attn(dta_config(2, 4, 2), store, "dta");
  randomize(store, 32, 0.5);
  const auto F = testing::random_tensor({2, 4, 4, 4}, 33);
  const auto ref = oracle::dta(frames_of(F), store, "dta", {2, true, true, 2});
  const double e_dta = testing::max_abs_diff(attn.segment(F).features.values(), ref.v);
  out.require(e_dta <= 1e-10, "dta diff " + fmt("%.2e", e_dta));

  nn::ParameterStore s2(34);
  dta::DynamicTemporalAttention a2(dta_config(8, 8, 2), s2, "b.dta");
  amc::AttentionMemoryCache mem(2, 8, s2, "b.amc");
  randomize(s2, 35, 0.5);
  const auto f = testing::random_tensor({8, 3, 3, 8}, 36);
  const auto slots = testing::random_tensor({2, 3, 3, 8}, 37);
  const amc::MemoryCache cache{slots, 0, true};
  const double e_q = testing::max_abs_diff(
      amc::cache_attention(f, cache, a2).values(),
      oracle::cache_attention(frames_of(f), frames_of(slots), s2, "b.dta", 2).v);
  const double e_u = testing::max_abs_diff(
      amc::cache_update(f, cache, mem.gate()).slots.values(),
      oracle::cache_update(frames_of(f), frames_of(slots), mem.gate().w_gate.values(),
                           mem.gate().bias.values())
          .v);
  out.require(e_q <= 1e-12, "amc query diff " + fmt("%.2e", e_q));
  out.require(e_u <= 1e-12, "amc update diff " + fmt("%.2e", e_u));
  if (out.pass) {
    out.detail = "dta " + fmt("%.1e", e_dta) + ", query " + fmt("%.1e", e_q) + ", update " + fmt("%.1e", e_u);
  }
  return out;
}

Outcome zero_flow_reduction() {
  Outcome out;
  nn::ParameterStore store(41);
  dta::DynamicTemporalAttention attn(dta_config(4, 8, 2), store, "dta");
  randomize(store, 42, 0.5);
  attn.set_force_zero_flow(true);
  const auto F = testing::random_tensor({4, 4, 4, 8}, 43);
  const auto ref = oracle::dta(frames_of(F), store, "dta", {2, true, false, 2});
  const double e = testing::max_abs_diff(attn.segment(F).features.values(), ref.v);
  out.require(e <= 1e-10, "diff " + fmt("%.2e", e));
  if (out.pass) out.detail = "max diff " + fmt("%.1e", e);
  return out;
}

Outcome complexity_claim() {
  Outcome out;
  const std::size_t h = 16, w = 16, n = 8, heads = 2;
  nn::ParameterStore store(51);
  dta::DynamicTemporalAttention attn(dta_config(n, 8, heads), store, "dta");
  const auto r = attn.segment(testing::random_tensor({n, h, w, 8}, 52));
  const std::uint64_t full = dta::DynamicTemporalAttention::full_attention_score_entries(n, h, w, heads);
  out.require(r.score_entries == h * w * n * n * heads, "measured " + std::to_string(r.score_entries));
  out.require(full == (h * w * n) * (h * w * n) * heads, "full count " + std::to_string(full));
  out.require(full == r.score_entries * h * w, "ratio is not 1/(h*w)");
  if (out.pass) {
    out.detail = std::to_string(r.score_entries) + " vs " + std::to_string(full) + " entries, ratio 1/" +
                 std::to_string(full / r.score_entries);
  }
  return out;
}

Outcome cache_memory_claim() {
  Outcome out;
  const auto cfg = tiny_denoiser(2, 8, 8);
  model::Denoiser net(cfg);
  const auto sched = diffusion::NoiseSchedule::linear();
  const std::size_t per_block = cfg.cache_length * 4 * 4 * cfg.width * 8;
  const std::size_t expected = per_block * net.hosting_block_count();
  std::ostringstream seen;
  for (std::size_t segments : {2u, 8u}) {
    const auto lq = testing::random_tensor({8 * segments, 8, 8, 3}, 61, 0.0, 1.0);
    const auto plan = diffusion::SegmentPlan::make(8 * segments, 8, 0);
    for (std::size_t steps : {15u, 50u}) {
      diffusion::SamplerConfig sampler;
      sampler.steps = steps;
      const auto r = diffusion::sample_segmentwise(lq, net, sched, plan, sampler);
      seen << r.stats.peak_cache_bytes << " ";
      out.require(r.stats.peak_cache_bytes == expected,
                  std::to_string(segments) + " segments, " + std::to_string(steps) + " steps: " +
                      std::to_string(r.stats.peak_cache_bytes) + " bytes");
    }
  }
  if (out.pass) {
    out.detail = std::to_string(expected) + " bytes (" + std::to_string(net.hosting_block_count()) +
                 " hosting blocks x l*h*w*d*8 = " + std::to_string(per_block) + ") at 15/50 steps, 2/8 segments";
  }
  return out;
}

Outcome toy_ablation() {
  const auto settings = acceptance::default_ablation_settings();
  const auto variants = acceptance::ablation_variants();
  std::vector<acceptance::AblationResult> results(variants.size());
  const auto start = std::chrono::steady_clock::now();
  parallel_for(variants.size(), [&](std::size_t i) { results[i] = acceptance::run_variant(settings, variants[i]); });
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  for (const auto& r : results) {
    std::printf("  %-16s E_warp %.4f e-3  PSNR %.2f dB  loss %.3f -> %.3f  %.0f s\n", r.label.c_str(),
                r.ewarp_e3, r.psnr_db, r.first_loss, r.last_loss, r.seconds);
  }
  int decreases = 0;
  for (std::size_t i = 0; i + 1 < results.size(); ++i) decreases += results[i + 1].ewarp_e3 <= results[i].ewarp_e3;
  Outcome out;
  out.require(results[3].ewarp_e3 < results[0].ewarp_e3, "E_warp(d) >= E_warp(a)");
  out.require(decreases >= 2, std::to_string(decreases) + "/3 non-increasing transitions");
  std::ostringstream os;
  os << "E_warp a..d = ";
  for (const auto& r : results) os << fmt("%.3f", r.ewarp_e3) << " ";
  os << "(" << decreases << "/3 transitions), " << fmt("%.1f", minutes) << " min on " << worker_count()
     << " worker(s)";
  out.detail += (out.detail.empty() ? "" : "; ") + os.str();
  return out;
}

Outcome color_correction() {
  Outcome out;
  const auto output = testing::random_tensor({4, 6, 6, 3}, 71, -0.3, 1.4);
  const auto lq = testing::random_tensor({4, 6, 6, 3}, 72, 0.1, 0.7);
  const auto fixed = diffusion::color_correct(output, lq);
  double worst = 0.0;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double m[2] = {0, 0}, v[2] = {0, 0};
    const Tensor* t[2] = {&fixed, &lq};
    const std::size_t count = fixed.numel() / 3;
    for (int k = 0; k < 2; ++k) {
      for (std::size_t i = 0; i < count; ++i) m[k] += t[k]->values()[i * 3 + ch];
      m[k] /= count;
      for (std::size_t i = 0; i < count; ++i) v[k] += std::pow(t[k]->values()[i * 3 + ch] - m[k], 2);
      v[k] /= count;
    }
    worst = std::max({worst, std::abs(m[0] - m[1]), std::abs(v[0] - v[1])});
  }
  out.require(worst <= 1e-9, "moment diff " + fmt("%.2e", worst));
  if (out.pass) out.detail = "max moment diff " + fmt("%.1e", worst);
  return out;
}

Outcome tiling_and_stitching() {
  Outcome out;
  const auto video = testing::random_tensor({2, 48, 40, 3}, 81);
  const auto merged = diffusion::tile_and_merge(video, 24, 8, [](const Tensor& t) { return t.clone(); });
  const double e = testing::max_abs_diff(merged.values(), video.values());
  out.require(e <= 1e-10, "identity tiling diff " + fmt("%.2e", e));

  model::Denoiser net(tiny_denoiser(1, 4, 4));
  randomize(net.store(), 82, 0.3);
  const auto lq = testing::random_tensor({10, 4, 4, 3}, 83, 0.0, 1.0);
  const auto plan = diffusion::SegmentPlan::make(10, 4, 1);
  diffusion::SamplerConfig sampler;
  sampler.steps = 3;
  diffusion::SampleOptions opts;
  opts.color_correct = false;
  opts.keep_segment_outputs = true;
  const auto r = diffusion::sample_segmentwise(lq, net, diffusion::NoiseSchedule::linear(), plan, sampler, opts);
  const std::size_t frame = 4 * 4 * 3;
  std::size_t mismatches = 0;
  for (std::size_t s = 1; s < plan.segments.size(); ++s) {
    const std::size_t f = plan.segments[s].start;  // the one shared frame
    const auto& prev = r.segment_outputs[s - 1].values();
    const auto& cur = r.segment_outputs[s].values();
    const std::size_t slot = f - plan.segments[s - 1].start;
    for (std::size_t i = 0; i < frame; ++i) {
      const double expect = (1.0 - 0.5) * prev[slot * frame + i] + 0.5 * cur[i];
      mismatches += r.video.values()[f * frame + i] != expect;
    }
  }
  out.require(mismatches == 0, std::to_string(mismatches) + " cross-fade values differ");
  if (out.pass) out.detail = "identity diff " + fmt("%.1e", e) + ", cross-fade exact";
  return out;
}

std::map<std::string, std::string> snapshot(const fs::path& dir, const std::set<std::string>& skip = {}) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || skip.count(e.path().filename().string())) continue;
    files[fs::relative(e.path(), dir).string()] = io::read_file(e.path());
  }
  return files;
}

int shell(const std::string& args) {
  const std::string cmd = std::string("\"") + LIFTVSR_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

Outcome determinism() {
  Outcome out;
  const auto work = fs::temp_directory_path() / "liftvsr_acceptance_determinism";
  fs::remove_all(work);
  fs::create_directories(work);
  io::write_file(work / "tiny.json", R"({"gen.frames": 8, "gen.height": 16, "gen.width": 16,
    "model.blocks": 1, "model.width": 8, "model.heads": 2, "model.patch": 4,
    "model.dta_interval": 1, "model.segment_length": 4, "sampler.steps": 3})");
  const std::string base = "--config \"" + (work / "tiny.json").string() + "\" ";
  const auto gen = work / "gen", train = work / "train", infer = work / "infer";
  struct Stage {
    std::string name;
    std::string args;
    fs::path out;
    std::set<std::string> skip;
  };
  const std::vector<Stage> stages = {
      {"gen", "gen " + base + "--seed 5 --out \"" + gen.string() + "\"", gen, {}},
      {"train", "train " + base + "--steps 5 --data \"" + gen.string() + "\" --out \"" + train.string() + "\"", train, {}},
      // Wall-clock timing is kept out of run.json and excluded here.
      {"infer", "infer " + base + "--checkpoint \"" + (train / "checkpoint.lvck").string() + "\" --input \"" +
                    (gen / "scene_000_lq.lvsr").string() + "\" --out \"" + infer.string() + "\"",
       infer, {"timing.json"}},
  };
  for (const auto& st : stages) {
    if (shell(st.args) != 0) {
      out.require(false, st.name + " failed");
      return out;
    }
    const auto first = snapshot(st.out, st.skip);
    const auto rerun = st.name + " --config \"" + (st.out / "run.json").string() + "\"";
    if (shell(rerun) != 0) {
      out.require(false, st.name + " re-run failed");
      return out;
    }
    const auto second = snapshot(st.out, st.skip);
    out.require(first == second, st.name + " outputs differ after re-run");
    out.detail += (out.detail.empty() ? "" : ", ") + st.name + " " + std::to_string(first.size()) + " files";
  }
  if (out.pass) out.detail += " byte-identical";
  fs::remove_all(work);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::vector<int> only;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  std::vector<int> xfail;
  app.add_option("--xfail", xfail, "Criteria known to fail; reported but not fatal")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"oracle equivalence", oracle_equivalence},
      {"zero-flow reduction", zero_flow_reduction},
      {"attention complexity", complexity_claim},
      {"cache memory", cache_memory_claim},
      {"toy ablation directionality", toy_ablation},
      {"color correction", color_correction},
      {"tiling and stitching", tiling_and_stitching},
      {"determinism", determinism},
  };
  int passed = 0, failed = 0, expected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool known = std::find(xfail.begin(), xfail.end(), id) != xfail.end();
    std::printf("criterion %d %s: %s (%s) [%.1f s]%s\n", id, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs, !o.pass && known ? " [expected failure]" : "");
    std::fflush(stdout);
    if (o.pass) {
      ++passed;
    } else if (known) {
      ++expected;
    } else {
      ++failed;
    }
  }
  std::printf("%d passed, %d failed, %d expected failure(s)\n", passed, failed, expected);
  return failed == 0 ? 0 : 1;
}
