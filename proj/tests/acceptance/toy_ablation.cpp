#include "toy_ablation.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "liftvsr/diffusion.hpp"
#include "liftvsr/metrics.hpp"
#include "liftvsr/optim.hpp"
#include "liftvsr/synth.hpp"

namespace liftvsr::acceptance {

std::vector<AblationVariant> ablation_variants() {
  return {{"a:temporal", false, false, false},
          {"b:+dta", true, false, false},
          {"c:+dta+amc", true, true, false},
          {"d:+dta+amc+ass", true, true, true}};
}

AblationSettings default_ablation_settings() {
  AblationSettings s;
  s.base.blocks = 3;
  s.base.width = 64;
  s.base.heads = 4;
  s.base.patch = 4;
  s.base.dta_interval = 3;
  s.base.ffn_mult = 2;
  s.base.cache_length = 2;
  s.base.segment_length = 8;
  s.base.image_height = s.size;
  s.base.image_width = s.size;
  s.base.init_seed = 11;
  return s;
}

namespace {

struct Pair {
  ad::Tensor hq, cond, flow;
};

Pair make_pair(std::uint64_t seed, const AblationSettings& s) {
  auto scene = data::generate_scene(data::SyntheticScene::random(seed, s.frames, s.size, s.size));
  auto lq = data::degrade(scene.hq, data::DegradationRecipe{}.sample(seed));
  return {scene.hq, data::resize_bicubic(lq, s.size, s.size), scene.flow};
}

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
  double acc = 0.0;
  for (std::size_t i = from; i < to; ++i) acc += v[i];
  return acc / static_cast<double>(to - from);
}

}  // namespace

AblationResult run_variant(const AblationSettings& s, const AblationVariant& variant, bool verbose) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<Pair> train, heldout;
  for (std::size_t i = 0; i < s.train_scenes; ++i) train.push_back(make_pair(s.seed * 1000 + i, s));
  for (std::size_t i = 0; i < s.heldout_scenes; ++i) {
    heldout.push_back(make_pair(s.seed * 1000 + 500 + i, s));
  }

  auto cfg = s.base;
  cfg.dta_flow = variant.dta_flow;
  cfg.amc = variant.amc;
  model::Denoiser model(cfg);
  const auto schedule = diffusion::NoiseSchedule::linear();
  ad::Adam opt(model.trainable_parameters(), {s.lr});

  std::vector<double> losses;
  for (std::size_t step = 0; step < s.steps; ++step) {
    Rng rng(s.seed, step);
    const auto& p = train[rng.below(train.size())];
    auto tl = diffusion::training_loss(p.hq, p.cond, model, schedule, rng, variant.asymmetric);
    ad::backward(tl.loss);
    opt.step();
    losses.push_back(tl.loss.item());
    if (verbose && (step + 1) % 100 == 0) {
      std::printf("  [%s] step %zu loss %.4f\n", variant.label.c_str(), step + 1,
                  mean_of(losses, losses.size() - 100, losses.size()));
      std::fflush(stdout);
    }
  }

  AblationResult r;
  r.label = variant.label;
  const std::size_t window = std::min<std::size_t>(50, losses.size());
  r.first_loss = mean_of(losses, 0, window);
  r.last_loss = mean_of(losses, losses.size() - window, losses.size());

  diffusion::SamplerConfig sampler;
  sampler.steps = s.sampler_steps;
  sampler.seed = s.seed;
  diffusion::SampleOptions options;
  options.amc = variant.amc;
  options.asymmetric = variant.asymmetric;
  const auto plan = diffusion::SegmentPlan::make(s.frames, cfg.segment_length, s.overlap);
  for (const auto& p : heldout) {
    auto out = diffusion::sample_segmentwise(p.cond, model, schedule, plan, sampler, options);
    r.ewarp_e3 += eval::warping_error(out.video, p.flow).e3();
    r.psnr_db += eval::psnr(out.video, p.hq);
  }
  r.ewarp_e3 /= static_cast<double>(heldout.size());
  r.psnr_db /= static_cast<double>(heldout.size());
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace liftvsr::acceptance
