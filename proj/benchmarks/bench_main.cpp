#include <benchmark/benchmark.h>

#include "liftvsr/diffusion.hpp"
#include "liftvsr/dta.hpp"
#include "liftvsr/ops.hpp"
#include "liftvsr/rng.hpp"

using namespace liftvsr;
using ad::Tensor;

namespace {

Tensor noise(ad::Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = noise({n, n}, 1), b = noise({n, n}, 2);
  ad::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_BilinearWarp(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto src = noise({n, 32, 32, 64}, 3);
  const auto flow = noise({n, 32, 32, 8}, 4, 2.0);
  ad::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ad::bilinear_warp(src, flow));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(src.numel()));
}
BENCHMARK(BM_BilinearWarp)->Arg(8);

dta::DtaConfig segment_config(std::size_t n) {
  dta::DtaConfig c;
  c.num_heads = 2;
  c.dim = 32;
  c.segment_length = n;
  c.ffn_mult = 2;
  return c;
}

void BM_DtaSegment(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto side = static_cast<std::size_t>(state.range(1));
  nn::ParameterStore store(5);
  dta::DynamicTemporalAttention attn(segment_config(n), store, "dta");
  const auto f = noise({n, side, side, 32}, 6);
  ad::NoGradGuard guard;
  std::uint64_t entries = 0;
  for (auto _ : state) {
    auto out = attn.segment(f);
    entries = out.score_entries;
    benchmark::DoNotOptimize(out.features);
  }
  state.counters["score_entries"] = static_cast<double>(entries);
  state.counters["full_attention_entries"] =
      static_cast<double>(dta::DynamicTemporalAttention::full_attention_score_entries(n, side, side, 2));
}
BENCHMARK(BM_DtaSegment)->Args({8, 8})->Args({8, 16});

void BM_DtaSegmentBackward(benchmark::State& state) {
  nn::ParameterStore store(7);
  dta::DynamicTemporalAttention attn(segment_config(8), store, "dta");
  auto f = noise({8, 8, 8, 32}, 8);
  f.set_requires_grad(true);
  for (auto _ : state) {
    auto loss = ad::sum(attn.segment(f).features);
    ad::backward(loss);
    f.zero_grad();
  }
}
BENCHMARK(BM_DtaSegmentBackward);

void BM_TrainingStep(benchmark::State& state) {
  model::DenoiserConfig cfg;
  cfg.blocks = 3;
  cfg.width = 32;
  cfg.heads = 2;
  cfg.patch = 4;
  cfg.dta_interval = 3;
  cfg.ffn_mult = 2;
  model::Denoiser net(cfg);
  const auto schedule = diffusion::NoiseSchedule::linear();
  Tensor hq({16, 32, 32, 3}, 0.5), cond({16, 32, 32, 3}, 0.4);
  std::uint64_t step = 0;
  for (auto _ : state) {
    Rng rng(1, step++);
    auto tl = diffusion::training_loss(hq, cond, net, schedule, rng);
    ad::backward(tl.loss);
  }
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
