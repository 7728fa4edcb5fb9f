#include <algorithm>
#include <cmath>

#include "liftvsr/diffusion.hpp"
#include "liftvsr/error.hpp"
#include "liftvsr/ops.hpp"

namespace liftvsr::diffusion {

SegmentPlan SegmentPlan::make(std::size_t total_frames, std::size_t segment_length,
                              std::size_t overlap) {
  if (segment_length == 0) throw ConfigError("segment plan: segment length must be >= 1");
  if (overlap >= segment_length) {
    throw ConfigError("segment plan: overlap " + std::to_string(overlap) +
                      " must be smaller than segment length " + std::to_string(segment_length));
  }
  if (total_frames == 0) throw DataError("segment plan: empty video");
  SegmentPlan plan;
  plan.segment_length = segment_length;
  plan.overlap = overlap;
  plan.total_frames = total_frames;
  const std::size_t stride = segment_length - overlap;
  std::size_t start = 0;
  while (true) {
    Segment seg;
    seg.start = start;
    seg.length = std::min(segment_length, total_frames - start);
    seg.overlap = plan.segments.empty() ? 0 : overlap;
    plan.segments.push_back(seg);
    if (start + segment_length >= total_frames) break;
    start += stride;
  }
  return plan;
}

std::size_t SegmentPlan::frame_index(std::size_t s, std::size_t j) const {
  if (s >= segments.size()) throw IndexError("segment plan: segment index out of range");
  return std::min(segments[s].start + j, total_frames - 1);
}

namespace {

using CacheSet = std::vector<amc::MemoryCache>;

std::size_t set_bytes(const CacheSet& set) {
  std::size_t b = 0;
  for (const auto& c : set) b += c.bytes();
  return b;
}

// DDIM trajectory for one segment. read_for(k) / write_for(k) supply the
// caches used at sampler step k (either may return nullptr).
template <typename ReadFn, typename WriteFn>
ad::Tensor run_trajectory(const ad::Tensor& cond01, const model::Denoiser& model,
                          const NoiseSchedule& schedule, const SamplerConfig& sampler,
                          std::size_t segment_index, ReadFn read_for, WriteFn write_for,
                          std::size_t* calls) {
  sampler.validate(schedule.steps());
  ad::NoGradGuard no_grad;
  auto cond = ad::affine(cond01, 2.0, -1.0);
  Rng rng(sampler.seed, segment_index);
  ad::Tensor z(cond.shape());
  for (auto& v : z.data()) v = rng.normal();
  const auto ts = ddim_timesteps(schedule.steps(), sampler.steps);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    model::CacheIo io;
    io.read = read_for(k);
    io.write = write_for(k);
    auto eps = model.denoise(z, ts[k], cond, io);
    if (calls) ++*calls;
    const double a_t = schedule.alpha_bar(ts[k]);
    const double a_prev = k + 1 < ts.size() ? schedule.alpha_bar(ts[k + 1]) : 1.0;
    z = ad::Tensor(z.shape(), ddim_step(z.values(), eps.values(), a_t, a_prev, sampler.clip_denoised));
  }
  return z;
}

}  // namespace

ad::Tensor sample_segment(const ad::Tensor& cond, const model::Denoiser& model,
                          const NoiseSchedule& schedule, const SamplerConfig& sampler,
                          std::size_t segment_index, const std::vector<amc::MemoryCache>* read,
                          std::vector<amc::MemoryCache>* export_to) {
  const std::size_t last = sampler.steps - 1;
  return run_trajectory(
      cond, model, schedule, sampler, segment_index,
      [&](std::size_t) { return read; },
      [&](std::size_t k) { return k == last ? export_to : nullptr; }, nullptr);
}

SampleResult sample_segmentwise(const ad::Tensor& lq_up, const model::Denoiser& model,
                                const NoiseSchedule& schedule, const SegmentPlan& plan,
                                const SamplerConfig& sampler, const SampleOptions& options) {
  if (lq_up.rank() != 4 || lq_up.dim(0) != plan.total_frames) {
    throw DimensionError("sample_segmentwise: video " + ad::shape_str(lq_up.shape()) +
                         " does not match a plan over " + std::to_string(plan.total_frames) +
                         " frames");
  }
  sampler.validate(schedule.steps());
  const std::size_t H = lq_up.dim(1), W = lq_up.dim(2), C = lq_up.dim(3);
  const std::size_t frame = H * W * C;
  const std::size_t n = plan.segment_length;
  const bool use_cache = options.amc && model.config().amc && model.hosting_block_count() > 0;

  SampleResult result;
  std::vector<double> out(plan.total_frames * frame, 0.0);

  CacheSet snapshot;                       // asymmetric: one retained set
  std::vector<CacheSet> prev_steps, cur_steps;  // step-aligned: one set per step
  if (use_cache && options.asymmetric) {
    snapshot = model.zero_caches(H, W);
    result.stats.peak_snapshot_sets = 1;
    result.stats.peak_cache_bytes = set_bytes(snapshot);
  }
  auto note_retained = [&]() {
    std::size_t sets = 0, bytes = 0;
    for (const auto* group : {&prev_steps, &cur_steps}) {
      for (const auto& s : *group) {
        ++sets;
        bytes += set_bytes(s);
      }
    }
    result.stats.peak_snapshot_sets = std::max(result.stats.peak_snapshot_sets, sets);
    result.stats.peak_cache_bytes = std::max(result.stats.peak_cache_bytes, bytes);
  };

  const CacheSet zero_set = use_cache ? model.zero_caches(H, W) : CacheSet{};
  for (std::size_t s = 0; s < plan.segments.size(); ++s) {
    const auto& seg = plan.segments[s];
    std::vector<std::size_t> idx(n);
    for (std::size_t j = 0; j < n; ++j) idx[j] = plan.frame_index(s, j);
    auto cond = ad::gather_leading(lq_up, idx).detach();

    ad::Tensor raw;
    if (!use_cache) {
      raw = run_trajectory(
          cond, model, schedule, sampler, s, [](std::size_t) -> const CacheSet* { return nullptr; },
          [](std::size_t) -> CacheSet* { return nullptr; }, &result.stats.model_calls);
    } else if (options.asymmetric) {
      CacheSet next;
      const std::size_t last = sampler.steps - 1;
      raw = run_trajectory(
          cond, model, schedule, sampler, s, [&](std::size_t) { return &snapshot; },
          [&](std::size_t k) { return k == last ? &next : nullptr; }, &result.stats.model_calls);
      snapshot = std::move(next);
      result.stats.peak_cache_bytes = std::max(result.stats.peak_cache_bytes, set_bytes(snapshot));
      if (options.keep_cache_snapshots) result.snapshots.push_back(snapshot);
    } else {
      cur_steps.clear();
      raw = run_trajectory(
          cond, model, schedule, sampler, s,
          [&](std::size_t k) { return prev_steps.empty() ? &zero_set : &prev_steps[k]; },
          [&](std::size_t) {
            cur_steps.emplace_back();
            return &cur_steps.back();
          },
          &result.stats.model_calls);
      note_retained();
      prev_steps = std::move(cur_steps);
      cur_steps.clear();
      if (options.keep_cache_snapshots) result.snapshots.push_back(prev_steps.back());
    }

    // Back to [0,1] and stitch; overlapping frames cross-fade linearly.
    std::vector<double> seg01(raw.numel());
    for (std::size_t i = 0; i < seg01.size(); ++i) seg01[i] = 0.5 * (raw.values()[i] + 1.0);
    for (std::size_t j = 0; j < seg.length; ++j) {
      double* dst = out.data() + (seg.start + j) * frame;
      const double* src = seg01.data() + j * frame;
      if (j < seg.overlap) {
        const double wn = static_cast<double>(j + 1) / static_cast<double>(seg.overlap + 1);
        for (std::size_t e = 0; e < frame; ++e) dst[e] = (1.0 - wn) * dst[e] + wn * src[e];
      } else {
        std::copy_n(src, frame, dst);
      }
    }
    if (options.keep_segment_outputs) {
      result.segment_outputs.emplace_back(ad::Shape{n, H, W, C}, std::move(seg01));
    }
  }

  ad::Tensor video(lq_up.shape(), std::move(out));
  if (options.color_correct) {
    video = color_correct(video, lq_up);
    for (auto& v : video.data()) v = std::clamp(v, 0.0, 1.0);
  }
  result.video = video;
  return result;
}

}  // namespace liftvsr::diffusion
