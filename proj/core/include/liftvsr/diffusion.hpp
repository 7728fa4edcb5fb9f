#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "liftvsr/amc.hpp"
#include "liftvsr/denoiser.hpp"
#include "liftvsr/rng.hpp"
#include "liftvsr/tensor.hpp"

namespace liftvsr::diffusion {

// Cumulative signal coefficients alpha_bar_t of the forward process.
class NoiseSchedule {
 public:
  // Linear beta ramp; alpha_bar_t = prod_{s<=t} (1 - beta_s).
  static NoiseSchedule linear(std::size_t steps = 1000, double beta_start = 1e-4,
                              double beta_end = 0.02);

  std::size_t steps() const { return alpha_bar_.size(); }
  double alpha_bar(std::size_t t) const;
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }
  const std::string& descriptor() const { return descriptor_; }

 private:
  std::vector<double> alpha_bar_;
  std::string descriptor_;
};

// z_t = sqrt(a) z0 + sqrt(1 - a) noise with a = alpha_bar_t. Values only.
ad::Tensor forward_diffuse(const ad::Tensor& z0, std::size_t t, const ad::Tensor& noise,
                           const NoiseSchedule& schedule);

struct SamplerConfig {
  std::size_t steps = 15;
  std::uint64_t seed = 0;
  // Clamp the predicted clean sample to [-1, 1] at every step.
  bool clip_denoised = true;

  void validate(std::size_t schedule_steps) const;
};

// Descending, evenly spaced training timesteps visited by the sampler.
std::vector<std::size_t> ddim_timesteps(std::size_t schedule_steps, std::size_t sampler_steps);

// One deterministic DDIM move from alpha_bar `a_t` to `a_prev` given the
// predicted noise. a_prev = 1 returns the clean-sample estimate.
std::vector<double> ddim_step(std::span<const double> z, std::span<const double> eps, double a_t,
                              double a_prev, bool clip);

// --- segments -------------------------------------------------------------------

struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;   // real frames; the segment is padded to n
  std::size_t overlap = 0;  // frames shared with the previous segment
};

struct SegmentPlan {
  std::vector<Segment> segments;
  std::size_t segment_length = 0;
  std::size_t overlap = 0;
  std::size_t total_frames = 0;

  // Windows of n frames advancing by n - overlap; the tail is padded by
  // repeating the last frame.
  static SegmentPlan make(std::size_t total_frames, std::size_t segment_length, std::size_t overlap);

  // Source frame for slot j of segment s (tail slots repeat the last frame).
  std::size_t frame_index(std::size_t s, std::size_t j) const;
};

// --- training ---------------------------------------------------------------------

struct TrainingLoss {
  ad::Tensor loss;                     // mean over segments
  std::vector<std::size_t> timesteps;  // per segment
};

// hq, cond: [N,H,W,C] in [0,1] with N a multiple of the model's segment length.
// Segments run in order; each is noised at its own timestep when
// `asymmetric`, otherwise all share one draw. Caches flow forward from each
// segment to the next, starting from zero.
TrainingLoss training_loss(const ad::Tensor& hq, const ad::Tensor& cond,
                           const model::Denoiser& model, const NoiseSchedule& schedule, Rng& rng,
                           bool asymmetric = true);

// --- sampling ---------------------------------------------------------------------

struct SampleOptions {
  bool amc = true;
  // true: caches exported at each segment's last denoising step condition the
  // whole next segment. false: step k of a segment reads the cache written at
  // step k of the previous one, so one cache set is kept per sampler step.
  bool asymmetric = true;
  bool color_correct = true;
  bool keep_segment_outputs = false;
  bool keep_cache_snapshots = false;
};

struct SampleStats {
  std::size_t peak_cache_bytes = 0;    // retained cache snapshots, all hosting blocks
  std::size_t peak_snapshot_sets = 0;  // retained sets of per-block caches
  std::size_t model_calls = 0;
};

struct SampleResult {
  ad::Tensor video;  // [N,H,W,C] in [0,1]
  SampleStats stats;
  std::vector<ad::Tensor> segment_outputs;                  // per segment, [0,1], pre-blend
  std::vector<std::vector<amc::MemoryCache>> snapshots;     // exported after each segment
};

// Full DDIM trajectory for one n-frame segment from seeded pure noise.
// `read` caches are held fixed; when `export_to` is set it receives the update
// computed at the final step. cond is in [0,1]; returns [-1,1] model space.
ad::Tensor sample_segment(const ad::Tensor& cond, const model::Denoiser& model,
                          const NoiseSchedule& schedule, const SamplerConfig& sampler,
                          std::size_t segment_index, const std::vector<amc::MemoryCache>* read,
                          std::vector<amc::MemoryCache>* export_to);

// lq_up: bicubically upsampled low-quality video [N,H,W,C] in [0,1].
SampleResult sample_segmentwise(const ad::Tensor& lq_up, const model::Denoiser& model,
                                const NoiseSchedule& schedule, const SegmentPlan& plan,
                                const SamplerConfig& sampler, const SampleOptions& options = {});

// --- inference utilities -------------------------------------------------------

// Per channel over the whole video: (x - mu_out) / sd_out * sd_ref + mu_ref.
// Constant channels are only mean-shifted.
ad::Tensor color_correct(const ad::Tensor& output, const ad::Tensor& reference);

struct TileWindow {
  std::size_t y = 0, x = 0, height = 0, width = 0;
};

// Tile origins covering an H x W frame with stride tile - overlap.
std::vector<TileWindow> tile_windows(std::size_t height, std::size_t width, std::size_t tile,
                                     std::size_t overlap);

// Normalized Gaussian blend weights, one H x W map per window.
std::vector<std::vector<double>> tile_weights(std::size_t height, std::size_t width,
                                              std::size_t tile, std::size_t overlap);

// Splits [N,H,W,C] into overlapping spatial tiles, maps each through
// per_tile_fn (same-shape output), and blends the results.
ad::Tensor tile_and_merge(const ad::Tensor& video, std::size_t tile, std::size_t overlap,
                          const std::function<ad::Tensor(const ad::Tensor&)>& per_tile_fn);

}  // namespace liftvsr::diffusion
