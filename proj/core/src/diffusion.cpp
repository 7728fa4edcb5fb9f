#include "liftvsr/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "liftvsr/error.hpp"
#include "liftvsr/ops.hpp"

namespace liftvsr::diffusion {

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 2) throw ConfigError("noise schedule: need at least 2 steps");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start < beta_end)) {
    throw ConfigError("noise schedule: require 0 < beta_start < beta_end < 1");
  }
  NoiseSchedule s;
  s.alpha_bar_.resize(steps);
  double prod = 1.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double beta =
        beta_start + (beta_end - beta_start) * static_cast<double>(t) / static_cast<double>(steps - 1);
    prod *= 1.0 - beta;
    s.alpha_bar_[t] = prod;
  }
  std::ostringstream os;
  os << "linear(" << steps << "," << beta_start << "," << beta_end << ")";
  s.descriptor_ = os.str();
  return s;
}

double NoiseSchedule::alpha_bar(std::size_t t) const {
  if (t >= alpha_bar_.size()) {
    throw IndexError("noise schedule: timestep " + std::to_string(t) + " outside [0, " +
                     std::to_string(alpha_bar_.size()) + ")");
  }
  return alpha_bar_[t];
}

ad::Tensor forward_diffuse(const ad::Tensor& z0, std::size_t t, const ad::Tensor& noise,
                           const NoiseSchedule& schedule) {
  if (z0.shape() != noise.shape()) {
    throw DimensionError("forward_diffuse: sample " + ad::shape_str(z0.shape()) + " vs noise " +
                         ad::shape_str(noise.shape()));
  }
  const double a = schedule.alpha_bar(t);
  const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
  std::vector<double> out(z0.numel());
  const auto& zv = z0.values();
  const auto& nv = noise.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sa * zv[i] + sn * nv[i];
  return ad::Tensor(z0.shape(), std::move(out));
}

void SamplerConfig::validate(std::size_t schedule_steps) const {
  if (steps == 0 || steps > schedule_steps) {
    throw ConfigError("sampler: steps must be in [1, " + std::to_string(schedule_steps) +
                      "], got " + std::to_string(steps));
  }
}

std::vector<std::size_t> ddim_timesteps(std::size_t schedule_steps, std::size_t sampler_steps) {
  SamplerConfig{sampler_steps}.validate(schedule_steps);
  std::vector<std::size_t> ts(sampler_steps);
  for (std::size_t k = 0; k < sampler_steps; ++k) {
    ts[k] = schedule_steps - 1 - (k * schedule_steps) / sampler_steps;
  }
  return ts;
}

std::vector<double> ddim_step(std::span<const double> z, std::span<const double> eps, double a_t,
                              double a_prev, bool clip) {
  const double sa = std::sqrt(a_t), sn = std::sqrt(1.0 - a_t);
  const double pa = std::sqrt(a_prev), pn = std::sqrt(1.0 - a_prev);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    double x0 = (z[i] - sn * eps[i]) / sa;
    if (clip) x0 = std::clamp(x0, -1.0, 1.0);
    out[i] = pa * x0 + pn * eps[i];
  }
  return out;
}

TrainingLoss training_loss(const ad::Tensor& hq, const ad::Tensor& cond,
                           const model::Denoiser& model, const NoiseSchedule& schedule, Rng& rng,
                           bool asymmetric) {
  if (hq.rank() != 4 || hq.shape() != cond.shape()) {
    throw DimensionError("training_loss: video " + ad::shape_str(hq.shape()) + " and condition " +
                         ad::shape_str(cond.shape()) + " must be matching [N,H,W,C]");
  }
  const std::size_t n = model.config().segment_length;
  const std::size_t total = hq.dim(0);
  if (total == 0 || total % n != 0) {
    throw DataError("training_loss: video length " + std::to_string(total) +
                    " is not a multiple of segment length " + std::to_string(n));
  }
  const std::size_t segments = total / n;
  const std::size_t T = schedule.steps();

  TrainingLoss out;
  out.timesteps.resize(segments);
  const std::size_t shared = static_cast<std::size_t>(rng.below(T));
  for (std::size_t s = 0; s < segments; ++s) {
    out.timesteps[s] = asymmetric ? (s == 0 ? shared : static_cast<std::size_t>(rng.below(T))) : shared;
  }

  std::vector<amc::MemoryCache> caches = model.zero_caches(hq.dim(1), hq.dim(2));
  std::vector<ad::Tensor> losses;
  for (std::size_t s = 0; s < segments; ++s) {
    auto x0 = ad::affine(ad::slice(hq, 0, s * n, n), 2.0, -1.0).detach();
    auto c = ad::affine(ad::slice(cond, 0, s * n, n), 2.0, -1.0).detach();
    ad::Tensor noise(x0.shape());
    for (auto& v : noise.data()) v = rng.normal();
    auto zt = forward_diffuse(x0, out.timesteps[s], noise, schedule);
    std::vector<amc::MemoryCache> next;
    model::CacheIo io;
    if (!caches.empty()) {
      io.read = &caches;
      io.write = &next;
    }
    auto eps = model.denoise(zt, out.timesteps[s], c, io);
    losses.push_back(ad::mse(eps, noise));
    if (!caches.empty()) caches = std::move(next);
  }
  auto total_loss = losses.size() == 1 ? losses[0] : ad::concat(losses, 0);
  out.loss = ad::mean(total_loss);
  return out;
}

ad::Tensor color_correct(const ad::Tensor& output, const ad::Tensor& reference) {
  if (output.shape() != reference.shape() || output.rank() != 4) {
    throw DimensionError("color_correct: output " + ad::shape_str(output.shape()) +
                         " vs reference " + ad::shape_str(reference.shape()));
  }
  const std::size_t C = output.dim(3);
  const std::size_t count = output.numel() / C;
  const auto& ov = output.values();
  const auto& rv = reference.values();
  auto moments = [&](const std::vector<double>& v, std::size_t ch) {
    double mu = 0.0;
    for (std::size_t i = 0; i < count; ++i) mu += v[i * C + ch];
    mu /= static_cast<double>(count);
    double var = 0.0;
    for (std::size_t i = 0; i < count; ++i) var += (v[i * C + ch] - mu) * (v[i * C + ch] - mu);
    return std::pair{mu, std::sqrt(var / static_cast<double>(count))};
  };
  std::vector<double> out(ov.size());
  for (std::size_t ch = 0; ch < C; ++ch) {
    const auto [mo, so] = moments(ov, ch);
    const auto [mr, sr] = moments(rv, ch);
    for (std::size_t i = 0; i < count; ++i) {
      const double v = ov[i * C + ch];
      out[i * C + ch] = so > 0.0 ? (v - mo) / so * sr + mr : v - mo + mr;
    }
  }
  return ad::Tensor(output.shape(), std::move(out));
}

}  // namespace liftvsr::diffusion
