#include "liftvsr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "liftvsr/error.hpp"
#include "liftvsr/rng.hpp"

namespace liftvsr::data {

namespace {

struct Wave {
  double fx, fy;
  std::vector<double> amp, phase;  // per channel
};

struct Affine2 {
  double a, b, c, d;  // row-major 2x2
  double tx, ty;
};

}  // namespace

SyntheticScene SyntheticScene::random(std::uint64_t seed, std::size_t frames, std::size_t height,
                                      std::size_t width) {
  SyntheticScene s;
  s.frames = frames;
  s.height = height;
  s.width = width;
  s.seed = seed;
  Rng rng(seed, 7);
  s.vx = rng.uniform(-1.5, 1.5);
  s.vy = rng.uniform(-1.5, 1.5);
  if (rng.uniform() < 0.25) {
    s.motion = Motion::kAffine;
    s.rotation = rng.uniform(-0.02, 0.02);
    s.zoom = 1.0 + rng.uniform(-0.015, 0.015);
  }
  return s;
}

SceneVideo generate_scene(const SyntheticScene& scene) {
  if (scene.height < 16 || scene.width < 16) throw ConfigError("scene: resolution must be >= 16");
  if (scene.frames < 2) throw ConfigError("scene: need at least 2 frames");
  if (scene.channels == 0) throw ConfigError("scene: channels must be >= 1");
  const std::size_t C = scene.channels, H = scene.height, W = scene.width;
  Rng rng(scene.seed, 1);

  std::vector<Wave> waves;
  auto add_waves = [&](std::size_t count, double fmin, double fmax, double budget) {
    std::vector<Wave> group;
    std::vector<double> total(C, 0.0);
    for (std::size_t k = 0; k < count; ++k) {
      Wave wv;
      const double f = rng.uniform(fmin, fmax);
      const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
      wv.fx = f * std::cos(ang);
      wv.fy = f * std::sin(ang);
      for (std::size_t c = 0; c < C; ++c) {
        wv.amp.push_back(rng.uniform(0.2, 1.0));
        wv.phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
        total[c] += wv.amp.back();
      }
      group.push_back(std::move(wv));
    }
    for (auto& wv : group) {
      for (std::size_t c = 0; c < C; ++c) wv.amp[c] *= budget / total[c];
      waves.push_back(std::move(wv));
    }
  };
  // Amplitudes sum to 0.48 per channel, so values stay inside [0.02, 0.98].
  add_waves(scene.sinusoids, 0.015, 0.12, 0.40);
  add_waves(scene.noise_components, 0.10, 0.20, 0.08);

  auto texture = [&](double x, double y, std::size_t c) {
    double v = 0.5;
    for (const auto& wv : waves) {
      v += wv.amp[c] * std::sin(2.0 * std::numbers::pi * (wv.fx * x + wv.fy * y) + wv.phase[c]);
    }
    return v;
  };

  // Per-frame motion p -> M(p) about the frame center.
  const double cx = 0.5 * static_cast<double>(W - 1), cy = 0.5 * static_cast<double>(H - 1);
  Affine2 m{1, 0, 0, 1, scene.vx, scene.vy};
  if (scene.motion == Motion::kAffine) {
    const double s = scene.zoom, r = scene.rotation;
    m = {s * std::cos(r), -s * std::sin(r), s * std::sin(r), s * std::cos(r), scene.vx, scene.vy};
  }
  const double det = m.a * m.d - m.b * m.c;
  auto forward = [&](double& x, double& y) {
    const double dx = x - cx, dy = y - cy;
    x = cx + m.a * dx + m.b * dy + m.tx;
    y = cy + m.c * dx + m.d * dy + m.ty;
  };
  auto inverse = [&](double& x, double& y) {
    const double dx = x - cx - m.tx, dy = y - cy - m.ty;
    x = cx + (m.d * dx - m.b * dy) / det;
    y = cy + (-m.c * dx + m.a * dy) / det;
  };

  SceneVideo out;
  std::vector<double> video(scene.frames * H * W * C);
  for (std::size_t t = 0; t < scene.frames; ++t) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double px = static_cast<double>(x), py = static_cast<double>(y);
        if (scene.motion == Motion::kTranslation) {
          px -= scene.vx * static_cast<double>(t);
          py -= scene.vy * static_cast<double>(t);
        } else {
          for (std::size_t k = 0; k < t; ++k) inverse(px, py);
        }
        for (std::size_t c = 0; c < C; ++c) {
          video[((t * H + y) * W + x) * C + c] = texture(px, py, c);
        }
      }
    }
  }
  out.hq = ad::Tensor({scene.frames, H, W, C}, std::move(video));

  std::vector<double> flow((scene.frames - 1) * H * W * 2);
  for (std::size_t t = 0; t + 1 < scene.frames; ++t) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double px = static_cast<double>(x), py = static_cast<double>(y);
        forward(px, py);
        const std::size_t i = ((t * H + y) * W + x) * 2;
        flow[i] = px - static_cast<double>(x);
        flow[i + 1] = py - static_cast<double>(y);
      }
    }
  }
  out.flow = ad::Tensor({scene.frames - 1, H, W, 2}, std::move(flow));
  return out;
}

DegradationParams DegradationRecipe::sample(std::uint64_t seed) const {
  Rng rng(seed, 3);
  DegradationParams p;
  p.blur_sigma = rng.uniform(blur_sigma_min, blur_sigma_max);
  p.noise_sigma = rng.uniform(noise_sigma_min, noise_sigma_max);
  p.levels = levels_min + static_cast<std::size_t>(rng.below(levels_max - levels_min + 1));
  p.scale = scale;
  p.seed = mix_seed(seed, 4);
  return p;
}

namespace {

double cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::vector<std::size_t> begin;    // per output index: offset into idx/wgt
  std::vector<std::size_t> idx;
  std::vector<double> wgt;
};

Taps resize_taps(std::size_t in, std::size_t out) {
  const double scale = static_cast<double>(out) / static_cast<double>(in);
  const double kscale = std::min(scale, 1.0);  // antialias when shrinking
  const double support = 2.0 / kscale;
  Taps t;
  for (std::size_t o = 0; o < out; ++o) {
    t.begin.push_back(t.idx.size());
    const double u = (static_cast<double>(o) + 0.5) / scale - 0.5;
    const auto lo = static_cast<long>(std::floor(u - support));
    const auto hi = static_cast<long>(std::ceil(u + support));
    double total = 0.0;
    const std::size_t first = t.wgt.size();
    for (long i = lo; i <= hi; ++i) {
      const double wv = kscale * cubic(kscale * (u - static_cast<double>(i)));
      if (wv == 0.0) continue;
      t.idx.push_back(static_cast<std::size_t>(std::clamp(i, 0L, static_cast<long>(in) - 1)));
      t.wgt.push_back(wv);
      total += wv;
    }
    for (std::size_t k = first; k < t.wgt.size(); ++k) t.wgt[k] /= total;
  }
  t.begin.push_back(t.idx.size());
  return t;
}

// Separable filter along x then y with precomputed taps.
std::vector<double> separable(const std::vector<double>& src, std::size_t n, std::size_t h,
                              std::size_t w, std::size_t c, const Taps& tx, std::size_t out_w,
                              const Taps& ty, std::size_t out_h) {
  std::vector<double> mid(n * h * out_w * c, 0.0);
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        double* dst = mid.data() + ((f * h + y) * out_w + x) * c;
        for (std::size_t k = tx.begin[x]; k < tx.begin[x + 1]; ++k) {
          const double* s = src.data() + ((f * h + y) * w + tx.idx[k]) * c;
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += tx.wgt[k] * s[ch];
        }
      }
  std::vector<double> out(n * out_h * out_w * c, 0.0);
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        double* dst = out.data() + ((f * out_h + y) * out_w + x) * c;
        for (std::size_t k = ty.begin[y]; k < ty.begin[y + 1]; ++k) {
          const double* s = mid.data() + ((f * h + ty.idx[k]) * out_w + x) * c;
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += ty.wgt[k] * s[ch];
        }
      }
  return out;
}

Taps gaussian_taps(std::size_t size, double sigma) {
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  Taps t;
  for (std::size_t o = 0; o < size; ++o) {
    t.begin.push_back(t.idx.size());
    double total = 0.0;
    const std::size_t first = t.wgt.size();
    for (long k = -radius; k <= radius; ++k) {
      const double wv = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
      const long i = std::clamp(static_cast<long>(o) + k, 0L, static_cast<long>(size) - 1);
      t.idx.push_back(static_cast<std::size_t>(i));
      t.wgt.push_back(wv);
      total += wv;
    }
    for (std::size_t k = first; k < t.wgt.size(); ++k) t.wgt[k] /= total;
  }
  t.begin.push_back(t.idx.size());
  return t;
}

}  // namespace

ad::Tensor resize_bicubic(const ad::Tensor& video, std::size_t out_h, std::size_t out_w) {
  if (video.rank() != 4) throw DimensionError("resize: expected [n,h,w,c]");
  if (out_h == 0 || out_w == 0) throw ConfigError("resize: empty output size");
  const std::size_t n = video.dim(0), h = video.dim(1), w = video.dim(2), c = video.dim(3);
  auto out = separable(video.values(), n, h, w, c, resize_taps(w, out_w), out_w,
                       resize_taps(h, out_h), out_h);
  return ad::Tensor({n, out_h, out_w, c}, std::move(out));
}

ad::Tensor gaussian_blur(const ad::Tensor& video, double sigma) {
  if (video.rank() != 4) throw DimensionError("gaussian_blur: expected [n,h,w,c]");
  if (sigma <= 0.0) return video.clone();
  const std::size_t n = video.dim(0), h = video.dim(1), w = video.dim(2), c = video.dim(3);
  auto out = separable(video.values(), n, h, w, c, gaussian_taps(w, sigma), w,
                       gaussian_taps(h, sigma), h);
  return ad::Tensor(video.shape(), std::move(out));
}

ad::Tensor degrade(const ad::Tensor& hq, const DegradationParams& params) {
  if (hq.rank() != 4) throw DimensionError("degrade: expected [n,h,w,c]");
  if (params.scale == 0 || hq.dim(1) % params.scale != 0 || hq.dim(2) % params.scale != 0) {
    throw DataError("degrade: frame " + std::to_string(hq.dim(1)) + "x" +
                    std::to_string(hq.dim(2)) + " not divisible by scale " +
                    std::to_string(params.scale));
  }
  auto x = gaussian_blur(hq, params.blur_sigma);
  x = resize_bicubic(x, hq.dim(1) / params.scale, hq.dim(2) / params.scale);
  auto v = x.data();
  if (params.noise_sigma > 0.0) {
    Rng rng(params.seed, 5);
    for (auto& e : v) e += params.noise_sigma * rng.normal();
  }
  for (auto& e : v) e = std::clamp(e, 0.0, 1.0);
  if (params.levels >= 2) {
    const double q = static_cast<double>(params.levels - 1);
    for (auto& e : v) e = std::round(e * q) / q;
  }
  return x;
}

}  // namespace liftvsr::data
