#pragma once

#include <cstdint>
#include <vector>

#include "liftvsr/tensor.hpp"

// Synthetic training data: analytic sinusoid textures under known global
// motion, so the ground-truth flow between frames is exact, plus a
// blur / downscale / noise / quantization degradation proxy.
namespace liftvsr::data {

enum class Motion {
  kTranslation,
  kAffine,  // rotation + zoom + translation about the frame center
};

struct SyntheticScene {
  std::size_t frames = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  Motion motion = Motion::kTranslation;
  double vx = 0.0;        // pixels per frame
  double vy = 0.0;
  double rotation = 0.0;  // radians per frame (affine)
  double zoom = 1.0;      // scale factor per frame (affine)
  std::size_t sinusoids = 8;
  std::size_t noise_components = 24;  // low-amplitude band-limited detail
  std::uint64_t seed = 0;

  // Draws a translation or mild affine motion from the seed.
  static SyntheticScene random(std::uint64_t seed, std::size_t frames, std::size_t height,
                               std::size_t width);
};

struct SceneVideo {
  ad::Tensor hq;    // [frames, h, w, c] in [0,1]
  ad::Tensor flow;  // [frames-1, h, w, 2]: frame t(p) == frame t+1(p + flow_t(p))
};

SceneVideo generate_scene(const SyntheticScene& scene);

struct DegradationParams {
  double blur_sigma = 0.0;   // 0: no blur
  double noise_sigma = 0.0;  // 0: no noise
  std::size_t levels = 0;    // 0: no quantization
  std::size_t scale = 4;
  std::uint64_t seed = 0;

  static DegradationParams identity(std::size_t scale = 4) { return {0.0, 0.0, 0, scale, 0}; }
};

// Ranges from which each video draws its own degradation.
struct DegradationRecipe {
  double blur_sigma_min = 0.4;
  double blur_sigma_max = 1.2;
  double noise_sigma_min = 0.0;
  double noise_sigma_max = 0.02;
  std::size_t levels_min = 48;
  std::size_t levels_max = 160;
  std::size_t scale = 4;

  DegradationParams sample(std::uint64_t seed) const;
};

// Gaussian blur -> bicubic downscale -> additive noise -> uniform
// quantization, clamped to [0,1]. Frames are processed independently.
ad::Tensor degrade(const ad::Tensor& hq, const DegradationParams& params);

// Bicubic (a = -0.5) resize of every frame, antialiased when shrinking,
// clamp-to-edge borders.
ad::Tensor resize_bicubic(const ad::Tensor& video, std::size_t out_h, std::size_t out_w);

ad::Tensor gaussian_blur(const ad::Tensor& video, double sigma);

}  // namespace liftvsr::data
