#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "liftvsr/tensor.hpp"

namespace liftvsr::eval {

inline constexpr double kPsnrCapDb = 100.0;

// Mean over frames of 10 log10(1 / MSE); identical frames score the cap.
double psnr(const ad::Tensor& a, const ad::Tensor& b);

struct WarpError {
  double value = 0.0;      // mean squared difference
  std::size_t border = 0;  // pixels excluded on every side
  double e3() const { return value * 1e3; }  // reporting unit, x 10^-3
};

// Mean over consecutive pairs of the squared difference between frame t and
// frame t+1 warped back by flow_t, on interior pixels only (border =
// ceil(max |flow|) + 1).
WarpError warping_error(const ad::Tensor& video, const ad::Tensor& flow);

// Row y of every frame stacked over time -> [n, w, c].
ad::Tensor temporal_profile(const ad::Tensor& video, std::size_t row);

// Binary PPM (P6, maxval 255) of an [h, w, c] image with c in {1, 3};
// values are clamped to [0,1].
void write_ppm(const std::filesystem::path& path, const ad::Tensor& image);

struct MetricRow {
  std::string video_id;
  double psnr_db = 0.0;
  double ewarp_e3 = 0.0;
  double runtime_s = 0.0;
};

// CSV with header video_id,psnr_db,ewarp_e3,runtime_s; numbers printed with
// 9 significant digits.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace liftvsr::eval
