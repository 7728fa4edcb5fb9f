#include "liftvsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "liftvsr/error.hpp"
#include "liftvsr/ops.hpp"

namespace liftvsr::eval {

double psnr(const ad::Tensor& a, const ad::Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 4) {
    throw DimensionError("psnr: shapes " + ad::shape_str(a.shape()) + " and " +
                         ad::shape_str(b.shape()) + " must match [n,h,w,c]");
  }
  const std::size_t n = a.dim(0);
  const std::size_t frame = a.numel() / n;
  const auto& av = a.values();
  const auto& bv = b.values();
  double total = 0.0;
  for (std::size_t f = 0; f < n; ++f) {
    double se = 0.0;
    for (std::size_t i = f * frame; i < (f + 1) * frame; ++i) se += (av[i] - bv[i]) * (av[i] - bv[i]);
    const double mse = se / static_cast<double>(frame);
    total += mse > 0.0 ? std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse)) : kPsnrCapDb;
  }
  return total / static_cast<double>(n);
}

WarpError warping_error(const ad::Tensor& video, const ad::Tensor& flow) {
  if (!flow.defined() || flow.numel() == 0) throw DataError("warping_error: missing flow");
  if (video.rank() != 4 || flow.rank() != 4 || video.dim(0) < 2 ||
      flow.dim(0) != video.dim(0) - 1 || flow.dim(1) != video.dim(1) ||
      flow.dim(2) != video.dim(2) || flow.dim(3) != 2) {
    throw DimensionError("warping_error: video " + ad::shape_str(video.shape()) + " and flow " +
                         ad::shape_str(flow.shape()) + " are incompatible");
  }
  const std::size_t n = video.dim(0), h = video.dim(1), w = video.dim(2), c = video.dim(3);
  double max_disp = 0.0;
  for (double v : flow.values()) max_disp = std::max(max_disp, std::abs(v));
  WarpError out;
  out.border = static_cast<std::size_t>(std::ceil(max_disp)) + 1;
  if (2 * out.border >= h || 2 * out.border >= w) {
    throw DataError("warping_error: flow magnitude leaves no interior pixels");
  }
  ad::NoGradGuard guard;
  auto later = ad::slice(video, 0, 1, n - 1);
  auto earlier = ad::slice(video, 0, 0, n - 1);
  const auto warped = ad::bilinear_warp(later, flow);
  const auto& wv = warped.values();
  const auto& ev = earlier.values();
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < n; ++t) {
    double se = 0.0;
    std::size_t count = 0;
    for (std::size_t y = out.border; y < h - out.border; ++y) {
      for (std::size_t x = out.border; x < w - out.border; ++x) {
        const std::size_t base = ((t * h + y) * w + x) * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double d = wv[base + ch] - ev[base + ch];
          se += d * d;
        }
        count += c;
      }
    }
    total += se / static_cast<double>(count);
  }
  out.value = total / static_cast<double>(n - 1);
  return out;
}

ad::Tensor temporal_profile(const ad::Tensor& video, std::size_t row) {
  if (video.rank() != 4) throw DimensionError("temporal_profile: expected [n,h,w,c]");
  if (row >= video.dim(1)) {
    throw IndexError("temporal_profile: row " + std::to_string(row) + " >= height " +
                     std::to_string(video.dim(1)));
  }
  ad::NoGradGuard guard;
  auto r = ad::slice(video, 1, row, 1);
  return ad::reshape(r, {video.dim(0), video.dim(2), video.dim(3)}).detach();
}

void write_ppm(const std::filesystem::path& path, const ad::Tensor& image) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw DimensionError("write_ppm: expected [h,w,1|3], got " + ad::shape_str(image.shape()));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_ppm: cannot open " + path.string());
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  os << "P6\n" << w << " " << h << "\n255\n";
  const auto& v = image.values();
  std::string bytes(h * w * 3, '\0');
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double x = std::clamp(v[p * c + (c == 3 ? ch : 0)], 0.0, 1.0);
      bytes[p * 3 + ch] = static_cast<char>(static_cast<unsigned char>(std::lround(x * 255.0)));
    }
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write_ppm: write failed for " + path.string());
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("metrics csv: cannot open " + path.string());
  os << "video_id,psnr_db,ewarp_e3,runtime_s\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g\n", r.video_id.c_str(), r.psnr_db,
                  r.ewarp_e3, r.runtime_s);
    os << buf;
  }
  if (!os) throw IoError("metrics csv: write failed for " + path.string());
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("metrics csv: cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "video_id,psnr_db,ewarp_e3,runtime_s") throw DataError("metrics csv: bad header");
  std::vector<MetricRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    MetricRow r;
    std::string field;
    std::getline(ss, r.video_id, ',');
    std::getline(ss, field, ',');
    r.psnr_db = std::stod(field);
    std::getline(ss, field, ',');
    r.ewarp_e3 = std::stod(field);
    std::getline(ss, field, ',');
    r.runtime_s = std::stod(field);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace liftvsr::eval
