#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "lmpet/image.hpp"

namespace lmpet {

/// Returned by psnr() for identical images.
inline constexpr double kPsnrIdentical = 99.0;

/// 10 log10(peak^2 / MSE) with peak = max(ref).
double psnr(const Image2D& f, const Image2D& ref);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  /// Dynamic range; <= 0 means max(ref) - min(ref) (1 for a constant ref).
  double dynamic_range = 0.0;
};

/// Mean SSIM over all fully contained Gaussian windows.
double ssim(const Image2D& f, const Image2D& ref, const SsimOptions& opts = {});

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Sample standard deviation (n - 1); zero for fewer than two values.
MeanStd mean_std(const std::vector<double>& values);

struct MetricRow {
  std::string image_id;
  std::string algo;
  double counts = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  void add(std::string image_id, std::string algo, double counts, const Image2D& f, const Image2D& ref);
  /// Aggregate over the rows matching (algo, counts).
  [[nodiscard]] MeanStd psnr_summary(const std::string& algo, double counts) const;
  [[nodiscard]] MeanStd ssim_summary(const std::string& algo, double counts) const;
  /// `image_id,algo,counts,psnr,ssim`; each (algo, counts) group is followed
  /// by a `mean` and a `std` row.
  void write_csv(std::ostream& out) const;
};

}  // namespace lmpet
