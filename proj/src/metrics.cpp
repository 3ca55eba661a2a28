#include "lmpet/metrics.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <utility>

namespace lmpet {

double psnr(const Image2D& f, const Image2D& ref) {
  require_same_grid(f.grid(), ref.grid(), "psnr");
  double sse = 0.0;
  for (std::size_t j = 0; j < f.size(); ++j) {
    const double d = f[j] - ref[j];
    sse += d * d;
  }
  if (sse == 0.0) return kPsnrIdentical;
  const double mse = sse / static_cast<double>(f.size());
  const double peak = ref.max();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size) * size);
  const double c = 0.5 * (size - 1);
  double total = 0.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double v = std::exp(-((x - c) * (x - c) + (y - c) * (y - c)) / (2.0 * sigma * sigma));
      w[static_cast<std::size_t>(y) * size + x] = v;
      total += v;
    }
  for (auto& v : w) v /= total;
  return w;
}

}  // namespace

double ssim(const Image2D& f, const Image2D& ref, const SsimOptions& opts) {
  require_same_grid(f.grid(), ref.grid(), "ssim");
  const int win = opts.window;
  if (f.width() < win || f.height() < win)
    throw std::invalid_argument("ssim needs at least " + std::to_string(win) + "x" + std::to_string(win) + " pixels");

  double range = opts.dynamic_range;
  if (range <= 0.0) range = ref.max() - ref.min();
  if (range <= 0.0) range = 1.0;
  const double c1 = (opts.k1 * range) * (opts.k1 * range);
  const double c2 = (opts.k2 * range) * (opts.k2 * range);
  const auto w = gaussian_window(win, opts.sigma);

  double total = 0.0;
  int count = 0;
  for (int oy = 0; oy + win <= f.height(); ++oy) {
    for (int ox = 0; ox + win <= f.width(); ++ox) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          const double wk = w[static_cast<std::size_t>(y) * win + x];
          const double a = f.at(ox + x, oy + y);
          const double b = ref.at(ox + x, oy + y);
          mx += wk * a;
          my += wk * b;
          sxx += wk * a * a;
          syy += wk * b * b;
          sxy += wk * a * b;
        }
      const double vx = sxx - mx * mx;
      const double vy = syy - my * my;
      const double cxy = sxy - mx * my;
      const double num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
      const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
      total += num / den;
      ++count;
    }
  }
  return total / count;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return out;
}

void MetricReport::add(std::string image_id, std::string algo, double counts, const Image2D& f, const Image2D& ref) {
  rows.push_back({std::move(image_id), std::move(algo), counts, psnr(f, ref), ssim(f, ref)});
}

namespace {

MeanStd summarize(const std::vector<MetricRow>& rows, const std::string& algo, double counts, double MetricRow::*field) {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.algo == algo && r.counts == counts) v.push_back(r.*field);
  return mean_std(v);
}

}  // namespace

MeanStd MetricReport::psnr_summary(const std::string& algo, double counts) const {
  return summarize(rows, algo, counts, &MetricRow::psnr);
}

MeanStd MetricReport::ssim_summary(const std::string& algo, double counts) const {
  return summarize(rows, algo, counts, &MetricRow::ssim);
}

void MetricReport::write_csv(std::ostream& out) const {
  out << "image_id,algo,counts,psnr,ssim\n";
  std::vector<std::pair<std::string, double>> groups;
  for (const auto& r : rows) {
    const std::pair<std::string, double> key{r.algo, r.counts};
    bool seen = false;
    for (const auto& g : groups) seen = seen || g == key;
    if (!seen) groups.push_back(key);
  }
  const auto old_precision = out.precision(10);
  for (const auto& [algo, counts] : groups) {
    for (const auto& r : rows)
      if (r.algo == algo && r.counts == counts)
        out << r.image_id << ',' << r.algo << ',' << r.counts << ',' << r.psnr << ',' << r.ssim << '\n';
    const auto p = psnr_summary(algo, counts);
    const auto s = ssim_summary(algo, counts);
    out << "mean," << algo << ',' << counts << ',' << p.mean << ',' << s.mean << '\n';
    out << "std," << algo << ',' << counts << ',' << p.std << ',' << s.std << '\n';
  }
  out.precision(old_precision);
}

}  // namespace lmpet
