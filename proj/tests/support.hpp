#pragma once

// Shared fixtures and brute-force reference computations for the tests.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "lmpet/geometry.hpp"
#include "lmpet/image.hpp"
#include "lmpet/parallel.hpp"
#include "lmpet/projector.hpp"

namespace testing {

using lmpet::Event;
using lmpet::EventList;
using lmpet::Grid;
using lmpet::Image2D;
using lmpet::ScannerConfig;

inline EventList random_events(const ScannerConfig& cfg, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> crystal(0, static_cast<std::uint32_t>(cfg.n_crystals() - 1));
  std::uniform_int_distribution<std::uint32_t> tof(0, static_cast<std::uint32_t>(cfg.n_tof_bins - 1));
  EventList ev;
  while (ev.size() < n) {
    const auto a = crystal(rng);
    const auto b = crystal(rng);
    if (a != b) ev.push_back({a, b, tof(rng)});
  }
  return ev;
}

inline Image2D random_image(const Grid& g, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(lo, hi);
  Image2D f(g);
  for (auto& v : f.values()) v = uni(rng);
  return f;
}

/// A few Gaussian blobs under a sin^2 taper that vanishes on the border
/// pixels, so zero padding conventions at the grid edge do not matter.
inline Image2D smooth_image(const Grid& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double half_w = 0.5 * g.width * g.pixel_size_mm;
  const double half_h = 0.5 * g.height * g.pixel_size_mm;
  const double half = std::min(half_w, half_h);
  std::uniform_real_distribution<double> pos(-0.4 * half, 0.4 * half);
  std::uniform_real_distribution<double> width(0.2 * half, 0.35 * half);
  std::uniform_real_distribution<double> amp(0.5, 2.0);
  Image2D f(g);
  for (int b = 0; b < 4; ++b) {
    const double cx = pos(rng), cy = pos(rng), s = width(rng), a = amp(rng);
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) {
        const double dx = g.center_x(x) - cx, dy = g.center_y(y) - cy;
        f.at(x, y) += a * std::exp(-(dx * dx + dy * dy) / (2 * s * s));
      }
  }
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      const double tx = std::sin(std::numbers::pi * x / (g.width - 1));
      const double ty = std::sin(std::numbers::pi * y / (g.height - 1));
      f.at(x, y) *= tx * tx * ty * ty;
    }
  return f;
}

/// Bilinear interpolation between pixel centres, zero beyond them.
inline double bilinear(const Image2D& f, double wx, double wy) {
  const Grid& g = f.grid();
  const double u = wx / g.pixel_size_mm + 0.5 * (g.width - 1);
  const double v = wy / g.pixel_size_mm + 0.5 * (g.height - 1);
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const double fx = u - x0, fy = v - y0;
  auto at = [&](int x, int y) { return (x < 0 || y < 0 || x >= g.width || y >= g.height) ? 0.0 : f.at(x, y); };
  return (1 - fx) * (1 - fy) * at(x0, y0) + fx * (1 - fy) * at(x0 + 1, y0) + (1 - fx) * fy * at(x0, y0 + 1) +
         fx * fy * at(x0 + 1, y0 + 1);
}

/// TOF-weighted line integral of f along the LOR by midpoint quadrature.
inline double line_integral(const ScannerConfig& cfg, const lmpet::Lor& lor, int tof, const Image2D& f,
                            int substeps = 10000) {
  const double length = lor.length();
  const lmpet::Point2 u = lor.direction();
  const double dt = length / substeps;
  double sum = 0.0;
  for (int k = 0; k < substeps; ++k) {
    const double t = (k + 0.5) * dt;
    const double w = lmpet::tof_weight(cfg, t - 0.5 * length, tof);
    if (w == 0.0) continue;
    sum += w * bilinear(f, lor.p1.x + t * u.x, lor.p1.y + t * u.y);
  }
  return sum * dt;
}

inline Eigen::MatrixXd dense(const lmpet::ProjectionMatrix& p) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p.rows()),
                                            static_cast<Eigen::Index>(p.grid().size()));
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const auto px = p.row_pixels(i);
    const auto w = p.row_weights(i);
    for (std::size_t k = 0; k < px.size(); ++k) d(static_cast<Eigen::Index>(i), px[k]) += w[k];
  }
  return d;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

/// Rotates a square image by 90 degrees counter-clockwise about its centre.
inline Image2D rotate90(const Image2D& f) {
  const int n = f.width();
  Image2D out(f.grid());
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) out.at(n - 1 - y, x) = f.at(x, y);
  return out;
}

/// Restores the previous worker count on scope exit.
class WorkerScope {
 public:
  explicit WorkerScope(int workers) : saved_(lmpet::worker_count()) { lmpet::set_worker_count(workers); }
  ~WorkerScope() { lmpet::set_worker_count(saved_); }
  WorkerScope(const WorkerScope&) = delete;
  WorkerScope& operator=(const WorkerScope&) = delete;

 private:
  int saved_;
};

}  // namespace testing
