#include "lmpet/projector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "lmpet/parallel.hpp"

namespace lmpet {

double tof_sigma_mm(const ScannerConfig& cfg) {
  return (kSpeedOfLightMmPerPs * cfg.tof_resolution_ps / 2.0) / kFwhmToSigma;
}

double tof_weight(const ScannerConfig& cfg, double s_mid_offset, int tof) {
  const double sigma = tof_sigma_mm(cfg);
  const double d = s_mid_offset - tof_bin_offset(cfg, tof);
  if (std::abs(d) > kTofTruncationSigmas * sigma) return 0.0;
  return std::exp(-d * d / (2.0 * sigma * sigma));
}

SparseRow joseph_row(const ScannerConfig& cfg, const Grid& grid, const Lor& lor, int tof) {
  const double length = lor.length();
  if (!(length > 0.0)) throw std::invalid_argument("degenerate LOR of zero length");

  const Point2 u = lor.direction();
  const bool y_driven = std::abs(u.y) >= std::abs(u.x);
  // Driving axis a steps over pixel lines; interpolation runs along axis b.
  const int n_drive = y_driven ? grid.height : grid.width;
  const int n_interp = y_driven ? grid.width : grid.height;
  const double u_drive = y_driven ? u.y : u.x;
  const double u_interp = y_driven ? u.x : u.y;
  const double p_drive = y_driven ? lor.p1.y : lor.p1.x;
  const double p_interp = y_driven ? lor.p1.x : lor.p1.y;
  const double ps = grid.pixel_size_mm;
  const double ds = ps / std::abs(u_drive);
  const double half_drive = 0.5 * (n_drive - 1);
  const double half_interp = 0.5 * (n_interp - 1);

  SparseRow row;
  row.reserve(2 * static_cast<std::size_t>(n_drive));
  auto push = [&](int drive, int interp, double w) {
    if (interp < 0 || interp >= n_interp || !(w > 0.0)) return;
    const int x = y_driven ? interp : drive;
    const int y = y_driven ? drive : interp;
    row.push_back({static_cast<std::uint32_t>(y * grid.width + x), w});
  };

  for (int a = 0; a < n_drive; ++a) {
    const double line = (a - half_drive) * ps;
    const double t = (line - p_drive) / u_drive;
    if (t < 0.0 || t > length) continue;
    const double pos = (p_interp + t * u_interp) / ps + half_interp;
    if (pos <= -1.0 || pos >= n_interp) continue;
    const double eps = tof_weight(cfg, t - 0.5 * length, tof);
    if (eps == 0.0) continue;
    const double lo = std::floor(pos);
    const double rho = 1.0 - (pos - lo);
    const int b = static_cast<int>(lo);
    push(a, b, eps * rho * ds);
    push(a, b + 1, eps * (1.0 - rho) * ds);
  }

  std::sort(row.begin(), row.end(), [](const SparseEntry& l, const SparseEntry& r) { return l.pixel < r.pixel; });
  std::size_t out = 0;
  for (std::size_t k = 0; k < row.size(); ++k) {
    if (out > 0 && row[out - 1].pixel == row[k].pixel) {
      row[out - 1].weight += row[k].weight;
    } else {
      row[out++] = row[k];
    }
  }
  row.resize(out);
  return row;
}

SparseRow ProjectionMatrix::row(std::size_t i) const {
  SparseRow r;
  const auto px = row_pixels(i);
  const auto w = row_weights(i);
  r.reserve(px.size());
  for (std::size_t k = 0; k < px.size(); ++k) r.push_back({px[k], w[k]});
  return r;
}

void ProjectionMatrix::append_row(const SparseRow& row) {
  if (row_ptr_.empty()) row_ptr_.push_back(0);
  for (const auto& e : row) {
    pixels_.push_back(e.pixel);
    weights_.push_back(e.weight);
  }
  row_ptr_.push_back(pixels_.size());
}

ProjectionMatrix ProjectionMatrix::select_rows(std::span<const std::size_t> indices) const {
  ProjectionMatrix out(grid_);
  std::size_t total = 0;
  for (std::size_t i : indices) {
    if (i >= rows()) throw std::out_of_range("row index " + std::to_string(i) + " out of range");
    total += row_ptr_[i + 1] - row_ptr_[i];
  }
  out.pixels_.reserve(total);
  out.weights_.reserve(total);
  out.row_ptr_.reserve(indices.size() + 1);
  for (std::size_t i : indices) {
    const auto px = row_pixels(i);
    const auto w = row_weights(i);
    out.pixels_.insert(out.pixels_.end(), px.begin(), px.end());
    out.weights_.insert(out.weights_.end(), w.begin(), w.end());
    out.row_ptr_.push_back(out.pixels_.size());
  }
  return out;
}

ProjectionMatrix build_projection_matrix(const ScannerConfig& cfg, const Grid& grid, const EventList& events) {
  grid.validate();
  const ChunkPlan plan = plan_chunks(events.size(), 256, 64);
  std::vector<ProjectionMatrix> parts(plan.count, ProjectionMatrix(grid));
  parallel_for_chunks(plan, [&](std::size_t c, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Event& e = events[i];
      validate_event(cfg, e, i);
      try {
        parts[c].append_row(joseph_row(cfg, grid, make_lor(cfg, e.c1, e.c2), e.tof));
      } catch (const std::exception& ex) {
        throw std::runtime_error("event " + std::to_string(i) + ": " + ex.what());
      }
    }
  });
  ProjectionMatrix out(grid);
  for (const auto& part : parts)
    for (std::size_t i = 0; i < part.rows(); ++i) out.append_row(part.row(i));
  return out;
}

std::vector<double> forward_project(const ProjectionMatrix& p, const Image2D& f) {
  require_same_grid(p.grid(), f.grid(), "forward_project");
  std::vector<double> h(p.rows(), 0.0);
  const auto values = f.values();
  parallel_for_chunks(plan_chunks(p.rows(), 512, 256), [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto px = p.row_pixels(i);
      const auto w = p.row_weights(i);
      double acc = 0.0;
      for (std::size_t k = 0; k < px.size(); ++k) acc += w[k] * values[px[k]];
      h[i] = acc;
    }
  });
  return h;
}

Image2D back_project(const ProjectionMatrix& p, std::span<const double> h) {
  if (h.size() != p.rows())
    throw std::invalid_argument("back_project: got " + std::to_string(h.size()) + " values for " +
                                std::to_string(p.rows()) + " events");
  Image2D out(p.grid());
  const ChunkPlan plan = plan_chunks(p.rows(), 256, 64);
  if (plan.count == 0) return out;
  std::vector<std::vector<double>> partial(plan.count);
  parallel_for_chunks(plan, [&](std::size_t c, std::size_t begin, std::size_t end) {
    auto& acc = partial[c];
    acc.assign(out.size(), 0.0);
    for (std::size_t i = begin; i < end; ++i) {
      const double hi = h[i];
      if (hi == 0.0) continue;
      const auto px = p.row_pixels(i);
      const auto w = p.row_weights(i);
      for (std::size_t k = 0; k < px.size(); ++k) acc[px[k]] += w[k] * hi;
    }
  });
  auto values = out.values();
  for (const auto& acc : partial)
    for (std::size_t j = 0; j < values.size(); ++j) values[j] += acc[j];
  return out;
}

std::uint64_t estimate_memory(const SinogramDims& d) {
  return d.n_rad * d.n_view * d.n_tof * d.width * d.height * sizeof(float);
}

std::uint64_t estimate_memory(const ListModeDims& d) { return d.n_events * d.width * d.height * sizeof(float); }

}  // namespace lmpet
