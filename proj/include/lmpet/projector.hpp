#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lmpet/geometry.hpp"
#include "lmpet/image.hpp"

namespace lmpet {

inline constexpr double kSpeedOfLightMmPerPs = 0.2998;
inline constexpr double kFwhmToSigma = 2.3548;
inline constexpr double kTofTruncationSigmas = 3.0;

/// Spatial standard deviation of the TOF kernel: (c * dt / 2) / 2.3548.
double tof_sigma_mm(const ScannerConfig& cfg);

/// Truncated Gaussian TOF weight for a point at signed offset `s_mid_offset`
/// (mm, from the LOR midpoint towards c2) and TOF bin `tof`. Exactly zero
/// beyond 3 sigma from the bin centre.
double tof_weight(const ScannerConfig& cfg, double s_mid_offset, int tof);

struct SparseEntry {
  std::uint32_t pixel = 0;
  double weight = 0.0;

  bool operator==(const SparseEntry&) const = default;
};

/// Sorted by pixel index, no duplicates, all weights > 0.
using SparseRow = std::vector<SparseEntry>;

/// Joseph ray-driven row for one LOR/TOF bin. Steps along the axis more
/// aligned with the LOR, one step per pixel line, and splits each step's
/// TOF-weighted length between the two pixels straddling the crossing point.
/// Returns an empty row when the LOR misses the grid.
SparseRow joseph_row(const ScannerConfig& cfg, const Grid& grid, const Lor& lor, int tof);

/// Per-event sparse system matrix in compressed-row form.
class ProjectionMatrix {
 public:
  ProjectionMatrix() = default;
  explicit ProjectionMatrix(Grid grid) : grid_(grid), row_ptr_{0} {}

  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] std::size_t rows() const { return row_ptr_.empty() ? 0 : row_ptr_.size() - 1; }
  [[nodiscard]] std::size_t nnz() const { return pixels_.size(); }

  [[nodiscard]] std::span<const std::uint32_t> row_pixels(std::size_t i) const {
    return {pixels_.data() + row_ptr_[i], row_ptr_[i + 1] - row_ptr_[i]};
  }
  [[nodiscard]] std::span<const double> row_weights(std::size_t i) const {
    return {weights_.data() + row_ptr_[i], row_ptr_[i + 1] - row_ptr_[i]};
  }
  [[nodiscard]] SparseRow row(std::size_t i) const;

  void append_row(const SparseRow& row);

  /// New matrix made of the given rows, in the given order.
  [[nodiscard]] ProjectionMatrix select_rows(std::span<const std::size_t> indices) const;

  bool operator==(const ProjectionMatrix&) const = default;

 private:
  Grid grid_;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::uint32_t> pixels_;
  std::vector<double> weights_;
};

/// Row i is joseph_row of event i; rows are built in parallel and the
/// result does not depend on the worker count.
ProjectionMatrix build_projection_matrix(const ScannerConfig& cfg, const Grid& grid, const EventList& events);

/// h(i) = sum_j P_ij f_j.
std::vector<double> forward_project(const ProjectionMatrix& p, const Image2D& f);

/// f_j = sum_i P_ij h(i), the exact adjoint of forward_project.
Image2D back_project(const ProjectionMatrix& p, std::span<const double> h);

struct SinogramDims {
  std::uint64_t n_rad = 0;
  std::uint64_t n_view = 0;
  std::uint64_t n_tof = 0;
  std::uint64_t width = 0;
  std::uint64_t height = 0;
};

struct ListModeDims {
  std::uint64_t n_events = 0;
  std::uint64_t width = 0;
  std::uint64_t height = 0;
};

/// Dense float32 operator footprint in bytes.
std::uint64_t estimate_memory(const SinogramDims& dims);
std::uint64_t estimate_memory(const ListModeDims& dims);

inline double to_gib(std::uint64_t bytes) { return static_cast<double>(bytes) / (1024.0 * 1024.0 * 1024.0); }

}  // namespace lmpet
