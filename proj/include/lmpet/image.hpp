#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lmpet {

/// Pixel grid centred on the scanner axis. Pixel (x, y) has index
/// j = y * width + x and its centre at
/// ((x - (W-1)/2) * pixel_size, (y - (H-1)/2) * pixel_size).
struct Grid {
  int width = 0;
  int height = 0;
  double pixel_size_mm = 1.0;

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(width) * height; }
  [[nodiscard]] double center_x(int x) const { return (x - 0.5 * (width - 1)) * pixel_size_mm; }
  [[nodiscard]] double center_y(int y) const { return (y - 0.5 * (height - 1)) * pixel_size_mm; }
  void validate() const;

  bool operator==(const Grid&) const = default;
};

class Image2D {
 public:
  Image2D() = default;
  explicit Image2D(Grid grid, double fill = 0.0);
  Image2D(Grid grid, std::vector<double> values);

  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] int width() const { return grid_.width; }
  [[nodiscard]] int height() const { return grid_.height; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }

  double& operator[](std::size_t j) { return values_[j]; }
  double operator[](std::size_t j) const { return values_[j]; }
  double& at(int x, int y) { return values_[static_cast<std::size_t>(y) * grid_.width + x]; }
  [[nodiscard]] double at(int x, int y) const { return values_[static_cast<std::size_t>(y) * grid_.width + x]; }

  [[nodiscard]] std::span<double> values() { return values_; }
  [[nodiscard]] std::span<const double> values() const { return values_; }
  std::vector<double>& data() { return values_; }
  [[nodiscard]] const std::vector<double>& data() const { return values_; }

  [[nodiscard]] double max() const;
  [[nodiscard]] double min() const;
  [[nodiscard]] double sum() const;

  bool operator==(const Image2D&) const = default;

 private:
  Grid grid_;
  std::vector<double> values_;
};

/// Throws std::invalid_argument when the grids differ.
void require_same_grid(const Grid& a, const Grid& b, const char* what);

}  // namespace lmpet
