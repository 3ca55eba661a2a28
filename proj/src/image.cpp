#include "lmpet/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace lmpet {

void Grid::validate() const {
  if (width < 1 || height < 1) throw std::invalid_argument("grid dimensions must be >= 1");
  if (!(pixel_size_mm > 0.0)) throw std::invalid_argument("pixel size must be > 0");
}

Image2D::Image2D(Grid grid, double fill) : grid_(grid), values_(grid.size(), fill) { grid_.validate(); }

Image2D::Image2D(Grid grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
  grid_.validate();
  if (values_.size() != grid_.size())
    throw std::invalid_argument("image has " + std::to_string(values_.size()) + " values, grid needs " +
                                std::to_string(grid_.size()));
  for (double v : values_)
    if (!std::isfinite(v)) throw std::invalid_argument("image values must be finite");
}

double Image2D::max() const { return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end()); }

double Image2D::min() const { return values_.empty() ? 0.0 : *std::min_element(values_.begin(), values_.end()); }

double Image2D::sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

void require_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (!(a == b))
    throw std::invalid_argument(std::string(what) + ": grid mismatch (" + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height) + ")");
}

}  // namespace lmpet
