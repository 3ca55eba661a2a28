#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lmpet/geometry.hpp"
#include "lmpet/image.hpp"

namespace lmpet {

struct Ellipse {
  Point2 center;
  double semi_x_mm = 1.0;
  double semi_y_mm = 1.0;
  double angle_rad = 0.0;
  double activity = 1.0;

  [[nodiscard]] bool contains(Point2 p) const;
};

struct HotDisk {
  Point2 center;
  double radius_mm = 3.0;
  double multiplier = 2.0;

  [[nodiscard]] bool contains(Point2 p) const;
};

inline constexpr double kMinLesionRadiusMm = 2.0;
inline constexpr double kMaxLesionRadiusMm = 4.0;

struct PhantomSpec {
  std::vector<Ellipse> ellipses;
  std::vector<HotDisk> disks;
  std::uint64_t seed = 0;

  /// Radii in [2, 4] mm, nonnegative activities, every disk centre inside
  /// some ellipse.
  void validate() const;
};

/// Body ellipse with a few organ ellipses and `n_lesions` hot disks, all
/// drawn from `seed`. n_lesions < 0 draws 1..3 lesions.
PhantomSpec random_phantom_spec(const Grid& grid, std::uint64_t seed, int n_lesions = -1);

/// Sum of activities of the ellipses containing each pixel centre, times the
/// multiplier of every hot disk containing it.
Image2D generate_phantom(const PhantomSpec& spec, const Grid& grid);

/// Bin layout for a single ring of N crystals. For even N there are N/2 views
/// and N-1 radial bins, for odd N there are N views and (N-1)/2 radial bins;
/// either way every unordered crystal pair appears exactly once. Bin
/// (view, rad, tof) has flat index (view * n_rad + rad) * n_tof + tof.
struct SinogramBinning {
  int n_rad = 0;
  int n_view = 0;
  int n_tof = 0;
  std::vector<Event> bins;

  [[nodiscard]] std::size_t size() const { return bins.size(); }
  [[nodiscard]] std::size_t index(int view, int rad, int tof) const {
    return (static_cast<std::size_t>(view) * n_rad + rad) * n_tof + tof;
  }
};

SinogramBinning make_sinogram_binning(const ScannerConfig& cfg);

struct Sinogram {
  SinogramBinning binning;
  std::vector<double> values;
  /// 1 where the bin's projection row intersects the image grid.
  std::vector<std::uint8_t> coverage;

  [[nodiscard]] double sum() const;
};

/// Noise-free sinogram: each bin is its Joseph row dotted with f.
Sinogram simulate_sinogram(const ScannerConfig& cfg, const Image2D& f, const SinogramBinning& binning);

/// Scales `s` to total_counts * (1 - background_fraction), adds a uniform
/// background totalling total_counts * background_fraction over covered bins,
/// and replaces every bin by a Poisson draw of its mean.
Sinogram scale_and_noise(const Sinogram& s, double total_counts, double background_fraction, std::uint64_t seed);

/// Every bin emits its (c1, c2, tof) `count` times, in bin order. Throws on
/// a non-integer or negative bin.
EventList sinogram_to_listmode(const Sinogram& s);

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// 400:40:40 proportional split (floor for val/test, remainder to train).
DatasetSplit proportional_split(std::size_t n);

struct DatasetOptions {
  ScannerConfig scanner = ScannerConfig::desk();
  std::string scanner_path;
  Grid grid{32, 32, 1.5};
  std::size_t n_phantoms = 12;
  double counts = 1e5;
  double background_fraction = 0.15;
  std::uint64_t seed = 0;
  /// Override the proportional split sizes.
  std::optional<std::size_t> n_val;
  std::optional<std::size_t> n_test;
};

/// Activity maps are stored in count-consistent units: the phantom scaled
/// by the same factor as its sinogram, so that the expected data equal
/// P * activity + background.
struct DatasetPair {
  Image2D activity;
  EventList events;
};

struct Dataset {
  DatasetOptions options;
  std::vector<DatasetPair> pairs;
  DatasetSplit split;
};

/// Item i draws from an RNG seeded by (seed, i), so items can be simulated
/// in parallel without changing the result.
DatasetPair simulate_pair(const DatasetOptions& opts, const SinogramBinning& binning, std::size_t index);
Dataset make_dataset(const DatasetOptions& opts);

/// Layout: pairs/<idx>.img2, pairs/<idx>.lmev, split.txt, meta.txt,
/// scanner.cfg.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace lmpet
