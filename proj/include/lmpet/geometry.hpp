#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lmpet {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// 2D cylindrical scanner: a single ring of point crystals plus TOF binning.
///
/// Crystals sit at arc centres, crystal c at angle 2*pi*(c + 0.5)/N_c. The
/// ring radius defaults to the value at which the crystals tile the
/// circumference (N_c * pitch = 2*pi*R) and may be overridden.
struct ScannerConfig {
  int n_modules = 8;
  int crystals_per_module = 8;
  double crystal_pitch_mm = 4.0;
  std::optional<double> ring_radius_mm;
  int n_tof_bins = 9;
  double tof_bin_length_mm = 15.0;
  double tof_resolution_ps = 400.0;

  [[nodiscard]] int n_crystals() const { return n_modules * crystals_per_module; }
  [[nodiscard]] double radius() const;
  [[nodiscard]] int center_tof_bin() const { return (n_tof_bins - 1) / 2; }

  /// Throws std::invalid_argument on any violated invariant.
  void validate() const;

  /// 28 modules x 16 crystals, 17 TOF bins of 15 mm, 400 ps.
  static ScannerConfig full();
  /// 8 x 8 crystals, 9 TOF bins; the default for tests and desk-scale runs.
  static ScannerConfig desk();

  bool operator==(const ScannerConfig&) const = default;
};

/// Parses `key = value` lines. Unknown keys and malformed lines throw.
ScannerConfig parse_scanner_config(const std::string& text);
ScannerConfig load_scanner_config(const std::filesystem::path& path);
std::string format_scanner_config(const ScannerConfig& cfg);
void save_scanner_config(const ScannerConfig& cfg, const std::filesystem::path& path);

/// Stable FNV-1a hash of the configuration fields (used as a cache key).
std::uint64_t config_hash(const ScannerConfig& cfg);

struct Lor {
  int c1 = 0;
  int c2 = 0;
  Point2 p1;
  Point2 p2;

  [[nodiscard]] double length() const;
  [[nodiscard]] Point2 midpoint() const;
  /// Unit vector from p1 towards p2.
  [[nodiscard]] Point2 direction() const;
};

/// One list-mode coincidence: crystal pair plus TOF bin. TOF offsets are
/// measured from the LOR midpoint towards c2.
struct Event {
  std::uint32_t c1 = 0;
  std::uint32_t c2 = 0;
  std::uint32_t tof = 0;

  bool operator==(const Event&) const = default;
};

using EventList = std::vector<Event>;

Point2 crystal_position(const ScannerConfig& cfg, int crystal);
Lor make_lor(const ScannerConfig& cfg, int c1, int c2);

/// Signed distance (mm) of the centre of `tof` from the LOR midpoint.
double tof_bin_offset(const ScannerConfig& cfg, int tof);
Point2 tof_bin_center(const ScannerConfig& cfg, const Lor& lor, int tof);

/// All unordered pairs (c1 < c2) crossed with all TOF bins, in
/// lexicographic (c1, c2, tof) order.
std::vector<Event> all_lor_tof_pairs(const ScannerConfig& cfg);

/// Throws std::out_of_range naming `index` when the event does not fit `cfg`.
void validate_event(const ScannerConfig& cfg, const Event& e, std::size_t index = 0);
void validate_events(const ScannerConfig& cfg, const EventList& events);

}  // namespace lmpet
