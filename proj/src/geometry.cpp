#include "lmpet/geometry.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace lmpet {

double ScannerConfig::radius() const {
  if (ring_radius_mm) return *ring_radius_mm;
  return n_crystals() * crystal_pitch_mm / (2.0 * std::numbers::pi);
}

void ScannerConfig::validate() const {
  if (n_modules < 1) throw std::invalid_argument("n_modules must be >= 1");
  if (crystals_per_module < 1) throw std::invalid_argument("crystals_per_module must be >= 1");
  if (n_crystals() < 8) throw std::invalid_argument("scanner needs at least 8 crystals");
  if (!(crystal_pitch_mm > 0.0)) throw std::invalid_argument("crystal_pitch must be > 0");
  if (ring_radius_mm && !(*ring_radius_mm > 0.0)) throw std::invalid_argument("ring_radius must be > 0");
  if (n_tof_bins < 1 || n_tof_bins % 2 == 0) throw std::invalid_argument("n_tof_bins must be odd");
  if (!(tof_bin_length_mm > 0.0)) throw std::invalid_argument("tof_bin_length must be > 0");
  if (!(tof_resolution_ps > 0.0)) throw std::invalid_argument("tof_resolution must be > 0");
}

ScannerConfig ScannerConfig::full() {
  ScannerConfig cfg;
  cfg.n_modules = 28;
  cfg.crystals_per_module = 16;
  cfg.crystal_pitch_mm = 4.0;
  cfg.n_tof_bins = 17;
  cfg.tof_bin_length_mm = 15.0;
  cfg.tof_resolution_ps = 400.0;
  return cfg;
}

ScannerConfig ScannerConfig::desk() { return ScannerConfig{}; }

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size()) throw std::invalid_argument("bad integer for '" + key + "': " + value);
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size()) throw std::invalid_argument("bad number for '" + key + "': " + value);
  return v;
}

}  // namespace

ScannerConfig parse_scanner_config(const std::string& text) {
  ScannerConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("scanner config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "n_modules") {
      cfg.n_modules = parse_int(key, value);
    } else if (key == "crystals_per_module") {
      cfg.crystals_per_module = parse_int(key, value);
    } else if (key == "crystal_pitch") {
      cfg.crystal_pitch_mm = parse_double(key, value);
    } else if (key == "ring_radius") {
      cfg.ring_radius_mm = parse_double(key, value);
    } else if (key == "n_tof_bins") {
      cfg.n_tof_bins = parse_int(key, value);
    } else if (key == "tof_bin_length") {
      cfg.tof_bin_length_mm = parse_double(key, value);
    } else if (key == "tof_resolution") {
      cfg.tof_resolution_ps = parse_double(key, value);
    } else {
      throw std::invalid_argument("scanner config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

ScannerConfig load_scanner_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scanner config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_scanner_config(buf.str());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

std::string format_scanner_config(const ScannerConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "n_modules = " << cfg.n_modules << '\n'
      << "crystals_per_module = " << cfg.crystals_per_module << '\n'
      << "crystal_pitch = " << cfg.crystal_pitch_mm << '\n';
  if (cfg.ring_radius_mm) out << "ring_radius = " << *cfg.ring_radius_mm << '\n';
  out << "n_tof_bins = " << cfg.n_tof_bins << '\n'
      << "tof_bin_length = " << cfg.tof_bin_length_mm << '\n'
      << "tof_resolution = " << cfg.tof_resolution_ps << '\n';
  return out.str();
}

void save_scanner_config(const ScannerConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scanner config " + path.string());
  out << format_scanner_config(cfg);
}

std::uint64_t config_hash(const ScannerConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  const double radius = cfg.radius();
  mix(&cfg.n_modules, sizeof cfg.n_modules);
  mix(&cfg.crystals_per_module, sizeof cfg.crystals_per_module);
  mix(&cfg.crystal_pitch_mm, sizeof cfg.crystal_pitch_mm);
  mix(&radius, sizeof radius);
  mix(&cfg.n_tof_bins, sizeof cfg.n_tof_bins);
  mix(&cfg.tof_bin_length_mm, sizeof cfg.tof_bin_length_mm);
  mix(&cfg.tof_resolution_ps, sizeof cfg.tof_resolution_ps);
  return h;
}

double Lor::length() const { return std::hypot(p2.x - p1.x, p2.y - p1.y); }

Point2 Lor::midpoint() const { return {0.5 * (p1.x + p2.x), 0.5 * (p1.y + p2.y)}; }

Point2 Lor::direction() const {
  const double len = length();
  return {(p2.x - p1.x) / len, (p2.y - p1.y) / len};
}

Point2 crystal_position(const ScannerConfig& cfg, int crystal) {
  const int n = cfg.n_crystals();
  if (crystal < 0 || crystal >= n)
    throw std::out_of_range("crystal index " + std::to_string(crystal) + " outside [0, " + std::to_string(n) + ")");
  const double phi = 2.0 * std::numbers::pi * (crystal + 0.5) / n;
  const double r = cfg.radius();
  return {r * std::cos(phi), r * std::sin(phi)};
}

Lor make_lor(const ScannerConfig& cfg, int c1, int c2) {
  if (c1 == c2) throw std::invalid_argument("LOR needs two distinct crystals, got " + std::to_string(c1) + " twice");
  return Lor{c1, c2, crystal_position(cfg, c1), crystal_position(cfg, c2)};
}

double tof_bin_offset(const ScannerConfig& cfg, int tof) {
  if (tof < 0 || tof >= cfg.n_tof_bins)
    throw std::out_of_range("TOF bin " + std::to_string(tof) + " outside [0, " + std::to_string(cfg.n_tof_bins) + ")");
  return (tof - cfg.center_tof_bin()) * cfg.tof_bin_length_mm;
}

Point2 tof_bin_center(const ScannerConfig& cfg, const Lor& lor, int tof) {
  const double offset = tof_bin_offset(cfg, tof);
  const Point2 mid = lor.midpoint();
  const Point2 u = lor.direction();
  return {mid.x + offset * u.x, mid.y + offset * u.y};
}

std::vector<Event> all_lor_tof_pairs(const ScannerConfig& cfg) {
  const auto n = static_cast<std::uint32_t>(cfg.n_crystals());
  const auto nt = static_cast<std::uint32_t>(cfg.n_tof_bins);
  std::vector<Event> out;
  out.reserve(static_cast<std::size_t>(n) * (n - 1) / 2 * nt);
  for (std::uint32_t a = 0; a < n; ++a)
    for (std::uint32_t b = a + 1; b < n; ++b)
      for (std::uint32_t t = 0; t < nt; ++t) out.push_back({a, b, t});
  return out;
}

void validate_event(const ScannerConfig& cfg, const Event& e, std::size_t index) {
  const auto n = static_cast<std::uint32_t>(cfg.n_crystals());
  if (e.c1 >= n || e.c2 >= n || e.c1 == e.c2 || e.tof >= static_cast<std::uint32_t>(cfg.n_tof_bins)) {
    std::ostringstream msg;
    msg << "event " << index << " (" << e.c1 << ", " << e.c2 << ", tof " << e.tof << ") invalid for scanner with "
        << n << " crystals and " << cfg.n_tof_bins << " TOF bins";
    throw std::out_of_range(msg.str());
  }
}

void validate_events(const ScannerConfig& cfg, const EventList& events) {
  for (std::size_t i = 0; i < events.size(); ++i) validate_event(cfg, events[i], i);
}

}  // namespace lmpet
