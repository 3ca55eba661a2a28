#include "lmpet/phantom_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "lmpet/io.hpp"
#include "lmpet/parallel.hpp"
#include "lmpet/projector.hpp"

namespace lmpet {

bool Ellipse::contains(Point2 p) const {
  const double dx = p.x - center.x;
  const double dy = p.y - center.y;
  const double c = std::cos(angle_rad);
  const double s = std::sin(angle_rad);
  const double u = (c * dx + s * dy) / semi_x_mm;
  const double v = (-s * dx + c * dy) / semi_y_mm;
  return u * u + v * v <= 1.0;
}

bool HotDisk::contains(Point2 p) const {
  const double dx = p.x - center.x;
  const double dy = p.y - center.y;
  return dx * dx + dy * dy <= radius_mm * radius_mm;
}

void PhantomSpec::validate() const {
  for (const auto& e : ellipses) {
    if (!(e.semi_x_mm > 0.0) || !(e.semi_y_mm > 0.0)) throw std::invalid_argument("ellipse semi-axes must be > 0");
    if (!(e.activity >= 0.0)) throw std::invalid_argument("ellipse activity must be >= 0");
  }
  for (const auto& d : disks) {
    if (d.radius_mm < kMinLesionRadiusMm || d.radius_mm > kMaxLesionRadiusMm)
      throw std::invalid_argument("hot disk radius must lie in [2, 4] mm");
    if (!(d.multiplier >= 0.0)) throw std::invalid_argument("hot disk multiplier must be >= 0");
    const bool inside = std::any_of(ellipses.begin(), ellipses.end(), [&](const Ellipse& e) { return e.contains(d.center); });
    if (!inside) throw std::invalid_argument("hot disk centre lies outside every ellipse");
  }
}

PhantomSpec random_phantom_spec(const Grid& grid, std::uint64_t seed, int n_lesions) {
  grid.validate();
  std::mt19937_64 rng(seed);
  auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double ex = 0.5 * grid.width * grid.pixel_size_mm;
  const double ey = 0.5 * grid.height * grid.pixel_size_mm;

  PhantomSpec spec;
  spec.seed = seed;
  Ellipse body;
  body.center = {uni(-0.05, 0.05) * ex, uni(-0.05, 0.05) * ey};
  body.semi_x_mm = uni(0.70, 0.85) * ex;
  body.semi_y_mm = uni(0.55, 0.75) * ey;
  body.angle_rad = uni(-0.3, 0.3);
  body.activity = 1.0;
  spec.ellipses.push_back(body);

  const int n_organs = std::uniform_int_distribution<int>(2, 3)(rng);
  for (int k = 0; k < n_organs; ++k) {
    Ellipse organ;
    organ.center = {body.center.x + uni(-0.45, 0.45) * body.semi_x_mm, body.center.y + uni(-0.45, 0.45) * body.semi_y_mm};
    organ.semi_x_mm = uni(0.15, 0.35) * ex;
    organ.semi_y_mm = uni(0.15, 0.35) * ey;
    organ.angle_rad = uni(0.0, 3.14159);
    organ.activity = uni(0.3, 1.5);
    spec.ellipses.push_back(organ);
  }

  if (n_lesions < 0) n_lesions = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int k = 0; k < n_lesions; ++k) {
    HotDisk disk;
    disk.radius_mm = uni(kMinLesionRadiusMm, kMaxLesionRadiusMm);
    disk.multiplier = uni(2.0, 4.0);
    Ellipse inner = body;
    inner.semi_x_mm = std::max(0.5 * body.semi_x_mm, body.semi_x_mm - disk.radius_mm);
    inner.semi_y_mm = std::max(0.5 * body.semi_y_mm, body.semi_y_mm - disk.radius_mm);
    do {
      disk.center = {body.center.x + uni(-1.0, 1.0) * inner.semi_x_mm, body.center.y + uni(-1.0, 1.0) * inner.semi_y_mm};
    } while (!inner.contains(disk.center));
    spec.disks.push_back(disk);
  }
  return spec;
}

Image2D generate_phantom(const PhantomSpec& spec, const Grid& grid) {
  spec.validate();
  Image2D img(grid);
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      const Point2 p{grid.center_x(x), grid.center_y(y)};
      double v = 0.0;
      for (const auto& e : spec.ellipses)
        if (e.contains(p)) v += e.activity;
      for (const auto& d : spec.disks)
        if (d.contains(p)) v *= d.multiplier;
      img.at(x, y) = v;
    }
  }
  return img;
}

SinogramBinning make_sinogram_binning(const ScannerConfig& cfg) {
  cfg.validate();
  const int n = cfg.n_crystals();
  SinogramBinning b;
  b.n_tof = cfg.n_tof_bins;
  auto wrap = [n](int c) { return ((c % n) + n) % n; };
  std::vector<std::pair<int, int>> pairs;
  if (n % 2 == 0) {
    b.n_view = n / 2;
    b.n_rad = n - 1;
    for (int v = 0; v < b.n_view; ++v)
      for (int sep = 1; sep < n; ++sep) {
        const int k = sep / 2;
        if (sep % 2 == 0)
          pairs.emplace_back(wrap(v - k), wrap(v + k));
        else
          pairs.emplace_back(wrap(v - k), wrap(v + 1 + k));
      }
  } else {
    b.n_view = n;
    b.n_rad = (n - 1) / 2;
    const int inv2 = (n + 1) / 2;
    for (int s = 0; s < n; ++s) {
      const int mid = static_cast<int>((static_cast<long long>(s) * inv2) % n);
      for (int k = 1; k <= b.n_rad; ++k) pairs.emplace_back(wrap(mid - k), wrap(mid + k));
    }
  }
  b.bins.reserve(pairs.size() * static_cast<std::size_t>(b.n_tof));
  for (const auto& [a, c] : pairs)
    for (int t = 0; t < b.n_tof; ++t)
      b.bins.push_back({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(t)});
  return b;
}

double Sinogram::sum() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

Sinogram simulate_sinogram(const ScannerConfig& cfg, const Image2D& f, const SinogramBinning& binning) {
  for (double v : f.values())
    if (v < 0.0) throw std::invalid_argument("simulate_sinogram: activity must be nonnegative");
  Sinogram s;
  s.binning = binning;
  s.values.assign(binning.size(), 0.0);
  s.coverage.assign(binning.size(), 0);
  const auto values = f.values();
  parallel_for_chunks(plan_chunks(binning.size(), 1024, 256), [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Event& e = binning.bins[i];
      const SparseRow row = joseph_row(cfg, f.grid(), make_lor(cfg, e.c1, e.c2), e.tof);
      double acc = 0.0;
      for (const auto& entry : row) acc += entry.weight * values[entry.pixel];
      s.values[i] = acc;
      s.coverage[i] = row.empty() ? 0 : 1;
    }
  });
  return s;
}

Sinogram scale_and_noise(const Sinogram& s, double total_counts, double background_fraction, std::uint64_t seed) {
  if (!(total_counts >= 0.0)) throw std::invalid_argument("total_counts must be >= 0");
  if (!(background_fraction >= 0.0 && background_fraction < 1.0))
    throw std::invalid_argument("background_fraction must lie in [0, 1)");
  Sinogram out = s;
  std::fill(out.values.begin(), out.values.end(), 0.0);
  if (total_counts == 0.0) return out;
  const double total = s.sum();
  if (!(total > 0.0)) throw std::invalid_argument("scale_and_noise: sinogram has zero sum");

  const double scale = total_counts * (1.0 - background_fraction) / total;
  const auto covered = static_cast<double>(std::count(s.coverage.begin(), s.coverage.end(), std::uint8_t{1}));
  const double background = covered > 0.0 ? total_counts * background_fraction / covered : 0.0;

  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const double mean = s.values[i] * scale + (s.coverage[i] ? background : 0.0);
    if (mean > 0.0) out.values[i] = static_cast<double>(std::poisson_distribution<long long>(mean)(rng));
  }
  return out;
}

EventList sinogram_to_listmode(const Sinogram& s) {
  EventList events;
  std::size_t total = 0;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const double v = s.values[i];
    if (!(v >= 0.0) || std::floor(v) != v)
      throw std::invalid_argument("sinogram bin " + std::to_string(i) + " is not a nonnegative integer");
    total += static_cast<std::size_t>(v);
  }
  events.reserve(total);
  for (std::size_t i = 0; i < s.values.size(); ++i)
    events.insert(events.end(), static_cast<std::size_t>(s.values[i]), s.binning.bins[i]);
  return events;
}

DatasetSplit proportional_split(std::size_t n) {
  const std::size_t n_eval = n * 40 / 480;
  DatasetSplit split;
  const std::size_t n_train = n - 2 * n_eval;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train)
      split.train.push_back(i);
    else if (i < n_train + n_eval)
      split.val.push_back(i);
    else
      split.test.push_back(i);
  }
  return split;
}

namespace {

DatasetSplit make_split(const DatasetOptions& opts) {
  if (!opts.n_val && !opts.n_test) return proportional_split(opts.n_phantoms);
  const DatasetSplit base = proportional_split(opts.n_phantoms);
  const std::size_t n_val = opts.n_val.value_or(base.val.size());
  const std::size_t n_test = opts.n_test.value_or(base.test.size());
  if (n_val + n_test >= opts.n_phantoms) throw std::invalid_argument("split leaves no training pairs");
  DatasetSplit split;
  const std::size_t n_train = opts.n_phantoms - n_val - n_test;
  for (std::size_t i = 0; i < opts.n_phantoms; ++i) {
    if (i < n_train)
      split.train.push_back(i);
    else if (i < n_train + n_val)
      split.val.push_back(i);
    else
      split.test.push_back(i);
  }
  return split;
}

}  // namespace

DatasetPair simulate_pair(const DatasetOptions& opts, const SinogramBinning& binning, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  const std::uint64_t phantom_seed = rng();
  const std::uint64_t noise_seed = rng();

  const Image2D phantom = generate_phantom(random_phantom_spec(opts.grid, phantom_seed), opts.grid);
  const Sinogram clean = simulate_sinogram(opts.scanner, phantom, binning);
  const Sinogram noisy = scale_and_noise(clean, opts.counts, opts.background_fraction, noise_seed);

  DatasetPair pair;
  pair.events = sinogram_to_listmode(noisy);
  const double scale = opts.counts * (1.0 - opts.background_fraction) / clean.sum();
  pair.activity = phantom;
  for (auto& v : pair.activity.values()) v *= scale;
  return pair;
}

Dataset make_dataset(const DatasetOptions& opts) {
  opts.scanner.validate();
  opts.grid.validate();
  if (opts.n_phantoms < 3) throw std::invalid_argument("a dataset needs at least 3 phantoms");
  Dataset ds;
  ds.options = opts;
  ds.split = make_split(opts);
  ds.pairs.resize(opts.n_phantoms);
  const SinogramBinning binning = make_sinogram_binning(opts.scanner);
  parallel_for_chunks(plan_chunks(opts.n_phantoms, 1, opts.n_phantoms), [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) ds.pairs[i] = simulate_pair(opts, binning, i);
  });
  return ds;
}

namespace {

std::string pair_stem(std::size_t i) {
  std::ostringstream s;
  s.width(5);
  s.fill('0');
  s << i;
  return s.str();
}

void write_indices(std::ostream& out, const std::vector<std::size_t>& idx) {
  for (std::size_t k = 0; k < idx.size(); ++k) out << (k ? " " : "") << idx[k];
  out << '\n';
}

std::vector<std::size_t> read_indices(const std::string& line) {
  std::vector<std::size_t> out;
  std::istringstream in(line);
  std::size_t v = 0;
  while (in >> v) out.push_back(v);
  return out;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "pairs", ec);
  if (ec) throw std::runtime_error("cannot create " + (dir / "pairs").string() + ": " + ec.message());
  for (std::size_t i = 0; i < dataset.pairs.size(); ++i) {
    save_image(dataset.pairs[i].activity, dir / "pairs" / (pair_stem(i) + ".img2"));
    save_listmode(dataset.pairs[i].events, dir / "pairs" / (pair_stem(i) + ".lmev"));
  }
  {
    std::ofstream out(dir / "split.txt");
    if (!out) throw std::runtime_error("cannot write " + (dir / "split.txt").string());
    write_indices(out, dataset.split.train);
    write_indices(out, dataset.split.val);
    write_indices(out, dataset.split.test);
  }
  save_scanner_config(dataset.options.scanner, dir / "scanner.cfg");
  std::ofstream meta(dir / "meta.txt");
  if (!meta) throw std::runtime_error("cannot write " + (dir / "meta.txt").string());
  const auto& o = dataset.options;
  meta.precision(17);
  meta << "seed = " << o.seed << '\n'
       << "counts = " << o.counts << '\n'
       << "background_fraction = " << o.background_fraction << '\n'
       << "scanner = " << o.scanner_path << '\n'
       << "grid = " << o.grid.width << 'x' << o.grid.height << '\n'
       << "pixel_size_mm = " << o.grid.pixel_size_mm << '\n'
       << "n_phantoms = " << o.n_phantoms << '\n'
       << "activity_units = counts\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "meta.txt");
  if (!meta_in) throw std::runtime_error("cannot open " + (dir / "meta.txt").string());
  std::map<std::string, std::string> meta;
  for (std::string line; std::getline(meta_in, line);) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) meta[line.substr(0, eq)] = line.substr(eq + 3);
  }
  auto need = [&](const std::string& key) -> const std::string& {
    const auto it = meta.find(key);
    if (it == meta.end()) throw std::runtime_error((dir / "meta.txt").string() + ": missing key '" + key + "'");
    return it->second;
  };

  Dataset ds;
  auto& o = ds.options;
  o.scanner = load_scanner_config(dir / "scanner.cfg");
  o.scanner_path = meta.count("scanner") ? meta["scanner"] : std::string{};
  o.seed = std::stoull(need("seed"));
  o.counts = std::stod(need("counts"));
  o.background_fraction = std::stod(need("background_fraction"));
  const std::string& g = need("grid");
  const auto x = g.find('x');
  if (x == std::string::npos) throw std::runtime_error("bad grid entry '" + g + "'");
  o.grid.width = std::stoi(g.substr(0, x));
  o.grid.height = std::stoi(g.substr(x + 1));
  o.grid.pixel_size_mm = std::stod(need("pixel_size_mm"));
  o.n_phantoms = std::stoull(need("n_phantoms"));

  std::ifstream split_in(dir / "split.txt");
  if (!split_in) throw std::runtime_error("cannot open " + (dir / "split.txt").string());
  std::string line;
  std::getline(split_in, line);
  ds.split.train = read_indices(line);
  std::getline(split_in, line);
  ds.split.val = read_indices(line);
  std::getline(split_in, line);
  ds.split.test = read_indices(line);

  ds.pairs.resize(o.n_phantoms);
  for (std::size_t i = 0; i < o.n_phantoms; ++i) {
    ds.pairs[i].activity = load_image(dir / "pairs" / (pair_stem(i) + ".img2"));
    ds.pairs[i].events = load_listmode(dir / "pairs" / (pair_stem(i) + ".lmev"));
    validate_events(o.scanner, ds.pairs[i].events);
  }
  return ds;
}

}  // namespace lmpet
