#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>
#include <utility>

#include "lmpet/phantom_sim.hpp"
#include "lmpet/projector.hpp"
#include "support.hpp"

using namespace lmpet;
using testing::WorkerScope;

namespace {

const Grid kDesk{32, 32, 1.5};

std::set<std::pair<int, int>> unordered_pairs(const SinogramBinning& b) {
  std::set<std::pair<int, int>> out;
  for (std::size_t i = 0; i < b.size(); i += b.n_tof) {
    const Event& e = b.bins[i];
    out.insert({std::min(e.c1, e.c2), std::max(e.c1, e.c2)});
  }
  return out;
}

}  // namespace

TEST_CASE("rotated ellipse membership") {
  Ellipse e;
  e.center = {1.0, 2.0};
  e.semi_x_mm = 4.0;
  e.semi_y_mm = 1.0;
  e.angle_rad = std::numbers::pi / 2;  // long axis now along y
  CHECK(e.contains({1.0, 5.9}));
  CHECK_FALSE(e.contains({4.0, 2.0}));
  CHECK(e.contains({1.9, 2.0}));
  CHECK_FALSE(e.contains({2.1, 2.0}));
}

TEST_CASE("phantom sums ellipses and multiplies hot disks") {
  const Grid g{8, 8, 1.0};
  PhantomSpec spec;
  Ellipse body;
  body.semi_x_mm = body.semi_y_mm = 3.0;
  body.activity = 1.0;
  Ellipse organ;
  organ.center = {1.5, 0.5};
  organ.semi_x_mm = organ.semi_y_mm = 1.1;
  organ.activity = 0.5;
  spec.ellipses = {body, organ};
  spec.disks.push_back(HotDisk{{-1.5, -1.5}, 2.0, 3.0});
  const Image2D f = generate_phantom(spec, g);

  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const double px = g.center_x(x), py = g.center_y(y);
      double v = 0.0;
      if (px * px + py * py <= 9.0) v += 1.0;
      if ((px - 1.5) * (px - 1.5) + (py - 0.5) * (py - 0.5) <= 1.21) v += 0.5;
      if ((px + 1.5) * (px + 1.5) + (py + 1.5) * (py + 1.5) <= 4.0) v *= 3.0;
      CHECK(f.at(x, y) == v);
    }
  CHECK(f.at(3, 4) == 1.0);   // (-0.5, 0.5)
  CHECK(f.at(5, 4) == 1.5);   // (1.5, 0.5) inside the organ
  CHECK(f.at(2, 2) == 3.0);   // (-1.5, -1.5) lesion centre
  CHECK(f.at(0, 0) == 0.0);
}

TEST_CASE("phantom spec validation") {
  PhantomSpec spec;
  Ellipse body;
  body.semi_x_mm = body.semi_y_mm = 10.0;
  spec.ellipses = {body};
  spec.disks = {HotDisk{{0.0, 0.0}, 3.0, 2.0}};
  CHECK_NOTHROW(spec.validate());
  spec.disks[0].radius_mm = 1.9;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.disks[0].radius_mm = 4.1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.disks[0] = HotDisk{{20.0, 0.0}, 3.0, 2.0};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.disks.clear();
  spec.ellipses[0].activity = -1.0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("random phantoms are valid, seeded and bounded") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const PhantomSpec spec = random_phantom_spec(kDesk, seed);
    CHECK_NOTHROW(spec.validate());
    CHECK(spec.disks.size() >= 1);
    CHECK(spec.disks.size() <= 3);
    CHECK(spec.ellipses.size() >= 3);
    const Image2D f = generate_phantom(spec, kDesk);
    CHECK(f.min() >= 0.0);
    CHECK(f.max() > 0.0);
    // The body stays off the outermost pixel ring.
    for (int k = 0; k < kDesk.width; ++k) {
      CHECK(f.at(k, 0) == 0.0);
      CHECK(f.at(0, k) == 0.0);
    }
  }
  CHECK(random_phantom_spec(kDesk, 4, 2).disks.size() == 2);
  const Image2D a = generate_phantom(random_phantom_spec(kDesk, 7), kDesk);
  const Image2D b = generate_phantom(random_phantom_spec(kDesk, 7), kDesk);
  const Image2D c = generate_phantom(random_phantom_spec(kDesk, 8), kDesk);
  CHECK(a == b);
  CHECK_FALSE(a == c);
}

TEST_CASE("sinogram binning covers every crystal pair once") {
  for (int per_module : {8, 9}) {  // 64 and 72 crystals
    ScannerConfig c = ScannerConfig::desk();
    c.crystals_per_module = per_module;
    const SinogramBinning b = make_sinogram_binning(c);
    const int n = c.n_crystals();
    CHECK(b.n_view == n / 2);
    CHECK(b.n_rad == n - 1);
    CHECK(b.size() == static_cast<std::size_t>(n) * (n - 1) / 2 * c.n_tof_bins);
    CHECK(unordered_pairs(b).size() == static_cast<std::size_t>(n) * (n - 1) / 2);
  }
  ScannerConfig odd = ScannerConfig::desk();
  odd.n_modules = 1;
  odd.crystals_per_module = 9;
  const SinogramBinning b = make_sinogram_binning(odd);
  CHECK(b.n_view == 9);
  CHECK(b.n_rad == 4);
  CHECK(unordered_pairs(b).size() == 36);
  for (int v = 0; v < b.n_view; ++v)
    for (int r = 0; r < b.n_rad; ++r)
      for (int t = 0; t < b.n_tof; ++t) CHECK(b.bins[b.index(v, r, t)].tof == static_cast<std::uint32_t>(t));
}

TEST_CASE("a view interleaves two parallel families half a crystal step apart") {
  const ScannerConfig c = ScannerConfig::desk();
  const SinogramBinning b = make_sinogram_binning(c);
  auto dir = [&](int v, int r) {
    const Event& e = b.bins[b.index(v, r, 0)];
    return make_lor(c, e.c1, e.c2).direction();
  };
  auto cross = [](Point2 a, Point2 u) { return std::abs(a.x * u.y - a.y * u.x); };
  const double half_step = std::sin(std::numbers::pi / c.n_crystals());
  for (int v : {0, 5, 31}) {
    for (int r = 2; r < b.n_rad; ++r) CHECK(cross(dir(v, r), dir(v, r - 2)) < 1e-12);
    CHECK(cross(dir(v, 0), dir(v, 1)) == doctest::Approx(half_step).epsilon(1e-9));
  }
}

TEST_CASE("noise-free sinogram equals the projection of the phantom") {
  const ScannerConfig c = ScannerConfig::desk();
  const Image2D f = generate_phantom(random_phantom_spec(kDesk, 3), kDesk);
  const SinogramBinning b = make_sinogram_binning(c);
  const Sinogram s = simulate_sinogram(c, f, b);
  const auto h = forward_project(build_projection_matrix(c, kDesk, b.bins), f);
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(s.values[i] == doctest::Approx(h[i]).epsilon(1e-14));
  CHECK_THROWS_AS((void)simulate_sinogram(c, Image2D(kDesk, -1.0), b), std::invalid_argument);
}

TEST_CASE("sinogram follows a 90 degree rotation of the object") {
  // 64 crystals in 4 modules of 16: a quarter turn shifts every crystal by 16.
  ScannerConfig c = ScannerConfig::desk();
  c.n_modules = 4;
  c.crystals_per_module = 16;
  const Image2D f = generate_phantom(random_phantom_spec(kDesk, 11), kDesk);
  const Image2D r = testing::rotate90(f);
  const SinogramBinning b = make_sinogram_binning(c);
  const Sinogram s = simulate_sinogram(c, f, b);

  EventList shifted = b.bins;
  for (auto& e : shifted) {
    e.c1 = (e.c1 + 16) % 64;
    e.c2 = (e.c2 + 16) % 64;
  }
  const auto rotated = forward_project(build_projection_matrix(c, kDesk, shifted), r);
  const double peak = *std::max_element(s.values.begin(), s.values.end());
  int diagonal = 0;
  for (std::size_t i = 0; i < rotated.size(); ++i) {
    const Point2 u = make_lor(c, b.bins[i].c1, b.bins[i].c2).direction();
    // At exactly 45 degrees the driving axis flips with the rotation.
    if (std::abs(std::abs(u.x) - std::abs(u.y)) < 1e-9) {
      ++diagonal;
      CHECK(rotated[i] == doctest::Approx(s.values[i]).epsilon(0.05).scale(0.01 * peak));
      continue;
    }
    CHECK(std::abs(rotated[i] - s.values[i]) <= 1e-9 * peak);
  }
  CHECK(diagonal < static_cast<int>(rotated.size() / 20));
}

TEST_CASE("noise hits the requested count and keeps uncovered bins empty") {
  const ScannerConfig c = ScannerConfig::desk();
  const Image2D f = generate_phantom(random_phantom_spec(kDesk, 5), kDesk);
  const Sinogram clean = simulate_sinogram(c, f, make_sinogram_binning(c));
  std::size_t uncovered = 0;
  for (auto v : clean.coverage) uncovered += v == 0;
  REQUIRE(uncovered > 0);

  double rel_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Sinogram noisy = scale_and_noise(clean, 1e5, 0.2, seed);
    for (std::size_t i = 0; i < noisy.values.size(); ++i) {
      CHECK(noisy.values[i] == std::floor(noisy.values[i]));
      if (!clean.coverage[i]) CHECK(noisy.values[i] == 0.0);
    }
    rel_sum += std::abs(noisy.sum() / 1e5 - 1.0);
    const EventList ev = sinogram_to_listmode(noisy);
    CHECK(static_cast<double>(ev.size()) == noisy.sum());
  }
  // Poisson spread of a 1e5 total is about 0.3%.
  CHECK(rel_sum / 10 < 0.01);

  CHECK(scale_and_noise(clean, 1e5, 0.2, 3).values == scale_and_noise(clean, 1e5, 0.2, 3).values);
  CHECK(scale_and_noise(clean, 0.0, 0.2, 3).sum() == 0.0);
  CHECK_THROWS(scale_and_noise(clean, 1e5, 1.0, 3));
  CHECK_THROWS(scale_and_noise(clean, -1.0, 0.1, 3));
}

TEST_CASE("background-only noise is uniform over covered bins") {
  const ScannerConfig c = ScannerConfig::desk();
  Image2D f(kDesk);
  f.at(16, 16) = 1.0;
  const Sinogram clean = simulate_sinogram(c, f, make_sinogram_binning(c));
  std::size_t covered = 0;
  for (auto v : clean.coverage) covered += v;
  // With 99.99% background and a huge count, every covered bin is near
  // counts / covered.
  const double counts = 1e9;
  const Sinogram noisy = scale_and_noise(clean, counts, 0.9999, 1);
  const double per_bin = counts * 0.9999 / static_cast<double>(covered);
  std::size_t close = 0;
  for (std::size_t i = 0; i < noisy.values.size(); ++i)
    if (clean.coverage[i] && std::abs(noisy.values[i] - per_bin) < 5 * std::sqrt(per_bin) + counts * 1e-4) ++close;
  CHECK(close == covered);
}

TEST_CASE("list-mode expansion is ordered by bin") {
  Sinogram s;
  s.binning.n_tof = 1;
  s.binning.bins = {{0, 1, 0}, {0, 2, 0}, {1, 2, 0}};
  s.values = {2.0, 0.0, 1.0};
  s.coverage = {1, 1, 1};
  const EventList ev = sinogram_to_listmode(s);
  CHECK(ev == EventList{{0, 1, 0}, {0, 1, 0}, {1, 2, 0}});
  s.values[1] = 0.5;
  CHECK_THROWS_AS((void)sinogram_to_listmode(s), std::invalid_argument);
  s.values[1] = -1.0;
  CHECK_THROWS_AS((void)sinogram_to_listmode(s), std::invalid_argument);
}

TEST_CASE("proportional split") {
  const DatasetSplit s = proportional_split(480);
  CHECK(s.train.size() == 400);
  CHECK(s.val.size() == 40);
  CHECK(s.test.size() == 40);
  const DatasetSplit small = proportional_split(12);
  CHECK(small.train.size() == 10);
  CHECK(small.val.size() == 1);
  CHECK(small.test.size() == 1);
  CHECK(proportional_split(5).val.empty());
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 480);
}

TEST_CASE("dataset activity is in count units") {
  DatasetOptions o;
  o.n_phantoms = 3;
  o.counts = 2e4;
  o.background_fraction = 0.15;
  o.seed = 9;
  const Dataset ds = make_dataset(o);
  const SinogramBinning b = make_sinogram_binning(o.scanner);
  const ProjectionMatrix p = build_projection_matrix(o.scanner, o.grid, b.bins);
  for (const auto& pair : ds.pairs) {
    double expected = 0.0;
    for (double v : forward_project(p, pair.activity)) expected += v;
    CHECK(expected == doctest::Approx(o.counts * (1.0 - o.background_fraction)).epsilon(1e-10));
    CHECK(std::abs(static_cast<double>(pair.events.size()) / o.counts - 1.0) < 0.05);
  }
}

TEST_CASE("dataset does not depend on the worker count") {
  DatasetOptions o;
  o.n_phantoms = 6;
  o.counts = 5e3;
  o.seed = 21;
  o.n_val = 2;
  o.n_test = 1;
  Dataset ref;
  {
    WorkerScope w(1);
    ref = make_dataset(o);
  }
  CHECK(ref.split.train.size() == 3);
  CHECK(ref.split.val == std::vector<std::size_t>{3, 4});
  CHECK(ref.split.test == std::vector<std::size_t>{5});
  for (int workers : {2, 8}) {
    WorkerScope w(workers);
    const Dataset ds = make_dataset(o);
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
      CHECK(ds.pairs[i].events == ref.pairs[i].events);
      CHECK(testing::bit_equal(ds.pairs[i].activity.values(), ref.pairs[i].activity.values()));
    }
  }
  // Any item can be regenerated on its own.
  const DatasetPair again = simulate_pair(o, make_sinogram_binning(o.scanner), 4);
  CHECK(again.events == ref.pairs[4].events);

  o.n_val = 4;
  o.n_test = 2;
  CHECK_THROWS_AS((void)make_dataset(o), std::invalid_argument);
  o.n_phantoms = 2;
  o.n_val.reset();
  o.n_test.reset();
  CHECK_THROWS_AS((void)make_dataset(o), std::invalid_argument);
}

TEST_CASE("dataset directory round trip") {
  DatasetOptions o;
  o.n_phantoms = 3;
  o.counts = 3e3;
  o.seed = 2;
  o.grid = Grid{16, 16, 3.0};
  const Dataset ds = make_dataset(o);
  const auto dir = std::filesystem::temp_directory_path() / "lmpet_test_dataset";
  std::filesystem::remove_all(dir);
  write_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  CHECK(back.options.seed == o.seed);
  CHECK(back.options.counts == o.counts);
  CHECK(back.options.grid == o.grid);
  CHECK(back.options.scanner == o.scanner);
  CHECK(back.split.train == ds.split.train);
  CHECK(back.split.test == ds.split.test);
  REQUIRE(back.pairs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.pairs[i].events == ds.pairs[i].events);
    CHECK(back.pairs[i].activity == ds.pairs[i].activity);
  }
  std::filesystem::remove(dir / "meta.txt");
  CHECK_THROWS((void)load_dataset(dir));
}
