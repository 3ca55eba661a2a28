#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "lmpet/geometry.hpp"
#include "lmpet/projector.hpp"
#include "support.hpp"

using namespace lmpet;
using testing::WorkerScope;

namespace {

const Grid kDesk{32, 32, 1.5};

ScannerConfig one_bin() {
  ScannerConfig c = ScannerConfig::desk();
  c.n_tof_bins = 1;
  return c;
}

}  // namespace

TEST_CASE("TOF kernel width and truncation") {
  const ScannerConfig c = ScannerConfig::desk();
  const double sigma = 0.2998 * 400.0 / 2.0 / 2.3548;
  CHECK(tof_sigma_mm(c) == doctest::Approx(sigma).epsilon(1e-14));
  CHECK(tof_sigma_mm(c) == doctest::Approx(25.46).epsilon(1e-3));

  const int mid = c.center_tof_bin();
  CHECK(tof_weight(c, 0.0, mid) == 1.0);
  CHECK(tof_weight(c, sigma, mid) == doctest::Approx(std::exp(-0.5)));
  CHECK(tof_weight(c, 2.999 * sigma, mid) > 0.0);
  CHECK(tof_weight(c, 3.001 * sigma, mid) == 0.0);
  CHECK(tof_weight(c, -3.001 * sigma, mid) == 0.0);
  // Bin 5 is centred 15 mm towards c2.
  CHECK(tof_weight(c, 15.0, mid + 1) == 1.0);
  CHECK(tof_weight(c, 15.0 + 3.001 * sigma, mid + 1) == 0.0);
}

TEST_CASE("horizontal ray between two pixel rows") {
  const ScannerConfig c = one_bin();
  const Grid g{4, 4, 1.0};
  const Lor lor{0, 1, {-50.0, 0.0}, {50.0, 0.0}};
  const SparseRow row = joseph_row(c, g, lor, 0);
  REQUIRE(row.size() == 8);
  const double sigma = tof_sigma_mm(c);
  for (const auto& e : row) {
    const int x = static_cast<int>(e.pixel) % 4;
    const int y = static_cast<int>(e.pixel) / 4;
    CHECK((y == 1 || y == 2));
    const double s = g.center_x(x);
    CHECK(e.weight == doctest::Approx(0.5 * std::exp(-s * s / (2 * sigma * sigma))).epsilon(1e-14));
  }
}

TEST_CASE("vertical ray through a pixel column picks one pixel per row") {
  const ScannerConfig c = one_bin();
  const Grid g{5, 5, 2.0};
  const Lor lor{0, 1, {2.0, -60.0}, {2.0, 60.0}};  // column x = 3
  const SparseRow row = joseph_row(c, g, lor, 0);
  REQUIRE(row.size() == 5);
  for (std::size_t k = 0; k < row.size(); ++k) {
    CHECK(row[k].pixel == 5 * k + 3);
    const double s = g.center_y(static_cast<int>(k));
    CHECK(row[k].weight == doctest::Approx(2.0 * tof_weight(c, s, 0)).epsilon(1e-14));
  }
}

TEST_CASE("diagonal ray steps by pixel_size * sqrt(2)") {
  const ScannerConfig c = one_bin();
  const Grid g{3, 3, 1.0};
  const Lor lor{0, 1, {-30.0, -30.0}, {30.0, 30.0}};
  // Crossings land on pixel centres up to rounding, so off-diagonal
  // neighbours may pick up negligible weight.
  Image2D w(g);
  for (const auto& e : joseph_row(c, g, lor, 0)) w[e.pixel] = e.weight;
  for (int k = 0; k < 3; ++k) {
    const double s = std::sqrt(2.0) * (k - 1.0);
    CHECK(w.at(k, k) == doctest::Approx(std::sqrt(2.0) * tof_weight(c, s, 0)).epsilon(1e-12));
  }
  CHECK(w.sum() == doctest::Approx(w.at(0, 0) + w.at(1, 1) + w.at(2, 2)).epsilon(1e-12));
}

TEST_CASE("rows are sorted, unique and positive") {
  const ScannerConfig c = ScannerConfig::desk();
  const EventList ev = testing::random_events(c, 300, 5);
  const ProjectionMatrix p = build_projection_matrix(c, kDesk, ev);
  REQUIRE(p.rows() == ev.size());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const auto px = p.row_pixels(i);
    const auto w = p.row_weights(i);
    for (std::size_t k = 0; k < px.size(); ++k) {
      CHECK(w[k] > 0.0);
      CHECK(px[k] < kDesk.size());
      if (k > 0) CHECK(px[k - 1] < px[k]);
    }
  }
}

TEST_CASE("a LOR that misses the grid gives an empty row") {
  const ScannerConfig c = ScannerConfig::desk();
  const Grid small{8, 8, 1.0};
  const SparseRow row = joseph_row(c, small, make_lor(c, 0, 1), c.center_tof_bin());
  CHECK(row.empty());
}

TEST_CASE("forward and back projection match the dense matrix") {
  const ScannerConfig c = ScannerConfig::desk();
  const Grid g{12, 12, 3.0};
  const ProjectionMatrix p = build_projection_matrix(c, g, testing::random_events(c, 150, 11));
  const Eigen::MatrixXd d = testing::dense(p);
  const Image2D f = testing::random_image(g, 2);
  const std::vector<double> h = forward_project(p, f);
  const Eigen::VectorXd fe = Eigen::Map<const Eigen::VectorXd>(f.values().data(), static_cast<Eigen::Index>(f.size()));
  const Eigen::VectorXd he = d * fe;
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] == doctest::Approx(he(static_cast<Eigen::Index>(i))).epsilon(1e-13));

  std::vector<double> r(p.rows());
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  for (auto& v : r) v = n01(rng);
  const Image2D b = back_project(p, r);
  const Eigen::VectorXd be = d.transpose() * Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
  for (std::size_t j = 0; j < b.size(); ++j)
    CHECK(b[j] == doctest::Approx(be(static_cast<Eigen::Index>(j))).epsilon(1e-12).scale(1e-12));
}

TEST_CASE("adjoint identity on random pairs") {
  const ScannerConfig c = ScannerConfig::desk();
  const ProjectionMatrix p = build_projection_matrix(c, kDesk, testing::random_events(c, 500, 21));
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 20; ++trial) {
    Image2D f(kDesk);
    for (auto& v : f.values()) v = n01(rng);
    std::vector<double> h(p.rows());
    for (auto& v : h) v = n01(rng);
    const double lhs = testing::dot(forward_project(p, f), h);
    const double rhs = testing::dot(f.values(), back_project(p, h).values());
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(std::abs(lhs), std::abs(rhs)));
  }
}

TEST_CASE("projection is linear") {
  const ScannerConfig c = ScannerConfig::desk();
  const ProjectionMatrix p = build_projection_matrix(c, kDesk, testing::random_events(c, 200, 4));
  const Image2D a = testing::random_image(kDesk, 1);
  const Image2D b = testing::random_image(kDesk, 2);
  Image2D sum(kDesk);
  for (std::size_t j = 0; j < sum.size(); ++j) sum[j] = 2.0 * a[j] - 3.0 * b[j];
  const auto ha = forward_project(p, a);
  const auto hb = forward_project(p, b);
  const auto hs = forward_project(p, sum);
  for (std::size_t i = 0; i < hs.size(); ++i) CHECK(hs[i] == doctest::Approx(2.0 * ha[i] - 3.0 * hb[i]).scale(1.0));
}

TEST_CASE("an impulse is seen only by LORs passing next to it") {
  const ScannerConfig c = one_bin();
  Image2D f(kDesk);
  f.at(16, 16) = 1.0;
  const double px = kDesk.center_x(16), py = kDesk.center_y(16);
  const auto all = all_lor_tof_pairs(c);
  const ProjectionMatrix p = build_projection_matrix(c, kDesk, all);
  const auto h = forward_project(p, f);
  int seen = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const Lor lor = make_lor(c, static_cast<int>(all[i].c1), static_cast<int>(all[i].c2));
    const Point2 u = lor.direction();
    const double dist = std::abs((px - lor.p1.x) * u.y - (py - lor.p1.y) * u.x);
    if (h[i] > 0.0) {
      ++seen;
      CHECK(dist < std::sqrt(2.0) * kDesk.pixel_size_mm);
    }
    if (dist < 0.1 * kDesk.pixel_size_mm) CHECK(h[i] > 0.0);
  }
  CHECK(seen > 0);
}

TEST_CASE("TOF bins localise support along the LOR") {
  const ScannerConfig c = ScannerConfig::desk();
  const double reach = kTofTruncationSigmas * tof_sigma_mm(c);
  for (int a : {0, 7, 20})
    for (int b : {31, 40, 50}) {
      const Lor lor = make_lor(c, a, b);
      const Point2 u = lor.direction();
      const Point2 mid = lor.midpoint();
      for (int t = 0; t < c.n_tof_bins; ++t) {
        const double centre = tof_bin_offset(c, t);
        for (const auto& e : joseph_row(c, kDesk, lor, t)) {
          const int x = static_cast<int>(e.pixel) % kDesk.width;
          const int y = static_cast<int>(e.pixel) / kDesk.width;
          const double s = (kDesk.center_x(x) - mid.x) * u.x + (kDesk.center_y(y) - mid.y) * u.y;
          CHECK(std::abs(s - centre) <= reach + kDesk.pixel_size_mm * std::sqrt(2.0));
        }
      }
    }
}

TEST_CASE("summing all TOF bins approaches the non-TOF row near the centre") {
  ScannerConfig c = ScannerConfig::desk();
  const Lor lor = make_lor(c, 3, 35);
  const Image2D f = testing::smooth_image(kDesk, 9);
  double tof_sum = 0.0;
  for (int t = 0; t < c.n_tof_bins; ++t)
    for (const auto& e : joseph_row(c, kDesk, lor, t)) tof_sum += e.weight * f[e.pixel];
  CHECK(tof_sum > 0.0);
  // 15 mm bins with a 25 mm kernel overlap, so the summed weight exceeds 1.
  c.n_tof_bins = 1;
  double plain = 0.0;
  for (const auto& e : joseph_row(c, kDesk, lor, 0)) plain += e.weight * f[e.pixel];
  CHECK(tof_sum > plain);
}

TEST_CASE("rows agree with a numerical line integral") {
  const ScannerConfig c = ScannerConfig::desk();
  int checked = 0, good = 0;
  for (int trial = 0; checked < 60; ++trial) {
    REQUIRE(trial < 1000);
    const Image2D f = testing::smooth_image(kDesk, 100 + trial);
    const Event e = testing::random_events(c, 1, 500 + trial)[0];
    const Lor lor = make_lor(c, static_cast<int>(e.c1), static_cast<int>(e.c2));
    const double exact = testing::line_integral(c, lor, static_cast<int>(e.tof), f);
    // Pairs that barely graze the object only see blob tails.
    if (exact < 0.1 * f.max() * kDesk.pixel_size_mm) continue;
    double joseph = 0.0;
    for (const auto& s : joseph_row(c, kDesk, lor, static_cast<int>(e.tof))) joseph += s.weight * f[s.pixel];
    ++checked;
    const double rel = std::abs(joseph - exact) / exact;
    CHECK(rel <= 0.05);
    if (rel <= 0.02) ++good;
  }
  CHECK(good >= 0.95 * checked);
}

TEST_CASE("matrix does not depend on the worker count") {
  const ScannerConfig c = ScannerConfig::desk();
  const EventList ev = testing::random_events(c, 3000, 99);
  ProjectionMatrix ref;
  {
    WorkerScope w(1);
    ref = build_projection_matrix(c, kDesk, ev);
  }
  const Image2D f = testing::random_image(kDesk, 4);
  std::vector<double> h_ref;
  Image2D b_ref;
  {
    WorkerScope w(1);
    h_ref = forward_project(ref, f);
    b_ref = back_project(ref, h_ref);
  }
  for (int workers : {2, 3, 8}) {
    WorkerScope w(workers);
    CHECK(build_projection_matrix(c, kDesk, ev) == ref);
    const auto h = forward_project(ref, f);
    CHECK(testing::bit_equal(h, h_ref));
    CHECK(testing::bit_equal(back_project(ref, h).values(), b_ref.values()));
  }
}

TEST_CASE("select_rows keeps row contents") {
  const ScannerConfig c = ScannerConfig::desk();
  const ProjectionMatrix p = build_projection_matrix(c, kDesk, testing::random_events(c, 40, 6));
  const std::vector<std::size_t> idx{5, 0, 39, 5};
  const ProjectionMatrix s = p.select_rows(idx);
  REQUIRE(s.rows() == 4);
  for (std::size_t k = 0; k < idx.size(); ++k) CHECK(s.row(k) == p.row(idx[k]));
  const std::vector<std::size_t> bad{40};
  CHECK_THROWS_AS((void)p.select_rows(bad), std::out_of_range);
}

TEST_CASE("invalid events are reported with their index") {
  const ScannerConfig c = ScannerConfig::desk();
  EventList ev = testing::random_events(c, 10, 1);
  ev[7].tof = 9;
  try {
    (void)build_projection_matrix(c, kDesk, ev);
    FAIL("expected an exception");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("event 7") != std::string::npos);
  }
}

TEST_CASE("grid mismatch is rejected") {
  const ScannerConfig c = ScannerConfig::desk();
  const ProjectionMatrix p = build_projection_matrix(c, kDesk, testing::random_events(c, 10, 1));
  CHECK_THROWS_AS((void)forward_project(p, Image2D(Grid{16, 16, 1.5})), std::invalid_argument);
}

TEST_CASE("dense operator memory estimates") {
  const double sino = to_gib(estimate_memory(SinogramDims{357, 224, 17, 128, 128}));
  CHECK(sino == doctest::Approx(357.0 * 224 * 17 * 128 * 128 * 4 / (1024.0 * 1024 * 1024)));
  CHECK(std::abs(sino / 83.0 - 1.0) <= 0.02);
  const double lm = to_gib(estimate_memory(ListModeDims{100000, 128, 128}));
  CHECK(std::abs(lm / 6.1 - 1.0) <= 0.02);
  const double lm3 = to_gib(estimate_memory(ListModeDims{300000, 128, 128}));
  CHECK(lm3 == doctest::Approx(3.0 * lm));
}
