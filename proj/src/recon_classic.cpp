#include "lmpet/recon_classic.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "lmpet/io.hpp"
#include "lmpet/parallel.hpp"

namespace lmpet {

void ReconConfig::validate(std::size_t n_events) const {
  if (n_iter < 1) throw std::invalid_argument("n_iter must be >= 1");
  if (n_subsets < 1) throw std::invalid_argument("n_subsets must be >= 1");
  if (n_events > 0 && static_cast<std::size_t>(n_subsets) > n_events)
    throw std::invalid_argument("n_subsets exceeds the number of events");
  if (!(tv_weight >= 0.0)) throw std::invalid_argument("tv_weight must be >= 0");
  if (tv_inner_steps < 0) throw std::invalid_argument("tv_inner_steps must be >= 0");
  if (!(tv_step >= 0.0)) throw std::invalid_argument("tv_step must be >= 0");
  if (power_iterations < 1) throw std::invalid_argument("power_iterations must be >= 1");
  if (warm_start_subsets < 0) throw std::invalid_argument("warm_start_subsets must be >= 0");
}

Image2D sensitivity_image(const ScannerConfig& cfg, const Grid& grid) {
  cfg.validate();
  grid.validate();
  const auto pairs = all_lor_tof_pairs(cfg);
  const ChunkPlan plan = plan_chunks(pairs.size(), 1024, 64);
  std::vector<std::vector<double>> partial(plan.count);
  parallel_for_chunks(plan, [&](std::size_t c, std::size_t begin, std::size_t end) {
    auto& acc = partial[c];
    acc.assign(grid.size(), 0.0);
    for (std::size_t i = begin; i < end; ++i) {
      const Event& e = pairs[i];
      for (const auto& entry : joseph_row(cfg, grid, make_lor(cfg, e.c1, e.c2), e.tof)) acc[entry.pixel] += entry.weight;
    }
  });
  Image2D sens(grid);
  for (const auto& acc : partial)
    for (std::size_t j = 0; j < sens.size(); ++j) sens[j] += acc[j];
  return sens;
}

Image2D sensitivity_image_cached(const ScannerConfig& cfg, const Grid& grid, const std::filesystem::path& cache_dir) {
  std::ostringstream name;
  name << "sens_" << std::hex << config_hash(cfg) << std::dec << '_' << grid.width << 'x' << grid.height << '_'
       << std::setprecision(17) << grid.pixel_size_mm << ".img2";
  const auto path = cache_dir / name.str();
  if (std::filesystem::exists(path)) {
    Image2D cached = load_image(path);
    if (cached.grid() == grid) return cached;
  }
  Image2D sens = sensitivity_image(cfg, grid);
  std::filesystem::create_directories(cache_dir);
  save_image(sens, path);
  return sens;
}

namespace {

void require_nonnegative(const Image2D& f, const char* what) {
  for (double v : f.values())
    if (v < 0.0) throw std::invalid_argument(std::string(what) + ": image has negative values");
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double neg_log_likelihood(const ProjectionMatrix& p, const Image2D& f, const Image2D& sens) {
  require_nonnegative(f, "neg_log_likelihood");
  require_same_grid(f.grid(), sens.grid(), "neg_log_likelihood");
  const auto h = forward_project(p, f);
  double value = dot(sens.values(), f.values());
  for (double hi : h) value -= std::log(hi + kLikelihoodFloor);
  return value;
}

Image2D neg_log_likelihood_gradient(const ProjectionMatrix& p, const Image2D& f, const Image2D& sens) {
  require_same_grid(f.grid(), sens.grid(), "neg_log_likelihood_gradient");
  auto h = forward_project(p, f);
  for (auto& hi : h) hi = 1.0 / (hi + kLikelihoodFloor);
  Image2D g = back_project(p, h);
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = sens[j] - g[j];
  return g;
}

TvValue tv_value_and_subgradient(const Image2D& f) {
  const int w = f.width();
  const int h = f.height();
  TvValue out{0.0, Image2D(f.grid())};
  auto& g = out.gradient;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x + 1 < w ? f.at(x + 1, y) - f.at(x, y) : 0.0;
      const double dy = y + 1 < h ? f.at(x, y + 1) - f.at(x, y) : 0.0;
      const double norm = std::sqrt(dx * dx + dy * dy + kTvSmoothing * kTvSmoothing);
      out.value += norm - kTvSmoothing;
      g.at(x, y) -= (dx + dy) / norm;
      if (x + 1 < w) g.at(x + 1, y) += dx / norm;
      if (y + 1 < h) g.at(x, y + 1) += dy / norm;
    }
  }
  return out;
}

namespace {

// Forward-difference gradient with reflective boundaries and its adjoint.
void grad(const std::vector<double>& f, int w, int h, std::vector<double>& gx, std::vector<double>& gy) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t j = static_cast<std::size_t>(y) * w + x;
      gx[j] = x + 1 < w ? f[j + 1] - f[j] : 0.0;
      gy[j] = y + 1 < h ? f[j + w] - f[j] : 0.0;
    }
}

void grad_adjoint(const std::vector<double>& gx, const std::vector<double>& gy, int w, int h, std::vector<double>& out) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t j = static_cast<std::size_t>(y) * w + x;
      double v = 0.0;
      if (x + 1 < w) v -= gx[j];
      if (x > 0) v += gx[j - 1];
      if (y + 1 < h) v -= gy[j];
      if (y > 0) v += gy[j - w];
      out[j] = v;
    }
}

}  // namespace

Image2D tv_prox(const Image2D& v, double weight, int iterations, bool nonnegative) {
  return tv_prox(v, weight, iterations, nonnegative, {});
}

Image2D tv_prox(const Image2D& v, double weight, int iterations, bool nonnegative, std::span<const double> metric) {
  if (!metric.empty() && metric.size() != v.size())
    throw std::invalid_argument("tv_prox: metric has " + std::to_string(metric.size()) + " entries for " +
                                std::to_string(v.size()) + " pixels");
  Image2D out = v;
  if (nonnegative)
    for (auto& x : out.values()) x = std::max(0.0, x);
  if (weight <= 0.0 || iterations <= 0) return out;

  const int w = v.width();
  const int h = v.height();
  const std::size_t n = v.size();
  double metric_max = 1.0;
  if (!metric.empty()) {
    metric_max = *std::max_element(metric.begin(), metric.end());
    if (!(metric_max > 0.0)) return out;
  }
  std::vector<double> px(n, 0.0), py(n, 0.0), rx(n, 0.0), ry(n, 0.0), qx(n), qy(n), tmp(n), x(n);
  auto primal = [&](const std::vector<double>& ax, const std::vector<double>& ay) {
    grad_adjoint(ax, ay, w, h, tmp);
    for (std::size_t j = 0; j < n; ++j) {
      x[j] = v[j] - weight * (metric.empty() ? 1.0 : metric[j]) * tmp[j];
      if (nonnegative) x[j] = std::max(0.0, x[j]);
    }
  };
  double t = 1.0;
  const double step = 1.0 / (8.0 * weight * metric_max);
  for (int it = 0; it < iterations; ++it) {
    primal(rx, ry);
    grad(x, w, h, qx, qy);
    std::vector<double> nx(n), ny(n);
    for (std::size_t j = 0; j < n; ++j) {
      const double ax = rx[j] + step * qx[j];
      const double ay = ry[j] + step * qy[j];
      const double norm = std::max(1.0, std::hypot(ax, ay));
      nx[j] = ax / norm;
      ny[j] = ay / norm;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double beta = (t - 1.0) / t_next;
    for (std::size_t j = 0; j < n; ++j) {
      rx[j] = nx[j] + beta * (nx[j] - px[j]);
      ry[j] = ny[j] + beta * (ny[j] - py[j]);
    }
    px.swap(nx);
    py.swap(ny);
    t = t_next;
  }
  primal(px, py);
  std::copy(x.begin(), x.end(), out.values().begin());
  return out;
}

double penalized_objective(const ProjectionMatrix& p, const Image2D& f, const Image2D& sens, double lambda) {
  double value = neg_log_likelihood(p, f, sens);
  if (lambda > 0.0) value += lambda * tv_value_and_subgradient(f).value;
  return value;
}

double operator_norm(const ProjectionMatrix& p, int iterations, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Image2D x(p.grid());
  for (auto& v : x.values()) v = uni(rng);
  double norm = 0.0;
  for (int it = 0; it < iterations; ++it) {
    double len = std::sqrt(dot(x.values(), x.values()));
    if (len == 0.0) return 0.0;
    for (auto& v : x.values()) v /= len;
    x = back_project(p, forward_project(p, x));
    norm = std::sqrt(std::sqrt(dot(x.values(), x.values())));
  }
  return norm;
}

std::vector<ProjectionMatrix> split_subsets(const ProjectionMatrix& p, int n_subsets) {
  std::vector<ProjectionMatrix> subsets;
  subsets.reserve(n_subsets);
  for (int s = 0; s < n_subsets; ++s) {
    std::vector<std::size_t> rows;
    for (std::size_t i = static_cast<std::size_t>(s); i < p.rows(); i += static_cast<std::size_t>(n_subsets))
      rows.push_back(i);
    subsets.push_back(p.select_rows(rows));
  }
  return subsets;
}

namespace {

Image2D fov_ones(const Image2D& sens) {
  Image2D f(sens.grid());
  for (std::size_t j = 0; j < f.size(); ++j) f[j] = sens[j] > 0.0 ? 1.0 : 0.0;
  return f;
}

ReconResult run_osem(const ProjectionMatrix& p, const Image2D& sens, const ReconConfig& cfg, bool with_tv) {
  require_same_grid(p.grid(), sens.grid(), "osem");
  cfg.validate(p.rows());
  const auto subsets = split_subsets(p, cfg.n_subsets);
  const double m = cfg.n_subsets;
  const double lambda = with_tv ? cfg.tv_weight : 0.0;

  ReconResult result;
  result.image = fov_ones(sens);
  Image2D& f = result.image;
  for (int it = 0; it < cfg.n_iter; ++it) {
    for (int s = 0; s < cfg.n_subsets; ++s) {
      const auto& sub = subsets[static_cast<std::size_t>(s)];
      if (sub.rows() == 0) {
        result.warnings.push_back("iteration " + std::to_string(it + 1) + ": subset " + std::to_string(s) +
                                  " is empty, skipped");
        continue;
      }
      auto ratio = forward_project(sub, f);
      for (auto& r : ratio) r = 1.0 / (r + kLikelihoodFloor);
      const Image2D bp = back_project(sub, ratio);
      for (std::size_t j = 0; j < f.size(); ++j) f[j] = sens[j] > 0.0 ? f[j] * bp[j] / (sens[j] / m) : 0.0;

      if (lambda > 0.0) {
        const double step = cfg.tv_step * lambda / cfg.tv_inner_steps;
        for (int k = 0; k < cfg.tv_inner_steps; ++k) {
          const auto tv = tv_value_and_subgradient(f);
          for (std::size_t j = 0; j < f.size(); ++j)
            f[j] = sens[j] > 0.0 ? std::max(0.0, f[j] - step * f[j] / sens[j] * tv.gradient[j]) : 0.0;
        }
      }
    }
    result.objective.push_back(penalized_objective(p, f, sens, lambda));
  }
  return result;
}

}  // namespace

ReconResult osem(const ProjectionMatrix& p, const Image2D& sens, const ReconConfig& cfg) {
  return run_osem(p, sens, cfg, false);
}

ReconResult osem_tv(const ProjectionMatrix& p, const Image2D& sens, const ReconConfig& cfg) {
  return run_osem(p, sens, cfg, true);
}

ReconResult spdhg_tv(const ProjectionMatrix& p, const Image2D& sens, const ReconConfig& cfg) {
  require_same_grid(p.grid(), sens.grid(), "spdhg_tv");
  cfg.validate(p.rows());
  const auto subsets = split_subsets(p, cfg.n_subsets);
  const int m = cfg.n_subsets;
  const double lambda = cfg.tv_weight;
  const double rho = 0.99;
  const bool scalar_steps = cfg.sigma > 0.0 || cfg.tau > 0.0;
  if (scalar_steps && !(cfg.sigma > 0.0 && cfg.tau > 0.0))
    throw std::invalid_argument("spdhg_tv: sigma and tau must be given together");

  ReconResult result;
  Image2D f = fov_ones(sens);
  if (cfg.warm_start_subsets > 0) {
    ReconConfig warm;
    warm.n_iter = 1;
    warm.n_subsets = std::min<int>(cfg.warm_start_subsets, static_cast<int>(std::max<std::size_t>(p.rows(), 1)));
    f = osem(p, sens, warm).image;
  } else {
    // Count-matched uniform start: <sens, f0> equals the number of events.
    const double sens_sum = dot(sens.values(), f.values());
    const double level = sens_sum > 0.0 ? std::max<double>(1.0, static_cast<double>(p.rows())) / sens_sum : 1.0;
    for (auto& v : f.values()) v *= level;
  }
  const double gamma = cfg.gamma > 0.0 ? cfg.gamma : kSpdhgGammaScale / std::max(f.max(), 1e-300);

  // Per-event dual steps and per-pixel primal steps. The diagonal choice
  // sigma_i = rho gamma / (P_i 1), tau_j = rho / (m gamma max_s (P_s^T 1)_j)
  // keeps |S^1/2 P_s T^1/2|^2 <= rho^2 / m for every subset.
  std::vector<std::vector<double>> sigma(static_cast<std::size_t>(m));
  std::vector<double> tau(f.size(), 0.0);
  if (scalar_steps) {
    const double norm = operator_norm(p, cfg.power_iterations, cfg.seed);
    if (!(cfg.sigma * cfg.tau * norm * norm < 1.0)) {
      std::ostringstream msg;
      msg << "spdhg_tv: step sizes violate sigma*tau*|P|^2 < 1 (sigma=" << cfg.sigma << ", tau=" << cfg.tau
          << ", |P|=" << norm << ")";
      throw std::invalid_argument(msg.str());
    }
    for (int s = 0; s < m; ++s) sigma[static_cast<std::size_t>(s)].assign(subsets[static_cast<std::size_t>(s)].rows(), cfg.sigma);
    std::fill(tau.begin(), tau.end(), cfg.tau);
  } else {
    const Image2D ones(sens.grid(), 1.0);
    std::vector<double> col_max(f.size(), 0.0);
    for (int s = 0; s < m; ++s) {
      const auto& sub = subsets[static_cast<std::size_t>(s)];
      const auto row_sums = forward_project(sub, ones);
      auto& sg = sigma[static_cast<std::size_t>(s)];
      sg.resize(row_sums.size());
      for (std::size_t i = 0; i < sg.size(); ++i) sg[i] = row_sums[i] > 0.0 ? rho * gamma / row_sums[i] : 0.0;
      const Image2D cols = back_project(sub, std::vector<double>(sub.rows(), 1.0));
      for (std::size_t j = 0; j < f.size(); ++j) col_max[j] = std::max(col_max[j], cols[j]);
    }
    const double widest = *std::max_element(col_max.begin(), col_max.end());
    for (std::size_t j = 0; j < f.size(); ++j) {
      const double c = col_max[j] > 0.0 ? col_max[j] : widest;
      tau[j] = c > 0.0 ? rho / (m * gamma * c) : 0.0;
    }
  }

  // Dual start y_i = -1 / (P f0)_i, the optimality relation at f0.
  std::vector<std::vector<double>> y(static_cast<std::size_t>(m));
  Image2D z(sens.grid());
  for (int s = 0; s < m; ++s) {
    auto& ys = y[static_cast<std::size_t>(s)];
    const auto& sg = sigma[static_cast<std::size_t>(s)];
    ys = forward_project(subsets[static_cast<std::size_t>(s)], f);
    for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = sg[i] > 0.0 ? -1.0 / (ys[i] + kLikelihoodFloor) : 0.0;
    const Image2D bp = back_project(subsets[static_cast<std::size_t>(s)], ys);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] += bp[j];
  }
  Image2D zbar = z;

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> pick(0, m - 1);
  Image2D arg(sens.grid());
  for (int it = 0; it < cfg.n_iter; ++it) {
    for (int k = 0; k < m; ++k) {
      const int s = m == 1 ? 0 : pick(rng);
      for (std::size_t j = 0; j < f.size(); ++j) arg[j] = sens[j] > 0.0 ? f[j] - tau[j] * (zbar[j] + sens[j]) : 0.0;
      f = tv_prox(arg, lambda, cfg.tv_inner_steps, true, tau);
      for (std::size_t j = 0; j < f.size(); ++j)
        if (!(sens[j] > 0.0)) f[j] = 0.0;

      const auto& sub = subsets[static_cast<std::size_t>(s)];
      const auto& sg = sigma[static_cast<std::size_t>(s)];
      auto& ys = y[static_cast<std::size_t>(s)];
      const auto proj = forward_project(sub, f);
      std::vector<double> delta(ys.size());
      for (std::size_t i = 0; i < ys.size(); ++i) {
        const double v = ys[i] + sg[i] * (proj[i] + kLikelihoodFloor);
        const double y_new = 0.5 * (v - std::sqrt(v * v + 4.0 * sg[i]));
        delta[i] = y_new - ys[i];
        ys[i] = y_new;
      }
      const Image2D dz = back_project(sub, delta);
      for (std::size_t j = 0; j < z.size(); ++j) {
        z[j] += dz[j];
        zbar[j] = z[j] + m * dz[j];
      }
    }
    result.objective.push_back(penalized_objective(p, f, sens, lambda));
  }
  result.image = std::move(f);
  return result;
}

void write_objective_csv(std::ostream& out, const std::vector<double>& objective) {
  out << "iter,objective\n";
  const auto old = out.precision(17);
  for (std::size_t k = 0; k < objective.size(); ++k) out << k + 1 << ',' << objective[k] << '\n';
  out.precision(old);
}

}  // namespace lmpet
