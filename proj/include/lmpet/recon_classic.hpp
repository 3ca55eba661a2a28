#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lmpet/geometry.hpp"
#include "lmpet/image.hpp"
#include "lmpet/projector.hpp"

namespace lmpet {

/// Added to every expected count before taking logs or reciprocals.
inline constexpr double kLikelihoodFloor = 1e-12;
/// Default SPDHG balance gamma * max(f0).
inline constexpr double kSpdhgGammaScale = 10.0;
/// Smoothing of the isotropic TV norm.
inline constexpr double kTvSmoothing = 1e-8;

struct ReconConfig {
  int n_iter = 30;
  int n_subsets = 4;
  /// Regularization weight (lambda).
  double tv_weight = 0.0;
  /// OSEM+TV: descent steps per subset update. SPDHG: inner TV-prox steps.
  int tv_inner_steps = 10;
  /// OSEM+TV: scale of the TV descent, taken in the EM metric f/sens. Each
  /// subset update is followed by steps of tv_step * (f/sens) * lambda *
  /// grad TV / tv_inner_steps.
  double tv_step = 1.0;
  /// SPDHG scalar dual and primal steps, checked against sigma*tau*|P|^2 < 1
  /// with |P| from `power_iterations` power iterations. When both are <= 0
  /// the diagonal steps sigma_i = rho*gamma/(P_i 1) and
  /// tau_j = rho/(m*gamma*max_s (P_s^T 1)_j), rho = 0.99, are used.
  double sigma = 0.0;
  double tau = 0.0;
  /// SPDHG primal/dual balance; <= 0 selects kSpdhgGammaScale / max(f0).
  double gamma = 0.0;
  int power_iterations = 50;
  /// SPDHG start: one OSEM epoch with this many subsets; 0 starts from a
  /// uniform image whose expected count matches the data.
  int warm_start_subsets = 4;
  std::uint64_t seed = 0;

  void validate(std::size_t n_events) const;
};

struct ReconResult {
  Image2D image;
  /// Objective (negative log-likelihood plus lambda * TV) after each iteration.
  std::vector<double> objective;
  std::vector<std::string> warnings;
};

/// Back-projection of ones over every (LOR, TOF bin) of the scanner.
Image2D sensitivity_image(const ScannerConfig& cfg, const Grid& grid);
/// Same, cached under `cache_dir` by scanner hash and grid.
Image2D sensitivity_image_cached(const ScannerConfig& cfg, const Grid& grid, const std::filesystem::path& cache_dir);

/// <sens, f> - sum_i log((P f)_i + eta). Throws on negative f.
double neg_log_likelihood(const ProjectionMatrix& p, const Image2D& f, const Image2D& sens);
/// sens - P^T (1 / (P f + eta)).
Image2D neg_log_likelihood_gradient(const ProjectionMatrix& p, const Image2D& f, const Image2D& sens);

struct TvValue {
  double value = 0.0;
  Image2D gradient;
};

/// Smoothed isotropic TV with forward differences and reflective
/// boundaries: sum_j sqrt(dx_j^2 + dy_j^2 + mu^2) - mu.
TvValue tv_value_and_subgradient(const Image2D& f);

/// argmin_x 0.5 |x - v|^2 + weight * TV(x) (unsmoothed isotropic TV),
/// optionally over x >= 0, by fast gradient projection on the dual.
Image2D tv_prox(const Image2D& v, double weight, int iterations, bool nonnegative);
/// Same in the metric sum_j (x_j - v_j)^2 / (2 metric_j); an empty metric is
/// all ones.
Image2D tv_prox(const Image2D& v, double weight, int iterations, bool nonnegative, std::span<const double> metric);

/// neg_log_likelihood + lambda * TV.
double penalized_objective(const ProjectionMatrix& p, const Image2D& f, const Image2D& sens, double lambda);

/// Largest singular value of P by power iteration on P^T P.
double operator_norm(const ProjectionMatrix& p, int iterations, std::uint64_t seed = 0);

/// Rows with index i % n_subsets == s, for each s.
std::vector<ProjectionMatrix> split_subsets(const ProjectionMatrix& p, int n_subsets);

ReconResult osem(const ProjectionMatrix& p, const Image2D& sens, const ReconConfig& cfg);
ReconResult osem_tv(const ProjectionMatrix& p, const Image2D& sens, const ReconConfig& cfg);
ReconResult spdhg_tv(const ProjectionMatrix& p, const Image2D& sens, const ReconConfig& cfg);

/// `iter,objective` rows, iterations numbered from 1.
void write_objective_csv(std::ostream& out, const std::vector<double>& objective);

}  // namespace lmpet
