#pragma once

// Ask/tell CMA-ES over R^d with box clipping, plus a plain Adam optimizer
// used as the first-order baseline.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace bbt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised for ask/tell protocol violations (double ask, tell without ask,
/// candidates that were not produced by the pending ask, ...).
class OptimizerStateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// 4 + floor(3 ln d).
std::size_t default_popsize(std::size_t dim);

struct CmaConfig {
  std::size_t dim = 500;
  std::size_t popsize = 20;
  Vector mean0;  ///< empty means the origin
  double sigma0 = 1.0;
  std::uint64_t seed = 0;
  double lower = -5.0;
  double upper = 5.0;
};

/// Strategy constants derived from (d, lambda) with the usual tutorial defaults.
struct CmaParameters {
  std::size_t dim = 0;
  std::size_t lambda = 0;
  std::size_t mu = 0;
  Vector weights;  ///< positive recombination weights, sum 1
  double mueff = 0;
  double cs = 0;
  double damps = 0;
  double cc = 0;
  double c1 = 0;
  double cmu = 0;
  double chi_n = 0;  ///< E||N(0, I)||
  std::uint64_t eigen_interval = 1;  ///< generations between decompositions

  static CmaParameters derive(std::size_t dim, std::size_t lambda);
};

struct CmaState {
  Vector mean;
  double sigma = 1.0;
  Matrix cov;
  Vector path_sigma;
  Vector path_cov;
  Matrix eigen_basis;
  Vector eigen_values;  ///< square roots of the eigenvalues of cov
  Matrix sqrt_cov;      ///< B diag(D) B^T from the last decomposition
  Matrix inv_sqrt_cov;  ///< B diag(1/D) B^T from the last decomposition
  std::uint64_t generation = 0;
  std::uint64_t evals = 0;
  std::uint64_t eigen_generation = 0;
  std::mt19937_64 rng;
  std::normal_distribution<double> normal;

  /// Exact (bitwise) equality of every field, generator state included.
  bool operator==(const CmaState& other) const;
};

class CmaEs {
 public:
  explicit CmaEs(CmaConfig config);

  /// Samples lambda candidates m + sigma C^(1/2) u, clipped into the box.
  /// C^(1/2) = B D B^T is the symmetric root, which unlike B D does not
  /// depend on how the eigensolver picks bases of repeated eigenvalues.
  const std::vector<Vector>& ask();

  /// Candidates must be exactly those of the pending ask, in order.
  void tell(std::span<const Vector> candidates, std::span<const double> fitness);

  /// Best evaluated candidate so far (not the mean).
  const Vector& recommend() const;
  double best_fitness() const;

  bool tell_pending() const { return pending_; }
  const CmaState& state() const { return state_; }
  const CmaParameters& parameters() const { return params_; }
  const CmaConfig& config() const { return config_; }

 private:
  void decompose();

  CmaConfig config_;
  CmaParameters params_;
  CmaState state_;
  std::vector<Vector> candidates_;
  bool pending_ = false;
  bool has_best_ = false;
  Vector best_;
  double best_fitness_ = 0;
};

struct AdamState {
  Vector point;
  Vector moment1;
  Vector moment2;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState start(Vector point, double lr = 1e-3);
};

/// One bias-corrected Adam update (descent direction).
void adam_step(AdamState& state, const Vector& gradient);

}  // namespace bbt
