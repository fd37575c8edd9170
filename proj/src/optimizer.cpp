#include "bbt/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <string>

namespace bbt {

namespace {

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
}

bool bitwise_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
}

}  // namespace

std::size_t default_popsize(std::size_t dim) {
  if (dim == 0) throw std::invalid_argument("default_popsize: dim must be >= 1");
  return 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(static_cast<double>(dim))));
}

CmaParameters CmaParameters::derive(std::size_t dim, std::size_t lambda) {
  if (dim == 0) throw std::invalid_argument("CMA-ES: dim must be >= 1");
  if (lambda < 2) throw std::invalid_argument("CMA-ES: popsize must be >= 2");

  CmaParameters p;
  p.dim = dim;
  p.lambda = lambda;
  p.mu = lambda / 2;
  const double n = static_cast<double>(dim);

  p.weights.resize(static_cast<Eigen::Index>(p.mu));
  for (std::size_t i = 0; i < p.mu; ++i) {
    p.weights[static_cast<Eigen::Index>(i)] =
        std::log(static_cast<double>(lambda) / 2.0 + 0.5) - std::log(static_cast<double>(i + 1));
  }
  p.weights /= p.weights.sum();
  p.mueff = 1.0 / p.weights.squaredNorm();

  p.cs = (p.mueff + 2.0) / (n + p.mueff + 5.0);
  p.damps = 1.0 + 2.0 * std::max(0.0, std::sqrt((p.mueff - 1.0) / (n + 1.0)) - 1.0) + p.cs;
  p.cc = (4.0 + p.mueff / n) / (n + 4.0 + 2.0 * p.mueff / n);
  p.c1 = 2.0 / ((n + 1.3) * (n + 1.3) + p.mueff);
  p.cmu = std::min(1.0 - p.c1,
                   2.0 * (p.mueff - 2.0 + 1.0 / p.mueff) / ((n + 2.0) * (n + 2.0) + p.mueff));
  p.chi_n = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
  p.eigen_interval = static_cast<std::uint64_t>(std::ceil(1.0 / (10.0 * n * (p.c1 + p.cmu))));
  p.eigen_interval = std::max<std::uint64_t>(p.eigen_interval, 1);
  return p;
}

bool CmaState::operator==(const CmaState& o) const {
  return bitwise_equal(mean, o.mean) && std::memcmp(&sigma, &o.sigma, sizeof sigma) == 0 &&
         bitwise_equal(cov, o.cov) && bitwise_equal(path_sigma, o.path_sigma) &&
         bitwise_equal(path_cov, o.path_cov) && bitwise_equal(eigen_basis, o.eigen_basis) &&
         bitwise_equal(eigen_values, o.eigen_values) && bitwise_equal(sqrt_cov, o.sqrt_cov) &&
         bitwise_equal(inv_sqrt_cov, o.inv_sqrt_cov) && generation == o.generation && evals == o.evals &&
         eigen_generation == o.eigen_generation && rng == o.rng && normal == o.normal;
}

CmaEs::CmaEs(CmaConfig config) : config_(std::move(config)) {
  if (config_.mean0.size() == 0) config_.mean0 = Vector::Zero(static_cast<Eigen::Index>(config_.dim));
  if (static_cast<std::size_t>(config_.mean0.size()) != config_.dim) {
    throw std::invalid_argument("CMA-ES: mean0 has " + std::to_string(config_.mean0.size()) +
                                " entries, expected " + std::to_string(config_.dim));
  }
  if (!config_.mean0.allFinite()) throw std::invalid_argument("CMA-ES: mean0 must be finite");
  if (!(config_.sigma0 > 0.0) || !std::isfinite(config_.sigma0)) {
    throw std::invalid_argument("CMA-ES: sigma0 must be positive and finite");
  }
  if (!(config_.lower < config_.upper)) {
    throw std::invalid_argument("CMA-ES: bounds must satisfy lower < upper");
  }
  params_ = CmaParameters::derive(config_.dim, config_.popsize);

  const auto d = static_cast<Eigen::Index>(config_.dim);
  state_.mean = config_.mean0;
  state_.sigma = config_.sigma0;
  state_.cov = Matrix::Identity(d, d);
  state_.path_sigma = Vector::Zero(d);
  state_.path_cov = Vector::Zero(d);
  state_.eigen_basis = Matrix::Identity(d, d);
  state_.eigen_values = Vector::Ones(d);
  state_.sqrt_cov = Matrix::Identity(d, d);
  state_.inv_sqrt_cov = Matrix::Identity(d, d);
  state_.rng.seed(config_.seed);
}

const std::vector<Vector>& CmaEs::ask() {
  if (pending_) throw OptimizerStateError("CMA-ES: ask called twice without tell");
  if (state_.evals > std::numeric_limits<std::uint64_t>::max() - params_.lambda) {
    throw OptimizerStateError("CMA-ES: evaluation counter would overflow");
  }
  const auto d = static_cast<Eigen::Index>(config_.dim);
  candidates_.assign(params_.lambda, Vector(d));
  Vector u(d);
  for (auto& x : candidates_) {
    for (Eigen::Index j = 0; j < d; ++j) u[j] = state_.normal(state_.rng);
    x = state_.mean + state_.sigma * (state_.sqrt_cov * u);
    for (Eigen::Index j = 0; j < d; ++j) x[j] = std::clamp(x[j], config_.lower, config_.upper);
  }
  pending_ = true;
  return candidates_;
}

void CmaEs::tell(std::span<const Vector> candidates, std::span<const double> fitness) {
  if (!pending_) throw OptimizerStateError("CMA-ES: tell without a pending ask");
  if (candidates.size() != params_.lambda || fitness.size() != params_.lambda) {
    throw std::invalid_argument("CMA-ES: tell expects exactly " + std::to_string(params_.lambda) +
                                " candidates and fitnesses");
  }
  for (double f : fitness) {
    if (!std::isfinite(f)) throw std::invalid_argument("CMA-ES: fitness values must be finite");
  }
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!bitwise_equal(candidates_[i], candidates[i])) {
      throw OptimizerStateError("CMA-ES: candidate " + std::to_string(i) +
                                " does not match the pending ask");
    }
  }

  std::vector<std::size_t> order(params_.lambda);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return fitness[a] < fitness[b]; });

  if (!has_best_ || fitness[order[0]] < best_fitness_) {
    best_ = candidates_[order[0]];
    best_fitness_ = fitness[order[0]];
    has_best_ = true;
  }

  auto& s = state_;
  const auto d = static_cast<Eigen::Index>(config_.dim);
  const auto mu = static_cast<Eigen::Index>(params_.mu);
  const Vector old_mean = s.mean;

  Matrix steps(d, mu);  // (x_i:lambda - m) / sigma for the selected parents
  for (Eigen::Index i = 0; i < mu; ++i) {
    steps.col(i) = (candidates_[order[static_cast<std::size_t>(i)]] - old_mean) / s.sigma;
  }
  const Vector mean_step = steps * params_.weights;
  s.mean = old_mean + s.sigma * mean_step;

  s.path_sigma = (1.0 - params_.cs) * s.path_sigma +
                 std::sqrt(params_.cs * (2.0 - params_.cs) * params_.mueff) * (s.inv_sqrt_cov * mean_step);
  const double gen_exp = 2.0 * static_cast<double>(s.generation + 1);
  const double ps_norm = s.path_sigma.norm();
  const bool hsig = ps_norm / std::sqrt(1.0 - std::pow(1.0 - params_.cs, gen_exp)) / params_.chi_n <
                    1.4 + 2.0 / (static_cast<double>(config_.dim) + 1.0);
  s.path_cov = (1.0 - params_.cc) * s.path_cov +
               (hsig ? std::sqrt(params_.cc * (2.0 - params_.cc) * params_.mueff) : 0.0) * mean_step;

  const double delta_hsig = hsig ? 0.0 : params_.cc * (2.0 - params_.cc);
  Matrix rank_mu = steps * params_.weights.asDiagonal() * steps.transpose();
  s.cov = (1.0 - params_.c1 - params_.cmu) * s.cov +
          params_.c1 * (s.path_cov * s.path_cov.transpose() + delta_hsig * s.cov) +
          params_.cmu * rank_mu;
  s.cov = 0.5 * (s.cov + s.cov.transpose()).eval();

  s.sigma *= std::exp((params_.cs / params_.damps) * (ps_norm / params_.chi_n - 1.0));
  s.sigma = std::max(s.sigma, std::numeric_limits<double>::min());

  s.generation += 1;
  s.evals += params_.lambda;
  if (s.generation - s.eigen_generation >= params_.eigen_interval) decompose();
  pending_ = false;
}

void CmaEs::decompose() {
  auto& s = state_;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(s.cov);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("CMA-ES: eigendecomposition of the covariance failed");
  }
  s.eigen_basis = solver.eigenvectors();
  s.eigen_values = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  s.sqrt_cov = s.eigen_basis * s.eigen_values.asDiagonal() * s.eigen_basis.transpose();
  const Vector inv =
      s.eigen_values.unaryExpr([](double v) { return 1.0 / std::max(v, std::numeric_limits<double>::min()); });
  s.inv_sqrt_cov = s.eigen_basis * inv.asDiagonal() * s.eigen_basis.transpose();
  s.eigen_generation = s.generation;
}

const Vector& CmaEs::recommend() const {
  if (!has_best_) throw OptimizerStateError("CMA-ES: recommend before any tell");
  return best_;
}

double CmaEs::best_fitness() const {
  if (!has_best_) throw OptimizerStateError("CMA-ES: best_fitness before any tell");
  return best_fitness_;
}

AdamState AdamState::start(Vector point, double lr) {
  AdamState s;
  s.moment1 = Vector::Zero(point.size());
  s.moment2 = Vector::Zero(point.size());
  s.point = std::move(point);
  s.lr = lr;
  return s;
}

void adam_step(AdamState& s, const Vector& gradient) {
  if (gradient.size() != s.point.size()) {
    throw std::invalid_argument("adam_step: gradient has the wrong dimension");
  }
  if (!gradient.allFinite()) throw std::invalid_argument("adam_step: gradient must be finite");
  s.step += 1;
  s.moment1 = s.beta1 * s.moment1 + (1.0 - s.beta1) * gradient;
  s.moment2 = s.beta2 * s.moment2 + (1.0 - s.beta2) * gradient.cwiseAbs2();
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  s.point.array() -= s.lr * (s.moment1.array() / c1) / ((s.moment2.array() / c2).sqrt() + s.eps);
}

}  // namespace bbt
