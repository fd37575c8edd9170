#include "bbt/benchmarks.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace bbt {

double sphere(const Eigen::VectorXd& z) { return z.squaredNorm(); }

double rosenbrock(const Eigen::VectorXd& z) {
  double total = 0.0;
  for (Eigen::Index i = 0; i + 1 < z.size(); ++i) {
    const double a = z[i + 1] - z[i] * z[i];
    const double b = 1.0 - z[i];
    total += 100.0 * a * a + b * b;
  }
  return total;
}

double prompt_distance_squared(std::span<const float> prompt, std::span<const float> target) {
  if (prompt.size() != target.size()) throw std::invalid_argument("prompt and target lengths differ");
  double total = 0.0;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    const double diff = static_cast<double>(prompt[i]) - static_cast<double>(target[i]);
    total += diff * diff;
  }
  return total;
}

PlantedQuadratic::PlantedQuadratic(std::shared_ptr<const Projection> projection, Eigen::VectorXd target)
    : projection_(std::move(projection)), target_(std::move(target)) {
  if (!projection_) throw std::invalid_argument("planted quadratic needs a projection");
  if (static_cast<std::size_t>(target_.size()) != projection_->sub_dim()) {
    throw std::invalid_argument("planted quadratic target has the wrong dimension");
  }
}

double PlantedQuadratic::operator()(const Eigen::VectorXd& z) const {
  return projection_->apply(z - target_).squaredNorm();
}

std::vector<double> PlantedQuadratic::evaluate_many(std::span<const Eigen::VectorXd> zs) const {
  Eigen::MatrixXd offsets(target_.size(), static_cast<Eigen::Index>(zs.size()));
  for (std::size_t i = 0; i < zs.size(); ++i) {
    if (zs[i].size() != target_.size()) throw std::invalid_argument("planted quadratic: z has the wrong dimension");
    offsets.col(static_cast<Eigen::Index>(i)) = zs[i] - target_;
  }
  const Eigen::MatrixXd residuals = projection_->apply_many(offsets);
  std::vector<double> out(zs.size());
  for (std::size_t i = 0; i < zs.size(); ++i) out[i] = residuals.col(static_cast<Eigen::Index>(i)).squaredNorm();
  return out;
}

double PlantedQuadratic::value_and_gradient(const Eigen::VectorXd& z, Eigen::VectorXd* gradient) const {
  const Eigen::VectorXd residual = projection_->apply(z - target_);
  if (gradient != nullptr) *gradient = 2.0 * projection_->apply_transpose(residual);
  return residual.squaredNorm();
}

Eigen::VectorXd planted_target(const ProjectionSpec& spec, std::uint64_t seed, double bound) {
  ProjectionSpec uniform = spec;
  uniform.distribution = ProjectionDistribution::UniformFanIn;
  const double scale = uniform.entry_stddev() / spec.entry_stddev();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Eigen::VectorXd z(static_cast<Eigen::Index>(spec.sub_dim));
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = scale * dist(rng);
  return z;
}

}  // namespace bbt
