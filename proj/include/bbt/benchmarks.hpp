#pragma once

// Optimizer sanity functions and the planted quadratic over a projection.

#include "bbt/subspace.hpp"

#include <Eigen/Dense>

#include <memory>
#include <span>
#include <vector>

namespace bbt {

double sphere(const Eigen::VectorXd& z);
double rosenbrock(const Eigen::VectorXd& z);

/// ||p - p*||^2 in prompt space.
double prompt_distance_squared(std::span<const float> prompt, std::span<const float> target);

/// g(z) = ||(A z + p0) - (A z* + p0)||^2, evaluated as ||A (z - z*)||^2 so the
/// minimum at z* is exactly zero. p0 cancels and is not needed.
class PlantedQuadratic {
 public:
  PlantedQuadratic(std::shared_ptr<const Projection> projection, Eigen::VectorXd target);

  std::size_t dim() const { return projection_->sub_dim(); }
  const Eigen::VectorXd& target() const { return target_; }
  const Projection& projection() const { return *projection_; }

  double operator()(const Eigen::VectorXd& z) const;
  /// One pass over A for the whole set.
  std::vector<double> evaluate_many(std::span<const Eigen::VectorXd> zs) const;
  double value_and_gradient(const Eigen::VectorXd& z, Eigen::VectorXd* gradient) const;

 private:
  std::shared_ptr<const Projection> projection_;
  Eigen::VectorXd target_;
};

/// Teacher point for planted-quadratic benchmarks: uniform in [-bound, bound]^d,
/// rescaled by (uniform entry stddev / spec entry stddev) so that the planted
/// prompt offset A z* has the same distribution whichever projection is used.
Eigen::VectorXd planted_target(const ProjectionSpec& spec, std::uint64_t seed, double bound = 4.0);

}  // namespace bbt
