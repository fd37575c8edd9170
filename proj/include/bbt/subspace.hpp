#pragma once

// Seeded random projection A (D x d), initial prompt p0, and the map
// z -> A z + p0 from the search subspace into prompt space.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bbt {

enum class ProjectionDistribution : std::uint8_t {
  UniformFanIn,    ///< U[-sqrt(6/d), sqrt(6/d)]
  NormalOneOverD,  ///< N(0, 1/d)
};

std::string to_string(ProjectionDistribution dist);
ProjectionDistribution projection_distribution_from_string(const std::string& name);

struct ProjectionSpec {
  std::size_t full_dim = 0;  ///< D = prompt_length * embed_dim
  std::size_t sub_dim = 0;   ///< d
  ProjectionDistribution distribution = ProjectionDistribution::UniformFanIn;
  std::uint64_t seed = 0;

  void validate() const;
  /// Standard deviation of a single entry of A under `distribution`.
  double entry_stddev() const;
};

/// Dense row-major f32 matrix. Products accumulate in double.
class Projection {
 public:
  using Storage = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Projection() = default;
  explicit Projection(const ProjectionSpec& spec);
  /// Wraps an explicit matrix (tests and custom subspaces).
  static Projection from_matrix(Storage values);

  std::size_t full_dim() const { return static_cast<std::size_t>(a_.rows()); }
  std::size_t sub_dim() const { return static_cast<std::size_t>(a_.cols()); }
  const Storage& matrix() const { return a_; }

  /// A z
  Eigen::VectorXd apply(const Eigen::VectorXd& z) const;
  /// A Z for a d x n block of column vectors; one pass over A.
  Eigen::MatrixXd apply_many(const Eigen::MatrixXd& zs) const;
  /// A^T v
  Eigen::VectorXd apply_transpose(const Eigen::VectorXd& v) const;

 private:
  Storage a_;
};

enum class PromptSource : std::uint8_t { RandomVocabTokens, Zeros, Loaded };

struct PromptBase {
  std::vector<float> values;
  PromptSource source = PromptSource::Zeros;
};

using EmbeddingTable = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// RandomVocabTokens draws `prompt_length` distinct rows of `vocab` (needs
/// prompt_length <= rows). Zeros ignores the table. Loaded is not produced
/// here; use load_prompt_base.
PromptBase make_prompt_base(PromptSource kind, std::size_t prompt_length, std::size_t embed_dim,
                            const EmbeddingTable* vocab, std::uint64_t seed);

/// File layout: "BBP0" | u32 length | f32[length], little-endian.
void save_prompt_base(const PromptBase& base, const std::string& path);
PromptBase load_prompt_base(const std::string& path);

/// A z + p0 rounded to f32. z is widened to double before the product.
std::vector<float> project(const Projection& a, std::span<const float> z, const PromptBase& p0);
/// Same map without rounding, for gradient checks and local surrogates.
Eigen::VectorXd project_exact(const Projection& a, const Eigen::VectorXd& z, const PromptBase& p0);

}  // namespace bbt
