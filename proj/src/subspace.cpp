#include "bbt/subspace.hpp"

#include "bbt/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace bbt {

namespace {

// Rows of A converted to double per block; keeps the block in cache for the
// double-precision GEMV/GEMM.
constexpr Eigen::Index kRowBlock = 256;

}  // namespace

std::string to_string(ProjectionDistribution dist) {
  switch (dist) {
    case ProjectionDistribution::UniformFanIn: return "uniform";
    case ProjectionDistribution::NormalOneOverD: return "normal";
  }
  return "unknown";
}

ProjectionDistribution projection_distribution_from_string(const std::string& name) {
  if (name == "uniform") return ProjectionDistribution::UniformFanIn;
  if (name == "normal") return ProjectionDistribution::NormalOneOverD;
  throw std::invalid_argument("unknown projection distribution '" + name + "'");
}

void ProjectionSpec::validate() const {
  if (full_dim == 0 || sub_dim == 0) throw std::invalid_argument("projection dimensions must be positive");
  if (sub_dim > full_dim) {
    throw std::invalid_argument("projection sub_dim (" + std::to_string(sub_dim) +
                                ") exceeds full_dim (" + std::to_string(full_dim) + ")");
  }
}

double ProjectionSpec::entry_stddev() const {
  const double d = static_cast<double>(sub_dim);
  switch (distribution) {
    case ProjectionDistribution::UniformFanIn: return std::sqrt(6.0 / d) / std::sqrt(3.0);
    case ProjectionDistribution::NormalOneOverD: return std::sqrt(1.0 / d);
  }
  return 0.0;
}

Projection::Projection(const ProjectionSpec& spec) {
  spec.validate();
  a_.resize(static_cast<Eigen::Index>(spec.full_dim), static_cast<Eigen::Index>(spec.sub_dim));
  std::mt19937_64 rng(spec.seed);
  const double d = static_cast<double>(spec.sub_dim);
  float* out = a_.data();
  const auto n = a_.size();
  if (spec.distribution == ProjectionDistribution::UniformFanIn) {
    const double bound = std::sqrt(6.0 / d);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = static_cast<float>(dist(rng));
  } else {
    std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / d));
    for (Eigen::Index i = 0; i < n; ++i) out[i] = static_cast<float>(dist(rng));
  }
}

Projection Projection::from_matrix(Storage values) {
  Projection p;
  p.a_ = std::move(values);
  return p;
}

Eigen::VectorXd Projection::apply(const Eigen::VectorXd& z) const {
  if (z.size() != a_.cols()) throw std::invalid_argument("projection: z has the wrong dimension");
  Eigen::VectorXd out(a_.rows());
  Eigen::MatrixXd block(std::min(kRowBlock, a_.rows()), a_.cols());
  for (Eigen::Index r = 0; r < a_.rows(); r += kRowBlock) {
    const Eigen::Index n = std::min(kRowBlock, a_.rows() - r);
    block.topRows(n) = a_.middleRows(r, n).cast<double>();
    out.segment(r, n).noalias() = block.topRows(n) * z;
  }
  return out;
}

Eigen::MatrixXd Projection::apply_many(const Eigen::MatrixXd& zs) const {
  if (zs.rows() != a_.cols()) throw std::invalid_argument("projection: z block has the wrong dimension");
  Eigen::MatrixXd out(a_.rows(), zs.cols());
  Eigen::MatrixXd block(std::min(kRowBlock, a_.rows()), a_.cols());
  for (Eigen::Index r = 0; r < a_.rows(); r += kRowBlock) {
    const Eigen::Index n = std::min(kRowBlock, a_.rows() - r);
    block.topRows(n) = a_.middleRows(r, n).cast<double>();
    out.middleRows(r, n).noalias() = block.topRows(n) * zs;
  }
  return out;
}

Eigen::VectorXd Projection::apply_transpose(const Eigen::VectorXd& v) const {
  if (v.size() != a_.rows()) throw std::invalid_argument("projection: v has the wrong dimension");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(a_.cols());
  Eigen::MatrixXd block(std::min(kRowBlock, a_.rows()), a_.cols());
  for (Eigen::Index r = 0; r < a_.rows(); r += kRowBlock) {
    const Eigen::Index n = std::min(kRowBlock, a_.rows() - r);
    block.topRows(n) = a_.middleRows(r, n).cast<double>();
    out.noalias() += block.topRows(n).transpose() * v.segment(r, n);
  }
  return out;
}

PromptBase make_prompt_base(PromptSource kind, std::size_t prompt_length, std::size_t embed_dim,
                            const EmbeddingTable* vocab, std::uint64_t seed) {
  PromptBase base;
  base.source = kind;
  switch (kind) {
    case PromptSource::Zeros:
      base.values.assign(prompt_length * embed_dim, 0.0f);
      return base;
    case PromptSource::RandomVocabTokens: {
      if (vocab == nullptr) throw std::invalid_argument("random-token prompt needs a vocabulary table");
      if (static_cast<std::size_t>(vocab->cols()) != embed_dim) {
        throw std::invalid_argument("vocabulary embedding width does not match embed_dim");
      }
      const auto rows = static_cast<std::size_t>(vocab->rows());
      if (prompt_length > rows) {
        throw std::invalid_argument("prompt length " + std::to_string(prompt_length) +
                                    " exceeds vocabulary size " + std::to_string(rows));
      }
      // Partial Fisher-Yates: first prompt_length entries are a uniform draw
      // without replacement.
      std::vector<std::size_t> ids(rows);
      std::iota(ids.begin(), ids.end(), std::size_t{0});
      std::mt19937_64 rng(seed);
      for (std::size_t i = 0; i < prompt_length; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, rows - 1);
        std::swap(ids[i], ids[pick(rng)]);
      }
      base.values.resize(prompt_length * embed_dim);
      for (std::size_t l = 0; l < prompt_length; ++l) {
        const auto row = vocab->row(static_cast<Eigen::Index>(ids[l]));
        std::copy(row.data(), row.data() + embed_dim, base.values.begin() + static_cast<std::ptrdiff_t>(l * embed_dim));
      }
      return base;
    }
    case PromptSource::Loaded:
      throw std::invalid_argument("use load_prompt_base for Loaded prompts");
  }
  return base;
}

void save_prompt_base(const PromptBase& base, const std::string& path) {
  ByteWriter w(8 + 4 * base.values.size());
  w.magic("BBP0");
  w.put(static_cast<std::uint32_t>(base.values.size()));
  w.put_array(std::span<const float>(base.values));
  write_file(path, std::move(w).take());
}

PromptBase load_prompt_base(const std::string& path) {
  const Bytes bytes = read_file(path);
  ByteReader r(bytes);
  if (!r.magic("BBP0")) throw std::runtime_error(path + ": not a prompt file (bad magic)");
  const auto n = r.get<std::uint32_t>("length");
  PromptBase base;
  base.values = r.get_array<float>(n, "prompt values");
  base.source = PromptSource::Loaded;
  if (r.remaining() != 0) throw std::runtime_error(path + ": trailing bytes after prompt values");
  return base;
}

Eigen::VectorXd project_exact(const Projection& a, const Eigen::VectorXd& z, const PromptBase& p0) {
  if (p0.values.size() != a.full_dim()) {
    throw std::invalid_argument("project: p0 length does not match the projection");
  }
  if (!z.allFinite()) throw std::invalid_argument("project: z must be finite");
  Eigen::VectorXd p = a.apply(z);
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += static_cast<double>(p0.values[static_cast<std::size_t>(i)]);
  return p;
}

std::vector<float> project(const Projection& a, std::span<const float> z, const PromptBase& p0) {
  if (z.size() != a.sub_dim()) throw std::invalid_argument("project: z has the wrong dimension");
  Eigen::VectorXd zd(static_cast<Eigen::Index>(z.size()));
  for (std::size_t i = 0; i < z.size(); ++i) zd[static_cast<Eigen::Index>(i)] = z[i];
  const Eigen::VectorXd p = project_exact(a, zd, p0);
  std::vector<float> out(static_cast<std::size_t>(p.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(p[i]);
  return out;
}

}  // namespace bbt
