#include "bbt/benchmarks.hpp"
#include "bbt/binary_io.hpp"
#include "bbt/subspace.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

using bbt::Projection;
using bbt::ProjectionDistribution;
using bbt::ProjectionSpec;

namespace {

ProjectionSpec spec_of(std::size_t D, std::size_t d, ProjectionDistribution dist, std::uint64_t seed) {
  ProjectionSpec s;
  s.full_dim = D;
  s.sub_dim = d;
  s.distribution = dist;
  s.seed = seed;
  return s;
}

std::vector<float> random_z(std::size_t d, std::uint64_t seed, double bound = 5.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(static_cast<float>(-bound), static_cast<float>(bound));
  std::vector<float> z(d);
  for (auto& v : z) v = u(rng);
  return z;
}

}  // namespace

TEST_CASE("uniform entries respect the fan-in bound") {
  Projection a(spec_of(4000, 500, ProjectionDistribution::UniformFanIn, 1));
  const float bound = static_cast<float>(std::sqrt(6.0 / 500.0));
  CHECK(a.matrix().cwiseAbs().maxCoeff() <= bound);
  CHECK(a.matrix().cwiseAbs().maxCoeff() > 0.99f * bound);
}

TEST_CASE("normal entries have variance 1/d") {
  Projection a(spec_of(10000, 100, ProjectionDistribution::NormalOneOverD, 2));
  const Eigen::ArrayXd v = a.matrix().cast<double>().reshaped().array();
  const double var = (v - v.mean()).square().mean();
  CHECK(var == doctest::Approx(0.01).epsilon(0.1));
}

TEST_CASE("same spec regenerates the same matrix") {
  for (auto dist : {ProjectionDistribution::UniformFanIn, ProjectionDistribution::NormalOneOverD}) {
    const auto s = spec_of(300, 40, dist, 77);
    CHECK(Projection(s).matrix() == Projection(s).matrix());
    CHECK_FALSE(Projection(s).matrix() == Projection(spec_of(300, 40, dist, 78)).matrix());
  }
}

TEST_CASE("invalid specs") {
  CHECK_THROWS_AS(Projection(spec_of(10, 11, ProjectionDistribution::UniformFanIn, 0)), std::invalid_argument);
  CHECK_THROWS_AS(Projection(spec_of(0, 0, ProjectionDistribution::UniformFanIn, 0)), std::invalid_argument);
  CHECK_THROWS_AS(bbt::projection_distribution_from_string("cauchy"), std::invalid_argument);
  CHECK(bbt::projection_distribution_from_string("normal") == ProjectionDistribution::NormalOneOverD);
}

TEST_CASE("project at z = 0 returns p0") {
  Projection a(spec_of(120, 10, ProjectionDistribution::UniformFanIn, 3));
  bbt::PromptBase p0;
  p0.values = random_z(120, 9);
  const std::vector<float> z(10, 0.0f);
  CHECK(bbt::project(a, z, p0) == p0.values);
}

TEST_CASE("all-ones projection sums z") {
  const auto a = Projection::from_matrix(Projection::Storage::Ones(64, 7));
  const auto p0 = bbt::make_prompt_base(bbt::PromptSource::Zeros, 8, 8, nullptr, 0);
  const std::vector<float> z(7, 1.0f);
  for (float v : bbt::project(a, z, p0)) CHECK(v == 7.0f);
}

TEST_CASE("projection is linear") {
  Projection a(spec_of(2000, 50, ProjectionDistribution::UniformFanIn, 4));
  const auto p0 = bbt::make_prompt_base(bbt::PromptSource::Zeros, 40, 50, nullptr, 0);
  const auto z1 = random_z(50, 1), z2 = random_z(50, 2);
  const float alpha = 0.7f, beta = -1.3f;
  std::vector<float> mix(50);
  for (std::size_t i = 0; i < 50; ++i) mix[i] = alpha * z1[i] + beta * z2[i];
  const auto p1 = bbt::project(a, z1, p0), p2 = bbt::project(a, z2, p0), pm = bbt::project(a, mix, p0);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < pm.size(); ++i) {
    const double lin = alpha * static_cast<double>(p1[i]) + beta * static_cast<double>(p2[i]);
    num += std::pow(pm[i] - lin, 2);
    den += lin * lin;
  }
  CHECK(std::sqrt(num / den) < 1e-6);
}

TEST_CASE("project rejects mismatched shapes and non-finite z") {
  Projection a(spec_of(100, 10, ProjectionDistribution::UniformFanIn, 5));
  const auto p0 = bbt::make_prompt_base(bbt::PromptSource::Zeros, 10, 10, nullptr, 0);
  const auto short_p0 = bbt::make_prompt_base(bbt::PromptSource::Zeros, 9, 10, nullptr, 0);
  CHECK_THROWS_AS(bbt::project(a, std::vector<float>(9, 0.0f), p0), std::invalid_argument);
  CHECK_THROWS_AS(bbt::project(a, std::vector<float>(10, 0.0f), short_p0), std::invalid_argument);
  std::vector<float> z(10, 0.0f);
  z[4] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(bbt::project(a, z, p0), std::invalid_argument);
}

TEST_CASE("apply_many and apply_transpose agree with dense products") {
  Projection a(spec_of(700, 30, ProjectionDistribution::NormalOneOverD, 6));
  const Eigen::MatrixXd dense = a.matrix().cast<double>();
  Eigen::MatrixXd zs = Eigen::MatrixXd::Random(30, 4);
  CHECK((a.apply_many(zs) - dense * zs).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.apply(zs.col(1)) - dense * zs.col(1)).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::VectorXd v = Eigen::VectorXd::Random(700);
  CHECK((a.apply_transpose(v) - dense.transpose() * v).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("prompt base from vocabulary rows") {
  bbt::EmbeddingTable one(1, 4);
  one << 1, 2, 3, 4;
  const auto p = bbt::make_prompt_base(bbt::PromptSource::RandomVocabTokens, 1, 4, &one, 5);
  CHECK(p.values == std::vector<float>{1, 2, 3, 4});
  CHECK_THROWS_AS(bbt::make_prompt_base(bbt::PromptSource::RandomVocabTokens, 2, 4, &one, 5), std::invalid_argument);
  CHECK_THROWS_AS(bbt::make_prompt_base(bbt::PromptSource::RandomVocabTokens, 1, 4, nullptr, 5),
                  std::invalid_argument);

  // Rows are drawn without replacement.
  bbt::EmbeddingTable table(60, 2);
  for (int r = 0; r < 60; ++r) table.row(r) << static_cast<float>(r), static_cast<float>(-r);
  const auto q = bbt::make_prompt_base(bbt::PromptSource::RandomVocabTokens, 60, 2, &table, 8);
  std::vector<float> firsts;
  for (std::size_t l = 0; l < 60; ++l) {
    CHECK(q.values[2 * l + 1] == -q.values[2 * l]);
    firsts.push_back(q.values[2 * l]);
  }
  std::sort(firsts.begin(), firsts.end());
  for (int r = 0; r < 60; ++r) CHECK(firsts[static_cast<std::size_t>(r)] == static_cast<float>(r));
}

TEST_CASE("zero prompt base at table scale") {
  const auto p = bbt::make_prompt_base(bbt::PromptSource::Zeros, 50, 1024, nullptr, 0);
  CHECK(p.values.size() == 51200);
  CHECK(std::all_of(p.values.begin(), p.values.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("prompt base file round trip") {
  const auto path = (std::filesystem::temp_directory_path() / "bbt_prompt_roundtrip.bin").string();
  bbt::PromptBase p;
  p.values = random_z(333, 12);
  p.values[5] = -0.0f;
  p.values[6] = std::numeric_limits<float>::denorm_min();
  bbt::save_prompt_base(p, path);
  const auto q = bbt::load_prompt_base(path);
  CHECK(q.source == bbt::PromptSource::Loaded);
  REQUIRE(q.values.size() == p.values.size());
  CHECK(std::memcmp(q.values.data(), p.values.data(), 4 * p.values.size()) == 0);

  auto bytes = bbt::read_file(path);
  CHECK(bytes.size() == 8 + 4 * 333);
  bytes.pop_back();
  bbt::write_file(path, bytes);
  CHECK_THROWS(bbt::load_prompt_base(path));
  bytes[0] = 'X';
  bbt::write_file(path, bytes);
  CHECK_THROWS(bbt::load_prompt_base(path));
  std::filesystem::remove(path);
}

TEST_CASE("the planted optimum is reachable exactly") {
  auto spec = spec_of(1200, 40, ProjectionDistribution::UniformFanIn, 9);
  auto a = std::make_shared<const Projection>(spec);
  bbt::PromptBase p0;
  p0.values = random_z(1200, 3, 1.0);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto zstar = random_z(40, rng(), 5.0);
    const auto target = bbt::project(*a, zstar, p0);
    CHECK(bbt::prompt_distance_squared(bbt::project(*a, zstar, p0), target) == 0.0);
    Eigen::VectorXd zd(40);
    for (int i = 0; i < 40; ++i) zd[i] = zstar[static_cast<std::size_t>(i)];
    bbt::PlantedQuadratic g(a, zd);
    CHECK(g(zd) == 0.0);
  }
}

TEST_CASE("uniform fan-in keeps E||Az||^2 constant across d for z in the box") {
  // Entries have variance 2/d, so for z uniform in [-5,5]^d the expected
  // squared norm is D * d * (25/3) * (2/d), independent of d.
  const std::size_t D = 4000;
  std::vector<double> means;
  for (std::size_t d : {100u, 500u, 1000u}) {
    Projection a(spec_of(D, d, ProjectionDistribution::UniformFanIn, d));
    double acc = 0, ratio = 0;
    const int draws = 20;
    for (int k = 0; k < draws; ++k) {
      const auto z = random_z(d, 1000 + static_cast<std::uint64_t>(k));
      Eigen::VectorXd zd(static_cast<Eigen::Index>(d));
      for (std::size_t i = 0; i < d; ++i) zd[static_cast<Eigen::Index>(i)] = z[i];
      const double n2 = a.apply(zd).squaredNorm();
      acc += n2;
      ratio += n2 / zd.squaredNorm();
    }
    means.push_back(acc / draws);
    // Per unit ||z||^2 the gain is D * 2/d.
    CHECK(ratio / draws * static_cast<double>(d) == doctest::Approx(2.0 * D).epsilon(0.15));
  }
  const double expected = D * 2.0 * 25.0 / 3.0;
  for (double m : means) CHECK(m == doctest::Approx(expected).epsilon(0.15));
}

TEST_CASE("planted target keeps the prompt offset distribution across projections") {
  auto u = spec_of(800, 100, ProjectionDistribution::UniformFanIn, 1);
  auto n = spec_of(800, 100, ProjectionDistribution::NormalOneOverD, 1);
  const auto zu = bbt::planted_target(u, 5);
  const auto zn = bbt::planted_target(n, 5);
  CHECK(zu.cwiseAbs().maxCoeff() <= 4.0);
  const double ratio = zn.norm() / zu.norm();
  CHECK(ratio == doctest::Approx(u.entry_stddev() / n.entry_stddev()));
}
