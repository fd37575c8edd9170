#pragma once

// The tuning loop: ask -> evaluate every candidate on the full training
// batch -> tell, under an API-call budget with dev-accuracy early stopping.
// Also the Adam-in-subspace baseline and CSV/JSON reporting.

#include "bbt/benchmarks.hpp"
#include "bbt/inference.hpp"
#include "bbt/losses.hpp"
#include "bbt/optimizer.hpp"
#include "bbt/protocol.hpp"
#include "bbt/subspace.hpp"
#include "bbt/task.hpp"

#include <atomic>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bbt {

enum class EvalMode : std::uint8_t {
  Sequential,          ///< one API call per candidate
  PopulationParallel,  ///< candidates issued concurrently, one call per generation
};
enum class StopReason : std::uint8_t { BudgetExhausted, EarlyStopped, GenerationLimit };

std::string to_string(EvalMode mode);
std::string to_string(StopReason reason);

struct TuneConfig {
  std::size_t prompt_length = 50;
  std::size_t embed_dim = 64;  ///< width of the surrogate's embeddings
  std::size_t sub_dim = 500;
  std::size_t popsize = 20;
  ProjectionDistribution distribution = ProjectionDistribution::UniformFanIn;
  LossKind loss = LossKind::CrossEntropy;
  std::uint64_t budget = 8000;
  EvalMode eval_mode = EvalMode::Sequential;
  std::uint64_t early_stop_patience = 1000;  ///< in API calls; 0 disables
  bool dev_eval = true;
  std::uint64_t max_generations = 0;  ///< 0 means unlimited

  std::uint64_t model_seed = 1;
  std::uint64_t projection_seed = 2;
  std::uint64_t task_seed = 3;
  std::uint64_t optimizer_seed = 4;

  double sigma0 = 1.0;
  double bound = 5.0;
  double adam_lr = 1e-3;
  Eigen::VectorXd start;  ///< empty means the origin

  std::size_t full_dim() const { return prompt_length * embed_dim; }
  ProjectionSpec projection_spec() const;
  CmaConfig cma_config() const;
};

struct CurvePoint {
  std::uint64_t api_calls = 0;
  double train_loss = 0.0;    ///< best training loss so far
  double dev_accuracy = std::numeric_limits<double>::quiet_NaN();  ///< at the current best, NaN if never measured

  bool operator==(const CurvePoint& o) const;
};

struct TuneResult {
  Eigen::VectorXd best_z;
  double best_train_loss = std::numeric_limits<double>::quiet_NaN();
  double dev_accuracy = std::numeric_limits<double>::quiet_NaN();  ///< measured at best_z
  std::vector<CurvePoint> curves;
  StopReason stop_reason = StopReason::BudgetExhausted;
  std::uint64_t api_calls = 0;        ///< charged against the budget
  std::uint64_t requests = 0;         ///< evaluator invocations actually issued
  std::uint64_t generations = 0;      ///< optimizer iterations
  std::uint64_t dev_evaluations = 0;
  double flops_equivalent_iterations = 0;  ///< CMA-ES iteration units (Adam step = 3)
  double wall_time_seconds = 0;
  std::uint64_t bytes_uploaded = 0;
  std::uint64_t bytes_downloaded = 0;
};

/// What the driver minimizes. Every candidate evaluation is one query of the
/// underlying service.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t dim() const = 0;
  /// Training loss per candidate, in input order. With `concurrent` the
  /// candidates may be evaluated in parallel.
  virtual std::vector<double> train_losses(std::span<const Eigen::VectorXd> candidates, bool concurrent) = 0;
  virtual bool has_dev() const { return false; }
  /// Accuracy in [0, 1] on the dev split; one query.
  virtual double dev_accuracy(const Eigen::VectorXd& z);
  /// Evaluator invocations so far (retries included).
  virtual std::uint64_t queries() const = 0;
  /// Appendix-style byte counts per query: ids + mask + prompt up, logits down.
  virtual std::uint64_t bytes_uploaded() const { return 0; }
  virtual std::uint64_t bytes_downloaded() const { return 0; }
};

/// Objective that also exposes d(loss)/dz; only local surrogates can.
class DifferentiableObjective : public Objective {
 public:
  virtual double loss_and_gradient(const Eigen::VectorXd& z, Eigen::VectorXd* gradient) = 0;
};

/// Few-shot task through an InferenceApi (local or remote).
class TaskObjective : public Objective {
 public:
  TaskObjective(std::shared_ptr<InferenceApi> api, const PlantedTask& task, LossKind loss,
                std::size_t prompt_payload_len);

  std::size_t dim() const override { return dim_; }
  std::vector<double> train_losses(std::span<const Eigen::VectorXd> candidates, bool concurrent) override;
  bool has_dev() const override { return true; }
  double dev_accuracy(const Eigen::VectorXd& z) override;
  std::uint64_t queries() const override { return api_->calls(); }
  std::uint64_t bytes_uploaded() const override { return up_.load(); }
  std::uint64_t bytes_downloaded() const override { return down_.load(); }

 private:
  double train_loss(const Eigen::VectorXd& z);
  Logits query(const Eigen::VectorXd& z, const EvalBatch& batch);

  std::shared_ptr<InferenceApi> api_;
  EvalBatch train_;
  EvalBatch dev_;
  LossKind loss_;
  std::size_t classes_;
  std::size_t dim_;
  std::size_t prompt_payload_len_;
  std::atomic<std::uint64_t> up_{0};
  std::atomic<std::uint64_t> down_{0};
};

/// Task objective with analytic gradients through the local surrogate (double path).
class LocalTaskObjective : public DifferentiableObjective {
 public:
  LocalTaskObjective(std::shared_ptr<const SurrogateModel> model, SubspaceContext context, const PlantedTask& task,
                     LossKind loss);

  std::size_t dim() const override { return context_.projection->sub_dim(); }
  std::vector<double> train_losses(std::span<const Eigen::VectorXd> candidates, bool concurrent) override;
  bool has_dev() const override { return true; }
  double dev_accuracy(const Eigen::VectorXd& z) override;
  std::uint64_t queries() const override { return queries_.load(); }
  double loss_and_gradient(const Eigen::VectorXd& z, Eigen::VectorXd* gradient) override;

 private:
  std::shared_ptr<const SurrogateModel> model_;
  SubspaceContext context_;
  EvalBatch train_;
  EvalBatch dev_;
  LossKind loss_;
  std::atomic<std::uint64_t> queries_{0};
};

class PlantedQuadraticObjective : public DifferentiableObjective {
 public:
  explicit PlantedQuadraticObjective(PlantedQuadratic quadratic) : quadratic_(std::move(quadratic)) {}

  std::size_t dim() const override { return quadratic_.dim(); }
  std::vector<double> train_losses(std::span<const Eigen::VectorXd> candidates, bool concurrent) override;
  std::uint64_t queries() const override { return queries_; }
  double loss_and_gradient(const Eigen::VectorXd& z, Eigen::VectorXd* gradient) override;
  const PlantedQuadratic& quadratic() const { return quadratic_; }

 private:
  PlantedQuadratic quadratic_;
  std::uint64_t queries_ = 0;
};

/// Plain function of z (sphere, Rosenbrock, ...).
class FunctionObjective : public Objective {
 public:
  FunctionObjective(std::size_t dim, std::function<double(const Eigen::VectorXd&)> fn)
      : dim_(dim), fn_(std::move(fn)) {}
  std::size_t dim() const override { return dim_; }
  std::vector<double> train_losses(std::span<const Eigen::VectorXd> candidates, bool concurrent) override;
  std::uint64_t queries() const override { return queries_; }

 private:
  std::size_t dim_;
  std::function<double(const Eigen::VectorXd&)> fn_;
  std::uint64_t queries_ = 0;
};

/// Dev-accuracy observation at a given API-call count.
struct DevRecord {
  std::uint64_t api_calls = 0;
  double accuracy = 0.0;
};

/// True iff the dev accuracy has not strictly improved during the trailing
/// `patience` calls, i.e. now - (call of the last strict improvement) > patience.
/// The first record counts as the initial improvement. `now` defaults to the
/// last record's call count.
bool early_stop_check(std::span<const DevRecord> history, std::uint64_t patience,
                      std::optional<std::uint64_t> now = std::nullopt);

struct GenerationInfo {
  std::uint64_t generation = 0;
  std::uint64_t api_calls = 0;
  std::span<const Eigen::VectorXd> candidates;
  std::span<const double> losses;
  const Eigen::VectorXd* best_z = nullptr;
  double best_loss = 0.0;
  const CmaEs* optimizer = nullptr;  ///< null for Adam
};

struct TuneHooks {
  std::function<void(const GenerationInfo&)> on_generation;
};

TuneResult tune(const TuneConfig& config, Objective& objective, const TuneHooks& hooks = {});
TuneResult adam_tune(const TuneConfig& config, DifferentiableObjective& objective, const TuneHooks& hooks = {});

/// Everything needed to run the toy pipeline: model, subspace and planted task.
struct ToyWorld {
  std::shared_ptr<const SurrogateModel> model;
  SubspaceContext context;
  PlantedTask task;
};

SurrogateConfig surrogate_config_for(const TuneConfig& config, std::size_t classes);
/// p0 seed derived from the projection seed so client and server agree.
std::uint64_t prompt_base_seed(std::uint64_t projection_seed);
ToyWorld make_toy_world(const TuneConfig& config, const PlantOptions& plant);

/// Optimizer sanity runs on closed-form functions.
enum class BenchFunction : std::uint8_t { Sphere, Rosenbrock, Planted };
std::string to_string(BenchFunction fn);
BenchFunction bench_function_from_string(const std::string& name);

struct BenchConfig {
  BenchFunction function = BenchFunction::Sphere;
  std::size_t dim = 10;
  std::size_t popsize = 0;  ///< 0 picks 4 + floor(3 ln d)
  /// Unset picks the per-function default: sphere m0 = 3, sigma0 = 2;
  /// rosenbrock m0 = 0, sigma0 = 0.5; planted m0 = 0, sigma0 = 1.
  std::optional<double> sigma0;
  std::optional<double> start;  ///< m0 = start * ones
  std::uint64_t seed = 0;
  std::uint64_t max_evals = 6000;
  double target = 1e-10;  ///< stop once f(mean) drops below
  // Planted quadratic only.
  std::size_t prompt_length = 50;
  std::size_t embed_dim = 64;
  ProjectionDistribution distribution = ProjectionDistribution::UniformFanIn;
};

struct BenchRow {
  std::uint64_t evals = 0;
  double best = 0.0;       ///< best candidate so far
  double at_mean = 0.0;    ///< f(mean), not charged as an evaluation
  double sigma = 0.0;
};

struct BenchResult {
  std::vector<BenchRow> rows;  ///< one per generation
  double initial = 0.0;        ///< value at m0
  double final_best = 0.0;
  double final_mean = 0.0;
  std::uint64_t evals = 0;
  bool reached_target = false;
};

/// Fills popsize, sigma0 and start with the per-function defaults.
BenchConfig resolve_bench_defaults(BenchConfig config);
BenchResult run_bench(const BenchConfig& config);
std::string bench_csv(const BenchResult& result);

// Reporting. CSV columns: api_calls,train_loss,dev_acc.
std::string curves_csv(const TuneResult& result);
std::string summary_json(const TuneResult& result, const TuneConfig& config);
TuneResult parse_summary_json(const std::string& text);
void write_report(const TuneResult& result, const TuneConfig& config, const std::string& prefix);

std::string config_json(const TuneConfig& config);

}  // namespace bbt
