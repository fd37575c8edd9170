#include "bbt/driver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <random>
#include <stdexcept>

namespace bbt {

std::string to_string(EvalMode mode) { return mode == EvalMode::Sequential ? "sequential" : "parallel"; }

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::BudgetExhausted: return "budget_exhausted";
    case StopReason::EarlyStopped: return "early_stopped";
    case StopReason::GenerationLimit: return "generation_limit";
  }
  return "unknown";
}

ProjectionSpec TuneConfig::projection_spec() const {
  ProjectionSpec spec;
  spec.full_dim = full_dim();
  spec.sub_dim = sub_dim;
  spec.distribution = distribution;
  spec.seed = projection_seed;
  return spec;
}

CmaConfig TuneConfig::cma_config() const {
  CmaConfig c;
  c.dim = sub_dim;
  c.popsize = popsize;
  c.mean0 = start;
  c.sigma0 = sigma0;
  c.seed = optimizer_seed;
  c.lower = -bound;
  c.upper = bound;
  return c;
}

bool CurvePoint::operator==(const CurvePoint& o) const {
  const bool dev_eq = (std::isnan(dev_accuracy) && std::isnan(o.dev_accuracy)) || dev_accuracy == o.dev_accuracy;
  return api_calls == o.api_calls && train_loss == o.train_loss && dev_eq;
}

double Objective::dev_accuracy(const Eigen::VectorXd&) {
  throw std::logic_error("objective has no dev split");
}

namespace {

std::vector<float> to_float(const Eigen::VectorXd& z) {
  std::vector<float> out(static_cast<std::size_t>(z.size()));
  for (Eigen::Index i = 0; i < z.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(z[i]);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Objectives

TaskObjective::TaskObjective(std::shared_ptr<InferenceApi> api, const PlantedTask& task, LossKind loss,
                             std::size_t prompt_payload_len)
    : api_(std::move(api)),
      train_(task.train),
      dev_(task.dev),
      loss_(loss),
      classes_(task.classes),
      dim_(task.spec.sub_dim),
      prompt_payload_len_(prompt_payload_len) {
  if (!api_) throw std::invalid_argument("task objective needs an API");
}

Logits TaskObjective::query(const Eigen::VectorXd& z, const EvalBatch& batch) {
  const auto zf = to_float(z);
  const auto sizes = proto::payload_sizes(batch.batch, batch.seq_len, classes_, prompt_payload_len_);
  Logits logits = api_->query(zf, batch);
  up_ += sizes.upload_total();
  down_ += sizes.download_total();
  return logits;
}

double TaskObjective::train_loss(const Eigen::VectorXd& z) {
  return batch_loss(loss_, query(z, train_), train_.labels);
}

std::vector<double> TaskObjective::train_losses(std::span<const Eigen::VectorXd> candidates, bool concurrent) {
  std::vector<double> out(candidates.size());
  if (!concurrent) {
    for (std::size_t i = 0; i < candidates.size(); ++i) out[i] = train_loss(candidates[i]);
    return out;
  }
  std::vector<std::future<double>> pending;
  pending.reserve(candidates.size());
  for (const auto& c : candidates) {
    pending.push_back(std::async(std::launch::async, [this, &c] { return train_loss(c); }));
  }
  // Collect every future before rethrowing so no task outlives this frame.
  std::exception_ptr failure;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    try {
      out[i] = pending[i].get();
    } catch (...) {
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

double TaskObjective::dev_accuracy(const Eigen::VectorXd& z) { return -neg_accuracy(query(z, dev_), dev_.labels); }

LocalTaskObjective::LocalTaskObjective(std::shared_ptr<const SurrogateModel> model, SubspaceContext context,
                                       const PlantedTask& task, LossKind loss)
    : model_(std::move(model)), context_(std::move(context)), train_(task.train), dev_(task.dev), loss_(loss) {
  if (!model_ || !context_.projection) throw std::invalid_argument("local objective needs a model and projection");
}

std::vector<double> LocalTaskObjective::train_losses(std::span<const Eigen::VectorXd> candidates, bool) {
  std::vector<double> out;
  out.reserve(candidates.size());
  for (const auto& z : candidates) out.push_back(loss_and_gradient(z, nullptr));
  return out;
}

double LocalTaskObjective::dev_accuracy(const Eigen::VectorXd& z) {
  queries_.fetch_add(1);
  const Eigen::VectorXd prompt = project_exact(*context_.projection, z, context_.p0);
  return -neg_accuracy(model_->forward_exact(prompt, dev_), dev_.labels);
}

double LocalTaskObjective::loss_and_gradient(const Eigen::VectorXd& z, Eigen::VectorXd* gradient) {
  queries_.fetch_add(1);
  const Eigen::VectorXd prompt = project_exact(*context_.projection, z, context_.p0);
  if (gradient == nullptr) return batch_loss(loss_, model_->forward_exact(prompt, train_), train_.labels);
  Eigen::VectorXd prompt_grad;
  const double loss = model_->loss_and_prompt_gradient(prompt, train_, loss_, &prompt_grad);
  *gradient = context_.projection->apply_transpose(prompt_grad);
  return loss;
}

std::vector<double> PlantedQuadraticObjective::train_losses(std::span<const Eigen::VectorXd> candidates, bool) {
  queries_ += candidates.size();
  return quadratic_.evaluate_many(candidates);
}

double PlantedQuadraticObjective::loss_and_gradient(const Eigen::VectorXd& z, Eigen::VectorXd* gradient) {
  ++queries_;
  if (gradient == nullptr) return quadratic_(z);
  return quadratic_.value_and_gradient(z, gradient);
}

std::vector<double> FunctionObjective::train_losses(std::span<const Eigen::VectorXd> candidates, bool) {
  std::vector<double> out;
  out.reserve(candidates.size());
  for (const auto& z : candidates) out.push_back(fn_(z));
  queries_ += candidates.size();
  return out;
}

// ---------------------------------------------------------------------------
// Early stopping

bool early_stop_check(std::span<const DevRecord> history, std::uint64_t patience, std::optional<std::uint64_t> now) {
  if (patience == 0 || history.empty()) return false;
  std::uint64_t last_improvement = history.front().api_calls;
  double best = history.front().accuracy;
  for (const auto& rec : history.subspan(1)) {
    if (rec.accuracy > best) {
      best = rec.accuracy;
      last_improvement = rec.api_calls;
    }
  }
  const std::uint64_t t = now.value_or(history.back().api_calls);
  return t > last_improvement && t - last_improvement > patience;
}

// ---------------------------------------------------------------------------
// Tuning loops

namespace {

using Clock = std::chrono::steady_clock;

/// Bookkeeping shared by the CMA-ES and Adam loops.
class Ledger {
 public:
  Ledger(const TuneConfig& config, Objective& objective)
      : config_(config), objective_(objective), start_(Clock::now()), queries0_(objective.queries()),
        up0_(objective.bytes_uploaded()), down0_(objective.bytes_downloaded()) {}

  bool can_afford(std::uint64_t cost) const { return charged_ + cost <= config_.budget; }
  void charge(std::uint64_t cost) { charged_ += cost; }
  std::uint64_t charged() const { return charged_; }

  /// Records a generation's outcome; returns true when the best improved.
  bool observe(std::span<const Eigen::VectorXd> points, std::span<const double> losses) {
    bool improved = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (losses[i] < best_loss_) {
        best_loss_ = losses[i];
        best_z_ = points[i];
        improved = true;
      }
    }
    if (improved && config_.dev_eval && objective_.has_dev() && can_afford(1)) {
      const std::uint64_t before = objective_.queries();
      dev_ = objective_.dev_accuracy(best_z_);
      charge(std::max<std::uint64_t>(1, objective_.queries() - before));
      ++dev_evals_;
      history_.push_back({charged_, dev_});
    } else if (improved) {
      dev_ = std::numeric_limits<double>::quiet_NaN();
    }
    result_.curves.push_back({charged_, best_loss_, dev_});
    return improved;
  }

  bool should_stop_early() const { return early_stop_check(history_, config_.early_stop_patience, charged_); }

  const Eigen::VectorXd& best_z() const { return best_z_; }
  double best_loss() const { return best_loss_; }

  TuneResult finish(StopReason reason, std::uint64_t iterations, double flops_per_iteration, std::size_t dim) {
    result_.best_z = best_z_.size() == 0 ? Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim)) : best_z_;
    result_.best_train_loss = best_z_.size() == 0 ? std::numeric_limits<double>::quiet_NaN() : best_loss_;
    result_.dev_accuracy = dev_;
    result_.stop_reason = reason;
    result_.api_calls = charged_;
    result_.requests = objective_.queries() - queries0_;
    result_.generations = iterations;
    result_.dev_evaluations = dev_evals_;
    result_.flops_equivalent_iterations = flops_per_iteration * static_cast<double>(iterations);
    result_.wall_time_seconds = std::chrono::duration<double>(Clock::now() - start_).count();
    result_.bytes_uploaded = objective_.bytes_uploaded() - up0_;
    result_.bytes_downloaded = objective_.bytes_downloaded() - down0_;
    return std::move(result_);
  }

 private:
  const TuneConfig& config_;
  Objective& objective_;
  Clock::time_point start_;
  std::uint64_t queries0_, up0_, down0_;
  std::uint64_t charged_ = 0;
  std::uint64_t dev_evals_ = 0;
  Eigen::VectorXd best_z_;
  double best_loss_ = std::numeric_limits<double>::infinity();
  double dev_ = std::numeric_limits<double>::quiet_NaN();
  std::vector<DevRecord> history_;
  TuneResult result_;
};

void replace_non_finite(std::vector<double>& losses) {
  double worst = -std::numeric_limits<double>::infinity();
  bool any_bad = false;
  for (double v : losses) {
    if (std::isfinite(v)) {
      worst = std::max(worst, v);
    } else {
      any_bad = true;
    }
  }
  if (!any_bad) return;
  if (!std::isfinite(worst)) worst = std::numeric_limits<double>::max();
  for (double& v : losses) {
    if (!std::isfinite(v)) v = worst;
  }
}

}  // namespace

TuneResult tune(const TuneConfig& config, Objective& objective, const TuneHooks& hooks) {
  CmaConfig cma_config = config.cma_config();
  cma_config.dim = objective.dim();
  Ledger ledger(config, objective);
  const bool parallel = config.eval_mode == EvalMode::PopulationParallel;
  const std::uint64_t cost = parallel ? 1 : cma_config.popsize;

  if (config.budget == 0) return ledger.finish(StopReason::BudgetExhausted, 0, 1.0, objective.dim());
  CmaEs cma(cma_config);

  std::uint64_t generation = 0;
  StopReason reason = StopReason::BudgetExhausted;
  while (true) {
    if (config.max_generations != 0 && generation >= config.max_generations) {
      reason = StopReason::GenerationLimit;
      break;
    }
    if (!ledger.can_afford(cost)) {
      reason = StopReason::BudgetExhausted;
      break;
    }
    const std::vector<Eigen::VectorXd>& candidates = cma.ask();
    const std::uint64_t before = objective.queries();
    std::vector<double> losses = objective.train_losses(candidates, parallel);
    if (losses.size() != candidates.size()) throw std::logic_error("objective returned the wrong number of losses");
    // Transport retries are charged on top of the nominal cost.
    const std::uint64_t issued = objective.queries() - before;
    ledger.charge(cost + (issued > candidates.size() ? issued - candidates.size() : 0));
    replace_non_finite(losses);
    cma.tell(candidates, losses);
    ++generation;
    ledger.observe(candidates, losses);

    if (hooks.on_generation) {
      GenerationInfo info;
      info.generation = generation;
      info.api_calls = ledger.charged();
      info.candidates = candidates;
      info.losses = losses;
      info.best_z = &ledger.best_z();
      info.best_loss = ledger.best_loss();
      info.optimizer = &cma;
      hooks.on_generation(info);
    }
    if (ledger.should_stop_early()) {
      reason = StopReason::EarlyStopped;
      break;
    }
  }
  return ledger.finish(reason, generation, 1.0, objective.dim());
}

TuneResult adam_tune(const TuneConfig& config, DifferentiableObjective& objective, const TuneHooks& hooks) {
  Ledger ledger(config, objective);
  const auto dim = static_cast<Eigen::Index>(objective.dim());
  if (config.start.size() != 0 && config.start.size() != dim) {
    throw std::invalid_argument("start vector has the wrong dimension");
  }
  AdamState adam = AdamState::start(config.start.size() == 0 ? Eigen::VectorXd::Zero(dim) : config.start,
                                    config.adam_lr);
  std::uint64_t steps = 0;
  StopReason reason = StopReason::BudgetExhausted;
  Eigen::VectorXd gradient;
  while (true) {
    if (config.max_generations != 0 && steps >= config.max_generations) {
      reason = StopReason::GenerationLimit;
      break;
    }
    if (!ledger.can_afford(1)) {
      reason = StopReason::BudgetExhausted;
      break;
    }
    const Eigen::VectorXd point = adam.point;
    const double loss = objective.loss_and_gradient(point, &gradient);
    ledger.charge(1);
    if (!std::isfinite(loss) || !gradient.allFinite()) throw std::runtime_error("non-finite loss or gradient");
    ledger.observe(std::span<const Eigen::VectorXd>(&point, 1), std::span<const double>(&loss, 1));
    adam_step(adam, gradient);
    ++steps;

    if (hooks.on_generation) {
      GenerationInfo info;
      info.generation = steps;
      info.api_calls = ledger.charged();
      info.candidates = std::span<const Eigen::VectorXd>(&point, 1);
      info.losses = std::span<const double>(&loss, 1);
      info.best_z = &ledger.best_z();
      info.best_loss = ledger.best_loss();
      hooks.on_generation(info);
    }
    if (ledger.should_stop_early()) {
      reason = StopReason::EarlyStopped;
      break;
    }
  }
  // Forward + backward + update against one CMA-ES forward-only iteration.
  return ledger.finish(reason, steps, 3.0, objective.dim());
}

// ---------------------------------------------------------------------------
// Toy pipeline

SurrogateConfig surrogate_config_for(const TuneConfig& config, std::size_t classes) {
  SurrogateConfig s;
  s.embed_dim = config.embed_dim;
  s.classes = classes;
  s.seed = config.model_seed;
  return s;
}

std::uint64_t prompt_base_seed(std::uint64_t projection_seed) { return projection_seed ^ 0x9e3779b97f4a7c15ULL; }

ToyWorld make_toy_world(const TuneConfig& config, const PlantOptions& plant) {
  ToyWorld world;
  auto model = std::make_shared<const SurrogateModel>(surrogate_config_for(config, plant.classes));
  const ProjectionSpec spec = config.projection_spec();
  world.context = make_subspace_context(spec, *model, prompt_base_seed(config.projection_seed));
  world.task = plant_task(plant, *model, spec, *world.context.projection, world.context.p0);
  world.model = std::move(model);
  return world;
}

}  // namespace bbt

// ---------------------------------------------------------------------------
// Benchmarks

namespace bbt {

std::string to_string(BenchFunction fn) {
  switch (fn) {
    case BenchFunction::Sphere: return "sphere";
    case BenchFunction::Rosenbrock: return "rosenbrock";
    case BenchFunction::Planted: return "planted";
  }
  return "unknown";
}

BenchFunction bench_function_from_string(const std::string& name) {
  for (auto fn : {BenchFunction::Sphere, BenchFunction::Rosenbrock, BenchFunction::Planted}) {
    if (to_string(fn) == name) return fn;
  }
  throw std::invalid_argument("unknown benchmark function '" + name + "'");
}

BenchConfig resolve_bench_defaults(BenchConfig config) {
  double start = 0.0;
  double sigma0 = 1.0;
  if (config.function == BenchFunction::Sphere) {
    start = 3.0;
    sigma0 = 2.0;
  } else if (config.function == BenchFunction::Rosenbrock) {
    sigma0 = 0.5;
  }
  if (config.popsize == 0) config.popsize = default_popsize(config.dim);
  if (!config.sigma0) config.sigma0 = sigma0;
  if (!config.start) config.start = start;
  return config;
}

BenchResult run_bench(const BenchConfig& config) {
  if (config.dim == 0) throw std::invalid_argument("bench: dimension must be positive");
  std::function<std::vector<double>(std::span<const Eigen::VectorXd>)> evaluate;
  std::shared_ptr<PlantedQuadratic> planted;
  switch (config.function) {
    case BenchFunction::Sphere:
    case BenchFunction::Rosenbrock: {
      const auto fn = config.function == BenchFunction::Sphere ? &sphere : &rosenbrock;
      evaluate = [fn](std::span<const Eigen::VectorXd> xs) {
        std::vector<double> out;
        out.reserve(xs.size());
        for (const auto& x : xs) out.push_back(fn(x));
        return out;
      };
      break;
    }
    case BenchFunction::Planted: {
      ProjectionSpec spec;
      spec.full_dim = config.prompt_length * config.embed_dim;
      spec.sub_dim = config.dim;
      spec.distribution = config.distribution;
      spec.seed = config.seed + 1;
      planted = std::make_shared<PlantedQuadratic>(std::make_shared<const Projection>(spec),
                                                   planted_target(spec, config.seed + 2));
      evaluate = [planted](std::span<const Eigen::VectorXd> xs) { return planted->evaluate_many(xs); };
      break;
    }
  }

  const BenchConfig r = resolve_bench_defaults(config);
  CmaConfig cma;
  cma.dim = r.dim;
  cma.popsize = r.popsize;
  cma.sigma0 = *r.sigma0;
  cma.seed = r.seed;
  cma.mean0 = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(r.dim), *r.start);

  const auto value_at = [&](const Eigen::VectorXd& x) { return evaluate(std::span<const Eigen::VectorXd>(&x, 1)).front(); };
  BenchResult result;
  result.initial = value_at(cma.mean0);
  CmaEs es(cma);
  double best = std::numeric_limits<double>::infinity();
  double at_mean = result.initial;
  std::uint64_t evals = 0;
  while (evals + cma.popsize <= config.max_evals) {
    const auto& xs = es.ask();
    const std::vector<double> f = evaluate(xs);
    es.tell(xs, f);
    evals += cma.popsize;
    best = std::min(best, *std::min_element(f.begin(), f.end()));
    at_mean = value_at(es.state().mean);
    result.rows.push_back({evals, best, at_mean, es.state().sigma});
    if (at_mean < config.target) {
      result.reached_target = true;
      break;
    }
  }
  result.final_best = best;
  result.final_mean = at_mean;
  result.evals = evals;
  return result;
}

std::string bench_csv(const BenchResult& result) {
  std::string out = "evals,best_f,mean_f,sigma\n";
  char buf[128];
  for (const auto& r : result.rows) {
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(r.evals), r.best,
                  r.at_mean, r.sigma);
    out += buf;
  }
  return out;
}

}  // namespace bbt
