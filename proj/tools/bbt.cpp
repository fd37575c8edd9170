// bbt: serve, tune, bench, sizes, plant, report.

#include "bbt/driver.hpp"
#include "bbt/protocol.hpp"
#include "bbt/service.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace bbt;
using nlohmann::json;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

void print_config(const std::string& command, const json& config) {
  std::cout << "config " << command << " " << config.dump() << "\n" << std::flush;
}

std::map<std::string, ProjectionDistribution> distribution_names() {
  return {{"uniform", ProjectionDistribution::UniformFanIn}, {"normal", ProjectionDistribution::NormalOneOverD}};
}

std::map<std::string, LossKind> loss_names() {
  return {{"ce", LossKind::CrossEntropy}, {"hinge", LossKind::Hinge}, {"acc", LossKind::NegAccuracy}};
}

std::map<std::string, BenchFunction> bench_names() {
  return {{"sphere", BenchFunction::Sphere}, {"rosenbrock", BenchFunction::Rosenbrock}, {"planted", BenchFunction::Planted}};
}

/// Model and subspace flags shared by serve, tune and plant; all three must
/// agree for a task file and a server to describe the same world.
struct WorldFlags {
  std::size_t prompt_length = 50;
  std::size_t embed_dim = 64;
  std::size_t sub_dim = 500;
  std::size_t classes = 2;
  ProjectionDistribution distribution = ProjectionDistribution::UniformFanIn;
  std::uint64_t model_seed = 1;
  std::uint64_t projection_seed = 2;

  void add_to(CLI::App* app, bool with_classes) {
    app->add_option("--L", prompt_length, "Prompt length in tokens")->check(CLI::PositiveNumber);
    app->add_option("--embed-dim", embed_dim, "Embedding width of the model")->check(CLI::PositiveNumber);
    app->add_option("--d,--subspace", sub_dim, "Subspace dimension")->check(CLI::PositiveNumber);
    if (with_classes) app->add_option("--K", classes, "Number of classes")->check(CLI::Range(2, 255));
    app->add_option("--distribution", distribution, "Random projection: uniform or normal")
        ->transform(CLI::CheckedTransformer(distribution_names(), CLI::ignore_case))
        ->option_text("uniform|normal");
    app->add_option("--model-seed", model_seed, "Seed of the surrogate model");
    app->add_option("--projection-seed,--proj-seed", projection_seed, "Seed of the projection and initial prompt");
  }

  TuneConfig apply(TuneConfig c) const {
    c.prompt_length = prompt_length;
    c.embed_dim = embed_dim;
    c.sub_dim = sub_dim;
    c.distribution = distribution;
    c.model_seed = model_seed;
    c.projection_seed = projection_seed;
    return c;
  }

  json to_json() const {
    return {{"L", prompt_length},          {"embed_dim", embed_dim},
            {"d", sub_dim},                {"K", classes},
            {"distribution", to_string(distribution)},
            {"model_seed", model_seed},    {"projection_seed", projection_seed}};
  }
};

// ---------------------------------------------------------------------------
// serve

struct ServeFlags {
  std::string addr = "127.0.0.1:7878";
  std::size_t max_batch = 1024;
  std::size_t max_connections = 64;
  bool subspace = true;
  WorldFlags world;
};

int run_serve(const ServeFlags& f, const Globals& g) {
  std::string addr = f.addr;
  if (const char* env = std::getenv("BBT_LISTEN"); env != nullptr && *env != '\0') addr = env;

  ServerConfig config;
  config.listen_address = addr;
  config.model_seed = f.world.model_seed;
  config.max_batch = f.max_batch;
  config.max_connections = f.max_connections;

  const TuneConfig tc = f.world.apply(TuneConfig{});
  auto model = std::make_shared<const SurrogateModel>(surrogate_config_for(tc, f.world.classes));
  if (f.subspace) {
    config.projection = make_subspace_context(tc.projection_spec(), *model, prompt_base_seed(tc.projection_seed));
  }
  json shown = f.world.to_json();
  shown["addr"] = addr;
  shown["max_batch"] = f.max_batch;
  shown["max_connections"] = f.max_connections;
  shown["subspace_requests"] = f.subspace;
  print_config("serve", shown);

  // Block the signals before any thread starts so only sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Server server(config, model);
  server.start();
  const HostPort hp = parse_host_port(addr);
  std::cout << "listening " << hp.host << ":" << server.port() << "\n" << std::flush;
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  if (g.verbose) std::cerr << "served " << server.requests_served() << " requests\n";
  return 0;
}

// ---------------------------------------------------------------------------
// tune

struct TuneFlags {
  std::string addr;
  bool local = false;
  bool full_prompt = false;
  std::string task_file;
  std::string out;
  std::string optimizer = "cma";
  bool parallel = false;
  bool no_dev = false;
  bool dry_run = false;
  std::size_t shots = 16;
  WorldFlags world;
  TuneConfig config;
};

TuneConfig resolve_tune(const TuneFlags& f, const Globals& g, const PlantedTask* task) {
  TuneConfig c = f.world.apply(f.config);
  if (g.seed) c.optimizer_seed = *g.seed;
  c.eval_mode = f.parallel ? EvalMode::PopulationParallel : EvalMode::Sequential;
  c.dev_eval = !f.no_dev;
  if (task != nullptr) {
    if (task->spec.full_dim % c.embed_dim != 0) {
      throw UsageError("task prompt dimension " + std::to_string(task->spec.full_dim) +
                       " is not a multiple of --embed-dim");
    }
    c.sub_dim = task->spec.sub_dim;
    c.prompt_length = task->spec.full_dim / c.embed_dim;
  }
  return c;
}

int run_tune(const TuneFlags& f, const Globals& g) {
  if (!f.addr.empty() && f.local) throw UsageError("--addr and --local are mutually exclusive");
  if (f.full_prompt && f.addr.empty()) throw UsageError("--full-prompt needs --addr");
  if (f.optimizer == "adam" && !f.addr.empty()) throw UsageError("the Adam baseline needs gradients; use --local");

  std::optional<PlantedTask> loaded;
  if (!f.task_file.empty() && !f.dry_run) loaded = load_task(f.task_file);
  const TuneConfig config = resolve_tune(f, g, loaded ? &*loaded : nullptr);

  json shown = json::parse(config_json(config));
  shown["backend"] = f.addr.empty() ? "local" : f.addr;
  shown["request_mode"] = f.full_prompt ? "full_prompt" : "subspace";
  shown["task"] = f.task_file.empty() ? "planted" : f.task_file;
  shown["shots"] = f.shots;
  shown["K"] = f.world.classes;
  shown["optimizer"] = f.optimizer;
  print_config("tune", shown);
  if (f.dry_run) return 0;

  PlantOptions plant;
  plant.seed = config.task_seed;
  plant.shots = f.shots;
  plant.classes = loaded ? loaded->classes : f.world.classes;

  auto model = std::make_shared<const SurrogateModel>(surrogate_config_for(config, plant.classes));
  SubspaceContext context =
      make_subspace_context(config.projection_spec(), *model, prompt_base_seed(config.projection_seed));
  const PlantedTask task =
      loaded ? std::move(*loaded) : plant_task(plant, *model, config.projection_spec(), *context.projection, context.p0);

  TuneHooks hooks;
  if (g.verbose) {
    hooks.on_generation = [](const GenerationInfo& info) {
      if (info.generation % 10 == 0) {
        std::fprintf(stderr, "gen %llu calls %llu best %.6g\n", static_cast<unsigned long long>(info.generation),
                     static_cast<unsigned long long>(info.api_calls), info.best_loss);
      }
    };
  }

  TuneResult result;
  if (f.optimizer == "adam") {
    LocalTaskObjective objective(model, context, task, config.loss);
    result = adam_tune(config, objective, hooks);
  } else {
    std::shared_ptr<InferenceApi> api;
    std::size_t prompt_payload = config.sub_dim;
    if (f.addr.empty()) {
      api = std::make_shared<LocalInference>(model, context);
    } else if (f.full_prompt) {
      api = std::make_shared<RemoteInference>(f.addr, static_cast<std::uint8_t>(task.classes), context);
      prompt_payload = config.full_dim();
    } else {
      api = std::make_shared<RemoteInference>(f.addr, static_cast<std::uint8_t>(task.classes));
    }
    TaskObjective objective(api, task, config.loss, prompt_payload);
    result = tune(config, objective, hooks);
  }

  std::printf("result stop=%s api_calls=%llu generations=%llu best_train_loss=%.9g dev_acc=%.6g\n",
              to_string(result.stop_reason).c_str(), static_cast<unsigned long long>(result.api_calls),
              static_cast<unsigned long long>(result.generations), result.best_train_loss, result.dev_accuracy);
  if (!f.out.empty()) {
    write_report(result, config, f.out);
    std::printf("wrote %s.csv %s.json\n", f.out.c_str(), f.out.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// bench

int run_bench_command(BenchConfig config, const std::string& out, const Globals& g) {
  if (g.seed) config.seed = *g.seed;
  config = resolve_bench_defaults(config);
  json shown{{"fn", to_string(config.function)},
             {"d", config.dim},
             {"popsize", config.popsize},
             {"sigma0", *config.sigma0},
             {"start", *config.start},
             {"seed", config.seed},
             {"max_evals", config.max_evals},
             {"target", config.target}};
  if (config.function == BenchFunction::Planted) {
    shown["L"] = config.prompt_length;
    shown["embed_dim"] = config.embed_dim;
    shown["distribution"] = to_string(config.distribution);
  }
  print_config("bench", shown);
  const BenchResult result = run_bench(config);
  const std::string csv = bench_csv(result);
  if (out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream file(out, std::ios::binary | std::ios::trunc);
    if (!file || !(file << csv)) throw std::runtime_error("cannot write " + out);
  }
  std::printf("final f=%.6g best=%.6g evals=%llu initial=%.6g reached_target=%s\n", result.final_mean,
              result.final_best, static_cast<unsigned long long>(result.evals), result.initial,
              result.reached_target ? "yes" : "no");
  return 0;
}

// ---------------------------------------------------------------------------
// sizes

int run_sizes(std::size_t b, std::size_t s, std::size_t k, std::size_t plen) {
  print_config("sizes", {{"B", b}, {"S", s}, {"K", k}, {"plen", plen}});
  const auto p = proto::payload_sizes(b, s, k, plen);
  std::printf("%-24s %10s\n", "item", "bytes");
  std::printf("%-24s %10zu\n", "upload input_ids", p.upload_ids);
  std::printf("%-24s %10zu\n", "upload attention_mask", p.upload_mask);
  std::printf("%-24s %10zu\n", "upload prompt", p.upload_prompt);
  std::printf("%-24s %10zu\n", "download logits", p.download);
  std::printf("%-24s %10zu\n", "upload mask_pos", p.upload_mask_pos);
  std::printf("%-24s %10zu\n", "request header", p.request_header);
  std::printf("%-24s %10zu\n", "response header", p.response_header);
  std::printf("%-24s %10zu\n", "upload total", p.upload_total());
  std::printf("%-24s %10zu\n", "download total", p.download_total());
  return 0;
}

// ---------------------------------------------------------------------------
// plant

int run_plant(const WorldFlags& world, PlantOptions opt, const std::string& out, const Globals& g) {
  if (g.seed) opt.seed = *g.seed;
  opt.classes = world.classes;
  json shown = world.to_json();
  shown["k"] = opt.shots;
  shown["seed"] = opt.seed;
  shown["seq_len"] = opt.seq_len;
  shown["test_per_class"] = opt.test_per_class;
  shown["max_margin"] = std::isfinite(opt.max_margin) ? json(opt.max_margin) : json(nullptr);
  shown["min_margin"] = opt.min_margin;
  shown["out"] = out;
  print_config("plant", shown);

  const TuneConfig tc = world.apply(TuneConfig{});
  const SurrogateModel model(surrogate_config_for(tc, opt.classes));
  const SubspaceContext ctx = make_subspace_context(tc.projection_spec(), model, prompt_base_seed(tc.projection_seed));
  const PlantedTask task = plant_task(opt, model, tc.projection_spec(), *ctx.projection, ctx.p0);
  save_task(task, out);
  std::printf("planted train=%zu dev=%zu test=%zu -> %s\n", task.train.batch, task.dev.batch, task.test.batch,
              out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// report

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_report(const std::vector<std::string>& inputs, const std::vector<std::uint64_t>& checkpoints) {
  print_config("report", {{"inputs", inputs}, {"checkpoints", checkpoints}});
  std::printf("%-32s %-16s %10s %14s %8s", "run", "stop", "api_calls", "best_loss", "dev_acc");
  for (auto c : checkpoints) std::printf(" %12s", ("loss@" + std::to_string(c)).c_str());
  std::printf("\n");
  for (const auto& path : inputs) {
    const TuneResult r = parse_summary_json(read_text(path));
    std::printf("%-32s %-16s %10llu %14.6g %8.4f", path.c_str(), to_string(r.stop_reason).c_str(),
                static_cast<unsigned long long>(r.api_calls), r.best_train_loss, r.dev_accuracy);
    for (auto c : checkpoints) {
      double at = std::numeric_limits<double>::quiet_NaN();
      for (const auto& p : r.curves) {
        if (p.api_calls > c) break;
        at = p.train_loss;
      }
      std::printf(" %12.6g", at);
    }
    std::printf("\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box prompt tuning in a random subspace"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals globals;
  app.add_option("--seed", globals.seed, "Run seed (optimizer seed for tune/bench, task seed for plant)");
  app.add_flag("--verbose", globals.verbose, "Progress output on stderr");

  ServeFlags serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the inference service");
  serve_cmd->add_option("--addr", serve.addr, "host:port to listen on (BBT_LISTEN overrides)");
  serve_cmd->add_option("--max-batch", serve.max_batch, "Largest accepted batch")->check(CLI::PositiveNumber);
  serve_cmd->add_option("--max-connections", serve.max_connections, "Concurrent connection limit")
      ->check(CLI::PositiveNumber);
  serve_cmd->add_flag("!--no-subspace", serve.subspace, "Only accept full prompts");
  serve.world.add_to(serve_cmd, true);

  TuneFlags tune_flags;
  auto* tune_cmd = app.add_subcommand("tune", "Tune a prompt against the service or a local model");
  tune_cmd->add_option("--addr", tune_flags.addr, "Service host:port");
  tune_cmd->add_flag("--local", tune_flags.local, "Evaluate in-process (default)");
  tune_cmd->add_flag("--full-prompt", tune_flags.full_prompt, "Project locally and send the full prompt");
  tune_cmd->add_option("--task", tune_flags.task_file, "Task file from `plant` (default: plant one in memory)");
  tune_cmd->add_option("--loss", tune_flags.config.loss, "Loss: ce, hinge or acc")
      ->transform(CLI::CheckedTransformer(loss_names(), CLI::ignore_case))
      ->option_text("ce|hinge|acc");
  tune_cmd->add_option("--popsize", tune_flags.config.popsize, "Population size")->check(CLI::Range(2, 100000));
  tune_cmd->add_option("--budget", tune_flags.config.budget, "API-call budget");
  tune_cmd->add_flag("--parallel", tune_flags.parallel, "Evaluate each generation concurrently, one call each");
  tune_cmd->add_option("--patience", tune_flags.config.early_stop_patience, "Early-stop patience in calls (0: off)");
  tune_cmd->add_flag("--no-dev", tune_flags.no_dev, "Skip dev evaluation and early stopping");
  tune_cmd->add_option("--sigma0", tune_flags.config.sigma0, "Initial step size")->check(CLI::PositiveNumber);
  tune_cmd->add_option("--bound", tune_flags.config.bound, "Search box half-width")->check(CLI::PositiveNumber);
  tune_cmd->add_option("--task-seed", tune_flags.config.task_seed, "Seed of the planted task");
  tune_cmd->add_option("--optimizer-seed", tune_flags.config.optimizer_seed, "Seed of the optimizer");
  tune_cmd->add_option("--max-generations", tune_flags.config.max_generations, "Stop after this many iterations");
  tune_cmd->add_option("--k", tune_flags.shots, "Shots per class when planting in memory")->check(CLI::PositiveNumber);
  tune_cmd->add_option("--optimizer", tune_flags.optimizer, "cma or adam")->check(CLI::IsMember({"cma", "adam"}));
  tune_cmd->add_option("--lr", tune_flags.config.adam_lr, "Adam learning rate")->check(CLI::PositiveNumber);
  tune_cmd->add_option("-o,--out", tune_flags.out, "Write PREFIX.csv and PREFIX.json");
  tune_cmd->add_flag("--dry-run", tune_flags.dry_run, "Print the resolved config and exit");
  tune_flags.world.add_to(tune_cmd, true);

  BenchConfig bench;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("bench", "Optimizer sanity runs; writes a convergence CSV");
  bench_cmd->add_option("--fn", bench.function, "sphere, rosenbrock or planted")
      ->transform(CLI::CheckedTransformer(bench_names(), CLI::ignore_case))
      ->option_text("sphere|rosenbrock|planted");
  bench_cmd->add_option("--d", bench.dim, "Dimension")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--popsize", bench.popsize, "Population size (0: 4 + 3 ln d)");
  bench_cmd->add_option("--sigma0", bench.sigma0, "Initial step size")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--start", bench.start, "Initial mean, same value in every coordinate");
  bench_cmd->add_option("--max-evals", bench.max_evals, "Evaluation budget");
  bench_cmd->add_option("--target", bench.target, "Stop below this value");
  bench_cmd->add_option("--L", bench.prompt_length, "Prompt length (planted)")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--embed-dim", bench.embed_dim, "Embedding width (planted)")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--distribution", bench.distribution, "Projection (planted): uniform or normal")
      ->transform(CLI::CheckedTransformer(distribution_names(), CLI::ignore_case))
        ->option_text("uniform|normal");
  bench_cmd->add_option("-o,--out", bench_out, "CSV path (default: stdout)");

  std::size_t b = 32, s = 47, k = 2, plen = 500;
  auto* sizes_cmd = app.add_subcommand("sizes", "Bytes moved per API call");
  sizes_cmd->add_option("--B", b, "Batch size")->check(CLI::PositiveNumber);
  sizes_cmd->add_option("--S", s, "Sequence length")->check(CLI::PositiveNumber);
  sizes_cmd->add_option("--K", k, "Classes")->check(CLI::PositiveNumber);
  sizes_cmd->add_option("--plen", plen, "Prompt floats per request")->check(CLI::PositiveNumber);

  WorldFlags plant_world;
  PlantOptions plant;
  std::string plant_out;
  auto* plant_cmd = app.add_subcommand("plant", "Write a teacher-labelled few-shot task file");
  plant_cmd->add_option("--k", plant.shots, "Shots per class")->check(CLI::PositiveNumber);
  plant_cmd->add_option("--S", plant.seq_len, "Sequence length")->check(CLI::Range(1, 65535));
  plant_cmd->add_option("--test-per-class", plant.test_per_class, "Held-out rows per class");
  plant_cmd->add_option("--margin", plant.min_margin, "Minimum teacher logit gap");
  plant_cmd->add_option("--max-margin", plant.max_margin, "Skip rows whose teacher gap exceeds this");
  plant_cmd->add_option("-o,--out", plant_out, "Output task file")->required();
  plant_world.add_to(plant_cmd, true);

  std::vector<std::string> report_inputs;
  std::vector<std::uint64_t> checkpoints{2000, 4000, 6000, 8000};
  auto* report_cmd = app.add_subcommand("report", "Summarize tune JSON outputs");
  report_cmd->add_option("inputs", report_inputs, "Summary JSON files")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--at", checkpoints, "Budgets at which to read the loss curve");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (serve_cmd->parsed()) return run_serve(serve, globals);
    if (tune_cmd->parsed()) return run_tune(tune_flags, globals);
    if (bench_cmd->parsed()) return run_bench_command(bench, bench_out, globals);
    if (sizes_cmd->parsed()) return run_sizes(b, s, k, plen);
    if (plant_cmd->parsed()) return run_plant(plant_world, plant, plant_out, globals);
    if (report_cmd->parsed()) return run_report(report_inputs, checkpoints);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
