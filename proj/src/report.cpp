#include "bbt/driver.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace bbt {

namespace {

using nlohmann::json;

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json nan_as_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

double null_as_nan(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

StopReason stop_reason_from_string(const std::string& s) {
  for (auto r : {StopReason::BudgetExhausted, StopReason::EarlyStopped, StopReason::GenerationLimit}) {
    if (to_string(r) == s) return r;
  }
  throw std::invalid_argument("unknown stop reason '" + s + "'");
}

json config_to_json(const TuneConfig& c) {
  return json{
      {"prompt_length", c.prompt_length},
      {"embed_dim", c.embed_dim},
      {"sub_dim", c.sub_dim},
      {"popsize", c.popsize},
      {"distribution", to_string(c.distribution)},
      {"loss", to_string(c.loss)},
      {"budget", c.budget},
      {"eval_mode", to_string(c.eval_mode)},
      {"early_stop_patience", c.early_stop_patience},
      {"dev_eval", c.dev_eval},
      {"max_generations", c.max_generations},
      {"model_seed", c.model_seed},
      {"projection_seed", c.projection_seed},
      {"task_seed", c.task_seed},
      {"optimizer_seed", c.optimizer_seed},
      {"sigma0", c.sigma0},
      {"bound", c.bound},
      {"adam_lr", c.adam_lr},
  };
}

}  // namespace

std::string config_json(const TuneConfig& config) { return config_to_json(config).dump(2); }

std::string curves_csv(const TuneResult& result) {
  std::string out = "api_calls,train_loss,dev_acc\n";
  for (const auto& p : result.curves) {
    out += std::to_string(p.api_calls);
    out += ',';
    out += format_double(p.train_loss);
    out += ',';
    out += format_double(p.dev_accuracy);
    out += '\n';
  }
  return out;
}

std::string summary_json(const TuneResult& r, const TuneConfig& config) {
  json curves = json::array();
  for (const auto& p : r.curves) curves.push_back(json::array({p.api_calls, p.train_loss, nan_as_null(p.dev_accuracy)}));
  json j{
      {"best_z", std::vector<double>(r.best_z.data(), r.best_z.data() + r.best_z.size())},
      {"best_train_loss", nan_as_null(r.best_train_loss)},
      {"dev_accuracy", nan_as_null(r.dev_accuracy)},
      {"stop_reason", to_string(r.stop_reason)},
      {"api_calls", r.api_calls},
      {"requests", r.requests},
      {"generations", r.generations},
      {"dev_evaluations", r.dev_evaluations},
      {"flops_equivalent_iterations", r.flops_equivalent_iterations},
      {"wall_time_seconds", r.wall_time_seconds},
      {"bytes_uploaded", r.bytes_uploaded},
      {"bytes_downloaded", r.bytes_downloaded},
      {"curves", std::move(curves)},
      {"config", config_to_json(config)},
  };
  return j.dump(2) + "\n";
}

TuneResult parse_summary_json(const std::string& text) {
  const json j = json::parse(text);
  TuneResult r;
  const auto z = j.at("best_z").get<std::vector<double>>();
  r.best_z = Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
  r.best_train_loss = null_as_nan(j.at("best_train_loss"));
  r.dev_accuracy = null_as_nan(j.at("dev_accuracy"));
  r.stop_reason = stop_reason_from_string(j.at("stop_reason").get<std::string>());
  r.api_calls = j.at("api_calls").get<std::uint64_t>();
  r.requests = j.at("requests").get<std::uint64_t>();
  r.generations = j.at("generations").get<std::uint64_t>();
  r.dev_evaluations = j.at("dev_evaluations").get<std::uint64_t>();
  r.flops_equivalent_iterations = j.at("flops_equivalent_iterations").get<double>();
  r.wall_time_seconds = j.at("wall_time_seconds").get<double>();
  r.bytes_uploaded = j.at("bytes_uploaded").get<std::uint64_t>();
  r.bytes_downloaded = j.at("bytes_downloaded").get<std::uint64_t>();
  for (const auto& p : j.at("curves")) {
    r.curves.push_back({p.at(0).get<std::uint64_t>(), p.at(1).get<double>(), null_as_nan(p.at(2))});
  }
  return r;
}

void write_report(const TuneResult& result, const TuneConfig& config, const std::string& prefix) {
  const auto write = [](const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << body;
    if (!out) throw std::runtime_error("write to " + path + " failed");
  };
  write(prefix + ".csv", curves_csv(result));
  write(prefix + ".json", summary_json(result, config));
}

}  // namespace bbt
