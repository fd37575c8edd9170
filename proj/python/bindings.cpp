#include "bbt/driver.hpp"
#include "bbt/protocol.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;

namespace {

py::dict sizes_dict(std::size_t b, std::size_t s, std::size_t k, std::size_t plen) {
  const auto p = bbt::proto::payload_sizes(b, s, k, plen);
  py::dict d;
  d["upload_ids"] = p.upload_ids;
  d["upload_mask"] = p.upload_mask;
  d["upload_prompt"] = p.upload_prompt;
  d["download"] = p.download;
  d["upload_mask_pos"] = p.upload_mask_pos;
  d["upload_total"] = p.upload_total();
  d["download_total"] = p.download_total();
  return d;
}

double loss_of(const std::string& kind, const Eigen::MatrixXd& logits, const std::vector<std::uint8_t>& labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw std::invalid_argument("one label per logits row expected");
  }
  return bbt::batch_loss(bbt::loss_kind_from_string(kind), logits, labels);
}

/// Plants the toy task, tunes in-process and returns the JSON summary.
std::string toy_tune(std::uint64_t seed, std::uint64_t budget, bool parallel, const std::string& loss,
                     std::size_t sub_dim, std::size_t popsize) {
  bbt::TuneConfig config;
  config.sub_dim = sub_dim;
  config.popsize = popsize;
  config.budget = budget;
  config.loss = bbt::loss_kind_from_string(loss);
  config.eval_mode = parallel ? bbt::EvalMode::PopulationParallel : bbt::EvalMode::Sequential;
  config.task_seed = seed;
  config.optimizer_seed = seed;
  bbt::PlantOptions plant;
  plant.seed = seed;
  const bbt::ToyWorld world = bbt::make_toy_world(config, plant);
  bbt::TaskObjective objective(std::make_shared<bbt::LocalInference>(world.model, world.context), world.task,
                               config.loss, config.sub_dim);
  bbt::TuneResult result;
  {
    py::gil_scoped_release release;
    result = bbt::tune(config, objective);
  }
  return bbt::summary_json(result, config);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Black-box prompt tuning core";

  m.def("payload_sizes", &sizes_dict, py::arg("B"), py::arg("S"), py::arg("K"), py::arg("plen"),
        "Bytes moved by one API call.");
  m.def("sphere", &bbt::sphere);
  m.def("rosenbrock", &bbt::rosenbrock);
  m.def("cross_entropy", [](const std::vector<double>& row, std::size_t label) {
    if (label >= row.size()) throw py::index_error("label out of range");
    return bbt::cross_entropy(row, label);
  });
  m.def("hinge", [](const std::vector<double>& row, std::size_t label, double margin) {
    if (label >= row.size()) throw py::index_error("label out of range");
    return bbt::hinge(row, label, margin);
  }, py::arg("logits"), py::arg("label"), py::arg("margin") = bbt::kHingeMargin);
  m.def("batch_loss", &loss_of, py::arg("kind"), py::arg("logits"), py::arg("labels"));
  m.def("default_popsize", &bbt::default_popsize);

  py::class_<bbt::CmaEs>(m, "CmaEs")
      .def(py::init([](std::size_t dim, std::size_t popsize, double sigma0, std::uint64_t seed,
                       std::optional<Eigen::VectorXd> mean0, double lower, double upper) {
             bbt::CmaConfig c;
             c.dim = dim;
             c.popsize = popsize == 0 ? bbt::default_popsize(dim) : popsize;
             c.sigma0 = sigma0;
             c.seed = seed;
             if (mean0) c.mean0 = *mean0;
             c.lower = lower;
             c.upper = upper;
             return bbt::CmaEs(c);
           }),
           py::arg("dim"), py::arg("popsize") = 0, py::arg("sigma0") = 1.0, py::arg("seed") = 0,
           py::arg("mean0") = std::nullopt, py::arg("lower") = -5.0, py::arg("upper") = 5.0)
      .def("ask", &bbt::CmaEs::ask)
      .def("tell", [](bbt::CmaEs& es, const std::vector<Eigen::VectorXd>& xs, const std::vector<double>& f) {
        es.tell(xs, f);
      })
      .def_property_readonly("mean", [](const bbt::CmaEs& es) { return es.state().mean; })
      .def_property_readonly("sigma", [](const bbt::CmaEs& es) { return es.state().sigma; })
      .def_property_readonly("generation", [](const bbt::CmaEs& es) { return es.state().generation; })
      .def_property_readonly("popsize", [](const bbt::CmaEs& es) { return es.parameters().lambda; })
      .def("recommend", &bbt::CmaEs::recommend)
      .def("best_fitness", &bbt::CmaEs::best_fitness);

  m.def("default_config_json", [] { return bbt::config_json(bbt::TuneConfig{}); });
  m.def("toy_tune", &toy_tune, py::arg("seed") = 0, py::arg("budget") = 8000, py::arg("parallel") = false,
        py::arg("loss") = "ce", py::arg("sub_dim") = 500, py::arg("popsize") = 20);

  py::register_exception<bbt::OptimizerStateError>(m, "OptimizerStateError");
}
