#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "mft/commands.hpp"
#include "mft/config.hpp"
#include "mft/error.hpp"
#include "mft/meta.hpp"
#include "mft/rng.hpp"

namespace py = pybind11;
using namespace mft;

namespace {

py::dict eval_dict(const EvalResult& r) {
  py::dict d;
  d["seed"] = r.seed;
  d["macro"] = r.macro;
  d["per_domain"] = r.per_domain;
  d["config_hash"] = r.config_hash;
  return d;
}

ExperimentConfig to_config(const ConfigMap& map) { return materialize(map); }

PrototypeSet make_prototypes(const std::vector<std::vector<std::vector<Vector>>>& nested) {
  // nested[domain][class] is the list of prototypes for that cell.
  PrototypeSet set;
  set.num_domains = nested.size();
  set.num_classes = nested.empty() ? 0 : nested.front().size();
  for (std::size_t k = 0; k < nested.size(); ++k) {
    if (nested[k].size() != set.num_classes) fail(ErrorKind::Dimension, "ragged prototype classes");
    for (std::size_t m = 0; m < nested[k].size(); ++m) {
      for (const auto& c : nested[k][m]) {
        if (set.dim == 0) set.dim = c.size();
        if (c.size() != set.dim) fail(ErrorKind::Dimension, "ragged prototype dimension");
      }
      set.entries[{static_cast<int>(k), static_cast<int>(m)}] = nested[k][m];
    }
  }
  return set;
}

}  // namespace

PYBIND11_MODULE(_mft, m) {
  m.doc() = "Meta fine-tuning over a mini transformer";

  static py::exception<Error> error_type(m, "MftError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type.ptr())(std::string(e.what()));
      exc.attr("kind") = std::string(to_string(e.kind()));
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  py::class_<ConfigMap>(m, "ConfigMap")
      .def(py::init<>())
      .def_static("parse", &ConfigMap::parse, py::arg("text"), py::arg("source") = "<config>")
      .def_static("load", &ConfigMap::load, py::arg("path"))
      .def("set", &ConfigMap::set)
      .def("get", &ConfigMap::get)
      .def("apply_override", &ConfigMap::apply_override)
      .def("to_text", &ConfigMap::to_text)
      .def("hash", &ConfigMap::hash)
      .def("values", &ConfigMap::values);

  m.def("run", [](const ConfigMap& map) {
    const RunOutcome out = cmd_run(to_config(map));
    py::dict d;
    py::list seeds;
    for (const auto& r : out.per_seed) seeds.append(eval_dict(r));
    d["per_seed"] = seeds;
    d["checkpoints"] = out.checkpoints;
    d["mean_macro"] = out.mean_macro;
    return d;
  }, "Train and evaluate the configured method for every seed.");

  m.def("sweep", [](const ConfigMap& map) {
    py::list rows;
    for (const auto& r : cmd_sweep(to_config(map))) rows.append(py::make_tuple(r.value, r.seed, r.macro));
    return rows;
  }, "Run one experiment per sweep value; returns (value, seed, macro) tuples.");

  m.def("probe", [](const ConfigMap& map) { return cmd_probe(to_config(map)); },
        "Domain probe accuracy per layer of a checkpoint; returns (layer, accuracy) pairs.");

  m.def("typicality_report", [](const ConfigMap& map) {
    py::list rows;
    for (const auto& r : cmd_typicality_report(to_config(map))) {
      py::dict d;
      d["domain"] = r.domain;
      d["extreme"] = r.extreme;
      d["rank"] = r.rank;
      d["instance_id"] = r.instance_id;
      d["raw"] = r.score.raw;
      d["value"] = r.score.value;
      d["text"] = r.text;
      rows.append(d);
    }
    return rows;
  });

  m.def("synth_gen", [](const ConfigMap& map) {
    const MultiDomainDataset ds = cmd_synth_gen(to_config(map));
    py::dict d;
    d["domains"] = ds.domain_names;
    d["labels"] = ds.label_names;
    d["train"] = ds.train.size();
    d["dev"] = ds.dev.size();
    d["test"] = ds.test.size();
    return d;
  });

  m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("tag"), py::arg("index") = 0);

  m.def("cosine", [](const Vector& u, const Vector& v) { return cosine(u, v); });

  m.def("typicality_single",
        [](const Vector& e, int label, int domain, const std::vector<std::vector<std::vector<Vector>>>& protos,
           double alpha) {
          const TypicalityScore s = typicality_single(e, label, domain, make_prototypes(protos), alpha);
          return py::make_tuple(s.raw, s.value);
        },
        py::arg("e"), py::arg("label"), py::arg("domain"), py::arg("prototypes"), py::arg("alpha") = 0.5,
        "Returns (raw, clamped); prototypes[domain][class] is a list of vectors.");

  m.def("typicality_multi",
        [](const Vector& e, int label, int domain, const std::vector<std::vector<std::vector<Vector>>>& protos,
           double alpha, std::optional<Vector> beta) {
          const PrototypeSet set = make_prototypes(protos);
          const Vector b = beta ? *beta : class_memberships(e, domain, set);
          const TypicalityScore s = typicality_multi(e, label, domain, set, alpha, b);
          return py::make_tuple(s.raw, s.value);
        },
        py::arg("e"), py::arg("label"), py::arg("domain"), py::arg("prototypes"), py::arg("alpha") = 0.5,
        py::arg("beta") = py::none());

  m.def("class_memberships",
        [](const Vector& e, int domain, const std::vector<std::vector<std::vector<Vector>>>& protos) {
          return class_memberships(e, domain, make_prototypes(protos));
        });

  m.def("corrupt_labels",
        [](const std::vector<int>& domains, const std::string& mode, std::size_t num_domains, std::uint64_t seed) {
          CorruptionDistribution dist;
          switch (parse_corruption(mode)) {
            case CorruptionMode::Shuffle: dist = CorruptionDistribution::shuffle(); break;
            case CorruptionMode::Uniform: dist = CorruptionDistribution::uniform(num_domains); break;
            case CorruptionMode::Empirical: dist = CorruptionDistribution::empirical(domains, num_domains); break;
          }
          Rng rng(seed);
          return corrupt_labels(domains, dist, rng);
        },
        py::arg("domains"), py::arg("mode") = "shuffle", py::arg("num_domains") = 0, py::arg("seed") = 1);
}
