#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "falab/errors.hpp"
#include "falab/experiment.hpp"

namespace py = pybind11;
using namespace falab;

namespace {

LossParams make_params(const py::kwargs& kw) {
  LossParams p;
  for (const auto& item : kw) {
    const std::string key = py::cast<std::string>(item.first);
    if (key == "focal_gamma") p.focal_gamma = py::cast<double>(item.second);
    else if (key == "rce_a") p.rce_a = py::cast<double>(item.second);
    else if (key == "sce_alpha") p.sce_alpha = py::cast<double>(item.second);
    else if (key == "sce_beta") p.sce_beta = py::cast<double>(item.second);
    else if (key == "gce_q") p.gce_q = py::cast<double>(item.second);
    else if (key == "mode") p.mode = gradient_mode_from_string(py::cast<std::string>(item.second));
    else if (key == "weights") p.weights = ClassWeights(py::cast<std::vector<double>>(item.second));
    else throw InvalidInput("unknown loss parameter: " + key);
  }
  return p;
}

py::dict report_dict(const RiskGapReport& r) {
  py::dict d;
  d["risk_noisy_at_clean_opt"] = r.risk_noisy_at_clean_opt;
  d["risk_noisy_at_noisy_opt"] = r.risk_noisy_at_noisy_opt;
  d["gap"] = r.gap;
  d["bound"] = r.bound;
  d["within_bound"] = r.within_bound;
  d["assumption_holds"] = r.assumption_holds;
  d["certification_delta"] = r.certification_delta;
  d["grid_resolution"] = r.grid_resolution;
  return d;
}

py::dict dataset_dict(const Dataset& d) {
  py::dict out;
  py::array_t<double> x({d.features.rows(), d.features.cols()});
  std::copy(d.features.data(), d.features.data() + d.features.size(), x.mutable_data());
  out["features"] = x;
  out["labels"] = py::array_t<int>(static_cast<py::ssize_t>(d.labels.size()), d.labels.data());
  out["num_classes"] = d.num_classes;
  out["domain"] = std::string(to_string(d.domain));
  return out;
}

ExperimentConfig parse_config(const std::string& text) {
  if (text.empty()) return default_config();
  try {
    return config_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "falab core: losses, verifiers and the adaptation pipeline";

  auto base = py::register_exception<Error>(m, "FalabError", PyExc_RuntimeError);
  py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());
  py::register_exception<Diverged>(m, "Diverged", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<UnsupportedVersion>(m, "UnsupportedVersion", base.ptr());
  py::register_exception<AssumptionViolated>(m, "AssumptionViolated", base.ptr());
  py::register_exception<ResolutionError>(m, "ResolutionError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<PathError>(m, "PathError", base.ptr());

  m.def("softmax", [](const std::vector<double>& z) {
    const ProbVector p = softmax(Logits(z));
    return std::vector<double>(p.values().begin(), p.values().end());
  }, py::arg("logits"));

  m.def("loss", [](const std::string& name, const std::vector<double>& probs, std::size_t label,
                   const py::kwargs& kw) {
    const ProbVector p = ProbVector::from(probs);
    const LossEval e = evaluate_loss(loss_id_from_string(name), p, LabelDist(label, p.size()),
                                     make_params(kw));
    return py::make_tuple(e.value, e.grad_logits);
  }, py::arg("name"), py::arg("probs"), py::arg("label"),
     "Loss value and its gradient with respect to the logits.");

  m.def("grad_check", [](const std::string& name, const std::vector<double>& logits,
                         std::size_t label, double h, const py::kwargs& kw) {
    return grad_check(loss_id_from_string(name), logits, LabelDist(label, logits.size()),
                      make_params(kw), h);
  }, py::arg("name"), py::arg("logits"), py::arg("label"), py::arg("h") = 1e-5);

  m.def("check_clean_dominant", [](const std::vector<std::vector<double>>& eta) {
    return check_clean_dominant(NoiseMatrix(eta));
  }, py::arg("eta"));

  m.def("theorem1_bound", [](const std::vector<std::vector<double>>& eta,
                             const std::vector<double>& prior) {
    return theorem1_bound(NoiseMatrix(eta), ProbVector::from(prior), eta.size());
  }, py::arg("eta"), py::arg("prior"));

  m.def("risk_gap", [](const std::vector<int>& labels, const std::vector<std::vector<double>>& eta,
                       const std::string& loss, std::size_t resolution, bool certify) {
    return report_dict(bruteforce_risk_minimizer(labels, eta.size(), NoiseMatrix(eta),
                                                 loss_id_from_string(loss), resolution, certify)
                           .report);
  }, py::arg("labels"), py::arg("eta"), py::arg("loss") = "fuzzy_term",
     py::arg("resolution") = kMinGridResolution, py::arg("certify") = true);

  m.def("boundedness_sweep", [](std::size_t k, std::size_t samples, std::uint64_t seed) {
    Rng rng(seed);
    const BoundednessResult r = boundedness_sweep(k, samples, rng);
    py::dict d;
    d["k"] = r.k;
    d["samples"] = r.samples;
    d["violations"] = r.violations;
    d["min_value"] = r.min_value;
    d["max_value"] = r.max_value;
    d["bound"] = r.bound;
    return d;
  }, py::arg("k"), py::arg("samples"), py::arg("seed") = 0);

  m.def("class_weights", [](const std::vector<int>& predictions, std::size_t k) {
    const BalancedWeights b = balanced_weights(MemoryBank::from_predictions(predictions, k));
    return py::make_tuple(std::vector<double>(b.weights.values().begin(), b.weights.values().end()),
                          b.guarded);
  }, py::arg("predictions"), py::arg("k"), "Balanced weights and the guarded (empty) classes.");

  m.def("sign_test_p", &sign_test_p, py::arg("wins"), py::arg("losses"));

  m.def("_default_config", [] { return config_to_json(default_config()).dump(); });
  m.def("_resolve_config", [](const std::string& text) {
    return config_to_json(parse_config(text)).dump();
  }, py::arg("config"));

  m.def("_generate_pair", [](const std::string& config, std::uint64_t seed) {
    const DomainPair pair = generate_pair(seeded_domain(parse_config(config), seed));
    py::dict d;
    d["source"] = dataset_dict(pair.source);
    d["target"] = dataset_dict(pair.target);
    d["bayes_disagreement"] = pair.bayes_disagreement;
    return d;
  }, py::arg("config"), py::arg("seed"));

  m.def("_run", [](const std::string& command, const std::string& config, const std::string& out,
                   std::optional<std::uint64_t> seed, int jobs, bool emit_plots) {
    RunOptions opts;
    opts.seed = seed;
    opts.out = out;
    opts.jobs = jobs;
    opts.emit_plots = emit_plots;
    const ExperimentConfig cfg = resolve_config(parse_config(config), opts);
    py::gil_scoped_release release;
    if (command == "gen") cmd_gen(cfg, opts);
    else if (command == "train-source") cmd_train_source(cfg, opts);
    else if (command == "adapt") cmd_adapt(cfg, opts);
    else if (command == "compare") cmd_compare(cfg, opts);
    else if (command == "ablate") cmd_ablate(cfg, opts);
    else if (command == "verify") return cmd_verify(cfg, opts);
    else throw InvalidInput("unknown command: " + command);
    return true;
  }, py::arg("command"), py::arg("config"), py::arg("out"), py::arg("seed") = py::none(),
     py::arg("jobs") = 1, py::arg("emit_plots") = false);
}
