#include "falab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <set>
#include <thread>

#include "falab/errors.hpp"
#include "falab/report_io.hpp"

namespace falab {
namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config parsing

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || item.key() == a;
    if (!known) throw ConfigError(where + "." + item.key() + ": unknown field");
  }
}

std::string join(const std::string& where, const char* key) {
  return where.empty() ? std::string(key) : where + "." + key;
}

template <typename T>
void read(const json& obj, const char* key, T& dst, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    dst = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(join(where, key) + ": wrong type (got " + std::string(it->type_name()) + ")");
  }
}

template <typename T>
void read_positive(const json& obj, const char* key, T& dst, const std::string& where) {
  read(obj, key, dst, where);
  if (!(dst > T{0})) throw ConfigError(join(where, key) + ": must be positive");
}

LossId read_loss(const json& obj, const char* key, LossId fallback, const std::string& where) {
  std::string name(to_string(fallback));
  read(obj, key, name, where);
  try {
    return loss_id_from_string(name);
  } catch (const InvalidInput& e) {
    throw ConfigError(join(where, key) + ": " + e.what());
  }
}

json train_to_json(const TrainConfig& t) {
  return {{"lr_backbone", t.lr_backbone}, {"lr_head", t.lr_head},   {"momentum", t.momentum},
          {"batch_size", t.batch_size},   {"max_epochs", t.max_epochs}};
}

void train_from_json(const json& j, TrainConfig& t, const std::string& where,
                     std::initializer_list<const char*> extra) {
  std::vector<const char*> keys{"lr_backbone", "lr_head", "momentum", "batch_size", "max_epochs"};
  keys.insert(keys.end(), extra.begin(), extra.end());
  for (const auto& item : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return item.key() == k; }) ==
        keys.end()) {
      throw ConfigError(where + "." + item.key() + ": unknown field");
    }
  }
  read(j, "lr_backbone", t.lr_backbone, where);
  read(j, "lr_head", t.lr_head, where);
  read(j, "momentum", t.momentum, where);
  read_positive(j, "batch_size", t.batch_size, where);
  read(j, "max_epochs", t.max_epochs, where);
  if (!(t.lr_backbone >= 0.0)) throw ConfigError(where + ".lr_backbone: must be >= 0");
  if (!(t.lr_head >= 0.0)) throw ConfigError(where + ".lr_head: must be >= 0");
  if (!(t.momentum >= 0.0 && t.momentum < 1.0)) {
    throw ConfigError(where + ".momentum: must lie in [0, 1)");
  }
  if (t.max_epochs < 1) throw ConfigError(where + ".max_epochs: must be >= 1");
}

// ---------------------------------------------------------------------------
// Seed fan-out

template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Output helpers

std::string fmt(double v) { return format_double(v); }

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ';';
    s += fmt(v[i]);
  }
  return s;
}

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw Diverged("non-finite result in " + what, -1);
}

std::filesystem::path under(const ExperimentConfig& cfg, const std::filesystem::path& p) {
  return p.is_absolute() ? p : cfg.paths.output_dir / p;
}

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

void archive_config(const ExperimentConfig& cfg, const std::string& command) {
  json j = config_to_json(cfg);
  j["command"] = command;
  j["config_hash"] = config_hash(cfg);
  write_file_atomic(cfg.paths.output_dir / ("resolved_config_" + command + ".json"), j.dump(2));
}

json metrics_json(const Metrics& m) {
  return {{"accuracy", m.accuracy},
          {"per_class_accuracy", m.per_class_accuracy},
          {"confusion", m.confusion}};
}

// Minimal SVG emitters for the optional plots.
std::string svg_lines(const std::string& title,
                      const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  const double w = 480, h = 320, pad = 40;
  double lo = 1.0, hi = 0.0;
  std::size_t len = 1;
  for (const auto& s : series) {
    for (double v : s.second) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    len = std::max(len, s.second.size());
  }
  if (hi <= lo) hi = lo + 1e-3;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"320\">\n";
  out += "<text x=\"40\" y=\"20\" font-size=\"13\">" + title + "</text>\n";
  out += "<rect x=\"40\" y=\"40\" width=\"400\" height=\"240\" fill=\"none\" stroke=\"#999\"/>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    std::string pts;
    for (std::size_t i = 0; i < series[s].second.size(); ++i) {
      const double x = pad + (len > 1 ? (w - 2 * pad) * static_cast<double>(i) / static_cast<double>(len - 1) : 0.0);
      const double y = h - pad - (h - 2 * pad) * (series[s].second[i] - lo) / (hi - lo);
      pts += fmt(x) + "," + fmt(y) + " ";
    }
    const char* c = colors[s % 6];
    out += "<polyline fill=\"none\" stroke=\"" + std::string(c) + "\" points=\"" + pts + "\"/>\n";
    out += "<text x=\"450\" y=\"" + fmt(50.0 + 14.0 * static_cast<double>(s)) +
           "\" font-size=\"10\" fill=\"" + c + "\" text-anchor=\"end\">" + series[s].first +
           "</text>\n";
  }
  out += "<text x=\"4\" y=\"44\" font-size=\"10\">" + fmt(hi) + "</text>\n";
  out += "<text x=\"4\" y=\"280\" font-size=\"10\">" + fmt(lo) + "</text>\n</svg>\n";
  return out;
}

std::string svg_heatmap(const std::string& title, const std::vector<std::vector<std::size_t>>& m) {
  const std::size_t k = m.size();
  const double cell = 300.0 / static_cast<double>(std::max<std::size_t>(k, 1));
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"340\" height=\"350\">\n";
  out += "<text x=\"20\" y=\"20\" font-size=\"13\">" + title + "</text>\n";
  for (std::size_t y = 0; y < k; ++y) {
    std::size_t row = 0;
    for (std::size_t v : m[y]) row += v;
    for (std::size_t i = 0; i < k; ++i) {
      const double frac = row ? static_cast<double>(m[y][i]) / static_cast<double>(row) : 0.0;
      const int shade = static_cast<int>(255.0 * (1.0 - frac));
      out += "<rect x=\"" + fmt(20 + cell * static_cast<double>(i)) + "\" y=\"" +
             fmt(30 + cell * static_cast<double>(y)) + "\" width=\"" + fmt(cell) + "\" height=\"" +
             fmt(cell) + "\" fill=\"rgb(" + std::to_string(shade) + "," + std::to_string(shade) +
             ",255)\"/>\n";
    }
  }
  out += "</svg>\n";
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

Architecture ExperimentConfig::architecture() const {
  return Architecture{domain.dim, hidden_dims, bottleneck_dim, domain.num_classes};
}

void ExperimentConfig::validate() const {
  try {
    domain.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("domain: ") + e.what());
  }
  try {
    architecture().validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("architecture: ") + e.what());
  }
  try {
    source.train.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("source_training: ") + e.what());
  }
  try {
    adaptation.validate();
    adaptation.loss_params.validate(adaptation.loss == LossId::kWeightedFal ? LossId::kFal
                                                                            : adaptation.loss,
                                    domain.num_classes);
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("adaptation: ") + e.what());
  }
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ConfigError("seeds: duplicate seed");
  for (std::size_t k : verify.boundedness_ks) {
    if (k < 2) throw ConfigError("verify.boundedness_ks: K must be >= 2");
  }
  for (std::size_t k : verify.theorem_ks) {
    if (k < 2 || k > kMaxBruteforceClasses) throw ConfigError("verify.theorem_ks: K must lie in [2, 4]");
  }
  if (verify.theorem_samples == 0 || verify.theorem_samples > kMaxBruteforceSamples) {
    throw ConfigError("verify.theorem_samples: must lie in [1, 200]");
  }
  if (verify.grid_resolution < kMinGridResolution) {
    throw ConfigError("verify.grid_resolution: must be >= 21");
  }
  if (!(verify.gradcheck_step > 0.0 && verify.gradcheck_step <= 1e-2)) {
    throw ConfigError("verify.gradcheck_step: must lie in (0, 1e-2]");
  }
}

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  DomainSpec& d = cfg.domain;
  d.num_classes = 8;
  d.dim = 8;
  d.mean_radius = 3.0;
  d.noise_scale = 1.0;
  d.shift_rotation = 0.5;
  d.samples_per_class = 250;
  for (std::size_t c = 0; c < d.num_classes; ++c) {
    d.target_class_proportions.push_back(2.0 - static_cast<double>(c) / 7.0);
  }
  cfg.adaptation.train = TrainConfig{.lr_backbone = 1e-3, .lr_head = 1e-2, .momentum = 0.9,
                                     .batch_size = 64, .max_epochs = 1, .seed = 0};
  cfg.adaptation.epochs = 5;
  cfg.adaptation.loss = LossId::kWeightedFal;
  cfg.compare_losses = {LossId::kCrossEntropy, LossId::kFal,          LossId::kWeightedFal,
                        LossId::kFocal,        LossId::kSymmetricCe,  LossId::kGeneralizedCe};
  for (std::uint64_t s = 0; s < 20; ++s) cfg.seeds.push_back(s);
  return cfg;
}

DomainSpec two_class_benchmark_spec(std::uint64_t seed) {
  DomainSpec d;
  d.num_classes = 2;
  d.dim = 2;
  d.class_means = {{-2.0, 0.0}, {2.0, 0.0}};
  d.noise_scale = 1.0;
  d.shift_rotation = 0.3;
  d.shift_translation = {1.5, 0.5};
  d.samples_per_class = 1000;
  d.seed = seed;
  return d;
}

json config_to_json(const ExperimentConfig& cfg) {
  const DomainSpec& d = cfg.domain;
  json j;
  j["paths"] = {{"data_dir", cfg.paths.data_dir.string()},
                {"checkpoint_dir", cfg.paths.checkpoint_dir.string()},
                {"output_dir", cfg.paths.output_dir.string()}};
  j["domain"] = {{"num_classes", d.num_classes},
                 {"dim", d.dim},
                 {"class_means", d.class_means},
                 {"mean_radius", d.mean_radius},
                 {"noise_scale", d.noise_scale},
                 {"shift_translation", d.shift_translation},
                 {"shift_rotation", d.shift_rotation},
                 {"samples_per_class", d.samples_per_class},
                 {"target_class_proportions", d.target_class_proportions}};
  j["architecture"] = {{"hidden_dims", cfg.hidden_dims}, {"bottleneck_dim", cfg.bottleneck_dim}};
  j["source_training"] = train_to_json(cfg.source.train);
  j["source_training"]["loss"] = std::string(to_string(cfg.source.loss));
  const AdaptConfig& a = cfg.adaptation;
  j["adaptation"] = train_to_json(a.train);
  j["adaptation"].erase("max_epochs");
  j["adaptation"]["epochs"] = a.epochs;
  j["adaptation"]["refresh_per_epoch"] = a.refresh_per_epoch;
  j["adaptation"]["freeze_classifier"] = a.freeze_classifier;
  j["adaptation"]["loss"] = std::string(to_string(a.loss));
  j["adaptation"]["gradient_mode"] = std::string(to_string(a.loss_params.mode));
  const LossParams& lp = a.loss_params;
  j["loss_params"] = {{"focal_gamma", lp.focal_gamma}, {"rce_a", lp.rce_a},
                      {"sce_alpha", lp.sce_alpha},     {"sce_beta", lp.sce_beta},
                      {"gce_q", lp.gce_q}};
  std::vector<std::string> losses;
  for (LossId id : cfg.compare_losses) losses.emplace_back(to_string(id));
  j["compare"] = {{"losses", losses}};
  j["seeds"] = cfg.seeds;
  const VerifyConfig& v = cfg.verify;
  j["verify"] = {{"boundedness_ks", v.boundedness_ks},
                 {"boundedness_samples", v.boundedness_samples},
                 {"plogp_grid_points", v.plogp_grid_points},
                 {"theorem_ks", v.theorem_ks},
                 {"theorem_matrices", v.theorem_matrices},
                 {"theorem_samples", v.theorem_samples},
                 {"grid_resolution", v.grid_resolution},
                 {"gradcheck_instances", v.gradcheck_instances},
                 {"gradcheck_step", v.gradcheck_step},
                 {"gradcheck_tol", v.gradcheck_tol}};
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg = default_config();
  check_keys(j, {"paths", "domain", "architecture", "source_training", "adaptation", "loss_params",
                 "compare", "seeds", "verify"},
             "config");
  if (auto it = j.find("paths"); it != j.end()) {
    check_keys(*it, {"data_dir", "checkpoint_dir", "output_dir"}, "paths");
    std::string s;
    s = cfg.paths.data_dir.string(), read(*it, "data_dir", s, "paths"), cfg.paths.data_dir = s;
    s = cfg.paths.checkpoint_dir.string(), read(*it, "checkpoint_dir", s, "paths"),
    cfg.paths.checkpoint_dir = s;
    s = cfg.paths.output_dir.string(), read(*it, "output_dir", s, "paths"), cfg.paths.output_dir = s;
  }
  if (auto it = j.find("domain"); it != j.end()) {
    const std::string w = "domain";
    check_keys(*it, {"num_classes", "dim", "class_means", "mean_radius", "noise_scale",
                     "shift_translation", "shift_rotation", "samples_per_class",
                     "target_class_proportions"},
               w);
    DomainSpec& d = cfg.domain;
    const std::size_t old_k = d.num_classes;
    read_positive(*it, "num_classes", d.num_classes, w);
    read_positive(*it, "dim", d.dim, w);
    read(*it, "class_means", d.class_means, w);
    read(*it, "mean_radius", d.mean_radius, w);
    read_positive(*it, "noise_scale", d.noise_scale, w);
    read(*it, "shift_translation", d.shift_translation, w);
    read(*it, "shift_rotation", d.shift_rotation, w);
    read_positive(*it, "samples_per_class", d.samples_per_class, w);
    if (d.num_classes != old_k && !it->contains("target_class_proportions")) {
      d.target_class_proportions.clear();
    }
    read(*it, "target_class_proportions", d.target_class_proportions, w);
  }
  if (auto it = j.find("architecture"); it != j.end()) {
    check_keys(*it, {"hidden_dims", "bottleneck_dim"}, "architecture");
    read(*it, "hidden_dims", cfg.hidden_dims, "architecture");
    read(*it, "bottleneck_dim", cfg.bottleneck_dim, "architecture");
  }
  if (auto it = j.find("source_training"); it != j.end()) {
    train_from_json(*it, cfg.source.train, "source_training", {"loss"});
    cfg.source.loss = read_loss(*it, "loss", cfg.source.loss, "source_training");
  }
  if (auto it = j.find("adaptation"); it != j.end()) {
    const std::string w = "adaptation";
    AdaptConfig& a = cfg.adaptation;
    json train_part = *it;
    for (const char* k : {"epochs", "refresh_per_epoch", "freeze_classifier", "loss", "gradient_mode"}) {
      train_part.erase(k);
    }
    if (train_part.contains("max_epochs")) throw ConfigError("adaptation.max_epochs: unknown field");
    train_from_json(train_part, a.train, w, {});
    read(*it, "epochs", a.epochs, w);
    if (a.epochs < 1) throw ConfigError("adaptation.epochs: must be >= 1");
    read(*it, "refresh_per_epoch", a.refresh_per_epoch, w);
    read(*it, "freeze_classifier", a.freeze_classifier, w);
    a.loss = read_loss(*it, "loss", a.loss, w);
    std::string mode(to_string(a.loss_params.mode));
    read(*it, "gradient_mode", mode, w);
    try {
      a.loss_params.mode = gradient_mode_from_string(mode);
    } catch (const InvalidInput& e) {
      throw ConfigError(std::string("adaptation.gradient_mode: ") + e.what());
    }
  }
  if (auto it = j.find("loss_params"); it != j.end()) {
    const std::string w = "loss_params";
    check_keys(*it, {"focal_gamma", "rce_a", "sce_alpha", "sce_beta", "gce_q"}, w);
    LossParams& lp = cfg.adaptation.loss_params;
    read(*it, "focal_gamma", lp.focal_gamma, w);
    read(*it, "rce_a", lp.rce_a, w);
    read(*it, "sce_alpha", lp.sce_alpha, w);
    read(*it, "sce_beta", lp.sce_beta, w);
    read(*it, "gce_q", lp.gce_q, w);
    if (!(lp.focal_gamma >= 0.0)) throw ConfigError("loss_params.focal_gamma: must be >= 0");
    if (!(lp.rce_a < 0.0)) throw ConfigError("loss_params.rce_a: must be < 0");
    if (!(lp.sce_alpha >= 0.0) || !(lp.sce_beta >= 0.0) || lp.sce_alpha + lp.sce_beta <= 0.0) {
      throw ConfigError("loss_params.sce_alpha/sce_beta: must be >= 0 and not both zero");
    }
    if (!(lp.gce_q > 0.0 && lp.gce_q <= 1.0)) throw ConfigError("loss_params.gce_q: must lie in (0, 1]");
  }
  if (auto it = j.find("compare"); it != j.end()) {
    check_keys(*it, {"losses"}, "compare");
    std::vector<std::string> names;
    read(*it, "losses", names, "compare");
    if (it->contains("losses")) {
      cfg.compare_losses.clear();
      for (const auto& n : names) {
        try {
          cfg.compare_losses.push_back(loss_id_from_string(n));
        } catch (const InvalidInput& e) {
          throw ConfigError(std::string("compare.losses: ") + e.what());
        }
      }
    }
  }
  read(j, "seeds", cfg.seeds, "");
  if (auto it = j.find("verify"); it != j.end()) {
    const std::string w = "verify";
    check_keys(*it, {"boundedness_ks", "boundedness_samples", "plogp_grid_points", "theorem_ks",
                     "theorem_matrices", "theorem_samples", "grid_resolution",
                     "gradcheck_instances", "gradcheck_step", "gradcheck_tol"},
               w);
    VerifyConfig& v = cfg.verify;
    read(*it, "boundedness_ks", v.boundedness_ks, w);
    read(*it, "boundedness_samples", v.boundedness_samples, w);
    read(*it, "plogp_grid_points", v.plogp_grid_points, w);
    read(*it, "theorem_ks", v.theorem_ks, w);
    read(*it, "theorem_matrices", v.theorem_matrices, w);
    read(*it, "theorem_samples", v.theorem_samples, w);
    read(*it, "grid_resolution", v.grid_resolution, w);
    read(*it, "gradcheck_instances", v.gradcheck_instances, w);
    read(*it, "gradcheck_step", v.gradcheck_step, w);
    read(*it, "gradcheck_tol", v.gradcheck_tol, w);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw PathError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config: malformed JSON at byte " + std::to_string(e.byte));
  }
  return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = config_to_json(cfg);
  j["paths"].erase("output_dir");
  return fnv1a_hex(j.dump());
}

ExperimentConfig resolve_config(ExperimentConfig cfg, const RunOptions& opts) {
  if (const char* env = std::getenv("FALAB_OUT_DIR"); env && *env) cfg.paths.output_dir = env;
  if (opts.out) cfg.paths.output_dir = *opts.out;
  if (opts.seed) cfg.seeds = {*opts.seed};
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Pipelines

DomainSpec seeded_domain(const ExperimentConfig& cfg, std::uint64_t seed) {
  DomainSpec d = cfg.domain;
  d.seed = seed;
  return d;
}

AdaptConfig seeded_adaptation(const ExperimentConfig& cfg, std::uint64_t seed, LossId loss) {
  AdaptConfig a = cfg.adaptation;
  a.train.seed = seed;
  a.loss = loss;
  return a;
}

namespace {

Model train_source_model(const ExperimentConfig& cfg, const Dataset& source, std::uint64_t seed) {
  Rng init(seed, 0x696e6974);  // "init"
  Model model = Model::init_uniform(cfg.architecture(), init);
  TrainConfig tc = cfg.source.train;
  tc.seed = seed;
  return train_supervised(std::move(model), source, cfg.source.loss, cfg.adaptation.loss_params, tc)
      .model;
}

}  // namespace

SeedSetup prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedSetup s{seed, generate_pair(seeded_domain(cfg, seed)), Model::zeros(cfg.architecture()), {}, {}};
  s.source_model = train_source_model(cfg, s.data.source, seed);
  s.source_on_source = evaluate(s.source_model, s.data.source);
  s.source_on_target = evaluate(s.source_model, s.data.target);
  return s;
}

double sign_test_p(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  // log-space binomial tail
  double p = 0.0;
  for (std::size_t j = wins; j <= n; ++j) {
    const double log_c = std::lgamma(static_cast<double>(n) + 1.0) -
                         std::lgamma(static_cast<double>(j) + 1.0) -
                         std::lgamma(static_cast<double>(n - j) + 1.0);
    p += std::exp(log_c - static_cast<double>(n) * std::log(2.0));
  }
  return std::min(1.0, p);
}

ComparisonResult run_comparison(const ExperimentConfig& cfg,
                                const std::vector<std::pair<std::string, LossId>>& methods,
                                const std::string& reference, int jobs) {
  const std::size_t n_seeds = cfg.seeds.size();
  const std::size_t n_methods = methods.size() + 1;
  std::vector<ComparisonRow> rows(n_seeds * n_methods);
  parallel_for(n_seeds, jobs, [&](std::size_t si) {
    const std::uint64_t seed = cfg.seeds[si];
    const SeedSetup setup = prepare_seed(cfg, seed);
    const double pre = setup.source_on_target.accuracy;
    ComparisonRow& base = rows[si * n_methods];
    base = {"source-only", seed, pre, pre, setup.source_on_target.per_class_accuracy};
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const AdaptResult res =
          adapt(setup.source_model, setup.data.target.features,
                seeded_adaptation(cfg, seed, methods[m].second));
      const Metrics post = evaluate(res.model, setup.data.target);
      require_finite(post.accuracy, methods[m].first);
      rows[si * n_methods + m + 1] = {methods[m].first, seed, pre, post.accuracy,
                                      post.per_class_accuracy};
    }
  });

  ComparisonResult out;
  out.rows = rows;
  std::vector<std::string> names{"source-only"};
  for (const auto& m : methods) names.push_back(m.first);
  const auto ref_it = std::find(names.begin(), names.end(), reference);
  const std::size_t ref = ref_it == names.end() ? 0 : static_cast<std::size_t>(ref_it - names.begin());
  for (std::size_t m = 0; m < n_methods; ++m) {
    MethodSummary s;
    s.method = names[m];
    for (std::size_t si = 0; si < n_seeds; ++si) {
      const ComparisonRow& r = rows[si * n_methods + m];
      s.mean_pre += r.pre_accuracy;
      s.mean_post += r.post_accuracy;
      const double other = rows[si * n_methods + ref].post_accuracy;
      if (r.post_accuracy > other) ++s.wins;
      if (r.post_accuracy < other) ++s.losses;
    }
    s.mean_pre /= static_cast<double>(n_seeds);
    s.mean_post /= static_cast<double>(n_seeds);
    s.sign_test_p = sign_test_p(s.wins, s.losses);
    out.summary.push_back(s);
  }
  return out;
}

std::vector<std::pair<std::string, LossId>> ablation_methods() {
  return {{"term1", LossId::kFalTerm1},
          {"term2", LossId::kFalTerm2},
          {"term1+term2", LossId::kFal},
          {"term1+term2+weights", LossId::kWeightedFal}};
}

ComparisonResult run_ablation(const ExperimentConfig& cfg, int jobs) {
  return run_comparison(cfg, ablation_methods(), "source-only", jobs);
}

bool VerifyResult::all_within_bound() const {
  for (const auto& b : boundedness) {
    if (b.violations != 0) return false;
  }
  for (const auto& t : theorem) {
    if (!t.report.within_bound) return false;
  }
  return true;
}

bool VerifyResult::all_assumptions_hold() const {
  for (const auto& t : theorem) {
    if (!t.report.assumption_holds) return false;
  }
  return true;
}

VerifyResult run_verify(const ExperimentConfig& cfg, std::uint64_t seed) {
  const VerifyConfig& v = cfg.verify;
  const Rng root(seed, 0x76657269);  // "veri"
  VerifyResult out;

  for (std::size_t k : v.boundedness_ks) {
    Rng rng = root.split(100 + k);
    out.boundedness.push_back(boundedness_sweep(k, v.boundedness_samples, rng));
  }
  out.plogp_max = maximize_plogp(v.plogp_grid_points);

  Rng trng = root.split(1);
  for (std::size_t m = 0; m < v.theorem_matrices; ++m) {
    const std::size_t k = v.theorem_ks[m % v.theorem_ks.size()];
    const NoiseMatrix eta = NoiseMatrix::random_clean_dominant(k, trng);
    std::vector<int> labels(v.theorem_samples);
    for (int& y : labels) y = static_cast<int>(trng.uniform_index(k));
    out.theorem.push_back({k, "fuzzy_term", eta.descriptor(), seed,
                           bruteforce_risk_minimizer(labels, k, eta, LossId::kFuzzyTerm,
                                                     v.grid_resolution, true)
                               .report});
    for (LossId id : {LossId::kFal, LossId::kCrossEntropy}) {
      out.contrast.push_back({k, std::string(to_string(id)), eta.descriptor(), seed,
                              bruteforce_risk_minimizer(labels, k, eta, id, v.grid_resolution,
                                                        false)
                                  .report});
    }
  }

  Rng grng = root.split(2);
  const std::vector<LossId> all{LossId::kCrossEntropy, LossId::kFal,        LossId::kFalTerm1,
                                LossId::kFalTerm2,     LossId::kFuzzyTerm,  LossId::kWeightedFal,
                                LossId::kFocal,        LossId::kReverseCe,  LossId::kSymmetricCe,
                                LossId::kGeneralizedCe};
  for (LossId id : all) {
    std::vector<GradientMode> modes{GradientMode::kDifferentiateThrough};
    const bool family = id == LossId::kFal || id == LossId::kFalTerm1 || id == LossId::kFalTerm2 ||
                        id == LossId::kFuzzyTerm || id == LossId::kWeightedFal;
    if (family) modes.push_back(GradientMode::kConstantLambda);
    for (GradientMode mode : modes) {
      GradcheckRow row{std::string(to_string(id)), std::string(to_string(mode)),
                       v.gradcheck_instances, 0.0, false};
      for (std::size_t n = 0; n < v.gradcheck_instances; ++n) {
        const std::size_t k = 2 + grng.uniform_index(9);
        std::vector<double> logits(k);
        for (double& l : logits) l = 2.0 * grng.normal();
        LossParams params = cfg.adaptation.loss_params;
        params.mode = mode;
        if (id == LossId::kWeightedFal) {
          std::vector<double> w(k);
          for (double& x : w) x = grng.uniform(0.5, 2.0);
          params.weights = ClassWeights(std::move(w));
        }
        const LabelDist y(grng.uniform_index(k), k);
        row.max_rel_error =
            std::max(row.max_rel_error, grad_check(id, logits, y, params, v.gradcheck_step));
      }
      row.pass = row.max_rel_error <= v.gradcheck_tol;
      out.gradcheck.push_back(row);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

std::filesystem::path source_data_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return under(cfg, cfg.paths.data_dir) / seed_dir(seed) / "source.fds";
}
std::filesystem::path target_data_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return under(cfg, cfg.paths.data_dir) / seed_dir(seed) / "target_eval.fds";
}
std::filesystem::path target_unlabeled_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return under(cfg, cfg.paths.data_dir) / seed_dir(seed) / "target.fds";
}
std::filesystem::path source_checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return under(cfg, cfg.paths.checkpoint_dir) / seed_dir(seed) / "source_model.json";
}
std::filesystem::path adapted_checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return under(cfg, cfg.paths.checkpoint_dir) / seed_dir(seed) / "adapted_model.json";
}

void cmd_gen(const ExperimentConfig& cfg, const RunOptions& opts) {
  const std::string hash = config_hash(cfg);
  archive_config(cfg, "gen");
  std::vector<std::vector<std::string>> rows(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), opts.jobs, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const DomainPair pair = generate_pair(seeded_domain(cfg, seed));
    save_dataset(pair.source, source_data_path(cfg, seed));
    save_dataset(pair.target, target_data_path(cfg, seed));
    save_dataset(pair.target.unlabeled(), target_unlabeled_path(cfg, seed));
    rows[i] = {std::to_string(seed), std::to_string(pair.source.size()),
               std::to_string(pair.target.size()), fmt(pair.bayes_disagreement), hash};
  });
  CsvTable t({"seed", "n_source", "n_target", "bayes_disagreement", "config_hash"});
  for (auto& r : rows) t.add_row(std::move(r));
  write_file_atomic(cfg.paths.output_dir / "gen_summary.csv", t.str());
}

void cmd_train_source(const ExperimentConfig& cfg, const RunOptions& opts) {
  const std::string hash = config_hash(cfg);
  archive_config(cfg, "train_source");
  std::vector<std::vector<std::vector<std::string>>> rows(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), opts.jobs, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const Dataset source = load_dataset(source_data_path(cfg, seed));
    const Model model = train_source_model(cfg, source, seed);
    save_checkpoint(model, source_checkpoint_path(cfg, seed));
    auto add = [&](const std::string& split, const Metrics& m) {
      require_finite(m.accuracy, "source metrics");
      rows[i].push_back({std::to_string(seed), split, fmt(m.accuracy),
                         join_doubles(m.per_class_accuracy), hash});
    };
    add("source", evaluate(model, source));
    if (std::filesystem::exists(target_data_path(cfg, seed))) {
      add("target", evaluate(model, load_dataset(target_data_path(cfg, seed))));
    }
    if (opts.emit_plots) {
      write_file_atomic(cfg.paths.output_dir / "plots" / (seed_dir(seed) + "_source_confusion.svg"),
                        svg_heatmap("source model on source", evaluate(model, source).confusion));
    }
  });
  CsvTable t({"seed", "split", "accuracy", "per_class_accuracy", "config_hash"});
  for (auto& per_seed : rows) {
    for (auto& r : per_seed) t.add_row(std::move(r));
  }
  write_file_atomic(cfg.paths.output_dir / "source_metrics.csv", t.str());
}

void cmd_adapt(const ExperimentConfig& cfg, const RunOptions& opts) {
  const std::string hash = config_hash(cfg);
  archive_config(cfg, "adapt");
  std::vector<std::vector<std::string>> rows(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), opts.jobs, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const Model source_model = load_checkpoint(source_checkpoint_path(cfg, seed));
    const Dataset target = load_dataset(target_unlabeled_path(cfg, seed));
    if (target.has_labels()) throw InvalidInput("adaptation input must be unlabeled");
    std::optional<Dataset> eval;
    if (std::filesystem::exists(target_data_path(cfg, seed))) {
      eval = load_dataset(target_data_path(cfg, seed));
    }
    std::optional<ReportOnlyLabels> truth;
    if (eval) truth.emplace(eval->labels, eval->num_classes);

    const AdaptResult res = adapt(source_model, target.features,
                                  seeded_adaptation(cfg, seed, cfg.adaptation.loss),
                                  truth ? &*truth : nullptr);
    save_checkpoint(res.model, adapted_checkpoint_path(cfg, seed));

    json report;
    report["seed"] = seed;
    report["config_hash"] = hash;
    report["loss"] = std::string(to_string(cfg.adaptation.loss));
    report["epochs"] = json::array();
    for (const auto& e : res.report.epochs) {
      require_finite(e.mean_loss, "adaptation loss");
      json je = {{"epoch", e.epoch},
                 {"refreshed", e.refreshed},
                 {"mean_loss", e.mean_loss},
                 {"class_counts", e.class_counts},
                 {"weights", e.weights},
                 {"guarded_classes", e.guarded_classes}};
      je["pseudo_label_accuracy"] =
          e.pseudo_label_accuracy ? json(*e.pseudo_label_accuracy) : json(nullptr);
      report["epochs"].push_back(je);
    }
    report["final_accuracy"] =
        res.report.final_accuracy ? json(*res.report.final_accuracy) : json(nullptr);
    if (eval) {
      const Metrics pre = evaluate(source_model, *eval);
      const Metrics post = evaluate(res.model, *eval);
      report["pre_metrics"] = metrics_json(pre);
      report["post_metrics"] = metrics_json(post);
      require_finite(post.accuracy, "adaptation metrics");
      rows[i] = {std::to_string(seed), std::string(to_string(cfg.adaptation.loss)),
                 fmt(pre.accuracy), fmt(post.accuracy), join_doubles(post.per_class_accuracy), hash};
      if (opts.emit_plots) {
        std::vector<double> acc;
        for (const auto& e : res.report.epochs) acc.push_back(e.pseudo_label_accuracy.value_or(0.0));
        acc.push_back(*res.report.final_accuracy);
        write_file_atomic(cfg.paths.output_dir / "plots" / (seed_dir(seed) + "_accuracy.svg"),
                          svg_lines("pseudo-label accuracy by epoch", {{"accuracy", acc}}));
        write_file_atomic(cfg.paths.output_dir / "plots" / (seed_dir(seed) + "_confusion.svg"),
                          svg_heatmap("adapted model on target", post.confusion));
      }
    } else {
      rows[i] = {std::to_string(seed), std::string(to_string(cfg.adaptation.loss)), "", "", "", hash};
    }
    write_file_atomic(cfg.paths.output_dir / ("adapt_report_" + seed_dir(seed) + ".json"),
                      report.dump(2));
  });
  CsvTable t({"seed", "loss", "pre_accuracy", "post_accuracy", "per_class_accuracy", "config_hash"});
  for (auto& r : rows) t.add_row(std::move(r));
  write_file_atomic(cfg.paths.output_dir / "adapt_metrics.csv", t.str());
}

namespace {

void write_comparison(const ExperimentConfig& cfg, const ComparisonResult& res,
                      const std::string& stem, bool emit_plots) {
  const std::string hash = config_hash(cfg);
  CsvTable rows({"loss", "seed", "pre_accuracy", "post_accuracy", "per_class_accuracy",
                 "config_hash"});
  for (const auto& r : res.rows) {
    require_finite(r.post_accuracy, stem);
    rows.add_row({r.method, std::to_string(r.seed), fmt(r.pre_accuracy), fmt(r.post_accuracy),
                  join_doubles(r.per_class_accuracy), hash});
  }
  write_file_atomic(cfg.paths.output_dir / (stem + ".csv"), rows.str());
  CsvTable summary({"loss", "seed", "mean_pre_accuracy", "mean_post_accuracy", "wins", "losses",
                    "sign_test_p", "config_hash"});
  for (const auto& s : res.summary) {
    summary.add_row({s.method, "all", fmt(s.mean_pre), fmt(s.mean_post), std::to_string(s.wins),
                     std::to_string(s.losses), fmt(s.sign_test_p), hash});
  }
  write_file_atomic(cfg.paths.output_dir / (stem + "_summary.csv"), summary.str());
  if (emit_plots) {
    std::vector<std::pair<std::string, std::vector<double>>> series;
    for (const auto& s : res.summary) {
      std::vector<double> acc;
      for (const auto& r : res.rows) {
        if (r.method == s.method) acc.push_back(r.post_accuracy);
      }
      series.emplace_back(s.method, acc);
    }
    write_file_atomic(cfg.paths.output_dir / "plots" / (stem + "_by_seed.svg"),
                      svg_lines("target accuracy by seed", series));
  }
}

}  // namespace

void cmd_compare(const ExperimentConfig& cfg, const RunOptions& opts) {
  archive_config(cfg, "compare");
  std::vector<std::pair<std::string, LossId>> methods;
  for (LossId id : cfg.compare_losses) methods.emplace_back(std::string(to_string(id)), id);
  const std::string reference =
      std::find(cfg.compare_losses.begin(), cfg.compare_losses.end(), LossId::kCrossEntropy) !=
              cfg.compare_losses.end()
          ? "ce"
          : "source-only";
  write_comparison(cfg, run_comparison(cfg, methods, reference, opts.jobs), "compare",
                   opts.emit_plots);
}

void cmd_ablate(const ExperimentConfig& cfg, const RunOptions& opts) {
  archive_config(cfg, "ablate");
  write_comparison(cfg, run_ablation(cfg, opts.jobs), "ablation", opts.emit_plots);
}

bool cmd_verify(const ExperimentConfig& cfg, const RunOptions& opts) {
  (void)opts;
  const std::string hash = config_hash(cfg);
  archive_config(cfg, "verify");
  const std::uint64_t seed = cfg.seeds.front();
  const VerifyResult res = run_verify(cfg, seed);

  CsvTable bounded({"K", "samples", "violations", "min_value", "max_value", "bound", "within_bound",
                    "seed", "config_hash"});
  for (const auto& b : res.boundedness) {
    bounded.add_row({std::to_string(b.k), std::to_string(b.samples), std::to_string(b.violations),
                     fmt(b.min_value), fmt(b.max_value), fmt(b.bound),
                     b.violations == 0 ? "true" : "false", std::to_string(seed), hash});
  }
  write_file_atomic(cfg.paths.output_dir / "boundedness.csv", bounded.str());

  CsvTable plogp({"grid_points", "argmax", "max_value", "seed", "config_hash"});
  plogp.add_row({std::to_string(cfg.verify.plogp_grid_points), fmt(res.plogp_max.argmax),
                 fmt(res.plogp_max.value), std::to_string(seed), hash});
  write_file_atomic(cfg.paths.output_dir / "plogp_max.csv", plogp.str());

  auto theorem_table = [&](const std::vector<TheoremRow>& rows) {
    CsvTable t({"K", "loss", "eta", "gap", "C_K", "within_bound", "risk_noisy_at_clean_opt",
                "risk_noisy_at_noisy_opt", "certification_delta", "seed", "config_hash"});
    json arr = json::array();
    for (const auto& r : rows) {
      t.add_row({std::to_string(r.k), r.loss, r.eta, fmt(r.report.gap), fmt(r.report.bound),
                 r.report.within_bound ? "true" : "false", fmt(r.report.risk_noisy_at_clean_opt),
                 fmt(r.report.risk_noisy_at_noisy_opt), fmt(r.report.certification_delta),
                 std::to_string(r.seed), hash});
      arr.push_back({{"K", r.k},
                     {"loss", r.loss},
                     {"eta", r.eta},
                     {"gap", r.report.gap},
                     {"C_K", r.report.bound},
                     {"within_bound", r.report.within_bound},
                     {"assumption_holds", r.report.assumption_holds},
                     {"risk_noisy_at_clean_opt", r.report.risk_noisy_at_clean_opt},
                     {"risk_noisy_at_noisy_opt", r.report.risk_noisy_at_noisy_opt},
                     {"certification_delta", r.report.certification_delta},
                     {"grid_resolution", r.report.grid_resolution},
                     {"seed", r.seed},
                     {"config_hash", hash}});
    }
    return std::make_pair(t, arr);
  };
  auto [thm_csv, thm_json] = theorem_table(res.theorem);
  write_file_atomic(cfg.paths.output_dir / "theorem1.csv", thm_csv.str());
  write_file_atomic(cfg.paths.output_dir / "theorem1.json", thm_json.dump(2));
  auto [con_csv, con_json] = theorem_table(res.contrast);
  write_file_atomic(cfg.paths.output_dir / "theorem1_contrast.csv", con_csv.str());

  CsvTable grads({"loss", "gradient_mode", "instances", "max_rel_error", "pass", "seed",
                  "config_hash"});
  for (const auto& g : res.gradcheck) {
    grads.add_row({g.loss, g.mode, std::to_string(g.instances), fmt(g.max_rel_error),
                   g.pass ? "true" : "false", std::to_string(seed), hash});
  }
  write_file_atomic(cfg.paths.output_dir / "gradcheck.csv", grads.str());

  if (!res.all_assumptions_hold()) {
    throw AssumptionViolated("a sampled noise matrix is not clean-labels-dominant");
  }
  return res.all_within_bound();
}

}  // namespace falab
