#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "falab/datagen.hpp"
#include "falab/errors.hpp"
#include "falab/report_io.hpp"
#include "falab/sfda.hpp"

using namespace falab;

namespace {

struct CapturedLog {
  std::vector<std::string> lines;
  LogSink previous;
  CapturedLog() {
    previous = set_log_sink([this](std::string_view m) { lines.emplace_back(m); });
  }
  ~CapturedLog() { set_log_sink(previous); }
};

std::vector<int> labels_from_counts(const std::vector<std::size_t>& counts) {
  std::vector<int> out;
  for (std::size_t c = 0; c < counts.size(); ++c) out.insert(out.end(), counts[c], static_cast<int>(c));
  return out;
}

struct Setup {
  DomainPair data;
  Model model;
};

Setup small_setup(double rotation) {
  DomainSpec spec;
  spec.num_classes = 3;
  spec.dim = 2;
  spec.class_means = {{3.0, 0.0}, {-1.5, 2.6}, {-1.5, -2.6}};
  spec.noise_scale = 0.8;
  spec.samples_per_class = 150;
  spec.shift_rotation = rotation;
  spec.seed = 4;
  Setup s{generate_pair(spec), Model::zeros(Architecture{2, {16}, 8, 3})};
  Rng init(1);
  TrainConfig tc;
  tc.lr_backbone = tc.lr_head = 0.02;
  tc.max_epochs = 15;
  s.model = train_supervised(Model::init_uniform(s.model.arch(), init), s.data.source,
                             LossId::kCrossEntropy, LossParams{}, tc)
                .model;
  return s;
}

}  // namespace

TEST_CASE("pseudo labels") {
  CHECK(pseudo_label(ProbVector::from({0.1, 0.7, 0.2})).hard_index() == 1);
  CHECK(pseudo_label(ProbVector::from({0.5, 0.5})).hard_index() == 0);
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const ProbVector p = sample_simplex(5, rng);
    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    std::vector<double> q(5);
    for (std::size_t i = 0; i < 5; ++i) q[perm[i]] = p[i];
    CHECK(pseudo_label(ProbVector::from(q)).hard_index() == perm[pseudo_label(p).hard_index()]);
  }
}

TEST_CASE("memory bank weights") {
  const MemoryBank bank = MemoryBank::from_predictions(labels_from_counts({10, 20, 30}), 3);
  CHECK(bank.mean_count == 20.0);
  const ClassWeights w = class_weights(bank);
  CHECK(w.values()[0] == 2.0);
  CHECK(w.values()[1] == 1.0);
  CHECK(w.values()[2] == 20.0 / 30.0);

  const ClassWeights eq = class_weights(MemoryBank::from_predictions(labels_from_counts({7, 7, 7, 7}), 4));
  for (double v : eq.values()) CHECK(v == 1.0);

  Rng rng(17);
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 2 + rng.uniform_index(9);
    std::vector<std::size_t> counts(k);
    for (auto& c : counts) c = 1 + rng.uniform_index(200);
    const MemoryBank b = MemoryBank::from_predictions(labels_from_counts(counts), k);
    const double m = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0})) /
                     static_cast<double>(k);
    const ClassWeights cw = class_weights(b);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(cw.values()[i] == m / static_cast<double>(counts[i]));
      total += static_cast<double>(counts[i]) * cw.values()[i];
    }
    CHECK(total == doctest::Approx(static_cast<double>(k) * m).epsilon(1e-12));
  }
}

TEST_CASE("zero-count guard is applied and logged") {
  CapturedLog log;
  const BalancedWeights bw = balanced_weights(MemoryBank::from_predictions(labels_from_counts({6, 0, 3}), 3));
  CHECK(bw.weights.values()[1] == 3.0);
  CHECK(bw.guarded == std::vector<std::size_t>{1});
  REQUIRE(log.lines.size() == 1);
  CHECK(log.lines[0].find("class 1") != std::string::npos);
  CHECK_THROWS_AS(MemoryBank::from_predictions(std::vector<int>{}, 3), InvalidInput);
  CHECK_THROWS_AS(MemoryBank::from_predictions(std::vector<int>{0, 3}, 3), InvalidInput);
}

TEST_CASE("evaluate and metrics") {
  const std::vector<int> y{0, 1, 2, 0, 1, 2};
  const Metrics perfect = metrics_from_predictions(y, y, 3);
  CHECK(perfect.accuracy == 1.0);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) CHECK(perfect.confusion[r][c] == (r == c ? 2u : 0u));
  }
  const std::vector<int> y2{0, 1, 0, 1};
  CHECK(metrics_from_predictions(y2, std::vector<int>{1, 1, 1, 1}, 2).accuracy == 0.5);

  const Metrics m = metrics_from_predictions(y, std::vector<int>{0, 2, 2, 1, 1, 2}, 3);
  const Metrics back = metrics_from_confusion(m.confusion);
  CHECK(back.accuracy == m.accuracy);
  CHECK(back.per_class_accuracy == m.per_class_accuracy);
  CHECK(row_diagonal_dominance(perfect.confusion) == std::vector<bool>{true, true, true});

  Dataset empty;
  empty.num_classes = 2;
  empty.features.resize(0, 2);
  empty.labels = {};
  CHECK_THROWS_AS(evaluate(Model::zeros(Architecture{2, {}, 0, 2}), empty), InvalidInput);
}

TEST_CASE("adaptation contracts") {
  const Setup s = small_setup(0.6);
  const FeatureMatrix& x = s.data.target.features;
  AdaptConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(adapt(s.model, x, cfg), InvalidInput);

  cfg.epochs = 1;
  cfg.train.lr_backbone = cfg.train.lr_head = 0.0;
  CHECK(adapt(s.model, x, cfg).model == s.model);

  cfg.epochs = 3;
  cfg.refresh_per_epoch = false;
  const AdaptResult fixed = adapt(s.model, x, cfg);
  CHECK(fixed.model == s.model);
  REQUIRE(fixed.report.epochs.size() == 3);
  for (const auto& e : fixed.report.epochs) {
    CHECK(e.class_counts == fixed.report.epochs[0].class_counts);
    CHECK(e.weights == fixed.report.epochs[0].weights);
  }
  CHECK(fixed.report.epochs[0].refreshed);
  CHECK_FALSE(fixed.report.epochs[1].refreshed);

  FeatureMatrix empty(0, 2);
  CHECK_THROWS_AS(adapt(s.model, empty, AdaptConfig{}), InvalidInput);

  AdaptConfig wild;
  wild.train.lr_backbone = wild.train.lr_head = 1e300;
  CHECK_THROWS_AS(adapt(s.model, x, wild), Diverged);
}

TEST_CASE("adaptation without shift does not hurt") {
  const Setup s = small_setup(0.0);
  const double pre = evaluate(s.model, s.data.target).accuracy;
  AdaptConfig cfg;
  cfg.train.seed = 3;
  const ReportOnlyLabels truth(s.data.target.labels, 3);
  const AdaptResult r = adapt(s.model, s.data.target.features, cfg, &truth);
  const double post = evaluate(r.model, s.data.target).accuracy;
  CHECK(post >= pre - 0.01);
  REQUIRE(r.report.final_accuracy.has_value());
  CHECK(*r.report.final_accuracy == post);
  CHECK(r.report.epochs[0].pseudo_label_accuracy.value() == pre);
}
