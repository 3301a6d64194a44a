#include "falab/sfda.hpp"

#include <cmath>

#include "falab/errors.hpp"
#include "falab/report_io.hpp"

namespace falab {

LabelDist pseudo_label(const ProbVector& p) { return LabelDist(p.argmax(), p.size()); }

MemoryBank MemoryBank::from_predictions(std::span<const int> predictions, std::size_t k) {
  if (predictions.empty()) throw InvalidInput("memory bank needs at least one prediction");
  if (k < 2) throw InvalidInput("memory bank needs K >= 2");
  MemoryBank bank;
  bank.last_predictions.assign(predictions.begin(), predictions.end());
  bank.class_counts.assign(k, 0);
  for (int y : predictions) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw InvalidInput("prediction outside [0, K)");
    ++bank.class_counts[static_cast<std::size_t>(y)];
  }
  bank.mean_count = static_cast<double>(predictions.size()) / static_cast<double>(k);
  return bank;
}

MemoryBank build_memory_bank(const Model& model, const FeatureMatrix& target) {
  if (target.rows() == 0) throw InvalidInput("memory bank needs target samples");
  return MemoryBank::from_predictions(predict_labels(model, target), model.arch().num_classes);
}

BalancedWeights balanced_weights(const MemoryBank& bank) {
  std::vector<double> w(bank.num_classes());
  std::vector<std::size_t> guarded;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::size_t n = bank.class_counts[i];
    if (n == 0) guarded.push_back(i);
    w[i] = bank.mean_count / static_cast<double>(n == 0 ? 1 : n);
  }
  if (!guarded.empty()) {
    std::string msg = "memory bank: zero-count guard engaged for class";
    for (std::size_t c : guarded) msg += " " + std::to_string(c);
    log_warning(msg);
  }
  return BalancedWeights{ClassWeights(std::move(w)), std::move(guarded)};
}

ClassWeights class_weights(const MemoryBank& bank) { return balanced_weights(bank).weights; }

ReportOnlyLabels::ReportOnlyLabels(std::vector<int> labels, std::size_t num_classes)
    : labels_(std::move(labels)), k_(num_classes) {
  for (int y : labels_) {
    if (y < 0 || static_cast<std::size_t>(y) >= k_) throw InvalidInput("label outside [0, K)");
  }
}

double ReportOnlyLabels::accuracy_of(std::span<const int> predictions) const {
  if (predictions.size() != labels_.size() || labels_.empty()) {
    throw InvalidInput("prediction count != ground-truth count");
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels_.size(); ++i) hit += predictions[i] == labels_[i];
  return static_cast<double>(hit) / static_cast<double>(labels_.size());
}

void AdaptConfig::validate() const {
  train.validate();
  if (epochs < 1) throw InvalidInput("adaptation needs epochs >= 1");
}

AdaptResult adapt(Model source_model, const FeatureMatrix& target, const AdaptConfig& cfg,
                  const ReportOnlyLabels* hidden_truth) {
  cfg.validate();
  if (target.rows() == 0) throw InvalidInput("adaptation needs target samples");
  if (static_cast<std::size_t>(target.cols()) != source_model.arch().input_dim) {
    throw InvalidInput("target dim != model input dim");
  }
  if (hidden_truth && hidden_truth->size() != static_cast<std::size_t>(target.rows())) {
    throw InvalidInput("ground-truth count != target sample count");
  }
  const std::size_t k = source_model.arch().num_classes;
  LossParams params = cfg.loss_params;
  if (cfg.loss == LossId::kWeightedFal) params.weights = ClassWeights::ones(k);
  params.validate(cfg.loss, k);

  AdaptResult result{std::move(source_model), {}};
  Model& model = result.model;
  Rng rng(cfg.train.seed, 0x61647074);  // "adpt"
  SgdMomentum opt(model.num_params(), cfg.train.momentum);
  const std::vector<double> lr = learning_rates(model, cfg.train, cfg.freeze_classifier);

  MemoryBank bank;
  std::vector<std::size_t> guarded;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    AdaptEpochRecord rec;
    rec.epoch = epoch;
    if (epoch == 0 || cfg.refresh_per_epoch) {
      bank = build_memory_bank(model, target);
      BalancedWeights bw = balanced_weights(bank);
      guarded = bw.guarded;
      if (cfg.loss == LossId::kWeightedFal) params.weights = bw.weights;
      rec.refreshed = true;
    }
    rec.class_counts = bank.class_counts;
    rec.guarded_classes = guarded;
    if (params.weights) {
      rec.weights.assign(params.weights->values().begin(), params.weights->values().end());
    }
    if (hidden_truth) rec.pseudo_label_accuracy = hidden_truth->accuracy_of(bank.last_predictions);

    const std::vector<int>& pseudo = bank.last_predictions;
    SampleLoss sample_loss = [&](std::size_t i, const ProbVector& p) {
      return evaluate_loss(cfg.loss, p, LabelDist(static_cast<std::size_t>(pseudo[i]), k), params);
    };
    rec.mean_loss = train_epoch(model, opt, target, sample_loss, cfg.train, lr, rng, epoch);
    result.report.epochs.push_back(std::move(rec));
  }
  if (hidden_truth) result.report.final_accuracy = hidden_truth->accuracy_of(predict_labels(model, target));
  return result;
}

Metrics metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion) {
  const std::size_t k = confusion.size();
  Metrics m;
  m.confusion = confusion;
  m.per_class_accuracy.assign(k, 0.0);
  std::size_t total = 0, hit = 0;
  for (std::size_t y = 0; y < k; ++y) {
    if (confusion[y].size() != k) throw InvalidInput("confusion matrix must be square");
    std::size_t row = 0;
    for (std::size_t c : confusion[y]) row += c;
    total += row;
    hit += confusion[y][y];
    m.per_class_accuracy[y] =
        row == 0 ? 0.0 : static_cast<double>(confusion[y][y]) / static_cast<double>(row);
  }
  if (total == 0) throw InvalidInput("confusion matrix is empty");
  m.accuracy = static_cast<double>(hit) / static_cast<double>(total);
  return m;
}

Metrics metrics_from_predictions(std::span<const int> labels, std::span<const int> predictions,
                                 std::size_t k) {
  if (labels.empty()) throw InvalidInput("cannot evaluate on empty data");
  if (labels.size() != predictions.size()) throw InvalidInput("prediction count != label count");
  std::vector<std::vector<std::size_t>> conf(k, std::vector<std::size_t>(k, 0));
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const int y = labels[n], p = predictions[n];
    if (y < 0 || static_cast<std::size_t>(y) >= k || p < 0 || static_cast<std::size_t>(p) >= k) {
      throw InvalidInput("label outside [0, K)");
    }
    ++conf[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
  }
  return metrics_from_confusion(conf);
}

Metrics evaluate(const Model& model, const Dataset& labeled) {
  if (labeled.size() == 0) throw InvalidInput("cannot evaluate on empty data");
  if (!labeled.has_labels()) throw InvalidInput("evaluation needs labels");
  return metrics_from_predictions(labeled.labels, predict_labels(model, labeled.features),
                                  model.arch().num_classes);
}

std::vector<bool> row_diagonal_dominance(const std::vector<std::vector<std::size_t>>& confusion) {
  std::vector<bool> out;
  for (std::size_t y = 0; y < confusion.size(); ++y) {
    bool dominant = true;
    for (std::size_t i = 0; i < confusion[y].size(); ++i) {
      if (i != y && confusion[y][i] >= confusion[y][y]) dominant = false;
    }
    out.push_back(dominant);
  }
  return out;
}

}  // namespace falab
