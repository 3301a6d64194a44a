#ifndef FALAB_SFDA_HPP_
#define FALAB_SFDA_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "falab/dataset.hpp"
#include "falab/losses.hpp"
#include "falab/nn.hpp"

namespace falab {

/// Argmax of p; the lowest index wins ties.
LabelDist pseudo_label(const ProbVector& p);

/// Per-sample predictions of the last inference pass and their class counts.
struct MemoryBank {
  std::vector<int> last_predictions;
  std::vector<std::size_t> class_counts;
  /// (1/K) sum_i n_i
  double mean_count = 0.0;

  static MemoryBank from_predictions(std::span<const int> predictions, std::size_t k);
  std::size_t num_classes() const { return class_counts.size(); }
};

MemoryBank build_memory_bank(const Model& model, const FeatureMatrix& target);

struct BalancedWeights {
  ClassWeights weights;
  /// Classes with n_i = 0, weighted as if n_i were 1.
  std::vector<std::size_t> guarded;
};

/// w_i = M / max(n_i, 1). Engaging the zero-count guard is logged.
BalancedWeights balanced_weights(const MemoryBank& bank);
ClassWeights class_weights(const MemoryBank& bank);

/**
 * Ground truth that may be consulted for reporting only. It exposes no
 * per-sample access, so it cannot feed a loss.
 */
class ReportOnlyLabels {
 public:
  ReportOnlyLabels(std::vector<int> labels, std::size_t num_classes);

  std::size_t size() const { return labels_.size(); }
  double accuracy_of(std::span<const int> predictions) const;

 private:
  std::vector<int> labels_;
  std::size_t k_;
};

struct AdaptConfig {
  TrainConfig train;
  int epochs = 5;
  bool refresh_per_epoch = true;
  bool freeze_classifier = false;
  LossId loss = LossId::kWeightedFal;
  /// Hyperparameters and gradient mode; weights are filled from the bank.
  LossParams loss_params;

  void validate() const;
};

struct AdaptEpochRecord {
  int epoch = 0;
  bool refreshed = false;
  double mean_loss = 0.0;
  std::vector<std::size_t> class_counts;
  std::vector<double> weights;
  std::vector<std::size_t> guarded_classes;
  /// Against the hidden ground truth, when supplied.
  std::optional<double> pseudo_label_accuracy;
};

struct AdaptReport {
  std::vector<AdaptEpochRecord> epochs;
  std::optional<double> final_accuracy;
};

struct AdaptResult {
  Model model;
  AdaptReport report;
};

/**
 * Source-free adaptation. Each epoch optionally refreshes predictions,
 * memory bank and pseudo-labels from the current model (always on the first
 * epoch), then runs one pass of minibatch SGD on the configured loss
 * against those pseudo-labels.
 */
AdaptResult adapt(Model source_model, const FeatureMatrix& target, const AdaptConfig& cfg,
                  const ReportOnlyLabels* hidden_truth = nullptr);

struct Metrics {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  /// confusion[y][i]: samples of class y predicted as i.
  std::vector<std::vector<std::size_t>> confusion;
};

Metrics metrics_from_predictions(std::span<const int> labels, std::span<const int> predictions,
                                 std::size_t k);
Metrics metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion);
Metrics evaluate(const Model& model, const Dataset& labeled);

/// Per-row check that the diagonal entry exceeds every other entry.
std::vector<bool> row_diagonal_dominance(const std::vector<std::vector<std::size_t>>& confusion);

}  // namespace falab

#endif  // FALAB_SFDA_HPP_
