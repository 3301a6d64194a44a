#ifndef FALAB_LOSSES_HPP_
#define FALAB_LOSSES_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "falab/mathcore.hpp"

namespace falab {

/// One-hot label distribution identified by its hard index.
class LabelDist {
 public:
  LabelDist(std::size_t hard_index, std::size_t num_classes);

  std::size_t hard_index() const { return index_; }
  std::size_t size() const { return k_; }
  double operator[](std::size_t i) const { return i == index_ ? 1.0 : 0.0; }
  std::vector<double> onehot() const;

 private:
  std::size_t index_;
  std::size_t k_;
};

/// Strictly positive per-class loss weights.
class ClassWeights {
 public:
  explicit ClassWeights(std::vector<double> w);
  static ClassWeights ones(std::size_t k) { return ClassWeights(std::vector<double>(k, 1.0)); }

  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  std::span<const double> values() const { return w_; }

 private:
  std::vector<double> w_;
};

/// Loss value and its gradient with respect to the pre-softmax logits.
struct LossEval {
  double value = 0.0;
  std::vector<double> grad_logits;
};

enum class LossId {
  kCrossEntropy,
  kFal,
  kFalTerm1,
  kFalTerm2,
  kFuzzyTerm,
  kWeightedFal,
  kFocal,
  kReverseCe,
  kSymmetricCe,
  kGeneralizedCe,
};

/**
 * How the fuzzy coefficients lambda_i = p_i are treated when
 * differentiating the FAL family (fal, its two terms, the fuzzy term and the
 * weighted variant).
 *
 * kDifferentiateThrough: the loss is one function of p and every p_i is
 * differentiated, including those acting as coefficients.
 * kConstantLambda: every coefficient that is itself a probability
 * (p_i on off-label terms, (1 - p_i) in the first term, p_i in the entropy
 * term) is held fixed; only the log p_i factors carry gradient.
 */
enum class GradientMode { kDifferentiateThrough, kConstantLambda };

std::string_view to_string(LossId id);
LossId loss_id_from_string(std::string_view name);
std::string_view to_string(GradientMode mode);
GradientMode gradient_mode_from_string(std::string_view name);

struct LossParams {
  double focal_gamma = 1.0;
  double rce_a = -4.0;
  double sce_alpha = 1.0;
  double sce_beta = 1.0;
  double gce_q = 0.7;
  GradientMode mode = GradientMode::kDifferentiateThrough;
  /// Required by kWeightedFal; ignored elsewhere.
  std::optional<ClassWeights> weights;

  void validate(LossId id, std::size_t num_classes) const;
};

LossEval ce_loss(const ProbVector& p, const LabelDist& y);

LossEval fal_loss(const ProbVector& p, const LabelDist& y,
                  GradientMode mode = GradientMode::kDifferentiateThrough);
/// -sum_i (1 - p_i) q_i log p_i
LossEval fal_term1(const ProbVector& p, const LabelDist& y,
                   GradientMode mode = GradientMode::kDifferentiateThrough);
/// -sum_i p_i log p_i, the full Shannon entropy of p.
LossEval fal_term2(const ProbVector& p, const LabelDist& y,
                   GradientMode mode = GradientMode::kDifferentiateThrough);
/// -sum_{i != y} p_i log p_i; bounded above by (K - 1) / e.
LossEval fuzzy_term(const ProbVector& p, const LabelDist& y,
                    GradientMode mode = GradientMode::kDifferentiateThrough);
LossEval weighted_fal_loss(const ProbVector& p, const LabelDist& y, const ClassWeights& w,
                           GradientMode mode = GradientMode::kDifferentiateThrough);

LossEval focal_loss(const ProbVector& p, const LabelDist& y, double gamma);
/// -A (1 - p_y), the reverse cross entropy with log 0 replaced by A < 0.
LossEval rce_loss(const ProbVector& p, const LabelDist& y, double a);
LossEval sce_loss(const ProbVector& p, const LabelDist& y, double alpha, double beta,
                  double a);
LossEval gce_loss(const ProbVector& p, const LabelDist& y, double q);

/// Dispatches on the loss id; validates params against p.size().
LossEval evaluate_loss(LossId id, const ProbVector& p, const LabelDist& y,
                       const LossParams& params);

/**
 * Value of the loss with the fuzzy coefficients frozen at `frozen`.
 * At p == frozen it equals the loss value; its derivative in p is the
 * constant-lambda gradient. Used as the finite-difference target for
 * GradientMode::kConstantLambda.
 */
double surrogate_value(LossId id, const ProbVector& p, const LabelDist& y,
                       const LossParams& params, const ProbVector& frozen);

/**
 * Worst per-coordinate relative error between the analytic logit gradient
 * and central finite differences of step h. The error of one coordinate is
 * |analytic - numeric| / max(1, |analytic|, |numeric|).
 */
double grad_check(LossId id, std::span<const double> logits, const LabelDist& y,
                  const LossParams& params, double h = 1e-5);

/// Chain rule through softmax: grad_l = p * (dL/dp - <p, dL/dp>).
std::vector<double> softmax_backward(const ProbVector& p, std::span<const double> grad_probs);

}  // namespace falab

#endif  // FALAB_LOSSES_HPP_
