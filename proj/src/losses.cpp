#include "falab/losses.hpp"

#include <algorithm>
#include <cmath>

#include "falab/errors.hpp"

namespace falab {
namespace {

void check_dims(const ProbVector& p, const LabelDist& y) {
  if (p.size() != y.size()) {
    throw InvalidInput("dimension mismatch: p has " + std::to_string(p.size()) +
                       " classes, label has " + std::to_string(y.size()));
  }
}

bool is_fal_family(LossId id) {
  switch (id) {
    case LossId::kFal:
    case LossId::kFalTerm1:
    case LossId::kFalTerm2:
    case LossId::kFuzzyTerm:
    case LossId::kWeightedFal:
      return true;
    default:
      return false;
  }
}

LossEval finish(double value, const ProbVector& p, const std::vector<double>& grad_probs) {
  return LossEval{value, softmax_backward(p, grad_probs)};
}

// Derivative of -c log p where c = p when differentiated through, held fixed otherwise.
double entropy_like_grad(double pi, GradientMode mode) {
  return mode == GradientMode::kDifferentiateThrough ? -(std::log(pi) + 1.0) : -1.0;
}

}  // namespace

LabelDist::LabelDist(std::size_t hard_index, std::size_t num_classes)
    : index_(hard_index), k_(num_classes) {
  if (num_classes < 2) throw InvalidInput("label distribution needs K >= 2");
  if (hard_index >= num_classes) throw InvalidInput("label index out of range");
}

std::vector<double> LabelDist::onehot() const {
  std::vector<double> q(k_, 0.0);
  q[index_] = 1.0;
  return q;
}

ClassWeights::ClassWeights(std::vector<double> w) : w_(std::move(w)) {
  if (w_.size() < 2) throw InvalidInput("class weights need K >= 2");
  for (double v : w_) {
    if (!std::isfinite(v) || v <= 0.0) throw InvalidInput("class weights must be positive");
  }
}

std::string_view to_string(LossId id) {
  switch (id) {
    case LossId::kCrossEntropy: return "ce";
    case LossId::kFal: return "fal";
    case LossId::kFalTerm1: return "fal_term1";
    case LossId::kFalTerm2: return "fal_term2";
    case LossId::kFuzzyTerm: return "fuzzy_term";
    case LossId::kWeightedFal: return "weighted_fal";
    case LossId::kFocal: return "focal";
    case LossId::kReverseCe: return "rce";
    case LossId::kSymmetricCe: return "sce";
    case LossId::kGeneralizedCe: return "gce";
  }
  return "?";
}

LossId loss_id_from_string(std::string_view name) {
  for (LossId id : {LossId::kCrossEntropy, LossId::kFal, LossId::kFalTerm1, LossId::kFalTerm2,
                    LossId::kFuzzyTerm, LossId::kWeightedFal, LossId::kFocal, LossId::kReverseCe,
                    LossId::kSymmetricCe, LossId::kGeneralizedCe}) {
    if (to_string(id) == name) return id;
  }
  throw InvalidInput("unknown loss '" + std::string(name) + "'");
}

std::string_view to_string(GradientMode mode) {
  return mode == GradientMode::kDifferentiateThrough ? "differentiate_through" : "constant_lambda";
}

GradientMode gradient_mode_from_string(std::string_view name) {
  if (name == "differentiate_through") return GradientMode::kDifferentiateThrough;
  if (name == "constant_lambda") return GradientMode::kConstantLambda;
  throw InvalidInput("unknown gradient mode '" + std::string(name) + "'");
}

void LossParams::validate(LossId id, std::size_t num_classes) const {
  switch (id) {
    case LossId::kFocal:
      if (!(focal_gamma >= 0.0) || !std::isfinite(focal_gamma)) {
        throw InvalidInput("focal gamma must be >= 0");
      }
      break;
    case LossId::kReverseCe:
      if (!(rce_a < 0.0) || !std::isfinite(rce_a)) throw InvalidInput("RCE constant A must be < 0");
      break;
    case LossId::kSymmetricCe:
      if (!(rce_a < 0.0) || !std::isfinite(rce_a)) throw InvalidInput("RCE constant A must be < 0");
      if (!(sce_alpha >= 0.0) || !(sce_beta >= 0.0) || sce_alpha + sce_beta <= 0.0 ||
          !std::isfinite(sce_alpha) || !std::isfinite(sce_beta)) {
        throw InvalidInput("SCE needs alpha, beta >= 0, not both zero");
      }
      break;
    case LossId::kGeneralizedCe:
      if (!(gce_q > 0.0 && gce_q <= 1.0)) throw InvalidInput("GCE exponent must lie in (0, 1]");
      break;
    case LossId::kWeightedFal:
      if (!weights) throw InvalidInput("weighted FAL needs class weights");
      if (weights->size() != num_classes) throw InvalidInput("class weight count != K");
      break;
    default:
      break;
  }
}

std::vector<double> softmax_backward(const ProbVector& p, std::span<const double> grad_probs) {
  if (grad_probs.size() != p.size()) throw InvalidInput("gradient size != K");
  double inner = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) inner += p[i] * grad_probs[i];
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = p[i] * (grad_probs[i] - inner);
  return g;
}

LossEval ce_loss(const ProbVector& p, const LabelDist& y) {
  check_dims(p, y);
  const std::size_t t = y.hard_index();
  LossEval out{-std::log(p[t]), std::vector<double>(p.values().begin(), p.values().end())};
  out.grad_logits[t] -= 1.0;
  return out;
}

LossEval fal_loss(const ProbVector& p, const LabelDist& y, GradientMode mode) {
  check_dims(p, y);
  const std::size_t t = y.hard_index();
  double value = -std::log(p[t]);
  std::vector<double> d(p.size());
  d[t] = -1.0 / p[t];
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i == t) continue;
    value -= p[i] * std::log(p[i]);
    d[i] = entropy_like_grad(p[i], mode);
  }
  return finish(value, p, d);
}

LossEval fal_term1(const ProbVector& p, const LabelDist& y, GradientMode mode) {
  check_dims(p, y);
  const std::size_t t = y.hard_index();
  const double lp = std::log(p[t]);
  const double value = -(1.0 - p[t]) * lp;
  std::vector<double> d(p.size(), 0.0);
  d[t] = -(1.0 - p[t]) / p[t];
  if (mode == GradientMode::kDifferentiateThrough) d[t] += lp;
  return finish(value, p, d);
}

LossEval fal_term2(const ProbVector& p, const LabelDist& y, GradientMode mode) {
  check_dims(p, y);
  double value = 0.0;
  std::vector<double> d(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    value -= p[i] * std::log(p[i]);
    d[i] = entropy_like_grad(p[i], mode);
  }
  return finish(value, p, d);
}

LossEval fuzzy_term(const ProbVector& p, const LabelDist& y, GradientMode mode) {
  check_dims(p, y);
  const std::size_t t = y.hard_index();
  double value = 0.0;
  std::vector<double> d(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i == t) continue;
    value -= p[i] * std::log(p[i]);
    d[i] = entropy_like_grad(p[i], mode);
  }
  return finish(value, p, d);
}

LossEval weighted_fal_loss(const ProbVector& p, const LabelDist& y, const ClassWeights& w,
                           GradientMode mode) {
  check_dims(p, y);
  if (w.size() != p.size()) throw InvalidInput("class weight count != K");
  const std::size_t t = y.hard_index();
  // The label coefficient (1 - p_y) + p_y is identically 1.
  double value = -w[t] * std::log(p[t]);
  std::vector<double> d(p.size());
  d[t] = -w[t] / p[t];
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i == t) continue;
    value -= w[i] * p[i] * std::log(p[i]);
    d[i] = w[i] * entropy_like_grad(p[i], mode);
  }
  return finish(value, p, d);
}

LossEval focal_loss(const ProbVector& p, const LabelDist& y, double gamma) {
  check_dims(p, y);
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw InvalidInput("focal gamma must be >= 0");
  const std::size_t t = y.hard_index();
  const double pt = p[t];
  const double lp = std::log(pt);
  const double value = -std::pow(1.0 - pt, gamma) * lp;
  std::vector<double> d(p.size(), 0.0);
  d[t] = -std::pow(1.0 - pt, gamma) / pt;
  if (gamma != 0.0) d[t] += gamma * std::pow(1.0 - pt, gamma - 1.0) * lp;
  return finish(value, p, d);
}

LossEval rce_loss(const ProbVector& p, const LabelDist& y, double a) {
  check_dims(p, y);
  if (!(a < 0.0) || !std::isfinite(a)) throw InvalidInput("RCE constant A must be < 0");
  const std::size_t t = y.hard_index();
  // Sum of the off-label mass, rather than 1 - p_y, keeps one-hot inputs at 0.
  double off = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i != t) off += p[i];
  }
  std::vector<double> d(p.size(), -a);
  d[t] = 0.0;
  return finish(-a * off, p, d);
}

LossEval sce_loss(const ProbVector& p, const LabelDist& y, double alpha, double beta, double a) {
  LossParams params;
  params.sce_alpha = alpha;
  params.sce_beta = beta;
  params.rce_a = a;
  params.validate(LossId::kSymmetricCe, p.size());
  const LossEval ce = ce_loss(p, y);
  const LossEval rce = rce_loss(p, y, a);
  LossEval out{alpha * ce.value + beta * rce.value, std::vector<double>(p.size())};
  for (std::size_t i = 0; i < p.size(); ++i) {
    out.grad_logits[i] = alpha * ce.grad_logits[i] + beta * rce.grad_logits[i];
  }
  return out;
}

LossEval gce_loss(const ProbVector& p, const LabelDist& y, double q) {
  check_dims(p, y);
  if (!(q > 0.0 && q <= 1.0)) throw InvalidInput("GCE exponent must lie in (0, 1]");
  const std::size_t t = y.hard_index();
  const double pt = p[t];
  std::vector<double> d(p.size(), 0.0);
  d[t] = -std::pow(pt, q - 1.0);
  return finish((1.0 - std::pow(pt, q)) / q, p, d);
}

LossEval evaluate_loss(LossId id, const ProbVector& p, const LabelDist& y,
                       const LossParams& params) {
  params.validate(id, p.size());
  switch (id) {
    case LossId::kCrossEntropy: return ce_loss(p, y);
    case LossId::kFal: return fal_loss(p, y, params.mode);
    case LossId::kFalTerm1: return fal_term1(p, y, params.mode);
    case LossId::kFalTerm2: return fal_term2(p, y, params.mode);
    case LossId::kFuzzyTerm: return fuzzy_term(p, y, params.mode);
    case LossId::kWeightedFal: return weighted_fal_loss(p, y, *params.weights, params.mode);
    case LossId::kFocal: return focal_loss(p, y, params.focal_gamma);
    case LossId::kReverseCe: return rce_loss(p, y, params.rce_a);
    case LossId::kSymmetricCe:
      return sce_loss(p, y, params.sce_alpha, params.sce_beta, params.rce_a);
    case LossId::kGeneralizedCe: return gce_loss(p, y, params.gce_q);
  }
  throw InvalidInput("unhandled loss id");
}

double surrogate_value(LossId id, const ProbVector& p, const LabelDist& y,
                       const LossParams& params, const ProbVector& frozen) {
  params.validate(id, p.size());
  check_dims(p, y);
  if (frozen.size() != p.size()) throw InvalidInput("frozen coefficients size != K");
  const std::size_t t = y.hard_index();
  double v = 0.0;
  switch (id) {
    case LossId::kFal:
      v = -std::log(p[t]);
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (i != t) v -= frozen[i] * std::log(p[i]);
      }
      return v;
    case LossId::kFalTerm1:
      return -(1.0 - frozen[t]) * std::log(p[t]);
    case LossId::kFalTerm2:
      for (std::size_t i = 0; i < p.size(); ++i) v -= frozen[i] * std::log(p[i]);
      return v;
    case LossId::kFuzzyTerm:
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (i != t) v -= frozen[i] * std::log(p[i]);
      }
      return v;
    case LossId::kWeightedFal: {
      const ClassWeights& w = *params.weights;
      v = -w[t] * std::log(p[t]);
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (i != t) v -= w[i] * frozen[i] * std::log(p[i]);
      }
      return v;
    }
    default:
      return evaluate_loss(id, p, y, params).value;
  }
}

double grad_check(LossId id, std::span<const double> logits, const LabelDist& y,
                  const LossParams& params, double h) {
  if (!(h > 0.0 && h <= 1e-2)) throw InvalidInput("finite-difference step must lie in (0, 1e-2]");
  const ProbVector base = softmax(logits);
  const LossEval analytic = evaluate_loss(id, base, y, params);
  const bool frozen = is_fal_family(id) && params.mode == GradientMode::kConstantLambda;

  auto value_at = [&](const std::vector<double>& l) {
    const ProbVector p = softmax(l);
    return frozen ? surrogate_value(id, p, y, params, base) : evaluate_loss(id, p, y, params).value;
  };

  std::vector<double> l(logits.begin(), logits.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < l.size(); ++k) {
    const double orig = l[k];
    l[k] = orig + h;
    const double up = value_at(l);
    l[k] = orig - h;
    const double down = value_at(l);
    l[k] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic.grad_logits[k];
    const double scale = std::max({1.0, std::abs(a), std::abs(numeric)});
    worst = std::max(worst, std::abs(a - numeric) / scale);
  }
  return worst;
}

}  // namespace falab
