#include "falab/noiselab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "falab/errors.hpp"

namespace falab {
namespace {

constexpr double kInvE = 0.36787944117144233;

void check_labels(std::span<const int> labels, std::size_t k) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw InvalidInput("label outside [0, K)");
  }
}

// Compositions of `total` into k nonnegative parts, lexicographic order.
void enumerate(std::size_t k, std::size_t total, std::vector<std::size_t>& cur,
               std::vector<std::vector<std::size_t>>& out) {
  if (cur.size() + 1 == k) {
    cur.push_back(total);
    out.push_back(cur);
    cur.pop_back();
    return;
  }
  for (std::size_t n = 0; n <= total; ++n) {
    cur.push_back(n);
    enumerate(k, total - n, cur, out);
    cur.pop_back();
  }
}

struct ClassOptimum {
  std::size_t clean_idx = 0;
  std::size_t noisy_idx = 0;
  double noisy_at_clean = 0.0;
  double noisy_at_noisy = 0.0;
};

struct GridSolution {
  std::vector<ProbVector> grid;
  std::map<int, ClassOptimum> per_class;
  double risk_at_clean = 0.0;
  double risk_at_noisy = 0.0;
};

GridSolution solve_on_grid(std::span<const int> labels, std::size_t k, const NoiseMatrix& eta,
                           LossId loss, const LossParams& params, std::size_t resolution) {
  GridSolution sol;
  sol.grid = simplex_grid(k, resolution);
  const std::size_t g = sol.grid.size();
  // table[j * k + i] = l(p_j, i)
  std::vector<double> table(g * k);
  for (std::size_t j = 0; j < g; ++j) {
    for (std::size_t i = 0; i < k; ++i) {
      table[j * k + i] = evaluate_loss(loss, sol.grid[j], LabelDist(i, k), params).value;
    }
  }
  for (int y : labels) {
    if (sol.per_class.count(y)) continue;
    const auto c = static_cast<std::size_t>(y);
    std::vector<double> noisy(g);
    double best_clean = std::numeric_limits<double>::infinity();
    double best_noisy = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < g; ++j) {
      double v = 0.0;
      for (std::size_t i = 0; i < k; ++i) v += eta(c, i) * table[j * k + i];
      noisy[j] = v;
      best_clean = std::min(best_clean, table[j * k + c]);
      best_noisy = std::min(best_noisy, v);
    }
    // first grid point within tolerance, so equal risks give equal choices
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < g; ++j) {
      if (table[j * k + c] <= best_clean + kGapTol) worst = std::max(worst, noisy[j]);
    }
    ClassOptimum opt;
    opt.clean_idx = g;
    opt.noisy_idx = g;
    for (std::size_t j = 0; j < g; ++j) {
      if (opt.clean_idx == g && table[j * k + c] <= best_clean + kGapTol && noisy[j] >= worst - kGapTol) {
        opt.clean_idx = j;
      }
      if (opt.noisy_idx == g && noisy[j] <= best_noisy + kGapTol) opt.noisy_idx = j;
    }
    opt.noisy_at_clean = noisy[opt.clean_idx];
    opt.noisy_at_noisy = noisy[opt.noisy_idx];
    sol.per_class[y] = opt;
  }
  for (int y : labels) {
    sol.risk_at_clean += sol.per_class[y].noisy_at_clean;
    sol.risk_at_noisy += sol.per_class[y].noisy_at_noisy;
  }
  sol.risk_at_clean /= static_cast<double>(labels.size());
  sol.risk_at_noisy /= static_cast<double>(labels.size());
  return sol;
}

}  // namespace

NoiseMatrix::NoiseMatrix(std::vector<std::vector<double>> rows) : rows_(std::move(rows)) {
  const std::size_t k = rows_.size();
  if (k < 2) throw InvalidInput("noise matrix needs K >= 2");
  for (const auto& r : rows_) {
    if (r.size() != k) throw InvalidInput("noise matrix must be square");
    double s = 0.0;
    for (double v : r) {
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput("noise matrix entries must lie in [0, 1]");
      s += v;
    }
    if (std::abs(s - 1.0) > kSimplexTol) throw InvalidInput("noise matrix rows must sum to 1");
  }
}

NoiseMatrix NoiseMatrix::identity(std::size_t k) { return symmetric(k, 0.0); }

NoiseMatrix NoiseMatrix::symmetric(std::size_t k, double eta) {
  if (k < 2) throw InvalidInput("noise matrix needs K >= 2");
  if (!(eta >= 0.0 && eta <= 1.0)) throw InvalidInput("noise rate must lie in [0, 1]");
  std::vector<std::vector<double>> rows(k, std::vector<double>(k, eta / static_cast<double>(k - 1)));
  for (std::size_t y = 0; y < k; ++y) rows[y][y] = 1.0 - eta;
  return NoiseMatrix(std::move(rows));
}

NoiseMatrix NoiseMatrix::random_clean_dominant(std::size_t k, Rng& rng) {
  std::vector<std::vector<double>> rows(k);
  for (std::size_t y = 0; y < k; ++y) {
    for (;;) {
      ProbVector p = sample_simplex(k, rng);
      std::vector<double> r(p.values().begin(), p.values().end());
      const auto top = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
      std::swap(r[top], r[y]);
      bool strict = true;
      for (std::size_t i = 0; i < k; ++i) {
        if (i != y && !(r[i] < r[y])) strict = false;
      }
      if (strict) {
        rows[y] = std::move(r);
        break;
      }
    }
  }
  return NoiseMatrix(std::move(rows));
}

double NoiseMatrix::flip_rate(std::size_t y) const {
  double s = 0.0;
  for (std::size_t i = 0; i < size(); ++i) {
    if (i != y) s += rows_[y][i];
  }
  return s;
}

std::string NoiseMatrix::descriptor() const {
  std::ostringstream os;
  os.precision(4);
  for (std::size_t y = 0; y < size(); ++y) {
    if (y) os << ';';
    for (std::size_t i = 0; i < size(); ++i) {
      if (i) os << ' ';
      os << rows_[y][i];
    }
  }
  return os.str();
}

bool check_clean_dominant(const NoiseMatrix& eta) {
  for (std::size_t y = 0; y < eta.size(); ++y) {
    const double correct = 1.0 - eta.flip_rate(y);
    for (std::size_t i = 0; i < eta.size(); ++i) {
      if (i != y && !(eta(y, i) < correct)) return false;
    }
  }
  return true;
}

std::vector<int> corrupt_labels(std::span<const int> labels, const NoiseMatrix& eta, Rng& rng) {
  const std::size_t k = eta.size();
  check_labels(labels, k);
  std::vector<int> out;
  out.reserve(labels.size());
  for (int y : labels) {
    const auto row = eta.row(static_cast<std::size_t>(y));
    const double u = rng.uniform();
    double acc = 0.0;
    int chosen = y;
    for (std::size_t i = 0; i < k; ++i) {
      acc += row[i];
      if (u < acc) {
        chosen = static_cast<int>(i);
        break;
      }
    }
    out.push_back(chosen);
  }
  return out;
}

BoundValue theorem1_bound_unchecked(const NoiseMatrix& eta, const ProbVector& class_prior) {
  const std::size_t k = eta.size();
  if (class_prior.size() != k) throw InvalidInput("class prior size != K");
  double expected_clean = 0.0;
  for (std::size_t y = 0; y < k; ++y) expected_clean += class_prior[y] * (1.0 - eta.flip_rate(y));
  const double kk = static_cast<double>(k);
  return BoundValue{kk * (kk - 1.0) * kInvE * expected_clean, check_clean_dominant(eta)};
}

double theorem1_bound(const NoiseMatrix& eta, const ProbVector& class_prior, std::size_t k) {
  if (k != eta.size()) throw InvalidInput("K does not match the noise matrix");
  const BoundValue b = theorem1_bound_unchecked(eta, class_prior);
  if (!b.assumption_holds) {
    throw AssumptionViolated("noise matrix is not clean-labels-dominant");
  }
  return b.value;
}

ProbVector empirical_prior(std::span<const int> labels, std::size_t k) {
  if (labels.empty()) throw InvalidInput("empirical prior of no labels");
  check_labels(labels, k);
  std::vector<double> counts(k, 0.0);
  for (int y : labels) counts[static_cast<std::size_t>(y)] += 1.0;
  for (double& c : counts) c /= static_cast<double>(labels.size());
  return floor_and_normalize(std::move(counts));
}

double empirical_risk(std::span<const ProbVector> outputs, std::span<const int> labels,
                      const std::optional<NoiseMatrix>& eta, LossId loss,
                      const LossParams& params) {
  if (outputs.size() != labels.size() || outputs.empty()) {
    throw InvalidInput("empirical_risk needs one output per label");
  }
  const std::size_t k = outputs.front().size();
  check_labels(labels, k);
  if (eta && eta->size() != k) throw InvalidInput("noise matrix size != K");
  double total = 0.0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto y = static_cast<std::size_t>(labels[n]);
    if (!eta) {
      total += evaluate_loss(loss, outputs[n], LabelDist(y, k), params).value;
      continue;
    }
    for (std::size_t i = 0; i < k; ++i) {
      const double w = (*eta)(y, i);
      if (w != 0.0) total += w * evaluate_loss(loss, outputs[n], LabelDist(i, k), params).value;
    }
  }
  return total / static_cast<double>(labels.size());
}

std::vector<ProbVector> simplex_grid(std::size_t k, std::size_t resolution) {
  if (k < 2) throw InvalidInput("simplex grid needs K >= 2");
  if (resolution < 2) throw InvalidInput("simplex grid needs at least two points per edge");
  const std::size_t total = resolution - 1;
  std::vector<std::vector<std::size_t>> comps;
  std::vector<std::size_t> cur;
  enumerate(k, total, cur, comps);
  std::vector<ProbVector> grid;
  grid.reserve(comps.size());
  for (const auto& c : comps) {
    std::vector<double> p(k);
    for (std::size_t i = 0; i < k; ++i) p[i] = static_cast<double>(c[i]) / static_cast<double>(total);
    grid.push_back(floor_and_normalize(std::move(p)));
  }
  return grid;
}

RiskMinimizers bruteforce_risk_minimizer(std::span<const int> labels, std::size_t k,
                                         const NoiseMatrix& eta, LossId loss,
                                         std::size_t grid_resolution, bool certify,
                                         const LossParams& params) {
  if (labels.empty()) throw InvalidInput("brute-force minimizer needs samples");
  if (labels.size() > kMaxBruteforceSamples) throw InvalidInput("at most 200 samples allowed");
  if (k < 2 || k > kMaxBruteforceClasses) throw InvalidInput("brute force supports 2 <= K <= 4");
  if (eta.size() != k) throw InvalidInput("noise matrix size != K");
  if (grid_resolution < kMinGridResolution) {
    throw ResolutionError("grid resolution must be at least 21 points per edge");
  }
  check_labels(labels, k);

  GridSolution sol = solve_on_grid(labels, k, eta, loss, params, grid_resolution);
  RiskMinimizers out;
  for (int y : labels) {
    const ClassOptimum& o = sol.per_class.at(y);
    out.clean_opt.push_back(sol.grid[o.clean_idx]);
    out.noisy_opt.push_back(sol.grid[o.noisy_idx]);
  }
  RiskGapReport& r = out.report;
  r.grid_resolution = grid_resolution;
  r.risk_noisy_at_clean_opt = sol.risk_at_clean;
  r.risk_noisy_at_noisy_opt = sol.risk_at_noisy;
  r.gap = sol.risk_at_clean - sol.risk_at_noisy;
  const BoundValue b = theorem1_bound_unchecked(eta, empirical_prior(labels, k));
  r.bound = b.value;
  r.assumption_holds = b.assumption_holds;
  r.within_bound = r.gap >= -kGapTol && r.gap <= r.bound;

  if (certify) {
    const GridSolution fine =
        solve_on_grid(labels, k, eta, loss, params, 2 * (grid_resolution - 1) + 1);
    r.certification_delta = std::max(std::abs(fine.risk_at_clean - sol.risk_at_clean),
                                     std::abs(fine.risk_at_noisy - sol.risk_at_noisy));
    if (!(r.certification_delta < kCertificationTol)) {
      throw ResolutionError("grid refinement moved the risks by " +
                            std::to_string(r.certification_delta));
    }
  }
  return out;
}

BoundednessResult boundedness_sweep(std::size_t k, std::size_t samples, Rng& rng) {
  BoundednessResult res;
  res.k = k;
  res.samples = samples;
  res.bound = static_cast<double>(k - 1) * kInvE;
  res.min_value = std::numeric_limits<double>::infinity();
  res.max_value = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < samples; ++s) {
    const ProbVector p = sample_simplex(k, rng);
    const auto y = static_cast<std::size_t>(rng.uniform_index(k));
    const double v = fuzzy_term(p, LabelDist(y, k)).value;
    res.min_value = std::min(res.min_value, v);
    res.max_value = std::max(res.max_value, v);
    if (!(v > 0.0 && v <= res.bound)) ++res.violations;
  }
  return res;
}

ScalarMax maximize_plogp(std::size_t points) {
  if (points < 1) throw InvalidInput("need at least one grid point");
  ScalarMax best{0.0, -1.0};
  const double step = 1.0 / static_cast<double>(points + 1);
  for (std::size_t j = 1; j <= points; ++j) {
    const double p = static_cast<double>(j) * step;
    const double g = -p * std::log(p);
    if (g > best.value) best = {p, g};
  }
  return best;
}

}  // namespace falab
