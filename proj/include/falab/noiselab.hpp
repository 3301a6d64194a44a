#ifndef FALAB_NOISELAB_HPP_
#define FALAB_NOISELAB_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "falab/losses.hpp"
#include "falab/mathcore.hpp"

namespace falab {

/// Row-stochastic K x K matrix; entry (y, i) is the probability that a
/// sample of true class y carries label i.
class NoiseMatrix {
 public:
  explicit NoiseMatrix(std::vector<std::vector<double>> rows);

  static NoiseMatrix identity(std::size_t k);
  /// Diagonal 1 - eta, off-diagonal eta / (K - 1).
  static NoiseMatrix symmetric(std::size_t k, double eta);
  /// Random matrix whose diagonal strictly dominates each row.
  static NoiseMatrix random_clean_dominant(std::size_t k, Rng& rng);

  std::size_t size() const { return rows_.size(); }
  double operator()(std::size_t y, std::size_t i) const { return rows_[y][i]; }
  std::span<const double> row(std::size_t y) const { return rows_[y]; }
  /// Total flip probability of class y, sum over i != y.
  double flip_rate(std::size_t y) const;
  /// Compact "r0;r1;..." form with entries separated by spaces.
  std::string descriptor() const;

 private:
  std::vector<std::vector<double>> rows_;
};

/// True iff for every y and i != y, eta(y, i) < 1 - eta_y.
bool check_clean_dominant(const NoiseMatrix& eta);

std::vector<int> corrupt_labels(std::span<const int> labels, const NoiseMatrix& eta, Rng& rng);

struct BoundValue {
  double value = 0.0;
  bool assumption_holds = true;
};

/// C_K = K (K - 1) e^-1 sum_y prior_y (1 - eta_y). Throws AssumptionViolated
/// when eta is not clean-dominant.
double theorem1_bound(const NoiseMatrix& eta, const ProbVector& class_prior, std::size_t k);
/// Same value; reports the assumption instead of throwing.
BoundValue theorem1_bound_unchecked(const NoiseMatrix& eta, const ProbVector& class_prior);

/// Empirical label distribution.
ProbVector empirical_prior(std::span<const int> labels, std::size_t k);

/**
 * Mean loss of fixed outputs over labels. With eta, each sample contributes
 * the analytic expectation sum_i eta(y, i) l(p, i) instead of a sampled
 * noisy label.
 */
double empirical_risk(std::span<const ProbVector> outputs, std::span<const int> labels,
                      const std::optional<NoiseMatrix>& eta, LossId loss,
                      const LossParams& params = {});

struct RiskGapReport {
  double risk_noisy_at_clean_opt = 0.0;
  double risk_noisy_at_noisy_opt = 0.0;
  double gap = 0.0;
  double bound = 0.0;
  bool within_bound = false;
  bool assumption_holds = true;
  /// Largest change of either risk when the grid is refined; negative when
  /// certification was not requested.
  double certification_delta = -1.0;
  std::size_t grid_resolution = 0;
};

struct RiskMinimizers {
  std::vector<ProbVector> clean_opt;  // f*(x) per sample
  std::vector<ProbVector> noisy_opt;  // f~(x) per sample
  RiskGapReport report;
};

inline constexpr std::size_t kMaxBruteforceSamples = 200;
inline constexpr std::size_t kMaxBruteforceClasses = 4;
inline constexpr std::size_t kMinGridResolution = 21;
inline constexpr double kCertificationTol = 1e-3;
inline constexpr double kGapTol = 1e-9;

/**
 * Global risk minimizers over unrestricted per-sample outputs.
 *
 * The clean and noisy risks of a per-sample loss decouple over samples, so
 * each sample's output is chosen independently by exhaustive search over
 * the simplex grid {n / (r - 1) : n in N^K, |n| = r - 1}, r = resolution.
 * Among clean-risk minimizers tied within kGapTol the one with the largest
 * noisy risk is kept, so the reported gap is the worst case over f*.
 *
 * With certify, the search is repeated at 2(r - 1) + 1 points per edge and
 * a ResolutionError is thrown if either noisy risk moves by kCertificationTol
 * or more.
 */
RiskMinimizers bruteforce_risk_minimizer(std::span<const int> labels, std::size_t k,
                                         const NoiseMatrix& eta, LossId loss,
                                         std::size_t grid_resolution, bool certify = true,
                                         const LossParams& params = {});

/// All points of the simplex grid with r points per edge, floored.
std::vector<ProbVector> simplex_grid(std::size_t k, std::size_t resolution);

struct BoundednessResult {
  std::size_t k = 0;
  std::size_t samples = 0;
  std::size_t violations = 0;
  double min_value = 0.0;
  double max_value = 0.0;
  double bound = 0.0;
};

/// Dirichlet sweep of the fuzzy term against (K - 1) / e. A violation is a
/// value outside (0, bound].
BoundednessResult boundedness_sweep(std::size_t k, std::size_t samples, Rng& rng);

struct ScalarMax {
  double argmax = 0.0;
  double value = 0.0;
};

/// Maximizes g(p) = -p ln p over the uniform grid of `points` values in (0, 1).
ScalarMax maximize_plogp(std::size_t points);

}  // namespace falab

#endif  // FALAB_NOISELAB_HPP_
