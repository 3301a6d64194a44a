#include <doctest.h>

#include <cmath>
#include <vector>

#include "expected_values.hpp"
#include "falab/errors.hpp"
#include "falab/noiselab.hpp"

using namespace falab;

TEST_CASE("clean-dominance check") {
  CHECK(check_clean_dominant(NoiseMatrix::identity(4)));
  CHECK(check_clean_dominant(NoiseMatrix({{0.7, 0.3}, {0.4, 0.6}})));
  CHECK_FALSE(check_clean_dominant(NoiseMatrix({{0.45, 0.55}, {0.2, 0.8}})));
  CHECK_THROWS_AS(NoiseMatrix({{0.5, 0.6}, {0.5, 0.5}}), InvalidInput);
  CHECK_THROWS_AS(NoiseMatrix({{0.5, 0.5}}), InvalidInput);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    CHECK(check_clean_dominant(NoiseMatrix::random_clean_dominant(2 + rng.uniform_index(3), rng)));
  }
}

TEST_CASE("label corruption") {
  std::vector<int> labels(100000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
  Rng rng(1);
  CHECK(corrupt_labels(labels, NoiseMatrix::identity(2), rng) == labels);

  Rng a(5), b(5);
  const NoiseMatrix eta = NoiseMatrix::symmetric(2, 0.3);
  const std::vector<int> noisy = corrupt_labels(labels, eta, a);
  CHECK(noisy == corrupt_labels(labels, eta, b));
  std::size_t flips = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) flips += noisy[i] != labels[i];
  CHECK(static_cast<double>(flips) / 1e5 == doctest::Approx(0.3).epsilon(0.01 / 0.3));
}

TEST_CASE("risk-gap bound") {
  const ProbVector u2 = ProbVector::from({0.5, 0.5});
  CHECK(theorem1_bound(NoiseMatrix::symmetric(2, 0.3), u2, 2) ==
        doctest::Approx(oracle::kBoundK2).epsilon(1e-14));
  CHECK(theorem1_bound(NoiseMatrix::identity(3), empirical_prior(std::vector<int>{0, 1, 2}, 3), 3) ==
        doctest::Approx(6.0 * std::exp(-1.0)).epsilon(1e-14));
  const NoiseMatrix eta({{0.9, 0.05, 0.05}, {0.1, 0.8, 0.1}, {0.15, 0.15, 0.7}});
  const ProbVector u3 = ProbVector::from({1.0 / 3, 1.0 / 3, 1.0 / 3});
  CHECK(theorem1_bound(eta, u3, 3) == doctest::Approx(oracle::kBoundK3).epsilon(1e-14));

  const NoiseMatrix bad({{0.45, 0.55}, {0.2, 0.8}});
  CHECK_THROWS_AS(theorem1_bound(bad, u2, 2), AssumptionViolated);
  const BoundValue bv = theorem1_bound_unchecked(bad, u2);
  CHECK_FALSE(bv.assumption_holds);
  CHECK(bv.value == doctest::Approx(2.0 * std::exp(-1.0) * 0.625).epsilon(1e-14));
}

TEST_CASE("empirical risk") {
  const ProbVector p = ProbVector::from({0.7, 0.2, 0.1});
  const std::vector<ProbVector> one{p};
  const std::vector<int> y{0};
  CHECK(empirical_risk(one, y, std::nullopt, LossId::kFal) ==
        fal_loss(p, LabelDist(0, 3)).value);

  const ProbVector u = ProbVector::from({0.25, 0.25, 0.25, 0.25});
  Rng rng(2);
  const NoiseMatrix eta = NoiseMatrix::random_clean_dominant(4, rng);
  const std::vector<ProbVector> outs(10, u);
  const std::vector<int> ys{0, 1, 2, 3, 0, 1, 2, 3, 3, 3};
  CHECK(empirical_risk(outs, ys, eta, LossId::kFuzzyTerm) ==
        doctest::Approx(oracle::kUniformFuzzyRisk4).epsilon(1e-13));
}

TEST_CASE("analytic noisy risk agrees with Monte-Carlo corruption") {
  Rng rng(31);
  const std::size_t k = 3, n = 20;
  const NoiseMatrix eta = NoiseMatrix::random_clean_dominant(k, rng);
  std::vector<ProbVector> outs;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    outs.push_back(sample_simplex(k, rng));
    labels.push_back(static_cast<int>(rng.uniform_index(k)));
  }
  for (LossId id : {LossId::kCrossEntropy, LossId::kFal, LossId::kFuzzyTerm}) {
    const double analytic = empirical_risk(outs, labels, eta, id);
    const int draws = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int d = 0; d < draws; ++d) {
      const std::vector<int> noisy = corrupt_labels(labels, eta, rng);
      const double r = empirical_risk(outs, noisy, std::nullopt, id);
      sum += r;
      sum2 += r * r;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sum2 / draws - mean * mean) / draws);
    CHECK(std::abs(mean - analytic) <= 3.0 * se);
  }
}

TEST_CASE("brute-force risk minimizers") {
  Rng rng(8);
  std::vector<int> labels(100);
  for (int& y : labels) y = static_cast<int>(rng.uniform_index(2));

  const RiskMinimizers clean =
      bruteforce_risk_minimizer(labels, 2, NoiseMatrix::identity(2), LossId::kFuzzyTerm, 21);
  CHECK(std::abs(clean.report.gap) <= kGapTol);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    CHECK(clean.clean_opt[i].values()[0] == clean.noisy_opt[i].values()[0]);
  }

  const RiskMinimizers sym =
      bruteforce_risk_minimizer(labels, 2, NoiseMatrix::symmetric(2, 0.2), LossId::kFuzzyTerm, 21);
  CHECK(sym.report.gap >= -kGapTol);
  CHECK(sym.report.gap <= sym.report.bound);
  CHECK(sym.report.within_bound);
  CHECK(sym.report.certification_delta >= 0.0);
  CHECK(sym.report.certification_delta < kCertificationTol);

  const RiskMinimizers ce = bruteforce_risk_minimizer(labels, 2, NoiseMatrix::symmetric(2, 0.2),
                                                      LossId::kCrossEntropy, 21, false);
  CHECK(ce.report.gap > sym.report.bound);
  CHECK_FALSE(ce.report.within_bound);

  CHECK_THROWS_AS(bruteforce_risk_minimizer(labels, 2, NoiseMatrix::identity(2), LossId::kFuzzyTerm, 5),
                  ResolutionError);
  CHECK_THROWS_AS(bruteforce_risk_minimizer(std::vector<int>(201, 0), 2, NoiseMatrix::identity(2),
                                            LossId::kFuzzyTerm, 21),
                  InvalidInput);
}

TEST_CASE("simplex grid") {
  CHECK(simplex_grid(2, 21).size() == 21);
  CHECK(simplex_grid(3, 21).size() == 231);
  for (const ProbVector& p : simplex_grid(3, 5)) {
    CHECK(std::abs(p[0] + p[1] + p[2] - 1.0) <= kSimplexTol);
  }
}

TEST_CASE("boundedness sweep and p log p maximizer") {
  Rng rng(6);
  for (std::size_t k = 2; k <= 10; ++k) {
    const BoundednessResult r = boundedness_sweep(k, 20000, rng);
    CHECK(r.violations == 0);
    CHECK(r.min_value > 0.0);
    CHECK(r.max_value <= r.bound);
    CHECK(r.bound == doctest::Approx((static_cast<double>(k) - 1.0) * std::exp(-1.0)).epsilon(1e-15));
  }
  const ScalarMax m = maximize_plogp(1000000);
  CHECK(std::abs(m.argmax - std::exp(-1.0)) <= 1e-6);
  CHECK(std::abs(m.value - std::exp(-1.0)) <= 1e-6);
}
