#include <doctest.h>

#include <cmath>
#include <vector>

#include "expected_values.hpp"
#include "falab/errors.hpp"
#include "falab/losses.hpp"

using namespace falab;

namespace {

const ProbVector kP3 = ProbVector::from({0.7, 0.2, 0.1});
const ProbVector kHalf = ProbVector::from({0.5, 0.5});

ProbVector onehot(std::size_t k, std::size_t y) {
  std::vector<double> v(k, 0.0);
  v[y] = 1.0;
  return ProbVector::from(v);
}

void check_vec(const std::vector<double>& got, const auto& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= tol);
}

}  // namespace

TEST_CASE("cross entropy") {
  CHECK(ce_loss(onehot(3, 1), LabelDist(1, 3)).value == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(ce_loss(kHalf, LabelDist(0, 2)).value == doctest::Approx(oracle::kCeUniform2).epsilon(1e-15));
  const LossEval e = ce_loss(ProbVector::from({0.7, 0.3}), LabelDist(0, 2));
  CHECK(e.grad_logits[0] == doctest::Approx(-0.3).epsilon(1e-12));
  CHECK(e.grad_logits[1] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK_THROWS_AS(ce_loss(kHalf, LabelDist(0, 3)), InvalidInput);
  CHECK_THROWS_AS(LabelDist(3, 3), InvalidInput);
}

TEST_CASE("fuzzy-aware loss values") {
  CHECK(fal_loss(kHalf, LabelDist(0, 2)).value ==
        doctest::Approx(oracle::kFalUniform2).epsilon(1e-14));
  CHECK(fal_loss(kP3, LabelDist(0, 3)).value == doctest::Approx(oracle::kFalP3).epsilon(1e-14));
  CHECK(fal_loss(kP3, LabelDist(0, 3)).value == doctest::Approx(0.9088).epsilon(1e-4));
  CHECK(fal_loss(onehot(4, 2), LabelDist(2, 4)).value < 1e-9);
  CHECK_THROWS_AS(fal_loss(kP3, LabelDist(0, 2)), InvalidInput);
}

TEST_CASE("term decomposition") {
  const LabelDist y(0, 3);
  const double t1 = fal_term1(kP3, y).value;
  const double t2 = fal_term2(kP3, y).value;
  CHECK(t1 == doctest::Approx(oracle::kTerm1P3).epsilon(1e-14));
  CHECK(t2 == doctest::Approx(oracle::kTerm2P3).epsilon(1e-14));
  CHECK(std::abs(t1 + t2 - fal_loss(kP3, y).value) <= 1e-14);
  const double ft = fuzzy_term(kP3, y).value;
  CHECK(std::abs(ce_loss(kP3, y).value + ft - fal_loss(kP3, y).value) <= 1e-14);
}

TEST_CASE("fuzzy term maximum and boundedness") {
  const double e1 = std::exp(-1.0);
  const ProbVector p = ProbVector::from({1.0 - e1, e1});
  CHECK(fuzzy_term(p, LabelDist(0, 2)).value == doctest::Approx(oracle::kFuzzyMax2).epsilon(1e-14));
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t k = 2 + rng.uniform_index(9);
    const ProbVector q = sample_simplex(k, rng);
    const double v = fuzzy_term(q, LabelDist(rng.uniform_index(k), k)).value;
    CHECK(v > 0.0);
    CHECK(v <= (static_cast<double>(k) - 1.0) * e1 + 1e-12);
  }
  CHECK(fuzzy_term(onehot(3, 0), LabelDist(0, 3)).value < 1e-9);
}

TEST_CASE("weighted fuzzy-aware loss") {
  const LabelDist y(0, 3);
  CHECK(weighted_fal_loss(kP3, y, ClassWeights::ones(3)).value == fal_loss(kP3, y).value);
  const double v = weighted_fal_loss(kHalf, LabelDist(0, 2), ClassWeights({2.0, 1.0})).value;
  CHECK(v == doctest::Approx(oracle::kWeightedFal21).epsilon(1e-14));
  const ClassWeights w({0.5, 1.7, 0.9});
  const ClassWeights w2({1.0, 3.4, 1.8});
  CHECK(weighted_fal_loss(kP3, y, w2).value ==
        doctest::Approx(2.0 * weighted_fal_loss(kP3, y, w).value).epsilon(1e-14));
  CHECK_THROWS_AS(ClassWeights({1.0, 0.0}), InvalidInput);
  CHECK_THROWS_AS(ClassWeights({1.0, -2.0}), InvalidInput);
  CHECK_THROWS_AS(weighted_fal_loss(kP3, y, ClassWeights::ones(2)), InvalidInput);
}

TEST_CASE("focal loss") {
  const LabelDist y(0, 3);
  CHECK(focal_loss(kP3, y, 0.0).value == ce_loss(kP3, y).value);
  CHECK(focal_loss(kP3, y, 1.0).value == fal_term1(kP3, y).value);
  CHECK(focal_loss(kHalf, LabelDist(0, 2), 2.0).value ==
        doctest::Approx(oracle::kFocalGamma2).epsilon(1e-14));
  CHECK_THROWS_AS(focal_loss(kP3, y, -0.5), InvalidInput);
}

TEST_CASE("reverse, symmetric and generalized cross entropy") {
  const LabelDist y(0, 3);
  CHECK(rce_loss(onehot(3, 0), y, -4.0).value < 1e-9);
  CHECK(rce_loss(kHalf, LabelDist(0, 2), -4.0).value == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(rce_loss(kP3, y, -4.0).value == doctest::Approx(oracle::kRceP3).epsilon(1e-14));
  CHECK_THROWS_AS(rce_loss(kP3, y, 0.0), InvalidInput);

  CHECK(sce_loss(kP3, y, 1.0, 0.0, -4.0).value == ce_loss(kP3, y).value);
  CHECK_THROWS_AS(sce_loss(kP3, y, -1.0, 1.0, -4.0), InvalidInput);
  CHECK_THROWS_AS(sce_loss(kP3, y, 0.0, 0.0, -4.0), InvalidInput);

  CHECK(gce_loss(kP3, y, 1.0).value == doctest::Approx(oracle::kGceQ1).epsilon(1e-14));
  const double small_q = gce_loss(kP3, y, 0.01).value;
  CHECK(small_q == doctest::Approx(oracle::kGceQ001).epsilon(1e-12));
  CHECK(std::abs(small_q - ce_loss(kP3, y).value) <= 0.02 * ce_loss(kP3, y).value);
  CHECK_THROWS_AS(gce_loss(kP3, y, 0.0), InvalidInput);
  CHECK_THROWS_AS(gce_loss(kP3, y, 1.5), InvalidInput);
}

TEST_CASE("logit gradients match high-precision references") {
  const std::vector<double> z(oracle::kLogits4.begin(), oracle::kLogits4.end());
  const ProbVector p = softmax(z);
  const LabelDist y(2, 4);
  const double tol = 1e-12;
  check_vec(ce_loss(p, y).grad_logits, oracle::kGradCe, tol);
  check_vec(fal_loss(p, y).grad_logits, oracle::kGradFal, tol);
  const ClassWeights w(std::vector<double>(oracle::kWeights4.begin(), oracle::kWeights4.end()));
  check_vec(weighted_fal_loss(p, y, w).grad_logits, oracle::kGradWeightedFal, tol);
  check_vec(focal_loss(p, y, 2.0).grad_logits, oracle::kGradFocal2, tol);
  check_vec(gce_loss(p, y, 0.7).grad_logits, oracle::kGradGce07, tol);
  check_vec(sce_loss(p, y, 1.0, 1.0, -4.0).grad_logits, oracle::kGradSce, tol);
}

TEST_CASE("constant-lambda mode") {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> z(5);
    for (double& v : z) v = 2.0 * rng.normal();
    const ProbVector p = softmax(z);
    const LabelDist y(rng.uniform_index(5), 5);
    const LossEval fal = fal_loss(p, y, GradientMode::kConstantLambda);
    const LossEval ce = ce_loss(p, y);
    CHECK(fal.value == fal_loss(p, y).value);
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(fal.grad_logits[j] == doctest::Approx((1.0 - p[y.hard_index()]) * ce.grad_logits[j]).epsilon(1e-12));
    }
    for (double g : fal_term2(p, y, GradientMode::kConstantLambda).grad_logits) CHECK(std::abs(g) <= 1e-15);
  }
}

TEST_CASE("grad_check on random instances") {
  Rng rng(12);
  const LossId ids[] = {LossId::kCrossEntropy, LossId::kFal,         LossId::kFalTerm1,
                        LossId::kFalTerm2,     LossId::kFuzzyTerm,   LossId::kWeightedFal,
                        LossId::kFocal,        LossId::kReverseCe,   LossId::kSymmetricCe,
                        LossId::kGeneralizedCe};
  for (LossId id : ids) {
    for (GradientMode mode : {GradientMode::kDifferentiateThrough, GradientMode::kConstantLambda}) {
      for (int i = 0; i < 30; ++i) {
        const std::size_t k = 2 + rng.uniform_index(9);
        std::vector<double> z(k);
        for (double& v : z) v = 2.0 * rng.normal();
        LossParams params;
        params.mode = mode;
        if (id == LossId::kWeightedFal) {
          std::vector<double> w(k);
          for (double& v : w) v = rng.uniform(0.5, 2.0);
          params.weights = ClassWeights(w);
        }
        CHECK(grad_check(id, z, LabelDist(rng.uniform_index(k), k), params, 1e-5) <= 1e-5);
      }
    }
  }
  CHECK_THROWS_AS(grad_check(LossId::kCrossEntropy, std::vector<double>{0.1, 0.2}, LabelDist(0, 2),
                             LossParams{}, 0.0),
                  InvalidInput);
}

TEST_CASE("loss names round trip") {
  for (const char* n : {"ce", "fal", "fal_term1", "fal_term2", "fuzzy_term", "weighted_fal",
                        "focal", "rce", "sce", "gce"}) {
    CHECK(to_string(loss_id_from_string(n)) == n);
  }
  CHECK_THROWS_AS(loss_id_from_string("mae"), InvalidInput);
  CHECK(gradient_mode_from_string("constant_lambda") == GradientMode::kConstantLambda);
  CHECK_THROWS_AS(gradient_mode_from_string("frozen"), InvalidInput);
}
