#include "falab/mathcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "falab/errors.hpp"

namespace falab {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t a = splitmix64(seed);
  std::uint64_t b = splitmix64(a ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(make_engine(seed, stream)) {}

Rng Rng::split(std::uint64_t id) const {
  return Rng(splitmix64(seed_ ^ splitmix64(stream_)), id);
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform_pos() {
  return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw InvalidInput("uniform_index: empty range");
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  // Box-Muller, one variate per call.
  const double u1 = uniform_pos();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::exponential() { return -std::log(uniform_pos()); }

Logits::Logits(std::vector<double> values) : values_(std::move(values)) {
  if (values_.size() < 2) throw InvalidInput("logits need at least two entries");
  for (double v : values_) {
    if (!std::isfinite(v)) throw InvalidInput("logits must be finite");
  }
}

ProbVector floor_and_normalize(std::vector<double> probs) {
  bool floored = false;
  for (double& p : probs) {
    if (p < kProbFloor) {
      p = kProbFloor;
      floored = true;
    }
  }
  if (floored) {
    const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
    for (double& p : probs) p /= total;
  }
  return ProbVector(std::move(probs));
}

ProbVector ProbVector::from(std::vector<double> probs) {
  if (probs.size() < 2) throw InvalidInput("probability vector needs K >= 2");
  double total = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
      throw InvalidInput("probability entries must lie in [0, 1]");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > kSimplexTol) {
    throw InvalidInput("probabilities sum to " + std::to_string(total) + ", not 1");
  }
  return floor_and_normalize(std::move(probs));
}

std::size_t ProbVector::argmax() const {
  // Lowest index wins ties.
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs_.size(); ++i) {
    if (probs_[i] > probs_[best]) best = i;
  }
  return best;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw InvalidInput("log_sum_exp of an empty vector");
  const double m = *std::max_element(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

ProbVector softmax(std::span<const double> logits) {
  if (logits.size() < 2) throw InvalidInput("softmax needs at least two logits");
  for (double v : logits) {
    if (!std::isfinite(v)) throw InvalidInput("softmax input must be finite");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return floor_and_normalize(std::move(out));
}

ProbVector softmax(const Logits& logits) { return softmax(logits.values()); }

double safe_log(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("safe_log argument outside [0, 1]");
  return std::log(std::max(p, kProbFloor));
}

ProbVector sample_simplex(std::size_t k, Rng& rng) {
  if (k < 2) throw InvalidInput("sample_simplex needs k >= 2");
  std::vector<double> g(k);
  double s = 0.0;
  for (double& v : g) {
    v = rng.exponential();
    s += v;
  }
  for (double& v : g) v /= s;
  return floor_and_normalize(std::move(g));
}

}  // namespace falab
