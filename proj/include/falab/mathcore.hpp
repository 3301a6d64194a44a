#ifndef FALAB_MATHCORE_HPP_
#define FALAB_MATHCORE_HPP_

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace falab {

/// Probability floor applied before every logarithm.
inline constexpr double kProbFloor = 1e-12;

/// Tolerance on the sum of a probability vector.
inline constexpr double kSimplexTol = 1e-9;

/**
 * Seeded random stream. The engine is std::mt19937_64, whose output
 * sequence is fixed by the standard; uniform and normal variates are derived
 * here rather than through <random> distributions so that draws are
 * bit-reproducible across standard libraries.
 *
 * Streams are splittable: split(id) derives an independent child stream
 * from the parent's seed and the id, without advancing the parent.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  Rng split(std::uint64_t id) const;

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on (0, 1].
  double uniform_pos();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();
  double exponential();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

/// Pre-softmax scores. At least two entries, all finite.
class Logits {
 public:
  explicit Logits(std::vector<double> values);
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

 private:
  std::vector<double> values_;
};

/**
 * A point on the K-simplex with every entry at or above kProbFloor.
 * Construction floors small entries and renormalizes when the floor
 * engaged; inputs that are not a distribution are rejected.
 */
class ProbVector {
 public:
  static ProbVector from(std::vector<double> probs);

  std::size_t size() const { return probs_.size(); }
  std::span<const double> values() const { return probs_; }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::size_t argmax() const;

 private:
  explicit ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {}
  friend ProbVector floor_and_normalize(std::vector<double> probs);

  std::vector<double> probs_;
};

/// Applies the floor and renormalizes if any entry was raised.
ProbVector floor_and_normalize(std::vector<double> probs);

double log_sum_exp(std::span<const double> values);

ProbVector softmax(const Logits& logits);
ProbVector softmax(std::span<const double> logits);

/// ln(max(p, kProbFloor)); p must lie in [0, 1].
double safe_log(double p);

/// Uniform Dirichlet(1, ..., 1) draw on the k-simplex.
ProbVector sample_simplex(std::size_t k, Rng& rng);

}  // namespace falab

#endif  // FALAB_MATHCORE_HPP_
