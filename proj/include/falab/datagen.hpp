#ifndef FALAB_DATAGEN_HPP_
#define FALAB_DATAGEN_HPP_

#include <cstdint>
#include <vector>

#include "falab/dataset.hpp"
#include "falab/mathcore.hpp"
#include "falab/noiselab.hpp"

namespace falab {

/**
 * Isotropic Gaussian mixture for the source domain and a rigid shift of it
 * for the target domain.
 *
 * The shift rotates every coordinate pair (0,1), (2,3), ... by
 * shift_rotation radians and then adds shift_translation. When class_means
 * is empty the means are drawn from the seed: uniform directions scaled to
 * mean_radius.
 */
struct DomainSpec {
  std::size_t num_classes = 2;
  std::size_t dim = 2;
  std::vector<std::vector<double>> class_means;
  double mean_radius = 3.0;
  double noise_scale = 1.0;
  std::vector<double> shift_translation;
  double shift_rotation = 0.0;
  std::size_t samples_per_class = 100;
  /// Relative class sizes in the target; empty means balanced.
  std::vector<double> target_class_proportions;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DomainPair {
  Dataset source;
  Dataset target;
  std::vector<std::vector<double>> source_means;
  std::vector<std::vector<double>> target_means;
  /// Fraction of target samples on which the nearest-source-mean and
  /// nearest-target-mean rules disagree. Zero means the shift leaves the
  /// Bayes decision unchanged on the drawn sample.
  double bayes_disagreement = 0.0;
  bool shift_is_material() const { return bayes_disagreement > 0.0; }
};

DomainPair generate_pair(const DomainSpec& spec);

/// Rotation + translation used for the target domain, and its inverse.
std::vector<double> apply_shift(const DomainSpec& spec, std::span<const double> x);
std::vector<double> invert_shift(const DomainSpec& spec, std::span<const double> x);

/// Target class sizes implied by spec (sums to K * samples_per_class up to rounding).
std::vector<std::size_t> target_class_sizes(const DomainSpec& spec);

/// Attaches a corrupted copy of the ground truth. The noise matrix must be
/// clean-dominant.
Dataset inject_pseudo_label_noise(const Dataset& target, const NoiseMatrix& eta, Rng& rng);

}  // namespace falab

#endif  // FALAB_DATAGEN_HPP_
