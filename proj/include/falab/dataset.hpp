#ifndef FALAB_DATASET_HPP_
#define FALAB_DATASET_HPP_

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace falab {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class DomainTag : std::uint8_t { kSource = 0, kTarget = 1 };

std::string_view to_string(DomainTag tag);

/**
 * N samples of `dim` features. `labels` holds ground truth when present
 * (empty otherwise); `noisy_labels` is an optional corrupted channel that
 * may only exist alongside ground truth.
 */
struct Dataset {
  FeatureMatrix features;
  std::vector<int> labels;
  std::vector<int> noisy_labels;
  DomainTag domain = DomainTag::kSource;
  std::size_t num_classes = 0;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
  bool has_labels() const { return !labels.empty(); }
  bool has_noisy_labels() const { return !noisy_labels.empty(); }

  /// Throws InvalidInput when shapes or label ranges are inconsistent.
  void validate() const;

  /// Copy with every label channel removed.
  Dataset unlabeled() const;

  bool operator==(const Dataset& other) const;
};

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

/**
 * Binary container, little-endian:
 *
 *   offset  size  field
 *   0       8     magic "FALABDS\0"
 *   8       4     u32 version
 *   12      4     u32 K
 *   16      4     u32 dim
 *   20      8     u64 N
 *   28      1     u8 domain tag (0 source, 1 target)
 *   29      1     u8 has_labels
 *   30      1     u8 has_noisy_labels
 *   31      1     reserved, zero
 *   32      8*N*dim  f64 features, row-major
 *   ...     4*N   i32 labels        (if has_labels)
 *   ...     4*N   i32 noisy labels  (if has_noisy_labels)
 *
 * has_noisy_labels without has_labels is rejected on both save and load.
 * The file is written to a temporary sibling and renamed into place.
 */
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

std::vector<char> encode_dataset(const Dataset& data);
Dataset decode_dataset(const std::vector<char>& bytes);

}  // namespace falab

#endif  // FALAB_DATASET_HPP_
