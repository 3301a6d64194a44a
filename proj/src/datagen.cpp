#include "falab/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "falab/errors.hpp"
#include "falab/report_io.hpp"

namespace falab {
namespace {

constexpr char kMagic[8] = {'F', 'A', 'L', 'A', 'B', 'D', 'S', '\0'};
constexpr std::size_t kHeaderSize = 32;

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::size_t nearest(const std::vector<std::vector<double>>& means, std::span<const double> x) {
  std::size_t best = 0;
  double best_d = sq_dist(means[0], x);
  for (std::size_t c = 1; c < means.size(); ++c) {
    const double d = sq_dist(means[c], x);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

std::vector<double> rotate(std::span<const double> x, double angle) {
  std::vector<double> out(x.begin(), x.end());
  const double c = std::cos(angle), s = std::sin(angle);
  for (std::size_t i = 0; i + 1 < out.size(); i += 2) {
    const double a = out[i], b = out[i + 1];
    out[i] = c * a - s * b;
    out[i + 1] = s * a + c * b;
  }
  return out;
}

Dataset sample_mixture(const std::vector<std::vector<double>>& means, double sigma,
                       const std::vector<std::size_t>& sizes, DomainTag tag, Rng& rng) {
  const std::size_t k = means.size();
  const std::size_t dim = means.front().size();
  const std::size_t n = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  std::vector<int> labels;
  labels.reserve(n);
  for (std::size_t c = 0; c < k; ++c) labels.insert(labels.end(), sizes[c], static_cast<int>(c));
  rng.shuffle(labels);

  Dataset d;
  d.domain = tag;
  d.num_classes = k;
  d.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < n; ++r) {
    const auto& mu = means[static_cast<std::size_t>(labels[r])];
    for (std::size_t j = 0; j < dim; ++j) {
      d.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
          mu[j] + sigma * rng.normal();
    }
  }
  d.labels = std::move(labels);
  return d;
}

template <typename T>
void put(std::vector<char>& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* field) {
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw ParseError(std::string("truncated dataset file reading ") + field, bytes_.size());
    }
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(std::string("truncated dataset file reading ") + what, bytes_.size());
    }
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(DomainTag tag) {
  return tag == DomainTag::kSource ? "source" : "target";
}

void Dataset::validate() const {
  const std::size_t n = size();
  if (num_classes < 2) throw InvalidInput("dataset needs K >= 2");
  if (!features.allFinite()) throw InvalidInput("dataset features must be finite");
  if (has_labels() && labels.size() != n) throw InvalidInput("label count != sample count");
  if (has_noisy_labels()) {
    if (!has_labels()) throw InvalidInput("noisy labels require ground-truth labels");
    if (noisy_labels.size() != n) throw InvalidInput("noisy label count != sample count");
  }
  for (const auto* channel : {&labels, &noisy_labels}) {
    for (int y : *channel) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw InvalidInput("label outside [0, K)");
      }
    }
  }
}

Dataset Dataset::unlabeled() const {
  Dataset d;
  d.features = features;
  d.domain = domain;
  d.num_classes = num_classes;
  return d;
}

bool Dataset::operator==(const Dataset& o) const {
  return domain == o.domain && num_classes == o.num_classes &&
         features.rows() == o.features.rows() && features.cols() == o.features.cols() &&
         std::memcmp(features.data(), o.features.data(),
                     sizeof(double) * static_cast<std::size_t>(features.size())) == 0 &&
         labels == o.labels && noisy_labels == o.noisy_labels;
}

std::vector<char> encode_dataset(const Dataset& data) {
  data.validate();
  std::vector<char> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kDatasetFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.num_classes));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.dim()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(data.size()));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(data.domain));
  put<std::uint8_t>(out, data.has_labels() ? 1 : 0);
  put<std::uint8_t>(out, data.has_noisy_labels() ? 1 : 0);
  put<std::uint8_t>(out, 0);
  for (Eigen::Index i = 0; i < data.features.size(); ++i) put<double>(out, data.features.data()[i]);
  for (int y : data.labels) put<std::int32_t>(out, y);
  for (int y : data.noisy_labels) put<std::int32_t>(out, y);
  return out;
}

Dataset decode_dataset(const std::vector<char>& bytes) {
  Reader r(bytes);
  r.need(8, "magic");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw ParseError("bad magic", 0);
  r.get<std::uint64_t>("magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kDatasetFormatVersion) {
    throw UnsupportedVersion("dataset format version " + std::to_string(version) +
                             " is not supported (expected " +
                             std::to_string(kDatasetFormatVersion) + ")");
  }
  const auto k = r.get<std::uint32_t>("K");
  const auto dim = r.get<std::uint32_t>("dim");
  const auto n = r.get<std::uint64_t>("N");
  const std::size_t tag_at = r.pos();
  const auto tag = r.get<std::uint8_t>("domain tag");
  const std::size_t flags_at = r.pos();
  const auto has_labels = r.get<std::uint8_t>("has_labels");
  const auto has_noisy = r.get<std::uint8_t>("has_noisy_labels");
  r.get<std::uint8_t>("reserved");
  if (tag > 1) throw ParseError("unknown domain tag", tag_at);
  if (has_labels > 1 || has_noisy > 1) throw ParseError("bad label flag", flags_at);
  if (has_noisy && !has_labels) {
    throw ParseError("noisy labels present in an unlabeled file", flags_at + 1);
  }
  if (k < 2) throw ParseError("K must be at least 2", 12);

  const std::uint64_t cells = n * dim;
  const std::uint64_t need = cells * 8 + n * 4 * (has_labels + has_noisy);
  if (dim != 0 && cells / dim != n) throw ParseError("size overflow", 20);
  r.need(static_cast<std::size_t>(need), "payload");
  if (bytes.size() - r.pos() != need) throw ParseError("trailing bytes after payload", r.pos() + need);

  Dataset d;
  d.num_classes = k;
  d.domain = static_cast<DomainTag>(tag);
  d.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::uint64_t i = 0; i < cells; ++i) d.features.data()[i] = r.get<double>("features");
  auto read_labels = [&](std::vector<int>& dst, const char* what) {
    dst.resize(static_cast<std::size_t>(n));
    for (auto& y : dst) {
      const std::size_t at = r.pos();
      y = r.get<std::int32_t>(what);
      if (y < 0 || static_cast<std::uint32_t>(y) >= k) throw ParseError("label outside [0, K)", at);
    }
  };
  if (has_labels) read_labels(d.labels, "labels");
  if (has_noisy) read_labels(d.noisy_labels, "noisy labels");
  return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  write_file_atomic(path, encode_dataset(data));
}

Dataset load_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw PathError("dataset file not found: " + path.string());
  const std::string raw = read_file(path);
  return decode_dataset(std::vector<char>(raw.begin(), raw.end()));
}

void DomainSpec::validate() const {
  if (num_classes < 2) throw InvalidInput("domain spec: need at least two classes");
  if (dim == 0) throw InvalidInput("domain spec: dim must be positive");
  if (!(noise_scale > 0.0) || !std::isfinite(noise_scale)) {
    throw InvalidInput("domain spec: noise_scale must be positive");
  }
  if (samples_per_class == 0) throw InvalidInput("domain spec: samples_per_class must be positive");
  if (!class_means.empty()) {
    if (class_means.size() != num_classes) throw InvalidInput("domain spec: need one mean per class");
    for (const auto& m : class_means) {
      if (m.size() != dim) throw InvalidInput("domain spec: mean dimension != dim");
    }
    for (std::size_t a = 0; a < num_classes; ++a) {
      for (std::size_t b = a + 1; b < num_classes; ++b) {
        if (sq_dist(class_means[a], class_means[b]) == 0.0) {
          throw InvalidInput("domain spec: class means " + std::to_string(a) + " and " +
                             std::to_string(b) + " coincide");
        }
      }
    }
  } else if (!(mean_radius > 0.0)) {
    throw InvalidInput("domain spec: mean_radius must be positive");
  }
  if (!shift_translation.empty() && shift_translation.size() != dim) {
    throw InvalidInput("domain spec: translation dimension != dim");
  }
  if (!std::isfinite(shift_rotation)) throw InvalidInput("domain spec: rotation must be finite");
  if (!target_class_proportions.empty()) {
    if (target_class_proportions.size() != num_classes) {
      throw InvalidInput("domain spec: need one target proportion per class");
    }
    for (double v : target_class_proportions) {
      if (!(v > 0.0)) throw InvalidInput("domain spec: target proportions must be positive");
    }
  }
}

std::vector<double> apply_shift(const DomainSpec& spec, std::span<const double> x) {
  std::vector<double> out = rotate(x, spec.shift_rotation);
  if (!spec.shift_translation.empty()) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += spec.shift_translation[j];
  }
  return out;
}

std::vector<double> invert_shift(const DomainSpec& spec, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  if (!spec.shift_translation.empty()) {
    for (std::size_t j = 0; j < y.size(); ++j) y[j] -= spec.shift_translation[j];
  }
  return rotate(y, -spec.shift_rotation);
}

std::vector<std::size_t> target_class_sizes(const DomainSpec& spec) {
  const std::size_t k = spec.num_classes;
  const std::size_t total = k * spec.samples_per_class;
  if (spec.target_class_proportions.empty()) return std::vector<std::size_t>(k, spec.samples_per_class);
  const double s = std::accumulate(spec.target_class_proportions.begin(),
                                   spec.target_class_proportions.end(), 0.0);
  // Largest remainder keeps the total exact.
  std::vector<std::size_t> sizes(k);
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double exact = static_cast<double>(total) * spec.target_class_proportions[c] / s;
    sizes[c] = static_cast<std::size_t>(std::floor(exact));
    used += sizes[c];
    rem.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; used < total; ++i, ++used) ++sizes[rem[i].second];
  for (std::size_t& n : sizes) n = std::max<std::size_t>(n, 1);
  return sizes;
}

DomainPair generate_pair(const DomainSpec& spec) {
  spec.validate();
  const Rng root(spec.seed, 0x64617461);  // "data"
  DomainPair pair;
  pair.source_means = spec.class_means;
  if (pair.source_means.empty()) {
    Rng mrng = root.split(1);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      std::vector<double> m(spec.dim);
      double norm = 0.0;
      do {
        norm = 0.0;
        for (double& v : m) {
          v = mrng.normal();
          norm += v * v;
        }
      } while (norm == 0.0);
      for (double& v : m) v *= spec.mean_radius / std::sqrt(norm);
      pair.source_means.push_back(std::move(m));
    }
    DomainSpec check = spec;
    check.class_means = pair.source_means;
    check.validate();
  }
  for (const auto& m : pair.source_means) pair.target_means.push_back(apply_shift(spec, m));

  Rng srng = root.split(2);
  Rng trng = root.split(3);
  pair.source = sample_mixture(pair.source_means, spec.noise_scale,
                               std::vector<std::size_t>(spec.num_classes, spec.samples_per_class),
                               DomainTag::kSource, srng);
  // Target points are source-distributed draws pushed through the shift.
  Dataset target = sample_mixture(pair.source_means, spec.noise_scale, target_class_sizes(spec),
                                  DomainTag::kTarget, trng);
  std::size_t disagree = 0;
  for (Eigen::Index r = 0; r < target.features.rows(); ++r) {
    auto row = target.features.row(r);
    const std::vector<double> moved = apply_shift(
        spec, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
    for (std::size_t j = 0; j < moved.size(); ++j) row(static_cast<Eigen::Index>(j)) = moved[j];
    if (nearest(pair.source_means, moved) != nearest(pair.target_means, moved)) ++disagree;
  }
  pair.target = std::move(target);
  pair.bayes_disagreement =
      static_cast<double>(disagree) / static_cast<double>(pair.target.size());
  return pair;
}

Dataset inject_pseudo_label_noise(const Dataset& target, const NoiseMatrix& eta, Rng& rng) {
  if (!target.has_labels()) throw InvalidInput("noise injection needs ground-truth labels");
  if (eta.size() != target.num_classes) throw InvalidInput("noise matrix size != K");
  if (!check_clean_dominant(eta)) {
    throw AssumptionViolated("refusing to inject noise that is not clean-labels-dominant");
  }
  Dataset out = target;
  out.noisy_labels = corrupt_labels(target.labels, eta, rng);
  return out;
}

}  // namespace falab
