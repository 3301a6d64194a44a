#include <doctest.h>

#include <cmath>
#include <vector>

#include "falab/datagen.hpp"
#include "falab/errors.hpp"
#include "falab/experiment.hpp"
#include "falab/report_io.hpp"
#include "falab/sfda.hpp"
#include "test_util.hpp"

using namespace falab;

TEST_CASE("zero shift leaves the two domains indistinguishable") {
  DomainSpec spec;
  spec.num_classes = 3;
  spec.dim = 4;
  spec.samples_per_class = 400;
  spec.seed = 12;
  const DomainPair pair = generate_pair(spec);
  CHECK_FALSE(pair.shift_is_material());
  const double n_s = static_cast<double>(pair.source.size());
  const double n_t = static_cast<double>(pair.target.size());
  for (Eigen::Index c = 0; c < 4; ++c) {
    const auto a = pair.source.features.col(c);
    const auto b = pair.target.features.col(c);
    const double ma = a.mean(), mb = b.mean();
    const double va = (a.array() - ma).square().sum() / (n_s - 1);
    const double vb = (b.array() - mb).square().sum() / (n_t - 1);
    const double z = (ma - mb) / std::sqrt(va / n_s + vb / n_t);
    CHECK(std::abs(z) < 4.0);
  }
}

TEST_CASE("two-class preset: the shift is material") {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const DomainPair pair = generate_pair(two_class_benchmark_spec(seed));
    CHECK(pair.shift_is_material());
    Rng init(seed);
    TrainConfig tc;
    tc.lr_backbone = tc.lr_head = 0.01;
    tc.max_epochs = 10;
    tc.seed = seed;
    const Model m = train_supervised(Model::init_uniform(Architecture{2, {32}, 16, 2}, init),
                                     pair.source, LossId::kCrossEntropy, LossParams{}, tc)
                        .model;
    CHECK(evaluate(m, pair.source).accuracy >= 0.95);
    CHECK(evaluate(m, pair.target).accuracy <= 0.85);
  }
}

TEST_CASE("generation is deterministic and respects class proportions") {
  DomainSpec spec;
  spec.num_classes = 4;
  spec.dim = 3;
  spec.samples_per_class = 50;
  spec.shift_rotation = 0.4;
  spec.shift_translation = {1.0, 0.0, -1.0};
  spec.target_class_proportions = {2.0, 1.0, 1.0, 1.0};
  spec.seed = 9;
  const DomainPair a = generate_pair(spec);
  const DomainPair b = generate_pair(spec);
  CHECK(encode_dataset(a.source) == encode_dataset(b.source));
  CHECK(encode_dataset(a.target) == encode_dataset(b.target));
  CHECK(a.target.domain == DomainTag::kTarget);

  const std::vector<std::size_t> sizes = target_class_sizes(spec);
  CHECK(sizes == std::vector<std::size_t>{80, 40, 40, 40});
  std::vector<std::size_t> seen(4, 0);
  for (int y : a.target.labels) ++seen[static_cast<std::size_t>(y)];
  CHECK(seen == sizes);

  const std::vector<double> x{0.3, -1.2, 2.5};
  const std::vector<double> back = invert_shift(spec, apply_shift(spec, x));
  for (std::size_t i = 0; i < 3; ++i) CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-14));
}

TEST_CASE("degenerate specs are rejected") {
  DomainSpec spec;
  spec.class_means = {{1.0, 1.0}, {1.0, 1.0}};
  CHECK_THROWS_AS(generate_pair(spec), InvalidInput);
  DomainSpec bad_dim;
  bad_dim.class_means = {{1.0, 1.0, 0.0}, {0.0, 1.0, 0.0}};
  CHECK_THROWS_AS(generate_pair(bad_dim), InvalidInput);
  DomainSpec bad_props;
  bad_props.target_class_proportions = {1.0, -1.0};
  CHECK_THROWS_AS(generate_pair(bad_props), InvalidInput);
}

TEST_CASE("pseudo-label noise injection") {
  DomainSpec spec;
  spec.samples_per_class = 5000;
  spec.seed = 2;
  const Dataset target = generate_pair(spec).target;
  Rng rng(1);
  const Dataset clean = inject_pseudo_label_noise(target, NoiseMatrix::identity(2), rng);
  CHECK(clean.noisy_labels == target.labels);

  const Dataset noisy = inject_pseudo_label_noise(target, NoiseMatrix::symmetric(2, 0.3), rng);
  CHECK(noisy.labels == target.labels);
  std::size_t diff = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) diff += noisy.labels[i] != noisy.noisy_labels[i];
  CHECK(static_cast<double>(diff) / static_cast<double>(noisy.size()) ==
        doctest::Approx(0.3).epsilon(0.02 / 0.3));

  CHECK_THROWS_AS(inject_pseudo_label_noise(target, NoiseMatrix({{0.4, 0.6}, {0.1, 0.9}}), rng),
                  AssumptionViolated);
  CHECK_THROWS_AS(inject_pseudo_label_noise(target.unlabeled(), NoiseMatrix::identity(2), rng),
                  InvalidInput);
}

TEST_CASE("dataset files") {
  DomainSpec spec;
  spec.num_classes = 3;
  spec.dim = 5;
  spec.samples_per_class = 20;
  spec.shift_rotation = 0.3;
  spec.seed = 4;
  const DomainPair pair = generate_pair(spec);
  Rng rng(3);
  const Dataset noisy = inject_pseudo_label_noise(pair.target, NoiseMatrix::symmetric(3, 0.2), rng);

  const test::TempDir dir;
  for (const Dataset* d : {&pair.source, &noisy}) {
    const Dataset u = d->unlabeled();
    for (const Dataset* v : {d, &u}) {
      save_dataset(*v, dir.path() / "d.fds");
      CHECK(load_dataset(dir.path() / "d.fds") == *v);
    }
  }

  const std::vector<char> bytes = encode_dataset(pair.source);
  CHECK(bytes.size() == 32 + 60 * 5 * 8 + 60 * 4);
  for (std::size_t cut : {std::size_t{0}, std::size_t{7}, std::size_t{31}, bytes.size() - 1}) {
    const std::vector<char> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(decode_dataset(part), ParseError);
  }
  try {
    decode_dataset(std::vector<char>(bytes.begin(), bytes.end() - 3));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == bytes.size() - 3);
  }
  std::vector<char> longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(decode_dataset(longer), ParseError);

  std::vector<char> v2 = bytes;
  v2[8] = 2;
  CHECK_THROWS_AS(decode_dataset(v2), UnsupportedVersion);
  std::vector<char> magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_dataset(magic), ParseError);

  CHECK_THROWS_AS(load_dataset(dir.path() / "nope.fds"), PathError);
}
