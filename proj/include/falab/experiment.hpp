#ifndef FALAB_EXPERIMENT_HPP_
#define FALAB_EXPERIMENT_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "falab/datagen.hpp"
#include "falab/losses.hpp"
#include "falab/nn.hpp"
#include "falab/noiselab.hpp"
#include "falab/sfda.hpp"

namespace falab {

struct PathsConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path output_dir = "out";
};

struct SourceTrainingConfig {
  TrainConfig train{.lr_backbone = 1e-2, .lr_head = 1e-2, .momentum = 0.9, .batch_size = 64,
                    .max_epochs = 10, .seed = 0};
  LossId loss = LossId::kCrossEntropy;
};

struct VerifyConfig {
  std::vector<std::size_t> boundedness_ks{2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::size_t boundedness_samples = 100000;
  std::size_t plogp_grid_points = 1000000;
  std::vector<std::size_t> theorem_ks{2, 3, 4};
  std::size_t theorem_matrices = 100;
  std::size_t theorem_samples = 100;
  std::size_t grid_resolution = 21;
  std::size_t gradcheck_instances = 200;
  double gradcheck_step = 1e-5;
  double gradcheck_tol = 1e-5;
};

/// Everything a run needs; serialized next to its outputs.
struct ExperimentConfig {
  PathsConfig paths;
  DomainSpec domain;
  std::vector<std::size_t> hidden_dims{32};
  std::size_t bottleneck_dim = 16;
  SourceTrainingConfig source;
  AdaptConfig adaptation;
  std::vector<LossId> compare_losses;
  std::vector<std::uint64_t> seeds;
  VerifyConfig verify;

  Architecture architecture() const;
  void validate() const;
};

/// 8 classes in 8 dimensions, 250 source samples per class, target rotated
/// by 0.5 rad with a linear 2:1 class imbalance, 20 seeds.
ExperimentConfig default_config();

/// Two well-separated classes; the rigid shift costs the source model
/// noticeable target accuracy.
DomainSpec two_class_benchmark_spec(std::uint64_t seed);

nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults; unknown keys and bad values raise
/// ConfigError naming the offending field.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// FNV-1a of the canonical JSON, output directory excluded.
std::string config_hash(const ExperimentConfig& cfg);

/// A generated domain pair with its trained source model.
struct SeedSetup {
  std::uint64_t seed = 0;
  DomainPair data;
  Model source_model;
  Metrics source_on_source;
  Metrics source_on_target;
};

SeedSetup prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed);
/// Domain spec and configs with `seed` substituted.
DomainSpec seeded_domain(const ExperimentConfig& cfg, std::uint64_t seed);
AdaptConfig seeded_adaptation(const ExperimentConfig& cfg, std::uint64_t seed, LossId loss);

struct ComparisonRow {
  std::string method;
  std::uint64_t seed = 0;
  double pre_accuracy = 0.0;
  double post_accuracy = 0.0;
  std::vector<double> per_class_accuracy;
};

struct MethodSummary {
  std::string method;
  double mean_pre = 0.0;
  double mean_post = 0.0;
  /// Paired against the reference method; ties are dropped.
  std::size_t wins = 0;
  std::size_t losses = 0;
  double sign_test_p = 1.0;
};

struct ComparisonResult {
  std::vector<ComparisonRow> rows;
  std::vector<MethodSummary> summary;
};

/// One-sided exact sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
double sign_test_p(std::size_t wins, std::size_t losses);

/// Adapts every seed's source model with each method. "source-only" is
/// always included; summaries are paired against `reference`.
ComparisonResult run_comparison(const ExperimentConfig& cfg,
                                const std::vector<std::pair<std::string, LossId>>& methods,
                                const std::string& reference, int jobs = 1);

/// Methods of the ablation table, in row order.
std::vector<std::pair<std::string, LossId>> ablation_methods();
ComparisonResult run_ablation(const ExperimentConfig& cfg, int jobs = 1);

struct GradcheckRow {
  std::string loss;
  std::string mode;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  bool pass = false;
};

struct TheoremRow {
  std::size_t k = 0;
  std::string loss;
  std::string eta;
  std::uint64_t seed = 0;
  RiskGapReport report;
};

struct VerifyResult {
  std::vector<BoundednessResult> boundedness;
  ScalarMax plogp_max;
  std::vector<TheoremRow> theorem;
  /// Full FAL and CE under the same matrices; reported, not asserted.
  std::vector<TheoremRow> contrast;
  std::vector<GradcheckRow> gradcheck;

  bool all_within_bound() const;
  bool all_assumptions_hold() const;
};

VerifyResult run_verify(const ExperimentConfig& cfg, std::uint64_t seed);

/// Options shared by every subcommand.
struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  int jobs = 1;
  bool emit_plots = false;
};

/// Applies --seed / --out and the FALAB_OUT_DIR environment override.
ExperimentConfig resolve_config(ExperimentConfig cfg, const RunOptions& opts);

void cmd_gen(const ExperimentConfig& cfg, const RunOptions& opts);
void cmd_train_source(const ExperimentConfig& cfg, const RunOptions& opts);
void cmd_adapt(const ExperimentConfig& cfg, const RunOptions& opts);
void cmd_compare(const ExperimentConfig& cfg, const RunOptions& opts);
/// Returns false when any theorem row leaves its bound.
bool cmd_verify(const ExperimentConfig& cfg, const RunOptions& opts);
void cmd_ablate(const ExperimentConfig& cfg, const RunOptions& opts);

/// Seed-indexed dataset and checkpoint locations.
std::filesystem::path source_data_path(const ExperimentConfig& cfg, std::uint64_t seed);
std::filesystem::path target_data_path(const ExperimentConfig& cfg, std::uint64_t seed);
std::filesystem::path target_unlabeled_path(const ExperimentConfig& cfg, std::uint64_t seed);
std::filesystem::path source_checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed);
std::filesystem::path adapted_checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace falab

#endif  // FALAB_EXPERIMENT_HPP_
