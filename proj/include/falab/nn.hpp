#ifndef FALAB_NN_HPP_
#define FALAB_NN_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "falab/dataset.hpp"
#include "falab/losses.hpp"
#include "falab/mathcore.hpp"

namespace falab {

/**
 * input -> hidden layers (tanh) -> bottleneck (affine) -> linear K-way head.
 *
 * The hidden layers form the feature-extractor backbone; the bottleneck and
 * head form the second parameter group. bottleneck_dim == 0 drops the
 * bottleneck, and an empty hidden_dims gives a single affine classifier.
 */
struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t bottleneck_dim = 0;
  std::size_t num_classes = 0;

  void validate() const;
  bool operator==(const Architecture&) const = default;
};

enum class Activation { kIdentity, kTanh };
enum class ParamGroup { kBackbone, kBottleneck, kHead };

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::kIdentity;
  ParamGroup group = ParamGroup::kHead;
  /// Offset of the row-major out x in weight block in the flat parameter
  /// vector; the bias follows it.
  std::size_t offset = 0;

  std::size_t num_params() const { return out * in + out; }
};

struct ForwardResult {
  /// Bottleneck features (the input to the classifier head).
  Eigen::VectorXd features;
  std::vector<double> logits;
};

/// Per-layer activations kept for backpropagation.
struct ForwardTrace {
  std::vector<Eigen::VectorXd> activations;
};

class Model {
 public:
  static Model zeros(const Architecture& arch);
  /// Uniform in [-a, a] with a = 1/sqrt(fan_in), weights and biases alike.
  static Model init_uniform(const Architecture& arch, Rng& rng);

  const Architecture& arch() const { return arch_; }
  const std::vector<LayerShape>& layers() const { return layers_; }
  std::size_t num_params() const { return params_.size(); }

  std::span<const double> params() const { return params_; }
  std::span<double> mutable_params() { return params_; }
  void set_params(std::span<const double> values);

  /// Weight block of layer i viewed in place.
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  weight(std::size_t i) const;
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t i) const;

  ForwardResult forward(std::span<const double> x) const;
  ForwardResult forward(std::span<const double> x, ForwardTrace& trace) const;

  /// Accumulates d(loss)/d(params) into grad given d(loss)/d(logits).
  void backward(const ForwardTrace& trace, std::span<const double> grad_logits,
                std::span<double> grad) const;

  bool operator==(const Model& other) const {
    return arch_ == other.arch_ && params_ == other.params_;
  }

 private:
  explicit Model(const Architecture& arch);

  Architecture arch_;
  std::vector<LayerShape> layers_;
  std::vector<double> params_;
};

struct TrainConfig {
  double lr_backbone = 1e-3;
  double lr_head = 1e-2;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  int max_epochs = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Classic momentum: v <- m v - lr g; theta <- theta + v.
class SgdMomentum {
 public:
  SgdMomentum(std::size_t num_params, double momentum);

  void step(std::span<double> params, std::span<const double> grads,
            std::span<const double> lr_per_param);
  std::span<const double> velocity() const { return velocity_; }

 private:
  double momentum_;
  std::vector<double> velocity_;
};

/// Learning rate per parameter from the two groups; frozen groups get zero.
std::vector<double> learning_rates(const Model& model, const TrainConfig& cfg,
                                   bool freeze_classifier = false);

/// Loss for sample `index` given the model output p.
using SampleLoss = std::function<LossEval(std::size_t index, const ProbVector& p)>;

/**
 * One shuffled pass of minibatch SGD over the rows of x. The batch loss is
 * the mean of per-sample losses. Returns the mean per-sample loss and
 * throws Diverged (tagged with `epoch`) on a non-finite loss or parameter.
 */
double train_epoch(Model& model, SgdMomentum& opt, const FeatureMatrix& x,
                   const SampleLoss& loss, const TrainConfig& cfg,
                   std::span<const double> lr_per_param, Rng& rng, int epoch);

struct TrainResult {
  Model model;
  std::vector<double> epoch_loss;
};

TrainResult train_supervised(Model model, const Dataset& data, LossId loss,
                             const LossParams& params, const TrainConfig& cfg);

std::vector<ProbVector> predict_all(const Model& model, const FeatureMatrix& x);
std::vector<int> predict_labels(const Model& model, const FeatureMatrix& x);

/// Mean loss over a labeled set (no update); used by gradient checks.
double dataset_loss(const Model& model, const FeatureMatrix& x, std::span<const int> labels,
                    LossId loss, const LossParams& params, std::span<double> grad = {});

inline constexpr int kCheckpointVersion = 1;

/// JSON checkpoint; doubles are printed in shortest round-trip form so a
/// write/read cycle reproduces every parameter bit-exactly.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_json(const Model& model);
Model checkpoint_from_json(const std::string& text);

}  // namespace falab

#endif  // FALAB_NN_HPP_
