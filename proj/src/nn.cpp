#include "falab/nn.hpp"

#include <cmath>
#include <numeric>

#include <json.hpp>

#include "falab/errors.hpp"
#include "falab/report_io.hpp"

namespace falab {
namespace {

using RowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MutableRowMajorMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

void Architecture::validate() const {
  if (input_dim == 0) throw InvalidInput("architecture: input_dim must be positive");
  if (num_classes < 2) throw InvalidInput("architecture: need at least two classes");
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw InvalidInput("architecture: hidden widths must be positive");
  }
}

Model::Model(const Architecture& arch) : arch_(arch) {
  arch_.validate();
  std::size_t in = arch.input_dim;
  std::size_t offset = 0;
  auto add = [&](std::size_t out, Activation act, ParamGroup group) {
    layers_.push_back(LayerShape{in, out, act, group, offset});
    offset += layers_.back().num_params();
    in = out;
  };
  for (std::size_t h : arch.hidden_dims) add(h, Activation::kTanh, ParamGroup::kBackbone);
  if (arch.bottleneck_dim > 0) add(arch.bottleneck_dim, Activation::kIdentity, ParamGroup::kBottleneck);
  add(arch.num_classes, Activation::kIdentity, ParamGroup::kHead);
  params_.assign(offset, 0.0);
}

Model Model::zeros(const Architecture& arch) { return Model(arch); }

Model Model::init_uniform(const Architecture& arch, Rng& rng) {
  Model m(arch);
  for (const LayerShape& layer : m.layers_) {
    const double a = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (std::size_t i = 0; i < layer.num_params(); ++i) {
      m.params_[layer.offset + i] = rng.uniform(-a, a);
    }
  }
  return m;
}

void Model::set_params(std::span<const double> values) {
  if (values.size() != params_.size()) throw InvalidInput("parameter count mismatch");
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidInput("parameters must be finite");
  }
  std::copy(values.begin(), values.end(), params_.begin());
}

RowMajorMap Model::weight(std::size_t i) const {
  const LayerShape& l = layers_.at(i);
  return RowMajorMap(params_.data() + l.offset, static_cast<Eigen::Index>(l.out),
                     static_cast<Eigen::Index>(l.in));
}

Eigen::Map<const Eigen::VectorXd> Model::bias(std::size_t i) const {
  const LayerShape& l = layers_.at(i);
  return Eigen::Map<const Eigen::VectorXd>(params_.data() + l.offset + l.out * l.in,
                                           static_cast<Eigen::Index>(l.out));
}

ForwardResult Model::forward(std::span<const double> x) const {
  ForwardTrace trace;
  return forward(x, trace);
}

ForwardResult Model::forward(std::span<const double> x, ForwardTrace& trace) const {
  if (x.size() != arch_.input_dim) {
    throw InvalidInput("input has " + std::to_string(x.size()) + " features, model expects " +
                       std::to_string(arch_.input_dim));
  }
  trace.activations.clear();
  trace.activations.reserve(layers_.size() + 1);
  trace.activations.emplace_back(
      Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Eigen::VectorXd a = weight(i) * trace.activations.back() + bias(i);
    if (layers_[i].activation == Activation::kTanh) a = a.array().tanh();
    trace.activations.push_back(std::move(a));
  }
  ForwardResult out;
  out.features = trace.activations[trace.activations.size() - 2];
  const Eigen::VectorXd& logits = trace.activations.back();
  out.logits.assign(logits.data(), logits.data() + logits.size());
  return out;
}

void Model::backward(const ForwardTrace& trace, std::span<const double> grad_logits,
                     std::span<double> grad) const {
  if (grad.size() != params_.size()) throw InvalidInput("gradient buffer size mismatch");
  if (trace.activations.size() != layers_.size() + 1) throw InvalidInput("stale forward trace");
  Eigen::VectorXd delta = Eigen::Map<const Eigen::VectorXd>(
      grad_logits.data(), static_cast<Eigen::Index>(grad_logits.size()));
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const LayerShape& l = layers_[i];
    if (l.activation == Activation::kTanh) {
      const Eigen::VectorXd& out = trace.activations[i + 1];
      delta = delta.array() * (1.0 - out.array().square());
    }
    const Eigen::VectorXd& in = trace.activations[i];
    MutableRowMajorMap gw(grad.data() + l.offset, static_cast<Eigen::Index>(l.out),
                          static_cast<Eigen::Index>(l.in));
    gw.noalias() += delta * in.transpose();
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + l.offset + l.out * l.in,
                                   static_cast<Eigen::Index>(l.out));
    gb += delta;
    if (i > 0) delta = weight(i).transpose() * delta;
  }
}

void TrainConfig::validate() const {
  if (!(lr_backbone >= 0.0) || !(lr_head >= 0.0)) {
    throw InvalidInput("learning rates must be nonnegative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidInput("momentum must lie in [0, 1)");
  if (batch_size == 0) throw InvalidInput("batch_size must be positive");
  if (max_epochs < 1) throw InvalidInput("max_epochs must be >= 1");
}

SgdMomentum::SgdMomentum(std::size_t num_params, double momentum)
    : momentum_(momentum), velocity_(num_params, 0.0) {}

void SgdMomentum::step(std::span<double> params, std::span<const double> grads,
                       std::span<const double> lr_per_param) {
  if (params.size() != velocity_.size() || grads.size() != velocity_.size() ||
      lr_per_param.size() != velocity_.size()) {
    throw InvalidInput("optimizer size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity_[i] = momentum_ * velocity_[i] - lr_per_param[i] * grads[i];
    params[i] += velocity_[i];
  }
}

std::vector<double> learning_rates(const Model& model, const TrainConfig& cfg,
                                   bool freeze_classifier) {
  std::vector<double> lr(model.num_params(), 0.0);
  for (const LayerShape& l : model.layers()) {
    double rate = l.group == ParamGroup::kBackbone ? cfg.lr_backbone : cfg.lr_head;
    if (freeze_classifier && l.group == ParamGroup::kHead) rate = 0.0;
    std::fill_n(lr.begin() + static_cast<std::ptrdiff_t>(l.offset), l.num_params(), rate);
  }
  return lr;
}

double train_epoch(Model& model, SgdMomentum& opt, const FeatureMatrix& x,
                   const SampleLoss& loss, const TrainConfig& cfg,
                   std::span<const double> lr_per_param, Rng& rng, int epoch) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  if (n == 0) throw InvalidInput("cannot train on an empty dataset");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  std::vector<double> grad(model.num_params());
  ForwardTrace trace;
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += cfg.batch_size) {
    const std::size_t stop = std::min(n, start + cfg.batch_size);
    const double inv = 1.0 / static_cast<double>(stop - start);
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t b = start; b < stop; ++b) {
      const std::size_t idx = order[b];
      const auto row = x.row(static_cast<Eigen::Index>(idx));
      const ForwardResult fr =
          model.forward(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                        trace);
      for (double z : fr.logits) {
        if (!std::isfinite(z)) throw Diverged("non-finite logits", epoch);
      }
      LossEval ev = loss(idx, softmax(fr.logits));
      if (!std::isfinite(ev.value)) throw Diverged("non-finite training loss", epoch);
      total += ev.value;
      for (double& g : ev.grad_logits) g *= inv;
      model.backward(trace, ev.grad_logits, grad);
    }
    opt.step(model.mutable_params(), grad, lr_per_param);
  }
  for (double v : model.params()) {
    if (!std::isfinite(v)) throw Diverged("non-finite parameter", epoch);
  }
  return total / static_cast<double>(n);
}

TrainResult train_supervised(Model model, const Dataset& data, LossId loss,
                             const LossParams& params, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (data.size() == 0) throw InvalidInput("cannot train on an empty dataset");
  if (!data.has_labels()) throw InvalidInput("supervised training needs labels");
  if (data.dim() != model.arch().input_dim) throw InvalidInput("dataset dim != model input dim");
  if (data.num_classes != model.arch().num_classes) throw InvalidInput("dataset K != model K");
  params.validate(loss, data.num_classes);

  Rng rng(cfg.seed, 0x7261696e);  // "rain"
  SgdMomentum opt(model.num_params(), cfg.momentum);
  const std::vector<double> lr = learning_rates(model, cfg);
  const std::size_t k = data.num_classes;
  SampleLoss sample_loss = [&](std::size_t i, const ProbVector& p) {
    return evaluate_loss(loss, p, LabelDist(static_cast<std::size_t>(data.labels[i]), k), params);
  };
  TrainResult result{std::move(model), {}};
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    result.epoch_loss.push_back(
        train_epoch(result.model, opt, data.features, sample_loss, cfg, lr, rng, epoch));
  }
  return result;
}

std::vector<ProbVector> predict_all(const Model& model, const FeatureMatrix& x) {
  if (x.rows() == 0) throw InvalidInput("predict_all on an empty dataset");
  if (static_cast<std::size_t>(x.cols()) != model.arch().input_dim) {
    throw InvalidInput("dataset dim != model input dim");
  }
  std::vector<ProbVector> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  ForwardTrace trace;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    out.push_back(softmax(
        model.forward(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                      trace)
            .logits));
  }
  return out;
}

std::vector<int> predict_labels(const Model& model, const FeatureMatrix& x) {
  std::vector<int> labels;
  for (const ProbVector& p : predict_all(model, x)) labels.push_back(static_cast<int>(p.argmax()));
  return labels;
}

double dataset_loss(const Model& model, const FeatureMatrix& x, std::span<const int> labels,
                    LossId loss, const LossParams& params, std::span<double> grad) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw InvalidInput("label count != N");
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  const double inv = 1.0 / static_cast<double>(labels.size());
  ForwardTrace trace;
  double total = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    const ForwardResult fr = model.forward(
        std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), trace);
    LossEval ev = evaluate_loss(
        loss, softmax(fr.logits),
        LabelDist(static_cast<std::size_t>(labels[static_cast<std::size_t>(r)]), model.arch().num_classes),
        params);
    total += ev.value;
    if (!grad.empty()) {
      for (double& g : ev.grad_logits) g *= inv;
      model.backward(trace, ev.grad_logits, grad);
    }
  }
  return total * inv;
}

std::string checkpoint_json(const Model& model) {
  nlohmann::json j;
  j["format"] = "falab-model";
  j["version"] = kCheckpointVersion;
  const Architecture& a = model.arch();
  j["architecture"] = {{"input_dim", a.input_dim},
                       {"hidden_dims", a.hidden_dims},
                       {"bottleneck_dim", a.bottleneck_dim},
                       {"num_classes", a.num_classes}};
  j["params"] = std::vector<double>(model.params().begin(), model.params().end());
  return j.dump();
}

Model checkpoint_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what(), e.byte);
  }
  try {
    if (j.at("format") != "falab-model") throw InvalidInput("not a falab model checkpoint");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw UnsupportedVersion("checkpoint version " + std::to_string(version) +
                               " is not supported (expected " +
                               std::to_string(kCheckpointVersion) + ")");
    }
    const auto& ja = j.at("architecture");
    Architecture arch;
    arch.input_dim = ja.at("input_dim").get<std::size_t>();
    arch.hidden_dims = ja.at("hidden_dims").get<std::vector<std::size_t>>();
    arch.bottleneck_dim = ja.at("bottleneck_dim").get<std::size_t>();
    arch.num_classes = ja.at("num_classes").get<std::size_t>();
    Model m = Model::zeros(arch);
    m.set_params(j.at("params").get<std::vector<double>>());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("invalid checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_json(model));
}

Model load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw PathError("checkpoint not found: " + path.string());
  return checkpoint_from_json(read_file(path));
}

}  // namespace falab
