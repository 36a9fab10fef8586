#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ad.hpp"
#include "datasets.hpp"

namespace gradal::models {

struct CnnSpec {
    int conv1_channels = 8;
    int conv2_channels = 16;
    int kernel = 5;
    int dense = 64;
};

struct ModelSpec {
    enum class Kind { Mlp, Cnn };
    Kind kind = Kind::Mlp;
    std::vector<int> input_shape = {2};  // {dim} for MLP, {C,H,W} for CNN
    int classes = 2;
    std::vector<int> hidden = {64, 64};  // MLP widths; empty = linear model
    CnnSpec cnn;

    size_t input_dim() const;
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double lr = 0.05;
    double lr_decay = 0.1;
    int lr_decay_epoch = 24;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    uint64_t seed = 0;

    void validate() const;
};

struct TrainMetrics {
    std::vector<double> epoch_mean_loss;
};

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

// A differentiable classifier with a flat view over its parameters.
class TaskModel {
  public:
    TaskModel() = default;
    static TaskModel make(const ModelSpec& spec, uint64_t init_seed);

    const ModelSpec& spec() const { return spec_; }
    int num_classes() const { return spec_.classes; }
    size_t param_count() const;

    // Records onto the active tape when one is bound. x is (B, input_dim).
    ad::Tensor forward(const ad::Tensor& x) const;

    std::span<const ad::Tensor> params() const { return params_; }
    std::span<ad::Tensor> params() { return params_; }
    // Index of the first flat coordinate belonging to the final linear layer.
    size_t last_layer_offset() const { return last_layer_offset_; }

    std::vector<double> flat_params() const;
    void set_flat_params(std::span<const double> theta);
    std::vector<double> flat_grads() const;  // errors on missing grads
    void zero_grads();
    void drop_grads();

    TaskModel clone() const;

  private:
    ModelSpec spec_;
    std::vector<ad::Tensor> params_;
    size_t last_layer_offset_ = 0;
    int flat_rows_ = 0, flat_cols_ = 0;  // cnn flatten geometry
};

enum class LossKind { CrossEntropy, Expected, Entropy };
std::string to_string(LossKind kind);

// ---- per-sample losses (graph-building; scalar outputs) --------------------

ad::Tensor logits_node(const TaskModel& model, std::span<const double> x);
ad::Tensor cross_entropy_node(const TaskModel& model, std::span<const double> x, int label);
// Posterior-weighted sum of per-candidate-label cross-entropies; the weights
// are detached, so they act as constants during backward.
ad::Tensor expected_loss_node(const TaskModel& model, std::span<const double> x);
// Shannon entropy of the softmax output, differentiable through the weights.
ad::Tensor entropy_loss_node(const TaskModel& model, std::span<const double> x);
ad::Tensor loss_node(const TaskModel& model, std::span<const double> x, LossKind kind, int label = -1);

// ---- value-only conveniences ------------------------------------------------

std::vector<double> predict_posterior(const TaskModel& model, std::span<const double> x);
double cross_entropy(const TaskModel& model, std::span<const double> x, int label);
double expected_loss(const TaskModel& model, std::span<const double> x);
double entropy_loss(const TaskModel& model, std::span<const double> x);

// Flat parameter gradient of a per-sample loss. Leaves the model's stored
// grads cleared. When last_layer_only is set, coordinates outside the final
// linear layer are zero.
std::vector<double> loss_gradient(const TaskModel& model, std::span<const double> x, LossKind kind,
                                  int label = -1, bool last_layer_only = false);

// Flat gradient of the mean per-sample loss over `indices`, batched.
// Cross-entropy reads labels from the dataset; the scheme losses need none.
std::vector<double> mean_loss_gradient(const TaskModel& model, const data::Dataset& ds,
                                       std::span<const int> indices, LossKind kind);

// ---- training / evaluation ---------------------------------------------------

// SGD with momentum and weight decay over shuffled mini-batches; the learning
// rate is multiplied by lr_decay from lr_decay_epoch on. Deterministic in
// (model state, data order, cfg.seed). The observer, when set, runs after
// every epoch.
using EpochObserver = std::function<void(int epoch, TaskModel& model)>;
TrainMetrics train(TaskModel& model, const data::Dataset& ds, std::span<const int> indices,
                   const TrainConfig& cfg, const EpochObserver& observer = {});

EvalResult evaluate(const TaskModel& model, const data::Dataset& ds, std::span<const int> indices);
EvalResult evaluate(const TaskModel& model, const data::Dataset& ds);
// Per-class accuracy over the full dataset.
std::vector<double> per_class_accuracy(const TaskModel& model, const data::Dataset& ds);

// argmax with ties broken by lowest class index
int argmax_label(std::span<const double> logits);

// ---- checkpoint ---------------------------------------------------------------

void save_model(const std::string& path, const TaskModel& model);
TaskModel load_model(const std::string& path);

}  // namespace gradal::models
