#include "models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "errors.hpp"
#include "rng.hpp"

namespace gradal::models {

namespace {

constexpr char kModelMagic[8] = {'G', 'D', 'M', 'O', 'D', 'E', 'L', '1'};
constexpr uint32_t kModelVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) fail(Status::IoError, "model checkpoint truncated: " + path);
}

ad::Tensor batch_tensor(const data::Dataset& ds, std::span<const int> indices) {
    size_t d = ds.feature_dim();
    std::vector<double> buf;
    buf.reserve(indices.size() * d);
    for (int i : indices) {
        auto row = ds.sample(static_cast<size_t>(i));
        buf.insert(buf.end(), row.begin(), row.end());
    }
    return ad::Tensor::from({static_cast<int>(indices.size()), static_cast<int>(d)}, std::move(buf));
}

}  // namespace

size_t ModelSpec::input_dim() const {
    size_t n = 1;
    for (int d : input_shape) n *= static_cast<size_t>(d);
    return n;
}

void TrainConfig::validate() const {
    if (epochs < 0) fail(Status::ConfigError, "train config: epochs must be non-negative");
    if (batch_size < 1) fail(Status::ConfigError, "train config: batch_size must be positive");
    if (lr < 0.0) fail(Status::ConfigError, "train config: lr must be non-negative");
    if (lr_decay <= 0.0) fail(Status::ConfigError, "train config: lr_decay must be positive");
    if (lr_decay_epoch > epochs)
        fail(Status::ConfigError, "train config: lr_decay_epoch " + std::to_string(lr_decay_epoch) +
                                      " exceeds epochs " + std::to_string(epochs));
    if (momentum < 0.0 || momentum >= 1.0) fail(Status::ConfigError, "train config: momentum must be in [0,1)");
    if (weight_decay < 0.0) fail(Status::ConfigError, "train config: weight_decay must be non-negative");
}

std::string to_string(LossKind kind) {
    switch (kind) {
        case LossKind::CrossEntropy: return "cross-entropy";
        case LossKind::Expected: return "expected";
        case LossKind::Entropy: return "entropy";
    }
    return "?";
}

TaskModel TaskModel::make(const ModelSpec& spec, uint64_t init_seed) {
    if (spec.classes < 2) fail(Status::ConfigError, "model: need at least 2 classes");
    TaskModel m;
    m.spec_ = spec;
    Rng rng(mix_seed({init_seed, 0x696e6974ULL}));

    auto he_matrix = [&](int rows, int cols, int fan_in) {
        std::vector<double> w(static_cast<size_t>(rows) * cols);
        double sd = std::sqrt(2.0 / std::max(1, fan_in));
        for (auto& x : w) x = rng.normal() * sd;
        return ad::Tensor::from({rows, cols}, std::move(w), true);
    };

    if (spec.kind == ModelSpec::Kind::Mlp) {
        int in = static_cast<int>(spec.input_dim());
        for (int width : spec.hidden) {
            if (width < 1) fail(Status::ConfigError, "model: hidden width must be positive");
            m.params_.push_back(he_matrix(in, width, in));
            m.params_.push_back(ad::Tensor::zeros({width}, true));
            in = width;
        }
        size_t offset = 0;
        for (const auto& p : m.params_) offset += static_cast<size_t>(p.numel());
        m.last_layer_offset_ = offset;
        m.params_.push_back(he_matrix(in, spec.classes, in));
        m.params_.push_back(ad::Tensor::zeros({spec.classes}, true));
    } else {
        if (spec.input_shape.size() != 3)
            fail(Status::ConfigError, "cnn model: input shape must be (channels, height, width)");
        int C = spec.input_shape[0], H = spec.input_shape[1], W = spec.input_shape[2];
        int k = spec.cnn.kernel;
        int h1 = H - k + 1, w1 = W - k + 1;
        if (h1 < 2 || w1 < 2 || h1 % 2 || w1 % 2)
            fail(Status::ConfigError, "cnn model: first conv output must have even positive dims");
        int h1p = h1 / 2, w1p = w1 / 2;
        int h2 = h1p - k + 1, w2 = w1p - k + 1;
        if (h2 < 2 || w2 < 2 || h2 % 2 || w2 % 2)
            fail(Status::ConfigError, "cnn model: second conv output must have even positive dims");
        int h2p = h2 / 2, w2p = w2 / 2;
        int f1 = spec.cnn.conv1_channels, f2 = spec.cnn.conv2_channels;

        auto conv_w = [&](int f, int c) {
            std::vector<double> w(static_cast<size_t>(f) * c * k * k);
            double sd = std::sqrt(2.0 / (c * k * k));
            for (auto& x : w) x = rng.normal() * sd;
            return ad::Tensor::from({f, c, k, k}, std::move(w), true);
        };
        m.params_.push_back(conv_w(f1, C));
        m.params_.push_back(ad::Tensor::zeros({f1}, true));
        m.params_.push_back(conv_w(f2, f1));
        m.params_.push_back(ad::Tensor::zeros({f2}, true));
        int flat = f2 * h2p * w2p;
        m.flat_rows_ = f2;
        m.flat_cols_ = h2p * w2p;
        m.params_.push_back(he_matrix(flat, spec.cnn.dense, flat));
        m.params_.push_back(ad::Tensor::zeros({spec.cnn.dense}, true));
        size_t offset = 0;
        for (const auto& p : m.params_) offset += static_cast<size_t>(p.numel());
        m.last_layer_offset_ = offset;
        m.params_.push_back(he_matrix(spec.cnn.dense, spec.classes, spec.cnn.dense));
        m.params_.push_back(ad::Tensor::zeros({spec.classes}, true));
    }
    return m;
}

size_t TaskModel::param_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += static_cast<size_t>(p.numel());
    return n;
}

ad::Tensor TaskModel::forward(const ad::Tensor& x) const {
    if (x.ndim() != 2 || static_cast<size_t>(x.dim(1)) != spec_.input_dim())
        fail(Status::InvalidArgument, "forward: input shape " + ad::shape_str(x.shape()) +
                                          " does not match model input dim " + std::to_string(spec_.input_dim()));
    if (spec_.kind == ModelSpec::Kind::Mlp) {
        ad::Tensor h = x;
        size_t layers = params_.size() / 2;
        for (size_t l = 0; l < layers; ++l) {
            h = ad::add_rowvec(ad::matmul(h, params_[2 * l]), params_[2 * l + 1]);
            if (l + 1 < layers) h = ad::relu(h);
        }
        return h;
    }
    int B = x.dim(0);
    int C = spec_.input_shape[0], H = spec_.input_shape[1], W = spec_.input_shape[2];
    ad::Tensor h = ad::reshape(x, {B, C, H, W});
    h = ad::maxpool2(ad::relu(ad::conv2d(h, params_[0], params_[1])));
    h = ad::maxpool2(ad::relu(ad::conv2d(h, params_[2], params_[3])));
    h = ad::reshape(h, {B, flat_rows_ * flat_cols_});
    h = ad::relu(ad::add_rowvec(ad::matmul(h, params_[4]), params_[5]));
    return ad::add_rowvec(ad::matmul(h, params_[6]), params_[7]);
}

std::vector<double> TaskModel::flat_params() const {
    std::vector<double> theta;
    theta.reserve(param_count());
    for (const auto& p : params_) {
        auto v = p.values();
        theta.insert(theta.end(), v.begin(), v.end());
    }
    return theta;
}

void TaskModel::set_flat_params(std::span<const double> theta) {
    if (theta.size() != param_count())
        fail(Status::InvalidArgument, "set_flat_params: got " + std::to_string(theta.size()) +
                                          " values for " + std::to_string(param_count()) + " parameters");
    size_t off = 0;
    for (auto& p : params_) {
        auto v = p.values();
        std::copy(theta.begin() + static_cast<long>(off), theta.begin() + static_cast<long>(off + v.size()), v.begin());
        off += v.size();
    }
}

std::vector<double> TaskModel::flat_grads() const {
    std::vector<double> g;
    g.reserve(param_count());
    for (const auto& p : params_) {
        auto gv = p.grad();
        g.insert(g.end(), gv.begin(), gv.end());
    }
    return g;
}

void TaskModel::zero_grads() {
    for (auto& p : params_) p.zero_grad();
}

void TaskModel::drop_grads() {
    for (auto& p : params_) p.drop_grad();
}

TaskModel TaskModel::clone() const {
    TaskModel m;
    m.spec_ = spec_;
    m.last_layer_offset_ = last_layer_offset_;
    m.flat_rows_ = flat_rows_;
    m.flat_cols_ = flat_cols_;
    m.params_.reserve(params_.size());
    for (const auto& p : params_) m.params_.push_back(p.clone());
    return m;
}

// ---- losses ---------------------------------------------------------------

ad::Tensor logits_node(const TaskModel& model, std::span<const double> x) {
    auto xt = ad::Tensor::from({1, static_cast<int>(x.size())}, std::vector<double>(x.begin(), x.end()));
    return model.forward(xt);
}

ad::Tensor cross_entropy_node(const TaskModel& model, std::span<const double> x, int label) {
    if (label < 0 || label >= model.num_classes())
        fail(Status::InvalidArgument, "cross_entropy: label " + std::to_string(label) +
                                          " out of range [0," + std::to_string(model.num_classes()) + ")");
    auto lsm = ad::log_softmax_rows(logits_node(model, x));
    int cols[1] = {label};
    return ad::neg(ad::sum(ad::pick_rows(lsm, cols)));
}

ad::Tensor expected_loss_node(const TaskModel& model, std::span<const double> x) {
    auto z = logits_node(model, x);
    auto p = ad::softmax_rows(z);
    auto lsm = ad::log_softmax_rows(z);
    // sum_i P(y_i|x) * (-log P(y_i|x)), with the weights held constant
    return ad::neg(ad::sum(ad::mul(ad::detach(p), lsm)));
}

ad::Tensor entropy_loss_node(const TaskModel& model, std::span<const double> x) {
    auto z = logits_node(model, x);
    auto p = ad::softmax_rows(z);
    auto lsm = ad::log_softmax_rows(z);
    return ad::neg(ad::sum(ad::mul(p, lsm)));
}

ad::Tensor loss_node(const TaskModel& model, std::span<const double> x, LossKind kind, int label) {
    switch (kind) {
        case LossKind::CrossEntropy: return cross_entropy_node(model, x, label);
        case LossKind::Expected: return expected_loss_node(model, x);
        case LossKind::Entropy: return entropy_loss_node(model, x);
    }
    fail(Status::InvalidArgument, "loss_node: unknown loss kind");
}

std::vector<double> predict_posterior(const TaskModel& model, std::span<const double> x) {
    auto p = ad::softmax_rows(logits_node(model, x));
    auto v = p.values();
    return {v.begin(), v.end()};
}

double cross_entropy(const TaskModel& model, std::span<const double> x, int label) {
    return cross_entropy_node(model, x, label).item();
}

double expected_loss(const TaskModel& model, std::span<const double> x) {
    return expected_loss_node(model, x).item();
}

double entropy_loss(const TaskModel& model, std::span<const double> x) {
    return entropy_loss_node(model, x).item();
}

std::vector<double> loss_gradient(const TaskModel& model, std::span<const double> x, LossKind kind,
                                  int label, bool last_layer_only) {
    auto& mut = const_cast<TaskModel&>(model);
    ad::Tape tape;
    std::vector<double> g;
    {
        ad::TapeScope scope(tape);
        auto loss = loss_node(model, x, kind, label);
        mut.zero_grads();
        tape.backward(loss);
        g = model.flat_grads();
    }
    mut.drop_grads();
    if (last_layer_only)
        std::fill(g.begin(), g.begin() + static_cast<long>(model.last_layer_offset()), 0.0);
    return g;
}

std::vector<double> mean_loss_gradient(const TaskModel& model, const data::Dataset& ds,
                                        std::span<const int> indices, LossKind kind) {
    if (indices.empty()) fail(Status::InvalidArgument, "mean_loss_gradient: empty index set");
    constexpr size_t kChunk = 256;
    auto& mut = const_cast<TaskModel&>(model);
    mut.zero_grads();
    double inv_n = 1.0 / static_cast<double>(indices.size());
    std::vector<int> chunk;
    std::vector<int> labels;
    for (size_t start = 0; start < indices.size(); start += kChunk) {
        size_t stop = std::min(indices.size(), start + kChunk);
        chunk.assign(indices.begin() + static_cast<long>(start), indices.begin() + static_cast<long>(stop));
        ad::Tape tape;
        ad::TapeScope scope(tape);
        auto logits = model.forward(batch_tensor(ds, chunk));
        auto lsm = ad::log_softmax_rows(logits);
        ad::Tensor loss;
        switch (kind) {
            case LossKind::CrossEntropy: {
                labels.resize(chunk.size());
                for (size_t i = 0; i < chunk.size(); ++i)
                    labels[i] = ds.labels[static_cast<size_t>(chunk[i])];
                loss = ad::scale(ad::sum(ad::pick_rows(lsm, labels)), -inv_n);
                break;
            }
            case LossKind::Expected:
                loss = ad::scale(ad::sum(ad::mul(ad::detach(ad::softmax_rows(logits)), lsm)), -inv_n);
                break;
            case LossKind::Entropy:
                loss = ad::scale(ad::sum(ad::mul(ad::softmax_rows(logits), lsm)), -inv_n);
                break;
        }
        tape.backward(loss);
    }
    auto g = model.flat_grads();
    mut.drop_grads();
    return g;
}

// ---- training ----------------------------------------------------------------

TrainMetrics train(TaskModel& model, const data::Dataset& ds, std::span<const int> indices,
                   const TrainConfig& cfg, const EpochObserver& observer) {
    cfg.validate();
    if (indices.empty()) fail(Status::InvalidArgument, "train: empty labeled pool");
    TrainMetrics metrics;
    size_t n = indices.size();

    std::vector<std::vector<double>> momentum(model.params().size());
    for (size_t i = 0; i < momentum.size(); ++i)
        momentum[i].assign(static_cast<size_t>(model.params()[i].numel()), 0.0);

    std::vector<int> order(indices.begin(), indices.end());
    std::vector<int> batch_idx;
    std::vector<int> batch_labels;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = cfg.lr * (epoch >= cfg.lr_decay_epoch ? cfg.lr_decay : 1.0);
        Rng rng(mix_seed({cfg.seed, 0x7368756646ULL, static_cast<uint64_t>(epoch)}));
        rng.shuffle(std::span<int>(order));
        double loss_sum = 0.0;
        for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
            size_t stop = std::min(n, start + static_cast<size_t>(cfg.batch_size));
            batch_idx.assign(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(stop));
            batch_labels.resize(batch_idx.size());
            for (size_t i = 0; i < batch_idx.size(); ++i)
                batch_labels[i] = ds.labels[static_cast<size_t>(batch_idx[i])];

            ad::Tape tape;
            {
                ad::TapeScope scope(tape);
                auto logits = model.forward(batch_tensor(ds, batch_idx));
                auto lsm = ad::log_softmax_rows(logits);
                auto loss = ad::neg(ad::mean(ad::pick_rows(lsm, batch_labels)));
                model.zero_grads();
                tape.backward(loss);
                loss_sum += loss.item() * static_cast<double>(batch_idx.size());
            }

            auto params = model.params();
            for (size_t pi = 0; pi < params.size(); ++pi) {
                auto theta = params[pi].values();
                auto grad = params[pi].grad();
                auto& buf = momentum[pi];
                for (size_t j = 0; j < theta.size(); ++j) {
                    double g = grad[j] + cfg.weight_decay * theta[j];
                    buf[j] = cfg.momentum * buf[j] + g;
                    theta[j] -= lr * buf[j];
                }
            }
        }
        metrics.epoch_mean_loss.push_back(loss_sum / static_cast<double>(n));
        if (observer) {
            model.drop_grads();
            observer(epoch, model);
        }
    }
    model.drop_grads();
    return metrics;
}

// ---- evaluation ----------------------------------------------------------------

int argmax_label(std::span<const double> logits) {
    int best = 0;
    for (size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = static_cast<int>(i);
    return best;
}

EvalResult evaluate(const TaskModel& model, const data::Dataset& ds, std::span<const int> indices) {
    if (indices.empty()) fail(Status::InvalidArgument, "evaluate: empty split");
    constexpr size_t kBatch = 256;
    size_t correct = 0;
    double loss_sum = 0.0;
    int n_classes = model.num_classes();
    std::vector<int> batch;
    for (size_t start = 0; start < indices.size(); start += kBatch) {
        size_t stop = std::min(indices.size(), start + kBatch);
        batch.assign(indices.begin() + static_cast<long>(start), indices.begin() + static_cast<long>(stop));
        auto logits = model.forward(batch_tensor(ds, batch));
        auto lsm = ad::log_softmax_rows(logits);
        auto lv = lsm.values();
        for (size_t r = 0; r < batch.size(); ++r) {
            std::span<const double> row(lv.data() + r * static_cast<size_t>(n_classes),
                                        static_cast<size_t>(n_classes));
            int y = ds.labels[static_cast<size_t>(batch[r])];
            if (argmax_label(row) == y) ++correct;
            loss_sum -= row[static_cast<size_t>(y)];
        }
    }
    double inv = 1.0 / static_cast<double>(indices.size());
    return {static_cast<double>(correct) * inv, loss_sum * inv};
}

EvalResult evaluate(const TaskModel& model, const data::Dataset& ds) {
    std::vector<int> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    return evaluate(model, ds, all);
}

std::vector<double> per_class_accuracy(const TaskModel& model, const data::Dataset& ds) {
    std::vector<double> correct(static_cast<size_t>(ds.classes), 0.0);
    std::vector<double> total(static_cast<size_t>(ds.classes), 0.0);
    constexpr size_t kBatch = 256;
    std::vector<int> batch;
    int n_classes = model.num_classes();
    for (size_t start = 0; start < ds.size(); start += kBatch) {
        size_t stop = std::min(ds.size(), start + kBatch);
        batch.resize(stop - start);
        std::iota(batch.begin(), batch.end(), static_cast<int>(start));
        auto logits = model.forward(batch_tensor(ds, batch));
        auto lv = logits.values();
        for (size_t r = 0; r < batch.size(); ++r) {
            std::span<const double> row(lv.data() + r * static_cast<size_t>(n_classes),
                                        static_cast<size_t>(n_classes));
            int y = ds.labels[static_cast<size_t>(batch[r])];
            total[static_cast<size_t>(y)] += 1.0;
            if (argmax_label(row) == y) correct[static_cast<size_t>(y)] += 1.0;
        }
    }
    std::vector<double> acc(static_cast<size_t>(ds.classes), 0.0);
    for (size_t k = 0; k < acc.size(); ++k) acc[k] = total[k] > 0.0 ? correct[k] / total[k] : 0.0;
    return acc;
}

// ---- checkpoint ------------------------------------------------------------------

void save_model(const std::string& path, const TaskModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(Status::IoError, "cannot write model checkpoint: " + path);
    const auto& spec = model.spec();
    out.write(kModelMagic, sizeof(kModelMagic));
    write_pod(out, kModelVersion);
    write_pod(out, static_cast<uint8_t>(spec.kind == ModelSpec::Kind::Mlp ? 0 : 1));
    write_pod(out, static_cast<uint32_t>(spec.input_shape.size()));
    for (int d : spec.input_shape) write_pod(out, static_cast<int32_t>(d));
    write_pod(out, static_cast<int32_t>(spec.classes));
    write_pod(out, static_cast<uint32_t>(spec.hidden.size()));
    for (int d : spec.hidden) write_pod(out, static_cast<int32_t>(d));
    write_pod(out, static_cast<int32_t>(spec.cnn.conv1_channels));
    write_pod(out, static_cast<int32_t>(spec.cnn.conv2_channels));
    write_pod(out, static_cast<int32_t>(spec.cnn.kernel));
    write_pod(out, static_cast<int32_t>(spec.cnn.dense));
    auto theta = model.flat_params();
    write_pod(out, static_cast<uint64_t>(theta.size()));
    out.write(reinterpret_cast<const char*>(theta.data()),
              static_cast<std::streamsize>(theta.size() * sizeof(double)));
    if (!out) fail(Status::IoError, "model checkpoint write failed: " + path);
}

TaskModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Status::IoError, "cannot open model checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kModelMagic, 8) != 0)
        fail(Status::IoError, "bad model checkpoint magic: " + path);
    uint32_t version = 0;
    read_pod(in, version, path);
    if (version != kModelVersion)
        fail(Status::IoError, "unsupported model checkpoint version " + std::to_string(version) + ": " + path);
    ModelSpec spec;
    uint8_t kind = 0;
    read_pod(in, kind, path);
    spec.kind = kind == 0 ? ModelSpec::Kind::Mlp : ModelSpec::Kind::Cnn;
    uint32_t ishape = 0;
    read_pod(in, ishape, path);
    spec.input_shape.clear();
    for (uint32_t i = 0; i < ishape; ++i) {
        int32_t d = 0;
        read_pod(in, d, path);
        spec.input_shape.push_back(d);
    }
    int32_t classes = 0;
    read_pod(in, classes, path);
    spec.classes = classes;
    uint32_t hidden = 0;
    read_pod(in, hidden, path);
    spec.hidden.clear();
    for (uint32_t i = 0; i < hidden; ++i) {
        int32_t d = 0;
        read_pod(in, d, path);
        spec.hidden.push_back(d);
    }
    int32_t c1 = 0, c2 = 0, k = 0, dense = 0;
    read_pod(in, c1, path);
    read_pod(in, c2, path);
    read_pod(in, k, path);
    read_pod(in, dense, path);
    spec.cnn = {c1, c2, k, dense};
    uint64_t count = 0;
    read_pod(in, count, path);
    TaskModel model = TaskModel::make(spec, 0);
    if (count != model.param_count())
        fail(Status::IoError, "model checkpoint parameter count mismatch: " + path);
    std::vector<double> theta(count);
    in.read(reinterpret_cast<char*>(theta.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) fail(Status::IoError, "model checkpoint truncated: " + path);
    model.set_flat_params(theta);
    return model;
}

}  // namespace gradal::models
