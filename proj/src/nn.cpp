#include "fedpoison/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fedpoison {

namespace {

constexpr char kCheckpointMagic[8] = {'B', 'A', 'U', '1', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void check_batch(const Bau1Params& params, const Matrix& batch, ForwardMode mode) {
    if (batch.cols() != params.feature_size()) {
        throw std::invalid_argument("batch has " + std::to_string(batch.cols()) +
                                    " features, model expects " +
                                    std::to_string(params.feature_size()));
    }
    if (batch.rows() == 0) {
        throw std::invalid_argument("empty batch");
    }
    if (mode == ForwardMode::kTrain && batch.rows() < 2) {
        throw std::invalid_argument("train-mode batch norm needs at least 2 rows");
    }
}

struct BlockCache {
    Matrix z;     // dense pre-activation
    Matrix xhat;  // normalized pre-activation
    Matrix out;   // post relu/dropout, input to the next layer
    Vector mean;
    Vector var;
    Vector invstd;
    Matrix gate;  // d(out)/d(bn output)
};

struct ForwardCache {
    BlockCache b1;
    BlockCache b2;
    Matrix logits;
    Matrix logprobs;
};

Matrix dense_forward(const DenseLayer& layer, const Matrix& input) {
    return (input * layer.weights.transpose()).rowwise() + layer.bias.transpose();
}

/// Batch norm, ReLU, and inverted dropout for one hidden block.
void block_forward(const DenseLayer& dense, const BatchNormState& bn, const Matrix& input,
                   ForwardMode mode, Rng* rng, double dropout_p, BlockCache& cache) {
    cache.z = dense_forward(dense, input);
    const Index rows = cache.z.rows();
    const Index cols = cache.z.cols();

    if (mode == ForwardMode::kTrain) {
        cache.mean = cache.z.colwise().mean().transpose();
        Matrix centered = cache.z.rowwise() - cache.mean.transpose();
        cache.var = centered.array().square().colwise().mean().transpose();
        cache.invstd = (cache.var.array() + bn.eps).rsqrt().matrix();
        cache.xhat =
            (centered.array().rowwise() * cache.invstd.transpose().array()).matrix();
    } else {
        cache.mean = bn.running_mean;
        cache.var = bn.running_var;
        cache.invstd = (cache.var.array() + bn.eps).rsqrt().matrix();
        Matrix centered = cache.z.rowwise() - cache.mean.transpose();
        cache.xhat =
            (centered.array().rowwise() * cache.invstd.transpose().array()).matrix();
    }
    Matrix bn_out =
        (cache.xhat.array().rowwise() * bn.gamma.transpose().array()).matrix().rowwise() +
        bn.beta.transpose();

    const bool drop = mode == ForwardMode::kTrain && dropout_p > 0.0;
    const double keep_scale = drop ? 1.0 / (1.0 - dropout_p) : 1.0;
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    cache.gate.resize(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) {
            double g = bn_out(i, j) > 0.0 ? 1.0 : 0.0;
            if (drop) {
                g *= uniform(*rng) < dropout_p ? 0.0 : keep_scale;
            }
            cache.gate(i, j) = g;
        }
    }
    cache.out = bn_out.cwiseProduct(cache.gate);
}

Matrix log_softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
        double max = logits.row(i).maxCoeff();
        double lse = max + std::log((logits.row(i).array() - max).exp().sum());
        for (Index c = 0; c < logits.cols(); ++c) {
            out(i, c) = logits(i, c) - lse;
        }
    }
    return out;
}

void forward_core(const Bau1Params& params, const Matrix& batch, ForwardMode mode, Rng* rng,
                  double dropout_p, ForwardCache& cache) {
    check_batch(params, batch, mode);
    if (dropout_p < 0.0 || dropout_p >= 1.0) {
        throw std::invalid_argument("dropout_p must lie in [0, 1)");
    }
    if (mode == ForwardMode::kTrain && dropout_p > 0.0 && rng == nullptr) {
        throw std::invalid_argument("train-mode dropout needs an rng");
    }
    block_forward(params.layer1, params.bn1, batch, mode, rng, dropout_p, cache.b1);
    block_forward(params.layer2, params.bn2, cache.b1.out, mode, rng, dropout_p, cache.b2);
    cache.logits = dense_forward(params.layer3, cache.b2.out);
    cache.logprobs = log_softmax(cache.logits);
}

void check_labels(const Matrix& logprobs, std::span<const int> labels) {
    if (static_cast<Index>(labels.size()) != logprobs.rows()) {
        throw std::invalid_argument("label count does not match batch rows");
    }
    for (int label : labels) {
        if (label != 0 && label != 1) {
            throw std::invalid_argument("labels must be 0 or 1, got " + std::to_string(label));
        }
    }
}

/// Gradient through one hidden block. `dout` is the loss gradient at the
/// block output; returns the gradient at the block input.
Matrix block_backward(const DenseLayer& dense, const BatchNormState& bn,
                      const Matrix& input, const BlockCache& cache, ForwardMode mode,
                      const Matrix& dout, DenseGrads& dense_grads, BnGrads& bn_grads) {
    const double rows = static_cast<double>(cache.z.rows());
    Matrix dbn = dout.cwiseProduct(cache.gate);

    bn_grads.gamma = dbn.cwiseProduct(cache.xhat).colwise().sum().transpose();
    bn_grads.beta = dbn.colwise().sum().transpose();

    Matrix dxhat = (dbn.array().rowwise() * bn.gamma.transpose().array()).matrix();
    Matrix dz;
    if (mode == ForwardMode::kTrain) {
        Vector sum_dxhat = dxhat.colwise().sum().transpose();
        Vector sum_dxhat_xhat = dxhat.cwiseProduct(cache.xhat).colwise().sum().transpose();
        dz = (dxhat * rows).rowwise() - sum_dxhat.transpose();
        dz -= (cache.xhat.array().rowwise() * sum_dxhat_xhat.transpose().array()).matrix();
        dz = (dz.array().rowwise() * (cache.invstd.transpose().array() / rows)).matrix();
    } else {
        dz = (dxhat.array().rowwise() * cache.invstd.transpose().array()).matrix();
    }

    dense_grads.weights = dz.transpose() * input;
    dense_grads.bias = dz.colwise().sum().transpose();
    return dz * dense.weights;
}

double nll(const Matrix& logprobs, std::span<const int> labels) {
    double total = 0.0;
    for (Index i = 0; i < logprobs.rows(); ++i) {
        total -= logprobs(i, labels[static_cast<std::size_t>(i)]);
    }
    return total / static_cast<double>(logprobs.rows());
}

void sgd_tensor(Matrix& param, const Matrix& grad, Matrix& velocity, double lr,
                double momentum) {
    velocity = momentum * velocity + grad;
    param -= lr * velocity;
}

void sgd_tensor(Vector& param, const Vector& grad, Vector& velocity, double lr,
                double momentum) {
    velocity = momentum * velocity + grad;
    param -= lr * velocity;
}

void write_bytes(std::ofstream& file, const void* data, std::size_t size) {
    file.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

void write_matrix(std::ofstream& file, const Matrix& m) {
    std::int64_t rows = m.rows(), cols = m.cols();
    write_bytes(file, &rows, sizeof rows);
    write_bytes(file, &cols, sizeof cols);
    write_bytes(file, m.data(), sizeof(double) * static_cast<std::size_t>(rows * cols));
}

void write_vector(std::ofstream& file, const Vector& v) {
    std::int64_t size = v.size();
    write_bytes(file, &size, sizeof size);
    write_bytes(file, v.data(), sizeof(double) * static_cast<std::size_t>(size));
}

void read_bytes(std::ifstream& file, void* data, std::size_t size) {
    if (!file.read(static_cast<char*>(data), static_cast<std::streamsize>(size))) {
        throw std::runtime_error("checkpoint truncated");
    }
}

Matrix read_matrix(std::ifstream& file) {
    std::int64_t rows = 0, cols = 0;
    read_bytes(file, &rows, sizeof rows);
    read_bytes(file, &cols, sizeof cols);
    if (rows < 0 || cols < 0 || rows * cols > (1LL << 28)) {
        throw std::runtime_error("checkpoint has implausible tensor shape");
    }
    Matrix m(rows, cols);
    read_bytes(file, m.data(), sizeof(double) * static_cast<std::size_t>(rows * cols));
    return m;
}

Vector read_vector(std::ifstream& file) {
    std::int64_t size = 0;
    read_bytes(file, &size, sizeof size);
    if (size < 0 || size > (1LL << 28)) {
        throw std::runtime_error("checkpoint has implausible tensor shape");
    }
    Vector v(size);
    read_bytes(file, v.data(), sizeof(double) * static_cast<std::size_t>(size));
    return v;
}

double eval_loss(const Bau1Params& params, const Dataset& shard) {
    constexpr Index kChunk = 4096;
    double total = 0.0;
    for (Index start = 0; start < shard.rows(); start += kChunk) {
        Index size = std::min(kChunk, shard.rows() - start);
        Matrix lp = forward(params, shard.X.middleRows(start, size), ForwardMode::kEval);
        std::span<const int> labels(shard.y.data() + start, static_cast<std::size_t>(size));
        total += nll(lp, labels) * static_cast<double>(size);
    }
    return total / static_cast<double>(shard.rows());
}

}  // namespace

Bau1Params init_params(Index feature_size, std::uint64_t seed) {
    if (feature_size < 1) {
        throw std::invalid_argument("feature_size must be positive");
    }
    Rng rng(derive_seed(seed, SeedStream::kInit));

    auto he_dense = [&rng](Index out, Index in) {
        DenseLayer layer;
        layer.weights.resize(out, in);
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in)));
        for (Index j = 0; j < in; ++j) {
            for (Index i = 0; i < out; ++i) {
                layer.weights(i, j) = normal(rng);
            }
        }
        layer.bias = Vector::Zero(out);
        return layer;
    };
    auto identity_bn = [](Index size) {
        BatchNormState bn;
        bn.gamma = Vector::Ones(size);
        bn.beta = Vector::Zero(size);
        bn.running_mean = Vector::Zero(size);
        bn.running_var = Vector::Ones(size);
        return bn;
    };

    Bau1Params params;
    params.layer1 = he_dense(kHidden1, feature_size);
    params.bn1 = identity_bn(kHidden1);
    params.layer2 = he_dense(kHidden2, kHidden1);
    params.bn2 = identity_bn(kHidden2);
    params.layer3 = he_dense(kClasses, kHidden2);
    return params;
}

Bau1Velocity zero_velocity(const Bau1Params& params) {
    Bau1Velocity v;
    v.layer1.weights = Matrix::Zero(params.layer1.weights.rows(), params.layer1.weights.cols());
    v.layer1.bias = Vector::Zero(params.layer1.bias.size());
    v.bn1.gamma = Vector::Zero(params.bn1.gamma.size());
    v.bn1.beta = Vector::Zero(params.bn1.beta.size());
    v.layer2.weights = Matrix::Zero(params.layer2.weights.rows(), params.layer2.weights.cols());
    v.layer2.bias = Vector::Zero(params.layer2.bias.size());
    v.bn2.gamma = Vector::Zero(params.bn2.gamma.size());
    v.bn2.beta = Vector::Zero(params.bn2.beta.size());
    v.layer3.weights = Matrix::Zero(params.layer3.weights.rows(), params.layer3.weights.cols());
    v.layer3.bias = Vector::Zero(params.layer3.bias.size());
    return v;
}

Matrix forward(const Bau1Params& params, const Matrix& batch, ForwardMode mode, Rng* rng,
               double dropout_p) {
    ForwardCache cache;
    forward_core(params, batch, mode, rng, dropout_p, cache);
    return std::move(cache.logprobs);
}

double loss(const Matrix& logprobs, std::span<const int> labels) {
    if (logprobs.cols() != kClasses) {
        throw std::invalid_argument("logprobs must have two columns");
    }
    if (logprobs.rows() == 0) {
        throw std::invalid_argument("loss over an empty batch");
    }
    check_labels(logprobs, labels);
    return nll(logprobs, labels);
}

BackpropResult backprop(const Bau1Params& params, const Matrix& batch,
                        std::span<const int> labels, ForwardMode mode, Rng* rng,
                        double dropout_p) {
    ForwardCache cache;
    forward_core(params, batch, mode, rng, dropout_p, cache);
    check_labels(cache.logprobs, labels);

    const Index rows = batch.rows();
    Matrix dlogits = cache.logprobs.array().exp().matrix();
    for (Index i = 0; i < rows; ++i) {
        dlogits(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    }
    dlogits /= static_cast<double>(rows);

    BackpropResult result;
    result.grads.layer3.weights = dlogits.transpose() * cache.b2.out;
    result.grads.layer3.bias = dlogits.colwise().sum().transpose();
    Matrix dh2 = dlogits * params.layer3.weights;

    Matrix dh1 = block_backward(params.layer2, params.bn2, cache.b1.out, cache.b2, mode, dh2,
                                result.grads.layer2, result.grads.bn2);
    block_backward(params.layer1, params.bn1, batch, cache.b1, mode, dh1,
                   result.grads.layer1, result.grads.bn1);

    result.loss = nll(cache.logprobs, labels);
    result.logprobs = std::move(cache.logprobs);
    result.bn1_stats = BatchStats{std::move(cache.b1.mean), std::move(cache.b1.var)};
    result.bn2_stats = BatchStats{std::move(cache.b2.mean), std::move(cache.b2.var)};
    result.gate1 = std::move(cache.b1.gate);
    result.gate2 = std::move(cache.b2.gate);
    return result;
}

Bau1Grads grad(const Bau1Params& params, const Matrix& batch, std::span<const int> labels,
               ForwardMode mode, Rng* rng, double dropout_p) {
    return backprop(params, batch, labels, mode, rng, dropout_p).grads;
}

void sgd_step(Bau1Params& params, const Bau1Grads& grads, Bau1Velocity& velocity, double lr,
              double momentum) {
    if (momentum < 0.0 || momentum >= 1.0) {
        throw std::invalid_argument("momentum must lie in [0, 1)");
    }
    sgd_tensor(params.layer1.weights, grads.layer1.weights, velocity.layer1.weights, lr, momentum);
    sgd_tensor(params.layer1.bias, grads.layer1.bias, velocity.layer1.bias, lr, momentum);
    sgd_tensor(params.bn1.gamma, grads.bn1.gamma, velocity.bn1.gamma, lr, momentum);
    sgd_tensor(params.bn1.beta, grads.bn1.beta, velocity.bn1.beta, lr, momentum);
    sgd_tensor(params.layer2.weights, grads.layer2.weights, velocity.layer2.weights, lr, momentum);
    sgd_tensor(params.layer2.bias, grads.layer2.bias, velocity.layer2.bias, lr, momentum);
    sgd_tensor(params.bn2.gamma, grads.bn2.gamma, velocity.bn2.gamma, lr, momentum);
    sgd_tensor(params.bn2.beta, grads.bn2.beta, velocity.bn2.beta, lr, momentum);
    sgd_tensor(params.layer3.weights, grads.layer3.weights, velocity.layer3.weights, lr, momentum);
    sgd_tensor(params.layer3.bias, grads.layer3.bias, velocity.layer3.bias, lr, momentum);
}

LocalFit train_local(const Bau1Params& start, const Dataset& shard, const TrainConfig& cfg) {
    if (shard.rows() == 0) {
        throw std::invalid_argument("train_local: empty shard");
    }
    if (shard.cols() != start.feature_size()) {
        throw std::invalid_argument("train_local: shard width does not match model");
    }
    if (cfg.batch_size < 2) {
        throw std::invalid_argument("train_local: batch_size must be at least 2");
    }
    if (cfg.epochs < 0) {
        throw std::invalid_argument("train_local: negative epochs");
    }
    if (cfg.learning_rate <= 0.0) {
        throw std::invalid_argument("train_local: learning rate must be positive");
    }
    for (int label : shard.y) {
        if (label != 0 && label != 1) {
            throw std::invalid_argument("train_local: labels must be 0 or 1");
        }
    }

    if (cfg.epochs == 0) {
        return LocalFit{start, eval_loss(start, shard)};
    }

    const Index n = shard.rows();
    Bau1Params params = start;
    Bau1Velocity velocity = zero_velocity(params);
    Rng rng(cfg.seed);
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});

    double last_epoch_loss = 0.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        long batches = 0;
        for (Index begin = 0; begin < n; begin += cfg.batch_size) {
            const Index size = std::min<Index>(cfg.batch_size, n - begin);
            if (size < 2) {
                break;  // a single leftover row cannot be batch-normalized
            }
            Matrix bx(size, shard.cols());
            std::vector<int> by(static_cast<std::size_t>(size));
            for (Index k = 0; k < size; ++k) {
                bx.row(k) = shard.X.row(order[static_cast<std::size_t>(begin + k)]);
                by[static_cast<std::size_t>(k)] =
                    shard.y[static_cast<std::size_t>(order[static_cast<std::size_t>(begin + k)])];
            }

            auto step = backprop(params, bx, by, ForwardMode::kTrain, &rng, cfg.dropout_p);
            const double m = params.bn1.stat_momentum;
            params.bn1.running_mean =
                (1.0 - m) * params.bn1.running_mean + m * step.bn1_stats.mean;
            params.bn1.running_var = (1.0 - m) * params.bn1.running_var + m * step.bn1_stats.var;
            const double m2 = params.bn2.stat_momentum;
            params.bn2.running_mean =
                (1.0 - m2) * params.bn2.running_mean + m2 * step.bn2_stats.mean;
            params.bn2.running_var =
                (1.0 - m2) * params.bn2.running_var + m2 * step.bn2_stats.var;

            sgd_step(params, step.grads, velocity, cfg.learning_rate, cfg.sgd_momentum);
            loss_sum += step.loss;
            ++batches;
        }
        if (batches == 0) {
            throw std::invalid_argument("train_local: no batch had at least 2 rows");
        }
        last_epoch_loss = loss_sum / static_cast<double>(batches);
    }
    return LocalFit{std::move(params), last_epoch_loss};
}

std::vector<int> predict(const Bau1Params& params, const Matrix& X) {
    constexpr Index kChunk = 4096;
    std::vector<int> labels;
    labels.reserve(static_cast<std::size_t>(X.rows()));
    for (Index start = 0; start < X.rows(); start += kChunk) {
        Index size = std::min(kChunk, X.rows() - start);
        Matrix lp = forward(params, X.middleRows(start, size), ForwardMode::kEval);
        for (Index i = 0; i < size; ++i) {
            labels.push_back(lp(i, 1) > lp(i, 0) ? 1 : 0);
        }
    }
    return labels;
}

double evaluate(const Bau1Params& params, const Dataset& ds) {
    if (ds.rows() == 0) {
        throw std::invalid_argument("evaluate: empty dataset");
    }
    auto predicted = predict(params, ds.X);
    long correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        correct += predicted[i] == ds.y[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.rows());
}

void save_params(const Bau1Params& params, const std::filesystem::path& path) {
    std::ofstream file(path, std::ios::binary);
    if (!file) {
        throw std::runtime_error("cannot write " + path.string());
    }
    write_bytes(file, kCheckpointMagic, sizeof kCheckpointMagic);
    write_bytes(file, &kCheckpointVersion, sizeof kCheckpointVersion);

    auto write_bn = [&file](const BatchNormState& bn) {
        write_vector(file, bn.gamma);
        write_vector(file, bn.beta);
        write_vector(file, bn.running_mean);
        write_vector(file, bn.running_var);
        write_bytes(file, &bn.eps, sizeof bn.eps);
        write_bytes(file, &bn.stat_momentum, sizeof bn.stat_momentum);
    };
    write_matrix(file, params.layer1.weights);
    write_vector(file, params.layer1.bias);
    write_bn(params.bn1);
    write_matrix(file, params.layer2.weights);
    write_vector(file, params.layer2.bias);
    write_bn(params.bn2);
    write_matrix(file, params.layer3.weights);
    write_vector(file, params.layer3.bias);
    if (!file) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

Bau1Params load_params(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw std::runtime_error("cannot open checkpoint " + path.string());
    }
    char magic[8];
    read_bytes(file, magic, sizeof magic);
    if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw std::runtime_error(path.string() + " is not a model checkpoint");
    }
    std::uint32_t version = 0;
    read_bytes(file, &version, sizeof version);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }

    auto read_bn = [&file]() {
        BatchNormState bn;
        bn.gamma = read_vector(file);
        bn.beta = read_vector(file);
        bn.running_mean = read_vector(file);
        bn.running_var = read_vector(file);
        read_bytes(file, &bn.eps, sizeof bn.eps);
        read_bytes(file, &bn.stat_momentum, sizeof bn.stat_momentum);
        return bn;
    };
    Bau1Params params;
    params.layer1.weights = read_matrix(file);
    params.layer1.bias = read_vector(file);
    params.bn1 = read_bn();
    params.layer2.weights = read_matrix(file);
    params.layer2.bias = read_vector(file);
    params.bn2 = read_bn();
    params.layer3.weights = read_matrix(file);
    params.layer3.bias = read_vector(file);
    return params;
}

}  // namespace fedpoison
