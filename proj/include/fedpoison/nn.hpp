#pragma once

#include "fedpoison/dataset.hpp"
#include "fedpoison/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fedpoison {

inline constexpr Index kHidden1 = 2048;
inline constexpr Index kHidden2 = 1024;
inline constexpr Index kClasses = 2;

struct DenseLayer {
    Matrix weights;  // out x in
    Vector bias;     // out
};

struct BatchNormState {
    Vector gamma;
    Vector beta;
    Vector running_mean;
    Vector running_var;
    double eps = 1e-5;
    double stat_momentum = 0.1;
};

/// Fixed architecture: d -> 2048 -> 1024 -> 2, each hidden block being
/// dense, batch-norm, ReLU, dropout; the head is dense + log-softmax.
struct Bau1Params {
    DenseLayer layer1;
    BatchNormState bn1;
    DenseLayer layer2;
    BatchNormState bn2;
    DenseLayer layer3;

    Index feature_size() const { return layer1.weights.cols(); }
};

struct DenseGrads {
    Matrix weights;
    Vector bias;
};

struct BnGrads {
    Vector gamma;
    Vector beta;
};

struct Bau1Grads {
    DenseGrads layer1;
    BnGrads bn1;
    DenseGrads layer2;
    BnGrads bn2;
    DenseGrads layer3;
};

/// Momentum buffers mirror the gradient layout. Running statistics are
/// not SGD state and have no velocity.
using Bau1Velocity = Bau1Grads;

struct BatchStats {
    Vector mean;
    Vector var;  // biased (divide by batch size)
};

struct BackpropResult {
    Bau1Grads grads;
    double loss = 0.0;
    Matrix logprobs;
    BatchStats bn1_stats;  // train-mode batch statistics, for running-stat updates
    BatchStats bn2_stats;
    Matrix gate1;  // combined ReLU/dropout gates actually applied
    Matrix gate2;
};

enum class ForwardMode { kTrain, kEval };

struct TrainConfig {
    int epochs = 1;
    int batch_size = 1000;
    double learning_rate = 1e-3;
    double sgd_momentum = 0.9;
    double dropout_p = 0.5;
    std::uint64_t seed = 0;
};

struct LocalFit {
    Bau1Params params;
    double final_epoch_loss = 0.0;  // mean over the last epoch's batches
};

/// He-normal weights, zero biases, identity batch-norm affine.
Bau1Params init_params(Index feature_size, std::uint64_t seed);

Bau1Velocity zero_velocity(const Bau1Params& params);

/// Log-probabilities for a batch (rows x 2). Train mode normalizes with
/// batch statistics and applies inverted dropout from `rng`; eval mode
/// uses running statistics and no dropout. Train mode requires at least
/// two rows.
Matrix forward(const Bau1Params& params, const Matrix& batch, ForwardMode mode,
               Rng* rng = nullptr, double dropout_p = 0.0);

/// Mean negative log-likelihood of the true labels.
double loss(const Matrix& logprobs, std::span<const int> labels);

/// Forward plus analytic gradients of the mean cross-entropy, including
/// the batch-norm mean/variance paths.
BackpropResult backprop(const Bau1Params& params, const Matrix& batch,
                        std::span<const int> labels, ForwardMode mode,
                        Rng* rng = nullptr, double dropout_p = 0.0);

Bau1Grads grad(const Bau1Params& params, const Matrix& batch,
               std::span<const int> labels, ForwardMode mode,
               Rng* rng = nullptr, double dropout_p = 0.0);

/// Classical momentum: v <- m v + g; p <- p - lr v.
void sgd_step(Bau1Params& params, const Bau1Grads& grads, Bau1Velocity& velocity,
              double lr, double momentum);

/// Mini-batch SGD over the shard. Rows are reshuffled each epoch; a
/// short final batch is kept as long as it has at least two rows.
/// Running statistics update after every batch. epochs == 0 returns the
/// start params unchanged with the eval-mode loss.
LocalFit train_local(const Bau1Params& start, const Dataset& shard,
                     const TrainConfig& cfg);

/// Argmax labels in eval mode; ties break toward label 0.
std::vector<int> predict(const Bau1Params& params, const Matrix& X);

/// Eval-mode accuracy in [0, 1].
double evaluate(const Bau1Params& params, const Dataset& ds);

/// Binary little-endian checkpoint; load restores bit-identical params.
void save_params(const Bau1Params& params, const std::filesystem::path& path);
Bau1Params load_params(const std::filesystem::path& path);

}  // namespace fedpoison
