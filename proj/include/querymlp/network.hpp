#pragma once

#include "querymlp/features.hpp"
#include "querymlp/types.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace querymlp::network {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

inline constexpr int kInputDim = 6;
inline constexpr int kHiddenDim = 128;
inline constexpr int kOutputDim = 2;
inline constexpr int kHiddenLayers = 3;

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kDefaultDropout = 0.2;
inline constexpr double kSmoothL1Beta = 1.0;

/// Affine → BatchNorm → ReLU → Dropout block.
struct HiddenLayer {
    Matrix weight;        // fan_in × 128
    RowVector bias;       // 128
    RowVector bn_gain;    // γ
    RowVector bn_shift;   // β
    RowVector running_mean;
    RowVector running_var;
};

/// All tensors of the 6→128→128→128→2 QueryMLP.
struct MlpParams {
    std::array<HiddenLayer, kHiddenLayers> hidden;
    Matrix out_weight; // 128 × 2
    RowVector out_bias; // 2

    /// Bumped whenever a learnable tensor is modified through the optimizer.
    /// Forward caches record it so a stale cache can be detected.
    std::uint64_t version = 0;
    std::uint64_t init_seed = 0;
};

/// Gradients for the learnable tensors, same shapes as MlpParams.
struct MlpGrads {
    struct Layer {
        Matrix weight;
        RowVector bias;
        RowVector bn_gain;
        RowVector bn_shift;
    };
    std::array<Layer, kHiddenLayers> hidden;
    Matrix out_weight;
    RowVector out_bias;
};

/// Named view over one contiguous tensor.
struct TensorView {
    std::string name;
    std::span<double> data;
    int rows = 0;
    int cols = 0;
    bool learnable = true;
    bool decayed = false; // receives decoupled weight decay
};

struct ConstTensorView {
    std::string name;
    std::span<const double> data;
    int rows = 0;
    int cols = 0;
    bool learnable = true;
    bool decayed = false;
};

/// Every tensor in a fixed order; running statistics are included with
/// learnable = false.
std::vector<TensorView> tensors(MlpParams& params);
std::vector<ConstTensorView> tensors(const MlpParams& params);

/// Learnable tensors only, in the order they appear in tensors(params).
std::vector<std::span<double>> grad_tensors(MlpGrads& grads);

/// Zero-filled parameters of the correct shapes.
MlpParams zero_params();
MlpGrads zero_grads();

/// Weights ~ N(0, 2 / fan_in), biases 0, γ = 1, β = 0, running mean 0,
/// running variance 1. Deterministic in `seed`.
MlpParams init_params(std::uint64_t seed);

/// Per-hidden-layer intermediates needed for exact backprop.
struct LayerCache {
    Matrix input;      // activations entering the affine map
    Matrix pre_norm;   // affine output
    RowVector batch_mean;
    RowVector batch_var; // biased
    RowVector inv_std;
    Matrix normalized; // x̂
    Matrix pre_relu;   // γ·x̂ + β
    Matrix dropout_mask; // entries 0 or 1/(1-p)
    Matrix output;     // after dropout
};

struct ForwardCache {
    std::array<LayerCache, kHiddenLayers> layers;
    Matrix logits;
    Matrix predictions;
    std::uint64_t params_version = 0;
    double dropout_p = 0.0;
};

/// Train-mode forward: batch statistics, running-stat update, dropout.
/// Requires at least two rows. Mutates only the running statistics.
ForwardCache forward_train(MlpParams& params, const Matrix& batch, double dropout_p,
                           std::uint64_t dropout_seed);

/// Eval-mode forward using running statistics; pure.
Matrix forward_eval(const MlpParams& params, const Matrix& batch);

/// Mean SmoothL1 (β = 1) over all elements.
double smooth_l1(const Matrix& pred, const Matrix& target);

/// Gradients of smooth_l1(cache.predictions, target) w.r.t. every learnable.
MlpGrads backward(const MlpParams& params, const ForwardCache& cache, const Matrix& target);

/// Stacks feature vectors into an N × 6 batch.
Matrix to_batch(std::span<const features::FeatureVector> rows);

WaterlinePoint predict_one(const MlpParams& params, const features::FeatureVector& x);

/// Checkpoint container (JSON, versioned). Lossless for 64-bit values.
struct CheckpointMeta {
    std::uint64_t init_seed = 0;
    std::uint64_t train_seed = 0;
    int best_epoch = 0;
};

void save_checkpoint(const std::string& path, const MlpParams& params, const CheckpointMeta& meta);
MlpParams load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

} // namespace querymlp::network
