#include "querymlp/network.hpp"

#include "querymlp/error.hpp"
#include "querymlp/random.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

namespace querymlp::network {

namespace {

constexpr int fan_in(int layer) { return layer == 0 ? kInputDim : kHiddenDim; }

// Largest double below 1 and smallest normal above 0, so the sigmoid output
// stays inside the open unit interval even for saturated logits.
constexpr double kSigmoidLow = std::numeric_limits<double>::min();
constexpr double kSigmoidHigh = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;

double sigmoid(double x) {
    const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    return std::clamp(s, kSigmoidLow, kSigmoidHigh);
}

void check_finite(const Matrix& batch) {
    if (!batch.allFinite()) {
        fail(ErrorKind::Numeric, "forward: non-finite input");
    }
}

void check_shape(const Matrix& batch) {
    if (batch.rows() == 0) {
        fail(ErrorKind::InvalidBatch, "forward: empty batch");
    }
    if (batch.cols() != kInputDim) {
        fail(ErrorKind::InvalidInput, "forward: expected " + std::to_string(kInputDim) +
                                          " input columns, got " + std::to_string(batch.cols()));
    }
}

template <typename Derived>
std::span<double> span_of(Eigen::PlainObjectBase<Derived>& m) {
    return {m.data(), static_cast<std::size_t>(m.size())};
}

template <typename Derived>
std::span<const double> span_of(const Eigen::PlainObjectBase<Derived>& m) {
    return {m.data(), static_cast<std::size_t>(m.size())};
}

template <typename View, typename Params>
std::vector<View> collect(Params& params) {
    std::vector<View> out;
    for (int l = 0; l < kHiddenLayers; ++l) {
        auto& layer = params.hidden[l];
        const std::string prefix = "hidden" + std::to_string(l + 1) + ".";
        out.push_back({prefix + "weight", span_of(layer.weight), static_cast<int>(layer.weight.rows()),
                       static_cast<int>(layer.weight.cols()), true, true});
        out.push_back({prefix + "bias", span_of(layer.bias), 1, kHiddenDim, true, false});
        out.push_back({prefix + "bn_gain", span_of(layer.bn_gain), 1, kHiddenDim, true, false});
        out.push_back({prefix + "bn_shift", span_of(layer.bn_shift), 1, kHiddenDim, true, false});
        out.push_back({prefix + "running_mean", span_of(layer.running_mean), 1, kHiddenDim, false, false});
        out.push_back({prefix + "running_var", span_of(layer.running_var), 1, kHiddenDim, false, false});
    }
    out.push_back({"output.weight", span_of(params.out_weight), kHiddenDim, kOutputDim, true, true});
    out.push_back({"output.bias", span_of(params.out_bias), 1, kOutputDim, true, false});
    return out;
}

} // namespace

std::vector<TensorView> tensors(MlpParams& params) { return collect<TensorView>(params); }

std::vector<ConstTensorView> tensors(const MlpParams& params) {
    return collect<ConstTensorView>(params);
}

std::vector<std::span<double>> grad_tensors(MlpGrads& grads) {
    std::vector<std::span<double>> out;
    for (auto& layer : grads.hidden) {
        out.push_back(span_of(layer.weight));
        out.push_back(span_of(layer.bias));
        out.push_back(span_of(layer.bn_gain));
        out.push_back(span_of(layer.bn_shift));
    }
    out.push_back(span_of(grads.out_weight));
    out.push_back(span_of(grads.out_bias));
    return out;
}

MlpParams zero_params() {
    MlpParams p;
    for (int l = 0; l < kHiddenLayers; ++l) {
        auto& layer = p.hidden[l];
        layer.weight = Matrix::Zero(fan_in(l), kHiddenDim);
        layer.bias = RowVector::Zero(kHiddenDim);
        layer.bn_gain = RowVector::Zero(kHiddenDim);
        layer.bn_shift = RowVector::Zero(kHiddenDim);
        layer.running_mean = RowVector::Zero(kHiddenDim);
        layer.running_var = RowVector::Zero(kHiddenDim);
    }
    p.out_weight = Matrix::Zero(kHiddenDim, kOutputDim);
    p.out_bias = RowVector::Zero(kOutputDim);
    return p;
}

MlpGrads zero_grads() {
    MlpGrads g;
    for (int l = 0; l < kHiddenLayers; ++l) {
        auto& layer = g.hidden[l];
        layer.weight = Matrix::Zero(fan_in(l), kHiddenDim);
        layer.bias = RowVector::Zero(kHiddenDim);
        layer.bn_gain = RowVector::Zero(kHiddenDim);
        layer.bn_shift = RowVector::Zero(kHiddenDim);
    }
    g.out_weight = Matrix::Zero(kHiddenDim, kOutputDim);
    g.out_bias = RowVector::Zero(kOutputDim);
    return g;
}

MlpParams init_params(std::uint64_t seed) {
    MlpParams p = zero_params();
    p.init_seed = seed;
    Rng rng(seed);
    const auto fill = [&rng](Matrix& w, int fan) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan));
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            w.data()[i] = dist(rng);
        }
    };
    for (int l = 0; l < kHiddenLayers; ++l) {
        auto& layer = p.hidden[l];
        fill(layer.weight, fan_in(l));
        layer.bn_gain.setOnes();
        layer.running_var.setOnes();
    }
    fill(p.out_weight, kHiddenDim);
    return p;
}

ForwardCache forward_train(MlpParams& params, const Matrix& batch, double dropout_p,
                           std::uint64_t dropout_seed) {
    check_shape(batch);
    if (batch.rows() < 2) {
        fail(ErrorKind::InvalidBatch, "forward: train mode needs a batch of at least 2 rows");
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
        fail(ErrorKind::InvalidInput, "forward: dropout probability must lie in [0, 1)");
    }
    check_finite(batch);

    const auto n = static_cast<double>(batch.rows());
    ForwardCache cache;
    cache.params_version = params.version;
    cache.dropout_p = dropout_p;

    Rng rng(dropout_seed);
    std::bernoulli_distribution keep(1.0 - dropout_p);
    const double keep_scale = 1.0 / (1.0 - dropout_p);

    const Matrix* input = &batch;
    for (int l = 0; l < kHiddenLayers; ++l) {
        auto& layer = params.hidden[l];
        auto& c = cache.layers[l];
        c.input = *input;
        c.pre_norm = (c.input * layer.weight).rowwise() + layer.bias;
        c.batch_mean = c.pre_norm.colwise().mean();
        const Matrix centered = c.pre_norm.rowwise() - c.batch_mean;
        c.batch_var = centered.array().square().colwise().sum() / n;
        c.inv_std = (c.batch_var.array() + kBatchNormEpsilon).rsqrt();
        c.normalized = centered.array().rowwise() * c.inv_std.array();
        c.pre_relu = (c.normalized.array().rowwise() * layer.bn_gain.array()).rowwise() +
                     layer.bn_shift.array();

        if (dropout_p > 0.0) {
            c.dropout_mask.resize(c.pre_relu.rows(), c.pre_relu.cols());
            for (Eigen::Index i = 0; i < c.dropout_mask.size(); ++i) {
                c.dropout_mask.data()[i] = keep(rng) ? keep_scale : 0.0;
            }
        } else {
            c.dropout_mask = Matrix::Ones(c.pre_relu.rows(), c.pre_relu.cols());
        }
        c.output = c.pre_relu.cwiseMax(0.0).cwiseProduct(c.dropout_mask);

        const double m = kBatchNormMomentum;
        layer.running_mean = (1.0 - m) * layer.running_mean + m * c.batch_mean;
        layer.running_var = (1.0 - m) * layer.running_var + m * (c.batch_var * (n / (n - 1.0)));
        input = &c.output;
    }
    cache.logits = ((*input) * params.out_weight).rowwise() + params.out_bias;
    cache.predictions = cache.logits.unaryExpr([](double x) { return sigmoid(x); });
    return cache;
}

Matrix forward_eval(const MlpParams& params, const Matrix& batch) {
    check_shape(batch);
    check_finite(batch);
    Matrix act = batch;
    for (const auto& layer : params.hidden) {
        const RowVector inv_std = (layer.running_var.array() + kBatchNormEpsilon).rsqrt();
        const RowVector scale = layer.bn_gain.cwiseProduct(inv_std);
        Matrix z = (act * layer.weight).rowwise() + layer.bias;
        z = ((z.rowwise() - layer.running_mean).array().rowwise() * scale.array()).rowwise() +
            layer.bn_shift.array();
        act = z.cwiseMax(0.0);
    }
    Matrix logits = (act * params.out_weight).rowwise() + params.out_bias;
    return logits.unaryExpr([](double x) { return sigmoid(x); });
}

double smooth_l1(const Matrix& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.size() == 0) {
        fail(ErrorKind::InvalidInput, "smooth_l1: shape mismatch");
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        const double x = pred.data()[i] - target.data()[i];
        const double ax = std::abs(x);
        total += ax < kSmoothL1Beta ? 0.5 * x * x / kSmoothL1Beta : ax - 0.5 * kSmoothL1Beta;
    }
    return total / static_cast<double>(pred.size());
}

MlpGrads backward(const MlpParams& params, const ForwardCache& cache, const Matrix& target) {
    if (cache.params_version != params.version) {
        fail(ErrorKind::InvalidState, "backward: cache was produced by different parameters");
    }
    if (cache.predictions.rows() != target.rows() || cache.predictions.cols() != target.cols()) {
        fail(ErrorKind::InvalidState, "backward: cache and target batch shapes differ");
    }
    const auto n = static_cast<double>(target.rows());
    const double count = static_cast<double>(target.size());

    MlpGrads g;
    const Matrix& p = cache.predictions;
    Matrix d_logits(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double x = p.data()[i] - target.data()[i];
        const double d_loss = std::abs(x) < kSmoothL1Beta ? x / kSmoothL1Beta : (x > 0.0 ? 1.0 : -1.0);
        d_logits.data()[i] = d_loss / count * p.data()[i] * (1.0 - p.data()[i]);
    }

    const Matrix& last = cache.layers[kHiddenLayers - 1].output;
    g.out_weight = last.transpose() * d_logits;
    g.out_bias = d_logits.colwise().sum();
    Matrix d_act = d_logits * params.out_weight.transpose();

    for (int l = kHiddenLayers - 1; l >= 0; --l) {
        const auto& layer = params.hidden[l];
        const auto& c = cache.layers[l];
        auto& gl = g.hidden[l];

        const Matrix d_pre_relu =
            (d_act.array() * c.dropout_mask.array() * (c.pre_relu.array() > 0.0).cast<double>()).matrix();
        gl.bn_gain = (d_pre_relu.array() * c.normalized.array()).colwise().sum();
        gl.bn_shift = d_pre_relu.colwise().sum();

        const Matrix d_norm = d_pre_relu.array().rowwise() * layer.bn_gain.array();
        const RowVector sum_d_norm = d_norm.colwise().sum();
        const RowVector sum_d_norm_xhat = (d_norm.array() * c.normalized.array()).colwise().sum();
        // dz = inv_std / n · (n·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂))
        const Matrix d_pre_norm =
            (((n * d_norm).rowwise() - sum_d_norm).array() -
             c.normalized.array().rowwise() * sum_d_norm_xhat.array())
                .rowwise() *
            (c.inv_std.array() / n);

        gl.weight = c.input.transpose() * d_pre_norm;
        gl.bias = d_pre_norm.colwise().sum();
        if (l > 0) {
            d_act = d_pre_norm * layer.weight.transpose();
        }
    }
    return g;
}

Matrix to_batch(std::span<const features::FeatureVector> rows) {
    Matrix batch(static_cast<Eigen::Index>(rows.size()), kInputDim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < kInputDim; ++j) {
            batch(static_cast<Eigen::Index>(i), j) = rows[i].values[j];
        }
    }
    return batch;
}

WaterlinePoint predict_one(const MlpParams& params, const features::FeatureVector& x) {
    const Matrix out = forward_eval(params, to_batch(std::span(&x, 1)));
    return {out(0, 0), out(0, 1)};
}

namespace {

constexpr const char* kCheckpointFormat = "querymlp-checkpoint";
constexpr int kCheckpointVersion = 1;

} // namespace

void save_checkpoint(const std::string& path, const MlpParams& params, const CheckpointMeta& meta) {
    nlohmann::json tensors_json = nlohmann::json::array();
    for (const auto& t : tensors(params)) {
        tensors_json.push_back({{"name", t.name},
                                {"shape", {t.rows, t.cols}},
                                {"data", std::vector<double>(t.data.begin(), t.data.end())}});
    }
    const nlohmann::json doc{{"format", kCheckpointFormat},
                             {"version", kCheckpointVersion},
                             {"architecture", {kInputDim, kHiddenDim, kHiddenDim, kHiddenDim, kOutputDim}},
                             {"init_seed", meta.init_seed},
                             {"train_seed", meta.train_seed},
                             {"best_epoch", meta.best_epoch},
                             {"tensors", tensors_json}};
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::Checkpoint, "cannot write checkpoint " + path);
    }
    out << doc.dump() << '\n';
}

MlpParams load_checkpoint(const std::string& path, CheckpointMeta* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::Checkpoint, "cannot open checkpoint " + path);
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Checkpoint, "checkpoint " + path + ": " + e.what());
    }
    MlpParams params = zero_params();
    try {
        if (doc.at("format") != kCheckpointFormat || doc.at("version") != kCheckpointVersion) {
            fail(ErrorKind::Checkpoint, "checkpoint " + path + ": unsupported format or version");
        }
        const auto& stored = doc.at("tensors");
        auto views = tensors(params);
        if (stored.size() != views.size()) {
            fail(ErrorKind::Checkpoint, "checkpoint " + path + ": expected " +
                                            std::to_string(views.size()) + " tensors");
        }
        for (std::size_t i = 0; i < views.size(); ++i) {
            const auto& t = stored[i];
            const auto shape = t.at("shape").get<std::vector<int>>();
            const auto data = t.at("data").get<std::vector<double>>();
            if (t.at("name") != views[i].name || shape.size() != 2 || shape[0] != views[i].rows ||
                shape[1] != views[i].cols || data.size() != views[i].data.size()) {
                fail(ErrorKind::Checkpoint,
                     "checkpoint " + path + ": tensor " + std::to_string(i) + " does not match " +
                         views[i].name + " [" + std::to_string(views[i].rows) + "x" +
                         std::to_string(views[i].cols) + "]");
            }
            std::copy(data.begin(), data.end(), views[i].data.begin());
        }
        params.init_seed = doc.at("init_seed").get<std::uint64_t>();
        if (meta != nullptr) {
            meta->init_seed = params.init_seed;
            meta->train_seed = doc.at("train_seed").get<std::uint64_t>();
            meta->best_epoch = doc.at("best_epoch").get<int>();
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Checkpoint, "checkpoint " + path + ": " + e.what());
    }
    for (const auto& layer : params.hidden) {
        if ((layer.running_var.array() < 0.0).any()) {
            fail(ErrorKind::Checkpoint, "checkpoint " + path + ": negative running variance");
        }
    }
    return params;
}

} // namespace querymlp::network
