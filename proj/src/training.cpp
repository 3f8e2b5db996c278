#include "querymlp/training.hpp"

#include "querymlp/random.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>

namespace querymlp::training {

using network::Matrix;
using network::MlpGrads;
using network::MlpParams;

namespace {

constexpr Eigen::Index kEvalChunk = 4096;

void require(bool ok, const std::string& message) {
    if (!ok) {
        fail(ErrorKind::Config, "train config: " + message);
    }
}

Matrix targets_of(std::span<const Example> data, std::span<const std::size_t> index) {
    Matrix t(static_cast<Eigen::Index>(index.size()), network::kOutputDim);
    for (std::size_t i = 0; i < index.size(); ++i) {
        t(static_cast<Eigen::Index>(i), 0) = data[index[i]].target.c_x;
        t(static_cast<Eigen::Index>(i), 1) = data[index[i]].target.c_y_plus_half_h;
    }
    return t;
}

Matrix inputs_of(std::span<const Example> data, std::span<const std::size_t> index) {
    Matrix x(static_cast<Eigen::Index>(index.size()), network::kInputDim);
    for (std::size_t i = 0; i < index.size(); ++i) {
        for (int j = 0; j < network::kInputDim; ++j) {
            x(static_cast<Eigen::Index>(i), j) = data[index[i]].x.values[j];
        }
    }
    return x;
}

} // namespace

void TrainConfig::validate() const {
    require(lr > 0.0 && std::isfinite(lr), "lr must be > 0");
    require(weight_decay >= 0.0 && std::isfinite(weight_decay), "weight_decay must be >= 0");
    require(batch_size >= 2, "batch_size must be >= 2");
    require(max_epochs >= 1, "max_epochs must be >= 1");
    require(patience >= 1, "patience must be >= 1");
    require(dropout_p >= 0.0 && dropout_p < 1.0, "dropout_p must lie in [0, 1)");
    require(eta_min >= 0.0 && eta_min <= lr, "eta_min must lie in [0, lr]");
    require(split_ratio > 0.0 && split_ratio < 1.0, "split_ratio must lie in (0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"lr", c.lr},
                       {"weight_decay", c.weight_decay},
                       {"batch_size", c.batch_size},
                       {"max_epochs", c.max_epochs},
                       {"patience", c.patience},
                       {"dropout_p", c.dropout_p},
                       {"seed", c.seed},
                       {"eta_min", c.eta_min},
                       {"split_ratio", c.split_ratio}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (!j.is_object()) {
        fail(ErrorKind::Config, "train config: expected a JSON object");
    }
    try {
        c = TrainConfig{};
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.patience = j.value("patience", c.patience);
        c.dropout_p = j.value("dropout_p", c.dropout_p);
        c.seed = j.value("seed", c.seed);
        c.eta_min = j.value("eta_min", c.eta_min);
        c.split_ratio = j.value("split_ratio", c.split_ratio);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, std::string("train config: ") + e.what());
    }
    c.validate();
}

OptState init_opt_state(const MlpParams& params) {
    OptState state;
    for (const auto& t : network::tensors(params)) {
        if (t.learnable) {
            state.m.emplace_back(t.data.size(), 0.0);
            state.v.emplace_back(t.data.size(), 0.0);
        }
    }
    return state;
}

void adamw_step(MlpParams& params, MlpGrads& grads, OptState& state, double lr, double weight_decay,
                const AdamConstants& k) {
    std::vector<network::TensorView> learnables;
    for (auto& t : network::tensors(params)) {
        if (t.learnable) {
            learnables.push_back(t);
        }
    }
    const auto grad_views = network::grad_tensors(grads);
    if (grad_views.size() != learnables.size() || state.m.size() != learnables.size()) {
        fail(ErrorKind::InvalidState, "adamw_step: tensor count mismatch");
    }
    for (std::size_t i = 0; i < learnables.size(); ++i) {
        if (grad_views[i].size() != learnables[i].data.size() || state.m[i].size() != grad_views[i].size()) {
            fail(ErrorKind::InvalidState, "adamw_step: shape mismatch for " + learnables[i].name);
        }
        for (double g : grad_views[i]) {
            if (!std::isfinite(g)) {
                fail(ErrorKind::Numeric, "adamw_step: non-finite gradient in " + learnables[i].name);
            }
        }
    }

    ++state.t;
    const double t = static_cast<double>(state.t);
    const double bias1 = 1.0 - std::pow(k.beta1, t);
    const double bias2 = 1.0 - std::pow(k.beta2, t);

    for (std::size_t i = 0; i < learnables.size(); ++i) {
        auto theta = learnables[i].data;
        const auto g = grad_views[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        const double decay = learnables[i].decayed ? weight_decay : 0.0;
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = k.beta1 * m[j] + (1.0 - k.beta1) * g[j];
            v[j] = k.beta2 * v[j] + (1.0 - k.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bias1;
            const double v_hat = v[j] / bias2;
            theta[j] -= lr * (m_hat / (std::sqrt(v_hat) + k.epsilon) + decay * theta[j]);
        }
    }
    ++params.version;
}

double cosine_lr(int epoch, int max_epochs, double base_lr, double eta_min) {
    if (max_epochs <= 0 || epoch < 0 || epoch > max_epochs) {
        fail(ErrorKind::InvalidInput, "cosine_lr: epoch must lie in [0, max_epochs]");
    }
    const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(max_epochs);
    return eta_min + 0.5 * (base_lr - eta_min) * (1.0 + std::cos(phase));
}

std::string_view to_string(StopReason reason) noexcept {
    return reason == StopReason::EarlyStop ? "early-stop" : "max-epochs";
}

double evaluate_loss(const MlpParams& params, std::span<const Example> data) {
    if (data.empty()) {
        fail(ErrorKind::InvalidInput, "evaluate_loss: empty dataset");
    }
    std::vector<std::size_t> index(data.size());
    std::iota(index.begin(), index.end(), 0);
    double total = 0.0;
    for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
        const std::size_t len = std::min<std::size_t>(kEvalChunk, data.size() - start);
        const std::span<const std::size_t> chunk(index.data() + start, len);
        const Matrix pred = network::forward_eval(params, inputs_of(data, chunk));
        total += network::smooth_l1(pred, targets_of(data, chunk)) * static_cast<double>(pred.size());
    }
    return total / static_cast<double>(data.size() * network::kOutputDim);
}

double constant_predictor_loss(std::span<const Example> train_set, std::span<const Example> eval_set) {
    if (train_set.empty() || eval_set.empty()) {
        fail(ErrorKind::InvalidInput, "constant_predictor_loss: empty dataset");
    }
    double mx = 0.0;
    double my = 0.0;
    for (const auto& e : train_set) {
        mx += e.target.c_x;
        my += e.target.c_y_plus_half_h;
    }
    mx /= static_cast<double>(train_set.size());
    my /= static_cast<double>(train_set.size());
    Matrix pred(static_cast<Eigen::Index>(eval_set.size()), 2);
    pred.col(0).setConstant(mx);
    pred.col(1).setConstant(my);
    std::vector<std::size_t> index(eval_set.size());
    std::iota(index.begin(), index.end(), 0);
    return network::smooth_l1(pred, targets_of(eval_set, index));
}

TrainResult train(std::span<const Example> train_set, std::span<const Example> val_set,
                  const TrainConfig& config) {
    config.validate();
    if (train_set.empty() || val_set.empty()) {
        fail(ErrorKind::Config, "train: training and validation sets must be non-empty");
    }
    if (train_set.size() < 2) {
        fail(ErrorKind::Config, "train: need at least two training examples for batch statistics");
    }

    MlpParams params = network::init_params(config.seed);
    OptState state = init_opt_state(params);
    TrainResult result{params, {}};
    TrainHistory& history = result.history;
    history.best_val_loss = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(train_set.size());
    int epochs_without_improvement = 0;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        const double lr = cosine_lr(epoch - 1, config.max_epochs, config.lr, config.eta_min);

        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed({config.seed, 0x5eedu, static_cast<std::uint64_t>(epoch)}));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        std::uint64_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
            const std::size_t len = std::min<std::size_t>(config.batch_size, order.size() - start);
            if (len < 2) {
                break;
            }
            const std::span<const std::size_t> idx(order.data() + start, len);
            const Matrix x = inputs_of(train_set, idx);
            const Matrix y = targets_of(train_set, idx);
            const auto cache = network::forward_train(
                params, x, config.dropout_p,
                derive_seed({config.seed, 0xd20bu, static_cast<std::uint64_t>(epoch), batch_index}));
            const double loss = network::smooth_l1(cache.predictions, y);
            if (!std::isfinite(loss)) {
                throw TrainingAborted("train: non-finite training loss at epoch " + std::to_string(epoch),
                                      history);
            }
            auto grads = network::backward(params, cache, y);
            try {
                adamw_step(params, grads, state, lr, config.weight_decay);
            } catch (const Error& e) {
                throw TrainingAborted(std::string(e.what()) + " at epoch " + std::to_string(epoch), history);
            }
            loss_sum += loss * static_cast<double>(len);
            seen += len;
        }

        const double val_loss = evaluate_loss(params, val_set);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        history.epochs.push_back({epoch, loss_sum / static_cast<double>(std::max<std::size_t>(seen, 1)),
                                  val_loss, lr, seconds});
        if (!std::isfinite(val_loss)) {
            throw TrainingAborted("train: non-finite validation loss at epoch " + std::to_string(epoch),
                                  history);
        }

        if (val_loss < history.best_val_loss) {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            result.best_params = params;
            epochs_without_improvement = 0;
        } else {
            ++epochs_without_improvement;
        }
        spdlog::debug("epoch {:4d} lr {:.3e} train {:.6e} val {:.6e}{}", epoch, lr,
                      history.epochs.back().train_loss, val_loss,
                      history.best_epoch == epoch ? " *" : "");
        if (epochs_without_improvement >= config.patience) {
            history.stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    spdlog::info("training stopped ({}) after {} epochs; best epoch {} val loss {:.6e}",
                 to_string(history.stop_reason), history.epochs.size(), history.best_epoch,
                 history.best_val_loss);
    return result;
}

void write_history_csv(const std::string& path, const TrainHistory& history) {
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::Config, "cannot write " + path);
    }
    out << "epoch,train_loss,val_loss,lr,seconds\n";
    out << std::setprecision(17);
    for (const auto& e : history.epochs) {
        out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr << ','
            << std::setprecision(6) << e.seconds << std::setprecision(17) << '\n';
    }
}

nlohmann::json history_summary(const TrainHistory& history) {
    return {{"best_epoch", history.best_epoch},
            {"best_val_loss", history.best_val_loss},
            {"stop_reason", std::string(to_string(history.stop_reason))},
            {"epochs_run", history.epochs.size()}};
}

} // namespace querymlp::training
