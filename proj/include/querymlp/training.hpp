#pragma once

#include "querymlp/error.hpp"
#include "querymlp/features.hpp"
#include "querymlp/network.hpp"
#include "querymlp/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace querymlp::training {

/// Recipe defaults: AdamW lr 1e-3, weight decay 1e-4, batch 256, up to 1000
/// epochs, patience 60, dropout 0.2, cosine annealing to eta_min.
struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    int batch_size = 256;
    int max_epochs = 1000;
    int patience = 60;
    double dropout_p = network::kDefaultDropout;
    std::uint64_t seed = 0;
    double eta_min = 0.0;
    /// Fraction of samples kept for training when the CLI splits one dataset.
    double split_ratio = 4285.0 / 5189.0;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& config);
void from_json(const nlohmann::json& j, TrainConfig& config);

struct AdamConstants {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// First/second moments for every learnable tensor plus the step counter.
struct OptState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;
};

OptState init_opt_state(const network::MlpParams& params);

/// One AdamW update. Decoupled weight decay touches weight matrices only.
/// Throws ErrorKind::Numeric on a non-finite gradient before modifying
/// anything.
void adamw_step(network::MlpParams& params, network::MlpGrads& grads, OptState& state, double lr,
                double weight_decay, const AdamConstants& constants = {});

double cosine_lr(int epoch, int max_epochs, double base_lr, double eta_min);

/// One supervised pair: features and the normalized waterline target.
struct Example {
    features::FeatureVector x;
    WaterlinePoint target;
};

struct EpochRecord {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

enum class StopReason { EarlyStop, MaxEpochs };

std::string_view to_string(StopReason reason) noexcept;

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    StopReason stop_reason = StopReason::MaxEpochs;
};

struct TrainResult {
    network::MlpParams best_params;
    TrainHistory history;
};

/// Raised when training hits a non-finite loss or gradient. Carries the
/// history recorded up to the failing epoch.
class TrainingAborted : public Error {
public:
    TrainingAborted(const std::string& message, TrainHistory history)
        : Error(ErrorKind::Numeric, message), m_history(std::move(history)) {}

    const TrainHistory& history() const noexcept { return m_history; }

private:
    TrainHistory m_history;
};

/// Mean validation loss in eval mode, evaluated in fixed-size chunks.
double evaluate_loss(const network::MlpParams& params, std::span<const Example> data);

/// Mean SmoothL1 of always predicting the training-set mean target.
double constant_predictor_loss(std::span<const Example> train_set, std::span<const Example> eval_set);

TrainResult train(std::span<const Example> train_set, std::span<const Example> val_set,
                  const TrainConfig& config);

void write_history_csv(const std::string& path, const TrainHistory& history);
nlohmann::json history_summary(const TrainHistory& history);

} // namespace querymlp::training
