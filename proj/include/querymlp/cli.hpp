#pragma once

#include "querymlp/data.hpp"
#include "querymlp/error.hpp"
#include "querymlp/metrics.hpp"
#include "querymlp/training.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace querymlp::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Process exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitConfig = 2,
    kExitData = 3,
    kExitNumeric = 4,
    kExitCheckpoint = 5,
};

int exit_code_for(ErrorKind kind) noexcept;

struct GenOptions {
    std::optional<std::string> camera_path;
    std::optional<std::string> config_path;
    std::string out_path;
    std::optional<std::uint64_t> seed;
    bool verify = false;
    bool emit_features = false;
};

struct GenSummary {
    data::QueryCounts counts;
    bool verified = false;
    std::size_t verified_queries = 0;
};

GenSummary cmd_gen(const GenOptions& options);

struct TrainOptions {
    std::string dataset_path;
    std::optional<std::string> val_path;
    std::optional<std::string> config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
};

training::TrainResult cmd_train(const TrainOptions& options);

struct EvalOptions {
    std::string dataset_path;
    std::string checkpoint_path;
    std::string out_dir;
    std::optional<std::string> camera_path;
};

metrics::ErrorStats cmd_eval(const EvalOptions& options);

struct CalibrateOptions {
    std::string predictions_path;
    std::string out_dir;
    double lo = metrics::kDefaultBiasLow;
    double hi = metrics::kDefaultBiasHigh;
    double step = metrics::kDefaultBiasStep;
    double threshold = metrics::kDefaultThreshold;
    std::optional<double> iou_gate;
    std::optional<std::string> curve_csv_path;
};

/// One row of a calibration input file: detector output plus ground truth.
struct ScoredQuery {
    metrics::QueryPrediction prediction;
    GtBox gt;
};

std::vector<ScoredQuery> load_scored_queries(const std::string& path);
void save_scored_queries(const std::string& path, const std::vector<ScoredQuery>& rows);

metrics::CalibrationResult cmd_calibrate(const CalibrateOptions& options);

struct PredictOptions {
    std::string dataset_path;
    std::string checkpoint_path;
    std::string out_path;
    bool emit_features = false;
};

/// Returns the number of rows written (one per chart query).
std::size_t cmd_predict(const PredictOptions& options);

/// Full command-line entry point; returns the process exit code.
int run(int argc, char** argv);

} // namespace querymlp::cli
