#pragma once

#include "querymlp/types.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace querymlp::metrics {

inline constexpr double kDefaultThreshold = 0.90;
inline constexpr double kDefaultBiasLow = -3.0;
inline constexpr double kDefaultBiasHigh = 3.0;
inline constexpr double kDefaultBiasStep = 0.25;

/// Normalized center-format box.
struct Box {
    double c_x = 0.0;
    double c_y = 0.0;
    double w = 0.0;
    double h = 0.0;
};

/// Detector output for one chart query.
struct QueryPrediction {
    double objectness_logit = 0.0;
    Box box;
};

struct ErrorStats {
    double median_px = 0.0;
    double mean_px = 0.0;
    double p90_px = 0.0;
    std::size_t n = 0;
};

struct DetectionReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double miou = 0.0;
    double overall = 0.0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

struct DetectionOptions {
    double threshold = kDefaultThreshold;
    /// When set, a visible/visible pair with IoU below the gate counts as one
    /// false positive plus one false negative instead of a true positive.
    std::optional<double> iou_gate;
};

/// Euclidean distance in pixels between two normalized points.
double pixel_error(const WaterlinePoint& pred, const WaterlinePoint& target, int image_w, int image_h);

/// Linear-interpolation percentile at position q·(n−1) of the sorted list.
double percentile(std::span<const double> sorted, double q);

ErrorStats error_stats(std::span<const double> errors);

double iou(const Box& a, const Box& b);

double sigmoid(double x) noexcept;
double f1_score(double precision, double recall) noexcept;
double overall_score(double f1, double miou) noexcept;

DetectionReport detection_report(std::span<const QueryPrediction> predictions,
                                 std::span<const GtBox> gts, double logit_bias,
                                 const DetectionOptions& options = {});

struct CurvePoint {
    double bias = 0.0;
    DetectionReport report;
};

struct CalibrationResult {
    double best_bias = 0.0;
    DetectionReport best;
    std::vector<CurvePoint> curve;
};

/// Grid points lo, lo+step, ..., hi (inclusive, computed by multiplication).
std::vector<double> bias_grid(double lo, double hi, double step);

/// Sweeps the logit bias and keeps the grid point with the highest overall
/// score; ties go to the smallest |bias|, then to the smaller bias.
CalibrationResult calibrate_bias(std::span<const QueryPrediction> predictions,
                                 std::span<const GtBox> gts, double lo = kDefaultBiasLow,
                                 double hi = kDefaultBiasHigh, double step = kDefaultBiasStep,
                                 const DetectionOptions& options = {});

nlohmann::json to_json(const ErrorStats& stats);
nlohmann::json to_json(const DetectionReport& report);
nlohmann::json to_json(const CalibrationResult& result);

void write_curve_csv(const std::string& path, const CalibrationResult& result);

} // namespace querymlp::metrics
