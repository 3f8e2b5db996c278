#include "querymlp/metrics.hpp"

#include "querymlp/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace querymlp::metrics {

double pixel_error(const WaterlinePoint& pred, const WaterlinePoint& target, int image_w, int image_h) {
    if (image_w <= 0 || image_h <= 0) {
        fail(ErrorKind::InvalidInput, "pixel_error: image dimensions must be > 0");
    }
    const double dx = (pred.c_x - target.c_x) * image_w;
    const double dy = (pred.c_y_plus_half_h - target.c_y_plus_half_h) * image_h;
    return std::hypot(dx, dy);
}

double percentile(std::span<const double> sorted, double q) {
    if (sorted.empty()) {
        fail(ErrorKind::InvalidInput, "percentile: empty list");
    }
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

ErrorStats error_stats(std::span<const double> errors) {
    if (errors.empty()) {
        fail(ErrorKind::InvalidInput, "error_stats: empty error list");
    }
    std::vector<double> sorted(errors.begin(), errors.end());
    std::sort(sorted.begin(), sorted.end());
    // Summing the sorted copy keeps the mean permutation-invariant.
    const double sum = std::accumulate(sorted.begin(), sorted.end(), 0.0);
    return {percentile(sorted, 0.5), sum / static_cast<double>(sorted.size()), percentile(sorted, 0.9),
            sorted.size()};
}

double iou(const Box& a, const Box& b) {
    if (!(a.w > 0.0 && a.h > 0.0 && b.w > 0.0 && b.h > 0.0)) {
        fail(ErrorKind::InvalidInput, "iou: degenerate box");
    }
    // Areas come from the same corner differences as the overlap so identical
    // boxes score exactly 1.
    const double ax0 = a.c_x - a.w / 2, ax1 = a.c_x + a.w / 2, ay0 = a.c_y - a.h / 2, ay1 = a.c_y + a.h / 2;
    const double bx0 = b.c_x - b.w / 2, bx1 = b.c_x + b.w / 2, by0 = b.c_y - b.h / 2, by1 = b.c_y + b.h / 2;
    const double ix = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
    const double iy = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
    const double inter = ix * iy;
    const double uni = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    return std::clamp(inter / uni, 0.0, 1.0);
}

double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

double f1_score(double precision, double recall) noexcept {
    const double denom = precision + recall;
    return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

double overall_score(double f1, double miou) noexcept { return (f1 + miou) / 2.0; }

DetectionReport detection_report(std::span<const QueryPrediction> predictions,
                                 std::span<const GtBox> gts, double logit_bias,
                                 const DetectionOptions& options) {
    if (predictions.size() != gts.size()) {
        fail(ErrorKind::InvalidInput, "detection_report: " + std::to_string(predictions.size()) +
                                          " predictions vs " + std::to_string(gts.size()) + " labels");
    }
    DetectionReport r;
    double iou_sum = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool predicted = sigmoid(predictions[i].objectness_logit + logit_bias) > options.threshold;
        const bool actual = gts[i].visible;
        if (predicted && actual) {
            const double overlap = iou(predictions[i].box, {gts[i].c_x, gts[i].c_y, gts[i].w, gts[i].h});
            if (options.iou_gate && overlap < *options.iou_gate) {
                ++r.fp;
                ++r.fn;
            } else {
                ++r.tp;
                iou_sum += overlap;
            }
        } else if (predicted) {
            ++r.fp;
        } else if (actual) {
            ++r.fn;
        }
    }
    const auto ratio = [](std::size_t num, std::size_t den, std::size_t other_miss) {
        if (den == 0) {
            return other_miss == 0 ? 1.0 : 0.0;
        }
        return static_cast<double>(num) / static_cast<double>(den);
    };
    r.precision = ratio(r.tp, r.tp + r.fp, r.fn);
    r.recall = ratio(r.tp, r.tp + r.fn, r.fp);
    r.f1 = f1_score(r.precision, r.recall);
    r.miou = r.tp > 0 ? iou_sum / static_cast<double>(r.tp) : 0.0;
    r.overall = overall_score(r.f1, r.miou);
    return r;
}

std::vector<double> bias_grid(double lo, double hi, double step) {
    if (!(step > 0.0) || !(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
        fail(ErrorKind::InvalidInput, "bias grid: need lo <= hi and step > 0");
    }
    const auto intervals = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(intervals) + 1);
    for (long i = 0; i <= intervals; ++i) {
        grid.push_back(lo + static_cast<double>(i) * step);
    }
    return grid;
}

CalibrationResult calibrate_bias(std::span<const QueryPrediction> predictions,
                                 std::span<const GtBox> gts, double lo, double hi, double step,
                                 const DetectionOptions& options) {
    CalibrationResult result;
    for (double bias : bias_grid(lo, hi, step)) {
        result.curve.push_back({bias, detection_report(predictions, gts, bias, options)});
    }
    const CurvePoint* best = &result.curve.front();
    for (const auto& point : result.curve) {
        const double a = point.report.overall;
        const double b = best->report.overall;
        const bool better =
            a > b || (a == b && (std::abs(point.bias) < std::abs(best->bias) ||
                                 (std::abs(point.bias) == std::abs(best->bias) && point.bias < best->bias)));
        if (better) {
            best = &point;
        }
    }
    result.best_bias = best->bias;
    result.best = best->report;
    return result;
}

nlohmann::json to_json(const ErrorStats& s) {
    return {{"median_px", s.median_px}, {"mean_px", s.mean_px}, {"p90_px", s.p90_px}, {"n", s.n}};
}

nlohmann::json to_json(const DetectionReport& r) {
    return {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}, {"miou", r.miou},
            {"overall", r.overall},     {"tp", r.tp},         {"fp", r.fp}, {"fn", r.fn}};
}

nlohmann::json to_json(const CalibrationResult& result) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : result.curve) {
        curve.push_back({{"bias", p.bias}, {"report", to_json(p.report)}});
    }
    return {{"best_bias", result.best_bias}, {"best", to_json(result.best)}, {"curve", curve}};
}

void write_curve_csv(const std::string& path, const CalibrationResult& result) {
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::Config, "cannot write " + path);
    }
    out << "bias,precision,recall,f1,miou,overall\n" << std::setprecision(17);
    for (const auto& p : result.curve) {
        const auto& r = p.report;
        out << p.bias << ',' << r.precision << ',' << r.recall << ',' << r.f1 << ',' << r.miou << ','
            << r.overall << '\n';
    }
}

} // namespace querymlp::metrics
