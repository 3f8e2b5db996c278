#include "querymlp/features.hpp"

#include "querymlp/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace querymlp::features {

namespace {

void check_query(const ChartQuery& query) {
    if (!(query.distance_m > 0.0) || !std::isfinite(query.distance_m)) {
        fail(ErrorKind::InvalidInput,
             "chart query distance must be finite and > 0, got " + std::to_string(query.distance_m));
    }
    if (!std::isfinite(query.bearing_deg)) {
        fail(ErrorKind::InvalidInput, "chart query bearing must be finite");
    }
}

} // namespace

double wrap_degrees(double deg) noexcept {
    if (deg >= -180.0 && deg <= 180.0) {
        return deg;
    }
    double wrapped = std::fmod(deg + 180.0, 360.0);
    if (wrapped < 0.0) {
        wrapped += 360.0;
    }
    return wrapped - 180.0;
}

FeatureVector build_features(const ChartQuery& query, const ImuSample& imu) {
    check_query(query);
    if (!std::isfinite(imu.pitch_deg) || !std::isfinite(imu.roll_deg) ||
        !std::isfinite(imu.heading_deg)) {
        fail(ErrorKind::InvalidInput, "IMU angles must be finite");
    }
    FeatureVector f;
    f.values[0] = query.distance_m / kDistanceScaleM;
    f.values[1] = std::clamp(kDistanceScaleM / query.distance_m, 0.0, kInvDistanceMax);
    f.values[2] = query.bearing_deg / kBearingScaleDeg;
    f.values[3] = imu.pitch_deg / kAttitudeScaleDeg;
    f.values[4] = imu.roll_deg / kAttitudeScaleDeg;
    f.values[5] = wrap_degrees(imu.heading_deg) / kHeadingScaleDeg;
    return f;
}

WaterlinePoint waterline_target(const GtBox& box) {
    const double bottom = box.c_y + 0.5 * box.h;
    if (!std::isfinite(box.c_x) || !std::isfinite(bottom)) {
        fail(ErrorKind::InvalidLabel, "box fields must be finite");
    }
    if (bottom > 1.0 + kLabelEpsilon) {
        fail(ErrorKind::InvalidLabel,
             "box extends below the frame: c_y + h/2 = " + std::to_string(bottom));
    }
    return {box.c_x, bottom};
}

DecoderQuery build_decoder_query(const ChartQuery& query, const WaterlinePoint& predicted) {
    check_query(query);
    const auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!in_unit(predicted.c_x) || !in_unit(predicted.c_y_plus_half_h)) {
        fail(ErrorKind::InvalidInput, "predicted waterline point must lie in [0, 1]^2");
    }
    return {{query.distance_m / kDistanceScaleM, query.bearing_deg / kBearingScaleDeg,
             predicted.c_x, predicted.c_y_plus_half_h}};
}

} // namespace querymlp::features
