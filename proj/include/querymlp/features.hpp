#pragma once

#include "querymlp/types.hpp"

#include <array>
#include <cstddef>

namespace querymlp::features {

inline constexpr double kDistanceScaleM = 1000.0;
inline constexpr double kInvDistanceMax = 10.0;
inline constexpr double kBearingScaleDeg = 180.0;
inline constexpr double kAttitudeScaleDeg = 10.0;
inline constexpr double kHeadingScaleDeg = 180.0;

/// Tolerance on labels that reach the bottom image edge.
inline constexpr double kLabelEpsilon = 1e-6;

/// QueryMLP input, in this fixed order:
///   0 dist_norm     d / 1000
///   1 inv_dist      clamp(1000 / d, 0, 10)
///   2 bearing_norm  bearing / 180
///   3 pitch_norm    pitch / 10
///   4 roll_norm     roll / 10
///   5 heading_norm  heading / 180
struct FeatureVector {
    static constexpr std::size_t kSize = 6;
    std::array<double, kSize> values{};

    double dist_norm() const noexcept { return values[0]; }
    double inv_dist() const noexcept { return values[1]; }
    double bearing_norm() const noexcept { return values[2]; }
    double pitch_norm() const noexcept { return values[3]; }
    double roll_norm() const noexcept { return values[4]; }
    double heading_norm() const noexcept { return values[5]; }

    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Decoder query [dist_norm, bearing_norm, c_x, c_y + h/2].
struct DecoderQuery {
    static constexpr std::size_t kSize = 4;
    std::array<double, kSize> values{};

    friend bool operator==(const DecoderQuery&, const DecoderQuery&) = default;
};

/// Wraps an angle in degrees to [-180, 180].
double wrap_degrees(double deg) noexcept;

FeatureVector build_features(const ChartQuery& query, const ImuSample& imu);

/// Bottom-center of a normalized box. Throws InvalidLabel if the box extends
/// below the frame.
WaterlinePoint waterline_target(const GtBox& box);

/// Throws InvalidInput if either predicted coordinate lies outside [0, 1].
DecoderQuery build_decoder_query(const ChartQuery& query, const WaterlinePoint& predicted);

} // namespace querymlp::features
