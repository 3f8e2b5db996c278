#pragma once

#include "querymlp/types.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <string>

namespace querymlp::geometry {

/// Pinhole camera rigidly mounted on the vessel, looking forward along the
/// bow with no lens distortion.
struct CameraModel {
    double focal_px = 600.0;
    double principal_u = 480.0;
    double principal_v = 270.0;
    int image_w = 960;
    int image_h = 540;
    double mount_height_m = 3.0;

    /// Throws ErrorKind::Config if any invariant is violated.
    void validate() const;

    /// Half of the horizontal field of view, in degrees, measured from the
    /// optical axis to the nearer vertical image edge.
    double half_hfov_deg() const;
};

/// Vessel-frame point: x starboard, y forward, z up (0 = water plane).
struct WorldPoint {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

/// Image point: u rightward, v downward, in pixels.
struct PixelPoint {
    double u = 0.0;
    double v = 0.0;
};

using Mat3 = std::array<std::array<double, 3>, 3>;

inline constexpr double kDepthEpsilonM = 1e-6;

double deg_to_rad(double deg) noexcept;

/// Polar chart measurement to the level, heading-aligned vessel frame.
WorldPoint world_point(const ChartQuery& query);

/// Body-to-level rotation built intrinsically: heading about up, then pitch
/// about starboard, then roll about forward. Columns are the body axes
/// (starboard, forward, up) expressed in the level frame.
Mat3 orientation_matrix(const ImuSample& imu);

/// Projects the waterline point of `query` into the image. Bearing is
/// relative to the bow, so heading cancels and only pitch/roll enter.
/// Returns nullopt when the point is at or behind the image plane.
std::optional<PixelPoint> project(const CameraModel& camera, const ImuSample& imu,
                                  const ChartQuery& query);

/// Projects a level-frame point through a camera oriented by `body_to_level`.
std::optional<PixelPoint> project_point(const CameraModel& camera, const Mat3& body_to_level,
                                        const WorldPoint& point);

bool in_frame(const CameraModel& camera, const PixelPoint& p) noexcept;

void to_json(nlohmann::json& j, const CameraModel& camera);
void from_json(const nlohmann::json& j, CameraModel& camera);

CameraModel load_camera(const std::string& path);
void save_camera(const std::string& path, const CameraModel& camera);

} // namespace querymlp::geometry
