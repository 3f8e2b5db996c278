#include "querymlp/geometry.hpp"

#include "querymlp/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace querymlp::geometry {

namespace {

Mat3 multiply(const Mat3& a, const Mat3& b) {
    Mat3 out{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    return out;
}

// Compass heading: positive turns the bow from +y toward +x.
Mat3 heading_rotation(double rad) {
    const double c = std::cos(rad);
    const double s = std::sin(rad);
    return {{{c, s, 0.0}, {-s, c, 0.0}, {0.0, 0.0, 1.0}}};
}

// About starboard (+x); positive lifts the bow.
Mat3 pitch_rotation(double rad) {
    const double c = std::cos(rad);
    const double s = std::sin(rad);
    return {{{1.0, 0.0, 0.0}, {0.0, c, -s}, {0.0, s, c}}};
}

// About forward (+y); positive lowers the starboard side.
Mat3 roll_rotation(double rad) {
    const double c = std::cos(rad);
    const double s = std::sin(rad);
    return {{{c, 0.0, s}, {0.0, 1.0, 0.0}, {-s, 0.0, c}}};
}

} // namespace

void CameraModel::validate() const {
    if (!(focal_px > 0.0) || !std::isfinite(focal_px)) {
        fail(ErrorKind::Config, "camera: focal_px must be > 0");
    }
    if (image_w <= 0 || image_h <= 0) {
        fail(ErrorKind::Config, "camera: image_w and image_h must be > 0");
    }
    if (!(mount_height_m > 0.0) || !std::isfinite(mount_height_m)) {
        fail(ErrorKind::Config, "camera: mount_height_m must be > 0");
    }
    if (!(principal_u >= 0.0 && principal_u <= image_w)) {
        fail(ErrorKind::Config, "camera: principal_u must lie in [0, image_w]");
    }
    if (!(principal_v >= 0.0 && principal_v <= image_h)) {
        fail(ErrorKind::Config, "camera: principal_v must lie in [0, image_h]");
    }
}

double CameraModel::half_hfov_deg() const {
    const double half_w = std::min(principal_u, image_w - principal_u);
    return std::atan(half_w / focal_px) * 180.0 / std::numbers::pi;
}

double deg_to_rad(double deg) noexcept { return deg * std::numbers::pi / 180.0; }

WorldPoint world_point(const ChartQuery& query) {
    if (!(query.distance_m > 0.0) || !std::isfinite(query.distance_m)) {
        fail(ErrorKind::InvalidInput, "world_point: distance must be > 0");
    }
    const double b = deg_to_rad(query.bearing_deg);
    return {query.distance_m * std::sin(b), query.distance_m * std::cos(b), 0.0};
}

Mat3 orientation_matrix(const ImuSample& imu) {
    return multiply(multiply(heading_rotation(deg_to_rad(imu.heading_deg)),
                             pitch_rotation(deg_to_rad(imu.pitch_deg))),
                    roll_rotation(deg_to_rad(imu.roll_deg)));
}

std::optional<PixelPoint> project_point(const CameraModel& camera, const Mat3& body_to_level,
                                        const WorldPoint& point) {
    const double rel[3] = {point.x, point.y, point.z - camera.mount_height_m};
    // Rᵀ·rel gives body-frame coordinates.
    double body[3];
    for (int j = 0; j < 3; ++j) {
        body[j] = body_to_level[0][j] * rel[0] + body_to_level[1][j] * rel[1] +
                  body_to_level[2][j] * rel[2];
    }
    const double depth = body[1];
    if (depth <= kDepthEpsilonM) {
        return std::nullopt;
    }
    return PixelPoint{camera.principal_u + camera.focal_px * body[0] / depth,
                      camera.principal_v - camera.focal_px * body[2] / depth};
}

std::optional<PixelPoint> project(const CameraModel& camera, const ImuSample& imu,
                                  const ChartQuery& query) {
    const ImuSample level{imu.pitch_deg, imu.roll_deg, 0.0};
    return project_point(camera, orientation_matrix(level), world_point(query));
}

bool in_frame(const CameraModel& camera, const PixelPoint& p) noexcept {
    return p.u >= 0.0 && p.u < camera.image_w && p.v >= 0.0 && p.v < camera.image_h;
}

void to_json(nlohmann::json& j, const CameraModel& camera) {
    j = nlohmann::json{{"focal_px", camera.focal_px},         {"principal_u", camera.principal_u},
                       {"principal_v", camera.principal_v},   {"image_w", camera.image_w},
                       {"image_h", camera.image_h},           {"mount_height_m", camera.mount_height_m}};
}

void from_json(const nlohmann::json& j, CameraModel& camera) {
    static constexpr const char* kKeys[] = {"focal_px", "principal_u", "principal_v",
                                            "image_w",  "image_h",     "mount_height_m"};
    if (!j.is_object()) {
        fail(ErrorKind::Config, "camera: expected a JSON object");
    }
    for (const char* key : kKeys) {
        if (!j.contains(key)) {
            fail(ErrorKind::Config, std::string("camera: missing key \"") + key + "\"");
        }
    }
    for (const auto& item : j.items()) {
        if (std::find(std::begin(kKeys), std::end(kKeys), item.key()) == std::end(kKeys)) {
            fail(ErrorKind::Config, "camera: unknown key \"" + item.key() + "\"");
        }
    }
    try {
        camera.focal_px = j.at("focal_px").get<double>();
        camera.principal_u = j.at("principal_u").get<double>();
        camera.principal_v = j.at("principal_v").get<double>();
        camera.image_w = j.at("image_w").get<int>();
        camera.image_h = j.at("image_h").get<int>();
        camera.mount_height_m = j.at("mount_height_m").get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, std::string("camera: ") + e.what());
    }
    camera.validate();
}

CameraModel load_camera(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::Config, "cannot open camera file " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Config, "camera file " + path + ": " + e.what());
    }
    return j.get<CameraModel>();
}

void save_camera(const std::string& path, const CameraModel& camera) {
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::Config, "cannot write camera file " + path);
    }
    out << nlohmann::json(camera).dump(2) << '\n';
}

} // namespace querymlp::geometry
