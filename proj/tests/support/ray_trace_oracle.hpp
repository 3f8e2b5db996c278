#pragma once

// Independent scalar reference for the pinhole projection. It builds the
// camera basis by successive Rodrigues rotations (no matrices), works with
// absolute bearings (so heading has to cancel on its own), and confirms each
// result by casting the pixel's ray back onto the water plane.

#include <cmath>
#include <numbers>
#include <optional>

namespace oracle {

struct V3 {
    double x, y, z;
};

inline V3 add(V3 a, V3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline V3 scale(V3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
inline double dot(V3 a, V3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline V3 cross(V3 a, V3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }

// v·cosθ + (k×v)·sinθ + k(k·v)(1 − cosθ), k unit.
inline V3 rodrigues(V3 v, V3 k, double theta) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    return add(add(scale(v, c), scale(cross(k, v), s)), scale(k, dot(k, v) * (1.0 - c)));
}

inline double rad(double deg) { return deg * std::numbers::pi / 180.0; }

struct Basis {
    V3 starboard, forward, up;
};

/// Body axes in the east-north-up frame after heading, pitch, roll.
inline Basis body_basis(double pitch_deg, double roll_deg, double heading_deg) {
    Basis b{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    // Compass heading is clockwise seen from above: a negative turn about up.
    const V3 up0 = b.up;
    b.starboard = rodrigues(b.starboard, up0, -rad(heading_deg));
    b.forward = rodrigues(b.forward, up0, -rad(heading_deg));
    // Bow up: positive about the current starboard axis.
    const V3 stb = b.starboard;
    b.forward = rodrigues(b.forward, stb, rad(pitch_deg));
    b.up = rodrigues(b.up, stb, rad(pitch_deg));
    // Starboard down: positive about the current forward axis.
    const V3 fwd = b.forward;
    b.starboard = rodrigues(b.starboard, fwd, rad(roll_deg));
    b.up = rodrigues(b.up, fwd, rad(roll_deg));
    return b;
}

struct Camera {
    double focal, pu, pv, height;
};

struct Pixel {
    double u, v;
};

/// Projects the buoy at (distance, relative bearing) for the given attitude.
inline std::optional<Pixel> project(const Camera& cam, double pitch_deg, double roll_deg, double heading_deg,
                                    double distance, double bearing_deg) {
    const double absolute = rad(heading_deg + bearing_deg);
    const V3 buoy{distance * std::sin(absolute), distance * std::cos(absolute), 0.0};
    const V3 eye{0.0, 0.0, cam.height};
    const V3 ray = add(buoy, scale(eye, -1.0));
    const Basis b = body_basis(pitch_deg, roll_deg, heading_deg);
    const double depth = dot(ray, b.forward);
    if (depth <= 1e-6) {
        return std::nullopt;
    }
    return Pixel{cam.pu + cam.focal * dot(ray, b.starboard) / depth,
                 cam.pv - cam.focal * dot(ray, b.up) / depth};
}

/// Casts the ray through (u, v) and intersects the water plane z = 0.
inline std::optional<V3> cast_to_water(const Camera& cam, double pitch_deg, double roll_deg, double heading_deg,
                                       Pixel p) {
    const Basis b = body_basis(pitch_deg, roll_deg, heading_deg);
    const V3 dir = add(add(b.forward, scale(b.starboard, (p.u - cam.pu) / cam.focal)),
                       scale(b.up, -(p.v - cam.pv) / cam.focal));
    if (dir.z >= 0.0) {
        return std::nullopt;
    }
    const double t = cam.height / -dir.z;
    return V3{dir.x * t, dir.y * t, cam.height + dir.z * t};
}

} // namespace oracle
