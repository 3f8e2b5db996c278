#pragma once

// Domain records shared across modules.

namespace querymlp {

/// One nautical-chart buoy entry, relative to the vessel.
struct ChartQuery {
    double distance_m = 0.0;
    double bearing_deg = 0.0; // relative to vessel heading, positive to starboard
};

/// Vessel attitude at capture time.
struct ImuSample {
    double pitch_deg = 0.0;   // bow up positive
    double roll_deg = 0.0;    // starboard down positive
    double heading_deg = 0.0; // compass heading, wrapped to [-180, 180]
};

/// Ground-truth annotation for one chart query. Box fields are normalized
/// center/size and are meaningful only when visible.
struct GtBox {
    double c_x = 0.0;
    double c_y = 0.0;
    double w = 0.0;
    double h = 0.0;
    bool visible = false;
};

/// Normalized waterline contact point (c_x, c_y + h/2).
struct WaterlinePoint {
    double c_x = 0.0;
    double c_y_plus_half_h = 0.0;

    friend bool operator==(const WaterlinePoint&, const WaterlinePoint&) = default;
};

} // namespace querymlp
