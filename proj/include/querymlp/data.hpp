#pragma once

#include "querymlp/geometry.hpp"
#include "querymlp/training.hpp"
#include "querymlp/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace querymlp::data {

inline constexpr int kSchemaVersion = 1;

/// One frame: IMU reading plus chart queries with aligned labels. An empty
/// query list is a buoy-free frame.
struct SampleRecord {
    std::string sample_id;
    ImuSample imu;
    std::vector<ChartQuery> queries;
    std::vector<GtBox> labels;
};

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct NoiseConfig {
    double distance_rel = 0.0; // σ as a fraction of the true distance
    double bearing_deg = 0.0;
    double pitch_deg = 0.0;
    double roll_deg = 0.0;
    double heading_deg = 0.0;
    double label_px = 0.0;
};

struct GenConfig {
    int n_samples = 1000;
    int min_queries = 0;
    int max_queries = 6;
    Range distance_m{5.0, 1000.0};
    /// Unset means ±(half horizontal field of view + 5°) for the camera.
    std::optional<Range> bearing_deg;
    Range pitch_deg{-10.0, 10.0};
    Range roll_deg{-10.0, 10.0};
    Range heading_deg{-180.0, 180.0};
    /// Box height in pixels is clamp(k_h / d, 2, image_h / 2); width is k_w · height.
    double k_h = 1200.0;
    double k_w = 0.5;
    NoiseConfig noise;
    double visibility_dropout = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
    Range bearing_range(const geometry::CameraModel& camera) const;
};

void to_json(nlohmann::json& j, const GenConfig& config);
void from_json(const nlohmann::json& j, GenConfig& config);

/// Records whose labels carry the true projection; noise, when configured,
/// perturbs only the recorded measurements (and optionally label pixels).
std::vector<SampleRecord> generate(const geometry::CameraModel& camera, const GenConfig& config);

struct DatasetSplit {
    std::vector<SampleRecord> train;
    std::vector<SampleRecord> val;
    double ratio = 0.0;
    std::uint64_t seed = 0;
};

/// Shuffled split by sample. Buoy-free frames are split separately so both
/// sides keep roughly the same share of them.
DatasetSplit split(std::span<const SampleRecord> records, double ratio, std::uint64_t seed);

/// Throws ErrorKind::Schema if the record violates an invariant.
void validate_record(const SampleRecord& record);

nlohmann::ordered_json record_to_json(const SampleRecord& record, bool emit_features = false);
SampleRecord record_from_json(const nlohmann::json& j);

void save_dataset(const std::string& path, std::span<const SampleRecord> records,
                  bool emit_features = false);
std::vector<SampleRecord> load_dataset(const std::string& path);

/// Visible queries as (features, waterline target) pairs; invisible queries
/// carry no pixel target and are skipped.
std::vector<training::Example> visible_examples(std::span<const SampleRecord> records);

struct QueryCounts {
    std::size_t samples = 0;
    std::size_t visible = 0;
    std::size_t invisible = 0;
};

QueryCounts count_queries(std::span<const SampleRecord> records);

} // namespace querymlp::data
