#include "querymlp/data.hpp"

#include "querymlp/error.hpp"
#include "querymlp/features.hpp"
#include "querymlp/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace querymlp::data {

namespace {

constexpr double kBoxEpsilon = 1e-6;
constexpr double kMinBoxPx = 2.0;
constexpr double kMinRecordedDistanceM = 0.01;

void require(bool ok, const std::string& message) {
    if (!ok) {
        fail(ErrorKind::Config, "generator config: " + message);
    }
}

void require_range(const Range& r, const char* name) {
    require(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo < r.hi,
            std::string(name) + " range must be finite with lo < hi");
}

Range range_from_json(const nlohmann::json& j, const char* key, Range fallback) {
    if (!j.contains(key)) {
        return fallback;
    }
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2) {
        fail(ErrorKind::Config, std::string("generator config: \"") + key + "\" must be [lo, hi]");
    }
    return {v[0].get<double>(), v[1].get<double>()};
}

double uniform(Rng& rng, const Range& r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); }

std::string sample_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06zu", index);
    return buf;
}

[[noreturn]] void schema_error(std::size_t line, const std::string& message) {
    fail(ErrorKind::Schema, "line " + std::to_string(line) + ": " + message);
}

const nlohmann::json& require_key(const nlohmann::json& j, const char* key, std::size_t line,
                                  const char* where) {
    if (!j.is_object() || !j.contains(key)) {
        schema_error(line, std::string("missing key \"") + key + "\" in " + where);
    }
    return j.at(key);
}

double number_at(const nlohmann::json& j, const char* key, std::size_t line, const char* where) {
    const auto& v = require_key(j, key, line, where);
    if (!v.is_number()) {
        schema_error(line, std::string("\"") + key + "\" in " + where + " must be a number");
    }
    return v.get<double>();
}

} // namespace

void GenConfig::validate() const {
    require(n_samples >= 1, "n_samples must be >= 1");
    require(min_queries >= 0 && min_queries <= max_queries, "queries_per_sample must be 0 <= lo <= hi");
    require_range(distance_m, "distance_m");
    require(distance_m.lo > 0.0, "distance_m must be > 0");
    if (bearing_deg) {
        require_range(*bearing_deg, "bearing_deg");
        require(bearing_deg->lo >= -180.0 && bearing_deg->hi <= 180.0, "bearing_deg must lie in [-180, 180]");
    }
    require_range(pitch_deg, "pitch_deg");
    require_range(roll_deg, "roll_deg");
    require_range(heading_deg, "heading_deg");
    require(pitch_deg.lo >= -90.0 && pitch_deg.hi <= 90.0, "pitch_deg must lie in [-90, 90]");
    require(roll_deg.lo >= -90.0 && roll_deg.hi <= 90.0, "roll_deg must lie in [-90, 90]");
    require(k_h > 0.0 && k_w > 0.0, "box law constants must be > 0");
    require(noise.distance_rel >= 0.0 && noise.bearing_deg >= 0.0 && noise.pitch_deg >= 0.0 &&
                noise.roll_deg >= 0.0 && noise.heading_deg >= 0.0 && noise.label_px >= 0.0,
            "noise standard deviations must be >= 0");
    require(visibility_dropout >= 0.0 && visibility_dropout <= 1.0, "visibility_dropout must lie in [0, 1]");
}

Range GenConfig::bearing_range(const geometry::CameraModel& camera) const {
    if (bearing_deg) {
        return *bearing_deg;
    }
    const double half = std::min(camera.half_hfov_deg() + 5.0, 180.0);
    return {-half, half};
}

void to_json(nlohmann::json& j, const GenConfig& c) {
    j = nlohmann::json{{"n_samples", c.n_samples},
                       {"queries_per_sample", {c.min_queries, c.max_queries}},
                       {"distance_m", {c.distance_m.lo, c.distance_m.hi}},
                       {"pitch_deg", {c.pitch_deg.lo, c.pitch_deg.hi}},
                       {"roll_deg", {c.roll_deg.lo, c.roll_deg.hi}},
                       {"heading_deg", {c.heading_deg.lo, c.heading_deg.hi}},
                       {"box_law", {{"k_h", c.k_h}, {"k_w", c.k_w}}},
                       {"noise",
                        {{"distance_rel", c.noise.distance_rel},
                         {"bearing_deg", c.noise.bearing_deg},
                         {"pitch_deg", c.noise.pitch_deg},
                         {"roll_deg", c.noise.roll_deg},
                         {"heading_deg", c.noise.heading_deg},
                         {"label_px", c.noise.label_px}}},
                       {"visibility_dropout", c.visibility_dropout},
                       {"seed", c.seed}};
    if (c.bearing_deg) {
        j["bearing_deg"] = {c.bearing_deg->lo, c.bearing_deg->hi};
    }
}

void from_json(const nlohmann::json& j, GenConfig& c) {
    if (!j.is_object()) {
        fail(ErrorKind::Config, "generator config: expected a JSON object");
    }
    c = GenConfig{};
    try {
        c.n_samples = j.value("n_samples", c.n_samples);
        if (j.contains("queries_per_sample")) {
            const auto& q = j.at("queries_per_sample");
            if (!q.is_array() || q.size() != 2) {
                fail(ErrorKind::Config, "generator config: \"queries_per_sample\" must be [lo, hi]");
            }
            c.min_queries = q[0].get<int>();
            c.max_queries = q[1].get<int>();
        }
        c.distance_m = range_from_json(j, "distance_m", c.distance_m);
        if (j.contains("bearing_deg")) {
            c.bearing_deg = range_from_json(j, "bearing_deg", {});
        }
        c.pitch_deg = range_from_json(j, "pitch_deg", c.pitch_deg);
        c.roll_deg = range_from_json(j, "roll_deg", c.roll_deg);
        c.heading_deg = range_from_json(j, "heading_deg", c.heading_deg);
        if (j.contains("box_law")) {
            const auto& b = j.at("box_law");
            c.k_h = b.value("k_h", c.k_h);
            c.k_w = b.value("k_w", c.k_w);
        }
        if (j.contains("noise")) {
            const auto& n = j.at("noise");
            c.noise.distance_rel = n.value("distance_rel", 0.0);
            c.noise.bearing_deg = n.value("bearing_deg", 0.0);
            c.noise.pitch_deg = n.value("pitch_deg", 0.0);
            c.noise.roll_deg = n.value("roll_deg", 0.0);
            c.noise.heading_deg = n.value("heading_deg", 0.0);
            c.noise.label_px = n.value("label_px", 0.0);
        }
        c.visibility_dropout = j.value("visibility_dropout", c.visibility_dropout);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, std::string("generator config: ") + e.what());
    }
    c.validate();
}

std::vector<SampleRecord> generate(const geometry::CameraModel& camera, const GenConfig& config) {
    camera.validate();
    config.validate();
    const Range bearing = config.bearing_range(camera);
    const double w_px = camera.image_w;
    const double h_px = camera.image_h;

    std::vector<SampleRecord> records;
    records.reserve(static_cast<std::size_t>(config.n_samples));
    std::size_t visible_total = 0;
    std::normal_distribution<double> normal(0.0, 1.0);

    for (int i = 0; i < config.n_samples; ++i) {
        Rng rng(derive_seed({config.seed, 0x9e17u, static_cast<std::uint64_t>(i)}));
        const ImuSample truth{uniform(rng, config.pitch_deg), uniform(rng, config.roll_deg),
                              features::wrap_degrees(uniform(rng, config.heading_deg))};
        const int n_queries =
            std::uniform_int_distribution<int>(config.min_queries, config.max_queries)(rng);

        // Heading error shifts the recorded relative bearing too: the chart
        // bearing is absolute and the relative one is formed with the
        // measured heading.
        const double heading_error = config.noise.heading_deg * normal(rng);

        SampleRecord rec;
        rec.sample_id = sample_name(static_cast<std::size_t>(i));
        rec.imu = {std::clamp(truth.pitch_deg + config.noise.pitch_deg * normal(rng), -90.0, 90.0),
                   std::clamp(truth.roll_deg + config.noise.roll_deg * normal(rng), -90.0, 90.0),
                   features::wrap_degrees(truth.heading_deg + heading_error)};

        for (int q = 0; q < n_queries; ++q) {
            const ChartQuery query{uniform(rng, config.distance_m), uniform(rng, bearing)};
            const double d_noise = normal(rng);
            const double b_noise = normal(rng);
            const double u_noise = normal(rng);
            const double v_noise = normal(rng);
            const bool dropped = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config.visibility_dropout;

            rec.queries.push_back(
                {std::max(query.distance_m * (1.0 + config.noise.distance_rel * d_noise), kMinRecordedDistanceM),
                 features::wrap_degrees(query.bearing_deg + config.noise.bearing_deg * b_noise - heading_error)});

            GtBox label;
            const auto pixel = geometry::project(camera, truth, query);
            if (pixel && geometry::in_frame(camera, *pixel) && !dropped) {
                const double u = pixel->u + config.noise.label_px * u_noise;
                const double v = pixel->v + config.noise.label_px * v_noise;
                const double box_h = std::clamp(config.k_h / query.distance_m, kMinBoxPx, h_px / 2.0);
                const double box_w = config.k_w * box_h;
                // The whole box must sit inside the frame for a valid annotation.
                if (u - box_w / 2.0 >= 0.0 && u + box_w / 2.0 <= w_px && v - box_h >= 0.0 && v <= h_px) {
                    label = {u / w_px, (v - box_h / 2.0) / h_px, box_w / w_px, box_h / h_px, true};
                    ++visible_total;
                }
            }
            rec.labels.push_back(label);
        }
        records.push_back(std::move(rec));
    }
    if (visible_total == 0) {
        fail(ErrorKind::GenerationFailed, "generation produced no visible queries; check ranges and camera");
    }
    return records;
}

DatasetSplit split(std::span<const SampleRecord> records, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        fail(ErrorKind::InvalidInput, "split: ratio must lie in (0, 1)");
    }
    if (records.size() < 2) {
        fail(ErrorKind::InvalidInput, "split: need at least 2 records");
    }
    std::vector<std::size_t> empty;
    std::vector<std::size_t> populated;
    for (std::size_t i = 0; i < records.size(); ++i) {
        (records[i].queries.empty() ? empty : populated).push_back(i);
    }
    Rng rng(derive_seed({seed, 0x5b117u}));
    std::shuffle(empty.begin(), empty.end(), rng);
    std::shuffle(populated.begin(), populated.end(), rng);

    const auto n = static_cast<long>(records.size());
    const long n_train = std::clamp(std::lround(ratio * static_cast<double>(n)), 1L, n - 1);
    long train_empty = std::lround(ratio * static_cast<double>(empty.size()));
    train_empty = std::clamp(train_empty, n_train - static_cast<long>(populated.size()),
                             std::min<long>(n_train, static_cast<long>(empty.size())));
    const long train_populated = n_train - train_empty;

    DatasetSplit out;
    out.ratio = ratio;
    out.seed = seed;
    for (std::size_t k = 0; k < empty.size(); ++k) {
        (static_cast<long>(k) < train_empty ? out.train : out.val).push_back(records[empty[k]]);
    }
    for (std::size_t k = 0; k < populated.size(); ++k) {
        (static_cast<long>(k) < train_populated ? out.train : out.val).push_back(records[populated[k]]);
    }
    return out;
}

void validate_record(const SampleRecord& r) {
    if (r.queries.size() != r.labels.size()) {
        fail(ErrorKind::Schema, "sample " + r.sample_id + ": " + std::to_string(r.queries.size()) +
                                    " queries but " + std::to_string(r.labels.size()) + " labels");
    }
    const auto bad = [&](const std::string& msg) { fail(ErrorKind::Schema, "sample " + r.sample_id + ": " + msg); };
    if (!(std::abs(r.imu.pitch_deg) <= 90.0) || !(std::abs(r.imu.roll_deg) <= 90.0)) {
        bad("pitch and roll must lie in [-90, 90]");
    }
    if (!(std::abs(r.imu.heading_deg) <= 180.0)) {
        bad("heading must lie in [-180, 180]");
    }
    for (std::size_t i = 0; i < r.queries.size(); ++i) {
        const auto& q = r.queries[i];
        if (!(q.distance_m > 0.0) || !std::isfinite(q.distance_m)) {
            bad("query " + std::to_string(i) + " distance must be > 0");
        }
        if (!(std::abs(q.bearing_deg) <= 180.0)) {
            bad("query " + std::to_string(i) + " bearing must lie in [-180, 180]");
        }
        const auto& b = r.labels[i];
        if (!b.visible) {
            continue;
        }
        const bool inside = b.w > 0.0 && b.h > 0.0 && b.c_x - b.w / 2 >= -kBoxEpsilon &&
                            b.c_x + b.w / 2 <= 1.0 + kBoxEpsilon && b.c_y - b.h / 2 >= -kBoxEpsilon &&
                            b.c_y + b.h / 2 <= 1.0 + kBoxEpsilon;
        if (!inside) {
            fail(ErrorKind::InvalidLabel,
                 "sample " + r.sample_id + ": label " + std::to_string(i) + " is degenerate or leaves the frame");
        }
    }
}

nlohmann::ordered_json record_to_json(const SampleRecord& r, bool emit_features) {
    nlohmann::ordered_json queries = nlohmann::ordered_json::array();
    for (const auto& q : r.queries) {
        nlohmann::ordered_json jq{{"distance_m", q.distance_m}, {"bearing_deg", q.bearing_deg}};
        if (emit_features) {
            jq["features"] = features::build_features(q, r.imu).values;
        }
        queries.push_back(std::move(jq));
    }
    nlohmann::ordered_json labels = nlohmann::ordered_json::array();
    for (const auto& b : r.labels) {
        if (b.visible) {
            labels.push_back({{"visible", true}, {"c_x", b.c_x}, {"c_y", b.c_y}, {"w", b.w}, {"h", b.h}});
        } else {
            labels.push_back({{"visible", false}});
        }
    }
    return {{"schema", kSchemaVersion},
            {"sample_id", r.sample_id},
            {"imu", {{"pitch_deg", r.imu.pitch_deg}, {"roll_deg", r.imu.roll_deg}, {"heading_deg", r.imu.heading_deg}}},
            {"queries", std::move(queries)},
            {"labels", std::move(labels)}};
}

namespace {

SampleRecord parse_record(const nlohmann::json& j, std::size_t line) {
    if (!j.is_object()) {
        schema_error(line, "expected a JSON object");
    }
    const auto& schema = require_key(j, "schema", line, "record");
    if (!schema.is_number_integer() || schema.get<int>() != kSchemaVersion) {
        schema_error(line, "unsupported schema version (expected " + std::to_string(kSchemaVersion) + ")");
    }
    SampleRecord r;
    const auto& id = require_key(j, "sample_id", line, "record");
    if (!id.is_string()) {
        schema_error(line, "\"sample_id\" must be a string");
    }
    r.sample_id = id.get<std::string>();
    const auto& imu = require_key(j, "imu", line, "record");
    r.imu.pitch_deg = number_at(imu, "pitch_deg", line, "imu");
    r.imu.roll_deg = number_at(imu, "roll_deg", line, "imu");
    r.imu.heading_deg = features::wrap_degrees(number_at(imu, "heading_deg", line, "imu"));

    const auto& queries = require_key(j, "queries", line, "record");
    const auto& labels = require_key(j, "labels", line, "record");
    if (!queries.is_array() || !labels.is_array()) {
        schema_error(line, "\"queries\" and \"labels\" must be arrays");
    }
    if (queries.size() != labels.size()) {
        schema_error(line, std::to_string(queries.size()) + " queries but " + std::to_string(labels.size()) +
                               " labels");
    }
    for (const auto& q : queries) {
        r.queries.push_back({number_at(q, "distance_m", line, "query"), number_at(q, "bearing_deg", line, "query")});
    }
    for (const auto& l : labels) {
        const auto& vis = require_key(l, "visible", line, "label");
        if (!vis.is_boolean()) {
            schema_error(line, "\"visible\" must be a boolean");
        }
        GtBox b;
        b.visible = vis.get<bool>();
        if (b.visible) {
            b.c_x = number_at(l, "c_x", line, "label");
            b.c_y = number_at(l, "c_y", line, "label");
            b.w = number_at(l, "w", line, "label");
            b.h = number_at(l, "h", line, "label");
        }
        r.labels.push_back(b);
    }
    try {
        validate_record(r);
    } catch (const Error& e) {
        fail(e.kind(), "line " + std::to_string(line) + ": " + e.what());
    }
    return r;
}

} // namespace

SampleRecord record_from_json(const nlohmann::json& j) { return parse_record(j, 0); }

void save_dataset(const std::string& path, std::span<const SampleRecord> records, bool emit_features) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::Config, "cannot write dataset " + path);
    }
    for (const auto& r : records) {
        out << record_to_json(r, emit_features).dump() << '\n';
    }
}

std::vector<SampleRecord> load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::Config, "cannot open dataset " + path);
    }
    std::vector<SampleRecord> records;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorKind::Parse, path + ": line " + std::to_string(line) + ": " + e.what());
        }
        records.push_back(parse_record(j, line));
    }
    return records;
}

std::vector<training::Example> visible_examples(std::span<const SampleRecord> records) {
    std::vector<training::Example> out;
    for (const auto& r : records) {
        for (std::size_t i = 0; i < r.queries.size(); ++i) {
            if (r.labels[i].visible) {
                out.push_back({features::build_features(r.queries[i], r.imu),
                               features::waterline_target(r.labels[i])});
            }
        }
    }
    return out;
}

QueryCounts count_queries(std::span<const SampleRecord> records) {
    QueryCounts c;
    c.samples = records.size();
    for (const auto& r : records) {
        for (const auto& l : r.labels) {
            (l.visible ? c.visible : c.invisible) += 1;
        }
    }
    return c;
}

} // namespace querymlp::data
