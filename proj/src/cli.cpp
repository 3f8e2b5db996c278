#include "querymlp/cli.hpp"

#include "querymlp/features.hpp"
#include "querymlp/geometry.hpp"
#include "querymlp/network.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace querymlp::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kVerifyTolerance = 1e-9;

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

/// Record of one command invocation, written next to its outputs.
struct RunManifest {
    std::string command;
    nlohmann::ordered_json configs = nlohmann::ordered_json::object();
    nlohmann::ordered_json seeds = nlohmann::ordered_json::object();
    nlohmann::ordered_json artifacts = nlohmann::ordered_json::object();
    std::string started_at = utc_now();

    void write(const std::string& path) const {
        const nlohmann::ordered_json doc{{"command", command},
                                         {"tool_version", kToolVersion},
                                         {"configs", configs},
                                         {"seeds", seeds},
                                         {"artifacts", artifacts},
                                         {"started_at", started_at},
                                         {"finished_at", utc_now()}};
        std::ofstream out(path);
        if (!out) {
            fail(ErrorKind::Config, "cannot write manifest " + path);
        }
        out << doc.dump(2) << '\n';
    }
};

nlohmann::json read_json_file(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::Config, std::string("cannot open ") + what + " " + path);
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Config, std::string(what) + " " + path + ": " + e.what());
    }
}

geometry::CameraModel camera_or_default(const std::optional<std::string>& path) {
    return path ? geometry::load_camera(*path) : geometry::CameraModel{};
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        fail(ErrorKind::Config, "cannot create output directory " + dir + ": " + ec.message());
    }
}

void write_json(const std::string& path, const nlohmann::json& doc) {
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::Config, "cannot write " + path);
    }
    out << doc.dump(2) << '\n';
}

} // namespace

int exit_code_for(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::Config:
        return kExitConfig;
    case ErrorKind::Numeric:
        return kExitNumeric;
    case ErrorKind::Checkpoint:
        return kExitCheckpoint;
    case ErrorKind::InvalidInput:
    case ErrorKind::InvalidLabel:
    case ErrorKind::InvalidBatch:
    case ErrorKind::InvalidState:
    case ErrorKind::Parse:
    case ErrorKind::Schema:
    case ErrorKind::GenerationFailed:
        return kExitData;
    }
    return kExitUsage;
}

GenSummary cmd_gen(const GenOptions& options) {
    RunManifest manifest{"gen"};
    const auto camera = camera_or_default(options.camera_path);
    data::GenConfig config;
    if (options.config_path) {
        config = read_json_file(*options.config_path, "generator config").get<data::GenConfig>();
    }
    if (options.seed) {
        config.seed = *options.seed;
    }
    const auto records = data::generate(camera, config);
    data::save_dataset(options.out_path, records, options.emit_features);

    GenSummary summary;
    summary.counts = data::count_queries(records);
    if (options.verify) {
        const auto& n = config.noise;
        if (n.distance_rel != 0.0 || n.bearing_deg != 0.0 || n.pitch_deg != 0.0 || n.roll_deg != 0.0 ||
            n.heading_deg != 0.0 || n.label_px != 0.0) {
            fail(ErrorKind::Config, "--verify requires a noise-free generator config");
        }
        // Re-read from disk so the check covers serialization as well.
        for (const auto& rec : data::load_dataset(options.out_path)) {
            for (std::size_t i = 0; i < rec.queries.size(); ++i) {
                if (!rec.labels[i].visible) {
                    continue;
                }
                const auto target = features::waterline_target(rec.labels[i]);
                const auto pixel = geometry::project(camera, rec.imu, rec.queries[i]);
                if (!pixel || std::abs(target.c_x - pixel->u / camera.image_w) > kVerifyTolerance ||
                    std::abs(target.c_y_plus_half_h - pixel->v / camera.image_h) > kVerifyTolerance) {
                    fail(ErrorKind::GenerationFailed, "verify: sample " + rec.sample_id + " query " +
                                                          std::to_string(i) + " disagrees with the projection");
                }
                ++summary.verified_queries;
            }
        }
        summary.verified = true;
    }

    manifest.configs["camera"] = options.camera_path.value_or("<default>");
    manifest.configs["generator"] = options.config_path.value_or("<default>");
    manifest.seeds["generator"] = config.seed;
    manifest.artifacts["dataset"] = options.out_path;
    manifest.write(options.out_path + ".manifest.json");
    return summary;
}

training::TrainResult cmd_train(const TrainOptions& options) {
    RunManifest manifest{"train"};
    training::TrainConfig config;
    if (options.config_path) {
        config = read_json_file(*options.config_path, "train config").get<training::TrainConfig>();
    }
    if (options.seed) {
        config.seed = *options.seed;
    }
    config.validate();

    const auto records = data::load_dataset(options.dataset_path);
    std::vector<training::Example> train_set;
    std::vector<training::Example> val_set;
    if (options.val_path) {
        train_set = data::visible_examples(records);
        val_set = data::visible_examples(data::load_dataset(*options.val_path));
    } else {
        if (records.size() < 2) {
            fail(ErrorKind::Config, "train: dataset needs at least 2 samples to split");
        }
        const auto parts = data::split(records, config.split_ratio, config.seed);
        train_set = data::visible_examples(parts.train);
        val_set = data::visible_examples(parts.val);
    }
    if (train_set.empty() && val_set.empty()) {
        fail(ErrorKind::Config, "train: dataset has no visible queries");
    }
    if (train_set.size() < 2 || val_set.empty()) {
        fail(ErrorKind::Config, "train: need >= 2 visible training queries and >= 1 visible validation query");
    }
    spdlog::info("training on {} visible queries, validating on {}", train_set.size(), val_set.size());

    ensure_dir(options.out_dir);
    const fs::path dir(options.out_dir);
    const std::string history_csv = (dir / "history.csv").string();
    const std::string history_json = (dir / "history.json").string();
    const std::string checkpoint = (dir / "checkpoint.json").string();

    training::TrainResult result;
    try {
        result = training::train(train_set, val_set, config);
    } catch (const training::TrainingAborted& e) {
        training::write_history_csv(history_csv, e.history());
        auto summary = training::history_summary(e.history());
        summary["stop_reason"] = "numeric-failure";
        write_json(history_json, summary);
        throw;
    }
    network::save_checkpoint(checkpoint, result.best_params,
                             {config.seed, config.seed, result.history.best_epoch});
    training::write_history_csv(history_csv, result.history);
    write_json(history_json, training::history_summary(result.history));

    manifest.configs["dataset"] = options.dataset_path;
    manifest.configs["validation"] = options.val_path.value_or("<split>");
    manifest.configs["train"] = options.config_path.value_or("<default>");
    manifest.configs["resolved"] = nlohmann::json(config);
    manifest.seeds["train"] = config.seed;
    manifest.artifacts = {{"checkpoint", checkpoint}, {"history_csv", history_csv}, {"history_json", history_json}};
    manifest.write((dir / "manifest.json").string());
    return result;
}

metrics::ErrorStats cmd_eval(const EvalOptions& options) {
    RunManifest manifest{"eval"};
    const auto camera = camera_or_default(options.camera_path);
    const auto params = network::load_checkpoint(options.checkpoint_path);
    const auto records = data::load_dataset(options.dataset_path);

    std::vector<features::FeatureVector> inputs;
    std::vector<WaterlinePoint> targets;
    std::vector<std::pair<std::string, std::size_t>> keys;
    for (const auto& r : records) {
        for (std::size_t i = 0; i < r.queries.size(); ++i) {
            if (r.labels[i].visible) {
                inputs.push_back(features::build_features(r.queries[i], r.imu));
                targets.push_back(features::waterline_target(r.labels[i]));
                keys.emplace_back(r.sample_id, i);
            }
        }
    }
    if (inputs.empty()) {
        fail(ErrorKind::InvalidInput, "eval: no visible queries in " + options.dataset_path);
    }
    const network::Matrix pred = network::forward_eval(params, network::to_batch(inputs));
    std::vector<double> errors(inputs.size());
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto row = static_cast<Eigen::Index>(k);
        errors[k] = metrics::pixel_error({pred(row, 0), pred(row, 1)}, targets[k], camera.image_w, camera.image_h);
    }
    const auto stats = metrics::error_stats(errors);

    ensure_dir(options.out_dir);
    const fs::path dir(options.out_dir);
    write_json((dir / "error_stats.json").string(), metrics::to_json(stats));
    {
        std::ofstream csv(dir / "errors.csv");
        csv << "sample_id,query_index,error_px\n" << std::setprecision(17);
        for (std::size_t k = 0; k < errors.size(); ++k) {
            csv << keys[k].first << ',' << keys[k].second << ',' << errors[k] << '\n';
        }
    }
    manifest.configs = {{"dataset", options.dataset_path},
                        {"checkpoint", options.checkpoint_path},
                        {"camera", options.camera_path.value_or("<default>")}};
    manifest.artifacts = {{"error_stats", (dir / "error_stats.json").string()},
                          {"errors_csv", (dir / "errors.csv").string()}};
    manifest.write((dir / "manifest.json").string());
    return stats;
}

namespace {

metrics::Box box_from_json(const nlohmann::json& j, std::size_t line, const char* where) {
    const auto num = [&](const char* key) {
        if (!j.is_object() || !j.contains(key) || !j.at(key).is_number()) {
            fail(ErrorKind::Parse, "line " + std::to_string(line) + ": " + where + " needs numeric \"" + key + "\"");
        }
        return j.at(key).get<double>();
    };
    return {num("c_x"), num("c_y"), num("w"), num("h")};
}

} // namespace

std::vector<ScoredQuery> load_scored_queries(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::Config, "cannot open predictions " + path);
    }
    std::vector<ScoredQuery> rows;
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
        if (!j.is_object() || !j.contains("objectness_logit") || !j.at("objectness_logit").is_number() ||
            !j.contains("box") || !j.contains("gt")) {
            fail(ErrorKind::Parse, path + ": line " + std::to_string(line) +
                                       ": expected keys objectness_logit, box, gt");
        }
        ScoredQuery row;
        row.prediction.objectness_logit = j.at("objectness_logit").get<double>();
        row.prediction.box = box_from_json(j.at("box"), line, "box");
        const auto& gt = j.at("gt");
        if (!gt.is_object() || !gt.contains("visible") || !gt.at("visible").is_boolean()) {
            fail(ErrorKind::Parse, path + ": line " + std::to_string(line) + ": gt needs boolean \"visible\"");
        }
        row.gt.visible = gt.at("visible").get<bool>();
        if (row.gt.visible) {
            const auto b = box_from_json(gt, line, "gt");
            row.gt.c_x = b.c_x;
            row.gt.c_y = b.c_y;
            row.gt.w = b.w;
            row.gt.h = b.h;
        }
        if (!std::isfinite(row.prediction.objectness_logit)) {
            fail(ErrorKind::Parse, path + ": line " + std::to_string(line) + ": non-finite logit");
        }
        rows.push_back(row);
    }
    return rows;
}

void save_scored_queries(const std::string& path, const std::vector<ScoredQuery>& rows) {
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::Config, "cannot write " + path);
    }
    for (const auto& r : rows) {
        const auto& b = r.prediction.box;
        nlohmann::ordered_json j{{"objectness_logit", r.prediction.objectness_logit},
                                 {"box", {{"c_x", b.c_x}, {"c_y", b.c_y}, {"w", b.w}, {"h", b.h}}}};
        if (r.gt.visible) {
            j["gt"] = {{"visible", true}, {"c_x", r.gt.c_x}, {"c_y", r.gt.c_y}, {"w", r.gt.w}, {"h", r.gt.h}};
        } else {
            j["gt"] = {{"visible", false}};
        }
        out << j.dump() << '\n';
    }
}

metrics::CalibrationResult cmd_calibrate(const CalibrateOptions& options) {
    RunManifest manifest{"calibrate"};
    const auto rows = load_scored_queries(options.predictions_path);
    std::vector<metrics::QueryPrediction> predictions;
    std::vector<GtBox> gts;
    for (const auto& r : rows) {
        predictions.push_back(r.prediction);
        gts.push_back(r.gt);
    }
    const auto result = metrics::calibrate_bias(predictions, gts, options.lo, options.hi, options.step,
                                                {options.threshold, options.iou_gate});
    ensure_dir(options.out_dir);
    const fs::path dir(options.out_dir);
    nlohmann::ordered_json best{{"best_bias", result.best_bias},
                                {"threshold", options.threshold},
                                {"range", {options.lo, options.hi}},
                                {"step", options.step},
                                {"points", result.curve.size()},
                                {"report", metrics::to_json(result.best)}};
    {
        std::ofstream out(dir / "calibration.json");
        out << best.dump(2) << '\n';
    }
    const std::string curve_path = options.curve_csv_path.value_or((dir / "curve.csv").string());
    metrics::write_curve_csv(curve_path, result);
    manifest.configs = {{"predictions", options.predictions_path}};
    manifest.artifacts = {{"calibration", (dir / "calibration.json").string()}, {"curve_csv", curve_path}};
    manifest.write((dir / "manifest.json").string());
    return result;
}

std::size_t cmd_predict(const PredictOptions& options) {
    RunManifest manifest{"predict"};
    const auto params = network::load_checkpoint(options.checkpoint_path);
    const auto records = data::load_dataset(options.dataset_path);

    std::vector<features::FeatureVector> inputs;
    for (const auto& r : records) {
        for (const auto& q : r.queries) {
            inputs.push_back(features::build_features(q, r.imu));
        }
    }
    network::Matrix pred;
    if (!inputs.empty()) {
        pred = network::forward_eval(params, network::to_batch(inputs));
    }

    std::ofstream out(options.out_path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::Config, "cannot write " + options.out_path);
    }
    Eigen::Index row = 0;
    for (const auto& r : records) {
        for (std::size_t i = 0; i < r.queries.size(); ++i, ++row) {
            const WaterlinePoint p{pred(row, 0), pred(row, 1)};
            const auto query = features::build_decoder_query(r.queries[i], p);
            nlohmann::ordered_json j{{"sample_id", r.sample_id},
                                     {"query_index", i},
                                     {"prediction", {{"c_x", p.c_x}, {"c_y_plus_half_h", p.c_y_plus_half_h}}},
                                     {"decoder_query", query.values}};
            if (options.emit_features) {
                j["features"] = inputs[static_cast<std::size_t>(row)].values;
            }
            out << j.dump() << '\n';
        }
    }
    manifest.configs = {{"dataset", options.dataset_path}, {"checkpoint", options.checkpoint_path}};
    manifest.artifacts = {{"predictions", options.out_path}};
    manifest.write(options.out_path + ".manifest.json");
    return inputs.size();
}

namespace {

void configure_logging() {
    if (!spdlog::get("querymlp")) {
        spdlog::set_default_logger(spdlog::stderr_color_mt("querymlp"));
    }
    spdlog::set_level(spdlog::level::info);
    if (const char* level = std::getenv("QUERYMLP_LOG_LEVEL")) {
        spdlog::set_level(spdlog::level::from_str(level));
    }
}

} // namespace

int run(int argc, char** argv) {
    configure_logging();
    CLI::App app{"QueryMLP: learned world-to-image projection for chart buoys"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset from the pinhole model");
    gen_cmd->add_option("--camera", gen.camera_path, "Camera JSON");
    gen_cmd->add_option("--config", gen.config_path, "Generator config JSON");
    gen_cmd->add_option("--out", gen.out_path, "Output dataset JSONL")->required();
    gen_cmd->add_option("--seed", gen.seed, "Override the generator seed");
    gen_cmd->add_flag("--verify", gen.verify, "Re-check labels against the projection");
    gen_cmd->add_flag("--emit-features", gen.emit_features, "Write feature vectors per query");

    TrainOptions train;
    auto* train_cmd = app.add_subcommand("train", "Train QueryMLP");
    train_cmd->add_option("--dataset", train.dataset_path, "Training dataset JSONL")->required();
    train_cmd->add_option("--val", train.val_path, "Validation dataset JSONL (default: split --dataset)");
    train_cmd->add_option("--config", train.config_path, "Train config JSON");
    train_cmd->add_option("--out", train.out_dir, "Output directory")->required();
    train_cmd->add_option("--seed", train.seed, "Override the training seed");

    EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval", "Pixel-error statistics on visible queries");
    eval_cmd->add_option("--dataset", eval.dataset_path, "Dataset JSONL")->required();
    eval_cmd->add_option("--checkpoint", eval.checkpoint_path, "Checkpoint JSON")->required();
    eval_cmd->add_option("--out", eval.out_dir, "Output directory")->required();
    eval_cmd->add_option("--camera", eval.camera_path, "Camera JSON (image size)");

    CalibrateOptions cal;
    std::vector<double> range;
    auto* cal_cmd = app.add_subcommand("calibrate", "Grid-sweep the objectness logit bias");
    cal_cmd->add_option("--predictions,--dataset", cal.predictions_path, "Scored-query JSONL")->required();
    cal_cmd->add_option("--out", cal.out_dir, "Output directory")->required();
    cal_cmd->add_option("--step", cal.step, "Grid step")->capture_default_str();
    cal_cmd->add_option("--range", range, "Bias range lo,hi")->delimiter(',')->expected(2);
    cal_cmd->add_option("--threshold", cal.threshold, "Sigmoid threshold")->capture_default_str();
    cal_cmd->add_option("--iou-gate", cal.iou_gate, "Count low-IoU matches as FP+FN");
    cal_cmd->add_option("--curve-csv", cal.curve_csv_path, "Curve CSV path (default: <out>/curve.csv)");

    PredictOptions predict;
    auto* predict_cmd = app.add_subcommand("predict", "Predict waterline points and decoder queries");
    predict_cmd->add_option("--dataset", predict.dataset_path, "Dataset JSONL")->required();
    predict_cmd->add_option("--checkpoint", predict.checkpoint_path, "Checkpoint JSON")->required();
    predict_cmd->add_option("--out", predict.out_path, "Output JSONL")->required();
    predict_cmd->add_flag("--emit-features", predict.emit_features, "Include feature vectors");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen_cmd) {
            const auto s = cmd_gen(gen);
            std::cout << "samples " << s.counts.samples << " visible " << s.counts.visible << " invisible "
                      << s.counts.invisible << '\n';
            if (s.verified) {
                std::cout << "verified " << s.verified_queries << " visible queries against the projection\n";
            }
        } else if (*train_cmd) {
            const auto r = cmd_train(train);
            std::cout << "best_epoch " << r.history.best_epoch << " best_val_loss " << std::setprecision(9)
                      << r.history.best_val_loss << " stop " << training::to_string(r.history.stop_reason)
                      << '\n';
        } else if (*eval_cmd) {
            const auto s = cmd_eval(eval);
            std::cout << "n " << s.n << " median_px " << s.median_px << " mean_px " << s.mean_px << " p90_px "
                      << s.p90_px << '\n';
        } else if (*cal_cmd) {
            if (!range.empty()) {
                cal.lo = range[0];
                cal.hi = range[1];
            }
            const auto r = cmd_calibrate(cal);
            std::cout << "best_bias " << r.best_bias << " overall " << r.best.overall << " points "
                      << r.curve.size() << '\n';
        } else if (*predict_cmd) {
            std::cout << "rows " << cmd_predict(predict) << '\n';
        }
    } catch (const Error& e) {
        spdlog::error("{} error: {}", to_string(e.kind()), e.what());
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    }
    return kExitOk;
}

} // namespace querymlp::cli
