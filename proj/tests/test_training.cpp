#include "querymlp/data.hpp"
#include "querymlp/error.hpp"
#include "querymlp/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace querymlp;
using namespace querymlp::training;
using network::MlpParams;

namespace {

std::vector<double> flatten(const MlpParams& p) {
    std::vector<double> out;
    for (const auto& t : network::tensors(p)) {
        out.insert(out.end(), t.data.begin(), t.data.end());
    }
    return out;
}

std::vector<Example> constant_examples(std::size_t n, double target, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Example> out(n);
    for (auto& e : out) {
        for (auto& v : e.x.values) {
            v = u(rng);
        }
        e.target = {target, target};
    }
    return out;
}

std::vector<Example> geometry_examples(int n_samples, std::uint64_t seed, bool narrow_bearing = true) {
    data::GenConfig g;
    g.n_samples = n_samples;
    g.min_queries = 1;
    g.max_queries = 1;
    g.distance_m = {50.0, 1000.0};
    if (narrow_bearing) {
        g.bearing_deg = data::Range{-10.0, 10.0};
    }
    g.pitch_deg = {-1.0, 1.0};
    g.roll_deg = {-1.0, 1.0};
    g.seed = seed;
    return data::visible_examples(data::generate(geometry::CameraModel{}, g));
}

TrainConfig quick_config(int epochs) {
    TrainConfig c;
    c.max_epochs = epochs;
    c.batch_size = 64;
    c.seed = 5;
    return c;
}

} // namespace

TEST(AdamW, ZeroGradientNoDecayIsNoOp) {
    auto p = network::init_params(1);
    const auto before = flatten(p);
    auto state = init_opt_state(p);
    auto g = network::zero_grads();
    for (int i = 0; i < 5; ++i) {
        adamw_step(p, g, state, 1e-3, 0.0);
    }
    EXPECT_EQ(flatten(p), before);
    EXPECT_EQ(state.t, 5u);
}

TEST(AdamW, ScalarQuadraticConverges) {
    // f(θ) = ½θ² on one output bias, every other gradient zero.
    auto p = network::zero_params();
    p.out_bias(0) = 1.0;
    auto state = init_opt_state(p);
    for (int i = 0; i < 500; ++i) {
        auto g = network::zero_grads();
        g.out_bias(0) = p.out_bias(0);
        adamw_step(p, g, state, 0.1, 0.0);
    }
    EXPECT_LT(std::abs(p.out_bias(0)), 1e-3);
}

TEST(AdamW, FirstStepMagnitudeIsLearningRate) {
    for (double c : {-1e3, -1.0, 1e-3, 7.0}) {
        auto p = network::init_params(2);
        const auto before = flatten(p);
        auto state = init_opt_state(p);
        auto g = network::zero_grads();
        for (auto& t : network::grad_tensors(g)) {
            std::fill(t.begin(), t.end(), c);
        }
        adamw_step(p, g, state, 0.01, 0.0);
        const auto views = network::tensors(p);
        std::size_t offset = 0;
        for (const auto& v : views) {
            for (std::size_t i = 0; i < v.data.size(); ++i) {
                const double delta = v.data[i] - before[offset + i];
                if (v.learnable) {
                    EXPECT_NEAR(delta, -0.01 * (c > 0 ? 1.0 : -1.0), 1e-6) << v.name;
                } else {
                    EXPECT_EQ(delta, 0.0) << v.name;
                }
            }
            offset += v.data.size();
        }
    }
}

TEST(AdamW, DecayOnlyTouchesWeights) {
    auto p = network::init_params(3);
    const auto start = network::init_params(3);
    auto state = init_opt_state(p);
    const double lr = 0.01;
    const double wd = 0.5;
    constexpr int kSteps = 20;
    for (int i = 0; i < kSteps; ++i) {
        auto g = network::zero_grads();
        adamw_step(p, g, state, lr, wd);
    }
    const double shrink = std::pow(1.0 - lr * wd, kSteps);
    const auto now = network::tensors(p);
    const auto then = network::tensors(start);
    for (std::size_t k = 0; k < now.size(); ++k) {
        for (std::size_t i = 0; i < now[k].data.size(); ++i) {
            const double want = now[k].decayed ? then[k].data[i] * shrink : then[k].data[i];
            EXPECT_NEAR(now[k].data[i], want, 1e-14) << now[k].name;
        }
    }
}

TEST(AdamW, NonFiniteGradientLeavesParamsUntouched) {
    auto p = network::init_params(4);
    const auto before = flatten(p);
    auto state = init_opt_state(p);
    auto g = network::zero_grads();
    g.hidden[1].bn_gain(3) = std::numeric_limits<double>::infinity();
    try {
        adamw_step(p, g, state, 1e-3, 1e-4);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Numeric);
    }
    EXPECT_EQ(flatten(p), before);
    EXPECT_EQ(state.t, 0u);
}

TEST(CosineLr, Endpoints) {
    EXPECT_EQ(cosine_lr(0, 1000, 1e-3, 0.0), 1e-3);
    EXPECT_NEAR(cosine_lr(1000, 1000, 1e-3, 0.0), 0.0, 1e-20);
    EXPECT_NEAR(cosine_lr(1000, 1000, 1e-3, 1e-5), 1e-5, 1e-20);
    EXPECT_NEAR(cosine_lr(500, 1000, 1e-3, 0.0), 5e-4, 1e-18);
    EXPECT_THROW(cosine_lr(1001, 1000, 1e-3, 0.0), Error);
    EXPECT_THROW(cosine_lr(-1, 1000, 1e-3, 0.0), Error);
}

TEST(TrainConfig, RecipeDefaults) {
    const TrainConfig c;
    EXPECT_EQ(c.lr, 1e-3);
    EXPECT_EQ(c.weight_decay, 1e-4);
    EXPECT_EQ(c.batch_size, 256);
    EXPECT_EQ(c.patience, 60);
    EXPECT_EQ(c.max_epochs, 1000);
    EXPECT_EQ(c.dropout_p, 0.2);
    EXPECT_EQ(c.eta_min, 0.0);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
    TrainConfig c;
    c.lr = 5e-4;
    c.seed = 99;
    const nlohmann::json j = c;
    const auto back = j.get<TrainConfig>();
    EXPECT_EQ(back.lr, 5e-4);
    EXPECT_EQ(back.seed, 99u);

    for (const auto& [key, value] : std::vector<std::pair<std::string, nlohmann::json>>{
             {"lr", 0.0}, {"batch_size", 1}, {"patience", 0}, {"max_epochs", 0}, {"dropout_p", 1.0},
             {"lr", "fast"}}) {
        auto bad = j;
        bad[key] = value;
        try {
            bad.get<TrainConfig>();
            ADD_FAILURE() << key;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::Config) << key;
        }
    }
}

TEST(Train, EmptySetsAreConfigErrors) {
    const auto some = constant_examples(10, 0.5, 1);
    const std::vector<Example> none;
    for (auto [tr, va] : {std::pair{&none, &some}, std::pair{&some, &none}}) {
        try {
            train(*tr, *va, quick_config(1));
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::Config);
        }
    }
}

TEST(Train, Deterministic) {
    const auto tr = geometry_examples(400, 1);
    const auto va = geometry_examples(100, 2);
    const auto a = train(tr, va, quick_config(4));
    const auto b = train(tr, va, quick_config(4));
    ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
    for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
        EXPECT_EQ(a.history.epochs[i].train_loss, b.history.epochs[i].train_loss);
        EXPECT_EQ(a.history.epochs[i].val_loss, b.history.epochs[i].val_loss);
    }
    EXPECT_EQ(flatten(a.best_params), flatten(b.best_params));
}

TEST(Train, PatienceOneStopsAfterFirstWorsening) {
    // Training pulls outputs toward 0.1 while validation wants 0.9, so the
    // validation loss worsens from the second epoch on.
    const auto tr = constant_examples(512, 0.1, 3);
    const auto va = constant_examples(64, 0.9, 4);
    auto c = quick_config(50);
    c.patience = 1;
    const auto r = train(tr, va, c);
    ASSERT_EQ(r.history.epochs.size(), 2u);
    EXPECT_GT(r.history.epochs[1].val_loss, r.history.epochs[0].val_loss);
    EXPECT_EQ(r.history.best_epoch, 1);
    EXPECT_EQ(r.history.stop_reason, StopReason::EarlyStop);
}

TEST(Train, HistoryInvariants) {
    const auto tr = geometry_examples(600, 5);
    const auto va = geometry_examples(150, 6);
    auto c = quick_config(30);
    c.patience = 4;
    const auto r = train(tr, va, c);
    const auto& h = r.history;
    ASSERT_FALSE(h.epochs.empty());
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : h.epochs) {
        best = std::min(best, e.val_loss);
        EXPECT_DOUBLE_EQ(e.lr, cosine_lr(e.epoch - 1, c.max_epochs, c.lr, c.eta_min));
    }
    EXPECT_EQ(h.best_val_loss, best);
    EXPECT_LE(static_cast<int>(h.epochs.size()), std::min(h.best_epoch + c.patience + 1, c.max_epochs));
    // Returned parameters are the best checkpoint, bit-exactly.
    EXPECT_EQ(evaluate_loss(r.best_params, va), h.best_val_loss);
}

TEST(Train, NonFiniteLossPreservesHistory) {
    const auto tr = geometry_examples(200, 7);
    auto va = geometry_examples(50, 8);
    va[3].target.c_x = std::numeric_limits<double>::quiet_NaN();
    try {
        train(tr, va, quick_config(5));
        FAIL();
    } catch (const TrainingAborted& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Numeric);
        EXPECT_EQ(e.history().epochs.size(), 1u);
    }
}

TEST(Train, BeatsConstantPredictorAcrossFieldOfView) {
    const auto all = geometry_examples(5000, 9, false);
    ASSERT_GT(all.size(), 4000u); // boxes near the frame edge can leave it
    const std::size_t cut = all.size() * 4 / 5;
    const std::span<const Example> tr(all.data(), cut);
    const std::span<const Example> va(all.data() + cut, all.size() - cut);
    TrainConfig c;
    c.max_epochs = 40;
    c.seed = 1;
    const auto r = train(tr, va, c);
    const double baseline = constant_predictor_loss(tr, va);
    EXPECT_LE(r.history.best_val_loss * 10.0, baseline)
        << "best " << r.history.best_val_loss << " constant " << baseline;
}

TEST(History, CsvAndSummary) {
    TrainHistory h;
    h.epochs = {{1, 0.5, 0.4, 1e-3, 0.1}, {2, 0.3, 0.45, 9e-4, 0.1}};
    h.best_epoch = 1;
    h.best_val_loss = 0.4;
    h.stop_reason = StopReason::EarlyStop;
    const auto path = std::filesystem::temp_directory_path() / "querymlp_history.csv";
    write_history_csv(path.string(), h);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "epoch,train_loss,val_loss,lr,seconds");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
    }
    EXPECT_EQ(rows, 2);
    std::filesystem::remove(path);

    const auto s = history_summary(h);
    EXPECT_EQ(s["best_epoch"], 1);
    EXPECT_EQ(s["best_val_loss"], 0.4);
    EXPECT_EQ(s["stop_reason"], "early-stop");
}
