#include <cmath>

#include "doctest.h"

#include "auxmtl/trainer.hpp"
#include "auxmtl/util.hpp"

using namespace auxmtl;

namespace {

std::vector<scenegen::Sample> tiny_dataset(std::int64_t n, std::uint64_t seed) {
    scenegen::LabelDist dist;
    dist.img_h = 16;
    dist.img_w = 16;
    std::vector<scenegen::Sample> out;
    for (std::int64_t i = 0; i < n; ++i) out.push_back(scenegen::generate_sample(seed, i, dist));
    return out;
}

ModelConfig tiny_model(TaskSet tasks) {
    ModelConfig cfg;
    cfg.input_h = 16;
    cfg.input_w = 16;
    cfg.encoder_channels = {4, 8};
    cfg.output_stride = 4;
    cfg.head_channels = 8;
    cfg.task_set = std::move(tasks);
    return cfg;
}

}  // namespace

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
    std::map<std::string, Tensor> params{{"p", Tensor({3}, {1.0, -2.0, 0.5})}};
    const auto before = params.at("p").data;
    std::map<std::string, Tensor> grads{{"p", Tensor({3}, 0.0)}};
    AdamState st;
    Hyperparams hp;
    for (int i = 0; i < 5; ++i) adam_step(params, grads, st, hp);
    CHECK(params.at("p").data == before);
}

TEST_CASE("adam first step has magnitude close to the learning rate") {
    std::map<std::string, Tensor> params{{"p", Tensor::scalar(3.0)}};
    std::map<std::string, Tensor> grads{{"p", Tensor::scalar(1.0)}};
    AdamState st;
    Hyperparams hp;
    hp.lr = 0.01;
    adam_step(params, grads, st, hp);
    const double step = 3.0 - params.at("p").item();
    CHECK(step == doctest::Approx(hp.lr).epsilon(1e-6));
}

TEST_CASE("adam update opposes the gradient sign for scalars") {
    Rng rng(51);
    for (int i = 0; i < 100; ++i) {
        const double p0 = rng.uniform(-5.0, 5.0);
        const double gv = rng.uniform(-3.0, 3.0);
        if (gv == 0.0) continue;
        std::map<std::string, Tensor> params{{"p", Tensor::scalar(p0)}};
        std::map<std::string, Tensor> grads{{"p", Tensor::scalar(gv)}};
        AdamState st;
        Hyperparams hp;
        adam_step(params, grads, st, hp);
        const double delta = params.at("p").item() - p0;
        CHECK(delta * gv < 0.0);
    }
}

TEST_CASE("adam rejects non-finite gradients with a diagnostic") {
    std::map<std::string, Tensor> params{{"p", Tensor::scalar(1.0)}};
    std::map<std::string, Tensor> grads{{"p", Tensor::scalar(std::nan(""))}};
    AdamState st;
    Hyperparams hp;
    CHECK_THROWS_WITH_AS(adam_step(params, grads, st, hp), doctest::Contains("p"),
                         std::runtime_error);
}

TEST_CASE("zero-iteration history reports the initial c") {
    const auto train_data = tiny_dataset(8, 1);
    const auto test_data = tiny_dataset(4, 2);
    ExperimentSpec spec;
    spec.tasks = {TaskId::Seg, TaskId::Depth, TaskId::Time, TaskId::Weather};
    spec.model = tiny_model(spec.tasks);
    spec.hyper.max_iters = 0;
    spec.data = {&train_data, &test_data};
    const auto res = train(spec);
    for (TaskId t : spec.tasks) {
        const auto c = res.history.find(0, task_name(t), "c");
        REQUIRE(c.has_value());
        CHECK(*c == 0.25);
    }
}

TEST_CASE("iterating only c on frozen losses converges to the closed form") {
    const double raw = 1.9;
    Hyperparams hp;
    hp.lr = 0.02;
    std::map<std::string, Tensor> cp{{"c", Tensor::scalar(0.25)}};
    AdamState st;
    for (int i = 0; i < 4000; ++i) {
        Graph g;
        Tensor c = cp.at("c");
        c.requires_grad = true;
        const NodeId cn = g.input(c);
        std::map<TaskId, NodeId> rawm{{TaskId::Seg, g.constant(Tensor::scalar(raw))}};
        std::map<TaskId, NodeId> cm{{TaskId::Seg, cn}};
        const auto cl = losses::combine_learned(g, rawm, cm, RegKind::Pos);
        auto grads = g.backward(cl.combined);
        std::map<std::string, Tensor> gm{{"c", grads.at(cn)}};
        adam_step(cp, gm, st, hp);
    }
    const double c = cp.at("c").item();
    CHECK(c * c == doctest::Approx(losses::optimal_weight_sq(raw)).epsilon(1e-4));
}

TEST_CASE("training reduces the loss and is deterministic") {
    const auto train_data = tiny_dataset(64, 3);
    const auto test_data = tiny_dataset(16, 4);
    ExperimentSpec spec;
    spec.tasks = {TaskId::Depth};
    spec.model = tiny_model(spec.tasks);
    spec.hyper.max_iters = 150;
    spec.hyper.snapshot_every = 75;
    spec.hyper.mode = WeightingMode::Single;
    spec.hyper.seed = 11;
    spec.data = {&train_data, &test_data};

    const auto a = train(spec);
    const auto first = a.history.find(1, "all", "combined");
    const auto last = a.history.find(150, "all", "combined");
    REQUIRE(first.has_value());
    REQUIRE(last.has_value());
    CHECK(*last < 0.7 * *first);

    const auto b = train(spec);
    REQUIRE(a.history.rows.size() == b.history.rows.size());
    for (std::size_t i = 0; i < a.history.rows.size(); ++i) {
        CHECK(a.history.rows[i].value == b.history.rows[i].value);
        CHECK(a.history.rows[i].series == b.history.rows[i].series);
    }
}

TEST_CASE("metric records contain exactly the active tasks") {
    const auto train_data = tiny_dataset(16, 5);
    const auto test_data = tiny_dataset(8, 6);
    ExperimentSpec spec;
    spec.tasks = {TaskId::Seg, TaskId::Depth};
    spec.model = tiny_model(spec.tasks);
    spec.hyper.max_iters = 4;
    spec.hyper.snapshot_every = 4;
    spec.data = {&train_data, &test_data};
    const auto res = train(spec);
    REQUIRE(res.history.snapshots.size() == 1);
    const auto& rec = res.history.snapshots.back();
    CHECK(rec.miou.has_value());
    CHECK(rec.depth_rmse_r.has_value());
    CHECK_FALSE(rec.rmsctd_min.has_value());
    CHECK_FALSE(rec.weather_acc.has_value());
}

TEST_CASE("learned mode logs c every iteration and keeps the combined loss non-negative") {
    const auto train_data = tiny_dataset(32, 7);
    const auto test_data = tiny_dataset(8, 8);
    ExperimentSpec spec;
    spec.tasks = {TaskId::Seg, TaskId::Depth, TaskId::Weather};
    spec.model = tiny_model(spec.tasks);
    spec.hyper.max_iters = 30;
    spec.hyper.snapshot_every = 30;
    spec.hyper.reg = RegKind::Pos;
    spec.data = {&train_data, &test_data};
    const auto res = train(spec);
    for (std::int64_t it = 1; it <= 30; ++it) {
        const auto comb = res.history.find(it, "all", "combined");
        REQUIRE(comb.has_value());
        CHECK(*comb >= 0.0);
        for (TaskId t : spec.tasks) {
            CHECK(res.history.find(it, task_name(t), "c").has_value());
            CHECK(res.history.find(it, task_name(t), "raw_loss").has_value());
            CHECK(res.history.find(it, task_name(t), "weighted_loss").has_value());
        }
    }
}

TEST_CASE("divergence is reported with the iteration number") {
    const auto train_data = tiny_dataset(16, 9);
    const auto test_data = tiny_dataset(8, 10);
    ExperimentSpec spec;
    spec.tasks = {TaskId::Depth};
    spec.model = tiny_model(spec.tasks);
    spec.hyper.max_iters = 50;
    spec.hyper.mode = WeightingMode::Single;
    spec.hyper.lr = 1e18;  // blow up on purpose
    spec.data = {&train_data, &test_data};
    CHECK_THROWS_AS(train(spec), DivergenceError);
}

TEST_CASE("single mode rejects multi-task sets") {
    const auto train_data = tiny_dataset(8, 11);
    const auto test_data = tiny_dataset(4, 12);
    ExperimentSpec spec;
    spec.tasks = {TaskId::Seg, TaskId::Depth};
    spec.model = tiny_model(spec.tasks);
    spec.hyper.mode = WeightingMode::Single;
    spec.data = {&train_data, &test_data};
    CHECK_THROWS_AS(train(spec), std::invalid_argument);
}

TEST_CASE("matrix covers the eight task sets with the right presence pattern") {
    const auto train_data = tiny_dataset(24, 13);
    const auto test_data = tiny_dataset(8, 14);
    ModelConfig cfg = tiny_model({TaskId::Seg});
    Hyperparams hp;
    hp.max_iters = 3;
    hp.snapshot_every = 3;
    const auto outcomes = run_matrix(cfg, hp, {&train_data, &test_data}, 2);
    REQUIRE(outcomes.size() == 8);

    std::vector<std::pair<TaskSet, const TrainHistory*>> runs;
    for (const auto& oc : outcomes) {
        CHECK_MESSAGE(oc.ok, oc.error);
        CHECK(oc.hyper.mode ==
              (oc.tasks.size() == 1 ? WeightingMode::Single : WeightingMode::Learned));
        runs.emplace_back(oc.tasks, &oc.history);
    }
    const std::string csv = results_table_csv(runs);
    std::vector<std::string> lines;
    std::stringstream ss(csv);
    std::string line;
    while (std::getline(ss, line)) lines.push_back(line);
    REQUIRE(lines.size() == 9);
    CHECK(lines[0] == "task_set,miou,depth_rmse_r,rmsctd_min,weather_acc");
    // Single-task rows expose exactly one metric.
    CHECK(lines[1].substr(0, 5) == "tau1,");
    CHECK(lines[1].find(",-,-,-") != std::string::npos);
    // tau1-tau2-tau3 has no accuracy cell.
    CHECK(lines[6].substr(0, 15) == "tau1-tau2-tau3,");
    CHECK(lines[6].back() == '-');
    // The full set has no absent cell.
    CHECK(lines[8].find(",-") == std::string::npos);

    // Rerunning the matrix reproduces the table exactly.
    const auto again = run_matrix(cfg, hp, {&train_data, &test_data}, 1);
    std::vector<std::pair<TaskSet, const TrainHistory*>> runs2;
    for (const auto& oc : again) runs2.emplace_back(oc.tasks, &oc.history);
    CHECK(results_table_csv(runs2) == csv);
}

TEST_CASE("history csv round-trips") {
    TrainHistory h;
    h.rows.push_back({1, "all", "combined", 0.123456789012345});
    h.rows.push_back({1, "tau2", "raw_loss", 3.5e-5});
    const auto path = std::filesystem::temp_directory_path() / "auxmtl_hist.csv";
    h.write_csv(path);
    const auto r = TrainHistory::read_csv(path);
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].value == h.rows[0].value);
    CHECK(r.rows[1].series == "raw_loss");
    std::filesystem::remove(path);
}
