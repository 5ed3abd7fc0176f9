#include <filesystem>

#include "doctest.h"

#include "auxmtl/model.hpp"
#include "auxmtl/util.hpp"

using namespace auxmtl;
namespace fs = std::filesystem;

namespace {

ModelConfig small_cfg(TaskSet tasks) {
    ModelConfig cfg;
    cfg.input_h = 32;
    cfg.input_w = 32;
    cfg.encoder_channels = {4, 8};
    cfg.output_stride = 4;
    cfg.head_channels = 8;
    cfg.task_set = std::move(tasks);
    return cfg;
}

Tensor random_batch(Rng& rng, std::int64_t b, std::int64_t h, std::int64_t w) {
    Tensor t({b, h, w, 3});
    for (auto& v : t.data) v = rng.uniform(0.0, 1.0);
    return t;
}

const TaskSet kAll{TaskId::Seg, TaskId::Depth, TaskId::Time, TaskId::Weather};

}  // namespace

TEST_CASE("c is initialized to the inverse task-set size") {
    const Model m4 = build_model(small_cfg(kAll), 1);
    for (const auto& [t, c] : m4.c) CHECK(c == 0.25);
    const Model m2 = build_model(small_cfg({TaskId::Seg, TaskId::Depth}), 1);
    for (const auto& [t, c] : m2.c) CHECK(c == 0.5);
}

TEST_CASE("same seed gives identical parameter buffers") {
    const Model a = build_model(small_cfg(kAll), 9);
    const Model b = build_model(small_cfg(kAll), 9);
    REQUIRE(a.params.size() == b.params.size());
    for (const auto& [name, t] : a.params) {
        CHECK(t.data == b.params.at(name).data);
    }
    const Model c = build_model(small_cfg(kAll), 10);
    CHECK(a.params.at("enc.stage0.w").data != c.params.at("enc.stage0.w").data);
}

TEST_CASE("default config produces the documented output shapes") {
    ModelConfig cfg;
    cfg.task_set = kAll;
    const Model m = build_model(cfg, 3);
    Rng rng(41);
    const auto out = predict(m, random_batch(rng, 4, 64, 48));
    CHECK(out.at(TaskId::Seg).shape == Shape{4, 64, 48, 3});
    CHECK(out.at(TaskId::Depth).shape == Shape{4, 64, 48});
    CHECK(out.at(TaskId::Weather).shape == Shape{4, 11});
    CHECK(out.at(TaskId::Time).shape == Shape{4, 1});
}

TEST_CASE("output shapes are a pure function of the config") {
    Rng rng(42);
    const struct {
        std::int64_t h, w;
        std::vector<std::int64_t> ch;
        std::int64_t stride, seg;
    } cases[] = {
        {32, 32, {4, 8}, 4, 3},
        {48, 32, {4, 4, 8}, 8, 5},
        {64, 48, {4, 8, 8, 8}, 16, 3},
    };
    for (const auto& c : cases) {
        ModelConfig cfg;
        cfg.input_h = c.h;
        cfg.input_w = c.w;
        cfg.encoder_channels = c.ch;
        cfg.output_stride = c.stride;
        cfg.n_seg_classes = c.seg;
        cfg.head_channels = 8;
        cfg.task_set = kAll;
        const Model m = build_model(cfg, 5);
        const std::int64_t b = rng.uniform_int(1, 3);
        const auto out = predict(m, random_batch(rng, b, c.h, c.w));
        CHECK(out.at(TaskId::Seg).shape == Shape{b, c.h, c.w, c.seg});
        CHECK(out.at(TaskId::Depth).shape == Shape{b, c.h, c.w});
        CHECK(out.at(TaskId::Weather).shape == Shape{b, 11});
        CHECK(out.at(TaskId::Time).shape == Shape{b, 1});
    }
}

TEST_CASE("depth output stays strictly inside (0,1)") {
    const Model m = build_model(small_cfg({TaskId::Depth}), 6);
    Rng rng(43);
    const auto out = predict(m, random_batch(rng, 2, 32, 32));
    for (double v : out.at(TaskId::Depth).data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("tasks outside the set contribute no parameters or outputs") {
    const Model m = build_model(small_cfg({TaskId::Depth}), 2);
    for (const auto& [name, t] : m.params) {
        CHECK(name.find("tau1") == std::string::npos);
        CHECK(name.find("tau3") == std::string::npos);
        CHECK(name.find("tau4") == std::string::npos);
    }
    Rng rng(44);
    const auto out = predict(m, random_batch(rng, 1, 32, 32));
    CHECK(out.size() == 1);
    CHECK(out.count(TaskId::Depth) == 1);
}

TEST_CASE("gradients reach every parameter after one backward pass") {
    const Model m = build_model(small_cfg(kAll), 8);
    Rng rng(45);
    const Tensor batch = random_batch(rng, 2, 32, 32);

    Graph g;
    const ForwardNodes fn = model_forward(g, m, batch);
    // Sum of all head outputs reaches every decoder and the encoder.
    NodeId total = -1;
    for (const auto& [t, id] : fn.outputs) {
        const NodeId term = ops::sum_all(g, ops::square(g, id));
        total = total < 0 ? term : ops::add(g, total, term);
    }
    auto grads = g.backward(total);
    for (const auto& [name, id] : fn.params) {
        REQUIRE(grads.count(id) == 1);
        bool any_nonzero = false;
        for (double v : grads.at(id).data) {
            if (v != 0.0) {
                any_nonzero = true;
                break;
            }
        }
        CHECK_MESSAGE(any_nonzero, name);
    }
}

TEST_CASE("config validation catches divisibility and class-count errors") {
    ModelConfig cfg = small_cfg(kAll);
    cfg.input_h = 33;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_cfg(kAll);
    cfg.n_weather_classes = 7;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_cfg(kAll);
    cfg.output_stride = 16;  // two stages give stride 4
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_cfg({});
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip the model exactly") {
    const fs::path path = fs::temp_directory_path() / "auxmtl_model_ckpt.bin";
    Model m = build_model(small_cfg({TaskId::Seg, TaskId::Time}), 77);
    m.c[TaskId::Seg] = 0.731;
    save_checkpoint(path, m);
    const Model r = load_checkpoint(path);
    CHECK(r.cfg.input_h == m.cfg.input_h);
    CHECK(r.cfg.task_set == m.cfg.task_set);
    CHECK(r.c == m.c);
    REQUIRE(r.params.size() == m.params.size());
    for (const auto& [name, t] : m.params) {
        CHECK(r.params.at(name).shape == t.shape);
        CHECK(r.params.at(name).data == t.data);
    }
    fs::remove(path);
}
