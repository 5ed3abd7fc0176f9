#include <cmath>

#include "doctest.h"

#include "auxmtl/losses.hpp"
#include "auxmtl/util.hpp"

using namespace auxmtl;
using namespace auxmtl::losses;

TEST_CASE("depth target transform endpoints and clipping") {
    CHECK(depth_target_transform(1.0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(depth_target_transform(1000.0) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(depth_target_transform(10.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-13));
    CHECK(depth_target_transform(5000.0) == 0.0);
    CHECK(depth_target_transform(0.5) == 1.0);
    CHECK_THROWS_AS(depth_target_transform(0.0), std::invalid_argument);
    CHECK_THROWS_AS(depth_target_transform(-3.0), std::invalid_argument);
}

TEST_CASE("depth target transform is monotone non-increasing") {
    Rng rng(21);
    for (int i = 0; i < 500; ++i) {
        const double a = std::exp(rng.uniform(std::log(0.01), std::log(5000.0)));
        const double b = a * (1.0 + rng.uniform(0.0, 0.5));
        CHECK(depth_target_transform(a) >= depth_target_transform(b));
    }
    // Strictly decreasing inside [1, 1000].
    for (int i = 0; i < 200; ++i) {
        const double a = std::exp(rng.uniform(std::log(1.0), std::log(900.0)));
        const double b = a * 1.05;
        CHECK(depth_target_transform(a) > depth_target_transform(b));
    }
}

TEST_CASE("depth loss values") {
    auto eval = [](const Tensor& pred, const Tensor& gt) {
        Graph g;
        return g.value(depth_loss(g, g.constant(pred), gt)).item();
    };
    Tensor gt({2, 2}, {0.1, 0.4, 0.7, 0.9});
    CHECK(eval(gt, gt) == 0.0);

    Tensor shifted = gt;
    for (auto& v : shifted.data) v += 0.1;
    // gt of the shifted comparison must stay in [0,1]
    CHECK(eval(shifted, gt) == doctest::Approx(0.01).epsilon(1e-12));

    CHECK(eval(Tensor({1, 2}, {0.0, 1.0}), Tensor({1, 2}, {1.0, 0.0})) == 1.0);

    Graph g;
    CHECK_THROWS_AS(depth_loss(g, g.constant(Tensor({2, 2})), Tensor({2, 3})),
                    std::invalid_argument);
    CHECK_THROWS_AS(depth_loss(g, g.constant(Tensor({1})), Tensor({1}, {1.5})),
                    std::invalid_argument);
}

TEST_CASE("pixelwise cross entropy") {
    auto eval = [](const Tensor& logits, const std::vector<std::int32_t>& ids) {
        Graph g;
        return g.value(pixelwise_ce_loss(g, g.constant(logits), ids)).item();
    };
    // Uniform logits over K=3 classes -> ln 3 at every pixel.
    CHECK(eval(Tensor({1, 2, 2, 3}, 0.0), {0, 1, 2, 0}) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    // Loss decreases monotonically as the true-class margin grows.
    double prev = 1e300;
    for (double m = 0.0; m <= 12.0; m += 1.5) {
        Tensor logits({1, 1, 1, 3}, {m, 0.0, 0.0});
        const double v = eval(logits, {0});
        CHECK(v < prev);
        prev = v;
    }
    CHECK(prev < 1e-4);

    // Mean reduction over pixels: two pixels average their losses.
    Tensor two({1, 1, 2, 2}, {1.0, 0.0, 3.0, 0.0});
    const double a = eval(Tensor({1, 1, 1, 2}, {1.0, 0.0}), {0});
    const double b = eval(Tensor({1, 1, 1, 2}, {3.0, 0.0}), {0});
    CHECK(eval(two, {0, 0}) == doctest::Approx((a + b) / 2.0).epsilon(1e-12));

    Graph g;
    CHECK_THROWS_AS(pixelwise_ce_loss(g, g.constant(Tensor({1, 1, 1, 3})), {3}),
                    std::invalid_argument);
}

TEST_CASE("scalar cross entropy") {
    auto eval = [](const Tensor& logits, const std::vector<std::int32_t>& ids) {
        Graph g;
        return g.value(scalar_ce_loss(g, g.constant(logits), ids)).item();
    };
    CHECK(eval(Tensor({1, 11}, 0.0), {4}) == doctest::Approx(std::log(11.0)).epsilon(1e-12));

    double prev = 1e300;
    for (double m = 0.0; m <= 10.0; m += 2.0) {
        Tensor logits({1, 11}, 0.0);
        logits[2] = m;
        const double v = eval(logits, {2});
        CHECK(v < prev);
        prev = v;
    }

    // A batch of two identical samples scores the same as one.
    Tensor one({1, 11}, 0.0);
    one[5] = 1.7;
    Tensor two({2, 11}, 0.0);
    two[5] = two[11 + 5] = 1.7;
    CHECK(eval(two, {3, 3}) == doctest::Approx(eval(one, {3})).epsilon(1e-12));

    Graph g;
    CHECK_THROWS_AS(scalar_ce_loss(g, g.constant(Tensor({1, 11})), {11}), std::invalid_argument);
    CHECK_THROWS_AS(scalar_ce_loss(g, g.constant(Tensor({1, 11})), {-1}), std::invalid_argument);
}

TEST_CASE("squared cyclic time difference") {
    CHECK(sctd(317.25, 317.25) == 0.0);
    CHECK(sctd(1439.0, 0.0) == 1.0);
    CHECK(sctd(0.0, 720.0) == 518400.0);
    CHECK_THROWS_AS(sctd(1440.0, 0.0), std::invalid_argument);
}

TEST_CASE("sctd symmetry, wrap invariance and bounds") {
    Rng rng(22);
    for (int i = 0; i < 1000; ++i) {
        // Dyadic minutes keep +1440 shifts exact in floating point.
        const double t = static_cast<double>(rng.uniform_int(0, 1440 * 1024 - 1)) / 1024.0;
        const double p = static_cast<double>(rng.uniform_int(0, 1440 * 1024 - 1)) / 1024.0;
        const double v = sctd(t, p);
        CHECK(v == sctd(p, t));
        CHECK(v == sctd(t, p + 1440.0));
        CHECK(v == sctd(t, p - 1440.0 * 3));
        CHECK(v >= 0.0);
        CHECK(v <= 720.0 * 720.0);
    }
}

TEST_CASE("time loss values") {
    auto eval = [](const Tensor& pred, const std::vector<double>& gt) {
        Graph g;
        return g.value(time_loss(g, g.constant(pred), gt)).item();
    };
    CHECK(eval(Tensor({3, 1}, {10.0, 700.0, 1320.0}), {10.0, 700.0, 1320.0}) == 0.0);
    CHECK(eval(Tensor({1, 1}, {200.0}), {300.0}) == doctest::Approx(0.1).epsilon(1e-12));
    // Per-sample sctd {0,1,4,9}: mean 3.5, scaled by 1e-5.
    CHECK(eval(Tensor({4, 1}, {100.0, 101.0, 102.0, 103.0}), {100.0, 100.0, 100.0, 100.0}) ==
          doctest::Approx(3.5e-5).epsilon(1e-12));

    Graph g;
    CHECK_THROWS_AS(time_loss(g, g.constant(Tensor({1, 1}, {0.0})), {}), std::invalid_argument);
}

TEST_CASE("regularizers") {
    CHECK(regularizer_value(0.0, RegKind::Pos) == 0.0);
    CHECK(regularizer_value(1.0, RegKind::Pos) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(regularizer_value(0.5, RegKind::Log) < 0.0);
    CHECK(regularizer_value(0.5, RegKind::Pos) > 0.0);
    CHECK(regularizer_value(0.5, RegKind::Log) == doctest::Approx(std::log(0.25)).epsilon(1e-13));
    CHECK_THROWS_AS(regularizer_value(0.0, RegKind::Log), std::invalid_argument);

    Graph g;
    CHECK_THROWS_AS(regularizer(g, g.constant(Tensor::scalar(0.0)), RegKind::Log),
                    std::invalid_argument);
}

TEST_CASE("fixed combination") {
    auto eval = [](const std::map<TaskId, double>& losses_in,
                   const std::map<TaskId, double>& coeffs) {
        Graph g;
        std::map<TaskId, NodeId> raw;
        for (const auto& [t, v] : losses_in) raw[t] = g.constant(Tensor::scalar(v));
        return g.value(combine_fixed(g, raw, coeffs)).item();
    };
    CHECK(eval({{TaskId::Seg, 3.0}}, {{TaskId::Seg, 1.0}}) == 3.0);
    CHECK(eval({{TaskId::Seg, 0.0}, {TaskId::Depth, 0.0}},
               {{TaskId::Seg, 0.5}, {TaskId::Depth, 2.0}}) == 0.0);
    CHECK(eval({{TaskId::Seg, 1.0}, {TaskId::Depth, 2.0}},
               {{TaskId::Seg, 0.5}, {TaskId::Depth, 0.25}}) == doctest::Approx(1.0).epsilon(1e-14));

    // Linear in each coefficient.
    Rng rng(23);
    for (int i = 0; i < 100; ++i) {
        const double l1 = rng.uniform(0.0, 5.0), l2 = rng.uniform(0.0, 5.0);
        const double c1 = rng.uniform(-2.0, 2.0), c2 = rng.uniform(-2.0, 2.0);
        const double k = rng.uniform(0.5, 3.0);
        const double base = eval({{TaskId::Seg, l1}, {TaskId::Time, l2}},
                                 {{TaskId::Seg, c1}, {TaskId::Time, c2}});
        const double scaled = eval({{TaskId::Seg, l1}, {TaskId::Time, l2}},
                                   {{TaskId::Seg, k * c1}, {TaskId::Time, c2}});
        CHECK(scaled == doctest::Approx(base + (k - 1.0) * c1 * l1).epsilon(1e-10));
    }

    Graph g;
    std::map<TaskId, NodeId> raw{{TaskId::Seg, g.constant(Tensor::scalar(1.0))}};
    CHECK_THROWS_AS(combine_fixed(g, raw, {{TaskId::Depth, 1.0}}), std::invalid_argument);
}

namespace {

double learned_combined(double raw_loss, double c, RegKind kind) {
    Graph g;
    std::map<TaskId, NodeId> raw{{TaskId::Seg, g.constant(Tensor::scalar(raw_loss))}};
    std::map<TaskId, NodeId> cw{{TaskId::Seg, g.constant(Tensor::scalar(c))}};
    return g.value(combine_learned(g, raw, cw, kind).combined).item();
}

}  // namespace

TEST_CASE("learned combination reproduces hand-computed values") {
    CHECK(learned_combined(2.0, 1.0, RegKind::Pos) ==
          doctest::Approx(1.0 + std::log(2.0)).epsilon(1e-14));
    CHECK(learned_combined(0.0, 1.0, RegKind::Pos) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(learned_combined(1.0, 0.25, RegKind::Pos) ==
          doctest::Approx(8.0 + std::log(17.0 / 16.0)).epsilon(1e-14));

    Graph g;
    std::map<TaskId, NodeId> raw{{TaskId::Seg, g.constant(Tensor::scalar(1.0))}};
    std::map<TaskId, NodeId> cw{{TaskId::Seg, g.constant(Tensor::scalar(1e-6))}};
    CHECK_THROWS_AS(combine_learned(g, raw, cw, RegKind::Pos), std::invalid_argument);
}

TEST_CASE("learned combination with R_pos is non-negative; R_log is not") {
    Rng rng(24);
    for (int i = 0; i < 1000; ++i) {
        const double l = rng.uniform(0.0, 10.0);
        double c = rng.uniform(-3.0, 3.0);
        if (std::abs(c) < 1e-3) c = 1e-3;
        CHECK(learned_combined(l, c, RegKind::Pos) >= 0.0);
    }
    CHECK(learned_combined(0.0, 0.25, RegKind::Log) < 0.0);
    CHECK(learned_combined(0.0, 0.25, RegKind::Log) ==
          doctest::Approx(std::log(0.0625)).epsilon(1e-13));
}

TEST_CASE("loss report is internally consistent") {
    Graph g;
    std::map<TaskId, NodeId> raw{{TaskId::Seg, g.constant(Tensor::scalar(1.3))},
                                 {TaskId::Depth, g.constant(Tensor::scalar(0.2))}};
    std::map<TaskId, NodeId> cw{{TaskId::Seg, g.constant(Tensor::scalar(0.5))},
                                {TaskId::Depth, g.constant(Tensor::scalar(0.25))}};
    const auto cl = combine_learned(g, raw, cw, RegKind::Pos);
    const LossReport rep = make_report(g, raw, cl);
    CHECK(rep.consistent(1e-12));
    CHECK(rep.raw.at(TaskId::Seg) == 1.3);
    CHECK(rep.weighted.at(TaskId::Seg) == doctest::Approx(1.3 / 0.5).epsilon(1e-14));
    CHECK(rep.reg.at(TaskId::Depth) == doctest::Approx(std::log(1.0625)).epsilon(1e-14));
}

TEST_CASE("closed-form optimal weight matches a numeric line search") {
    Rng rng(25);
    for (int i = 0; i < 10; ++i) {
        const double l = rng.uniform(1e-3, 10.0);
        auto f = [&](double c) { return l / (2.0 * c * c) + std::log(1.0 + c * c); };
        // Golden-section search on (0, 100].
        double a = 1e-4, b = 100.0;
        const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
        double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
        double f1 = f(x1), f2 = f(x2);
        for (int it = 0; it < 200; ++it) {
            if (f1 < f2) {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - phi * (b - a);
                f1 = f(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + phi * (b - a);
                f2 = f(x2);
            }
        }
        const double c_num = 0.5 * (a + b);
        CHECK(c_num * c_num == doctest::Approx(optimal_weight_sq(l)).epsilon(1e-9));
    }
}

TEST_CASE("losses pass grad_check") {
    Rng rng(26);

    // Depth MSE w.r.t. predictions.
    Tensor gt({2, 3}, 0.0);
    for (auto& v : gt.data) v = rng.uniform(0.0, 1.0);
    Tensor pred({2, 3}, 0.0);
    for (auto& v : pred.data) v = rng.uniform(0.05, 0.95);
    auto depth_fn = [&](Graph& g, NodeId p) { return depth_loss(g, p, gt); };
    CHECK(grad_check(depth_fn, pred, 1e-5) < 1e-6);

    // Cross entropies w.r.t. logits.
    Tensor logits({2, 1, 1, 3}, 0.0);
    for (auto& v : logits.data) v = rng.uniform(-1.0, 1.0);
    auto ce_fn = [&](Graph& g, NodeId l) { return pixelwise_ce_loss(g, l, {1, 2}); };
    CHECK(grad_check(ce_fn, logits, 1e-5) < 1e-4);

    Tensor wl({2, 11}, 0.0);
    for (auto& v : wl.data) v = rng.uniform(-1.0, 1.0);
    auto sce_fn = [&](Graph& g, NodeId l) { return scalar_ce_loss(g, l, {7, 0}); };
    CHECK(grad_check(sce_fn, wl, 1e-5) < 1e-4);

    // Time loss w.r.t. predictions (away from wrap and min kinks).
    Tensor tp({3, 1}, {412.0, 918.0, 77.5});
    auto time_fn = [&](Graph& g, NodeId p) { return time_loss(g, p, {400.0, 900.0, 80.0}); };
    CHECK(grad_check(time_fn, tp, 1e-5) < 1e-4);

    // Combined loss w.r.t. c.
    auto learned_fn = [&](Graph& g, NodeId c) {
        std::map<TaskId, NodeId> raw{{TaskId::Seg, g.constant(Tensor::scalar(1.7))}};
        std::map<TaskId, NodeId> cw{{TaskId::Seg, c}};
        return combine_learned(g, raw, cw, RegKind::Pos).combined;
    };
    CHECK(grad_check(learned_fn, Tensor::scalar(0.6), 1e-5) < 1e-4);
}

TEST_CASE("task set parsing") {
    CHECK(parse_task_set("1,2,4") == TaskSet{TaskId::Seg, TaskId::Depth, TaskId::Weather});
    CHECK(task_set_name({TaskId::Seg, TaskId::Depth}) == "tau1-tau2");
    CHECK_THROWS_AS(parse_task_set("5"), std::invalid_argument);
    CHECK_THROWS_AS(parse_task_set("x"), std::invalid_argument);
    CHECK_THROWS_AS(parse_task_set(""), std::invalid_argument);
}
