#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "auxmtl/losses.hpp"

namespace auxmtl::metrics {

// Mean over classes of |intersection| / |union|; classes absent from both
// prediction and ground truth are skipped.
double miou(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
            std::int32_t n_classes);

// Root mean squared error in r-space (unitless).
double depth_rmse(std::span<const double> pred_r, std::span<const double> gt_r);

// Root mean squared cyclic time difference, in minutes; predictions are
// wrapped into [0, 1440) first, no loss scaling applied.
double rmsctd(std::span<const double> gt_min, std::span<const double> pred_min);

double accuracy(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt);

// One evaluation snapshot; fields present exactly for the tasks in the
// experiment's task set.
struct MetricRecord {
    std::int64_t iteration = 0;
    std::optional<double> miou;
    std::optional<double> depth_rmse_r;
    std::optional<double> rmsctd_min;
    std::optional<double> weather_acc;

    std::optional<double> by_task(TaskId t) const;
};

const char* metric_name(TaskId t);  // "miou", "depth_rmse_r", "rmsctd_min", "weather_acc"

}  // namespace auxmtl::metrics
