#include "auxmtl/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace auxmtl::metrics {

double miou(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
            std::int32_t n_classes) {
    if (pred.empty() || gt.empty()) throw std::invalid_argument("miou: empty input");
    if (pred.size() != gt.size()) throw std::invalid_argument("miou: length mismatch");
    if (n_classes < 1) throw std::invalid_argument("miou: need at least one class");
    std::vector<std::int64_t> inter(static_cast<std::size_t>(n_classes), 0);
    std::vector<std::int64_t> pred_n(static_cast<std::size_t>(n_classes), 0);
    std::vector<std::int64_t> gt_n(static_cast<std::size_t>(n_classes), 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const std::int32_t p = pred[i];
        const std::int32_t t = gt[i];
        if (p < 0 || p >= n_classes || t < 0 || t >= n_classes) {
            throw std::invalid_argument("miou: class id out of range [0," +
                                        std::to_string(n_classes) + ")");
        }
        ++pred_n[static_cast<std::size_t>(p)];
        ++gt_n[static_cast<std::size_t>(t)];
        if (p == t) ++inter[static_cast<std::size_t>(p)];
    }
    double sum = 0.0;
    std::int64_t present = 0;
    for (std::int32_t c = 0; c < n_classes; ++c) {
        const std::int64_t uni = pred_n[static_cast<std::size_t>(c)] +
                                 gt_n[static_cast<std::size_t>(c)] -
                                 inter[static_cast<std::size_t>(c)];
        if (uni == 0) continue;  // absent from both sides
        sum += static_cast<double>(inter[static_cast<std::size_t>(c)]) / static_cast<double>(uni);
        ++present;
    }
    if (present == 0) throw std::invalid_argument("miou: no class present");
    return sum / static_cast<double>(present);
}

double depth_rmse(std::span<const double> pred_r, std::span<const double> gt_r) {
    if (pred_r.empty()) throw std::invalid_argument("depth_rmse: empty input");
    if (pred_r.size() != gt_r.size()) throw std::invalid_argument("depth_rmse: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < pred_r.size(); ++i) {
        const double d = pred_r[i] - gt_r[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(pred_r.size()));
}

double rmsctd(std::span<const double> gt_min, std::span<const double> pred_min) {
    if (gt_min.empty()) throw std::invalid_argument("rmsctd: empty input");
    if (gt_min.size() != pred_min.size()) throw std::invalid_argument("rmsctd: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < gt_min.size(); ++i) {
        s += losses::sctd(gt_min[i], pred_min[i]);
    }
    return std::sqrt(s / static_cast<double>(gt_min.size()));
}

double accuracy(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt) {
    if (pred.empty()) throw std::invalid_argument("accuracy: empty input");
    if (pred.size() != gt.size()) throw std::invalid_argument("accuracy: length mismatch");
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == gt[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::optional<double> MetricRecord::by_task(TaskId t) const {
    switch (t) {
        case TaskId::Seg: return miou;
        case TaskId::Depth: return depth_rmse_r;
        case TaskId::Time: return rmsctd_min;
        case TaskId::Weather: return weather_acc;
    }
    return std::nullopt;
}

const char* metric_name(TaskId t) {
    switch (t) {
        case TaskId::Seg: return "miou";
        case TaskId::Depth: return "depth_rmse_r";
        case TaskId::Time: return "rmsctd_min";
        case TaskId::Weather: return "weather_acc";
    }
    return "?";
}

}  // namespace auxmtl::metrics
