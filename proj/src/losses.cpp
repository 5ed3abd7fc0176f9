#include "auxmtl/losses.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace auxmtl {

std::string task_name(TaskId t) { return "tau" + std::to_string(static_cast<int>(t)); }

std::string task_set_name(const TaskSet& ts) {
    std::string s;
    for (TaskId t : ts) {
        if (!s.empty()) s += "-";
        s += task_name(t);
    }
    return s;
}

TaskId task_from_index(int i) {
    if (i < 1 || i > 4) {
        throw std::invalid_argument("unknown task id " + std::to_string(i) + " (expected 1..4)");
    }
    return static_cast<TaskId>(i);
}

TaskSet parse_task_set(const std::string& csv) {
    TaskSet ts;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        std::size_t pos = 0;
        int v = 0;
        try {
            v = std::stoi(tok, &pos);
        } catch (const std::exception&) {
            throw std::invalid_argument("unknown task id '" + tok + "'");
        }
        if (pos != tok.size()) throw std::invalid_argument("unknown task id '" + tok + "'");
        ts.insert(task_from_index(v));
    }
    if (ts.empty()) throw std::invalid_argument("empty task set");
    return ts;
}

RegKind parse_reg_kind(const std::string& s) {
    if (s == "pos") return RegKind::Pos;
    if (s == "log") return RegKind::Log;
    throw std::invalid_argument("unknown regularizer '" + s + "' (expected pos|log)");
}

std::string reg_kind_name(RegKind k) { return k == RegKind::Pos ? "pos" : "log"; }

bool LossReport::consistent(double tol) const {
    double s = 0.0;
    for (const auto& [t, v] : weighted) s += v;
    for (const auto& [t, v] : reg) s += v;
    return std::abs(combined - s) <= tol;
}

namespace losses {

double depth_target_transform(double d_meters) {
    if (!(d_meters > 0.0)) {
        throw std::invalid_argument("depth_target_transform: d must be > 0, got " +
                                    std::to_string(d_meters));
    }
    if (d_meters < kDepthNearM) return 1.0;
    if (d_meters > kDepthFarM) return 0.0;
    return 1.0 - std::log(d_meters) / std::log(kDepthFarM);
}

namespace {

double wrap_minutes(double t) {
    double r = std::fmod(t, kMinutesPerDay);
    if (r < 0.0) r += kMinutesPerDay;
    if (r >= kMinutesPerDay) r = 0.0;
    return r;
}

}  // namespace

double sctd(double t_gt_min, double t_pred_min) {
    if (!(t_gt_min >= 0.0 && t_gt_min < kMinutesPerDay)) {
        throw std::invalid_argument("sctd: ground-truth minute out of [0,1440): " +
                                    std::to_string(t_gt_min));
    }
    const double d = t_gt_min - wrap_minutes(t_pred_min);
    const double a = d * d;
    const double b = (d + kMinutesPerDay) * (d + kMinutesPerDay);
    const double c = (d - kMinutesPerDay) * (d - kMinutesPerDay);
    return std::min(a, std::min(b, c));
}

double regularizer_value(double c, RegKind kind) {
    if (kind == RegKind::Pos) return std::log(1.0 + c * c);
    if (c == 0.0) throw std::invalid_argument("regularizer: R_log undefined at c = 0");
    return std::log(c * c);
}

NodeId depth_loss(Graph& g, NodeId pred_r, const Tensor& gt_r) {
    const Tensor& pred = g.value(pred_r);
    if (pred.shape != gt_r.shape) {
        throw std::invalid_argument("depth_loss: shape mismatch " + shape_str(pred.shape) +
                                    " vs " + shape_str(gt_r.shape));
    }
    for (double v : gt_r.data) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument("depth_loss: ground truth not in [0,1]: " + std::to_string(v));
        }
    }
    const NodeId gt = g.constant(gt_r);
    return ops::mean_all(g, ops::square(g, ops::sub(g, pred_r, gt)));
}

namespace {

// -mean over rows of log softmax(logits)[class]; shared by the pixel-wise
// and scalar cross entropies. The one-hot mask enters as a constant.
NodeId ce_from_logits(Graph& g, NodeId logits, const std::vector<std::int32_t>& class_ids,
                      const char* what) {
    const Tensor& lg = g.value(logits);
    if (lg.shape.empty()) throw std::invalid_argument(std::string(what) + ": scalar logits");
    const std::int64_t k = lg.shape.back();
    const std::int64_t rows = lg.size() / std::max<std::int64_t>(k, 1);
    if (static_cast<std::int64_t>(class_ids.size()) != rows) {
        throw std::invalid_argument(std::string(what) + ": " + std::to_string(class_ids.size()) +
                                    " labels for " + std::to_string(rows) + " rows");
    }
    if (rows == 0) throw std::invalid_argument(std::string(what) + ": empty batch");
    Tensor onehot(lg.shape, 0.0);
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::int32_t cls = class_ids[static_cast<std::size_t>(r)];
        if (cls < 0 || cls >= k) {
            throw std::invalid_argument(std::string(what) + ": class id " + std::to_string(cls) +
                                        " out of range [0," + std::to_string(k) + ")");
        }
        onehot[r * k + cls] = 1.0;
    }
    const NodeId picked = ops::mul(g, ops::log_softmax(g, logits), g.constant(std::move(onehot)));
    return ops::mul_const(g, ops::sum_all(g, picked), -1.0 / static_cast<double>(rows));
}

}  // namespace

NodeId pixelwise_ce_loss(Graph& g, NodeId logits, const std::vector<std::int32_t>& class_ids) {
    const Tensor& lg = g.value(logits);
    if (lg.shape.size() < 3) {
        throw std::invalid_argument("pixelwise_ce_loss: expected (...,H,W,K) logits, got " +
                                    shape_str(lg.shape));
    }
    return ce_from_logits(g, logits, class_ids, "pixelwise_ce_loss");
}

NodeId scalar_ce_loss(Graph& g, NodeId logits, const std::vector<std::int32_t>& class_ids) {
    const Tensor& lg = g.value(logits);
    if (lg.shape.size() != 2) {
        throw std::invalid_argument("scalar_ce_loss: expected (B,K) logits, got " + shape_str(lg.shape));
    }
    return ce_from_logits(g, logits, class_ids, "scalar_ce_loss");
}

NodeId time_loss(Graph& g, NodeId pred_min, const std::vector<double>& gt_min, double scale) {
    const Tensor& pred = g.value(pred_min);
    const std::int64_t b = pred.size();
    if (b < 1) throw std::invalid_argument("time_loss: empty batch");
    if (static_cast<std::int64_t>(gt_min.size()) != b) {
        throw std::invalid_argument("time_loss: " + std::to_string(gt_min.size()) +
                                    " ground truths for batch of " + std::to_string(b));
    }
    Tensor gt(pred.shape, 0.0);
    for (std::int64_t i = 0; i < b; ++i) {
        const double t = gt_min[static_cast<std::size_t>(i)];
        if (!(t >= 0.0 && t < kMinutesPerDay)) {
            throw std::invalid_argument("time_loss: ground-truth minute out of [0,1440): " +
                                        std::to_string(t));
        }
        gt[i] = t;
    }
    const NodeId wrapped = ops::mod_const(g, pred_min, kMinutesPerDay);
    const NodeId diff = ops::sub(g, g.constant(std::move(gt)), wrapped);
    const NodeId near = ops::square(g, diff);
    const NodeId fwd = ops::square(g, ops::add_const(g, diff, kMinutesPerDay));
    const NodeId bwd = ops::square(g, ops::add_const(g, diff, -kMinutesPerDay));
    const NodeId cyc = ops::min(g, ops::min(g, near, fwd), bwd);
    return ops::mul_const(g, ops::mean_all(g, cyc), scale);
}

NodeId regularizer(Graph& g, NodeId c, RegKind kind) {
    const Tensor& cv = g.value(c);
    if (cv.size() != 1) {
        throw std::invalid_argument("regularizer: c must be scalar, got " + shape_str(cv.shape));
    }
    if (kind == RegKind::Pos) {
        return ops::log(g, ops::add_const(g, ops::square(g, c), 1.0));
    }
    if (cv.item() == 0.0) throw std::invalid_argument("regularizer: R_log undefined at c = 0");
    return ops::log(g, ops::square(g, c));
}

NodeId combine_fixed(Graph& g, const std::map<TaskId, NodeId>& raw,
                     const std::map<TaskId, double>& coeffs) {
    if (raw.empty()) throw std::invalid_argument("combine_fixed: empty task set");
    for (const auto& [t, c] : coeffs) {
        if (!raw.count(t)) {
            throw std::invalid_argument("combine_fixed: coefficient for absent task " + task_name(t));
        }
    }
    NodeId total = -1;
    for (const auto& [t, loss] : raw) {
        auto it = coeffs.find(t);
        if (it == coeffs.end()) {
            throw std::invalid_argument("combine_fixed: missing coefficient for " + task_name(t));
        }
        const NodeId term = ops::mul_const(g, loss, it->second);
        total = total < 0 ? term : ops::add(g, total, term);
    }
    return total;
}

CombinedLoss combine_learned(Graph& g, const std::map<TaskId, NodeId>& raw,
                             const std::map<TaskId, NodeId>& c_nodes, RegKind kind) {
    if (raw.empty()) throw std::invalid_argument("combine_learned: empty task set");
    CombinedLoss out;
    NodeId total = -1;
    for (const auto& [t, loss] : raw) {
        auto it = c_nodes.find(t);
        if (it == c_nodes.end()) {
            throw std::invalid_argument("combine_learned: missing weight for " + task_name(t));
        }
        const Tensor& raw_v = g.value(loss);
        if (raw_v.size() != 1 || !raw_v.all_finite()) {
            throw std::invalid_argument("combine_learned: raw loss for " + task_name(t) +
                                        " must be a finite scalar");
        }
        const double c = g.value(it->second).item();
        if (c * c < kWeightEps) {
            throw std::invalid_argument("combine_learned: c^2 below guard (" + task_name(t) +
                                        ", c = " + std::to_string(c) + ")");
        }
        const NodeId denom = ops::mul_const(g, ops::square(g, it->second), 2.0);
        const NodeId weighted = ops::div(g, loss, denom);
        const NodeId reg = regularizer(g, it->second, kind);
        out.weighted[t] = weighted;
        out.reg[t] = reg;
        const NodeId term = ops::add(g, weighted, reg);
        total = total < 0 ? term : ops::add(g, total, term);
    }
    out.combined = total;
    return out;
}

LossReport make_report(const Graph& g, const std::map<TaskId, NodeId>& raw,
                       const CombinedLoss& cl) {
    LossReport rep;
    for (const auto& [t, id] : raw) rep.raw[t] = g.value(id).item();
    for (const auto& [t, id] : cl.weighted) rep.weighted[t] = g.value(id).item();
    for (const auto& [t, id] : cl.reg) rep.reg[t] = g.value(id).item();
    rep.combined = g.value(cl.combined).item();
    return rep;
}

double optimal_weight_sq(double raw_loss) {
    if (!(raw_loss > 0.0)) throw std::invalid_argument("optimal_weight_sq: loss must be > 0");
    return (raw_loss + std::sqrt(raw_loss * raw_loss + 8.0 * raw_loss)) / 4.0;
}

}  // namespace losses

}  // namespace auxmtl
