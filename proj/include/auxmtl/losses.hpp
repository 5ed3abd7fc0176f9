#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "auxmtl/graph.hpp"

namespace auxmtl {

enum class TaskId : int {
    Seg = 1,      // pixel-wise semantic segmentation
    Depth = 2,    // single-image depth regression in r-space
    Time = 3,     // cyclic time-of-day regression
    Weather = 4,  // 11-class weather classification
};

using TaskSet = std::set<TaskId>;

std::string task_name(TaskId t);            // "tau1" .. "tau4"
std::string task_set_name(const TaskSet&);  // "tau1-tau2-tau4"
TaskId task_from_index(int i);              // 1..4
TaskSet parse_task_set(const std::string& csv);

enum class RegKind { Pos, Log };

RegKind parse_reg_kind(const std::string& s);
std::string reg_kind_name(RegKind k);

// Learnable per-task loss weights plus the regularizer choice applied to
// them when combining.
struct TaskWeights {
    std::map<TaskId, double> c;
    RegKind regularizer_kind = RegKind::Pos;
};

struct LossReport {
    std::map<TaskId, double> raw;
    std::map<TaskId, double> weighted;
    std::map<TaskId, double> reg;
    double combined = 0.0;

    // combined must equal sum(weighted) + sum(reg) to within tol.
    bool consistent(double tol = 1e-12) const;
};

namespace losses {

inline constexpr double kDepthNearM = 1.0;
inline constexpr double kDepthFarM = 1000.0;
inline constexpr double kMinutesPerDay = 1440.0;
inline constexpr double kDefaultTimeScale = 1e-5;
// Guard on c^2 in the 1/(2 c^2) weighting term.
inline constexpr double kWeightEps = 1e-8;

// Log-scaled depth target r(d) = 1 - log(d)/log(1000), clipped to [0,1]
// consistently with the formula (d < 1 m -> 1, d > 1000 m -> 0).
double depth_target_transform(double d_meters);

// Squared cyclic time difference over a 1440-minute day. The prediction is
// wrapped into [0, 1440) first; the ground truth must already be in range.
double sctd(double t_gt_min, double t_pred_min);

double regularizer_value(double c, RegKind kind);

// Graph-building losses. Ground truths enter as constants; the returned
// node is always a scalar.
NodeId depth_loss(Graph& g, NodeId pred_r, const Tensor& gt_r);
NodeId pixelwise_ce_loss(Graph& g, NodeId logits, const std::vector<std::int32_t>& class_ids);
NodeId scalar_ce_loss(Graph& g, NodeId logits, const std::vector<std::int32_t>& class_ids);
NodeId time_loss(Graph& g, NodeId pred_min, const std::vector<double>& gt_min,
                 double scale = kDefaultTimeScale);
NodeId regularizer(Graph& g, NodeId c, RegKind kind);

NodeId combine_fixed(Graph& g, const std::map<TaskId, NodeId>& raw,
                     const std::map<TaskId, double>& coeffs);

struct CombinedLoss {
    NodeId combined = -1;
    std::map<TaskId, NodeId> weighted;
    std::map<TaskId, NodeId> reg;
};

// Final multi-task loss: sum over tasks of L_tau / (2 c_tau^2) plus one
// regularizer term per task. Differentiable w.r.t. both the raw losses
// (through their subgraphs) and the c leaves.
CombinedLoss combine_learned(Graph& g, const std::map<TaskId, NodeId>& raw,
                             const std::map<TaskId, NodeId>& c_nodes, RegKind kind);

LossReport make_report(const Graph& g, const std::map<TaskId, NodeId>& raw,
                       const CombinedLoss& cl);

// Minimizer of f(c) = L/(2 c^2) + ln(1 + c^2) for fixed L > 0, in c^2.
double optimal_weight_sq(double raw_loss);

}  // namespace losses

}  // namespace auxmtl
