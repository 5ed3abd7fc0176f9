#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "auxmtl/tensor.hpp"

namespace auxmtl {

using NodeId = std::int64_t;

enum class OpKind {
    Input,
    Conv2d,
    MaxPool2d,
    Relu,
    Sigmoid,
    FullyConnected,
    Softmax,
    LogSoftmax,
    BilinearUpsample,
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Log,
    Square,
    SumAll,
    MeanAll,
    Reshape,
    Concat,
    MulConst,
    AddConst,
    ModConst,
};

const char* op_name(OpKind kind);

struct OpAttrs {
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    std::int64_t dilation = 1;
    std::int64_t window = 0;
    std::int64_t factor = 1;
    std::int64_t axis = -1;
    double scalar = 0.0;
    Shape shape;  // Reshape target
};

struct GraphNode {
    OpKind kind = OpKind::Input;
    std::vector<NodeId> inputs;
    OpAttrs attrs;
    Tensor value;
    Tensor grad;  // populated by backward for requires_grad nodes
    bool requires_grad = false;
    std::vector<std::int64_t> aux;  // op scratch carried to backward (pool argmax)
};

// Reverse-mode tape. Nodes are appended in execution order, so inputs
// always precede their consumers and the structure is acyclic by
// construction. One Graph belongs to one training/evaluation pass.
class Graph {
public:
    // Leaf holding externally supplied data; gradient is tracked when
    // t.requires_grad is set.
    NodeId input(Tensor t);

    // Leaf with requires_grad forced off (labels, one-hot masks, ...).
    NodeId constant(Tensor t);

    // Runs the op forward immediately and records it on the tape.
    NodeId apply(OpKind kind, const std::vector<NodeId>& inputs, const OpAttrs& attrs = {});

    const Tensor& value(NodeId id) const { return node(id).value; }
    const Tensor& grad(NodeId id) const { return node(id).grad; }
    const GraphNode& node(NodeId id) const;
    std::int64_t size() const { return static_cast<std::int64_t>(nodes_.size()); }

    // Reverse pass from a scalar loss node. Returns the gradients of all
    // requires_grad leaves; gradients of interior nodes stay accessible
    // through grad(). Throws if the loss node is not a scalar.
    std::map<NodeId, Tensor> backward(NodeId loss);

private:
    GraphNode& mutable_node(NodeId id);
    std::vector<GraphNode> nodes_;
};

namespace ops {

NodeId conv2d(Graph& g, NodeId x, NodeId w, NodeId b,
              std::int64_t stride = 1, std::int64_t padding = 0, std::int64_t dilation = 1);
NodeId max_pool2d(Graph& g, NodeId x, std::int64_t window, std::int64_t stride);
NodeId relu(Graph& g, NodeId x);
NodeId sigmoid(Graph& g, NodeId x);
NodeId fully_connected(Graph& g, NodeId x, NodeId w, NodeId b);
NodeId softmax(Graph& g, NodeId x);      // over the last axis
NodeId log_softmax(Graph& g, NodeId x);  // over the last axis
NodeId bilinear_upsample(Graph& g, NodeId x, std::int64_t factor);
NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId div(Graph& g, NodeId a, NodeId b);
NodeId min(Graph& g, NodeId a, NodeId b);
NodeId log(Graph& g, NodeId x);
NodeId square(Graph& g, NodeId x);
NodeId sum_all(Graph& g, NodeId x);
NodeId mean_all(Graph& g, NodeId x);
NodeId reshape(Graph& g, NodeId x, Shape target);
NodeId concat(Graph& g, const std::vector<NodeId>& parts, std::int64_t axis);
NodeId mul_const(Graph& g, NodeId x, double c);
NodeId add_const(Graph& g, NodeId x, double c);
NodeId mod_const(Graph& g, NodeId x, double period);  // wraps into [0, period)

}  // namespace ops

// Central-finite-difference check of a scalar-valued graph function at a
// point. build receives a fresh graph and the input leaf and must return the
// scalar output node. Returns max over coordinates of
// |analytic - fd| / max(|analytic|, |fd|, 1e-12).
double grad_check(const std::function<NodeId(Graph&, NodeId)>& build, const Tensor& point,
                  double eps);

}  // namespace auxmtl
