#include "auxmtl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "auxmtl/kernels.hpp"

namespace auxmtl {

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Input: return "input";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::MaxPool2d: return "max_pool2d";
        case OpKind::Relu: return "relu";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::FullyConnected: return "fully_connected";
        case OpKind::Softmax: return "softmax";
        case OpKind::LogSoftmax: return "log_softmax";
        case OpKind::BilinearUpsample: return "bilinear_upsample";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Div: return "div";
        case OpKind::Min: return "min";
        case OpKind::Log: return "log";
        case OpKind::Square: return "square";
        case OpKind::SumAll: return "sum_all";
        case OpKind::MeanAll: return "mean_all";
        case OpKind::Reshape: return "reshape";
        case OpKind::Concat: return "concat";
        case OpKind::MulConst: return "mul_const";
        case OpKind::AddConst: return "add_const";
        case OpKind::ModConst: return "mod_const";
    }
    return "?";
}

namespace {

[[noreturn]] void shape_error(OpKind kind, const std::string& detail) {
    throw std::invalid_argument(std::string(op_name(kind)) + ": " + detail);
}

void require_inputs(OpKind kind, const std::vector<NodeId>& in, std::size_t n) {
    if (in.size() != n) {
        shape_error(kind, "expected " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
    }
}

void require_same_shape(OpKind kind, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) {
        shape_error(kind, "shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
}

kernels::Conv2dDims conv_dims(const Tensor& x, const Tensor& w, const OpAttrs& at) {
    if (x.shape.size() != 4 || w.shape.size() != 4) {
        shape_error(OpKind::Conv2d, "expects x (N,H,W,Cin) and w (KH,KW,Cin,Cout), got " +
                                        shape_str(x.shape) + " and " + shape_str(w.shape));
    }
    if (x.shape[3] != w.shape[2]) {
        shape_error(OpKind::Conv2d, "input channels " + std::to_string(x.shape[3]) +
                                        " != kernel channels " + std::to_string(w.shape[2]) +
                                        " (x " + shape_str(x.shape) + ", w " + shape_str(w.shape) + ")");
    }
    return kernels::Conv2dDims::make(x.shape[0], x.shape[1], x.shape[2], x.shape[3],
                                     w.shape[0], w.shape[1], w.shape[3],
                                     at.stride, at.padding, at.dilation);
}

std::int64_t last_axis_extent(OpKind kind, const Tensor& x) {
    if (x.shape.empty()) shape_error(kind, "requires rank >= 1, got scalar");
    return x.shape.back();
}

}  // namespace

NodeId Graph::input(Tensor t) {
    GraphNode n;
    n.kind = OpKind::Input;
    n.requires_grad = t.requires_grad;
    n.value = std::move(t);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Graph::constant(Tensor t) {
    t.requires_grad = false;
    return input(std::move(t));
}

const GraphNode& Graph::node(NodeId id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("graph node id " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)];
}

GraphNode& Graph::mutable_node(NodeId id) {
    if (id < 0 || id >= size()) throw std::out_of_range("graph node id " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)];
}

NodeId Graph::apply(OpKind kind, const std::vector<NodeId>& inputs, const OpAttrs& attrs) {
    if (kind == OpKind::Input) throw std::invalid_argument("apply: use Graph::input for leaves");
    GraphNode n;
    n.kind = kind;
    n.inputs = inputs;
    n.attrs = attrs;
    for (NodeId id : inputs) {
        n.requires_grad = n.requires_grad || node(id).requires_grad;
    }

    auto val = [&](std::size_t i) -> const Tensor& { return node(inputs[i]).value; };

    switch (kind) {
        case OpKind::Conv2d: {
            require_inputs(kind, inputs, 3);
            const Tensor& x = val(0);
            const Tensor& w = val(1);
            const Tensor& b = val(2);
            const auto d = conv_dims(x, w, attrs);
            if (b.shape != Shape{d.cout}) {
                shape_error(kind, "bias shape " + shape_str(b.shape) + " != [" + std::to_string(d.cout) + "]");
            }
            n.value = Tensor({d.n, d.ho, d.wo, d.cout});
            kernels::conv2d_forward(x.data.data(), w.data.data(), b.data.data(),
                                    n.value.data.data(), d);
            break;
        }
        case OpKind::MaxPool2d: {
            require_inputs(kind, inputs, 1);
            const Tensor& x = val(0);
            if (x.shape.size() != 4) shape_error(kind, "expects (N,H,W,C), got " + shape_str(x.shape));
            const auto d = kernels::Pool2dDims::make(x.shape[0], x.shape[1], x.shape[2], x.shape[3],
                                                     attrs.window, attrs.stride);
            n.value = Tensor({d.n, d.ho, d.wo, d.c});
            n.aux.resize(static_cast<std::size_t>(n.value.size()));
            kernels::maxpool_forward(x.data.data(), n.value.data.data(), n.aux.data(), d);
            break;
        }
        case OpKind::Relu: {
            require_inputs(kind, inputs, 1);
            const Tensor& x = val(0);
            n.value = Tensor(x.shape);
            for (std::int64_t i = 0; i < x.size(); ++i) n.value[i] = x[i] > 0.0 ? x[i] : 0.0;
            break;
        }
        case OpKind::Sigmoid: {
            require_inputs(kind, inputs, 1);
            const Tensor& x = val(0);
            n.value = Tensor(x.shape);
            for (std::int64_t i = 0; i < x.size(); ++i) n.value[i] = 1.0 / (1.0 + std::exp(-x[i]));
            break;
        }
        case OpKind::FullyConnected: {
            require_inputs(kind, inputs, 3);
            const Tensor& x = val(0);
            const Tensor& w = val(1);
            const Tensor& b = val(2);
            if (x.shape.size() != 2 || w.shape.size() != 2 || x.shape[1] != w.shape[0]) {
                shape_error(kind, "expects x (B,Fin) and w (Fin,Fout), got " + shape_str(x.shape) +
                                      " and " + shape_str(w.shape));
            }
            if (b.shape != Shape{w.shape[1]}) {
                shape_error(kind, "bias shape " + shape_str(b.shape) + " != [" + std::to_string(w.shape[1]) + "]");
            }
            n.value = Tensor({x.shape[0], w.shape[1]});
            kernels::fc_forward(x.data.data(), w.data.data(), b.data.data(), n.value.data.data(),
                                x.shape[0], x.shape[1], w.shape[1]);
            break;
        }
        case OpKind::Softmax:
        case OpKind::LogSoftmax: {
            require_inputs(kind, inputs, 1);
            const Tensor& x = val(0);
            const std::int64_t k = last_axis_extent(kind, x);
            const std::int64_t rows = x.size() / std::max<std::int64_t>(k, 1);
            if (k < 1) shape_error(kind, "empty class axis in " + shape_str(x.shape));
            n.value = Tensor(x.shape);
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* xp = x.data.data() + r * k;
                double* yp = n.value.data.data() + r * k;
                double m = xp[0];
                for (std::int64_t j = 1; j < k; ++j) m = std::max(m, xp[j]);
                double s = 0.0;
                for (std::int64_t j = 0; j < k; ++j) s += std::exp(xp[j] - m);
                if (kind == OpKind::Softmax) {
                    for (std::int64_t j = 0; j < k; ++j) yp[j] = std::exp(xp[j] - m) / s;
                } else {
                    const double lse = std::log(s);
                    for (std::int64_t j = 0; j < k; ++j) yp[j] = xp[j] - m - lse;
                }
            }
            break;
        }
        case OpKind::BilinearUpsample: {
            require_inputs(kind, inputs, 1);
            const Tensor& x = val(0);
            if (x.shape.size() != 4) shape_error(kind, "expects (N,H,W,C), got " + shape_str(x.shape));
            const auto d = kernels::UpsampleDims::make(x.shape[0], x.shape[1], x.shape[2], x.shape[3],
                                                       attrs.factor);
            n.value = Tensor({d.n, d.ho, d.wo, d.c});
            kernels::bilinear_forward(x.data.data(), n.value.data.data(), d);
            break;
        }
        case OpKind::Add:
        case OpKind::Sub:
        case OpKind::Mul:
        case OpKind::Div:
        case OpKind::Min: {
            require_inputs(kind, inputs, 2);
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            require_same_shape(kind, a, b);
            n.value = Tensor(a.shape);
            for (std::int64_t i = 0; i < a.size(); ++i) {
                switch (kind) {
                    case OpKind::Add: n.value[i] = a[i] + b[i]; break;
                    case OpKind::Sub: n.value[i] = a[i] - b[i]; break;
                    case OpKind::Mul: n.value[i] = a[i] * b[i]; break;
                    case OpKind::Div: n.value[i] = a[i] / b[i]; break;
                    default: n.value[i] = std::min(a[i], b[i]); break;
                }
            }
            break;
        }
        case OpKind::Log: {
            require_inputs(kind, inputs, 1);
            const Tensor& x = val(0);
            n.value = Tensor(x.shape);
            for (std::int64_t i = 0; i < x.size(); ++i) n.value[i] = std::log(x[i]);
            break;
        }
        case OpKind::Square: {
            require_inputs(kind, inputs, 1);
            const Tensor& x = val(0);
            n.value = Tensor(x.shape);
            for (std::int64_t i = 0; i < x.size(); ++i) n.value[i] = x[i] * x[i];
            break;
        }
        case OpKind::SumAll:
        case OpKind::MeanAll: {
            require_inputs(kind, inputs, 1);
            const Tensor& x = val(0);
            if (x.size() == 0) shape_error(kind, "empty input");
            double s = 0.0;
            for (std::int64_t i = 0; i < x.size(); ++i) s += x[i];
            if (kind == OpKind::MeanAll) s /= static_cast<double>(x.size());
            n.value = Tensor::scalar(s);
            break;
        }
        case OpKind::Reshape: {
            require_inputs(kind, inputs, 1);
            const Tensor& x = val(0);
            if (shape_product(attrs.shape) != x.size()) {
                shape_error(kind, "cannot reshape " + shape_str(x.shape) + " to " + shape_str(attrs.shape));
            }
            n.value = Tensor(attrs.shape, x.data);
            break;
        }
        case OpKind::Concat: {
            if (inputs.empty()) shape_error(kind, "needs at least one input");
            const Tensor& first = val(0);
            const std::int64_t rank = static_cast<std::int64_t>(first.shape.size());
            std::int64_t axis = attrs.axis < 0 ? attrs.axis + rank : attrs.axis;
            if (axis < 0 || axis >= rank) shape_error(kind, "axis out of range for " + shape_str(first.shape));
            Shape out_shape = first.shape;
            out_shape[static_cast<std::size_t>(axis)] = 0;
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                const Tensor& t = val(i);
                if (static_cast<std::int64_t>(t.shape.size()) != rank) {
                    shape_error(kind, "rank mismatch " + shape_str(first.shape) + " vs " + shape_str(t.shape));
                }
                for (std::int64_t a = 0; a < rank; ++a) {
                    if (a != axis && t.shape[a] != first.shape[a]) {
                        shape_error(kind, "shape mismatch " + shape_str(first.shape) + " vs " + shape_str(t.shape));
                    }
                }
                out_shape[static_cast<std::size_t>(axis)] += t.shape[static_cast<std::size_t>(axis)];
            }
            n.value = Tensor(out_shape);
            std::int64_t outer = 1, suffix = 1;
            for (std::int64_t a = 0; a < axis; ++a) outer *= out_shape[static_cast<std::size_t>(a)];
            for (std::int64_t a = axis + 1; a < rank; ++a) suffix *= out_shape[static_cast<std::size_t>(a)];
            const std::int64_t out_row = out_shape[static_cast<std::size_t>(axis)] * suffix;
            std::int64_t offset = 0;
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                const Tensor& t = val(i);
                const std::int64_t chunk = t.shape[static_cast<std::size_t>(axis)] * suffix;
                for (std::int64_t o = 0; o < outer; ++o) {
                    std::copy_n(t.data.data() + o * chunk, chunk,
                                n.value.data.data() + o * out_row + offset);
                }
                offset += chunk;
            }
            n.attrs.axis = axis;  // normalized
            break;
        }
        case OpKind::MulConst:
        case OpKind::AddConst: {
            require_inputs(kind, inputs, 1);
            const Tensor& x = val(0);
            n.value = Tensor(x.shape);
            for (std::int64_t i = 0; i < x.size(); ++i) {
                n.value[i] = kind == OpKind::MulConst ? x[i] * attrs.scalar : x[i] + attrs.scalar;
            }
            break;
        }
        case OpKind::ModConst: {
            require_inputs(kind, inputs, 1);
            if (!(attrs.scalar > 0.0)) shape_error(kind, "period must be > 0");
            const Tensor& x = val(0);
            n.value = Tensor(x.shape);
            for (std::int64_t i = 0; i < x.size(); ++i) {
                double r = std::fmod(x[i], attrs.scalar);
                if (r < 0.0) r += attrs.scalar;
                if (r >= attrs.scalar) r = 0.0;
                n.value[i] = r;
            }
            break;
        }
        case OpKind::Input:
            break;  // unreachable
    }

    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

std::map<NodeId, Tensor> Graph::backward(NodeId loss) {
    const GraphNode& top = node(loss);
    if (top.value.size() != 1) {
        throw std::invalid_argument("backward: loss node must be scalar, got shape " +
                                    shape_str(top.value.shape));
    }
    for (auto& n : nodes_) {
        n.grad = Tensor();
    }

    auto ensure_grad = [&](NodeId id) -> Tensor& {
        GraphNode& n = mutable_node(id);
        if (n.grad.data.empty() || n.grad.shape != n.value.shape) {
            n.grad = Tensor(n.value.shape, 0.0);
        }
        return n.grad;
    };
    auto wants = [&](NodeId id) { return node(id).requires_grad; };

    ensure_grad(loss).data[0] = 1.0;

    for (NodeId id = loss; id >= 0; --id) {
        GraphNode& n = mutable_node(id);
        if (n.grad.data.empty() || !n.requires_grad) continue;
        const Tensor& g = n.grad;
        const auto& in = n.inputs;
        auto inval = [&](std::size_t i) -> const Tensor& { return node(in[i]).value; };

        switch (n.kind) {
            case OpKind::Input:
                break;
            case OpKind::Conv2d: {
                const auto d = conv_dims(inval(0), inval(1), n.attrs);
                if (wants(in[0])) {
                    Tensor tmp(inval(0).shape);
                    kernels::conv2d_backward_input(inval(1).data.data(), g.data.data(),
                                                   tmp.data.data(), d);
                    Tensor& gx = ensure_grad(in[0]);
                    for (std::int64_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
                }
                if (wants(in[1])) {
                    Tensor tmp(inval(1).shape);
                    kernels::conv2d_backward_weight(inval(0).data.data(), g.data.data(),
                                                    tmp.data.data(), d);
                    Tensor& gw = ensure_grad(in[1]);
                    for (std::int64_t i = 0; i < tmp.size(); ++i) gw[i] += tmp[i];
                }
                if (wants(in[2])) {
                    Tensor tmp(inval(2).shape);
                    kernels::conv2d_backward_bias(g.data.data(), tmp.data.data(), d);
                    Tensor& gb = ensure_grad(in[2]);
                    for (std::int64_t i = 0; i < tmp.size(); ++i) gb[i] += tmp[i];
                }
                break;
            }
            case OpKind::MaxPool2d: {
                if (!wants(in[0])) break;
                const Tensor& x = inval(0);
                const auto d = kernels::Pool2dDims::make(x.shape[0], x.shape[1], x.shape[2],
                                                         x.shape[3], n.attrs.window, n.attrs.stride);
                Tensor tmp(x.shape);
                kernels::maxpool_backward(n.aux.data(), g.data.data(), tmp.data.data(), d);
                Tensor& gx = ensure_grad(in[0]);
                for (std::int64_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
                break;
            }
            case OpKind::Relu: {
                if (!wants(in[0])) break;
                const Tensor& x = inval(0);
                Tensor& gx = ensure_grad(in[0]);
                for (std::int64_t i = 0; i < x.size(); ++i) {
                    if (x[i] > 0.0) gx[i] += g[i];
                }
                break;
            }
            case OpKind::Sigmoid: {
                if (!wants(in[0])) break;
                Tensor& gx = ensure_grad(in[0]);
                for (std::int64_t i = 0; i < g.size(); ++i) {
                    const double y = n.value[i];
                    gx[i] += g[i] * y * (1.0 - y);
                }
                break;
            }
            case OpKind::FullyConnected: {
                const Tensor& x = inval(0);
                const Tensor& w = inval(1);
                const std::int64_t bsz = x.shape[0], fin = x.shape[1], fout = w.shape[1];
                if (wants(in[0])) {
                    Tensor tmp(x.shape);
                    kernels::fc_backward_input(w.data.data(), g.data.data(), tmp.data.data(), bsz, fin, fout);
                    Tensor& gx = ensure_grad(in[0]);
                    for (std::int64_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
                }
                if (wants(in[1])) {
                    Tensor tmp(w.shape);
                    kernels::fc_backward_weight(x.data.data(), g.data.data(), tmp.data.data(), bsz, fin, fout);
                    Tensor& gw = ensure_grad(in[1]);
                    for (std::int64_t i = 0; i < tmp.size(); ++i) gw[i] += tmp[i];
                }
                if (wants(in[2])) {
                    Tensor tmp(inval(2).shape);
                    kernels::fc_backward_bias(g.data.data(), tmp.data.data(), bsz, fout);
                    Tensor& gb = ensure_grad(in[2]);
                    for (std::int64_t i = 0; i < tmp.size(); ++i) gb[i] += tmp[i];
                }
                break;
            }
            case OpKind::Softmax: {
                if (!wants(in[0])) break;
                const std::int64_t k = n.value.shape.back();
                const std::int64_t rows = n.value.size() / k;
                Tensor& gx = ensure_grad(in[0]);
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* yp = n.value.data.data() + r * k;
                    const double* gp = g.data.data() + r * k;
                    double dot = 0.0;
                    for (std::int64_t j = 0; j < k; ++j) dot += gp[j] * yp[j];
                    double* gxp = gx.data.data() + r * k;
                    for (std::int64_t j = 0; j < k; ++j) gxp[j] += yp[j] * (gp[j] - dot);
                }
                break;
            }
            case OpKind::LogSoftmax: {
                if (!wants(in[0])) break;
                const std::int64_t k = n.value.shape.back();
                const std::int64_t rows = n.value.size() / k;
                Tensor& gx = ensure_grad(in[0]);
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* yp = n.value.data.data() + r * k;
                    const double* gp = g.data.data() + r * k;
                    double gsum = 0.0;
                    for (std::int64_t j = 0; j < k; ++j) gsum += gp[j];
                    double* gxp = gx.data.data() + r * k;
                    for (std::int64_t j = 0; j < k; ++j) gxp[j] += gp[j] - std::exp(yp[j]) * gsum;
                }
                break;
            }
            case OpKind::BilinearUpsample: {
                if (!wants(in[0])) break;
                const Tensor& x = inval(0);
                const auto d = kernels::UpsampleDims::make(x.shape[0], x.shape[1], x.shape[2],
                                                           x.shape[3], n.attrs.factor);
                Tensor tmp(x.shape);
                kernels::bilinear_backward(g.data.data(), tmp.data.data(), d);
                Tensor& gx = ensure_grad(in[0]);
                for (std::int64_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
                break;
            }
            case OpKind::Add: {
                if (wants(in[0])) {
                    Tensor& ga = ensure_grad(in[0]);
                    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (wants(in[1])) {
                    Tensor& gb = ensure_grad(in[1]);
                    for (std::int64_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                }
                break;
            }
            case OpKind::Sub: {
                if (wants(in[0])) {
                    Tensor& ga = ensure_grad(in[0]);
                    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (wants(in[1])) {
                    Tensor& gb = ensure_grad(in[1]);
                    for (std::int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                }
                break;
            }
            case OpKind::Mul: {
                const Tensor& a = inval(0);
                const Tensor& b = inval(1);
                if (wants(in[0])) {
                    Tensor& ga = ensure_grad(in[0]);
                    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
                }
                if (wants(in[1])) {
                    Tensor& gb = ensure_grad(in[1]);
                    for (std::int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
                }
                break;
            }
            case OpKind::Div: {
                const Tensor& a = inval(0);
                const Tensor& b = inval(1);
                if (wants(in[0])) {
                    Tensor& ga = ensure_grad(in[0]);
                    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / b[i];
                }
                if (wants(in[1])) {
                    Tensor& gb = ensure_grad(in[1]);
                    for (std::int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * a[i] / (b[i] * b[i]);
                }
                break;
            }
            case OpKind::Min: {
                // Ties route to the first input.
                const Tensor& a = inval(0);
                const Tensor& b = inval(1);
                if (wants(in[0])) {
                    Tensor& ga = ensure_grad(in[0]);
                    for (std::int64_t i = 0; i < g.size(); ++i) {
                        if (a[i] <= b[i]) ga[i] += g[i];
                    }
                }
                if (wants(in[1])) {
                    Tensor& gb = ensure_grad(in[1]);
                    for (std::int64_t i = 0; i < g.size(); ++i) {
                        if (b[i] < a[i]) gb[i] += g[i];
                    }
                }
                break;
            }
            case OpKind::Log: {
                if (!wants(in[0])) break;
                const Tensor& x = inval(0);
                Tensor& gx = ensure_grad(in[0]);
                for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] / x[i];
                break;
            }
            case OpKind::Square: {
                if (!wants(in[0])) break;
                const Tensor& x = inval(0);
                Tensor& gx = ensure_grad(in[0]);
                for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * x[i] * g[i];
                break;
            }
            case OpKind::SumAll: {
                if (!wants(in[0])) break;
                Tensor& gx = ensure_grad(in[0]);
                const double gv = g.data[0];
                for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += gv;
                break;
            }
            case OpKind::MeanAll: {
                if (!wants(in[0])) break;
                Tensor& gx = ensure_grad(in[0]);
                const double gv = g.data[0] / static_cast<double>(gx.size());
                for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += gv;
                break;
            }
            case OpKind::Reshape: {
                if (!wants(in[0])) break;
                Tensor& gx = ensure_grad(in[0]);
                for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                break;
            }
            case OpKind::Concat: {
                const std::int64_t rank = static_cast<std::int64_t>(n.value.shape.size());
                const std::int64_t axis = n.attrs.axis;
                std::int64_t outer = 1, suffix = 1;
                for (std::int64_t a = 0; a < axis; ++a) outer *= n.value.shape[static_cast<std::size_t>(a)];
                for (std::int64_t a = axis + 1; a < rank; ++a) suffix *= n.value.shape[static_cast<std::size_t>(a)];
                const std::int64_t out_row = n.value.shape[static_cast<std::size_t>(axis)] * suffix;
                std::int64_t offset = 0;
                for (std::size_t p = 0; p < in.size(); ++p) {
                    const Tensor& t = inval(p);
                    const std::int64_t chunk = t.shape[static_cast<std::size_t>(axis)] * suffix;
                    if (wants(in[p])) {
                        Tensor& gp = ensure_grad(in[p]);
                        for (std::int64_t o = 0; o < outer; ++o) {
                            const double* src = g.data.data() + o * out_row + offset;
                            double* dst = gp.data.data() + o * chunk;
                            for (std::int64_t i = 0; i < chunk; ++i) dst[i] += src[i];
                        }
                    }
                    offset += chunk;
                }
                break;
            }
            case OpKind::MulConst: {
                if (!wants(in[0])) break;
                Tensor& gx = ensure_grad(in[0]);
                for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.attrs.scalar;
                break;
            }
            case OpKind::AddConst:
            case OpKind::ModConst: {
                if (!wants(in[0])) break;
                Tensor& gx = ensure_grad(in[0]);
                for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                break;
            }
        }
    }

    std::map<NodeId, Tensor> leaf_grads;
    for (NodeId id = 0; id < size(); ++id) {
        const GraphNode& n = node(id);
        if (n.kind == OpKind::Input && n.requires_grad) {
            leaf_grads[id] = n.grad.data.empty() ? Tensor(n.value.shape, 0.0) : n.grad;
        }
    }
    return leaf_grads;
}

namespace ops {

NodeId conv2d(Graph& g, NodeId x, NodeId w, NodeId b,
              std::int64_t stride, std::int64_t padding, std::int64_t dilation) {
    OpAttrs a;
    a.stride = stride;
    a.padding = padding;
    a.dilation = dilation;
    return g.apply(OpKind::Conv2d, {x, w, b}, a);
}

NodeId max_pool2d(Graph& g, NodeId x, std::int64_t window, std::int64_t stride) {
    OpAttrs a;
    a.window = window;
    a.stride = stride;
    return g.apply(OpKind::MaxPool2d, {x}, a);
}

NodeId relu(Graph& g, NodeId x) { return g.apply(OpKind::Relu, {x}); }
NodeId sigmoid(Graph& g, NodeId x) { return g.apply(OpKind::Sigmoid, {x}); }

NodeId fully_connected(Graph& g, NodeId x, NodeId w, NodeId b) {
    return g.apply(OpKind::FullyConnected, {x, w, b});
}

NodeId softmax(Graph& g, NodeId x) { return g.apply(OpKind::Softmax, {x}); }
NodeId log_softmax(Graph& g, NodeId x) { return g.apply(OpKind::LogSoftmax, {x}); }

NodeId bilinear_upsample(Graph& g, NodeId x, std::int64_t factor) {
    OpAttrs a;
    a.factor = factor;
    return g.apply(OpKind::BilinearUpsample, {x}, a);
}

NodeId add(Graph& g, NodeId a, NodeId b) { return g.apply(OpKind::Add, {a, b}); }
NodeId sub(Graph& g, NodeId a, NodeId b) { return g.apply(OpKind::Sub, {a, b}); }
NodeId mul(Graph& g, NodeId a, NodeId b) { return g.apply(OpKind::Mul, {a, b}); }
NodeId div(Graph& g, NodeId a, NodeId b) { return g.apply(OpKind::Div, {a, b}); }
NodeId min(Graph& g, NodeId a, NodeId b) { return g.apply(OpKind::Min, {a, b}); }
NodeId log(Graph& g, NodeId x) { return g.apply(OpKind::Log, {x}); }
NodeId square(Graph& g, NodeId x) { return g.apply(OpKind::Square, {x}); }
NodeId sum_all(Graph& g, NodeId x) { return g.apply(OpKind::SumAll, {x}); }
NodeId mean_all(Graph& g, NodeId x) { return g.apply(OpKind::MeanAll, {x}); }

NodeId reshape(Graph& g, NodeId x, Shape target) {
    OpAttrs a;
    a.shape = std::move(target);
    return g.apply(OpKind::Reshape, {x}, a);
}

NodeId concat(Graph& g, const std::vector<NodeId>& parts, std::int64_t axis) {
    OpAttrs a;
    a.axis = axis;
    return g.apply(OpKind::Concat, parts, a);
}

NodeId mul_const(Graph& g, NodeId x, double c) {
    OpAttrs a;
    a.scalar = c;
    return g.apply(OpKind::MulConst, {x}, a);
}

NodeId add_const(Graph& g, NodeId x, double c) {
    OpAttrs a;
    a.scalar = c;
    return g.apply(OpKind::AddConst, {x}, a);
}

NodeId mod_const(Graph& g, NodeId x, double period) {
    OpAttrs a;
    a.scalar = period;
    return g.apply(OpKind::ModConst, {x}, a);
}

}  // namespace ops

double grad_check(const std::function<NodeId(Graph&, NodeId)>& build, const Tensor& point,
                  double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be > 0");

    auto eval = [&](const Tensor& p) {
        Graph g;
        Tensor t = p;
        t.requires_grad = false;
        const NodeId out = build(g, g.input(std::move(t)));
        const double v = g.value(out).item();
        if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite function value");
        return v;
    };

    Tensor analytic;
    {
        Graph g;
        Tensor t = point;
        t.requires_grad = true;
        const NodeId x = g.input(std::move(t));
        const NodeId out = build(g, x);
        if (g.value(out).size() != 1) {
            throw std::invalid_argument("grad_check: function output must be scalar");
        }
        if (!std::isfinite(g.value(out).item())) {
            throw std::runtime_error("grad_check: non-finite function value");
        }
        auto grads = g.backward(out);
        analytic = grads.count(x) ? grads.at(x) : Tensor(point.shape, 0.0);
    }

    double max_err = 0.0;
    Tensor probe = point;
    for (std::int64_t i = 0; i < point.size(); ++i) {
        const double h = eps * std::max(1.0, std::abs(point[i]));
        probe[i] = point[i] + h;
        const double fp = eval(probe);
        probe[i] = point[i] - h;
        const double fm = eval(probe);
        probe[i] = point[i];
        const double fd = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(fd), 1e-12});
        max_err = std::max(max_err, std::abs(analytic[i] - fd) / denom);
    }
    return max_err;
}

}  // namespace auxmtl
