#include "kdi/tape.hpp"

#include "kdi/errors.hpp"
#include "kdi/ops.hpp"

namespace kdi {

NodeId Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    grads_.emplace_back();
    has_grad_.push_back(false);
    return NodeId(nodes_.size() - 1);
}

const Tape::Node& Tape::at(NodeId id) const {
    if (id < 0 || std::size_t(id) >= nodes_.size())
        throw ContractError("tape: node id " + std::to_string(id) + " out of range");
    return nodes_[std::size_t(id)];
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

namespace {
bool any_grad(const bool a, const bool b = false, const bool c = false) { return a || b || c; }
}  // namespace

NodeId Tape::conv2d(NodeId x, NodeId k, NodeId bias, int stride, int padding) {
    Node n;
    n.kind = OpKind::Conv2d;
    n.in[0] = x;
    n.in[1] = k;
    n.in3 = bias;
    n.stride = stride;
    n.padding = padding;
    n.value = kdi::conv2d(at(x).value, at(k).value, at(bias).value, stride, padding);
    n.requires_grad = any_grad(at(x).requires_grad, at(k).requires_grad, at(bias).requires_grad);
    return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
    Node n;
    n.kind = OpKind::Relu;
    n.in[0] = x;
    n.value = kdi::relu(at(x).value);
    n.requires_grad = at(x).requires_grad;
    return push(std::move(n));
}

NodeId Tape::maxpool2x2(NodeId x) {
    Node n;
    n.kind = OpKind::MaxPool2x2;
    n.in[0] = x;
    n.value = kdi::maxpool2x2(at(x).value);
    n.requires_grad = at(x).requires_grad;
    return push(std::move(n));
}

NodeId Tape::global_avg_pool(NodeId x) {
    Node n;
    n.kind = OpKind::GlobalAvgPool;
    n.in[0] = x;
    n.value = kdi::global_avg_pool(at(x).value);
    n.requires_grad = at(x).requires_grad;
    return push(std::move(n));
}

NodeId Tape::linear(NodeId x, NodeId w, NodeId b) {
    Node n;
    n.kind = OpKind::Linear;
    n.in[0] = x;
    n.in[1] = w;
    n.in3 = b;
    n.value = kdi::linear(at(x).value, at(w).value, at(b).value);
    n.requires_grad = any_grad(at(x).requires_grad, at(w).requires_grad, at(b).requires_grad);
    return push(std::move(n));
}

NodeId Tape::softmax_t(NodeId logits, float temperature) {
    Node n;
    n.kind = OpKind::SoftmaxT;
    n.in[0] = logits;
    n.fparam = temperature;
    n.value = kdi::softmax_t(at(logits).value, temperature);
    n.requires_grad = at(logits).requires_grad;
    return push(std::move(n));
}

NodeId Tape::cross_entropy_soft(NodeId pred, NodeId target) {
    Node n;
    n.kind = OpKind::CrossEntropySoft;
    n.in[0] = pred;
    n.in[1] = target;
    n.value = kdi::cross_entropy_soft(at(pred).value, at(target).value);
    n.requires_grad = any_grad(at(pred).requires_grad, at(target).requires_grad);
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    Node n;
    n.kind = OpKind::Add;
    n.in[0] = a;
    n.in[1] = b;
    n.value = kdi::add(at(a).value, at(b).value);
    n.requires_grad = any_grad(at(a).requires_grad, at(b).requires_grad);
    return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
    Node n;
    n.kind = OpKind::Sub;
    n.in[0] = a;
    n.in[1] = b;
    n.value = kdi::sub(at(a).value, at(b).value);
    n.requires_grad = any_grad(at(a).requires_grad, at(b).requires_grad);
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    Node n;
    n.kind = OpKind::Mul;
    n.in[0] = a;
    n.in[1] = b;
    n.value = kdi::mul(at(a).value, at(b).value);
    n.requires_grad = any_grad(at(a).requires_grad, at(b).requires_grad);
    return push(std::move(n));
}

NodeId Tape::scale(NodeId a, float c) {
    Node n;
    n.kind = OpKind::Scale;
    n.in[0] = a;
    n.fparam = c;
    n.value = kdi::scale(at(a).value, c);
    n.requires_grad = at(a).requires_grad;
    return push(std::move(n));
}

NodeId Tape::sum_all(NodeId a) {
    Node n;
    n.kind = OpKind::SumAll;
    n.in[0] = a;
    n.value = kdi::sum_all(at(a).value);
    n.requires_grad = at(a).requires_grad;
    return push(std::move(n));
}

NodeId Tape::mean_all(NodeId a) {
    Node n;
    n.kind = OpKind::MeanAll;
    n.in[0] = a;
    n.value = kdi::mean_all(at(a).value);
    n.requires_grad = at(a).requires_grad;
    return push(std::move(n));
}

NodeId Tape::pick(NodeId a, std::int64_t flat_index) {
    Node n;
    n.kind = OpKind::Pick;
    n.in[0] = a;
    n.iparam = flat_index;
    n.value = kdi::pick(at(a).value, flat_index);
    n.requires_grad = at(a).requires_grad;
    return push(std::move(n));
}

NodeId Tape::channel_sumsq(NodeId x) {
    Node n;
    n.kind = OpKind::ChannelSumSq;
    n.in[0] = x;
    n.value = kdi::channel_sumsq(at(x).value);
    n.requires_grad = at(x).requires_grad;
    return push(std::move(n));
}

NodeId Tape::l2_normalize_rows(NodeId x) {
    Node n;
    n.kind = OpKind::L2NormalizeRows;
    n.in[0] = x;
    n.value = kdi::l2_normalize_rows(at(x).value);
    n.requires_grad = at(x).requires_grad;
    return push(std::move(n));
}

const Tensor& Tape::value(NodeId id) const { return at(id).value; }

void Tape::accumulate(NodeId id, const Tensor& g) {
    if (!has_grad_[std::size_t(id)]) {
        grads_[std::size_t(id)] = g;
        has_grad_[std::size_t(id)] = true;
        return;
    }
    Tensor& dst = grads_[std::size_t(id)];
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
}

const Tensor& Tape::grad(NodeId id) const {
    const Node& n = at(id);
    if (!has_grad_[std::size_t(id)]) {
        static thread_local Tensor zero;
        zero = Tensor::zeros(n.value.shape);
        return zero;
    }
    return grads_[std::size_t(id)];
}

void Tape::backward(NodeId scalar_node) {
    const Node& root = at(scalar_node);
    if (root.value.numel() != 1)
        throw ContractError("backward: node " + std::to_string(scalar_node) +
                            " holds a non-scalar of shape " + shape_str(root.value.shape));
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        has_grad_[i] = false;
        grads_[i] = Tensor();
    }
    accumulate(scalar_node, Tensor::scalar(1.0f));

    for (NodeId id = scalar_node; id >= 0; --id) {
        const std::size_t ui = std::size_t(id);
        if (!has_grad_[ui] || !nodes_[ui].requires_grad) continue;
        const Node& n = nodes_[ui];
        const Tensor& gy = grads_[ui];
        switch (n.kind) {
            case OpKind::Leaf:
                break;
            case OpKind::Conv2d: {
                Tensor gx, gk, gb;
                conv2d_backward(at(n.in[0]).value, at(n.in[1]).value, n.stride, n.padding, gy, gx,
                                gk, gb);
                if (at(n.in[0]).requires_grad) accumulate(n.in[0], gx);
                if (at(n.in[1]).requires_grad) accumulate(n.in[1], gk);
                if (at(n.in3).requires_grad) accumulate(n.in3, gb);
                break;
            }
            case OpKind::Relu:
                accumulate(n.in[0], relu_backward(at(n.in[0]).value, gy));
                break;
            case OpKind::MaxPool2x2:
                accumulate(n.in[0], maxpool2x2_backward(at(n.in[0]).value, gy));
                break;
            case OpKind::GlobalAvgPool:
                accumulate(n.in[0], global_avg_pool_backward(at(n.in[0]).value, gy));
                break;
            case OpKind::Linear: {
                Tensor gx, gw, gb;
                linear_backward(at(n.in[0]).value, at(n.in[1]).value, gy, gx, gw, gb);
                if (at(n.in[0]).requires_grad) accumulate(n.in[0], gx);
                if (at(n.in[1]).requires_grad) accumulate(n.in[1], gw);
                if (at(n.in3).requires_grad) accumulate(n.in3, gb);
                break;
            }
            case OpKind::SoftmaxT:
                accumulate(n.in[0], softmax_t_backward(n.value, n.fparam, gy));
                break;
            case OpKind::CrossEntropySoft: {
                Tensor gpred, gtarget;
                cross_entropy_soft_backward(at(n.in[0]).value, at(n.in[1]).value, gy.data[0],
                                            gpred, gtarget);
                if (at(n.in[0]).requires_grad) accumulate(n.in[0], gpred);
                if (at(n.in[1]).requires_grad) accumulate(n.in[1], gtarget);
                break;
            }
            case OpKind::Add:
                if (at(n.in[0]).requires_grad) accumulate(n.in[0], gy);
                if (at(n.in[1]).requires_grad) accumulate(n.in[1], gy);
                break;
            case OpKind::Sub:
                if (at(n.in[0]).requires_grad) accumulate(n.in[0], gy);
                if (at(n.in[1]).requires_grad) accumulate(n.in[1], kdi::scale(gy, -1.0f));
                break;
            case OpKind::Mul:
                if (at(n.in[0]).requires_grad) accumulate(n.in[0], kdi::mul(gy, at(n.in[1]).value));
                if (at(n.in[1]).requires_grad) accumulate(n.in[1], kdi::mul(gy, at(n.in[0]).value));
                break;
            case OpKind::Scale:
                accumulate(n.in[0], kdi::scale(gy, n.fparam));
                break;
            case OpKind::SumAll: {
                accumulate(n.in[0], Tensor::full(at(n.in[0]).value.shape, gy.data[0]));
                break;
            }
            case OpKind::MeanAll: {
                const Tensor& xin = at(n.in[0]).value;
                accumulate(n.in[0],
                           Tensor::full(xin.shape, gy.data[0] / float(xin.numel())));
                break;
            }
            case OpKind::Pick: {
                Tensor gx = Tensor::zeros(at(n.in[0]).value.shape);
                gx.data[std::size_t(n.iparam)] = gy.data[0];
                accumulate(n.in[0], gx);
                break;
            }
            case OpKind::ChannelSumSq:
                accumulate(n.in[0], channel_sumsq_backward(at(n.in[0]).value, gy));
                break;
            case OpKind::L2NormalizeRows:
                accumulate(n.in[0], l2_normalize_rows_backward(at(n.in[0]).value, gy));
                break;
        }
    }
}

Tensor Tape::eval(const Node& n, const std::vector<Tensor>& vals) const {
    switch (n.kind) {
        case OpKind::Leaf:
            return n.value;
        case OpKind::Conv2d:
            return kdi::conv2d(vals[std::size_t(n.in[0])], vals[std::size_t(n.in[1])],
                               vals[std::size_t(n.in3)], n.stride, n.padding);
        case OpKind::Relu:
            return kdi::relu(vals[std::size_t(n.in[0])]);
        case OpKind::MaxPool2x2:
            return kdi::maxpool2x2(vals[std::size_t(n.in[0])]);
        case OpKind::GlobalAvgPool:
            return kdi::global_avg_pool(vals[std::size_t(n.in[0])]);
        case OpKind::Linear:
            return kdi::linear(vals[std::size_t(n.in[0])], vals[std::size_t(n.in[1])],
                               vals[std::size_t(n.in3)]);
        case OpKind::SoftmaxT:
            return kdi::softmax_t(vals[std::size_t(n.in[0])], n.fparam);
        case OpKind::CrossEntropySoft:
            return kdi::cross_entropy_soft(vals[std::size_t(n.in[0])], vals[std::size_t(n.in[1])]);
        case OpKind::Add:
            return kdi::add(vals[std::size_t(n.in[0])], vals[std::size_t(n.in[1])]);
        case OpKind::Sub:
            return kdi::sub(vals[std::size_t(n.in[0])], vals[std::size_t(n.in[1])]);
        case OpKind::Mul:
            return kdi::mul(vals[std::size_t(n.in[0])], vals[std::size_t(n.in[1])]);
        case OpKind::Scale:
            return kdi::scale(vals[std::size_t(n.in[0])], n.fparam);
        case OpKind::SumAll:
            return kdi::sum_all(vals[std::size_t(n.in[0])]);
        case OpKind::MeanAll:
            return kdi::mean_all(vals[std::size_t(n.in[0])]);
        case OpKind::Pick:
            return kdi::pick(vals[std::size_t(n.in[0])], n.iparam);
        case OpKind::ChannelSumSq:
            return kdi::channel_sumsq(vals[std::size_t(n.in[0])]);
        case OpKind::L2NormalizeRows:
            return kdi::l2_normalize_rows(vals[std::size_t(n.in[0])]);
    }
    throw ContractError("tape: unknown op kind");
}

Tensor Tape::replay(NodeId id) const {
    at(id);
    std::vector<Tensor> vals(std::size_t(id) + 1);
    for (NodeId i = 0; i <= id; ++i) vals[std::size_t(i)] = eval(nodes_[std::size_t(i)], vals);
    return vals[std::size_t(id)];
}

}  // namespace kdi
