#pragma once

#include <cstdint>
#include <vector>

#include "kdi/tensor.hpp"

namespace kdi {

using NodeId = std::int32_t;

enum class OpKind : std::uint8_t {
    Leaf,
    Conv2d,
    Relu,
    MaxPool2x2,
    GlobalAvgPool,
    Linear,
    SoftmaxT,
    CrossEntropySoft,
    Add,
    Sub,
    Mul,
    Scale,
    SumAll,
    MeanAll,
    Pick,
    ChannelSumSq,
    L2NormalizeRows,
};

// Reverse-mode tape. Nodes are appended in evaluation order; backward walks
// them in reverse, accumulating vector-Jacobian products. replay() re-executes
// the recorded graph from the leaves and must reproduce values bit for bit.
class Tape {
public:
    NodeId leaf(Tensor value, bool requires_grad = true);

    NodeId conv2d(NodeId x, NodeId k, NodeId bias, int stride, int padding);
    NodeId relu(NodeId x);
    NodeId maxpool2x2(NodeId x);
    NodeId global_avg_pool(NodeId x);
    NodeId linear(NodeId x, NodeId w, NodeId b);
    NodeId softmax_t(NodeId logits, float temperature);
    NodeId cross_entropy_soft(NodeId pred, NodeId target);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, float c);
    NodeId sum_all(NodeId a);
    NodeId mean_all(NodeId a);
    NodeId pick(NodeId a, std::int64_t flat_index);
    NodeId channel_sumsq(NodeId x);
    NodeId l2_normalize_rows(NodeId x);

    const Tensor& value(NodeId id) const;
    // Seeds d(node)/d(node) = 1 and accumulates grads for every ancestor.
    // The node must hold a scalar; previous grads are cleared first.
    void backward(NodeId scalar_node);
    const Tensor& grad(NodeId id) const;  // zeros if backward never reached it
    Tensor replay(NodeId id) const;
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        OpKind kind;
        NodeId in[2] = {-1, -1};
        NodeId in3 = -1;  // conv bias / linear bias
        int stride = 0, padding = 0;
        float fparam = 0.0f;        // temperature or scale factor
        std::int64_t iparam = 0;    // pick index
        Tensor value;
        bool requires_grad = false;
    };

    NodeId push(Node node);
    const Node& at(NodeId id) const;
    Tensor eval(const Node& n, const std::vector<Tensor>& vals) const;
    void accumulate(NodeId id, const Tensor& g);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<bool> has_grad_;
};

}  // namespace kdi
