#include "kdi/attribution.hpp"

#include <cmath>

#include "kdi/errors.hpp"
#include "kdi/ops.hpp"
#include "kdi/train.hpp"

namespace kdi {
namespace {

Tensor as_batch(const Tensor& x) {
    if (x.rank() == 4) return x;
    if (x.rank() == 3) {
        Tensor b = x;
        b.shape = {1, x.dim(0), x.dim(1), x.dim(2)};
        return b;
    }
    throw ShapeError("attribution: input must be [C,H,W] or [1,C,H,W], got " +
                     shape_str(x.shape));
}

struct InputGrad {
    Tensor grad;   // same shape as the batched input
    Tensor logits;  // [1,K]
    int target;
};

// Builds a fresh record with frozen parameters, differentiates the target
// logit (or the CE loss when label >= 0 is passed via use_loss).
InputGrad input_gradient(const ArchSpec& arch, const ModelWeights& weights, const Tensor& x,
                         int target_class, bool use_loss) {
    const Tensor xb = as_batch(x);
    Tape tape;
    std::vector<NodeId> params;
    params.reserve(weights.params.size());
    for (const Tensor& p : weights.params) params.push_back(tape.leaf(p, false));
    const NodeId xn = tape.leaf(xb, true);
    const TapeForward fwd = forward_on_tape(tape, arch, params, xn);
    const Tensor& z = tape.value(fwd.logits);
    const int K = z.dim(1);

    int target = target_class;
    if (target < 0) {
        target = 0;
        for (int j = 1; j < K; ++j)
            if (z.data[std::size_t(j)] > z.data[std::size_t(target)]) target = j;
    } else if (target >= K) {
        throw ParamError("attribution: class " + std::to_string(target) + " outside 0.." +
                         std::to_string(K - 1));
    }

    NodeId out;
    if (use_loss) {
        out = tape.cross_entropy_soft(tape.softmax_t(fwd.logits, 1.0f),
                                      tape.leaf(onehot({target}, K), false));
    } else {
        out = tape.pick(fwd.logits, target);
    }
    tape.backward(out);
    return {tape.grad(xn), z, target};
}

Tensor to_hw(const Tensor& g) {
    Tensor m = Tensor::zeros({g.dim(2), g.dim(3)});
    m.data.assign(g.data.begin(), g.data.end());
    return m;
}

}  // namespace

AttributionMap saliency(const ArchSpec& arch, const ModelWeights& weights, const Tensor& x,
                        int target_class) {
    InputGrad r = input_gradient(arch, weights, x, target_class, false);
    Tensor m = to_hw(r.grad);
    for (auto& v : m.data) v = std::abs(v);
    return {std::move(m), AttrKind::SALIENCY, r.target};
}

AttributionMap loss_gradient(const ArchSpec& arch, const ModelWeights& weights, const Tensor& x,
                             int label) {
    if (label < 0) throw ParamError("loss_gradient: label must be a valid class id");
    InputGrad r = input_gradient(arch, weights, x, label, true);
    return {to_hw(r.grad), AttrKind::LOSS_GRAD, label};
}

AttributionMap integrated_gradients(const ArchSpec& arch, const ModelWeights& weights,
                                    const Tensor& x, const Tensor& baseline, int steps,
                                    int target_class) {
    if (steps < 1) throw ParamError("integrated_gradients: steps must be >= 1");
    const Tensor xb = as_batch(x);
    const Tensor bb = as_batch(baseline);
    expect_same_shape(xb, bb, "integrated_gradients baseline");

    int target = target_class;
    if (target < 0) target = saliency(arch, weights, x, -1).target_class;

    std::vector<double> acc(xb.data.size(), 0.0);
    for (int k = 0; k < steps; ++k) {
        const double t = (k + 0.5) / double(steps);
        Tensor xt = bb;
        for (std::size_t i = 0; i < xt.data.size(); ++i)
            xt.data[i] = float(double(bb.data[i]) + t * (double(xb.data[i]) - bb.data[i]));
        const InputGrad r = input_gradient(arch, weights, xt, target, false);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += double(r.grad.data[i]);
    }

    Tensor m = Tensor::zeros({xb.dim(2), xb.dim(3)});
    for (std::size_t i = 0; i < m.data.size(); ++i)
        m.data[i] = float((double(xb.data[i]) - bb.data[i]) * acc[i] / double(steps));
    return {std::move(m), AttrKind::INTEGRATED_GRADIENTS, target};
}

Tensor normalize01(const Tensor& map) {
    Tensor out = map;
    for (auto& v : out.data) {
        if (!std::isfinite(v)) throw ParamError("normalize01: non-finite attribution value");
        v = std::abs(v);
    }
    float lo = out.data[0], hi = out.data[0];
    for (float v : out.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi == lo) {
        for (auto& v : out.data) v = 0.0f;
        return out;
    }
    const float inv = 1.0f / (hi - lo);
    for (auto& v : out.data) v = (v - lo) * inv;
    return out;
}

}  // namespace kdi
