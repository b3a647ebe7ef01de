#pragma once

#include <cstdint>
#include <string>

#include "kdi/arch.hpp"
#include "kdi/tensor.hpp"

namespace kdi {

enum class AttrKind : std::uint8_t { SALIENCY, LOSS_GRAD, INTEGRATED_GRADIENTS };

struct AttributionMap {
    Tensor values;  // [H,W]
    AttrKind kind = AttrKind::SALIENCY;
    int target_class = -1;
};

// |d logit_target / d x| per pixel. target_class < 0 targets the predicted
// class (argmax logit, ties toward the lower id).
AttributionMap saliency(const ArchSpec& arch, const ModelWeights& weights, const Tensor& x,
                        int target_class = -1);

// Signed d CE(softmax(z), onehot(label)) / d x.
AttributionMap loss_gradient(const ArchSpec& arch, const ModelWeights& weights, const Tensor& x,
                             int label);

// (x - baseline) * mean over midpoint-Riemann points t = (k+0.5)/steps of the
// target-logit gradient at baseline + t*(x - baseline). Per-pixel accumulation
// in double.
AttributionMap integrated_gradients(const ArchSpec& arch, const ModelWeights& weights,
                                    const Tensor& x, const Tensor& baseline, int steps,
                                    int target_class);

// Min-max scaling of |values| to [0,1]; constant maps normalize to zeros.
Tensor normalize01(const Tensor& map);

}  // namespace kdi
