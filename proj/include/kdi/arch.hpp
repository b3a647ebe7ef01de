#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kdi/tape.hpp"
#include "kdi/tensor.hpp"

namespace kdi {

enum class LayerKind : std::uint8_t { Conv, Relu, MaxPool, GlobalAvgPool, Linear };

struct LayerSpec {
    LayerKind kind;
    int in_ch = 0, out_ch = 0, ksize = 0, stride = 1, padding = 0;  // conv
    int in_features = 0, out_features = 0;                          // linear
    std::string tap;  // non-empty: expose this layer's output under this name
};

struct ArchSpec {
    std::vector<LayerSpec> layers;
    int input_channels = 1;

    int num_classes() const;
    bool has_tap(const std::string& name) const;
    // Chain must end in a linear layer with 10 outputs and carry at least one
    // tap on a rank-4 (conv block) output.
    void validate() const;
    bool same_as(const ArchSpec& other) const;

    // conv(1->c,3x3,p1)-relu-pool, conv(c->2c)-relu-pool, conv(2c->4c)-relu
    // [tap "layer3"], gap, linear(4c->10); student c=8, teacher c=16.
    static ArchSpec three_block(int c);
    static ArchSpec student();
    static ArchSpec teacher();
};

struct ModelWeights {
    // Conv and linear layers contribute (weight, bias) pairs in layer
    // declaration order.
    std::vector<Tensor> params;
    struct EpochStat {
        float loss = 0.0f;
        float accuracy = 0.0f;
    };
    std::vector<EpochStat> history;
};

// Kaiming-uniform weights (fan_in = Cin*k*k for conv, Din for linear) and
// zero biases, drawn from Rng64{splitmix64(seed ^ kSeedTagInit)} in parameter
// order.
constexpr std::uint64_t kSeedTagInit = 0x494E4954u;  // "INIT"
ModelWeights init_weights(const ArchSpec& arch, std::uint64_t seed);

// Pure inference; fills taps (name -> activation tensor) when non-null.
Tensor forward_eval(const ArchSpec& arch, const ModelWeights& weights, const Tensor& x,
                    std::map<std::string, Tensor>* taps = nullptr);

// Leaves for every parameter (requires_grad = true), in parameter order.
std::vector<NodeId> params_on_tape(Tape& tape, const ModelWeights& weights);

struct TapeForward {
    NodeId logits = -1;
    std::map<std::string, NodeId> taps;
};
TapeForward forward_on_tape(Tape& tape, const ArchSpec& arch, const std::vector<NodeId>& params,
                            NodeId x);

// Logits for the whole dataset, [S, classes]; per-sample batches do not
// change the result.
Tensor dataset_logits(const ArchSpec& arch, const ModelWeights& weights,
                      const std::vector<Tensor>& images, int batch = 32);

}  // namespace kdi
