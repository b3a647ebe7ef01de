#include "kdi/arch.hpp"

#include <algorithm>

#include "kdi/errors.hpp"
#include "kdi/ops.hpp"
#include "kdi/rng.hpp"

namespace kdi {

int ArchSpec::num_classes() const {
    if (layers.empty() || layers.back().kind != LayerKind::Linear) return 0;
    return layers.back().out_features;
}

bool ArchSpec::has_tap(const std::string& name) const {
    return std::any_of(layers.begin(), layers.end(),
                       [&](const LayerSpec& l) { return l.tap == name; });
}

void ArchSpec::validate() const {
    if (layers.empty()) throw ParamError("arch: empty layer list");
    if (layers.back().kind != LayerKind::Linear || layers.back().out_features != 10)
        throw ParamError("arch: chain must end in a linear layer with 10 outputs");
    bool rank4 = true;  // tracks whether the running activation is [N,C,H,W]
    int channels = input_channels;
    bool tapped = false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        switch (l.kind) {
            case LayerKind::Conv:
                if (!rank4) throw ParamError("arch: conv after flattening at layer " +
                                             std::to_string(i));
                if (l.in_ch != channels)
                    throw ParamError("arch: conv in-channels " + std::to_string(l.in_ch) +
                                     " do not match running channels " + std::to_string(channels) +
                                     " at layer " + std::to_string(i));
                channels = l.out_ch;
                break;
            case LayerKind::Relu:
            case LayerKind::MaxPool:
                break;
            case LayerKind::GlobalAvgPool:
                if (!rank4)
                    throw ParamError("arch: duplicate flattening at layer " + std::to_string(i));
                rank4 = false;
                break;
            case LayerKind::Linear:
                if (rank4) throw ParamError("arch: linear before global pooling at layer " +
                                            std::to_string(i));
                if (l.in_features != channels)
                    throw ParamError("arch: linear in-features " + std::to_string(l.in_features) +
                                     " do not match running features " + std::to_string(channels) +
                                     " at layer " + std::to_string(i));
                channels = l.out_features;
                break;
        }
        if (!l.tap.empty() && (l.kind == LayerKind::Relu || l.kind == LayerKind::Conv ||
                               l.kind == LayerKind::MaxPool))
            tapped = true;
    }
    if (!tapped) throw ParamError("arch: no convolutional tap declared");
}

bool ArchSpec::same_as(const ArchSpec& other) const {
    if (input_channels != other.input_channels || layers.size() != other.layers.size())
        return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec &a = layers[i], &b = other.layers[i];
        if (a.kind != b.kind || a.in_ch != b.in_ch || a.out_ch != b.out_ch ||
            a.ksize != b.ksize || a.stride != b.stride || a.padding != b.padding ||
            a.in_features != b.in_features || a.out_features != b.out_features || a.tap != b.tap)
            return false;
    }
    return true;
}

ArchSpec ArchSpec::three_block(int c) {
    if (c < 1) throw ParamError("arch: base channel count must be >= 1");
    ArchSpec a;
    a.input_channels = 1;
    a.layers = {
        {LayerKind::Conv, 1, c, 3, 1, 1, 0, 0, ""},
        {LayerKind::Relu, 0, 0, 0, 1, 0, 0, 0, ""},
        {LayerKind::MaxPool, 0, 0, 0, 1, 0, 0, 0, ""},
        {LayerKind::Conv, c, 2 * c, 3, 1, 1, 0, 0, ""},
        {LayerKind::Relu, 0, 0, 0, 1, 0, 0, 0, ""},
        {LayerKind::MaxPool, 0, 0, 0, 1, 0, 0, 0, ""},
        {LayerKind::Conv, 2 * c, 4 * c, 3, 1, 1, 0, 0, ""},
        {LayerKind::Relu, 0, 0, 0, 1, 0, 0, 0, "layer3"},
        {LayerKind::GlobalAvgPool, 0, 0, 0, 1, 0, 0, 0, ""},
        {LayerKind::Linear, 0, 0, 0, 1, 0, 4 * c, 10, ""},
    };
    return a;
}

ArchSpec ArchSpec::student() { return three_block(8); }
ArchSpec ArchSpec::teacher() { return three_block(16); }

ModelWeights init_weights(const ArchSpec& arch, std::uint64_t seed) {
    arch.validate();
    Rng64 rng{splitmix64(seed ^ kSeedTagInit)};
    ModelWeights w;
    for (const LayerSpec& l : arch.layers) {
        if (l.kind == LayerKind::Conv) {
            const int fan_in = l.in_ch * l.ksize * l.ksize;
            w.params.push_back(
                kaiming_uniform_init(rng, fan_in, {l.out_ch, l.in_ch, l.ksize, l.ksize}));
            w.params.push_back(Tensor::zeros({l.out_ch}));
        } else if (l.kind == LayerKind::Linear) {
            w.params.push_back(kaiming_uniform_init(rng, l.in_features,
                                                    {l.out_features, l.in_features}));
            w.params.push_back(Tensor::zeros({l.out_features}));
        }
    }
    return w;
}

Tensor forward_eval(const ArchSpec& arch, const ModelWeights& weights, const Tensor& x,
                    std::map<std::string, Tensor>* taps) {
    Tensor a = x;
    std::size_t p = 0;
    for (const LayerSpec& l : arch.layers) {
        switch (l.kind) {
            case LayerKind::Conv:
                a = conv2d(a, weights.params.at(p), weights.params.at(p + 1), l.stride, l.padding);
                p += 2;
                break;
            case LayerKind::Relu:
                a = relu(a);
                break;
            case LayerKind::MaxPool:
                a = maxpool2x2(a);
                break;
            case LayerKind::GlobalAvgPool:
                a = global_avg_pool(a);
                break;
            case LayerKind::Linear:
                a = linear(a, weights.params.at(p), weights.params.at(p + 1));
                p += 2;
                break;
        }
        if (!l.tap.empty() && taps) (*taps)[l.tap] = a;
    }
    return a;
}

std::vector<NodeId> params_on_tape(Tape& tape, const ModelWeights& weights) {
    std::vector<NodeId> ids;
    ids.reserve(weights.params.size());
    for (const Tensor& t : weights.params) ids.push_back(tape.leaf(t, true));
    return ids;
}

TapeForward forward_on_tape(Tape& tape, const ArchSpec& arch, const std::vector<NodeId>& params,
                            NodeId x) {
    TapeForward out;
    NodeId a = x;
    std::size_t p = 0;
    for (const LayerSpec& l : arch.layers) {
        switch (l.kind) {
            case LayerKind::Conv:
                a = tape.conv2d(a, params.at(p), params.at(p + 1), l.stride, l.padding);
                p += 2;
                break;
            case LayerKind::Relu:
                a = tape.relu(a);
                break;
            case LayerKind::MaxPool:
                a = tape.maxpool2x2(a);
                break;
            case LayerKind::GlobalAvgPool:
                a = tape.global_avg_pool(a);
                break;
            case LayerKind::Linear:
                a = tape.linear(a, params.at(p), params.at(p + 1));
                p += 2;
                break;
        }
        if (!l.tap.empty()) out.taps[l.tap] = a;
    }
    out.logits = a;
    return out;
}

Tensor dataset_logits(const ArchSpec& arch, const ModelWeights& weights,
                      const std::vector<Tensor>& images, int batch) {
    if (images.empty()) throw ParamError("dataset_logits: empty dataset");
    const int K = arch.num_classes();
    const int S = int(images.size());
    const int H = images[0].dim(1), W = images[0].dim(2);
    Tensor out = Tensor::zeros({S, K});
    for (int start = 0; start < S; start += batch) {
        const int n = std::min(batch, S - start);
        Tensor xb = Tensor::zeros({n, images[0].dim(0), H, W});
        for (int i = 0; i < n; ++i)
            std::copy(images[std::size_t(start + i)].data.begin(),
                      images[std::size_t(start + i)].data.end(),
                      xb.data.begin() + std::size_t(i) * images[0].numel());
        const Tensor zb = forward_eval(arch, weights, xb);
        std::copy(zb.data.begin(), zb.data.end(), out.data.begin() + std::size_t(start) * K);
    }
    return out;
}

}  // namespace kdi
