#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "kdi/attribution.hpp"
#include "kdi/synth.hpp"
#include "kdi/train.hpp"
#include "oracles.hpp"

using kdi::ArchSpec;
using kdi::AttributionMap;
using kdi::ModelWeights;
using kdi::Tensor;

namespace {

// conv(1->1,1x1,w=a,b=c) -> gap -> linear(1->10): logit_k = lw_k*(a*mean(x)+c)+lb_k,
// so d logit_k / d x_p = lw_k * a / (H*W) at every pixel.
struct LinearProbe {
    ArchSpec arch;
    ModelWeights weights;
};

LinearProbe linear_probe(float a, float c, const std::vector<float>& lw,
                         const std::vector<float>& lb) {
    LinearProbe m;
    kdi::LayerSpec conv;
    conv.kind = kdi::LayerKind::Conv;
    conv.in_ch = 1;
    conv.out_ch = 1;
    conv.ksize = 1;
    conv.stride = 1;
    conv.padding = 0;
    conv.tap = "t";
    kdi::LayerSpec gap;
    gap.kind = kdi::LayerKind::GlobalAvgPool;
    kdi::LayerSpec lin;
    lin.kind = kdi::LayerKind::Linear;
    lin.in_features = 1;
    lin.out_features = 10;
    m.arch.layers = {conv, gap, lin};
    m.arch.input_channels = 1;
    m.arch.validate();
    m.weights = kdi::init_weights(m.arch, 1);
    m.weights.params[0].data[0] = a;
    m.weights.params[1].data[0] = c;
    m.weights.params[2].data = lw;
    m.weights.params[3].data = lb;
    return m;
}

Tensor synth_image(std::uint64_t seed, int index = 0) {
    kdi::SynthConfig c;
    c.n_train = index + 1;
    c.n_test = 1;
    c.image_size = 32;
    c.seed = seed;
    return generate_split(c, kdi::Split::TRAIN).samples[std::size_t(index)].image;
}

Tensor batch1(const Tensor& img) {
    return Tensor({1, img.dim(0), img.dim(1), img.dim(2)}, img.data);
}

double logit_at(const ArchSpec& arch, const ModelWeights& w, const Tensor& x, int k) {
    return double(kdi::forward_eval(arch, w, batch1(x)).data[std::size_t(k)]);
}

}  // namespace

TEST_CASE("saliency on a linear probe is |lw_k * a| / (H*W) everywhere") {
    std::vector<float> lw(10, 0.0f), lb(10, 0.0f);
    lw[1] = -1.0f;
    lw[3] = 0.5f;
    const LinearProbe m = linear_probe(2.0f, 0.25f, lw, lb);
    const Tensor x = synth_image(11);

    const AttributionMap s1 = kdi::saliency(m.arch, m.weights, x, 1);
    REQUIRE(s1.values.shape == std::vector<int>{32, 32});
    CHECK(s1.kind == kdi::AttrKind::SALIENCY);
    for (float v : s1.values.data) CHECK(v == float(2.0 / 1024.0));

    const AttributionMap s3 = kdi::saliency(m.arch, m.weights, x, 3);
    for (float v : s3.values.data) CHECK(v == float(1.0 / 1024.0));

    // Logit 0 has zero weight: all-zero map.
    const AttributionMap s0 = kdi::saliency(m.arch, m.weights, x, 0);
    for (float v : s0.values.data) CHECK(v == 0.0f);
}

TEST_CASE("saliency matches finite differences of the target logit") {
    const ArchSpec arch = ArchSpec::three_block(1);
    const ModelWeights w = kdi::init_weights(arch, 7);
    Tensor x = synth_image(13);
    const AttributionMap s = kdi::saliency(arch, w, x, 2);

    int checked = 0;
    const double h = 1e-3;
    for (std::size_t p = 31; p < x.data.size(); p += 97) {
        const float keep = x.data[p];
        x.data[p] = keep + float(h);
        const double up = logit_at(arch, w, x, 2);
        x.data[p] = keep - float(h);
        const double dn = logit_at(arch, w, x, 2);
        x.data[p] = keep;
        const double fd = std::abs((up - dn) / (2 * h));
        const double got = double(s.values.data[p]);
        if (fd > 1e-3 || got > 1e-3) {
            CHECK(std::abs(got - fd) <= 2e-2 * std::max(fd, got) + 1e-5);
            ++checked;
        }
    }
    CHECK(checked >= 3);
}

TEST_CASE("saliency ignores non-target logits; default target is the argmax") {
    const ArchSpec arch = ArchSpec::three_block(1);
    ModelWeights w = kdi::init_weights(arch, 3);
    const Tensor x = synth_image(17);

    const AttributionMap base = kdi::saliency(arch, w, x, 4);
    ModelWeights w2 = w;
    w2.params.back().data[7] += 100.0f;  // perturb an unrelated class bias
    const AttributionMap same = kdi::saliency(arch, w2, x, 4);
    CHECK(std::memcmp(base.values.data.data(), same.values.data.data(),
                      base.values.data.size() * sizeof(float)) == 0);

    // Default target = argmax logit; force it with a large bias.
    ModelWeights w3 = w;
    w3.params.back().data[6] += 50.0f;
    const AttributionMap def = kdi::saliency(arch, w3, x);
    const AttributionMap explicit6 = kdi::saliency(arch, w3, x, 6);
    CHECK(def.values.data == explicit6.values.data);
    CHECK(def.target_class == explicit6.target_class);

    // All-equal logits tie toward class 0.
    ModelWeights wz = w;
    for (Tensor& p : wz.params) std::fill(p.data.begin(), p.data.end(), 0.0f);
    const AttributionMap tie = kdi::saliency(arch, wz, x);
    const AttributionMap c0 = kdi::saliency(arch, wz, x, 0);
    CHECK(tie.values.data == c0.values.data);
    CHECK(tie.target_class == c0.target_class);

    CHECK_THROWS_AS(kdi::saliency(arch, w, x, 10), kdi::ParamError);
}

TEST_CASE("loss_gradient: signed finite-difference match and closed form") {
    std::vector<float> lw(10, 0.0f), lb(10, 0.0f);
    for (int k = 0; k < 10; ++k) lw[std::size_t(k)] = 0.1f * float(k - 4);
    const LinearProbe m = linear_probe(1.5f, 0.1f, lw, lb);
    const Tensor x = synth_image(19);
    const int label = 2;

    const AttributionMap g = kdi::loss_gradient(m.arch, m.weights, x, label);
    CHECK(g.kind == kdi::AttrKind::LOSS_GRAD);

    // Closed form: a/(H*W) * sum_k (p_k - y_k) lw_k, identical at every pixel.
    const Tensor z = kdi::forward_eval(m.arch, m.weights, batch1(x));
    std::vector<double> zd(z.data.begin(), z.data.end());
    oracle::DT probs = oracle::softmax_t(oracle::DT{{1, 10}, zd}, 1.0);
    double expect = 0.0;
    for (int k = 0; k < 10; ++k)
        expect += (probs.v[std::size_t(k)] - (k == label ? 1.0 : 0.0)) * double(lw[std::size_t(k)]);
    expect *= 1.5 / 1024.0;
    for (float v : g.values.data) CHECK(double(v) == doctest::Approx(expect).epsilon(1e-4));

    // Finite differences on a convolutional model, sign included.
    const ArchSpec arch = ArchSpec::three_block(1);
    const ModelWeights w = kdi::init_weights(arch, 9);
    Tensor xi = synth_image(23);
    const AttributionMap gl = kdi::loss_gradient(arch, w, xi, 5);
    const double h = 1e-3;
    int checked = 0;
    auto loss_of = [&](const Tensor& img) {
        const Tensor logits = kdi::forward_eval(arch, w, batch1(img));
        std::vector<double> v(logits.data.begin(), logits.data.end());
        const oracle::DT p = oracle::softmax_t(oracle::DT{{1, 10}, v}, 1.0);
        return -std::log(std::max(p.v[5], 1e-300));
    };
    for (std::size_t p = 57; p < xi.data.size(); p += 101) {
        const float keep = xi.data[p];
        xi.data[p] = keep + float(h);
        const double up = loss_of(xi);
        xi.data[p] = keep - float(h);
        const double dn = loss_of(xi);
        xi.data[p] = keep;
        const double fd = (up - dn) / (2 * h);
        const double got = double(gl.values.data[p]);
        if (std::abs(fd) > 1e-4 || std::abs(got) > 1e-4) {
            CHECK(std::abs(got - fd) <= 2e-2 * std::max(std::abs(fd), std::abs(got)) + 1e-5);
            ++checked;
        }
    }
    CHECK(checked >= 3);

    CHECK_THROWS_AS(kdi::loss_gradient(arch, w, xi, -1), kdi::ParamError);
    CHECK_THROWS_AS(kdi::loss_gradient(arch, w, xi, 10), kdi::ParamError);
}

TEST_CASE("loss_gradient is near zero for a confidently correct model") {
    std::vector<float> lw(10, 0.2f), lb(10, 0.0f);
    lb[4] = 30.0f;  // softmax(z)_4 ~ 1
    const LinearProbe m = linear_probe(1.0f, 0.0f, lw, lb);
    const Tensor x = synth_image(29);
    const AttributionMap g = kdi::loss_gradient(m.arch, m.weights, x, 4);
    for (float v : g.values.data) CHECK(std::abs(v) < 1e-6f);
}

TEST_CASE("integrated_gradients: exact on linear probes, zero at the baseline") {
    std::vector<float> lw(10, 0.0f), lb(10, 0.0f);
    lw[6] = 0.8f;
    const LinearProbe m = linear_probe(-1.25f, 0.5f, lw, lb);
    const Tensor x = synth_image(31);
    const Tensor baseline = Tensor::zeros({1, 32, 32});

    // Constant gradient: any step count integrates it exactly.
    const AttributionMap ig1 = kdi::integrated_gradients(m.arch, m.weights, x, baseline, 1, 6);
    const AttributionMap ig7 = kdi::integrated_gradients(m.arch, m.weights, x, baseline, 7, 6);
    CHECK(ig1.kind == kdi::AttrKind::INTEGRATED_GRADIENTS);
    const double coef = 0.8 * -1.25 / 1024.0;
    for (std::size_t p = 0; p < x.data.size(); ++p) {
        const double want = double(x.data[p]) * coef;
        CHECK(double(ig1.values.data[p]) == doctest::Approx(want).epsilon(1e-5));
        CHECK(double(ig7.values.data[p]) == doctest::Approx(want).epsilon(1e-5));
    }

    const AttributionMap zero = kdi::integrated_gradients(m.arch, m.weights, x, x, 8, 6);
    for (float v : zero.values.data) CHECK(v == 0.0f);

    CHECK_THROWS_AS(kdi::integrated_gradients(m.arch, m.weights, x, baseline, 0, 6),
                    kdi::ParamError);
    CHECK_THROWS_AS(
        kdi::integrated_gradients(m.arch, m.weights, x, Tensor::zeros({1, 16, 16}), 4, 6),
        kdi::ShapeError);
}

TEST_CASE("integrated_gradients completeness on a trained model") {
    kdi::SynthConfig sc;
    sc.n_train = 40;
    sc.n_test = 8;
    sc.image_size = 32;
    sc.seed = 41;
    const kdi::Dataset train = generate_split(sc, kdi::Split::TRAIN);

    kdi::TrainConfig tc;
    tc.mode = kdi::TrainMode::SCRATCH;
    tc.epochs = 2;
    tc.seed = 5;
    const ArchSpec arch = ArchSpec::three_block(1);
    const ModelWeights w = kdi::train(arch, train, tc);

    const Tensor x = train.samples[3].image;
    const Tensor baseline = Tensor::zeros({1, 32, 32});
    const Tensor logits = kdi::forward_eval(arch, w, batch1(x));
    const int target =
        int(std::max_element(logits.data.begin(), logits.data.end()) - logits.data.begin());

    const AttributionMap ig =
        kdi::integrated_gradients(arch, w, x, baseline, 128, target);
    double total = 0.0;
    for (float v : ig.values.data) total += double(v);
    const double delta = logit_at(arch, w, x, target) - logit_at(arch, w, baseline, target);
    CHECK(std::abs(total - delta) <= std::max(0.01 * std::abs(delta), 1e-3));
}

TEST_CASE("normalize01 examples") {
    const Tensor m({1, 3}, {-2.0f, 0.0f, 2.0f});
    const Tensor n = kdi::normalize01(m);
    CHECK(n.data == std::vector<float>{1.0f, 0.0f, 1.0f});

    const Tensor flat = kdi::normalize01(Tensor::full({2, 2}, 0.7f));
    for (float v : flat.data) CHECK(v == 0.0f);

    Tensor r = Tensor::zeros({4, 4});
    kdi::Rng64 rng{99};
    for (float& v : r.data) v = kdi::uniform_f32(rng) * 4.0f - 2.0f;
    const Tensor nr = kdi::normalize01(r);
    const auto [lo, hi] = std::minmax_element(nr.data.begin(), nr.data.end());
    CHECK(*lo == 0.0f);
    CHECK(*hi == 1.0f);
    for (float v : nr.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}
