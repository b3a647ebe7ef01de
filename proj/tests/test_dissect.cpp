#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <vector>

#include "kdi/dissect.hpp"
#include "kdi/synth.hpp"

using kdi::ArchSpec;
using kdi::BinaryMask;
using kdi::Dataset;
using kdi::DissectionConfig;
using kdi::DissectionReport;
using kdi::Tensor;

namespace {

Dataset synth_small(std::uint64_t seed, int n = 8) {
    kdi::SynthConfig c;
    c.n_train = n;
    c.n_test = 4;
    c.image_size = 32;
    c.seed = seed;
    return generate_split(c, kdi::Split::TRAIN);
}

// Identity-map architecture: a 1x1 conv tap exposes the input image itself.
struct ProbeModel {
    ArchSpec arch;
    kdi::ModelWeights weights;
};

ProbeModel identity_probe(float conv_w, float conv_b) {
    ProbeModel m;
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
    m.weights.params[0].data[0] = conv_w;
    m.weights.params[1].data[0] = conv_b;
    std::fill(m.weights.params[2].data.begin(), m.weights.params[2].data.end(), 0.0f);
    std::fill(m.weights.params[3].data.begin(), m.weights.params[3].data.end(), 0.0f);
    return m;
}

// ---------------------------------------------------------------------------
// Naive re-implementation: plain loops, bool pixels, integer counters. Mirrors
// the documented contract (pooled exact order statistic, corner-aligned
// bilinear in double, binarize >=, dataset-level IoU, ties to lower id).

struct NaiveUnit {
    float threshold = 0.0f;
    std::vector<double> ious;
    std::vector<int> detected;
    int best_concept = -1;
    double best_iou = 0.0;
};

std::vector<std::vector<std::vector<bool>>> naive_concepts(const Dataset& data) {
    const int S = int(data.samples.size());
    const std::size_t hw = std::size_t(data.height) * data.width;
    std::vector<std::vector<std::vector<bool>>> concepts(
        13, std::vector<std::vector<bool>>(std::size_t(S), std::vector<bool>(hw, false)));
    for (int s = 0; s < S; ++s) {
        const int label = data.samples[std::size_t(s)].label;
        const int cat = label <= 2 ? 1 : label <= 5 ? 2 : label <= 8 ? 3 : -1;
        for (std::size_t p = 0; p < hw; ++p) {
            const std::uint8_t m = data.samples[std::size_t(s)].mask[p];
            if (m >= 1) {
                concepts[0][std::size_t(s)][p] = true;
                if (cat > 0) concepts[std::size_t(cat)][std::size_t(s)][p] = true;
            }
            if (m == 2 && label <= 8) concepts[std::size_t(4 + label)][std::size_t(s)][p] = true;
        }
    }
    return concepts;
}

std::vector<float> naive_upsample(const std::vector<float>& map, int d, int H, int W) {
    std::vector<float> out(std::size_t(H) * W);
    for (int y = 0; y < H; ++y) {
        const double sy = (d > 1 && H > 1) ? double(y) * (d - 1) / double(H - 1) : 0.0;
        const int y0 = int(sy);
        const int y1 = std::min(y0 + 1, d - 1);
        const double fy = sy - y0;
        for (int x = 0; x < W; ++x) {
            const double sx = (d > 1 && W > 1) ? double(x) * (d - 1) / double(W - 1) : 0.0;
            const int x0 = int(sx);
            const int x1 = std::min(x0 + 1, d - 1);
            const double fx = sx - x0;
            const double top = double(map[std::size_t(y0) * d + x0]) * (1.0 - fx) +
                               double(map[std::size_t(y0) * d + x1]) * fx;
            const double bot = double(map[std::size_t(y1) * d + x0]) * (1.0 - fx) +
                               double(map[std::size_t(y1) * d + x1]) * fx;
            out[std::size_t(y) * W + x] = float(top * (1.0 - fy) + bot * fy);
        }
    }
    return out;
}

std::vector<NaiveUnit> naive_dissect(const Tensor& acts, const Dataset& data, double q,
                                     double thr) {
    const int S = acts.dim(0), U = acts.dim(1), d = acts.dim(2);
    const int H = data.height, W = data.width;
    const auto concepts = naive_concepts(data);
    std::vector<NaiveUnit> out(static_cast<std::size_t>(U));

    for (int u = 0; u < U; ++u) {
        std::vector<float> values;
        for (int s = 0; s < S; ++s)
            for (int i = 0; i < d * d; ++i)
                values.push_back(acts.data[((std::size_t(s) * U + u) * d * d) + std::size_t(i)]);
        std::sort(values.begin(), values.end());
        std::size_t idx = std::size_t(std::floor((1.0 - q) * double(values.size())));
        if (idx >= values.size()) idx = values.size() - 1;
        const float T = values[idx];

        std::vector<std::uint64_t> inter(13, 0), uni(13, 0);
        for (int s = 0; s < S; ++s) {
            std::vector<float> map(std::size_t(d) * d);
            for (int i = 0; i < d * d; ++i)
                map[std::size_t(i)] = acts.data[((std::size_t(s) * U + u) * d * d) + std::size_t(i)];
            const std::vector<float> up = naive_upsample(map, d, H, W);
            for (int c = 0; c < 13; ++c)
                for (std::size_t p = 0; p < up.size(); ++p) {
                    const bool a = up[p] >= T;
                    const bool b = concepts[std::size_t(c)][std::size_t(s)][p];
                    inter[std::size_t(c)] += a && b;
                    uni[std::size_t(c)] += a || b;
                }
        }
        NaiveUnit& nu = out[std::size_t(u)];
        nu.threshold = T;
        nu.ious.resize(13);
        for (int c = 0; c < 13; ++c) {
            nu.ious[std::size_t(c)] =
                uni[std::size_t(c)] == 0 ? 0.0
                                         : double(inter[std::size_t(c)]) / double(uni[std::size_t(c)]);
            if (nu.ious[std::size_t(c)] >= thr) nu.detected.push_back(c);
            if (nu.ious[std::size_t(c)] > nu.best_iou) {
                nu.best_iou = nu.ious[std::size_t(c)];
                nu.best_concept = c;
            }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("unit_threshold examples and the quantile coverage property") {
    std::vector<float> v200(200);
    for (int i = 0; i < 200; ++i) v200[std::size_t(i)] = float(i + 1);
    CHECK(kdi::unit_threshold(v200, 0.005) == 200.0f);

    std::vector<float> v10(10);
    for (int i = 0; i < 10; ++i) v10[std::size_t(i)] = float(i + 1);
    CHECK(kdi::unit_threshold(v10, 0.5) == 6.0f);

    CHECK(kdi::unit_threshold({3.5f, 3.5f, 3.5f}, 0.25) == 3.5f);
    CHECK_THROWS_AS(kdi::unit_threshold({}, 0.5), kdi::ParamError);
    CHECK_THROWS_AS(kdi::unit_threshold({1.0f}, 0.0), kdi::ParamError);
    CHECK_THROWS_AS(kdi::unit_threshold({1.0f}, 1.0), kdi::ParamError);

    // Distinct-value multisets: fraction of values >= T lies in [q, q + 1/N].
    std::mt19937 gen(9);
    std::uniform_real_distribution<double> qdist(0.001, 0.999);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + int(gen() % 400);
        std::vector<float> vals(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            vals[std::size_t(i)] = float(i) + float(gen() % 1000) * 1e-4f;
        std::shuffle(vals.begin(), vals.end(), gen);
        const double q = qdist(gen);
        const float T = kdi::unit_threshold(vals, q);
        const double frac =
            double(std::count_if(vals.begin(), vals.end(), [&](float v) { return v >= T; })) /
            double(n);
        CHECK(frac >= q);
        CHECK(frac <= q + 1.0 / n + 1e-12);
    }
}

TEST_CASE("upsample_bilinear examples and bounds") {
    Tensor c = Tensor::full({4, 4}, 3.0f);
    const Tensor up_c = kdi::upsample_bilinear(c, 9, 7);
    for (float v : up_c.data) CHECK(v == 3.0f);

    Tensor one({1, 1}, {5.0f});
    const Tensor up_one = kdi::upsample_bilinear(one, 3, 4);
    REQUIRE(up_one.shape == std::vector<int>{3, 4});
    for (float v : up_one.data) CHECK(v == 5.0f);

    Tensor two({2, 2}, {0, 1, 0, 1});
    const Tensor up = kdi::upsample_bilinear(two, 2, 3);
    CHECK(up.at(0, 0) == 0.0f);
    CHECK(up.at(0, 1) == 0.5f);
    CHECK(up.at(0, 2) == 1.0f);
    CHECK(up.at(1, 1) == 0.5f);

    std::mt19937 gen(4);
    std::uniform_real_distribution<float> dist(-2.0f, 2.0f);
    Tensor r = Tensor::zeros({5, 5});
    for (float& v : r.data) v = dist(gen);
    const auto [lo, hi] = std::minmax_element(r.data.begin(), r.data.end());
    const Tensor big = kdi::upsample_bilinear(r, 16, 11);
    for (float v : big.data) {
        CHECK(v >= *lo);
        CHECK(v <= *hi);
    }
}

TEST_CASE("iou examples and brute-force equality on 500 random pairs") {
    BinaryMask a(2, 2), b(2, 2);
    a.set(0, 0);
    a.set(0, 1);
    b.set(0, 0);
    b.set(1, 0);
    CHECK(kdi::iou(a, a) == 1.0);
    CHECK(kdi::iou(a, b) == doctest::Approx(1.0 / 3.0));
    BinaryMask empty(2, 2);
    CHECK(kdi::iou(empty, empty) == 0.0);
    BinaryMask c(2, 2);
    c.set(1, 1);
    CHECK(kdi::iou(a, c) == 0.0);
    CHECK_THROWS_AS(kdi::iou(a, BinaryMask(3, 2)), kdi::ShapeError);

    std::mt19937 gen(10);
    for (int trial = 0; trial < 500; ++trial) {
        BinaryMask ma(8, 8), mb(8, 8);
        std::vector<bool> va(64, false), vb(64, false);
        const int da = 1 + int(gen() % 60), db = 1 + int(gen() % 60);
        for (int i = 0; i < 64; ++i) {
            if (int(gen() % 64) < da) {
                ma.set(i / 8, i % 8);
                va[std::size_t(i)] = true;
            }
            if (int(gen() % 64) < db) {
                mb.set(i / 8, i % 8);
                vb[std::size_t(i)] = true;
            }
        }
        std::uint64_t inter = 0, uni = 0;
        for (int i = 0; i < 64; ++i) {
            inter += va[std::size_t(i)] && vb[std::size_t(i)];
            uni += va[std::size_t(i)] || vb[std::size_t(i)];
        }
        const double want = uni == 0 ? 0.0 : double(inter) / double(uni);
        CHECK(kdi::iou(ma, mb) == want);
        CHECK(kdi::iou(ma, mb) == kdi::iou(mb, ma));
        CHECK(ma.count() == std::uint64_t(std::count(va.begin(), va.end(), true)));
    }
}

TEST_CASE("dissect equals the naive re-implementation bit for bit") {
    const Dataset data = synth_small(15, 8);
    const ArchSpec arch = ArchSpec::three_block(1);  // 4 units at the tap
    const kdi::ModelWeights weights = kdi::init_weights(arch, 2);
    const kdi::ConceptMaskSet concepts = kdi::ConceptMaskSet::build(data, kdi::ClassCatalog::standard());
    const Tensor acts = kdi::collect_activations(arch, weights, data, "layer3");
    REQUIRE(acts.dim(0) == 8);
    REQUIRE(acts.dim(1) == 4);
    REQUIRE(acts.dim(2) == 8);

    for (double q : {0.005, 0.05, 0.3}) {
        DissectionConfig cfg;
        cfg.quantile = q;
        const DissectionReport rep = kdi::dissect(arch, weights, data, concepts, cfg);
        const std::vector<NaiveUnit> naive = naive_dissect(acts, data, q, cfg.iou_threshold);
        REQUIRE(rep.units.size() == naive.size());
        int total = 0, unique = 0, object = 0, feature = 0;
        for (std::size_t u = 0; u < naive.size(); ++u) {
            CHECK(rep.units[u].threshold == naive[u].threshold);
            REQUIRE(rep.units[u].ious.size() == 13);
            for (int c = 0; c < 13; ++c)
                CHECK(rep.units[u].ious[std::size_t(c)] == naive[u].ious[std::size_t(c)]);
            CHECK(rep.units[u].detected == naive[u].detected);
            CHECK(rep.units[u].best_concept == naive[u].best_concept);
            CHECK(rep.units[u].best_iou == naive[u].best_iou);
            if (!naive[u].detected.empty()) {
                ++total;
                unique += naive[u].detected.size() == 1;
                if (naive[u].best_concept <= 3) ++object;
                else ++feature;
            }
        }
        CHECK(rep.total_detectors == total);
        CHECK(rep.unique_detectors == unique);
        CHECK(rep.object_detectors == object);
        CHECK(rep.feature_detectors == feature);
        CHECK(rep.total_detectors == rep.object_detectors + rep.feature_detectors);
        CHECK(rep.unique_detectors <= rep.total_detectors);
        CHECK(rep.total_detectors <= int(rep.units.size()));
    }
}

TEST_CASE("oracle unit whose map equals the FEATURE_0 mask detects FEATURE_0") {
    // Two class-0 samples with a handmade half-image feature region; the
    // identity probe's tap map is the image itself.
    Dataset data;
    data.height = data.width = 32;
    for (int s = 0; s < 2; ++s) {
        kdi::Sample smp;
        smp.label = 0;
        smp.image = Tensor::zeros({1, 32, 32});
        smp.mask.assign(32 * 32, 0);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const std::size_t p = std::size_t(y) * 32 + x;
                if (x < 16) {
                    smp.mask[p] = 2;
                    smp.image.data[p] = 1.0f;
                } else if (x < 18) {
                    smp.mask[p] = 1;
                }
            }
        data.samples.push_back(std::move(smp));
    }
    const ProbeModel probe = identity_probe(1.0f, 0.0f);
    const kdi::ConceptMaskSet concepts =
        kdi::ConceptMaskSet::build(data, kdi::ClassCatalog::standard());

    for (double q : {0.005, 0.25, 0.5}) {
        DissectionConfig cfg;
        cfg.tap = "t";
        cfg.quantile = q;
        const DissectionReport rep = kdi::dissect(probe.arch, probe.weights, data, concepts, cfg);
        REQUIRE(rep.units.size() == 1);
        CHECK(rep.units[0].best_concept == 4);  // FEATURE_0
        CHECK(rep.units[0].best_iou == 1.0);
        CHECK(std::find(rep.units[0].detected.begin(), rep.units[0].detected.end(), 4) !=
              rep.units[0].detected.end());
        CHECK(rep.total_detectors == 1);
        CHECK(rep.feature_detectors == 1);
    }
}

TEST_CASE("constant-activation unit binarizes to all-ones") {
    const Dataset data = synth_small(6, 6);
    const ProbeModel probe = identity_probe(0.0f, 2.5f);
    const kdi::ConceptMaskSet concepts =
        kdi::ConceptMaskSet::build(data, kdi::ClassCatalog::standard());
    DissectionConfig cfg;
    cfg.tap = "t";
    const DissectionReport rep = kdi::dissect(probe.arch, probe.weights, data, concepts, cfg);
    REQUIRE(rep.units.size() == 1);
    CHECK(rep.units[0].threshold == 2.5f);

    std::uint64_t object_pixels = 0;
    for (const kdi::Sample& s : data.samples)
        for (std::uint8_t m : s.mask) object_pixels += m >= 1;
    const double frac = double(object_pixels) / double(6 * 32 * 32);
    CHECK(rep.units[0].ious[0] == frac);
    CHECK((rep.units[0].ious[0] >= 0.05) == (rep.total_detectors >= 1));
}

TEST_CASE("dissect is invariant to the worker count") {
    const Dataset data = synth_small(19, 6);
    const ArchSpec arch = ArchSpec::three_block(2);  // 8 units
    const kdi::ModelWeights weights = kdi::init_weights(arch, 3);
    const kdi::ConceptMaskSet concepts =
        kdi::ConceptMaskSet::build(data, kdi::ClassCatalog::standard());
    DissectionConfig cfg;

    ::setenv("KD_DISSECT_THREADS", "1", 1);
    CHECK(kdi::dissect_thread_count() == 1);
    const DissectionReport a = kdi::dissect(arch, weights, data, concepts, cfg);
    ::setenv("KD_DISSECT_THREADS", "3", 1);
    CHECK(kdi::dissect_thread_count() == 3);
    const DissectionReport b = kdi::dissect(arch, weights, data, concepts, cfg);
    ::unsetenv("KD_DISSECT_THREADS");

    REQUIRE(a.units.size() == b.units.size());
    for (std::size_t u = 0; u < a.units.size(); ++u) {
        CHECK(a.units[u].threshold == b.units[u].threshold);
        CHECK(a.units[u].ious == b.units[u].ious);
        CHECK(a.units[u].detected == b.units[u].detected);
    }
    CHECK(a.total_detectors == b.total_detectors);
}

TEST_CASE("sweep: monotone in the IoU threshold, consistent with dissect") {
    const Dataset data = synth_small(25, 6);
    const ArchSpec arch = ArchSpec::three_block(1);
    const kdi::ModelWeights weights = kdi::init_weights(arch, 4);
    const kdi::ConceptMaskSet concepts =
        kdi::ConceptMaskSet::build(data, kdi::ClassCatalog::standard());

    const std::vector<double> qs = {0.005, 0.05};
    const std::vector<double> thrs = {0.01, 0.03, 0.05};
    const std::vector<kdi::SweepPoint> grid =
        kdi::sweep(arch, weights, data, concepts, "layer3", qs, thrs);
    REQUIRE(grid.size() == 6);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        CHECK(grid[i].unique_detectors <= grid[i].total_detectors);
        if (i % 3 != 0) {
            CHECK(grid[i].quantile == grid[i - 1].quantile);
            CHECK(grid[i].total_detectors <= grid[i - 1].total_detectors);
        }
    }

    // A single-point sweep equals a plain dissect.
    DissectionConfig cfg;
    cfg.quantile = 0.05;
    cfg.iou_threshold = 0.03;
    const DissectionReport rep = kdi::dissect(arch, weights, data, concepts, cfg);
    const auto single = kdi::sweep(arch, weights, data, concepts, "layer3", {0.05}, {0.03});
    REQUIRE(single.size() == 1);
    CHECK(single[0].total_detectors == rep.total_detectors);
    CHECK(single[0].unique_detectors == rep.unique_detectors);

    CHECK_THROWS_AS(kdi::sweep(arch, weights, data, concepts, "layer3", {}, {0.05}),
                    kdi::ParamError);
}
