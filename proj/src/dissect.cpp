#include "kdi/dissect.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <thread>

#include "kdi/errors.hpp"

namespace kdi {

std::uint64_t BinaryMask::count() const {
    std::uint64_t n = 0;
    for (std::uint64_t w : bits) n += std::uint64_t(std::popcount(w));
    return n;
}

std::uint64_t intersection_count(const BinaryMask& a, const BinaryMask& b) {
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i)
        n += std::uint64_t(std::popcount(a.bits[i] & b.bits[i]));
    return n;
}

std::uint64_t union_count(const BinaryMask& a, const BinaryMask& b) {
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i)
        n += std::uint64_t(std::popcount(a.bits[i] | b.bits[i]));
    return n;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError("iou: mask shapes " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                         std::to_string(b.width));
    const std::uint64_t u = union_count(a, b);
    return u == 0 ? 0.0 : double(intersection_count(a, b)) / double(u);
}

ConceptMaskSet ConceptMaskSet::build(const Dataset& data, const ClassCatalog& catalog) {
    ConceptMaskSet set;
    set.n_samples = int(data.samples.size());
    set.names = {"OBJECT_ANY",        "OBJECT_CIRCULAR", "OBJECT_RECTANGULAR", "OBJECT_TAIL",
                 "FEATURE_0",         "FEATURE_1",       "FEATURE_2",          "FEATURE_3",
                 "FEATURE_4",         "FEATURE_5",       "FEATURE_6",          "FEATURE_7",
                 "FEATURE_8"};
    set.masks.assign(kNumConcepts, {});
    for (auto& per_sample : set.masks)
        per_sample.assign(std::size_t(set.n_samples), BinaryMask(data.height, data.width));

    for (int s = 0; s < set.n_samples; ++s) {
        const Sample& sample = data.samples[std::size_t(s)];
        const Category cat = catalog.category_of(sample.label);
        const int cat_concept = cat == Category::CIRCULAR      ? 1
                                : cat == Category::RECTANGULAR ? 2
                                : cat == Category::TAIL        ? 3
                                                               : -1;
        for (int y = 0; y < data.height; ++y)
            for (int x = 0; x < data.width; ++x) {
                const std::uint8_t m = sample.mask[std::size_t(y) * data.width + x];
                if (m >= 1) {
                    set.masks[0][std::size_t(s)].set(y, x);
                    if (cat_concept > 0) set.masks[std::size_t(cat_concept)][std::size_t(s)].set(y, x);
                }
                if (m == 2 && sample.label <= 8)
                    set.masks[std::size_t(4 + sample.label)][std::size_t(s)].set(y, x);
            }
    }
    return set;
}

float unit_threshold(std::vector<float> values, double q) {
    if (values.empty()) throw ParamError("unit_threshold: empty value multiset");
    if (!(q > 0.0 && q < 1.0))
        throw ParamError("unit_threshold: quantile must lie in (0,1), got " + std::to_string(q));
    std::sort(values.begin(), values.end());
    std::size_t idx = std::size_t(std::floor((1.0 - q) * double(values.size())));
    if (idx >= values.size()) idx = values.size() - 1;
    return values[idx];
}

Tensor upsample_bilinear(const Tensor& map, int out_h, int out_w) {
    expect_rank(map, 2, "upsample input");
    if (out_h < 1 || out_w < 1)
        throw ParamError("upsample: target extents must be >= 1");
    const int h = map.dim(0), w = map.dim(1);
    Tensor out = Tensor::zeros({out_h, out_w});
    for (int y = 0; y < out_h; ++y) {
        const double sy = (h > 1 && out_h > 1) ? double(y) * (h - 1) / double(out_h - 1) : 0.0;
        const int y0 = int(sy);
        const int y1 = std::min(y0 + 1, h - 1);
        const double fy = sy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double sx = (w > 1 && out_w > 1) ? double(x) * (w - 1) / double(out_w - 1) : 0.0;
            const int x0 = int(sx);
            const int x1 = std::min(x0 + 1, w - 1);
            const double fx = sx - x0;
            const double top = double(map.at(y0, x0)) * (1.0 - fx) + double(map.at(y0, x1)) * fx;
            const double bot = double(map.at(y1, x0)) * (1.0 - fx) + double(map.at(y1, x1)) * fx;
            out.data[std::size_t(y) * out_w + x] = float(top * (1.0 - fy) + bot * fy);
        }
    }
    return out;
}

Tensor collect_activations(const ArchSpec& arch, const ModelWeights& weights,
                           const Dataset& data, const std::string& tap) {
    if (!arch.has_tap(tap)) throw ContractError("collect_activations: unknown tap '" + tap + "'");
    if (data.samples.empty()) throw ParamError("collect_activations: empty dataset");
    const int S = int(data.samples.size());
    const int C = data.samples[0].image.dim(0);
    constexpr int kBatch = 32;

    Tensor acts;
    for (int start = 0; start < S; start += kBatch) {
        const int n = std::min(kBatch, S - start);
        Tensor xb = Tensor::zeros({n, C, data.height, data.width});
        for (int i = 0; i < n; ++i) {
            const Sample& s = data.samples[std::size_t(start + i)];
            std::copy(s.image.data.begin(), s.image.data.end(),
                      xb.data.begin() + std::size_t(i) * s.image.numel());
        }
        std::map<std::string, Tensor> taps;
        forward_eval(arch, weights, xb, &taps);
        const Tensor& t = taps.at(tap);
        if (t.rank() != 4)
            throw ContractError("collect_activations: tap '" + tap + "' is not a spatial map");
        if (acts.numel() == 0) acts = Tensor::zeros({S, t.dim(1), t.dim(2), t.dim(3)});
        std::copy(t.data.begin(), t.data.end(),
                  acts.data.begin() + std::size_t(start) * t.dim(1) * t.dim(2) * t.dim(3));
    }
    return acts;
}

int dissect_thread_count() {
    if (const char* env = std::getenv("KD_DISSECT_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc >= 1 ? int(hc) : 1;
}

namespace {

// Copies one unit's map for one sample out of the [S,U,d,d] stack.
Tensor unit_map(const Tensor& acts, int sample, int unit) {
    const int d1 = acts.dim(2), d2 = acts.dim(3);
    Tensor m = Tensor::zeros({d1, d2});
    const float* src = acts.data.data() +
                       ((std::size_t(sample) * acts.dim(1) + unit) * d1) * d2;
    std::copy(src, src + std::size_t(d1) * d2, m.data.begin());
    return m;
}

BinaryMask binarize(const Tensor& map, float threshold) {
    BinaryMask b(map.dim(0), map.dim(1));
    for (int y = 0; y < map.dim(0); ++y)
        for (int x = 0; x < map.dim(1); ++x)
            if (map.at(y, x) >= threshold) b.set(y, x);
    return b;
}

struct UnitIous {
    float threshold = 0.0f;
    std::vector<double> ious;  // kNumConcepts
};

// Dataset-level IoU for one unit at one threshold.
UnitIous unit_ious(const Tensor& acts, int unit, float threshold, const ConceptMaskSet& concepts,
                   int out_h, int out_w) {
    const int S = acts.dim(0);
    std::vector<std::uint64_t> inter(kNumConcepts, 0), uni(kNumConcepts, 0);
    for (int s = 0; s < S; ++s) {
        const BinaryMask a = binarize(upsample_bilinear(unit_map(acts, s, unit), out_h, out_w),
                                      threshold);
        for (int c = 0; c < kNumConcepts; ++c) {
            const BinaryMask& m = concepts.masks[std::size_t(c)][std::size_t(s)];
            inter[std::size_t(c)] += intersection_count(a, m);
            uni[std::size_t(c)] += union_count(a, m);
        }
    }
    UnitIous r;
    r.threshold = threshold;
    r.ious.resize(kNumConcepts);
    for (int c = 0; c < kNumConcepts; ++c)
        r.ious[std::size_t(c)] =
            uni[std::size_t(c)] == 0
                ? 0.0
                : double(inter[std::size_t(c)]) / double(uni[std::size_t(c)]);
    return r;
}

UnitRecord record_from_ious(int unit, const UnitIous& ui, double iou_threshold) {
    UnitRecord rec;
    rec.unit = unit;
    rec.threshold = ui.threshold;
    rec.ious = ui.ious;
    for (int c = 0; c < kNumConcepts; ++c) {
        if (ui.ious[std::size_t(c)] >= iou_threshold) rec.detected.push_back(c);
        if (ui.ious[std::size_t(c)] > rec.best_iou) {
            rec.best_iou = ui.ious[std::size_t(c)];
            rec.best_concept = c;  // strict > keeps the lower concept id on ties
        }
    }
    return rec;
}

void for_each_unit(int units, const std::function<void(int)>& body) {
    const int workers = std::min(dissect_thread_count(), units);
    if (workers <= 1) {
        for (int u = 0; u < units; ++u) body(u);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (int u = w; u < units; u += workers) body(u);
        });
    for (auto& t : pool) t.join();
}

}  // namespace

DissectionReport dissect(const ArchSpec& arch, const ModelWeights& weights, const Dataset& data,
                         const ConceptMaskSet& concepts, const DissectionConfig& config) {
    if (concepts.n_samples != int(data.samples.size()))
        throw ContractError("dissect: concept masks cover " + std::to_string(concepts.n_samples) +
                            " samples but the dataset has " +
                            std::to_string(data.samples.size()));
    if (!(config.quantile > 0.0 && config.quantile < 1.0) ||
        !(config.iou_threshold > 0.0 && config.iou_threshold < 1.0))
        throw ParamError("dissect: quantile and iou_threshold must lie in (0,1)");

    const Tensor acts = collect_activations(arch, weights, data, config.tap);
    const int U = acts.dim(1);
    const std::size_t per_unit = std::size_t(acts.dim(0)) * acts.dim(2) * acts.dim(3);

    DissectionReport report;
    report.config = config;
    report.units.resize(std::size_t(U));
    for_each_unit(U, [&](int u) {
        std::vector<float> values;
        values.reserve(per_unit);
        for (int s = 0; s < acts.dim(0); ++s) {
            const float* src =
                acts.data.data() + ((std::size_t(s) * U + u) * acts.dim(2)) * acts.dim(3);
            values.insert(values.end(), src, src + std::size_t(acts.dim(2)) * acts.dim(3));
        }
        const float t = unit_threshold(std::move(values), config.quantile);
        report.units[std::size_t(u)] = record_from_ious(
            u, unit_ious(acts, u, t, concepts, data.height, data.width), config.iou_threshold);
    });

    for (const UnitRecord& rec : report.units) {
        if (rec.detected.empty()) continue;
        ++report.total_detectors;
        if (rec.best_concept <= 3)
            ++report.object_detectors;
        else
            ++report.feature_detectors;
        if (rec.detected.size() == 1) ++report.unique_detectors;
    }
    return report;
}

std::vector<SweepPoint> sweep(const ArchSpec& arch, const ModelWeights& weights,
                              const Dataset& data, const ConceptMaskSet& concepts,
                              const std::string& tap, const std::vector<double>& q_list,
                              const std::vector<double>& thr_list) {
    if (q_list.empty() || thr_list.empty()) throw ParamError("sweep: empty grid axis");
    if (concepts.n_samples != int(data.samples.size()))
        throw ContractError("sweep: concept masks do not align with the dataset");

    const Tensor acts = collect_activations(arch, weights, data, tap);
    const int U = acts.dim(1);
    const int nq = int(q_list.size());

    // ious[u][qi][c]
    std::vector<std::vector<UnitIous>> ious;
    ious.assign(std::size_t(U), std::vector<UnitIous>(std::size_t(nq)));
    for_each_unit(U, [&](int u) {
        std::vector<float> values;
        values.reserve(std::size_t(acts.dim(0)) * acts.dim(2) * acts.dim(3));
        for (int s = 0; s < acts.dim(0); ++s) {
            const float* src =
                acts.data.data() + ((std::size_t(s) * U + u) * acts.dim(2)) * acts.dim(3);
            values.insert(values.end(), src, src + std::size_t(acts.dim(2)) * acts.dim(3));
        }
        std::sort(values.begin(), values.end());
        for (int qi = 0; qi < nq; ++qi) {
            const double q = q_list[std::size_t(qi)];
            if (!(q > 0.0 && q < 1.0)) throw ParamError("sweep: quantile outside (0,1)");
            std::size_t idx = std::size_t(std::floor((1.0 - q) * double(values.size())));
            if (idx >= values.size()) idx = values.size() - 1;
            ious[std::size_t(u)][std::size_t(qi)] =
                unit_ious(acts, u, values[idx], concepts, data.height, data.width);
        }
    });

    std::vector<SweepPoint> grid;
    grid.reserve(q_list.size() * thr_list.size());
    for (int qi = 0; qi < nq; ++qi)
        for (double thr : thr_list) {
            SweepPoint pt;
            pt.quantile = q_list[std::size_t(qi)];
            pt.iou_threshold = thr;
            for (int u = 0; u < U; ++u) {
                const UnitRecord rec =
                    record_from_ious(u, ious[std::size_t(u)][std::size_t(qi)], thr);
                if (rec.detected.empty()) continue;
                ++pt.total_detectors;
                if (rec.detected.size() == 1) ++pt.unique_detectors;
            }
            grid.push_back(pt);
        }
    return grid;
}

}  // namespace kdi
