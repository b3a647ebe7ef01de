#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kdi/arch.hpp"
#include "kdi/synth.hpp"
#include "kdi/tensor.hpp"

namespace kdi {

// Packed H*W binary mask with popcount-based set algebra.
struct BinaryMask {
    int height = 0, width = 0;
    std::vector<std::uint64_t> bits;

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), bits((std::size_t(h) * w + 63) / 64, 0) {}
    void set(int y, int x) {
        const std::size_t i = std::size_t(y) * width + x;
        bits[i >> 6] |= 1ull << (i & 63);
    }
    bool get(int y, int x) const {
        const std::size_t i = std::size_t(y) * width + x;
        return (bits[i >> 6] >> (i & 63)) & 1;
    }
    std::uint64_t count() const;
};

std::uint64_t intersection_count(const BinaryMask& a, const BinaryMask& b);
std::uint64_t union_count(const BinaryMask& a, const BinaryMask& b);

// |a and b| / |a or b|; 0 when both masks are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

// 13 concepts over the synthesized ground truth:
//   0            OBJECT_ANY        mask >= 1, every sample
//   1..3         OBJECT_<category> mask >= 1 on samples of that category
//   4..12        FEATURE_k         mask == 2 on samples of class k
struct ConceptMaskSet {
    std::vector<std::string> names;                  // size 13
    std::vector<std::vector<BinaryMask>> masks;      // [concept][sample]
    int n_samples = 0;

    static ConceptMaskSet build(const Dataset& data, const ClassCatalog& catalog);
};
constexpr int kNumConcepts = 13;

struct DissectionConfig {
    std::string tap = "layer3";
    double quantile = 0.005;
    double iou_threshold = 0.05;
};

struct UnitRecord {
    int unit = 0;
    float threshold = 0.0f;
    int best_concept = -1;       // -1 when the unit detects nothing
    double best_iou = 0.0;
    std::vector<int> detected;   // ascending concept ids with IoU >= threshold
    std::vector<double> ious;    // size kNumConcepts
};

struct DissectionReport {
    DissectionConfig config;
    std::vector<UnitRecord> units;
    int object_detectors = 0;    // best concept in 0..3
    int feature_detectors = 0;   // best concept in 4..12
    int unique_detectors = 0;    // |detected| == 1
    int total_detectors = 0;     // object_detectors + feature_detectors
};

// Exact order statistic: sort ascending, T = value at index floor((1-q)*N).
float unit_threshold(std::vector<float> values, double q);

// Corner-aligned bilinear interpolation; nested lerps evaluated in double:
//   sy = y*(d-1)/(H-1) (0 when d or H is 1), v = lerp over the 2x2 cell.
Tensor upsample_bilinear(const Tensor& map, int out_h, int out_w);

// Activations at the tap for every sample: [S, U, d, d], dataset order.
Tensor collect_activations(const ArchSpec& arch, const ModelWeights& weights,
                           const Dataset& data, const std::string& tap);

// Worker count for the per-unit loop: KD_DISSECT_THREADS when set, otherwise
// std::thread::hardware_concurrency().
int dissect_thread_count();

DissectionReport dissect(const ArchSpec& arch, const ModelWeights& weights, const Dataset& data,
                         const ConceptMaskSet& concepts, const DissectionConfig& config);

struct SweepPoint {
    double quantile = 0.0;
    double iou_threshold = 0.0;
    int unique_detectors = 0;
    int total_detectors = 0;
};

// One dissect per (q, thr) grid point with activations collected once and the
// per-unit value sort shared across quantiles.
std::vector<SweepPoint> sweep(const ArchSpec& arch, const ModelWeights& weights,
                              const Dataset& data, const ConceptMaskSet& concepts,
                              const std::string& tap, const std::vector<double>& q_list,
                              const std::vector<double>& thr_list);

}  // namespace kdi
