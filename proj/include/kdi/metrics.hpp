#pragma once

#include <cstdint>
#include <vector>

#include "kdi/arch.hpp"
#include "kdi/synth.hpp"
#include "kdi/tensor.hpp"

namespace kdi {

// Band of a normalized attribution value: floor(a*5) clipped to 0..4.
// Bands {0,1} -> class 0 (background), {2,3} -> class 1, {4} -> class 2.
int attribution_band(float a);
int band_class(int band);

struct FiveBandScore {
    double pixel_acc = 0.0, recall = 0.0, precision = 0.0, fpr = 0.0;
};

// counts[pred][gt] over pixels; class 2 is the positive class for
// recall/precision/FPR. Zero denominators yield 0.
struct TernaryConfusion {
    std::int64_t counts[3][3] = {};
    void add(const Tensor& attr01, const std::vector<std::uint8_t>& mask);
    FiveBandScore scores() const;
};

FiveBandScore five_band_score(const Tensor& attr01, const std::vector<std::uint8_t>& mask);

enum class Grouping : std::uint8_t { BG_VS_OBJECT, NONFEATURE_VS_FEATURE };

struct BinaryMetrics {
    bool defined = false;  // needs at least one pixel of each class
    double auroc = 0.0;    // Mann-Whitney rank statistic, ties get half credit
    double auprc = 0.0;    // precision-recall step summation over distinct scores
    double best_f1 = 0.0;  // max F1 over distinct-score thresholds
    double best_precision = 0.0, best_recall = 0.0;
};

BinaryMetrics binary_metrics_pooled(const std::vector<float>& scores,
                                    const std::vector<std::uint8_t>& labels);

// Pixel pooling across samples plus per-sample average and maximum; samples
// of the no-object class are excluded.
struct BinaryScoreSeries {
    BinaryMetrics pooled;
    bool per_sample_defined = false;
    double avg_auroc = 0.0, avg_auprc = 0.0, avg_best_f1 = 0.0;
    double max_auroc = 0.0, max_auprc = 0.0, max_best_f1 = 0.0;
    int samples_used = 0;      // non-excluded samples
    int samples_defined = 0;   // samples with both classes present
};

BinaryScoreSeries binary_metrics(const std::vector<Tensor>& attr01,
                                 const std::vector<const std::vector<std::uint8_t>*>& masks,
                                 const std::vector<int>& labels, Grouping grouping);

// -sum p ln p with 0 ln 0 = 0; p must sum to 1 within 1e-4 with entries >= 0.
double entropy(const std::vector<double>& p);

struct EntropyProtocolResult {
    bool ok = false;    // false when no sample qualifies
    int n_used = 0;
    struct PerModel {
        double entire = 0.0;    // 10-class softmax entropy
        double category = 0.0;  // renormalized 3-class within-category entropy
    };
    std::vector<PerModel> models;
};

// Averages over the first n_samples test samples (dataset order) that every
// model classifies correctly and whose class has a category (class 9 is
// excluded).
EntropyProtocolResult entropy_protocol(
    const std::vector<std::pair<const ArchSpec*, const ModelWeights*>>& models,
    const Dataset& data, const ClassCatalog& catalog, int n_samples);

}  // namespace kdi
