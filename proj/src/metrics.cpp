#include "kdi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kdi/errors.hpp"

namespace kdi {

int attribution_band(float a) {
    const int b = int(std::floor(a * 5.0f));
    return std::clamp(b, 0, 4);
}

int band_class(int band) { return band < 2 ? 0 : band < 4 ? 1 : 2; }

void TernaryConfusion::add(const Tensor& attr01, const std::vector<std::uint8_t>& mask) {
    if (std::size_t(attr01.numel()) != mask.size())
        throw ShapeError("five_band: map has " + std::to_string(attr01.numel()) +
                         " pixels, mask has " + std::to_string(mask.size()));
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const float a = attr01.data[i];
        if (!(a >= 0.0f && a <= 1.0f))
            throw ParamError("five_band: attribution value " + std::to_string(a) +
                             " outside [0,1]");
        if (mask[i] > 2)
            throw ParamError("five_band: mask value " + std::to_string(int(mask[i])) +
                             " outside {0,1,2}");
        ++counts[band_class(attribution_band(a))][mask[i]];
    }
}

FiveBandScore TernaryConfusion::scores() const {
    std::int64_t total = 0, diag = 0;
    std::int64_t gt_pos = 0, pred_pos = 0, tp = 0, gt_neg = 0, fp = 0;
    for (int p = 0; p < 3; ++p)
        for (int g = 0; g < 3; ++g) {
            total += counts[p][g];
            if (p == g) diag += counts[p][g];
            if (g == 2) gt_pos += counts[p][g];
            if (p == 2) pred_pos += counts[p][g];
            if (p == 2 && g == 2) tp += counts[p][g];
            if (g != 2) {
                gt_neg += counts[p][g];
                if (p == 2) fp += counts[p][g];
            }
        }
    FiveBandScore s;
    s.pixel_acc = total ? double(diag) / double(total) : 0.0;
    s.recall = gt_pos ? double(tp) / double(gt_pos) : 0.0;
    s.precision = pred_pos ? double(tp) / double(pred_pos) : 0.0;
    s.fpr = gt_neg ? double(fp) / double(gt_neg) : 0.0;
    return s;
}

FiveBandScore five_band_score(const Tensor& attr01, const std::vector<std::uint8_t>& mask) {
    TernaryConfusion c;
    c.add(attr01, mask);
    return c.scores();
}

BinaryMetrics binary_metrics_pooled(const std::vector<float>& scores,
                                    const std::vector<std::uint8_t>& labels) {
    if (scores.size() != labels.size())
        throw ShapeError("binary_metrics: score/label length mismatch");
    const std::size_t n = scores.size();
    std::int64_t pos = 0;
    for (std::uint8_t l : labels) {
        if (l > 1) throw ParamError("binary_metrics: labels must be 0 or 1");
        pos += l;
    }
    const std::int64_t neg = std::int64_t(n) - pos;
    BinaryMetrics m;
    if (pos == 0 || neg == 0) return m;  // undefined, flagged
    m.defined = true;

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return scores[a] < scores[b];
    });

    // AUROC from tie-averaged ranks; doubled rank sums stay integral.
    std::int64_t two_rank_sum_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        std::int64_t group_pos = 0;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            group_pos += labels[order[j]];
            ++j;
        }
        two_rank_sum_pos += group_pos * std::int64_t(i + j + 1);  // 2*avg 1-based rank
        i = j;
    }
    m.auroc = double(two_rank_sum_pos - pos * (pos + 1)) / double(2 * pos * neg);

    // Walk distinct scores descending: everything >= threshold is predicted
    // positive. AUPRC = sum of (delta recall) * precision; best F1 keeps the
    // first maximum (highest threshold).
    std::int64_t tp = 0, fp = 0;
    double auprc = 0.0, prev_recall = 0.0;
    for (std::size_t i = n; i > 0;) {
        std::size_t j = i;
        while (j > 0 && scores[order[j - 1]] == scores[order[i - 1]]) {
            if (labels[order[j - 1]]) ++tp;
            else ++fp;
            --j;
        }
        const double recall = double(tp) / double(pos);
        const double precision = double(tp) / double(tp + fp);
        auprc += (recall - prev_recall) * precision;
        prev_recall = recall;
        const double f1 = double(2 * tp) / double(2 * tp + fp + (pos - tp));
        if (f1 > m.best_f1) {
            m.best_f1 = f1;
            m.best_precision = precision;
            m.best_recall = recall;
        }
        i = j;
    }
    m.auprc = auprc;
    return m;
}

BinaryScoreSeries binary_metrics(const std::vector<Tensor>& attr01,
                                 const std::vector<const std::vector<std::uint8_t>*>& masks,
                                 const std::vector<int>& labels, Grouping grouping) {
    if (attr01.size() != masks.size() || attr01.size() != labels.size())
        throw ShapeError("binary_metrics: maps, masks, and labels must align");
    BinaryScoreSeries series;
    std::vector<float> pooled_scores;
    std::vector<std::uint8_t> pooled_labels;
    double sum_auroc = 0.0, sum_auprc = 0.0, sum_f1 = 0.0;

    for (std::size_t s = 0; s < attr01.size(); ++s) {
        if (labels[s] == 9) continue;  // no-object class excluded
        const std::vector<std::uint8_t>& mask = *masks[s];
        std::vector<float> scores(attr01[s].data.begin(), attr01[s].data.end());
        std::vector<std::uint8_t> bin(mask.size());
        for (std::size_t i = 0; i < mask.size(); ++i)
            bin[i] = grouping == Grouping::BG_VS_OBJECT ? (mask[i] >= 1) : (mask[i] == 2);
        ++series.samples_used;
        pooled_scores.insert(pooled_scores.end(), scores.begin(), scores.end());
        pooled_labels.insert(pooled_labels.end(), bin.begin(), bin.end());

        const BinaryMetrics per = binary_metrics_pooled(scores, bin);
        if (!per.defined) continue;
        ++series.samples_defined;
        sum_auroc += per.auroc;
        sum_auprc += per.auprc;
        sum_f1 += per.best_f1;
        series.max_auroc = std::max(series.max_auroc, per.auroc);
        series.max_auprc = std::max(series.max_auprc, per.auprc);
        series.max_best_f1 = std::max(series.max_best_f1, per.best_f1);
    }

    series.pooled = binary_metrics_pooled(pooled_scores, pooled_labels);
    if (series.samples_defined > 0) {
        series.per_sample_defined = true;
        series.avg_auroc = sum_auroc / series.samples_defined;
        series.avg_auprc = sum_auprc / series.samples_defined;
        series.avg_best_f1 = sum_f1 / series.samples_defined;
    }
    return series;
}

double entropy(const std::vector<double>& p) {
    double sum = 0.0;
    for (double v : p) {
        if (v < 0.0) throw ParamError("entropy: negative probability " + std::to_string(v));
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-4)
        throw ParamError("entropy: probabilities sum to " + std::to_string(sum) +
                         ", expected 1 within 1e-4");
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

EntropyProtocolResult entropy_protocol(
    const std::vector<std::pair<const ArchSpec*, const ModelWeights*>>& models,
    const Dataset& data, const ClassCatalog& catalog, int n_samples) {
    if (models.size() < 2) throw ParamError("entropy_protocol: needs at least 2 models");
    if (n_samples < 1) throw ParamError("entropy_protocol: n_samples must be >= 1");

    std::vector<Tensor> images;
    images.reserve(data.samples.size());
    for (const Sample& s : data.samples) images.push_back(s.image);
    std::vector<Tensor> logits;
    logits.reserve(models.size());
    for (const auto& [arch, weights] : models)
        logits.push_back(dataset_logits(*arch, *weights, images));

    const int K = logits[0].dim(1);
    EntropyProtocolResult result;
    result.models.resize(models.size());
    std::vector<double> sum_entire(models.size(), 0.0), sum_category(models.size(), 0.0);

    for (std::size_t s = 0; s < data.samples.size() && result.n_used < n_samples; ++s) {
        const int label = data.samples[s].label;
        if (catalog.category_of(label) == Category::NONE) continue;
        bool all_correct = true;
        for (const Tensor& z : logits) {
            const float* row = z.data.data() + s * std::size_t(K);
            int best = 0;
            for (int j = 1; j < K; ++j)
                if (row[j] > row[best]) best = j;
            if (best != label) {
                all_correct = false;
                break;
            }
        }
        if (!all_correct) continue;

        const std::vector<int> cat_classes = catalog.category_classes(label);
        for (std::size_t mi = 0; mi < models.size(); ++mi) {
            const float* row = logits[mi].data.data() + s * std::size_t(K);
            double zmax = row[0];
            for (int j = 1; j < K; ++j) zmax = std::max(zmax, double(row[j]));
            std::vector<double> p(static_cast<std::size_t>(K), 0.0);
            double zsum = 0.0;
            for (int j = 0; j < K; ++j) {
                p[std::size_t(j)] = std::exp(double(row[j]) - zmax);
                zsum += p[std::size_t(j)];
            }
            for (auto& v : p) v /= zsum;
            sum_entire[mi] += entropy(p);

            std::vector<double> pc;
            double csum = 0.0;
            for (int c : cat_classes) {
                pc.push_back(p[std::size_t(c)]);
                csum += p[std::size_t(c)];
            }
            for (auto& v : pc) v /= csum;
            sum_category[mi] += entropy(pc);
        }
        ++result.n_used;
    }

    if (result.n_used == 0) return result;  // ok stays false
    result.ok = true;
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
        result.models[mi].entire = sum_entire[mi] / result.n_used;
        result.models[mi].category = sum_category[mi] / result.n_used;
    }
    return result;
}

}  // namespace kdi
