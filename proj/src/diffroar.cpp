#include "kdi/diffroar.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "kdi/attribution.hpp"
#include "kdi/errors.hpp"
#include "parallel.hpp"

namespace kdi {

void DiffRoarConfig::validate() const {
    if (fractions.empty()) throw ParamError("diffroar: fractions must be non-empty");
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        if (!(fractions[i] > 0.0 && fractions[i] < 1.0))
            throw ParamError("diffroar: fractions must lie in (0, 1), got " +
                             std::to_string(fractions[i]));
        if (i > 0 && !(fractions[i] > fractions[i - 1]))
            throw ParamError("diffroar: fractions must be strictly increasing");
    }
    if (n_seeds < 1) throw ParamError("diffroar: n_seeds must be >= 1");
    retrain.validate();
    if (retrain.mode != TrainMode::SCRATCH)
        throw ParamError("diffroar: retraining is from scratch; set retrain mode accordingly");
}

std::vector<int> rank_pixels(const Tensor& attr) {
    const std::int64_t n = attr.numel();
    std::vector<int> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return std::fabs(attr[a]) > std::fabs(attr[b]);
    });
    return order;
}

Tensor train_mean_image(const Dataset& train) {
    if (train.samples.empty()) throw ParamError("train_mean_image: empty dataset");
    const std::int64_t n = train.samples[0].image.numel();
    std::vector<double> acc(static_cast<std::size_t>(n), 0.0);
    for (const Sample& s : train.samples) {
        if (s.image.numel() != n)
            throw ShapeError("train_mean_image: inconsistent image sizes");
        for (std::int64_t i = 0; i < n; ++i) acc[static_cast<std::size_t>(i)] += s.image[i];
    }
    Tensor mean = Tensor::zeros({1, train.height, train.width});
    for (std::int64_t i = 0; i < n; ++i)
        mean[i] = static_cast<float>(acc[static_cast<std::size_t>(i)] /
                                     static_cast<double>(train.samples.size()));
    return mean;
}

Dataset mask_dataset(const Dataset& data, const std::vector<std::vector<int>>& rankings,
                     double fraction, MaskSide side, const Tensor& fill) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ParamError("mask_dataset: fraction must lie in (0, 1)");
    if (rankings.size() != data.samples.size())
        throw ParamError("mask_dataset: one ranking per sample required");
    const std::size_t hw = static_cast<std::size_t>(data.height) * data.width;
    if (fill.numel() != static_cast<std::int64_t>(hw))
        throw ShapeError("mask_dataset: fill image does not match the dataset resolution");
    const std::size_t m = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(hw)));

    Dataset out;
    out.height = data.height;
    out.width = data.width;
    out.samples = data.samples;
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
        const std::vector<int>& order = rankings[i];
        if (order.size() != hw)
            throw ParamError("mask_dataset: ranking " + std::to_string(i) + " has wrong length");
        Tensor& img = out.samples[i].image;
        for (std::size_t k = 0; k < m; ++k) {
            const int px = side == MaskSide::TOP ? order[k] : order[hw - 1 - k];
            img[px] = fill[px];
        }
    }
    return out;
}

std::vector<std::vector<int>> attribution_rankings(const ArchSpec& arch,
                                                   const ModelWeights& weights,
                                                   const Dataset& data, Attributor attributor,
                                                   std::uint64_t seed, Split split) {
    const std::size_t hw = static_cast<std::size_t>(data.height) * data.width;
    const std::uint64_t tag = split == Split::TRAIN ? kSeedTagTrain : kSeedTagTest;
    std::vector<std::vector<int>> rankings;
    rankings.reserve(data.samples.size());
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        if (attributor == Attributor::SALIENCY) {
            AttributionMap map = saliency(arch, weights, data.samples[i].image);
            rankings.push_back(rank_pixels(map.values));
        } else {
            Rng64 rng{splitmix64(seed ^ kSeedTagAttr ^ tag ^ static_cast<std::uint64_t>(i))};
            Tensor scores = Tensor::zeros({data.height, data.width});
            for (std::size_t p = 0; p < hw; ++p)
                scores[static_cast<std::int64_t>(p)] = uniform_f32(rng);
            rankings.push_back(rank_pixels(scores));
        }
    }
    return rankings;
}

DiffRoarResult diffroar(const ArchSpec& base_arch, const ModelWeights& base_weights,
                        const Dataset& train_split, const Dataset& test_split, Attributor attributor,
                        const DiffRoarConfig& config) {
    config.validate();
    const auto train_ranks =
        attribution_rankings(base_arch, base_weights, train_split, attributor, config.retrain.seed,
                             Split::TRAIN);
    const auto test_ranks =
        attribution_rankings(base_arch, base_weights, test_split, attributor, config.retrain.seed,
                             Split::TEST);
    const Tensor fill = train_mean_image(train_split);

    // The (fraction, seed, side) grid is embarrassingly parallel: each cell
    // trains its own model on its own masked copy; accuracies are merged by
    // cell index, so row order stays fraction-major, seed-minor.
    const std::size_t n_seeds = static_cast<std::size_t>(config.n_seeds);
    const std::size_t cells = config.fractions.size() * n_seeds * 2;
    std::vector<double> acc(cells, 0.0);
    parallel_tasks(cells, [&](std::size_t cell) {
        const std::size_t f = cell / (n_seeds * 2);
        const std::size_t s = (cell / 2) % n_seeds;
        const MaskSide side = cell % 2 == 0 ? MaskSide::TOP : MaskSide::BOTTOM;
        const double fraction = config.fractions[f];
        const Dataset masked_train = mask_dataset(train_split, train_ranks, fraction, side, fill);
        const Dataset masked_test = mask_dataset(test_split, test_ranks, fraction, side, fill);
        TrainConfig tc = config.retrain;
        tc.seed = config.retrain.seed + static_cast<std::uint64_t>(s);
        const ModelWeights w = train(base_arch, masked_train, tc);
        acc[cell] = evaluate(base_arch, w, masked_test);
    });

    DiffRoarResult result;
    double total = 0.0;
    for (std::size_t f = 0; f < config.fractions.size(); ++f) {
        for (std::size_t s = 0; s < n_seeds; ++s) {
            const std::size_t base = (f * n_seeds + s) * 2;
            DiffRoarRow row;
            row.fraction = config.fractions[f];
            row.seed = static_cast<int>(s);
            row.acc_top_removed = acc[base];
            row.acc_bottom_removed = acc[base + 1];
            row.score = 100.0 * (row.acc_bottom_removed - row.acc_top_removed);
            total += row.score;
            result.rows.push_back(row);
        }
    }
    result.aggregate = total / static_cast<double>(result.rows.size());
    return result;
}

}  // namespace kdi
