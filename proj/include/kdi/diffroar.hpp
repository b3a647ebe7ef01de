#pragma once

#include <cstdint>
#include <vector>

#include "kdi/arch.hpp"
#include "kdi/synth.hpp"
#include "kdi/train.hpp"

namespace kdi {

enum class Attributor : std::uint8_t { SALIENCY, RANDOM_RANKING };
enum class MaskSide : std::uint8_t { TOP, BOTTOM };

struct DiffRoarConfig {
    std::vector<double> fractions = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    int n_seeds = 5;
    TrainConfig retrain;  // retrain seeds are retrain.seed + s, s = 0..n_seeds-1

    void validate() const;
};

// Pixel indices sorted by descending |attribution|, ties by ascending
// row-major index.
std::vector<int> rank_pixels(const Tensor& attr);

// Per-pixel mean of the train split, [1,H,W], double accumulation.
Tensor train_mean_image(const Dataset& train);

// Replaces round(fraction*H*W) ranked pixels per image with the fill image's
// values: TOP takes the head of each ranking, BOTTOM the tail. Labels and
// masks are untouched.
Dataset mask_dataset(const Dataset& data, const std::vector<std::vector<int>>& rankings,
                     double fraction, MaskSide side, const Tensor& fill);

// One attribution ranking per sample. SALIENCY ranks |d logit_pred / d x|
// from the base model; RANDOM_RANKING draws per-pixel scores from
// Rng64{splitmix64(seed ^ kSeedTagAttr ^ split_tag ^ index)}, ignoring the
// image.
constexpr std::uint64_t kSeedTagAttr = 0x41545452u;  // "ATTR"
std::vector<std::vector<int>> attribution_rankings(const ArchSpec& arch,
                                                   const ModelWeights& weights,
                                                   const Dataset& data, Attributor attributor,
                                                   std::uint64_t seed, Split split);

struct DiffRoarRow {
    double fraction = 0.0;
    int seed = 0;
    double acc_top_removed = 0.0;
    double acc_bottom_removed = 0.0;
    double score = 0.0;  // 100 * (acc_bottom_removed - acc_top_removed)
};

struct DiffRoarResult {
    std::vector<DiffRoarRow> rows;  // fraction-major, seed-minor order
    double aggregate = 0.0;         // mean over rows
};

DiffRoarResult diffroar(const ArchSpec& base_arch, const ModelWeights& base_weights,
                        const Dataset& train_split, const Dataset& test_split, Attributor attributor,
                        const DiffRoarConfig& config);

}  // namespace kdi
