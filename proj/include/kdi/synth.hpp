#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kdi/rng.hpp"
#include "kdi/tensor.hpp"

namespace kdi {

enum class Category : std::uint8_t { CIRCULAR, RECTANGULAR, TAIL, NONE };

const char* category_name(Category c);

// 10 classes: 0-2 circular, 3-5 rectangular, 6-8 tail, 9 no object.
struct ClassCatalog {
    struct Entry {
        int class_id;
        Category category;
        std::string base_shape;
        std::string mark;
    };
    std::vector<Entry> entries;

    Category category_of(int class_id) const;
    // All class ids sharing the class's category (size 3), ascending.
    std::vector<int> category_classes(int class_id) const;
    static ClassCatalog standard();
};

struct Sample {
    Tensor image;                     // [1,H,W], values in [0,1]
    int label = 0;                    // 0..9
    std::vector<std::uint8_t> mask;   // H*W ternary: 0 bg, 1 localization, 2 feature
};

struct Dataset {
    int height = 0;
    int width = 0;
    std::vector<Sample> samples;
};

struct SynthConfig {
    int n_train = 6400;
    int n_test = 1600;
    int image_size = 64;
    std::uint64_t seed = 7;
};

enum class Split : std::uint8_t { TRAIN, TEST };

// Per-sample seed derivation: splitmix64(seed ^ split_tag ^ index) with the
// tags below, then two sub-streams so geometry can be re-derived without
// replaying the background draws:
//   bg_seed   = splitmix64(sample_seed ^ kSeedTagBackground)
//   geom_seed = splitmix64(sample_seed ^ kSeedTagGeometry)
constexpr std::uint64_t kSeedTagTrain = 0x5452414900000000ull;       // "TRAI"
constexpr std::uint64_t kSeedTagTest = 0x5445535400000000ull;        // "TEST"
constexpr std::uint64_t kSeedTagBackground = 0x4247u;                // "BG"
constexpr std::uint64_t kSeedTagGeometry = 0x47454Fu;                // "GEO"

std::uint64_t sample_seed(std::uint64_t dataset_seed, Split split, std::uint64_t index);

// Geometry drawn from the geometry stream, in this order:
//   jx, jy ~ uniform[-0.15, 0.15);  sc ~ uniform[0.18, 0.30)
// giving center (cx, cy) = ((0.5+jx)*size, (0.5+jy)*size) and scale s = sc*size.
struct Geometry {
    double cx, cy, s;
};
Geometry draw_geometry(Rng64& geom_rng, int image_size);

// Rasterization rules (pixel (x, y) sampled at integer coordinates, dx = x-cx,
// dy = y-cy, dist = hypot(dx, dy)); object intensity 0.85, mark intensity 1.0:
//   circular (r = s): outline r-2 <= dist <= r
//     class 0 mark: dist <= 0.25*r              (filled center disk)
//     class 1 mark: |dy| <= 1 and |dx| <= r-2   (horizontal bar)
//     class 2 mark: within 0.15*r of (cx +/- r/2, cy)  (two dots)
//   rectangular (ax = s, ay = 0.7*s): outline |dx|<=ax, |dy|<=ay, and
//     (|dx| >= ax-2 or |dy| >= ay-2)
//     class 3 mark: inside rect and |dy*ax - dx*ay| <= hypot(ax, ay) (diagonal)
//     class 4 mark: dx in [-ax, -ax+0.5*ay], dy in [-ay, -ay+0.5*ay] (notch)
//     class 5 mark: inner outline at half extents, stroke 2
//   tail (ax = s, ay = 0.65*s): body (dx/ax)^2 + (dy/ay)^2 <= 1; the tail is
//     the mark: within distance 1 of the segment from
//     (cx + ax*cos(th), cy - ay*sin(th)) along (cos(th), -sin(th)), length
//     0.9*s, th = 0/120/240 deg for classes 6/7/8
//   class 9: background only, mask all zero
void render_class(int class_id, std::uint64_t sample_seed, int image_size, Tensor& image,
                  std::vector<std::uint8_t>& mask);

Dataset generate_split(const SynthConfig& config, Split split);

}  // namespace kdi
