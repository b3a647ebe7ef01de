#include "kdi/synth.hpp"

#include <cmath>

#include "kdi/dissect.hpp"
#include "kdi/errors.hpp"

namespace kdi {

const char* category_name(Category c) {
    switch (c) {
        case Category::CIRCULAR: return "CIRCULAR";
        case Category::RECTANGULAR: return "RECTANGULAR";
        case Category::TAIL: return "TAIL";
        case Category::NONE: return "NONE";
    }
    return "?";
}

Category ClassCatalog::category_of(int class_id) const {
    for (const Entry& e : entries)
        if (e.class_id == class_id) return e.category;
    throw ParamError("catalog: unknown class " + std::to_string(class_id));
}

std::vector<int> ClassCatalog::category_classes(int class_id) const {
    const Category cat = category_of(class_id);
    std::vector<int> out;
    for (const Entry& e : entries)
        if (e.category == cat) out.push_back(e.class_id);
    return out;
}

ClassCatalog ClassCatalog::standard() {
    ClassCatalog c;
    c.entries = {
        {0, Category::CIRCULAR, "circle_outline", "center_disk"},
        {1, Category::CIRCULAR, "circle_outline", "horizontal_bar"},
        {2, Category::CIRCULAR, "circle_outline", "two_dots"},
        {3, Category::RECTANGULAR, "rect_outline", "diagonal"},
        {4, Category::RECTANGULAR, "rect_outline", "corner_notch"},
        {5, Category::RECTANGULAR, "rect_outline", "inner_rect"},
        {6, Category::TAIL, "ellipse_body", "tail_0deg"},
        {7, Category::TAIL, "ellipse_body", "tail_120deg"},
        {8, Category::TAIL, "ellipse_body", "tail_240deg"},
        {9, Category::NONE, "none", "none"},
    };
    return c;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, Split split, std::uint64_t index) {
    const std::uint64_t tag = split == Split::TRAIN ? kSeedTagTrain : kSeedTagTest;
    return splitmix64(dataset_seed ^ tag ^ index);
}

Geometry draw_geometry(Rng64& geom_rng, int image_size) {
    const double jx = -0.15 + 0.30 * uniform_f32(geom_rng);
    const double jy = -0.15 + 0.30 * uniform_f32(geom_rng);
    const double sc = 0.18 + 0.12 * uniform_f32(geom_rng);
    return {(0.5 + jx) * image_size, (0.5 + jy) * image_size, sc * image_size};
}

namespace {

constexpr float kObjectIntensity = 0.85f;
constexpr float kMarkIntensity = 1.0f;

void fill_background(Rng64& bg_rng, int size, Tensor& image) {
    const std::uint64_t kind = uniform_below(bg_rng, 3);
    if (kind == 0) {  // dark
        for (auto& v : image.data) v = 0.05f + 0.03f * uniform_f32(bg_rng);
    } else if (kind == 1) {  // blurred: low-frequency 8x8 field in [0, 0.3]
        Tensor grid = Tensor::zeros({8, 8});
        for (auto& v : grid.data) v = 0.3f * uniform_f32(bg_rng);
        image = upsample_bilinear(grid, size, size);
        image.shape = {1, size, size};
    } else {  // noisy
        for (auto& v : image.data) v = 0.175f + 0.175f * uniform_f32(bg_rng);
    }
}

double dist_to_segment(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::hypot(dx, dy);
}

// 1 = object body/outline, 2 = distinguishing mark, 0 = neither.
int classify_pixel(int class_id, const Geometry& g, int x, int y) {
    const double dx = x - g.cx, dy = y - g.cy;
    if (class_id <= 2) {
        const double r = g.s;
        const double dist = std::hypot(dx, dy);
        int v = (dist >= r - 2.0 && dist <= r) ? 1 : 0;
        if (class_id == 0 && dist <= 0.25 * r) v = 2;
        if (class_id == 1 && std::abs(dy) <= 1.0 && std::abs(dx) <= r - 2.0) v = 2;
        if (class_id == 2) {
            const double d1 = std::hypot(dx + 0.5 * r, dy);
            const double d2 = std::hypot(dx - 0.5 * r, dy);
            if (std::min(d1, d2) <= 0.15 * r) v = 2;
        }
        return v;
    }
    if (class_id <= 5) {
        const double ax = g.s, ay = 0.7 * g.s;
        const bool inside = std::abs(dx) <= ax && std::abs(dy) <= ay;
        int v = (inside && (std::abs(dx) >= ax - 2.0 || std::abs(dy) >= ay - 2.0)) ? 1 : 0;
        if (class_id == 3 && inside &&
            std::abs(dy * ax - dx * ay) <= std::hypot(ax, ay))
            v = 2;
        if (class_id == 4 && dx >= -ax && dx <= -ax + 0.5 * ay && dy >= -ay &&
            dy <= -ay + 0.5 * ay)
            v = 2;
        if (class_id == 5) {
            const double hx = 0.5 * ax, hy = 0.5 * ay;
            if (std::abs(dx) <= hx && std::abs(dy) <= hy &&
                (std::abs(dx) >= hx - 2.0 || std::abs(dy) >= hy - 2.0))
                v = 2;
        }
        return v;
    }
    if (class_id <= 8) {
        const double ax = g.s, ay = 0.65 * g.s;
        int v = ((dx / ax) * (dx / ax) + (dy / ay) * (dy / ay) <= 1.0) ? 1 : 0;
        const double th = (class_id - 6) * 2.0 * M_PI / 3.0;
        const double sx = g.cx + ax * std::cos(th), sy = g.cy - ay * std::sin(th);
        const double ex = sx + 0.9 * g.s * std::cos(th), ey = sy - 0.9 * g.s * std::sin(th);
        if (dist_to_segment(x, y, sx, sy, ex, ey) <= 1.0) v = 2;
        return v;
    }
    return 0;
}

}  // namespace

void render_class(int class_id, std::uint64_t seed, int image_size, Tensor& image,
                  std::vector<std::uint8_t>& mask) {
    if (class_id < 0 || class_id > 9)
        throw ParamError("render_class: class id " + std::to_string(class_id) + " outside 0..9");
    Rng64 bg_rng{splitmix64(seed ^ kSeedTagBackground)};
    Rng64 geom_rng{splitmix64(seed ^ kSeedTagGeometry)};

    image = Tensor::zeros({1, image_size, image_size});
    mask.assign(std::size_t(image_size) * image_size, 0);
    fill_background(bg_rng, image_size, image);
    if (class_id == 9) return;

    const Geometry g = draw_geometry(geom_rng, image_size);
    for (int y = 0; y < image_size; ++y)
        for (int x = 0; x < image_size; ++x) {
            const int v = classify_pixel(class_id, g, x, y);
            if (v == 0) continue;
            const std::size_t i = std::size_t(y) * image_size + x;
            mask[i] = std::uint8_t(v);
            image.data[i] = v == 2 ? kMarkIntensity : kObjectIntensity;
        }
}

Dataset generate_split(const SynthConfig& config, Split split) {
    if (config.n_train <= 0 || config.n_test <= 0)
        throw ParamError("synth: sample counts must be positive");
    if (config.image_size < 32 || config.image_size % 2 != 0)
        throw ParamError("synth: image_size must be even and >= 32, got " +
                         std::to_string(config.image_size));
    const int n = split == Split::TRAIN ? config.n_train : config.n_test;
    Dataset d;
    d.height = d.width = config.image_size;
    d.samples.resize(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        Sample& s = d.samples[std::size_t(i)];
        s.label = i % 10;
        render_class(s.label, sample_seed(config.seed, split, std::uint64_t(i)),
                     config.image_size, s.image, s.mask);
    }
    return d;
}

}  // namespace kdi
