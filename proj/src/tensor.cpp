#include "kdi/tensor.hpp"

#include <sstream>

namespace kdi {

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

static void validate_shape(const std::vector<int>& s) {
    if (s.empty() || s.size() > 4)
        throw ShapeError("tensor rank must be 1..4, got " + shape_str(s));
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i] < 1)
            throw ShapeError("tensor extent at axis " + std::to_string(i) +
                             " must be >= 1, got " + shape_str(s));
}

Tensor::Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    validate_shape(shape);
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
}

Tensor Tensor::zeros(std::vector<int> s) {
    validate_shape(s);
    Tensor t;
    t.data.assign(static_cast<std::size_t>(shape_numel(s)), 0.0f);
    t.shape = std::move(s);
    return t;
}

Tensor Tensor::full(std::vector<int> s, float v) {
    Tensor t = zeros(std::move(s));
    for (float& x : t.data) x = v;
    return t;
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(data.size()); }

void expect_rank(const Tensor& t, int rank, const char* what) {
    if (t.rank() != rank)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape));
}

void expect_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

}  // namespace kdi
