#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "kdi/errors.hpp"

namespace kdi {

// Dense row-major f32 tensor, rank 1..4, NCHW convention for rank-4 data.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<float> d);

    static Tensor zeros(std::vector<int> s);
    static Tensor full(std::vector<int> s, float v);
    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const;

    float& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    float operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    // Rank-specific accessors; callers guarantee the rank.
    float& at(int a, int b) { return data[static_cast<std::size_t>(a) * shape[1] + b]; }
    float at(int a, int b) const { return data[static_cast<std::size_t>(a) * shape[1] + b]; }
    float& at(int a, int b, int c, int d) {
        return data[((static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }
    float at(int a, int b, int c, int d) const {
        return data[((static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

void expect_rank(const Tensor& t, int rank, const char* what);
void expect_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace kdi
