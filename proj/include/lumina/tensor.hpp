#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lumina/common.hpp"

namespace lumina::ad {

/// Dense shapes up to rank 2. Rank 0 is a scalar, rank 1 a vector of d0
/// elements, rank 2 a d0 x d1 row-major matrix.
struct Shape {
    int rank = 0;
    int64_t d0 = 1;
    int64_t d1 = 1;

    static Shape scalar() { return {0, 1, 1}; }
    static Shape vec(int64_t n) { return {1, n, 1}; }
    static Shape mat(int64_t r, int64_t c) { return {2, r, c}; }

    int64_t numel() const { return d0 * d1; }
    int64_t rows() const { return rank == 2 ? d0 : (rank == 1 ? d0 : 1); }
    int64_t cols() const { return rank == 2 ? d1 : 1; }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        if (rank == 0) return "[]";
        if (rank == 1) return "[" + std::to_string(d0) + "]";
        return "[" + std::to_string(d0) + "x" + std::to_string(d1) + "]";
    }
};

/// Plain value container used at module boundaries (checkpoints, stats).
template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<T> d) : shape(s), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != shape.numel())
            throw ValidationError("Tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape.str());
    }
    static Tensor zeros(Shape s) { return Tensor(s, std::vector<T>(s.numel(), T(0))); }
};

}  // namespace lumina::ad
