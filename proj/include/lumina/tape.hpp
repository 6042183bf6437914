#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "lumina/tensor.hpp"

namespace lumina::ad {

using Index = int32_t;
using IndexList = std::shared_ptr<const std::vector<Index>>;

inline IndexList make_indices(std::vector<Index> v) {
    return std::make_shared<const std::vector<Index>>(std::move(v));
}

/// Additive mask value treated as "attention forbidden". Small enough that
/// exp(mask - rowmax) underflows to zero in both precisions.
inline constexpr double kMaskFloor = -1e9;

/// Reverse-mode tape over dense tensors.
///
/// Each builder method runs the forward computation immediately and records
/// the node; backward() walks the recorded program in reverse. Subgradient
/// conventions: abs and max_with_zero use 0 at the kink, sqrt uses 0 at
/// exactly 0, leaky_relu uses the slope side at 0.
template <class T>
class Tape {
public:
    using Id = int32_t;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves.
    Id constant(const Shape& s, std::span<const T> data);
    Id constant_scalar(T v);
    /// Leaf whose gradient is tracked and retrievable after backward().
    Id param(const Shape& s, std::span<const T> data);

    // Elementwise (matching shapes).
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);

    // Matrix products (rank 2). matmul_nt multiplies by the transpose of b.
    Id matmul(Id a, Id b);
    Id matmul_nt(Id a, Id b);

    // Structure.
    Id concat(Id a, Id b, int axis);
    Id slice(Id a, int axis, int64_t start, int64_t len);
    Id gather_rows(Id a, IndexList rows);
    Id scatter_add_rows(Id a, IndexList rows, int64_t n_out_rows);
    Id broadcast(Id a, const Shape& target);
    Id reshape(Id a, const Shape& target);

    // Reductions to scalar.
    Id sum(Id a);
    Id mean(Id a);

    // Unary.
    Id square(Id a);
    Id vabs(Id a);
    Id vsqrt(Id a);
    Id vsin(Id a);
    Id vcos(Id a);
    Id vexp(Id a);
    Id max_with_zero(Id a);
    Id leaky_relu(Id a, T slope);
    Id sigmoid(Id a);

    /// Row-wise softmax of (logits + mask). Rows whose mask lies entirely at
    /// or below kMaskFloor produce an all-zero row.
    Id masked_softmax(Id logits, Id mask);

    /// Reverse sweep from a scalar output; gradients accumulate additively
    /// across fan-out. Throws if `out` is not scalar-sized.
    void backward(Id out);

    /// Returned by value: node storage reallocates as the tape grows.
    Shape shape(Id id) const { return nodes_[id].shape; }
    /// Valid until the next recorded op.
    std::span<const T> value(Id id) const { return nodes_[id].value; }
    /// Valid after backward(); zero-filled for parameters without influence.
    std::span<const T> grad(Id id) const;
    Tensor<T> value_tensor(Id id) const {
        return Tensor<T>(nodes_[id].shape, nodes_[id].value);
    }
    size_t size() const { return nodes_.size(); }

private:
    enum class Op : uint8_t {
        kConst, kParam, kAdd, kSub, kMul, kMatMul, kMatMulNT, kConcat, kSlice,
        kGatherRows, kScatterAddRows, kBroadcast, kReshape, kSum, kMean, kSquare,
        kAbs, kSqrt, kSin, kCos, kExp, kMaxZero, kLeakyRelu, kSigmoid,
        kMaskedSoftmax,
    };

    struct Node {
        Op op;
        Id a = -1;
        Id b = -1;
        Shape shape;
        std::vector<T> value;
        bool requires_grad = false;
        T scalar = T(0);   // leaky slope
        int axis = 0;      // concat/slice axis, broadcast kind
        int64_t start = 0; // slice start
        IndexList indices;
    };

    Id push(Node n);
    const char* op_name(Op op) const;
    void check_same_shape(const char* prim, Id a, Id b) const;
    void vjp(Id node_id, std::vector<std::vector<T>>& grads);
    std::vector<T>& grad_buf(Id id, std::vector<std::vector<T>>& grads);

    std::vector<Node> nodes_;
    mutable std::vector<std::vector<T>> grads_;
    bool ran_backward_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

/// Max relative gradient error of an analytic gradient against central finite
/// differences: max_i |analytic_i - numeric_i| / max(1e-8, |numeric_i|).
struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t worst_coord = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

template <class ValueFn, class GradFn>
GradCheckReport grad_check(ValueFn&& f, GradFn&& g, std::span<const double> x0,
                           double eps) {
    std::vector<double> x(x0.begin(), x0.end());
    const std::vector<double> analytic = g(std::span<const double>(x));
    if (analytic.size() != x.size())
        throw ValidationError("grad_check: gradient length mismatch");
    GradCheckReport rep;
    for (size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        x[i] = xi + eps;
        const double fp = f(std::span<const double>(x));
        x[i] = xi - eps;
        const double fm = f(std::span<const double>(x));
        x[i] = xi;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double rel =
            std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric));
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_coord = static_cast<int64_t>(i);
            rep.analytic = analytic[i];
            rep.numeric = numeric;
        }
    }
    return rep;
}

}  // namespace lumina::ad
