#include "lumina/tape.hpp"

#include <algorithm>
#include <cmath>

#include "lumina/kernels.hpp"

namespace lumina::ad {

namespace {

// Broadcast kinds stored in Node::axis.
enum BroadcastKind : int {
    kBScalar = 0,  // scalar -> any
    kBRow = 1,     // vec(c) or mat(1,c) -> mat(r,c), repeated down rows
    kBCol = 2,     // mat(r,1) -> mat(r,c), repeated across cols
};

}  // namespace

template <class T>
const char* Tape<T>::op_name(Op op) const {
    switch (op) {
        case Op::kConst: return "constant";
        case Op::kParam: return "param";
        case Op::kAdd: return "add";
        case Op::kSub: return "sub";
        case Op::kMul: return "mul";
        case Op::kMatMul: return "matmul";
        case Op::kMatMulNT: return "matmul_nt";
        case Op::kConcat: return "concat";
        case Op::kSlice: return "slice";
        case Op::kGatherRows: return "gather_rows";
        case Op::kScatterAddRows: return "scatter_add_rows";
        case Op::kBroadcast: return "broadcast";
        case Op::kReshape: return "reshape";
        case Op::kSum: return "sum";
        case Op::kMean: return "mean";
        case Op::kSquare: return "square";
        case Op::kAbs: return "abs";
        case Op::kSqrt: return "sqrt";
        case Op::kSin: return "sin";
        case Op::kCos: return "cos";
        case Op::kExp: return "exp";
        case Op::kMaxZero: return "max_with_zero";
        case Op::kLeakyRelu: return "leaky_relu";
        case Op::kSigmoid: return "sigmoid";
        case Op::kMaskedSoftmax: return "masked_softmax";
    }
    return "?";
}

template <class T>
typename Tape<T>::Id Tape<T>::push(Node n) {
    if (ran_backward_)
        throw ValidationError("tape: cannot record after backward()");
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

template <class T>
void Tape<T>::check_same_shape(const char* prim, Id a, Id b) const {
    if (!(nodes_[a].shape == nodes_[b].shape))
        throw ValidationError(std::string(prim) + ": shape mismatch " +
                              nodes_[a].shape.str() + " vs " + nodes_[b].shape.str());
}

template <class T>
typename Tape<T>::Id Tape<T>::constant(const Shape& s, std::span<const T> data) {
    if (static_cast<int64_t>(data.size()) != s.numel())
        throw ValidationError("constant: data length does not match shape " + s.str());
    Node n;
    n.op = Op::kConst;
    n.shape = s;
    n.value.assign(data.begin(), data.end());
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::constant_scalar(T v) {
    return constant(Shape::scalar(), std::span<const T>(&v, 1));
}

template <class T>
typename Tape<T>::Id Tape<T>::param(const Shape& s, std::span<const T> data) {
    Id id = constant(s, data);
    nodes_[id].op = Op::kParam;
    nodes_[id].requires_grad = true;
    return id;
}

template <class T>
typename Tape<T>::Id Tape<T>::add(Id a, Id b) {
    check_same_shape("add", a, b);
    Node n;
    n.op = Op::kAdd;
    n.a = a;
    n.b = b;
    n.shape = nodes_[a].shape;
    n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    n.value.resize(n.shape.numel());
    kernels::add(n.value.data(), nodes_[a].value.data(), nodes_[b].value.data(),
                 n.value.size());
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::sub(Id a, Id b) {
    check_same_shape("sub", a, b);
    Node n;
    n.op = Op::kSub;
    n.a = a;
    n.b = b;
    n.shape = nodes_[a].shape;
    n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    n.value.resize(n.shape.numel());
    kernels::sub(n.value.data(), nodes_[a].value.data(), nodes_[b].value.data(),
                 n.value.size());
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::mul(Id a, Id b) {
    check_same_shape("mul", a, b);
    Node n;
    n.op = Op::kMul;
    n.a = a;
    n.b = b;
    n.shape = nodes_[a].shape;
    n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    n.value.resize(n.shape.numel());
    kernels::mul(n.value.data(), nodes_[a].value.data(), nodes_[b].value.data(),
                 n.value.size());
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::matmul(Id a, Id b) {
    const Shape& sa = nodes_[a].shape;
    const Shape& sb = nodes_[b].shape;
    if (sa.rank != 2 || sb.rank != 2 || sa.d1 != sb.d0)
        throw ValidationError("matmul: incompatible shapes " + sa.str() + " and " +
                              sb.str());
    Node n;
    n.op = Op::kMatMul;
    n.a = a;
    n.b = b;
    n.shape = Shape::mat(sa.d0, sb.d1);
    n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    n.value.resize(n.shape.numel());
    kernels::matmul(n.value.data(), nodes_[a].value.data(), nodes_[b].value.data(),
                    sa.d0, sa.d1, sb.d1, false);
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::matmul_nt(Id a, Id b) {
    const Shape& sa = nodes_[a].shape;
    const Shape& sb = nodes_[b].shape;
    if (sa.rank != 2 || sb.rank != 2 || sa.d1 != sb.d1)
        throw ValidationError("matmul_nt: incompatible shapes " + sa.str() + " and " +
                              sb.str());
    Node n;
    n.op = Op::kMatMulNT;
    n.a = a;
    n.b = b;
    n.shape = Shape::mat(sa.d0, sb.d0);
    n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    n.value.resize(n.shape.numel());
    kernels::matmul_nt(n.value.data(), nodes_[a].value.data(), nodes_[b].value.data(),
                       sa.d0, sa.d1, sb.d0, false);
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::concat(Id a, Id b, int axis) {
    const Shape& sa = nodes_[a].shape;
    const Shape& sb = nodes_[b].shape;
    Shape out;
    if (sa.rank == 1 && sb.rank == 1 && axis == 0) {
        out = Shape::vec(sa.d0 + sb.d0);
    } else if (sa.rank == 2 && sb.rank == 2 && axis == 0 && sa.d1 == sb.d1) {
        out = Shape::mat(sa.d0 + sb.d0, sa.d1);
    } else if (sa.rank == 2 && sb.rank == 2 && axis == 1 && sa.d0 == sb.d0) {
        out = Shape::mat(sa.d0, sa.d1 + sb.d1);
    } else {
        throw ValidationError("concat: incompatible shapes " + sa.str() + " and " +
                              sb.str() + " along axis " + std::to_string(axis));
    }
    Node n;
    n.op = Op::kConcat;
    n.a = a;
    n.b = b;
    n.axis = axis;
    n.shape = out;
    n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    n.value.resize(out.numel());
    const auto& va = nodes_[a].value;
    const auto& vb = nodes_[b].value;
    if (axis == 0 || sa.rank == 1) {
        std::copy(va.begin(), va.end(), n.value.begin());
        std::copy(vb.begin(), vb.end(), n.value.begin() + va.size());
    } else {
        for (int64_t r = 0; r < out.d0; ++r) {
            std::copy(va.begin() + r * sa.d1, va.begin() + (r + 1) * sa.d1,
                      n.value.begin() + r * out.d1);
            std::copy(vb.begin() + r * sb.d1, vb.begin() + (r + 1) * sb.d1,
                      n.value.begin() + r * out.d1 + sa.d1);
        }
    }
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::slice(Id a, int axis, int64_t start, int64_t len) {
    const Shape& sa = nodes_[a].shape;
    if (len <= 0) throw ValidationError("slice: length must be positive");
    Shape out;
    if (sa.rank == 1 && axis == 0) {
        if (start < 0 || start + len > sa.d0)
            throw ValidationError("slice: out of range for " + sa.str());
        out = Shape::vec(len);
    } else if (sa.rank == 2 && axis == 0) {
        if (start < 0 || start + len > sa.d0)
            throw ValidationError("slice: row range out of bounds for " + sa.str());
        out = Shape::mat(len, sa.d1);
    } else if (sa.rank == 2 && axis == 1) {
        if (start < 0 || start + len > sa.d1)
            throw ValidationError("slice: column range out of bounds for " + sa.str());
        out = Shape::mat(sa.d0, len);
    } else {
        throw ValidationError("slice: bad axis for shape " + sa.str());
    }
    Node n;
    n.op = Op::kSlice;
    n.a = a;
    n.axis = axis;
    n.start = start;
    n.shape = out;
    n.requires_grad = nodes_[a].requires_grad;
    n.value.resize(out.numel());
    const auto& va = nodes_[a].value;
    if (sa.rank == 1 || axis == 0) {
        const int64_t w = sa.cols();
        std::copy(va.begin() + start * w, va.begin() + (start + len) * w,
                  n.value.begin());
    } else {
        for (int64_t r = 0; r < sa.d0; ++r)
            std::copy(va.begin() + r * sa.d1 + start,
                      va.begin() + r * sa.d1 + start + len, n.value.begin() + r * len);
    }
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::gather_rows(Id a, IndexList rows) {
    const Shape& sa = nodes_[a].shape;
    if (sa.rank == 0) throw ValidationError("gather_rows: input must be rank >= 1");
    const int64_t w = sa.cols();
    for (Index r : *rows)
        if (r < 0 || r >= sa.d0)
            throw ValidationError("gather_rows: index out of range for " + sa.str());
    Node n;
    n.op = Op::kGatherRows;
    n.a = a;
    n.indices = rows;
    const int64_t k = static_cast<int64_t>(rows->size());
    n.shape = sa.rank == 1 ? Shape::vec(k) : Shape::mat(k, w);
    n.requires_grad = nodes_[a].requires_grad;
    n.value.resize(n.shape.numel());
    const auto& va = nodes_[a].value;
    for (int64_t i = 0; i < k; ++i)
        std::copy(va.begin() + (*rows)[i] * w, va.begin() + ((*rows)[i] + 1) * w,
                  n.value.begin() + i * w);
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::scatter_add_rows(Id a, IndexList rows, int64_t n_out_rows) {
    const Shape& sa = nodes_[a].shape;
    if (sa.rank == 0) throw ValidationError("scatter_add_rows: input must be rank >= 1");
    if (static_cast<int64_t>(rows->size()) != sa.d0)
        throw ValidationError("scatter_add_rows: index count " +
                              std::to_string(rows->size()) + " does not match rows of " +
                              sa.str());
    for (Index r : *rows)
        if (r < 0 || r >= n_out_rows)
            throw ValidationError("scatter_add_rows: index out of range");
    const int64_t w = sa.cols();
    Node n;
    n.op = Op::kScatterAddRows;
    n.a = a;
    n.indices = rows;
    n.shape = sa.rank == 1 ? Shape::vec(n_out_rows) : Shape::mat(n_out_rows, w);
    n.requires_grad = nodes_[a].requires_grad;
    n.value.assign(n.shape.numel(), T(0));
    const auto& va = nodes_[a].value;
    for (int64_t i = 0; i < sa.d0; ++i)
        kernels::scalar::add(n.value.data() + (*rows)[i] * w,
                             n.value.data() + (*rows)[i] * w, va.data() + i * w, w);
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::broadcast(Id a, const Shape& target) {
    const Shape& sa = nodes_[a].shape;
    int kind;
    if (sa.rank == 0) {
        kind = kBScalar;
    } else if ((sa.rank == 1 && target.rank == 2 && sa.d0 == target.d1) ||
               (sa.rank == 2 && sa.d0 == 1 && target.rank == 2 && sa.d1 == target.d1)) {
        kind = kBRow;
    } else if (sa.rank == 2 && sa.d1 == 1 && target.rank == 2 && sa.d0 == target.d0) {
        kind = kBCol;
    } else {
        throw ValidationError("broadcast: cannot expand " + sa.str() + " to " +
                              target.str());
    }
    Node n;
    n.op = Op::kBroadcast;
    n.a = a;
    n.axis = kind;
    n.shape = target;
    n.requires_grad = nodes_[a].requires_grad;
    n.value.resize(target.numel());
    const auto& va = nodes_[a].value;
    if (kind == kBScalar) {
        std::fill(n.value.begin(), n.value.end(), va[0]);
    } else if (kind == kBRow) {
        for (int64_t r = 0; r < target.d0; ++r)
            std::copy(va.begin(), va.end(), n.value.begin() + r * target.d1);
    } else {
        for (int64_t r = 0; r < target.d0; ++r)
            std::fill(n.value.begin() + r * target.d1,
                      n.value.begin() + (r + 1) * target.d1, va[r]);
    }
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::reshape(Id a, const Shape& target) {
    const Shape& sa = nodes_[a].shape;
    if (sa.numel() != target.numel())
        throw ValidationError("reshape: element count mismatch " + sa.str() + " -> " +
                              target.str());
    Node n;
    n.op = Op::kReshape;
    n.a = a;
    n.shape = target;
    n.requires_grad = nodes_[a].requires_grad;
    n.value = nodes_[a].value;
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::sum(Id a) {
    Node n;
    n.op = Op::kSum;
    n.a = a;
    n.shape = Shape::scalar();
    n.requires_grad = nodes_[a].requires_grad;
    n.value = {kernels::sum(nodes_[a].value.data(), nodes_[a].value.size())};
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::mean(Id a) {
    const int64_t m = nodes_[a].shape.numel();
    if (m == 0) throw ValidationError("mean: empty tensor");
    Node n;
    n.op = Op::kMean;
    n.a = a;
    n.shape = Shape::scalar();
    n.requires_grad = nodes_[a].requires_grad;
    n.value = {kernels::sum(nodes_[a].value.data(), nodes_[a].value.size()) /
               static_cast<T>(m)};
    return push(std::move(n));
}

#define LUMINA_UNARY_COMMON(OP)                              \
    Node n;                                                  \
    n.op = OP;                                               \
    n.a = a;                                                 \
    n.shape = nodes_[a].shape;                               \
    n.requires_grad = nodes_[a].requires_grad;               \
    n.value.resize(n.shape.numel());

template <class T>
typename Tape<T>::Id Tape<T>::square(Id a) {
    LUMINA_UNARY_COMMON(Op::kSquare)
    kernels::square(n.value.data(), nodes_[a].value.data(), n.value.size());
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::vabs(Id a) {
    LUMINA_UNARY_COMMON(Op::kAbs)
    kernels::vabs(n.value.data(), nodes_[a].value.data(), n.value.size());
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::vsqrt(Id a) {
    LUMINA_UNARY_COMMON(Op::kSqrt)
    kernels::vsqrt(n.value.data(), nodes_[a].value.data(), n.value.size());
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::vsin(Id a) {
    LUMINA_UNARY_COMMON(Op::kSin)
    const auto& va = nodes_[a].value;
    for (size_t i = 0; i < va.size(); ++i) n.value[i] = std::sin(va[i]);
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::vcos(Id a) {
    LUMINA_UNARY_COMMON(Op::kCos)
    const auto& va = nodes_[a].value;
    for (size_t i = 0; i < va.size(); ++i) n.value[i] = std::cos(va[i]);
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::vexp(Id a) {
    LUMINA_UNARY_COMMON(Op::kExp)
    const auto& va = nodes_[a].value;
    for (size_t i = 0; i < va.size(); ++i) n.value[i] = std::exp(va[i]);
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::max_with_zero(Id a) {
    LUMINA_UNARY_COMMON(Op::kMaxZero)
    kernels::relu0(n.value.data(), nodes_[a].value.data(), n.value.size());
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::leaky_relu(Id a, T slope) {
    LUMINA_UNARY_COMMON(Op::kLeakyRelu)
    n.scalar = slope;
    kernels::leaky_relu(n.value.data(), nodes_[a].value.data(), slope, n.value.size());
    return push(std::move(n));
}

template <class T>
typename Tape<T>::Id Tape<T>::sigmoid(Id a) {
    LUMINA_UNARY_COMMON(Op::kSigmoid)
    const auto& va = nodes_[a].value;
    for (size_t i = 0; i < va.size(); ++i) n.value[i] = T(1) / (T(1) + std::exp(-va[i]));
    return push(std::move(n));
}

#undef LUMINA_UNARY_COMMON

template <class T>
typename Tape<T>::Id Tape<T>::masked_softmax(Id logits, Id mask) {
    check_same_shape("masked_softmax", logits, mask);
    const Shape& s = nodes_[logits].shape;
    if (s.rank != 2) throw ValidationError("masked_softmax: expected rank-2 logits");
    Node n;
    n.op = Op::kMaskedSoftmax;
    n.a = logits;
    n.b = mask;
    n.shape = s;
    n.requires_grad = nodes_[logits].requires_grad || nodes_[mask].requires_grad;
    n.value.resize(s.numel());
    const auto& vl = nodes_[logits].value;
    const auto& vm = nodes_[mask].value;
    const T floor_cut = static_cast<T>(kMaskFloor) / T(2);
    for (int64_t r = 0; r < s.d0; ++r) {
        const int64_t off = r * s.d1;
        T max_mask = vm[off];
        for (int64_t j = 1; j < s.d1; ++j) max_mask = std::max(max_mask, vm[off + j]);
        if (max_mask <= floor_cut) {
            std::fill(n.value.begin() + off, n.value.begin() + off + s.d1, T(0));
            continue;
        }
        T zmax = vl[off] + vm[off];
        for (int64_t j = 1; j < s.d1; ++j) zmax = std::max(zmax, vl[off + j] + vm[off + j]);
        T denom = T(0);
        for (int64_t j = 0; j < s.d1; ++j) {
            const T e = std::exp(vl[off + j] + vm[off + j] - zmax);
            n.value[off + j] = e;
            denom += e;
        }
        for (int64_t j = 0; j < s.d1; ++j) n.value[off + j] /= denom;
    }
    return push(std::move(n));
}

template <class T>
std::vector<T>& Tape<T>::grad_buf(Id id, std::vector<std::vector<T>>& grads) {
    auto& g = grads[id];
    if (g.empty()) g.assign(nodes_[id].shape.numel(), T(0));
    return g;
}

template <class T>
std::span<const T> Tape<T>::grad(Id id) const {
    if (!ran_backward_) throw ValidationError("tape: grad() before backward()");
    if (grads_[id].empty()) {
        // No influence on the output: exact zero gradient.
        grads_[id].assign(nodes_[id].shape.numel(), T(0));
    }
    return grads_[id];
}

template <class T>
void Tape<T>::backward(Id out) {
    if (nodes_[out].shape.numel() != 1)
        throw ValidationError("backward: output must be scalar, got " +
                              nodes_[out].shape.str());
    grads_.assign(nodes_.size(), {});
    grads_[out] = {T(1)};
    for (Id id = out; id >= 0; --id) {
        if (!nodes_[id].requires_grad || grads_[id].empty()) continue;
        vjp(id, grads_);
    }
    ran_backward_ = true;
}

template <class T>
void Tape<T>::vjp(Id id, std::vector<std::vector<T>>& grads) {
    Node& n = nodes_[id];
    const std::vector<T>& g = grads[id];
    const auto want = [&](Id in) { return in >= 0 && nodes_[in].requires_grad; };
    switch (n.op) {
        case Op::kConst:
        case Op::kParam:
            return;
        case Op::kAdd: {
            if (want(n.a))
                kernels::add(grad_buf(n.a, grads).data(), grad_buf(n.a, grads).data(),
                             g.data(), g.size());
            if (want(n.b))
                kernels::add(grad_buf(n.b, grads).data(), grad_buf(n.b, grads).data(),
                             g.data(), g.size());
            return;
        }
        case Op::kSub: {
            if (want(n.a))
                kernels::add(grad_buf(n.a, grads).data(), grad_buf(n.a, grads).data(),
                             g.data(), g.size());
            if (want(n.b))
                kernels::axpy(grad_buf(n.b, grads).data(), g.data(), T(-1), g.size());
            return;
        }
        case Op::kMul: {
            if (want(n.a))
                kernels::mul_acc(grad_buf(n.a, grads).data(), g.data(),
                                 nodes_[n.b].value.data(), g.size());
            if (want(n.b))
                kernels::mul_acc(grad_buf(n.b, grads).data(), g.data(),
                                 nodes_[n.a].value.data(), g.size());
            return;
        }
        case Op::kMatMul: {
            // C = A(m x k) B(k x n): gA += g B^T, gB += A^T g.
            const int64_t m = nodes_[n.a].shape.d0;
            const int64_t k = nodes_[n.a].shape.d1;
            const int64_t c = nodes_[n.b].shape.d1;
            if (want(n.a))
                kernels::matmul_nt(grad_buf(n.a, grads).data(), g.data(),
                                   nodes_[n.b].value.data(), m, c, k, true);
            if (want(n.b))
                kernels::matmul_tn(grad_buf(n.b, grads).data(),
                                   nodes_[n.a].value.data(), g.data(), k, m, c, true);
            return;
        }
        case Op::kMatMulNT: {
            // C = A(m x k) B(n x k)^T: gA += g B, gB += g^T A.
            const int64_t m = nodes_[n.a].shape.d0;
            const int64_t k = nodes_[n.a].shape.d1;
            const int64_t c = nodes_[n.b].shape.d0;  // n rows of B
            if (want(n.a))
                kernels::matmul(grad_buf(n.a, grads).data(), g.data(),
                                nodes_[n.b].value.data(), m, c, k, true);
            if (want(n.b))
                kernels::matmul_tn(grad_buf(n.b, grads).data(), g.data(),
                                   nodes_[n.a].value.data(), c, m, k, true);
            return;
        }
        case Op::kConcat: {
            const Shape& sa = nodes_[n.a].shape;
            const Shape& sb = nodes_[n.b].shape;
            if (n.axis == 0 || sa.rank == 1) {
                if (want(n.a))
                    kernels::add(grad_buf(n.a, grads).data(),
                                 grad_buf(n.a, grads).data(), g.data(), sa.numel());
                if (want(n.b))
                    kernels::add(grad_buf(n.b, grads).data(),
                                 grad_buf(n.b, grads).data(), g.data() + sa.numel(),
                                 sb.numel());
            } else {
                const int64_t w = n.shape.d1;
                if (want(n.a)) {
                    auto& ga = grad_buf(n.a, grads);
                    for (int64_t r = 0; r < sa.d0; ++r)
                        kernels::add(ga.data() + r * sa.d1, ga.data() + r * sa.d1,
                                     g.data() + r * w, sa.d1);
                }
                if (want(n.b)) {
                    auto& gb = grad_buf(n.b, grads);
                    for (int64_t r = 0; r < sb.d0; ++r)
                        kernels::add(gb.data() + r * sb.d1, gb.data() + r * sb.d1,
                                     g.data() + r * w + sa.d1, sb.d1);
                }
            }
            return;
        }
        case Op::kSlice: {
            if (!want(n.a)) return;
            auto& ga = grad_buf(n.a, grads);
            const Shape& sa = nodes_[n.a].shape;
            if (sa.rank == 1 || n.axis == 0) {
                const int64_t w = sa.cols();
                kernels::add(ga.data() + n.start * w, ga.data() + n.start * w, g.data(),
                             n.shape.numel());
            } else {
                for (int64_t r = 0; r < sa.d0; ++r)
                    kernels::add(ga.data() + r * sa.d1 + n.start,
                                 ga.data() + r * sa.d1 + n.start, g.data() + r * n.shape.d1,
                                 n.shape.d1);
            }
            return;
        }
        case Op::kGatherRows: {
            if (!want(n.a)) return;
            auto& ga = grad_buf(n.a, grads);
            const int64_t w = nodes_[n.a].shape.cols();
            const auto& rows = *n.indices;
            for (size_t i = 0; i < rows.size(); ++i)
                kernels::add(ga.data() + rows[i] * w, ga.data() + rows[i] * w,
                             g.data() + static_cast<int64_t>(i) * w, w);
            return;
        }
        case Op::kScatterAddRows: {
            if (!want(n.a)) return;
            auto& ga = grad_buf(n.a, grads);
            const int64_t w = nodes_[n.a].shape.cols();
            const auto& rows = *n.indices;
            for (size_t i = 0; i < rows.size(); ++i)
                kernels::add(ga.data() + static_cast<int64_t>(i) * w,
                             ga.data() + static_cast<int64_t>(i) * w,
                             g.data() + rows[i] * w, w);
            return;
        }
        case Op::kBroadcast: {
            if (!want(n.a)) return;
            auto& ga = grad_buf(n.a, grads);
            if (n.axis == kBScalar) {
                ga[0] += kernels::sum(g.data(), g.size());
            } else if (n.axis == kBRow) {
                for (int64_t r = 0; r < n.shape.d0; ++r)
                    kernels::add(ga.data(), ga.data(), g.data() + r * n.shape.d1,
                                 n.shape.d1);
            } else {
                for (int64_t r = 0; r < n.shape.d0; ++r)
                    ga[r] += kernels::sum(g.data() + r * n.shape.d1, n.shape.d1);
            }
            return;
        }
        case Op::kReshape: {
            if (!want(n.a)) return;
            auto& ga = grad_buf(n.a, grads);
            kernels::add(ga.data(), ga.data(), g.data(), g.size());
            return;
        }
        case Op::kSum: {
            if (!want(n.a)) return;
            auto& ga = grad_buf(n.a, grads);
            for (auto& v : ga) v += g[0];
            return;
        }
        case Op::kMean: {
            if (!want(n.a)) return;
            auto& ga = grad_buf(n.a, grads);
            const T s = g[0] / static_cast<T>(ga.size());
            for (auto& v : ga) v += s;
            return;
        }
        case Op::kSquare: {
            if (!want(n.a)) return;
            auto& ga = grad_buf(n.a, grads);
            const auto& x = nodes_[n.a].value;
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += T(2) * x[i] * g[i];
            return;
        }
        case Op::kAbs: {
            if (!want(n.a)) return;
            kernels::sign_mul_acc(grad_buf(n.a, grads).data(), g.data(),
                                  nodes_[n.a].value.data(), g.size());
            return;
        }
        case Op::kSqrt: {
            if (!want(n.a)) return;
            auto& ga = grad_buf(n.a, grads);
            const auto& y = n.value;
            // d sqrt(x) = g / (2 sqrt(x)); subgradient 0 at x = 0.
            for (size_t i = 0; i < ga.size(); ++i)
                if (y[i] != T(0)) ga[i] += g[i] / (T(2) * y[i]);
            return;
        }
        case Op::kSin: {
            if (!want(n.a)) return;
            auto& ga = grad_buf(n.a, grads);
            const auto& x = nodes_[n.a].value;
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * std::cos(x[i]);
            return;
        }
        case Op::kCos: {
            if (!want(n.a)) return;
            auto& ga = grad_buf(n.a, grads);
            const auto& x = nodes_[n.a].value;
            for (size_t i = 0; i < ga.size(); ++i) ga[i] -= g[i] * std::sin(x[i]);
            return;
        }
        case Op::kExp: {
            if (!want(n.a)) return;
            kernels::mul_acc(grad_buf(n.a, grads).data(), g.data(), n.value.data(),
                             g.size());
            return;
        }
        case Op::kMaxZero: {
            if (!want(n.a)) return;
            kernels::step_mul_acc(grad_buf(n.a, grads).data(), g.data(),
                                  nodes_[n.a].value.data(), g.size());
            return;
        }
        case Op::kLeakyRelu: {
            if (!want(n.a)) return;
            kernels::leaky_mul_acc(grad_buf(n.a, grads).data(), g.data(),
                                   nodes_[n.a].value.data(), n.scalar, g.size());
            return;
        }
        case Op::kSigmoid: {
            if (!want(n.a)) return;
            auto& ga = grad_buf(n.a, grads);
            const auto& y = n.value;
            for (size_t i = 0; i < ga.size(); ++i)
                ga[i] += g[i] * y[i] * (T(1) - y[i]);
            return;
        }
        case Op::kMaskedSoftmax: {
            // dz_j = y_j (g_j - sum_k g_k y_k), routed to the logits input.
            // The mask is additive, so it receives the same VJP when tracked.
            const Shape& s = n.shape;
            const auto& y = n.value;
            std::vector<T> dz(s.numel());
            for (int64_t r = 0; r < s.d0; ++r) {
                const int64_t off = r * s.d1;
                const T inner = kernels::dot(g.data() + off, y.data() + off, s.d1);
                for (int64_t j = 0; j < s.d1; ++j)
                    dz[off + j] = y[off + j] * (g[off + j] - inner);
            }
            if (want(n.a))
                kernels::add(grad_buf(n.a, grads).data(), grad_buf(n.a, grads).data(),
                             dz.data(), dz.size());
            if (want(n.b))
                kernels::add(grad_buf(n.b, grads).data(), grad_buf(n.b, grads).data(),
                             dz.data(), dz.size());
            return;
        }
    }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace lumina::ad
