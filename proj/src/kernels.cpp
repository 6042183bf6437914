#include "lumina/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <mutex>

#include "lumina/common.hpp"

namespace lumina::kernels {

namespace scalar {

template <class T>
void add(T* dst, const T* a, const T* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

template <class T>
void sub(T* dst, const T* a, const T* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

template <class T>
void mul(T* dst, const T* a, const T* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

template <class T>
void scale(T* dst, const T* a, T c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = c * a[i];
}

template <class T>
void axpy(T* dst, const T* a, T c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += c * a[i];
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <class T>
T sum(const T* a, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

template <class T>
void square(T* dst, const T* a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * a[i];
}

template <class T>
void vabs(T* dst, const T* a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = std::abs(a[i]);
}

template <class T>
void vsqrt(T* dst, const T* a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = std::sqrt(a[i]);
}

template <class T>
void relu0(T* dst, const T* a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] > T(0) ? a[i] : T(0);
}

template <class T>
void leaky_relu(T* dst, const T* a, T slope, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] > T(0) ? a[i] : slope * a[i];
}

template <class T>
void mul_acc(T* dst, const T* g, const T* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += g[i] * b[i];
}

template <class T>
void step_mul_acc(T* dst, const T* g, const T* x, std::size_t n) {
    // Unconditional add of a masked value so the -0/+0 behaviour matches the
    // vectorized blend exactly.
    for (std::size_t i = 0; i < n; ++i) dst[i] += x[i] > T(0) ? g[i] : T(0);
}

template <class T>
void leaky_mul_acc(T* dst, const T* g, const T* x, T slope, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += x[i] > T(0) ? g[i] : slope * g[i];
}

template <class T>
void sign_mul_acc(T* dst, const T* g, const T* x, std::size_t n) {
    // sign(0) = 0: the subgradient convention for |x| at the kink.
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] > T(0))
            dst[i] += g[i];
        else if (x[i] < T(0))
            dst[i] -= g[i];
    }
}

template <class T>
void matmul(T* c, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n,
            bool acc) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!acc)
            for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = a[i * k + p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

template <class T>
void matmul_tn(T* c, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n,
               bool acc) {
    if (!acc)
        for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T api = arow[i];
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

template <class T>
void matmul_nt(T* c, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n,
               bool acc) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            T v = dot(arow, b + j * k, k);
            c[i * n + j] = acc ? c[i * n + j] + v : v;
        }
    }
}

#define LUMINA_INSTANTIATE(T)                                                           \
    template void add<T>(T*, const T*, const T*, std::size_t);                          \
    template void sub<T>(T*, const T*, const T*, std::size_t);                          \
    template void mul<T>(T*, const T*, const T*, std::size_t);                          \
    template void scale<T>(T*, const T*, T, std::size_t);                               \
    template void axpy<T>(T*, const T*, T, std::size_t);                                \
    template T dot<T>(const T*, const T*, std::size_t);                                 \
    template T sum<T>(const T*, std::size_t);                                           \
    template void square<T>(T*, const T*, std::size_t);                                 \
    template void vabs<T>(T*, const T*, std::size_t);                                   \
    template void vsqrt<T>(T*, const T*, std::size_t);                                  \
    template void relu0<T>(T*, const T*, std::size_t);                                  \
    template void leaky_relu<T>(T*, const T*, T, std::size_t);                          \
    template void mul_acc<T>(T*, const T*, const T*, std::size_t);                      \
    template void step_mul_acc<T>(T*, const T*, const T*, std::size_t);                 \
    template void leaky_mul_acc<T>(T*, const T*, const T*, T, std::size_t);             \
    template void sign_mul_acc<T>(T*, const T*, const T*, std::size_t);                 \
    template void matmul<T>(T*, const T*, const T*, std::size_t, std::size_t,           \
                            std::size_t, bool);                                         \
    template void matmul_tn<T>(T*, const T*, const T*, std::size_t, std::size_t,        \
                               std::size_t, bool);                                      \
    template void matmul_nt<T>(T*, const T*, const T*, std::size_t, std::size_t,        \
                               std::size_t, bool);

LUMINA_INSTANTIATE(float)
LUMINA_INSTANTIATE(double)
#undef LUMINA_INSTANTIATE

}  // namespace scalar

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

Isa detect() {
    if (const char* env = std::getenv("LUMINA_KERNELS")) {
        std::string v(env);
        if (v == "scalar") return Isa::scalar;
        if (v == "avx2") {
            if (!avx2_supported())
                throw ValidationError("LUMINA_KERNELS=avx2 but host lacks AVX2+FMA");
            return Isa::avx2;
        }
        throw ValidationError("LUMINA_KERNELS must be 'scalar' or 'avx2', got '" + v + "'");
    }
    return avx2_supported() ? Isa::avx2 : Isa::scalar;
}

Isa& active_slot() {
    static Isa isa = detect();
    return isa;
}

}  // namespace

Isa active() { return active_slot(); }

void set_active(Isa isa) {
    if (isa == Isa::avx2 && !avx2_supported())
        throw ValidationError("cannot select AVX2 kernels: unsupported on this host");
    active_slot() = isa;
}

std::string isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

// Dispatching entry points.
#if defined(__x86_64__) || defined(_M_X64)
#define LUMINA_DISPATCH(call) \
    if (active_slot() == Isa::avx2) return avx2::call; \
    return scalar::call;
#else
#define LUMINA_DISPATCH(call) return scalar::call;
#endif

template <class T>
void add(T* dst, const T* a, const T* b, std::size_t n) {
    LUMINA_DISPATCH(add(dst, a, b, n))
}
template <class T>
void sub(T* dst, const T* a, const T* b, std::size_t n) {
    LUMINA_DISPATCH(sub(dst, a, b, n))
}
template <class T>
void mul(T* dst, const T* a, const T* b, std::size_t n) {
    LUMINA_DISPATCH(mul(dst, a, b, n))
}
template <class T>
void scale(T* dst, const T* a, T c, std::size_t n) {
    LUMINA_DISPATCH(scale(dst, a, c, n))
}
template <class T>
void axpy(T* dst, const T* a, T c, std::size_t n) {
    LUMINA_DISPATCH(axpy(dst, a, c, n))
}
template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    LUMINA_DISPATCH(dot(a, b, n))
}
template <class T>
T sum(const T* a, std::size_t n) {
    LUMINA_DISPATCH(sum(a, n))
}
template <class T>
void square(T* dst, const T* a, std::size_t n) {
    LUMINA_DISPATCH(square(dst, a, n))
}
template <class T>
void vabs(T* dst, const T* a, std::size_t n) {
    LUMINA_DISPATCH(vabs(dst, a, n))
}
template <class T>
void vsqrt(T* dst, const T* a, std::size_t n) {
    LUMINA_DISPATCH(vsqrt(dst, a, n))
}
template <class T>
void relu0(T* dst, const T* a, std::size_t n) {
    LUMINA_DISPATCH(relu0(dst, a, n))
}
template <class T>
void leaky_relu(T* dst, const T* a, T slope, std::size_t n) {
    LUMINA_DISPATCH(leaky_relu(dst, a, slope, n))
}
template <class T>
void mul_acc(T* dst, const T* g, const T* b, std::size_t n) {
    LUMINA_DISPATCH(mul_acc(dst, g, b, n))
}
template <class T>
void step_mul_acc(T* dst, const T* g, const T* x, std::size_t n) {
    LUMINA_DISPATCH(step_mul_acc(dst, g, x, n))
}
template <class T>
void leaky_mul_acc(T* dst, const T* g, const T* x, T slope, std::size_t n) {
    LUMINA_DISPATCH(leaky_mul_acc(dst, g, x, slope, n))
}
template <class T>
void sign_mul_acc(T* dst, const T* g, const T* x, std::size_t n) {
    LUMINA_DISPATCH(sign_mul_acc(dst, g, x, n))
}
template <class T>
void matmul(T* c, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n,
            bool acc) {
    LUMINA_DISPATCH(matmul(c, a, b, m, k, n, acc))
}
template <class T>
void matmul_tn(T* c, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n,
               bool acc) {
    LUMINA_DISPATCH(matmul_tn(c, a, b, m, k, n, acc))
}
template <class T>
void matmul_nt(T* c, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n,
               bool acc) {
    LUMINA_DISPATCH(matmul_nt(c, a, b, m, k, n, acc))
}
#undef LUMINA_DISPATCH

#define LUMINA_INSTANTIATE(T)                                                           \
    template void add<T>(T*, const T*, const T*, std::size_t);                          \
    template void sub<T>(T*, const T*, const T*, std::size_t);                          \
    template void mul<T>(T*, const T*, const T*, std::size_t);                          \
    template void scale<T>(T*, const T*, T, std::size_t);                               \
    template void axpy<T>(T*, const T*, T, std::size_t);                                \
    template T dot<T>(const T*, const T*, std::size_t);                                 \
    template T sum<T>(const T*, std::size_t);                                           \
    template void square<T>(T*, const T*, std::size_t);                                 \
    template void vabs<T>(T*, const T*, std::size_t);                                   \
    template void vsqrt<T>(T*, const T*, std::size_t);                                  \
    template void relu0<T>(T*, const T*, std::size_t);                                  \
    template void leaky_relu<T>(T*, const T*, T, std::size_t);                          \
    template void mul_acc<T>(T*, const T*, const T*, std::size_t);                      \
    template void step_mul_acc<T>(T*, const T*, const T*, std::size_t);                 \
    template void leaky_mul_acc<T>(T*, const T*, const T*, T, std::size_t);             \
    template void sign_mul_acc<T>(T*, const T*, const T*, std::size_t);                 \
    template void matmul<T>(T*, const T*, const T*, std::size_t, std::size_t,           \
                            std::size_t, bool);                                         \
    template void matmul_tn<T>(T*, const T*, const T*, std::size_t, std::size_t,        \
                               std::size_t, bool);                                      \
    template void matmul_nt<T>(T*, const T*, const T*, std::size_t, std::size_t,        \
                               std::size_t, bool);

LUMINA_INSTANTIATE(float)
LUMINA_INSTANTIATE(double)
#undef LUMINA_INSTANTIATE

}  // namespace lumina::kernels
