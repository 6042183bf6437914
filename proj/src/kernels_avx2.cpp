// AVX2+FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma and must only be entered after the runtime dispatch has
// confirmed CPU support.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "lumina/kernels.hpp"

namespace lumina::kernels::avx2 {

namespace {

// Width-8 float / width-4 double lane wrappers so each kernel is written once.
struct LanesF {
    using T = float;
    using V = __m256;
    static constexpr std::size_t width = 8;
    static V load(const T* p) { return _mm256_loadu_ps(p); }
    static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
    static V set1(T x) { return _mm256_set1_ps(x); }
    static V zero() { return _mm256_setzero_ps(); }
    static V add(V a, V b) { return _mm256_add_ps(a, b); }
    static V sub(V a, V b) { return _mm256_sub_ps(a, b); }
    static V mul(V a, V b) { return _mm256_mul_ps(a, b); }
    static V fmadd(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
    static V max(V a, V b) { return _mm256_max_ps(a, b); }
    static V gt_zero_mask(V a) { return _mm256_cmp_ps(a, zero(), _CMP_GT_OQ); }
    static V blend(V mask, V a, V b) { return _mm256_blendv_ps(b, a, mask); }
    static V sqrt(V a) { return _mm256_sqrt_ps(a); }
    static V abs(V a) {
        return _mm256_andnot_ps(_mm256_set1_ps(-0.0f), a);
    }
    static T hsum(V v) {
        __m128 lo = _mm256_castps256_ps128(v);
        __m128 hi = _mm256_extractf128_ps(v, 1);
        lo = _mm_add_ps(lo, hi);
        __m128 sh = _mm_movehl_ps(lo, lo);
        lo = _mm_add_ps(lo, sh);
        sh = _mm_shuffle_ps(lo, lo, 0x1);
        lo = _mm_add_ss(lo, sh);
        return _mm_cvtss_f32(lo);
    }
};

struct LanesD {
    using T = double;
    using V = __m256d;
    static constexpr std::size_t width = 4;
    static V load(const T* p) { return _mm256_loadu_pd(p); }
    static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
    static V set1(T x) { return _mm256_set1_pd(x); }
    static V zero() { return _mm256_setzero_pd(); }
    static V add(V a, V b) { return _mm256_add_pd(a, b); }
    static V sub(V a, V b) { return _mm256_sub_pd(a, b); }
    static V mul(V a, V b) { return _mm256_mul_pd(a, b); }
    static V fmadd(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
    static V max(V a, V b) { return _mm256_max_pd(a, b); }
    static V gt_zero_mask(V a) { return _mm256_cmp_pd(a, zero(), _CMP_GT_OQ); }
    static V blend(V mask, V a, V b) { return _mm256_blendv_pd(b, a, mask); }
    static V sqrt(V a) { return _mm256_sqrt_pd(a); }
    static V abs(V a) {
        return _mm256_andnot_pd(_mm256_set1_pd(-0.0), a);
    }
    static T hsum(V v) {
        __m128d lo = _mm256_castpd256_pd128(v);
        __m128d hi = _mm256_extractf128_pd(v, 1);
        lo = _mm_add_pd(lo, hi);
        __m128d sh = _mm_unpackhi_pd(lo, lo);
        lo = _mm_add_sd(lo, sh);
        return _mm_cvtsd_f64(lo);
    }
};

template <class T> struct LanesFor;
template <> struct LanesFor<float> { using type = LanesF; };
template <> struct LanesFor<double> { using type = LanesD; };

}  // namespace

template <class T>
void add(T* dst, const T* a, const T* b, std::size_t n) {
    using L = typename LanesFor<T>::type;
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width)
        L::store(dst + i, L::add(L::load(a + i), L::load(b + i)));
    for (; i < n; ++i) dst[i] = a[i] + b[i];
}

template <class T>
void sub(T* dst, const T* a, const T* b, std::size_t n) {
    using L = typename LanesFor<T>::type;
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width)
        L::store(dst + i, L::sub(L::load(a + i), L::load(b + i)));
    for (; i < n; ++i) dst[i] = a[i] - b[i];
}

template <class T>
void mul(T* dst, const T* a, const T* b, std::size_t n) {
    using L = typename LanesFor<T>::type;
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width)
        L::store(dst + i, L::mul(L::load(a + i), L::load(b + i)));
    for (; i < n; ++i) dst[i] = a[i] * b[i];
}

template <class T>
void scale(T* dst, const T* a, T c, std::size_t n) {
    using L = typename LanesFor<T>::type;
    const auto vc = L::set1(c);
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width)
        L::store(dst + i, L::mul(vc, L::load(a + i)));
    for (; i < n; ++i) dst[i] = c * a[i];
}

template <class T>
void axpy(T* dst, const T* a, T c, std::size_t n) {
    using L = typename LanesFor<T>::type;
    const auto vc = L::set1(c);
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width)
        L::store(dst + i, L::fmadd(vc, L::load(a + i), L::load(dst + i)));
    for (; i < n; ++i) dst[i] += c * a[i];
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    using L = typename LanesFor<T>::type;
    auto acc = L::zero();
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width)
        acc = L::fmadd(L::load(a + i), L::load(b + i), acc);
    T r = L::hsum(acc);
    for (; i < n; ++i) r += a[i] * b[i];
    return r;
}

template <class T>
T sum(const T* a, std::size_t n) {
    using L = typename LanesFor<T>::type;
    auto acc = L::zero();
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width) acc = L::add(acc, L::load(a + i));
    T r = L::hsum(acc);
    for (; i < n; ++i) r += a[i];
    return r;
}

template <class T>
void square(T* dst, const T* a, std::size_t n) {
    using L = typename LanesFor<T>::type;
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width) {
        auto v = L::load(a + i);
        L::store(dst + i, L::mul(v, v));
    }
    for (; i < n; ++i) dst[i] = a[i] * a[i];
}

template <class T>
void vabs(T* dst, const T* a, std::size_t n) {
    using L = typename LanesFor<T>::type;
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width) L::store(dst + i, L::abs(L::load(a + i)));
    for (; i < n; ++i) dst[i] = std::abs(a[i]);
}

template <class T>
void vsqrt(T* dst, const T* a, std::size_t n) {
    using L = typename LanesFor<T>::type;
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width) L::store(dst + i, L::sqrt(L::load(a + i)));
    for (; i < n; ++i) dst[i] = std::sqrt(a[i]);
}

template <class T>
void relu0(T* dst, const T* a, std::size_t n) {
    using L = typename LanesFor<T>::type;
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width)
        L::store(dst + i, L::max(L::load(a + i), L::zero()));
    for (; i < n; ++i) dst[i] = a[i] > T(0) ? a[i] : T(0);
}

template <class T>
void leaky_relu(T* dst, const T* a, T slope, std::size_t n) {
    using L = typename LanesFor<T>::type;
    const auto vs = L::set1(slope);
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width) {
        auto v = L::load(a + i);
        L::store(dst + i, L::blend(L::gt_zero_mask(v), v, L::mul(vs, v)));
    }
    for (; i < n; ++i) dst[i] = a[i] > T(0) ? a[i] : slope * a[i];
}

template <class T>
void mul_acc(T* dst, const T* g, const T* b, std::size_t n) {
    using L = typename LanesFor<T>::type;
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width)
        L::store(dst + i, L::fmadd(L::load(g + i), L::load(b + i), L::load(dst + i)));
    for (; i < n; ++i) dst[i] += g[i] * b[i];
}

template <class T>
void step_mul_acc(T* dst, const T* g, const T* x, std::size_t n) {
    using L = typename LanesFor<T>::type;
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width) {
        auto masked = L::blend(L::gt_zero_mask(L::load(x + i)), L::load(g + i), L::zero());
        L::store(dst + i, L::add(L::load(dst + i), masked));
    }
    for (; i < n; ++i) dst[i] += x[i] > T(0) ? g[i] : T(0);
}

template <class T>
void leaky_mul_acc(T* dst, const T* g, const T* x, T slope, std::size_t n) {
    using L = typename LanesFor<T>::type;
    const auto vs = L::set1(slope);
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width) {
        auto vg = L::load(g + i);
        auto masked = L::blend(L::gt_zero_mask(L::load(x + i)), vg, L::mul(vs, vg));
        L::store(dst + i, L::add(L::load(dst + i), masked));
    }
    for (; i < n; ++i) dst[i] += x[i] > T(0) ? g[i] : slope * g[i];
}

template <class T>
void sign_mul_acc(T* dst, const T* g, const T* x, std::size_t n) {
    using L = typename LanesFor<T>::type;
    std::size_t i = 0;
    for (; i + L::width <= n; i += L::width) {
        auto vx = L::load(x + i);
        auto vg = L::load(g + i);
        auto pos = L::blend(L::gt_zero_mask(vx), vg, L::zero());
        auto neg = L::blend(L::gt_zero_mask(L::sub(L::zero(), vx)), vg, L::zero());
        L::store(dst + i, L::sub(L::add(L::load(dst + i), pos), neg));
    }
    for (; i < n; ++i) {
        if (x[i] > T(0))
            dst[i] += g[i];
        else if (x[i] < T(0))
            dst[i] -= g[i];
    }
}

template <class T>
void matmul(T* c, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n,
            bool acc) {
    using L = typename LanesFor<T>::type;
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!acc)
            for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
        for (std::size_t p = 0; p < k; ++p) {
            const auto va = L::set1(a[i * k + p]);
            const T* brow = b + p * n;
            std::size_t j = 0;
            for (; j + L::width <= n; j += L::width)
                L::store(crow + j, L::fmadd(va, L::load(brow + j), L::load(crow + j)));
            for (; j < n; ++j) crow[j] += a[i * k + p] * brow[j];
        }
    }
}

template <class T>
void matmul_tn(T* c, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n,
               bool acc) {
    using L = typename LanesFor<T>::type;
    if (!acc)
        for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const auto va = L::set1(arow[i]);
            T* crow = c + i * n;
            std::size_t j = 0;
            for (; j + L::width <= n; j += L::width)
                L::store(crow + j, L::fmadd(va, L::load(brow + j), L::load(crow + j)));
            for (; j < n; ++j) crow[j] += arow[i] * brow[j];
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

}  // namespace lumina::kernels::avx2

#endif  // x86-64
