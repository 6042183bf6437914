#pragma once

#include <cstddef>
#include <string>

// Data-parallel inner loops shared by the tensor engine and the numeric code.
//
// Every kernel exists in two forms: a scalar reference implementation
// (namespace kernels::scalar) and, on x86-64, an AVX2+FMA variant
// (namespace kernels::avx2). The top-level functions dispatch at runtime on
// the host CPU; the environment variable LUMINA_KERNELS=scalar|avx2 overrides
// detection. Elementwise kernels are bit-identical across variants; reductions
// and matmuls reassociate and agree to rounding (the equivalence suite pins
// the tolerances).
//
// Transcendentals (exp, sin, cos, sigmoid) stay scalar in both variants; they
// call libm and are not a hot loop at this scale.

namespace lumina::kernels {

enum class Isa { scalar, avx2 };

/// ISA selected for this process (detection + env override, resolved once).
Isa active();

/// Force an ISA; throws ValidationError if unsupported on this host.
void set_active(Isa isa);

/// True if the AVX2 variants were compiled in and the CPU supports them.
bool avx2_supported();

std::string isa_name(Isa isa);

// clang-format off
#define LUMINA_KERNEL_DECLS                                                                \
    template <class T> void add(T* dst, const T* a, const T* b, std::size_t n);            \
    template <class T> void sub(T* dst, const T* a, const T* b, std::size_t n);            \
    template <class T> void mul(T* dst, const T* a, const T* b, std::size_t n);            \
    template <class T> void scale(T* dst, const T* a, T c, std::size_t n);                 \
    template <class T> void axpy(T* dst, const T* a, T c, std::size_t n);                  \
    template <class T> T dot(const T* a, const T* b, std::size_t n);                       \
    template <class T> T sum(const T* a, std::size_t n);                                   \
    template <class T> void square(T* dst, const T* a, std::size_t n);                     \
    template <class T> void vabs(T* dst, const T* a, std::size_t n);                       \
    template <class T> void vsqrt(T* dst, const T* a, std::size_t n);                      \
    template <class T> void relu0(T* dst, const T* a, std::size_t n);                      \
    template <class T> void leaky_relu(T* dst, const T* a, T slope, std::size_t n);        \
    template <class T> void mul_acc(T* dst, const T* g, const T* b, std::size_t n);        \
    template <class T> void step_mul_acc(T* dst, const T* g, const T* x, std::size_t n);   \
    template <class T>                                                                     \
    void leaky_mul_acc(T* dst, const T* g, const T* x, T slope, std::size_t n);            \
    template <class T> void sign_mul_acc(T* dst, const T* g, const T* x, std::size_t n);   \
    /* Row-major matmuls. acc=false overwrites C, acc=true accumulates into C. */          \
    /* matmul   : C(m x n)  = A(m x k) * B(k x n)      */                                  \
    /* matmul_tn: C(m x n)  = A(k x m)^T * B(k x n)    */                                  \
    /* matmul_nt: C(m x n)  = A(m x k) * B(n x k)^T    */                                  \
    template <class T>                                                                     \
    void matmul(T* c, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n, \
                bool acc);                                                                 \
    template <class T>                                                                     \
    void matmul_tn(T* c, const T* a, const T* b, std::size_t m, std::size_t k,             \
                   std::size_t n, bool acc);                                               \
    template <class T>                                                                     \
    void matmul_nt(T* c, const T* a, const T* b, std::size_t m, std::size_t k,             \
                   std::size_t n, bool acc);
// clang-format on

namespace scalar {
LUMINA_KERNEL_DECLS
}
namespace avx2 {
LUMINA_KERNEL_DECLS
}
// Dispatching entry points.
LUMINA_KERNEL_DECLS

#undef LUMINA_KERNEL_DECLS

}  // namespace lumina::kernels
