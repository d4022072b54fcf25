#pragma once

#include <cstddef>
#include <string_view>

// Inner-loop kernels shared by convolution, dense layers and patch search.
// Each kernel has a portable scalar reference and an AVX2/FMA variant; the
// variant is picked once at startup from CPUID and can be overridden with
// RCNET_ISA=scalar|avx2 or set_isa().

namespace rcnet::simd {

enum class Isa { scalar, avx2 };

Isa active_isa() noexcept;
bool isa_supported(Isa isa) noexcept;
// Throws rcnet::UsageError if the CPU lacks the requested ISA.
void set_isa(Isa isa);
std::string_view isa_name(Isa isa) noexcept;

// y[i] += a * x[i]
void axpy(float a, const float *x, float *y, std::size_t n) noexcept;
// sum x[i] * y[i], single-precision accumulation
float dot(const float *x, const float *y, std::size_t n) noexcept;
// sum x[i] * y[i], double-precision accumulation (patch correlation)
double dot_acc64(const float *x, const float *y, std::size_t n) noexcept;

// Double-precision paths are used for gradient checking only and stay scalar.
void axpy(double a, const double *x, double *y, std::size_t n) noexcept;
double dot(const double *x, const double *y, std::size_t n) noexcept;
double dot_acc64(const double *x, const double *y, std::size_t n) noexcept;

namespace scalar {
void axpy_f32(float a, const float *x, float *y, std::size_t n) noexcept;
float dot_f32(const float *x, const float *y, std::size_t n) noexcept;
double dot_acc64_f32(const float *x, const float *y, std::size_t n) noexcept;
} // namespace scalar

#if defined(RCNET_HAVE_AVX2)
namespace avx2 {
void axpy_f32(float a, const float *x, float *y, std::size_t n) noexcept;
float dot_f32(const float *x, const float *y, std::size_t n) noexcept;
double dot_acc64_f32(const float *x, const float *y, std::size_t n) noexcept;
} // namespace avx2
#endif

} // namespace rcnet::simd
