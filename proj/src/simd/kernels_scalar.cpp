#include "rcnet/simd/kernels.hpp"

namespace rcnet::simd::scalar {

void axpy_f32(float a, const float *x, float *y, std::size_t n) noexcept
{
    for (std::size_t i = 0; i < n; ++i)
        y[i] += a * x[i];
}

float dot_f32(const float *x, const float *y, std::size_t n) noexcept
{
    float acc = 0.0f;
    for (std::size_t i = 0; i < n; ++i)
        acc += x[i] * y[i];
    return acc;
}

double dot_acc64_f32(const float *x, const float *y, std::size_t n) noexcept
{
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        acc += static_cast<double>(x[i]) * static_cast<double>(y[i]);
    return acc;
}

} // namespace rcnet::simd::scalar
