#include <cstdlib>
#include <string>

#include "rcnet/error.hpp"
#include "rcnet/simd/kernels.hpp"

namespace rcnet::simd {

namespace {

struct KernelTable {
    Isa isa;
    void (*axpy_f32)(float, const float *, float *, std::size_t) noexcept;
    float (*dot_f32)(const float *, const float *, std::size_t) noexcept;
    double (*dot_acc64_f32)(const float *, const float *, std::size_t) noexcept;
};

constexpr KernelTable scalar_table{Isa::scalar, &scalar::axpy_f32, &scalar::dot_f32, &scalar::dot_acc64_f32};
#if defined(RCNET_HAVE_AVX2)
constexpr KernelTable avx2_table{Isa::avx2, &avx2::axpy_f32, &avx2::dot_f32, &avx2::dot_acc64_f32};
#endif

bool cpu_has_avx2() noexcept
{
#if defined(RCNET_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable *table_for(Isa isa) noexcept
{
#if defined(RCNET_HAVE_AVX2)
    if (isa == Isa::avx2)
        return &avx2_table;
#endif
    (void)isa;
    return &scalar_table;
}

const KernelTable *initial_table() noexcept
{
    Isa isa = cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
    if (const char *env = std::getenv("RCNET_ISA")) {
        std::string v{env};
        if (v == "scalar")
            isa = Isa::scalar;
        else if (v == "avx2" && cpu_has_avx2())
            isa = Isa::avx2;
    }
    return table_for(isa);
}

const KernelTable *&current() noexcept
{
    static const KernelTable *table = initial_table();
    return table;
}

} // namespace

Isa active_isa() noexcept { return current()->isa; }

bool isa_supported(Isa isa) noexcept
{
    return isa == Isa::scalar || cpu_has_avx2();
}

void set_isa(Isa isa)
{
    if (!isa_supported(isa))
        throw UsageError("ISA not supported on this CPU: " + std::string(isa_name(isa)));
    current() = table_for(isa);
}

std::string_view isa_name(Isa isa) noexcept
{
    return isa == Isa::avx2 ? "avx2" : "scalar";
}

void axpy(float a, const float *x, float *y, std::size_t n) noexcept { current()->axpy_f32(a, x, y, n); }
float dot(const float *x, const float *y, std::size_t n) noexcept { return current()->dot_f32(x, y, n); }
double dot_acc64(const float *x, const float *y, std::size_t n) noexcept { return current()->dot_acc64_f32(x, y, n); }

void axpy(double a, const double *x, double *y, std::size_t n) noexcept
{
    for (std::size_t i = 0; i < n; ++i)
        y[i] += a * x[i];
}

double dot(const double *x, const double *y, std::size_t n) noexcept
{
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        acc += x[i] * y[i];
    return acc;
}

double dot_acc64(const double *x, const double *y, std::size_t n) noexcept { return dot(x, y, n); }

} // namespace rcnet::simd
