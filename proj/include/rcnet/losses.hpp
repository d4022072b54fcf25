#pragma once

#include <vector>

#include "rcnet/image.hpp"
#include "rcnet/tensor.hpp"

namespace rcnet {

inline constexpr std::size_t ssim_window = 11;
inline constexpr double ssim_sigma = 1.5;
inline constexpr double ssim_c1 = 0.01 * 0.01;
inline constexpr double ssim_c2 = 0.03 * 0.03;

// Normalized k x k Gaussian taps, row-major.
std::vector<double> gaussian_kernel(std::size_t k, double sigma);

/// Mean local SSIM over [N,C,H,W] tensors: 11x11 Gaussian window (sigma 1.5)
/// evaluated at every fully contained position, averaged over positions,
/// channels and samples. H and W must be at least 11.
template <typename Real>
BasicTensor<Real> ssim(const BasicTensor<Real> &x, const BasicTensor<Real> &y);

// Mean absolute difference.
template <typename Real>
BasicTensor<Real> l1_mean(const BasicTensor<Real> &x, const BasicTensor<Real> &y);

// mean|x - y| + 1 - ssim(x, y)
template <typename Real>
BasicTensor<Real> l_rec(const BasicTensor<Real> &x, const BasicTensor<Real> &y);

/// sum_t w_t * l_rec(I_t, gt) + l_rec(R, gt). `stage_weights` empty means all
/// ones; otherwise it must hold one weight per intermediate. A zero weight
/// drops the term from the graph entirely.
template <typename Real>
BasicTensor<Real> l_total(const std::vector<BasicTensor<Real>> &intermediates, const BasicTensor<Real> &result,
                          const BasicTensor<Real> &gt, const std::vector<double> &stage_weights = {});

// SSIM of two images, evaluated in double precision.
double ssim_image(const ImageRGB &a, const ImageRGB &b);

} // namespace rcnet
