#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rcnet/tensor.hpp"

// Differentiable operation set. Image-shaped tensors are NCHW. Every op
// validates extents (DimensionError) and rejects non-finite results
// (NumericDomainError).

namespace rcnet {

/// 2-D cross-correlation. `bias` may be undefined. Output extents are
/// floor((in + 2*padding - k) / stride) + 1.
template <typename Real>
BasicTensor<Real> conv2d(const BasicTensor<Real> &input, const BasicTensor<Real> &kernel,
                         const BasicTensor<Real> &bias, std::size_t stride = 1, std::size_t padding = 0);

enum class Elementwise { add, sub, mul, div };

/// Pointwise binary op. `b` must have the rank of `a` with every extent either
/// equal to a's or 1; singleton axes broadcast and their gradient is summed.
template <typename Real>
BasicTensor<Real> elementwise(Elementwise kind, const BasicTensor<Real> &a, const BasicTensor<Real> &b);

template <typename Real>
BasicTensor<Real> add(const BasicTensor<Real> &a, const BasicTensor<Real> &b)
{
    return elementwise(Elementwise::add, a, b);
}
template <typename Real>
BasicTensor<Real> sub(const BasicTensor<Real> &a, const BasicTensor<Real> &b)
{
    return elementwise(Elementwise::sub, a, b);
}
template <typename Real>
BasicTensor<Real> mul(const BasicTensor<Real> &a, const BasicTensor<Real> &b)
{
    return elementwise(Elementwise::mul, a, b);
}
template <typename Real>
BasicTensor<Real> div(const BasicTensor<Real> &a, const BasicTensor<Real> &b)
{
    return elementwise(Elementwise::div, a, b);
}

template <typename Real>
BasicTensor<Real> scale(const BasicTensor<Real> &x, Real factor);
template <typename Real>
BasicTensor<Real> add_scalar(const BasicTensor<Real> &x, Real value);

enum class Activation { relu, sigmoid, leaky_relu };

inline constexpr double default_leaky_slope = 0.1;

template <typename Real>
BasicTensor<Real> activation(Activation kind, const BasicTensor<Real> &x, Real slope = Real(default_leaky_slope));

template <typename Real>
BasicTensor<Real> relu(const BasicTensor<Real> &x)
{
    return activation(Activation::relu, x);
}
template <typename Real>
BasicTensor<Real> sigmoid(const BasicTensor<Real> &x)
{
    return activation(Activation::sigmoid, x);
}
template <typename Real>
BasicTensor<Real> leaky_relu(const BasicTensor<Real> &x, Real slope = Real(default_leaky_slope))
{
    return activation(Activation::leaky_relu, x, slope);
}

// |x|, subgradient 0 at 0.
template <typename Real>
BasicTensor<Real> abs(const BasicTensor<Real> &x);

// NCHW -> NC11 spatial mean.
template <typename Real>
BasicTensor<Real> global_avg_pool(const BasicTensor<Real> &x);

// x[N,C] * weight[K,C]^T + bias[K] -> [N,K]
template <typename Real>
BasicTensor<Real> dense(const BasicTensor<Real> &x, const BasicTensor<Real> &weight, const BasicTensor<Real> &bias);

template <typename Real>
BasicTensor<Real> reshape(const BasicTensor<Real> &x, Shape shape);

template <typename Real>
BasicTensor<Real> concat_channels(const std::vector<BasicTensor<Real>> &parts);

template <typename Real>
BasicTensor<Real> slice_channels(const BasicTensor<Real> &x, std::size_t begin, std::size_t count);

/// Extends the bottom and right edges by mirror reflection (edge sample not
/// repeated), so that a top-left anchored patch grid covers the whole map.
template <typename Real>
BasicTensor<Real> reflect_pad(const BasicTensor<Real> &x, std::size_t pad_bottom, std::size_t pad_right);

// Keeps the top-left height x width window.
template <typename Real>
BasicTensor<Real> crop(const BasicTensor<Real> &x, std::size_t height, std::size_t width);

// Non-overlapping k x k mean pooling; H and W must be multiples of k.
template <typename Real>
BasicTensor<Real> avg_pool(const BasicTensor<Real> &x, std::size_t k);

template <typename Real>
BasicTensor<Real> upsample_nearest(const BasicTensor<Real> &x, std::size_t k);

/// Patch gather on a grid of `patch` x `patch` cells. For sample n and
/// destination cell j, copies source cell `source_cell[n * cells + j]`.
/// Gradients flow through the copied values; indices are constants.
template <typename Real>
BasicTensor<Real> gather_patches(const BasicTensor<Real> &source, std::size_t patch,
                                 const std::vector<std::uint32_t> &source_cell);

template <typename Real>
BasicTensor<Real> sum(const BasicTensor<Real> &x);
template <typename Real>
BasicTensor<Real> mean(const BasicTensor<Real> &x);

/// Per-channel 'valid' correlation with a fixed k x k kernel (no kernel
/// gradient). Output is [N, C, H-k+1, W-k+1].
template <typename Real>
BasicTensor<Real> filter2d_valid(const BasicTensor<Real> &x, const std::vector<Real> &kernel, std::size_t k);

} // namespace rcnet
