#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rcnet/tensor.hpp"

namespace rcnet {

/// Feature map cut into non-overlapping patch x patch cells after reflective
/// padding of the bottom/right edges to multiples of `patch`. Each cell is
/// stored as one contiguous vector (channel, row, column order).
template <typename Real>
struct PatchGrid {
    std::size_t patch = 0;
    std::size_t channels = 0;
    std::size_t rows = 0, cols = 0;
    std::size_t height = 0, width = 0; // before padding
    std::vector<Real> cells;
    std::vector<double> norms;

    std::size_t cell_count() const { return rows * cols; }
    std::size_t length() const { return channels * patch * patch; }
    std::span<const Real> cell(std::size_t i) const { return {cells.data() + i * length(), length()}; }
};

// Rounds `extent` up to a multiple of `patch`.
std::size_t padded_extent(std::size_t extent, std::size_t patch);

template <typename Real>
PatchGrid<Real> partition(const Real *chw, std::size_t channels, std::size_t height, std::size_t width,
                          std::size_t patch);
// Sample n of an [N,C,H,W] tensor.
template <typename Real>
PatchGrid<Real> partition(const BasicTensor<Real> &x, std::size_t n, std::size_t patch);

/// Normalized inner product, in [-1, 1]; 0 when either operand is all zero.
template <typename Real>
double correlate(std::span<const Real> a, std::span<const Real> b);

/// Per primary cell, up to K source cells in descending correlation order.
/// count[i] < K only where the clipped search window holds fewer than K cells.
struct Candidates {
    std::size_t rows = 0, cols = 0, k = 0;
    std::vector<std::uint32_t> index; // cell * k + rank
    std::vector<double> rho;          // cell * k + rank
    std::vector<std::uint32_t> count; // per cell

    std::size_t cell_count() const { return rows * cols; }
    std::uint32_t at(std::size_t cell, std::size_t rank) const { return index[cell * k + rank]; }
    double rho_at(std::size_t cell, std::size_t rank) const { return rho[cell * k + rank]; }
    bool operator==(const Candidates &) const = default;
};

// Number of grid cells within Chebyshev distance `radius` of cell (r, c).
std::size_t window_population(std::size_t rows, std::size_t cols, std::size_t r, std::size_t c, std::size_t radius);

/// Windowed top-K search. Ties keep row-major window scan order. Throws
/// ContractError if the grids differ in geometry or K exceeds (2*radius+1)^2.
template <typename Real>
Candidates topk_search(const PatchGrid<Real> &primary, const PatchGrid<Real> &source, std::size_t k,
                       std::size_t radius);

/// Exhaustive reference for topk_search: scores every window cell with
/// correlate(), stable-sorts and truncates.
template <typename Real>
Candidates brute_force_oracle(const PatchGrid<Real> &primary, const PatchGrid<Real> &source, std::size_t k,
                              std::size_t radius);

/// conf / K * sum of the K candidates.
template <typename Real>
std::vector<Real> weighted_average(const std::vector<std::span<const Real>> &candidates, double conf);

/// Channel-stacks [g_1 .. g_K, avg] and crops back to height x width.
template <typename Real>
BasicTensor<Real> assemble_aligned(const std::vector<BasicTensor<Real>> &candidates, const BasicTensor<Real> &avg,
                                   std::size_t height, std::size_t width);

struct AlignSettings {
    std::size_t patch = 7;
    std::size_t k = 4;
    std::size_t radius = 2;
};

template <typename Real>
struct AlignOutput {
    BasicTensor<Real> aligned;            // [N, (K+1)C, H, W]
    BasicTensor<Real> top1;               // [N, C, H, W]
    std::vector<Candidates> candidates;   // per sample
};

/// Aligns `source` to `primary` (both [N,C,H,W]). Indices come from the
/// primary/source values; gradients flow into `source` through the gathered
/// patches and into `confidence` ([N,1,Hp,Wp], per-patch constant on the
/// padded grid, or undefined for 1). Where a window holds fewer than K cells,
/// the best candidate fills the empty slots and the average runs over the
/// cells actually found.
template <typename Real>
AlignOutput<Real> align_features(const BasicTensor<Real> &primary, const BasicTensor<Real> &source,
                                 const BasicTensor<Real> &confidence, const AlignSettings &settings);

} // namespace rcnet
