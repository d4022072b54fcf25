#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rcnet/tensor.hpp"

namespace rcnet {

/// Central-difference gradient oracle. Evaluates f at x, back-propagates, then
/// perturbs every element of x by +-eps and compares. Returns
/// max_i |analytic_i - cd_i| / max(|analytic_i|, |cd_i|, 1e-8).
/// x must be a leaf; its values are restored before returning.
template <typename Real>
double finite_diff_check(const std::function<BasicTensor<Real>(const BasicTensor<Real> &)> &f,
                         BasicTensor<Real> x, double eps);

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::size_t nonsmooth = 0; // excluded from max_rel_error
};

/// finite_diff_check for piecewise-smooth f. A coordinate whose relative error
/// exceeds `tolerance` while its one-sided difference quotients disagree by at
/// least |analytic - cd| sits on a kink or on a switch of a discrete choice
/// (top-K selection) within +-eps; it is counted in `nonsmooth` instead of
/// max_rel_error. At a smooth point the one-sided quotients differ by
/// O(eps * f''), so a wrong gradient still shows.
template <typename Real>
FiniteDiffReport finite_diff_report(const std::function<BasicTensor<Real>(const BasicTensor<Real> &)> &f,
                                    BasicTensor<Real> x, double eps, double tolerance);

struct GradcheckResult {
    std::string name;
    double max_rel_error;
    double tolerance;
    std::size_t coordinates = 0;
    std::size_t nonsmooth = 0;
    // at most a quarter of the coordinates (and at least one) may be set aside as nonsmooth
    bool passed() const { return max_rel_error <= tolerance && nonsmooth <= std::max<std::size_t>(1, coordinates / 4); }
};

// Runs the finite-difference suite over every differentiable op plus the
// network pieces and a full single-unit forward + total loss, all in 64-bit.
std::vector<GradcheckResult> gradcheck_suite(std::uint64_t seed);

} // namespace rcnet
