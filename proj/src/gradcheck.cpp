#include "rcnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rcnet/error.hpp"

namespace rcnet {

template <typename Real>
double finite_diff_check(const std::function<BasicTensor<Real>(const BasicTensor<Real> &)> &f,
                         BasicTensor<Real> x, double eps)
{
    if (!(eps > 0))
        throw ContractError("finite_diff_check: eps must be positive");
    if (!x.node() || !x.node()->is_leaf())
        throw ContractError("finite_diff_check: x must be a leaf tensor");

    x.zero_grad();
    x.set_requires_grad(true);
    std::vector<double> analytic(x.numel(), 0.0);
    {
        auto loss = f(x);
        if (loss.requires_grad()) {
            backward(loss);
            if (x.has_grad()) {
                auto g = x.grad();
                std::copy(g.begin(), g.end(), analytic.begin());
            }
        }
    }
    x.zero_grad();

    auto values = x.mutable_data();
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const Real saved = values[i];
        // divide by the step actually taken, which differs from 2*eps in 32-bit
        const Real hi = Real(double(saved) + eps), lo = Real(double(saved) - eps);
        values[i] = hi;
        const double up = double(f(x).item());
        values[i] = lo;
        const double down = double(f(x).item());
        values[i] = saved;
        const double cd = (up - down) / (double(hi) - double(lo));
        const double denom = std::max({std::abs(analytic[i]), std::abs(cd), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - cd) / denom);
    }
    return worst;
}

template <typename Real>
FiniteDiffReport finite_diff_report(const std::function<BasicTensor<Real>(const BasicTensor<Real> &)> &f,
                                    BasicTensor<Real> x, double eps, double tolerance)
{
    if (!(eps > 0))
        throw ContractError("finite_diff_report: eps must be positive");
    if (!x.node() || !x.node()->is_leaf())
        throw ContractError("finite_diff_report: x must be a leaf tensor");

    x.zero_grad();
    x.set_requires_grad(true);
    std::vector<double> analytic(x.numel(), 0.0);
    double centre = 0.0;
    {
        auto loss = f(x);
        centre = double(loss.item());
        if (loss.requires_grad()) {
            backward(loss);
            if (x.has_grad()) {
                auto g = x.grad();
                std::copy(g.begin(), g.end(), analytic.begin());
            }
        }
    }
    x.zero_grad();

    FiniteDiffReport report;
    report.coordinates = x.numel();
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const Real saved = values[i];
        const Real hi = Real(double(saved) + eps), lo = Real(double(saved) - eps);
        values[i] = hi;
        const double up = double(f(x).item());
        values[i] = lo;
        const double down = double(f(x).item());
        values[i] = saved;
        const double cd = (up - down) / (double(hi) - double(lo));
        const double forward = (up - centre) / (double(hi) - double(saved));
        const double backward_q = (centre - down) / (double(saved) - double(lo));
        const double err = std::abs(analytic[i] - cd);
        const double rel = err / std::max({std::abs(analytic[i]), std::abs(cd), 1e-8});
        if (rel > tolerance && std::abs(forward - backward_q) >= err) {
            ++report.nonsmooth;
            continue;
        }
        report.max_rel_error = std::max(report.max_rel_error, rel);
    }
    return report;
}

template double finite_diff_check(const std::function<BasicTensor<float>(const BasicTensor<float> &)> &,
                                  BasicTensor<float>, double);
template double finite_diff_check(const std::function<BasicTensor<double>(const BasicTensor<double> &)> &,
                                  BasicTensor<double>, double);

template FiniteDiffReport finite_diff_report(const std::function<BasicTensor<float>(const BasicTensor<float> &)> &,
                                            BasicTensor<float>, double, double);
template FiniteDiffReport finite_diff_report(const std::function<BasicTensor<double>(const BasicTensor<double> &)> &,
                                            BasicTensor<double>, double, double);

} // namespace rcnet
