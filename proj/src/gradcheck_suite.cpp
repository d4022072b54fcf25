#include <random>

#include "rcnet/gradcheck.hpp"
#include "rcnet/losses.hpp"
#include "rcnet/network.hpp"
#include "rcnet/ops.hpp"

namespace rcnet {

namespace {

using T64 = Tensor64;
using Fn = std::function<T64(const T64 &)>;

constexpr double op_tolerance = 1e-6;
constexpr double model_tolerance = 1e-4;
constexpr double fd_eps = 1e-4;
// Whole-model losses sum thousands of terms; at 1e-5 the central difference
// is limited by roundoff on small gradient entries.
constexpr double model_fd_eps = 3e-5;

struct Suite {
    std::mt19937_64 rng;
    std::vector<GradcheckResult> results;

    T64 randn(Shape shape, double scale = 1.0)
    {
        std::normal_distribution<double> d(0.0, scale);
        std::vector<double> v(numel(shape));
        for (auto &x : v)
            x = d(rng);
        return T64::from(std::move(shape), std::move(v));
    }

    T64 uniform(Shape shape, double lo, double hi)
    {
        std::uniform_real_distribution<double> d(lo, hi);
        std::vector<double> v(numel(shape));
        for (auto &x : v)
            x = d(rng);
        return T64::from(std::move(shape), std::move(v));
    }

    // Contracts a tensor-valued op with fixed random weights so every output
    // element contributes to the scalar.
    Fn contract(std::function<T64(const T64 &)> op, const Shape &out_shape)
    {
        T64 w = randn(out_shape);
        return [op, w](const T64 &x) { return sum(mul(op(x), w)); };
    }

    void check(const std::string &name, const Fn &f, T64 x, double tol, double eps = fd_eps)
    {
        results.push_back({name, finite_diff_check<double>(f, x, eps), tol, x.numel(), 0});
    }

    // Compositions with ReLUs and top-K selection are only piecewise smooth.
    void check_piecewise(const std::string &name, const Fn &f, T64 x, double tol = model_tolerance,
                         double eps = model_fd_eps)
    {
        auto r = finite_diff_report<double>(f, x, eps, tol);
        results.push_back({name, r.max_rel_error, tol, r.coordinates, r.nonsmooth});
    }
};

ModelConfig toy_model(std::size_t units)
{
    ModelConfig c;
    c.channels = 4;
    c.units = units;
    c.k = 4;
    c.patch = 7;
    c.radius = 2;
    c.se_reduction = 2;
    c.encoder_depth = 2;
    c.confidence_hidden = 4;
    return c;
}

} // namespace

std::vector<GradcheckResult> gradcheck_suite(std::uint64_t seed)
{
    Suite s{std::mt19937_64(seed), {}};

    // conv2d
    {
        T64 x = s.randn({1, 2, 5, 5}), k = s.randn({3, 2, 3, 3}), b = s.randn({3});
        s.check("conv2d/input", s.contract([=](const T64 &v) { return conv2d(v, k, b, 1, 1); }, {1, 3, 5, 5}), x,
                op_tolerance);
        s.check("conv2d/kernel", s.contract([=](const T64 &v) { return conv2d(x, v, b, 1, 1); }, {1, 3, 5, 5}), k,
                op_tolerance);
        s.check("conv2d/bias", s.contract([=](const T64 &v) { return conv2d(x, k, v, 1, 1); }, {1, 3, 5, 5}), b,
                op_tolerance);
        s.check("conv2d/strided", s.contract([=](const T64 &v) { return conv2d(v, k, b, 2, 1); }, {1, 3, 3, 3}), x,
                op_tolerance);
        s.check("conv2d_sigmoid_sum", [=](const T64 &v) { return sum(sigmoid(conv2d(v, k, b, 1, 1))); }, x,
                op_tolerance);
    }
    // elementwise with and without broadcasting
    {
        T64 a = s.randn({2, 3, 4, 4}), bc = s.uniform({2, 1, 4, 4}, 0.5, 2.0), bs = s.uniform({2, 3, 1, 1}, 0.5, 2.0);
        const Elementwise kinds[] = {Elementwise::add, Elementwise::sub, Elementwise::mul, Elementwise::div};
        const char *names[] = {"add", "sub", "mul", "div"};
        for (int i = 0; i < 4; ++i) {
            auto kind = kinds[i];
            s.check(std::string("elementwise/") + names[i] + "/a",
                    s.contract([=](const T64 &v) { return elementwise(kind, v, bc); }, a.shape()), a, op_tolerance);
            s.check(std::string("elementwise/") + names[i] + "/b_channel_broadcast",
                    s.contract([=](const T64 &v) { return elementwise(kind, a, v); }, a.shape()), bc, op_tolerance);
            s.check(std::string("elementwise/") + names[i] + "/b_spatial_broadcast",
                    s.contract([=](const T64 &v) { return elementwise(kind, a, v); }, a.shape()), bs, op_tolerance);
        }
    }
    // pointwise
    {
        T64 x = s.randn({1, 2, 4, 4});
        for (auto [kind, name] : {std::pair{Activation::relu, "relu"}, std::pair{Activation::sigmoid, "sigmoid"},
                                  std::pair{Activation::leaky_relu, "leaky_relu"}})
            s.check(std::string("activation/") + name,
                    s.contract([kind](const T64 &v) { return activation(kind, v); }, x.shape()), x, op_tolerance);
        s.check("abs", s.contract([](const T64 &v) { return abs(v); }, x.shape()), x, op_tolerance);
        s.check("scale", s.contract([](const T64 &v) { return scale(v, 2.5); }, x.shape()), x, op_tolerance);
        s.check("add_scalar", s.contract([](const T64 &v) { return add_scalar(v, 0.3); }, x.shape()), x,
                op_tolerance);
        s.check("sum", [](const T64 &v) { return sum(v); }, x, op_tolerance);
        s.check("mean", [](const T64 &v) { return mean(v); }, x, op_tolerance);
    }
    // pooling, dense, reshaping
    {
        T64 x = s.randn({2, 3, 6, 6});
        s.check("global_avg_pool", s.contract([](const T64 &v) { return global_avg_pool(v); }, {2, 3, 1, 1}), x,
                op_tolerance);
        s.check("avg_pool", s.contract([](const T64 &v) { return avg_pool(v, 3); }, {2, 3, 2, 2}), x, op_tolerance);
        s.check("upsample_nearest", s.contract([](const T64 &v) { return upsample_nearest(v, 2); }, {2, 3, 12, 12}),
                x, op_tolerance);
        s.check("reflect_pad", s.contract([](const T64 &v) { return reflect_pad(v, 4, 3); }, {2, 3, 10, 9}), x,
                op_tolerance);
        s.check("crop", s.contract([](const T64 &v) { return crop(v, 4, 5); }, {2, 3, 4, 5}), x, op_tolerance);
        s.check("reshape", s.contract([](const T64 &v) { return reshape(v, {6, 36}); }, {6, 36}), x, op_tolerance);
        s.check("slice_channels", s.contract([](const T64 &v) { return slice_channels(v, 1, 2); }, {2, 2, 6, 6}), x,
                op_tolerance);
        T64 y = s.randn({2, 2, 6, 6});
        s.check("concat_channels", s.contract([y](const T64 &v) { return concat_channels<double>({y, v, y}); },
                                              {2, 7, 6, 6}),
                x, op_tolerance);
        std::vector<std::uint32_t> table{3, 3, 0, 1, 2, 0, 1, 3};
        s.check("gather_patches",
                s.contract([table](const T64 &v) { return gather_patches(v, 3, table); }, {2, 3, 6, 6}), x,
                op_tolerance);
        std::vector<double> taps(9);
        for (auto &t : taps)
            t = std::normal_distribution<double>(0, 1)(s.rng);
        s.check("filter2d_valid",
                s.contract([taps](const T64 &v) { return filter2d_valid(v, taps, 3); }, {2, 3, 4, 4}), x,
                op_tolerance);

        T64 in = s.randn({4, 8}), w = s.randn({5, 8}), b = s.randn({5});
        s.check("dense/input", s.contract([=](const T64 &v) { return dense(v, w, b); }, {4, 5}), in, op_tolerance);
        s.check("dense/weight", s.contract([=](const T64 &v) { return dense(in, v, b); }, {4, 5}), w, op_tolerance);
        s.check("dense/bias", s.contract([=](const T64 &v) { return dense(in, w, v); }, {4, 5}), b, op_tolerance);
    }
    // losses
    {
        T64 x = s.uniform({1, 3, 16, 16}, 0.05, 0.95), y = s.uniform({1, 3, 16, 16}, 0.05, 0.95);
        s.check("ssim", [y](const T64 &v) { return ssim(v, y); }, x, model_tolerance, model_fd_eps);
        s.check_piecewise("l_rec", [y](const T64 &v) { return l_rec(v, y); }, x); // L1 kink where v == y
    }
    // network pieces and a full single-unit forward + total loss
    {
        const std::size_t hw = 14;
        for (std::size_t units : {std::size_t(1), std::size_t(2)}) {
            ModelConfig cfg = toy_model(units);
            auto params = init_params(cfg, seed + units).cast<double>();
            for (std::size_t i = 0; i < params.size(); ++i)
                params.at(i).set_requires_grad(false);
            ViewSet<double> feats{s.randn({1, 4, hw, hw}), s.randn({1, 4, hw, hw}), s.randn({1, 4, hw, hw})};
            T64 primary_img = s.uniform({1, 3, hw, hw}, 0.0, 0.3);
            T64 gt = s.uniform({1, 3, hw, hw}, 0.2, 0.9);
            const std::string tag = "network/T=" + std::to_string(units);

            if (units == 1) {
                s.check_piecewise("intra_view_en", s.contract([=](const T64 &v) {
                    return intra_view_en(params, cfg, 0, ViewSet<double>{feats[0], v, feats[2]}, T64())[1];
                }, {1, 4, hw, hw}), feats[1]);
                s.check_piecewise("confidence_eval",
                                  s.contract([=](const T64 &v) { return confidence_eval(params, 0, v); },
                                             {1, 1, hw, hw}),
                                  s.uniform({1, 3, hw, hw}, 0.0, 1.0));
            }
            auto loss_from = [=](std::size_t slot) {
                return [=](const T64 &v) {
                    ViewSet<double> f = feats;
                    f[slot] = v;
                    auto out = forward_features(params, cfg, f, primary_img);
                    return l_total(out.stages, out.result, gt);
                };
            };
            s.check_piecewise(tag + "/l_total/primary_features", loss_from(1), feats[1]);
            s.check_piecewise(tag + "/l_total/auxiliary_features", loss_from(0), feats[0]);

            // One parameter tensor per component, loss as a function of it.
            for (const char *pname : {"u1.sa.0.w", "u1.se.0.w", "u1.e2a.w", "u1.cof.0.w", "u1.conv.0.w", "u1.wt.3.w",
                                      "head.w"}) {
                auto f = [=](const T64 &v) {
                    auto p = params;
                    p.get(pname) = v;
                    auto out = forward_features(p, cfg, feats, primary_img);
                    return l_total(out.stages, out.result, gt);
                };
                s.check_piecewise(tag + "/l_total/" + pname, f, params.get(pname).detach());
            }
            if (units == 2) {
                auto f = [=](const T64 &v) {
                    auto p = params;
                    p.get("u2.sa.0.w") = v;
                    auto out = forward_features(p, cfg, feats, primary_img);
                    return l_total(out.stages, out.result, gt);
                };
                s.check_piecewise(tag + "/l_total/u2.sa.0.w", f, params.get("u2.sa.0.w").detach());
            }
        }
    }
    return s.results;
}

} // namespace rcnet
