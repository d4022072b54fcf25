#include <cmath>
#include <functional>
#include <sstream>

#include "doctest.h"
#include "rcnet/error.hpp"
#include "rcnet/gradcheck.hpp"
#include "rcnet/ops.hpp"
#include "rcnet/snapshot.hpp"
#include "support.hpp"

using namespace rcnet;
using testing::randn;

namespace {

// Direct nested-loop convolution.
std::vector<double> naive_conv(const Tensor &in, const Tensor &k, const Tensor &b, std::size_t stride,
                               std::size_t pad)
{
    const auto N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    const auto O = k.dim(0), KH = k.dim(2), KW = k.dim(3);
    const auto OH = (H + 2 * pad - KH) / stride + 1, OW = (W + 2 * pad - KW) / stride + 1;
    std::vector<double> out(N * O * OH * OW, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t y = 0; y < OH; ++y)
                for (std::size_t x = 0; x < OW; ++x) {
                    double acc = b.defined() ? b.at(o) : 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t i = 0; i < KH; ++i)
                            for (std::size_t j = 0; j < KW; ++j) {
                                const long iy = long(y * stride + i) - long(pad);
                                const long ix = long(x * stride + j) - long(pad);
                                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W))
                                    continue;
                                acc += double(in.at(((n * C + c) * H + iy) * W + ix)) *
                                       double(k.at(((o * C + c) * KH + i) * KW + j));
                            }
                    out[((n * O + o) * OH + y) * OW + x] = acc;
                }
    return out;
}

double max_abs_diff(std::span<const float> a, const std::vector<double> &b)
{
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(double(a[i]) - b[i]));
    return m;
}

} // namespace

TEST_CASE("tensor construction checks length against shape")
{
    CHECK_THROWS_AS(Tensor::from({2, 3}, std::vector<float>(5)), DimensionError);
    auto t = Tensor::full({2, 3}, 1.5f);
    CHECK(t.numel() == 6);
    CHECK(t.at(5) == 1.5f);
    CHECK_THROWS_AS(Tensor::from({1}, {std::nanf("")}), NumericDomainError);
}

TEST_CASE("conv2d of ones with a ones kernel gives box sums")
{
    auto x = Tensor::full({1, 1, 3, 3}, 1.0f);
    auto k = Tensor::full({1, 1, 3, 3}, 1.0f);
    auto y = conv2d(x, k, Tensor(), 1, 1);
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    CHECK(y.at(4) == 9.0f);
    CHECK(y.at(0) == 4.0f);
    CHECK(y.at(2) == 4.0f);
    CHECK(y.at(6) == 4.0f);
    CHECK(y.at(8) == 4.0f);
}

TEST_CASE("conv2d with a centred delta kernel is the identity")
{
    std::mt19937_64 rng(1);
    auto x = randn(rng, {2, 3, 9, 7});
    std::vector<float> kd(3 * 3 * 9, 0.0f);
    for (std::size_t c = 0; c < 3; ++c)
        kd[(c * 3 + c) * 9 + 4] = 1.0f;
    auto y = conv2d(x, Tensor::from({3, 3, 3, 3}, kd), Tensor(), 1, 1);
    CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
}

TEST_CASE("conv2d matches the nested-loop reference")
{
    std::mt19937_64 rng(2);
    auto x = randn(rng, {2, 4, 8, 8});
    auto k = randn(rng, {6, 4, 3, 3});
    auto b = randn(rng, {6});
    SUBCASE("stride 1, pad 1")
    {
        auto y = conv2d(x, k, b, 1, 1);
        CHECK(y.shape() == Shape{2, 6, 8, 8});
        CHECK(max_abs_diff(y.data(), naive_conv(x, k, b, 1, 1)) <= 1e-5);
    }
    SUBCASE("stride 1, no padding")
    {
        auto y = conv2d(x, k, Tensor(), 1, 0);
        CHECK(y.shape() == Shape{2, 6, 6, 6});
        CHECK(max_abs_diff(y.data(), naive_conv(x, k, Tensor(), 1, 0)) <= 1e-5);
    }
    SUBCASE("stride 2, pad 1")
    {
        auto y = conv2d(x, k, b, 2, 1);
        CHECK(y.shape() == Shape{2, 6, 4, 4});
        CHECK(max_abs_diff(y.data(), naive_conv(x, k, b, 2, 1)) <= 1e-5);
    }
    SUBCASE("1x1 kernel, odd extents")
    {
        auto x2 = randn(rng, {1, 5, 7, 11});
        auto k1 = randn(rng, {3, 5, 1, 1});
        auto y = conv2d(x2, k1, Tensor(), 1, 0);
        CHECK(max_abs_diff(y.data(), naive_conv(x2, k1, Tensor(), 1, 0)) <= 1e-5);
    }
}

TEST_CASE("conv2d rejects bad extents")
{
    std::mt19937_64 rng(3);
    CHECK_THROWS_AS(conv2d(randn(rng, {1, 3, 8, 8}), randn(rng, {2, 4, 3, 3}), Tensor()), DimensionError);
    CHECK_THROWS_AS(conv2d(randn(rng, {1, 3, 2, 2}), randn(rng, {2, 3, 3, 3}), Tensor()), DimensionError);
    CHECK_THROWS_AS(conv2d(randn(rng, {1, 3, 8, 8}), randn(rng, {2, 3, 3, 3}), randn(rng, {3})), DimensionError);
}

TEST_CASE("conv2d is linear in its input")
{
    std::mt19937_64 rng(4);
    auto x = randn(rng, {1, 4, 12, 12});
    auto y = randn(rng, {1, 4, 12, 12});
    auto k = randn(rng, {5, 4, 3, 3});
    const float a = 0.7f, b = -1.3f;
    auto lhs = conv2d(add(scale(x, a), scale(y, b)), k, Tensor(), 1, 1);
    auto rhs = add(scale(conv2d(x, k, Tensor(), 1, 1), a), scale(conv2d(y, k, Tensor(), 1, 1), b));
    for (std::size_t i = 0; i < lhs.numel(); ++i)
        CHECK(std::abs(lhs.at(i) - rhs.at(i)) <= 1e-5);
}

TEST_CASE("elementwise identities and product rule")
{
    std::mt19937_64 rng(5);
    auto x = randn(rng, {2, 3, 4, 4});
    auto s = add(x, Tensor::zeros(x.shape()));
    CHECK(std::equal(s.data().begin(), s.data().end(), x.data().begin()));
    auto m = mul(x, Tensor::full(x.shape(), 1.0f));
    CHECK(std::equal(m.data().begin(), m.data().end(), x.data().begin()));

    auto a = Tensor::scalar(2.0f, true);
    auto b = Tensor::scalar(3.0f, true);
    auto p = mul(a, b);
    backward(p);
    CHECK(a.grad()[0] == 3.0f);
    CHECK(b.grad()[0] == 2.0f);

    CHECK_THROWS_AS(add(x, randn(rng, {2, 3, 4, 2})), DimensionError);
    CHECK_THROWS_AS(add(x, randn(rng, {2, 3, 4})), DimensionError);
    CHECK_THROWS_AS(div(Tensor::full({2}, 1.0f), Tensor::zeros({2})), NumericDomainError);
}

TEST_CASE("broadcast gradient equals the sum over broadcast copies")
{
    std::mt19937_64 rng(6);
    auto a = randn(rng, {2, 3, 5, 5});
    auto w = randn(rng, {2, 3, 5, 5});
    SUBCASE("channel map broadcast over spatial axes")
    {
        auto b = randn(rng, {2, 3, 1, 1});
        b.set_requires_grad(true);
        backward(sum(mul(mul(a, b), w)));
        // d/db[n,c] = sum_{y,x} a*w
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t c = 0; c < 3; ++c) {
                double expect = 0;
                for (std::size_t i = 0; i < 25; ++i)
                    expect += double(a.at((n * 3 + c) * 25 + i)) * w.at((n * 3 + c) * 25 + i);
                CHECK(b.grad()[n * 3 + c] == doctest::Approx(expect).epsilon(1e-5));
            }
    }
    SUBCASE("spatial map broadcast over channels")
    {
        auto b = randn(rng, {2, 1, 5, 5});
        b.set_requires_grad(true);
        backward(sum(mul(add(a, b), w)));
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t i = 0; i < 25; ++i) {
                double expect = 0;
                for (std::size_t c = 0; c < 3; ++c)
                    expect += w.at((n * 3 + c) * 25 + i);
                CHECK(b.grad()[n * 25 + i] == doctest::Approx(expect).epsilon(1e-5));
            }
    }
}

TEST_CASE("activations")
{
    auto z = Tensor::scalar(0.0f, true);
    auto s = sigmoid(z);
    CHECK(s.item() == 0.5f);
    backward(s);
    CHECK(z.grad()[0] == 0.25f);

    auto r = relu(Tensor::from({3}, {-1.0f, 0.0f, 2.0f}));
    CHECK(r.at(0) == 0.0f);
    CHECK(r.at(1) == 0.0f);
    CHECK(r.at(2) == 2.0f);

    auto x = Tensor::from({3}, {-1.0f, 0.0f, 2.0f}, true);
    backward(sum(relu(x)));
    CHECK(x.grad()[0] == 0.0f);
    CHECK(x.grad()[1] == 0.0f);
    CHECK(x.grad()[2] == 1.0f);

    auto l = leaky_relu(Tensor::from({2}, {-2.0f, 3.0f}));
    CHECK(l.at(0) == doctest::Approx(-0.2));
    CHECK(l.at(1) == 3.0f);

    std::mt19937_64 rng(7);
    auto big = sigmoid(randn(rng, {1000}, 10.0));
    for (float v : big.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("global_avg_pool")
{
    auto x = Tensor::from({1, 2, 2, 2}, {0, 1, 2, 3, 4, 4, 4, 4}, true);
    auto p = global_avg_pool(x);
    REQUIRE(p.shape() == Shape{1, 2, 1, 1});
    CHECK(p.at(0) == 1.5f);
    CHECK(p.at(1) == 4.0f);
    backward(sum(p));
    for (float g : x.grad())
        CHECK(g == 0.25f);
}

TEST_CASE("dense")
{
    auto x = Tensor::from({1, 2}, {1, 2});
    auto w = Tensor::from({2, 2}, {1, 1, 1, -1});
    auto y = dense(x, w, Tensor::zeros({2}));
    CHECK(y.at(0) == 3.0f);
    CHECK(y.at(1) == -1.0f);

    auto id = dense(x, Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2}));
    CHECK(id.at(0) == 1.0f);
    CHECK(id.at(1) == 2.0f);

    std::mt19937_64 rng(8);
    auto xr = randn(rng, {4, 8});
    auto wr = randn(rng, {5, 8});
    auto br = randn(rng, {5});
    auto yr = dense(xr, wr, br);
    for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t k = 0; k < 5; ++k) {
            double acc = br.at(k);
            for (std::size_t c = 0; c < 8; ++c)
                acc += double(xr.at(n * 8 + c)) * wr.at(k * 8 + c);
            CHECK(std::abs(yr.at(n * 5 + k) - acc) <= 1e-6 * std::max(1.0, std::abs(acc)));
        }
    CHECK_THROWS_AS(dense(xr, randn(rng, {5, 7}), br), DimensionError);
}

TEST_CASE("concat and slice are inverse")
{
    std::mt19937_64 rng(9);
    auto a = randn(rng, {2, 2, 4, 5});
    auto b = randn(rng, {2, 3, 4, 5});
    auto one = concat_channels<float>({a});
    CHECK(std::equal(one.data().begin(), one.data().end(), a.data().begin()));
    auto c = concat_channels<float>({a, b});
    CHECK(c.shape() == Shape{2, 5, 4, 5});
    auto a2 = slice_channels(c, 0, 2), b2 = slice_channels(c, 2, 3);
    CHECK(std::equal(a2.data().begin(), a2.data().end(), a.data().begin()));
    CHECK(std::equal(b2.data().begin(), b2.data().end(), b.data().begin()));
    CHECK(c.at(1 * 20 * 5 + 2 * 20) == b.at(1 * 20 * 3));
    CHECK_THROWS_AS(concat_channels<float>({a, randn(rng, {2, 3, 4, 4})}), DimensionError);
}

TEST_CASE("pad, crop, pooling and gather shapes")
{
    std::mt19937_64 rng(10);
    auto x = randn(rng, {1, 2, 5, 6});
    auto p = reflect_pad(x, 2, 1);
    REQUIRE(p.shape() == Shape{1, 2, 7, 7});
    // mirror without repeating the edge sample
    CHECK(p.at(5 * 7 + 0) == x.at(3 * 6 + 0));
    CHECK(p.at(6 * 7 + 2) == x.at(2 * 6 + 2));
    CHECK(p.at(0 * 7 + 6) == x.at(0 * 6 + 4));
    auto c = crop(p, 5, 6);
    CHECK(std::equal(c.data().begin(), c.data().end(), x.data().begin()));

    auto q = avg_pool(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 6}), 2);
    CHECK(q.item() == 3.0f);
    auto u = upsample_nearest(q, 3);
    CHECK(u.shape() == Shape{1, 1, 3, 3});
    CHECK(u.at(8) == 3.0f);

    // 2x2 grid of 2x2 cells; every cell takes its right/left neighbour
    auto g = Tensor::from({1, 1, 4, 4}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15});
    auto swapped = gather_patches(g, 2, {1, 0, 3, 2});
    CHECK(swapped.at(0) == 2.0f);
    CHECK(swapped.at(2) == 0.0f);
    CHECK(swapped.at(15) == 13.0f);
}

TEST_CASE("backward contracts")
{
    auto x = Tensor::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
    auto loss = sum(mul(x, x));
    backward(loss);
    CHECK(x.grad()[0] == 2.0f);
    CHECK(x.grad()[1] == 4.0f);
    CHECK_THROWS_AS(backward(loss), ContractError);
    reset_graph(loss);
    backward(loss);
    CHECK(x.grad()[1] == 4.0f);

    auto y = Tensor::full({3}, 3.0f, true);
    backward(sum(y));
    for (float g : y.grad())
        CHECK(g == 1.0f);
    auto z = Tensor::full({1}, 3.0f, true);
    backward(sum(mul(z, z)));
    CHECK(z.grad()[0] == 6.0f);
}

TEST_CASE("a shared subexpression is differentiated once per use")
{
    auto x = Tensor::scalar(1.5f, true);
    auto s = mul(x, x);
    auto loss = add(s, mul(s, Tensor::scalar(2.0f))); // 3x^2
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(9.0));
}

TEST_CASE("forward replay is bit-identical")
{
    std::mt19937_64 rng(11);
    auto x = randn(rng, {2, 4, 10, 10});
    auto k = randn(rng, {4, 4, 3, 3});
    auto f = [&] { return sigmoid(conv2d(leaky_relu(conv2d(x, k, Tensor(), 1, 1)), k, Tensor(), 1, 1)); };
    auto a = f(), b = f();
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("finite_diff_check examples")
{
    std::mt19937_64 rng(12);
    auto x = randn<double>(rng, {2, 3, 4, 4});
    CHECK(finite_diff_check<double>([](const Tensor64 &v) { return sum(v); }, x, 1e-5) <= 1e-9);

    auto in = randn<double>(rng, {1, 2, 5, 5});
    auto k = randn<double>(rng, {2, 2, 3, 3});
    auto err = finite_diff_check<double>(
        [k](const Tensor64 &v) { return sum(sigmoid(conv2d(v, k, Tensor64(), 1, 1))); }, in, 1e-5);
    CHECK(err <= 1e-6);
    auto err_k = finite_diff_check<double>(
        [in](const Tensor64 &v) { return sum(sigmoid(conv2d(in, v, Tensor64(), 1, 1))); }, k, 1e-5);
    CHECK(err_k <= 1e-6);
    CHECK_THROWS_AS(finite_diff_check<double>([](const Tensor64 &v) { return sum(v); }, x, 0.0), ContractError);
}

TEST_CASE("gradient soundness in 32-bit mode")
{
    // Each op is contracted with positive weights so that no gradient entry
    // (a sum of weights for the pad/pool ops) is tiny next to float roundoff.
    std::mt19937_64 rng(13);
    auto weights = [&](const Shape &shape) { return testing::uniform<float>(rng, shape, 0.5, 1.5); };
    // inputs with |x| >= lo, so a 1e-2 step never crosses a kink
    auto away_from_zero = [&](const Shape &shape, double lo = 0.2) {
        auto x = testing::uniform<float>(rng, shape, lo, 1.0);
        std::bernoulli_distribution sign(0.5);
        for (auto &v : x.mutable_data())
            v = sign(rng) ? v : -v;
        return x;
    };
    struct Case {
        std::string name;
        std::function<Tensor(const Tensor &)> op;
        Tensor x;
        double eps = 1e-2; // linear ops take a wider step: no truncation error, less roundoff
    };
    auto k = randn<float>(rng, {3, 2, 3, 3}, 0.3);
    auto y = away_from_zero({1, 2, 5, 5});
    auto dw = randn<float>(rng, {3, 4}, 0.5);
    std::vector<Case> cases{
        {"conv2d", [&](const Tensor &v) { return conv2d(v, k, Tensor(), 1, 1); }, away_from_zero({1, 2, 5, 5}), 0.1},
        {"conv2d/kernel", [&](const Tensor &v) { return conv2d(y, v, Tensor(), 1, 1); }, k.detach(), 0.1},
        {"mul", [&](const Tensor &v) { return mul(v, y); }, away_from_zero({1, 2, 5, 5})},
        {"div", [&](const Tensor &v) { return div(y, v); }, away_from_zero({1, 2, 5, 5}, 0.5)},
        {"sigmoid", [](const Tensor &v) { return sigmoid(v); }, away_from_zero({1, 2, 5, 5})},
        {"relu", [](const Tensor &v) { return relu(v); }, away_from_zero({1, 2, 5, 5})},
        {"leaky_relu", [](const Tensor &v) { return leaky_relu(v); }, away_from_zero({1, 2, 5, 5})},
        {"abs", [](const Tensor &v) { return abs(v); }, away_from_zero({1, 2, 5, 5})},
        {"global_avg_pool", [](const Tensor &v) { return global_avg_pool(v); }, away_from_zero({2, 3, 4, 4})},
        {"avg_pool", [](const Tensor &v) { return avg_pool(v, 2); }, away_from_zero({1, 2, 6, 6})},
        {"upsample_nearest", [](const Tensor &v) { return upsample_nearest(v, 2); }, away_from_zero({1, 2, 3, 3})},
        {"reflect_pad", [](const Tensor &v) { return reflect_pad(v, 2, 3); }, away_from_zero({1, 2, 5, 4})},
        {"dense", [&](const Tensor &v) { return dense(v, dw, Tensor::zeros({3})); }, away_from_zero({2, 4}), 0.1},
    };
    for (auto &c : cases) {
        Tensor probe = c.op(c.x);
        auto w = weights(probe.shape());
        auto err = finite_diff_check<float>([&](const Tensor &v) { return sum(mul(c.op(v), w)); }, c.x.detach(),
                                            c.eps);
        CHECK_MESSAGE(err <= 1e-3, c.name << ": " << err);
    }
}

TEST_CASE("full gradient suite passes")
{
    for (const auto &r : gradcheck_suite(0)) {
        INFO(r.name << " " << r.max_rel_error);
        CHECK(r.passed());
    }
}

TEST_CASE("snapshot format and round trip")
{
    std::vector<NamedTensor> recs{{"a", {2, 3}, {1, 2, 3, 4, 5, 6}}, {"bias", {1}, {-0.5f}}};
    std::stringstream ss;
    write_snapshot(ss, recs);
    const std::string bytes = ss.str();
    REQUIRE(bytes.size() == 4 + 4 + 4 + (4 + 1 + 4 + 16 + 1 + 24) + (4 + 4 + 4 + 8 + 1 + 4));
    CHECK(bytes.substr(0, 4) == "RCTN");
    CHECK(std::uint8_t(bytes[4]) == 1);
    CHECK(std::uint8_t(bytes[8]) == 2);
    CHECK(std::uint8_t(bytes[12]) == 1); // name length
    CHECK(bytes[16] == 'a');
    CHECK(std::uint8_t(bytes[17]) == 2); // rank
    CHECK(std::uint8_t(bytes[21]) == 2); // first extent, u64 LE
    CHECK(std::uint8_t(bytes[37]) == 0); // dtype f32
    std::stringstream in(bytes);
    CHECK(read_snapshot(in) == recs);

    std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_snapshot(truncated), DataError);
    std::string bad = bytes;
    bad[0] = 'X';
    std::stringstream bad_magic(bad);
    CHECK_THROWS_AS(read_snapshot(bad_magic), DataError);
    CHECK_THROWS_AS(find_record(recs, "missing"), DataError);
    CHECK(find_record(recs, "bias").data[0] == -0.5f);
}

TEST_CASE("piecewise report sets kinks aside but still catches wrong gradients")
{
    // |x| with the first entry closer to its kink than the step
    auto x = Tensor64::from({3}, {2e-6, 0.5, -0.7});
    auto f = [](const Tensor64 &v) { return sum(abs(v)); };
    CHECK(finite_diff_check<double>(f, x.detach(), 1e-5) > 0.5);
    auto r = finite_diff_report<double>(f, x.detach(), 1e-5, 1e-6);
    CHECK(r.coordinates == 3);
    CHECK(r.nonsmooth == 1);
    CHECK(r.max_rel_error <= 1e-9);

    // smooth, but the detached factor halves the analytic gradient
    auto y = Tensor64::from({4}, {0.3, -0.2, 1.1, 0.9});
    auto wrong = [](const Tensor64 &v) { return sum(mul(v, v.detach())); };
    auto bad = finite_diff_report<double>(wrong, y.detach(), 1e-5, 1e-6);
    CHECK(bad.nonsmooth == 0);
    CHECK(bad.max_rel_error == doctest::Approx(0.5).epsilon(1e-6));
}
