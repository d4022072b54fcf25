#include <cmath>

#include "doctest.h"
#include "rcnet/error.hpp"
#include "rcnet/losses.hpp"
#include "rcnet/network.hpp"
#include "rcnet/ops.hpp"
#include "support.hpp"

using namespace rcnet;

namespace {

ModelConfig small_model(std::size_t units = 2)
{
    ModelConfig c;
    c.channels = 8;
    c.units = units;
    c.k = 3;
    c.patch = 7;
    c.radius = 1;
    c.se_reduction = 4;
    c.encoder_depth = 2;
    c.confidence_hidden = 4;
    return c;
}

ViewSet<float> random_views(std::mt19937_64 &rng, std::size_t n, std::size_t h, std::size_t w)
{
    return {testing::uniform(rng, {n, 3, h, w}, 0.0, 0.4), testing::uniform(rng, {n, 3, h, w}, 0.0, 0.4),
            testing::uniform(rng, {n, 3, h, w}, 0.0, 0.4)};
}

void fill(Tensor &t, float v)
{
    for (auto &x : t.mutable_data())
        x = v;
}

bool same(const Tensor &a, const Tensor &b)
{
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

double max_diff(const Tensor &a, const Tensor &b)
{
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, double(std::abs(a.at(i) - b.at(i))));
    return m;
}

} // namespace

TEST_CASE("config validation and record round trip")
{
    ModelConfig c = small_model();
    CHECK_NOTHROW(c.validate());
    CHECK(ModelConfig::from_record(c.to_record()) == c);
    c.e2a = false;
    c.a2e = false;
    CHECK(ModelConfig::from_record(c.to_record()) == c);

    auto bad = small_model();
    bad.se_reduction = 3;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = small_model();
    bad.units = 0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = small_model();
    bad.k = 10;
    CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("parameter layout: one set per unit, head last")
{
    auto cfg = small_model(3);
    auto p = init_params(cfg, 1);
    for (std::size_t t = 1; t <= 3; ++t)
        for (const char *part : {"sa.0.w", "sa.1.w", "se.0.w", "se.1.w", "e2a.w", "cof.0.w", "cof.1.w", "conv.0.w",
                                 "conv.1.w", "wt.0.w", "wt.1.w", "wt.2.w", "wt.3.w"})
            CHECK(p.contains("u" + std::to_string(t) + "." + part));
    CHECK(p.get("u1.sa.0.w").dim(1) == 8);
    CHECK(p.get("u2.sa.0.w").dim(1) == 32);
    CHECK(p.get("u1.conv.0.w").shape() == Shape{8, 3 * 4 * 8, 1, 1});
    CHECK(p.get("u1.wt.0.w").dim(1) == 24);
    CHECK(p.name(p.size() - 2) == "head.w");
    CHECK(!same(p.get("u1.e2a.w"), p.get("u2.e2a.w")));
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p.name(i).ends_with(".b"))
            for (float b : p.at(i).data())
                CHECK(b == 0.0f);

    auto off = cfg;
    off.e2a = false;
    CHECK_FALSE(init_params(off, 1).contains("u1.cof.0.w"));
    off.inter_af = false;
    auto no_af = init_params(off, 1);
    CHECK_FALSE(no_af.contains("u1.conv.0.w"));
    CHECK(no_af.get("u2.sa.0.w").dim(1) == 8);
    auto no_en = cfg;
    no_en.intra_en = false;
    CHECK_FALSE(init_params(no_en, 1).contains("u1.se.0.w"));
}

TEST_CASE("encode contracts")
{
    auto cfg = small_model();
    auto p = init_params(cfg, 2);
    std::mt19937_64 rng(3);
    auto v = testing::uniform(rng, {1, 3, 16, 20});
    auto f = encode(p, cfg, ViewSet<float>{v, v, v});
    CHECK(f[0].shape() == Shape{1, 8, 16, 20});
    CHECK(same(f[0], f[1]));
    CHECK(same(f[1], f[2]));

    auto z = Tensor::zeros({1, 3, 16, 16});
    for (const auto &t : encode(p, cfg, ViewSet<float>{z, z, z}))
        for (float x : t.data())
            CHECK(x == 0.0f);

    auto small = Tensor::zeros({1, 3, 15, 16});
    CHECK_THROWS_AS(encode(p, cfg, ViewSet<float>{small, small, small}), DimensionError);
    CHECK_THROWS_AS(encode(p, cfg, ViewSet<float>{v, v, z}), DimensionError);
}

TEST_CASE("intra-view EN residual form")
{
    auto cfg = small_model(1);
    auto p = init_params(cfg, 4);
    std::mt19937_64 rng(5);
    ViewSet<float> f{testing::randn(rng, {1, 8, 14, 14}), testing::randn(rng, {1, 8, 14, 14}),
                     testing::randn(rng, {1, 8, 14, 14})};
    fill(p.get("u1.sa.1.w"), 0.0f);
    fill(p.get("u1.se.1.w"), 0.0f);

    SUBCASE("saturated attention doubles the input")
    {
        fill(p.get("u1.sa.1.b"), 60.0f);
        fill(p.get("u1.se.1.b"), 60.0f);
        auto out = intra_view_en(p, cfg, 0, f, Tensor());
        for (std::size_t v = 0; v < 3; ++v)
            for (std::size_t i = 0; i < f[v].numel(); ++i)
                CHECK(out[v].at(i) == 2.0f * f[v].at(i));
    }
    SUBCASE("closed attention passes the input through")
    {
        fill(p.get("u1.sa.1.b"), -60.0f);
        fill(p.get("u1.se.1.b"), -60.0f);
        auto out = intra_view_en(p, cfg, 0, f, Tensor());
        for (std::size_t v = 0; v < 3; ++v)
            CHECK(max_diff(out[v], f[v]) <= 1e-12);
    }
    SUBCASE("top-1 routing contract")
    {
        auto cfg2 = small_model(2);
        auto p2 = init_params(cfg2, 4);
        CHECK_THROWS_AS(intra_view_en(p2, cfg2, 1, f, Tensor()), ContractError);
        CHECK_THROWS_AS(intra_view_en(p2, cfg2, 0, f, Tensor::zeros({1, 24, 14, 14})), ContractError);
        CHECK_THROWS_AS(intra_view_en(p2, cfg2, 1, f, Tensor::zeros({1, 16, 14, 14})), DimensionError);
        CHECK_NOTHROW(intra_view_en(p2, cfg2, 1, f, Tensor::zeros({1, 24, 14, 14})));
    }
}

TEST_CASE("E2A and confidence evaluator")
{
    auto cfg = small_model(1);
    auto p = init_params(cfg, 6);
    std::mt19937_64 rng(7);
    auto feat = testing::randn(rng, {1, 8, 14, 14});
    auto stage = e2a_predict(p, 0, feat);
    CHECK(stage.shape() == Shape{1, 3, 14, 14});
    fill(p.get("u1.e2a.w"), 0.0f);
    auto zeroed = e2a_predict(p, 0, feat);
    for (float v : zeroed.data())
        CHECK(v == 0.0f);

    auto conf = confidence_eval(p, 0, testing::randn(rng, {1, 3, 14, 14}, 5.0));
    CHECK(conf.shape() == Shape{1, 1, 14, 14});
    for (float v : conf.data()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
    // constant input gives a constant map away from the zero-padded border
    auto flat = confidence_eval(p, 0, Tensor::full({1, 3, 14, 14}, 0.3f));
    const float centre = flat.at(7 * 14 + 7);
    for (std::size_t y = 2; y < 12; ++y)
        for (std::size_t x = 2; x < 12; ++x)
            CHECK(flat.at(y * 14 + x) == doctest::Approx(centre).epsilon(1e-6));

    auto pooled = pool_per_patch(Tensor::from({1, 1, 2, 2}, {0, 1, 2, 3}), 2);
    for (float v : pooled.data())
        CHECK(v == 1.5f);
}

TEST_CASE("inter-view AF and A2E routing")
{
    auto cfg = small_model(2);
    auto p = init_params(cfg, 8);
    std::mt19937_64 rng(9);
    auto x = testing::randn(rng, {1, 8, 14, 14});
    ViewSet<float> same_views{x, x, x};
    auto stage = testing::uniform(rng, {1, 3, 14, 14});

    auto first = inter_view_af(p, cfg, 0, same_views, stage);
    CHECK(first.top1.defined());
    CHECK(first.top1.shape() == Shape{1, 24, 14, 14});
    for (float v : first.features[1].data())
        CHECK(std::isfinite(v));
    CHECK(same(first.features[0], x));
    CHECK(same(first.features[2], x));
    // the self view's top-1 over a generic map is the map itself
    CHECK(same(slice_channels(first.top1, 8, 8), x));

    auto last = inter_view_af(p, cfg, 1, same_views, stage);
    CHECK_FALSE(last.top1.defined());

    ViewSet<float> parts{testing::randn(rng, {1, 8, 14, 14}), testing::randn(rng, {1, 8, 14, 14}),
                         testing::randn(rng, {1, 8, 14, 14})};
    auto routed = a2e_route(parts);
    CHECK(routed.dim(1) == 24);
    for (std::size_t v = 0; v < 3; ++v)
        CHECK(same(slice_channels(routed, v * 8, 8), parts[v]));
    CHECK_THROWS_AS(a2e_route(ViewSet<float>{parts[0], parts[1], Tensor::zeros({1, 8, 7, 14})}), DimensionError);
}

TEST_CASE("forward shapes, stages and determinism")
{
    std::mt19937_64 rng(10);
    auto views = random_views(rng, 2, 20, 17);
    for (std::size_t units : {1u, 2u, 3u}) {
        auto cfg = small_model(units);
        auto p = init_params(cfg, 11);
        auto a = forward(p, cfg, views), b = forward(p, cfg, views);
        CHECK(a.result.shape() == Shape{2, 3, 20, 17});
        CHECK(a.stages.size() == units);
        CHECK(a.matches.size() == units);
        for (const auto &s : a.stages) {
            CHECK(s.shape() == Shape{2, 3, 20, 17});
            for (float v : s.data())
                CHECK(std::isfinite(v));
        }
        CHECK(same(a.result, b.result));
        for (std::size_t t = 0; t < units; ++t)
            CHECK(same(a.stages[t], b.stages[t]));
    }
}

TEST_CASE("ablation switches all run")
{
    std::mt19937_64 rng(12);
    auto views = random_views(rng, 1, 16, 16);
    for (int mask = 0; mask < 16; ++mask) {
        auto cfg = small_model(2);
        cfg.intra_en = mask & 1;
        cfg.inter_af = mask & 2;
        cfg.e2a = mask & 4;
        cfg.a2e = mask & 8;
        auto p = init_params(cfg, 13);
        auto r = forward(p, cfg, views);
        CHECK(r.result.shape() == Shape{1, 3, 16, 16});
        CHECK(r.matches.size() == (cfg.inter_af ? 2u : 0u));
    }
}

TEST_CASE("swapping auxiliary views leaves a symmetrized network unchanged")
{
    auto cfg = small_model(3);
    auto p = init_params(cfg, 14);
    symmetrize_views(p, cfg);
    std::mt19937_64 rng(15);
    auto v = random_views(rng, 1, 21, 21);
    auto a = forward(p, cfg, v);
    auto b = forward(p, cfg, ViewSet<float>{v[2], v[1], v[0]});
    CHECK(max_diff(a.result, b.result) <= 1e-5);
    for (std::size_t t = 0; t < cfg.units; ++t)
        CHECK(max_diff(a.stages[t], b.stages[t]) <= 1e-5);
}

TEST_CASE("every parameter receives gradient and auxiliary views matter")
{
    auto cfg = small_model(3);
    auto p = init_params(cfg, 16);
    std::mt19937_64 rng(17);
    std::vector<double> grad_mass(p.size(), 0.0);
    for (int batch = 0; batch < 3; ++batch) {
        auto views = random_views(rng, 2, 21, 21);
        auto gt = testing::uniform(rng, {2, 3, 21, 21}, 0.2, 0.9);
        p.zero_grad();
        auto out = forward(p, cfg, views);
        backward(l_total(out.stages, out.result, gt));
        for (std::size_t i = 0; i < p.size(); ++i)
            if (p.at(i).has_grad())
                for (float g : p.at(i).grad())
                    grad_mass[i] += std::abs(g);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
        INFO(p.name(i));
        CHECK(grad_mass[i] > 0.0);
    }

    auto feats = ViewSet<float>{testing::randn(rng, {1, 8, 21, 21}), testing::randn(rng, {1, 8, 21, 21}),
                                testing::randn(rng, {1, 8, 21, 21})};
    for (auto &f : feats)
        f.set_requires_grad(true);
    auto out = forward_features(p, cfg, feats, testing::uniform(rng, {1, 3, 21, 21}, 0.0, 0.3));
    backward(l_total(out.stages, out.result, testing::uniform(rng, {1, 3, 21, 21})));
    for (std::size_t v = 0; v < 3; ++v) {
        double m = 0;
        for (float g : feats[v].grad())
            m += std::abs(g);
        CHECK(m > 0.0);
    }
}

TEST_CASE("earlier-unit parameters change every later stage")
{
    auto cfg = small_model(3);
    auto p = init_params(cfg, 18);
    std::mt19937_64 rng(19);
    auto views = random_views(rng, 1, 21, 21);
    auto base = forward(p, cfg, views);
    for (auto &w : p.get("u1.se.1.b").mutable_data())
        w += 0.5f;
    auto moved = forward(p, cfg, views);
    for (std::size_t t = 0; t < 3; ++t)
        CHECK(max_diff(base.stages[t], moved.stages[t]) > 0.0);
    CHECK(max_diff(base.result, moved.result) > 0.0);
}

TEST_CASE("dropping a stage term: loss changes, E2A gradient of that stage vanishes")
{
    // Without E2A-driven confidence, the stage predictions feed nothing but
    // their own loss term.
    auto cfg = small_model(2);
    cfg.e2a = false;
    auto p = init_params(cfg, 20);
    std::mt19937_64 rng(21);
    auto views = random_views(rng, 1, 21, 21);
    auto gt = testing::uniform(rng, {1, 3, 21, 21}, 0.2, 0.9);
    for (std::size_t t = 0; t < 2; ++t) {
        std::vector<double> weights{1.0, 1.0};
        p.zero_grad();
        auto out = forward(p, cfg, views);
        auto full = l_total(out.stages, out.result, gt, weights);
        backward(full);
        double with_term = 0;
        for (float g : p.get("u" + std::to_string(t + 1) + ".e2a.w").grad())
            with_term += std::abs(g);
        CHECK(with_term > 0.0);

        weights[t] = 0.0;
        p.zero_grad();
        auto out2 = forward(p, cfg, views);
        auto dropped = l_total(out2.stages, out2.result, gt, weights);
        CHECK(dropped.item() != full.item());
        backward(dropped);
        const auto &w = p.get("u" + std::to_string(t + 1) + ".e2a.w");
        double without = 0;
        if (w.has_grad())
            for (float g : w.grad())
                without += std::abs(g);
        CHECK(without == 0.0);
    }
}

TEST_CASE("model save/load round trip")
{
    auto cfg = small_model(2);
    cfg.a2e = false;
    auto p = init_params(cfg, 22);
    auto dir = testing::scratch("network_io");
    save_model(dir / "m.rctn", p, cfg);
    ModelConfig loaded_cfg;
    auto q = load_model(dir / "m.rctn", loaded_cfg);
    CHECK(loaded_cfg == cfg);
    REQUIRE(q.size() == p.size());
    std::mt19937_64 rng(23);
    auto views = random_views(rng, 1, 16, 16);
    CHECK(same(forward(p, cfg, views).result, forward(q, loaded_cfg, views).result));

    auto recs = to_records(p, cfg);
    recs.pop_back();
    CHECK_THROWS_AS(from_records(recs, loaded_cfg), DataError);
    auto bad_shape = to_records(p, cfg);
    bad_shape[1].shape = {1};
    bad_shape[1].data = {0.0f};
    CHECK_THROWS_AS(from_records(bad_shape, loaded_cfg), DataError);
    auto no_header = to_records(p, cfg);
    no_header.erase(no_header.begin());
    CHECK_THROWS_AS(from_records(no_header, loaded_cfg), DataError);
}
