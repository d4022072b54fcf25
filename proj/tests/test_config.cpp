#include <fstream>

#include "doctest.h"
#include "rcnet/config.hpp"
#include "rcnet/error.hpp"
#include "support.hpp"

using namespace rcnet;

TEST_CASE("overrides parse typed values")
{
    RunConfig c;
    c.apply_override("model.channels=24");
    c.apply_override("train.lr_initial=0.001");
    c.apply_override("synth.noise=false");
    c.apply_override("train.seed=18446744073709551615");
    CHECK(c.model.channels == 24);
    CHECK(c.train.lr_initial == 0.001);
    CHECK_FALSE(c.synth.noise);
    CHECK(c.train.seed == 18446744073709551615ULL);

    CHECK_THROWS_AS(c.apply_override("model.nope=1"), UsageError);
    CHECK_THROWS_AS(c.apply_override("model.channels=-3"), UsageError);
    CHECK_THROWS_AS(c.apply_override("model.channels=1.5"), UsageError);
    CHECK_THROWS_AS(c.apply_override("model.channels=abc"), UsageError);
    CHECK_THROWS_AS(c.apply_override("model.channels"), UsageError);
    CHECK_THROWS_AS(c.apply_override("synth.noise=3"), UsageError);
}

TEST_CASE("dump and load round trip")
{
    RunConfig a;
    a.set("model.units", "2");
    a.set("train.flip_prob", "0.25");
    a.set("synth.toy_scenes", "7");
    a.set("model.a2e", "false");
    auto dir = testing::scratch("config");
    a.write_snapshot(dir / "c.json");
    RunConfig b;
    b.load_file(dir / "c.json");
    CHECK(b.dump() == a.dump());
    CHECK(b.model == a.model);
    CHECK(RunConfig::keys().size() >= 30);

    std::ofstream(dir / "partial.json") << "{\"model.k\": 2}\n\n{\"train.total_iters\": 5}\n";
    RunConfig p;
    p.load_file(dir / "partial.json");
    CHECK(p.model.k == 2);
    CHECK(p.train.total_iters == 5);
    CHECK(p.model.channels == 16);

    std::ofstream(dir / "bad.json") << "{\"model.k\": }\n";
    CHECK_THROWS_AS(p.load_file(dir / "bad.json"), UsageError);
    std::ofstream(dir / "unknown.json") << "{\"model.q\": 1}\n";
    CHECK_THROWS_AS(p.load_file(dir / "unknown.json"), UsageError);
    CHECK_THROWS_AS(p.load_file(dir / "missing.json"), UsageError);
}
