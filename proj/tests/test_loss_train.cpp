#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "biospix/features.hpp"
#include "biospix/loss.hpp"
#include "biospix/synthetic.hpp"
#include "biospix/train.hpp"
#include "oracles.hpp"

using namespace biospix;

namespace {

// Association map putting all mass on the owner channel.
template <typename S>
Tensor<S> owner_delta(const GridSpec& g) {
    auto q = Tensor<S>::zeros({1, 9, g.h, g.w});
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) q.at4(0, 4, y, x) = S(1);
    return q;
}

template <typename S>
Tensor<S> random_q(const GridSpec& g, std::uint64_t seed) {
    Rng rng(seed);
    auto q = Tensor<S>::zeros({1, 9, g.h, g.w});
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) {
            double s = 0;
            for (int k = 0; k < 9; ++k) s += (q.at4(0, k, y, x) = S(0.05 + rng.uniform()));
            for (int k = 0; k < 9; ++k) q.at4(0, k, y, x) = S(double(q.at4(0, k, y, x)) / s);
        }
    return q;
}

// Per-pixel map of the owner cell's center coordinates.
template <typename S>
Tensor<S> center_pos(const GridSpec& g) {
    auto p = Tensor<S>::zeros({1, 2, g.h, g.w});
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) {
            p.at4(0, 0, y, x) = S(g.cell_center_y(g.owner_row(y)));
            p.at4(0, 1, y, x) = S(g.cell_center_x(g.owner_col(x)));
        }
    return p;
}

}  // namespace

TEST_CASE("loss: config validation") {
    LossConfig ok;
    CHECK_NOTHROW(ok.validate());
    auto bad = ok;
    bad.m = -0.1;
    CHECK_THROWS_AS(bad.validate(), ParamError);
    bad = ok;
    bad.s = 0;
    CHECK_THROWS_AS(bad.validate(), ParamError);
    bad = ok;
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), ParamError);
    bad = ok;
    bad.eps_log = 0.0;
    CHECK_THROWS_AS(bad.validate(), ParamError);
    bad = ok;
    bad.lr_decay_factor = 0.0;
    CHECK_THROWS_AS(bad.validate(), ParamError);
    bad = ok;
    bad.batch = 0;
    CHECK_THROWS_AS(bad.validate(), ParamError);
    bad = ok;
    bad.crop = 24;
    CHECK_THROWS_AS(bad.validate(), ParamError);
}

TEST_CASE("loss: learning-rate schedule steps once at the decay boundary") {
    LossConfig cfg;
    CHECK(schedule_lr(cfg, 0) == 8e-5);
    CHECK(schedule_lr(cfg, 7999) == 8e-5);
    CHECK(schedule_lr(cfg, 8000) == 4e-5);
    CHECK(schedule_lr(cfg, 100000) == 4e-5);

    cfg.lr = 1e-3;
    cfg.lr_decay_factor = 0.1;
    cfg.lr_decay_at = 10;
    CHECK(schedule_lr(cfg, 9) == 1e-3);
    CHECK(schedule_lr(cfg, 10) == doctest::Approx(1e-4).epsilon(1e-12));
}

TEST_CASE("loss: perfect owner assignment with one-hot cell targets scores zero") {
    const GridSpec g = init_grid(8, 8, 4);
    auto q = owner_delta<double>(g);
    auto t = Tensor<double>::zeros({1, 3, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) t.at4(0, g.cell_of(y, x) % 3, y, x) = 1.0;
    LossConfig cfg;
    cfg.s = 4;
    auto r = superpixel_loss(q, t, center_pos<double>(g), g, cfg);
    CHECK(std::abs(r.ce) < 1e-13);
    CHECK(std::abs(r.pos) < 1e-13);
    CHECK(std::abs(r.value) < 1e-13);
}

TEST_CASE("loss: per-cell constant distributions reduce the CE part to their mean entropy") {
    const GridSpec g = init_grid(8, 8, 4);
    auto q = owner_delta<double>(g);
    const double p[4] = {0.25, 0.5, 0.9, 0.7};
    auto t = Tensor<double>::zeros({1, 2, 8, 8});
    double want = 0;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            const double pc = p[g.cell_of(y, x)];
            t.at4(0, 0, y, x) = pc;
            t.at4(0, 1, y, x) = 1.0 - pc;
            want += -pc * std::log(pc) - (1.0 - pc) * std::log(1.0 - pc);
        }
    want /= 64.0;
    LossConfig cfg;
    cfg.s = 4;
    auto r = superpixel_loss(q, t, center_pos<double>(g), g, cfg);
    CHECK(r.ce == doctest::Approx(want).epsilon(1e-12));
    CHECK(std::abs(r.pos) < 1e-13);
}

TEST_CASE("loss: uniform targets cost ln(C) under any association map") {
    const GridSpec g = init_grid(8, 8, 4);
    auto t = Tensor<double>::full({1, 3, 8, 8}, 1.0 / 3.0);
    LossConfig cfg;
    cfg.s = 4;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto r = superpixel_loss(random_q<double>(g, seed), t, center_pos<double>(g), g, cfg);
        CHECK(r.ce == doctest::Approx(std::log(3.0)).epsilon(1e-9));
    }
}

TEST_CASE("loss: CE part never beats the target entropy floor") {
    const GridSpec g = init_grid(8, 8, 4);
    LossConfig cfg;
    cfg.s = 4;
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        Rng rng(900 + trial);
        auto t = Tensor<double>::zeros({1, 4, 8, 8});
        double entropy = 0;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                double s = 0;
                for (int c = 0; c < 4; ++c) s += (t.at4(0, c, y, x) = 0.05 + rng.uniform());
                for (int c = 0; c < 4; ++c) {
                    const double v = t.at4(0, c, y, x) / s;
                    t.at4(0, c, y, x) = v;
                    entropy -= v * std::log(v);
                }
            }
        entropy /= 64.0;
        auto r = superpixel_loss(random_q<double>(g, 50 + trial), t, center_pos<double>(g), g, cfg);
        CHECK(r.ce >= entropy - 1e-9);
    }
}

TEST_CASE("loss: position part is invariant to a constant coordinate shift") {
    const GridSpec g = init_grid(16, 16, 4);
    auto q = random_q<double>(g, 7);
    auto t = Tensor<double>::full({1, 2, 16, 16}, 0.5);
    auto pos = coord_features<double>(16, 16);
    auto shifted = pos.clone();
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            shifted.at4(0, 0, y, x) += 100.0;
            shifted.at4(0, 1, y, x) += -40.0;
        }
    LossConfig cfg;
    cfg.s = 4;
    auto a = superpixel_loss(q, t, pos, g, cfg);
    auto b = superpixel_loss(q, t, shifted, g, cfg);
    CHECK(a.pos > 0.0);
    CHECK(b.pos == doctest::Approx(a.pos).epsilon(1e-9));
    CHECK(b.ce == doctest::Approx(a.ce).epsilon(1e-12));
}

TEST_CASE("loss: parts add up and m=0 silences the position term") {
    const GridSpec g = init_grid(8, 8, 4);
    auto q = random_q<double>(g, 17);
    auto t = Tensor<double>::full({1, 3, 8, 8}, 1.0 / 3.0);
    LossConfig cfg;
    cfg.s = 4;
    auto r = superpixel_loss(q, t, coord_features<double>(8, 8), g, cfg);
    CHECK(r.value == doctest::Approx(r.ce + r.pos).epsilon(1e-12));
    cfg.m = 0.0;
    auto r0 = superpixel_loss(q, t, coord_features<double>(8, 8), g, cfg);
    CHECK(r0.pos == 0.0);
}

TEST_CASE("loss: shape contracts") {
    const GridSpec g = init_grid(8, 8, 4);
    auto q = owner_delta<double>(g);
    auto t = Tensor<double>::full({1, 3, 8, 8}, 1.0 / 3.0);
    auto pos = coord_features<double>(8, 8);
    LossConfig cfg;
    cfg.s = 4;
    CHECK_THROWS_AS(superpixel_loss(Tensor<double>::zeros({1, 5, 8, 8}), t, pos, g, cfg), ShapeError);
    CHECK_THROWS_AS(superpixel_loss(q, Tensor<double>::full({1, 3, 8, 4}, 0.5), pos, g, cfg),
                    ShapeError);
    CHECK_THROWS_AS(superpixel_loss(q, t, Tensor<double>::zeros({1, 3, 8, 8}), g, cfg), ShapeError);
}

TEST_CASE("loss: gradient through the full objective matches finite differences") {
    const GridSpec g = init_grid(16, 16, 4);
    Rng rng(23);
    auto q = Tensor<double>::zeros({1, 9, 16, 16});
    for (std::int64_t i = 0; i < q.size(); ++i) q.data()[i] = 0.2 + 0.8 * rng.uniform();
    q.set_requires_grad();
    auto t = Tensor<double>::zeros({1, 4, 16, 16});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            double s = 0;
            for (int c = 0; c < 4; ++c) s += (t.at4(0, c, y, x) = 0.1 + rng.uniform());
            for (int c = 0; c < 4; ++c) t.at4(0, c, y, x) /= s;
        }
    auto pos = coord_features<double>(16, 16);
    LossConfig cfg;
    cfg.s = 4;
    CHECK_NOTHROW(oracle::check_gradients(
        {q}, [&] { return superpixel_loss(q, t, pos, g, cfg).total; }, 1e-3, 40));
}

namespace {

std::vector<SamplePair> tiny_dataset(int count, std::uint64_t seed) {
    SynthConfig sc;
    sc.h = 32;
    sc.w = 32;
    sc.count = count;
    std::vector<SamplePair> out;
    for (int i = 0; i < count; ++i) {
        sc.seed = mix_seed(seed, std::uint64_t(i));
        SynthScene scene = make_scene(sc);
        out.push_back({scene.image, scene.labels});
    }
    return out;
}

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.loss.crop = 32;
    cfg.loss.batch = 1;
    cfg.train.iterations = 3;
    cfg.train.checkpoint_every = 2;
    cfg.validate();
    return cfg;
}

}  // namespace

TEST_CASE("train: loop is deterministic and writes its artifacts") {
    auto data = tiny_dataset(2, 5);
    RunConfig cfg = tiny_config();

    oracle::TmpDir t1, t2;
    AssocNet<float> n1(cfg.net), n2(cfg.net);
    n1.init_weights(cfg.seed);
    n2.init_weights(cfg.seed);
    TrainResult r1 = train_loop(n1, data, cfg, t1.path);
    TrainResult r2 = train_loop(n2, data, cfg, t2.path);

    REQUIRE(r1.total.size() == 3);
    REQUIRE(r2.total.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(r1.total[i] == r2.total[i]);
        CHECK(r1.ce[i] == r2.ce[i]);
        CHECK(r1.pos[i] == r2.pos[i]);
        CHECK(std::isfinite(r1.total[i]));
        // total is reduced in 32-bit, the parts are summed in 64-bit
        CHECK(r1.total[i] == doctest::Approx(r1.ce[i] + r1.pos[i]).epsilon(1e-5));
    }

    namespace fs = std::filesystem;
    CHECK(fs::exists(t1 / "loss.csv"));
    CHECK(fs::exists(t1 / "ckpt_000002.bspx"));
    CHECK(fs::exists(t1 / "checkpoint.bspx"));

    // the two runs end in bit-identical parameters
    std::uint64_t s1 = 0, s2 = 0;
    auto c1 = load_checkpoint(t1 / "checkpoint.bspx", &s1);
    auto c2 = load_checkpoint(t2 / "checkpoint.bspx", &s2);
    CHECK(s1 == s2);
    auto e1 = c1.state(), e2 = c2.state();
    REQUIRE(e1.size() == e2.size());
    for (size_t i = 0; i < e1.size(); ++i) {
        if (!e1[i].is_param()) continue;
        for (std::int64_t j = 0; j < e1[i].t.size(); ++j) CHECK(e1[i].t[j] == e2[i].t[j]);
    }
}

TEST_CASE("train: input validation") {
    RunConfig cfg = tiny_config();
    AssocNet<float> net(cfg.net);
    net.init_weights(1);
    CHECK_THROWS_AS(train_loop(net, {}, cfg, ""), UsageError);

    auto data = tiny_dataset(1, 9);
    cfg.loss.crop = 48;
    CHECK_THROWS_AS(train_loop(net, data, cfg, ""), ParamError);
}

TEST_CASE("train: a poisoned sample aborts with the iteration index") {
    auto data = tiny_dataset(1, 13);
    data[0].image.at4(0, 0, 5, 5) = std::numeric_limits<float>::quiet_NaN();
    RunConfig cfg = tiny_config();
    AssocNet<float> net(cfg.net);
    net.init_weights(cfg.seed);
    try {
        train_loop(net, data, cfg, "");
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("iteration 0") != std::string::npos);
    }
}
