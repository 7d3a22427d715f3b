// Exit gate: every release criterion in one binary, one line of output each.
// Tolerances are pinned here and nowhere else; a change to any of them is a
// release decision, not a refactor.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "biospix/bal.hpp"
#include "biospix/csf.hpp"
#include "biospix/dataio.hpp"
#include "biospix/distance.hpp"
#include "biospix/features.hpp"
#include "biospix/loss.hpp"
#include "biospix/metrics.hpp"
#include "biospix/net.hpp"
#include "biospix/ops.hpp"
#include "biospix/runconfig.hpp"
#include "biospix/spix.hpp"
#include "biospix/synthetic.hpp"
#include "biospix/train.hpp"
#include "oracles.hpp"

using namespace biospix;

namespace {

// Desk-scale learning rate for the overfit and ablation gates. The reference
// protocol's 8e-5 is tuned for long schedules on large corpora; these short
// budgets need a faster rate to converge inside the stated wall-clock limits.
constexpr double kOverfitLr = 3e-4;
constexpr double kAblationLr = 3e-4;
constexpr std::uint64_t kOverfitSceneSeed = 424242;
constexpr std::uint64_t kAblationCorpusSeed = 31337;

int g_failures = 0;

void criterion(int idx, const char* name, const std::function<void(std::string&)>& body) {
    std::string fail;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(fail);
    } catch (const std::exception& e) {
        fail = std::string("exception: ") + e.what();
    } catch (const oracle::FdFailure& f) {
        fail = "gradient check: " + f.what;
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (fail.empty()) {
        std::printf("[PASS] %2d. %s (%.2f s)\n", idx, name, sec);
    } else {
        std::printf("[FAIL] %2d. %s (%.2f s): %s\n", idx, name, sec, fail.c_str());
        ++g_failures;
    }
    std::fflush(stdout);
}

void expect(std::string& fail, bool ok, const std::string& what) {
    if (!ok && fail.empty()) fail = what;
}

void expect_close(std::string& fail, double got, double want, double tol, const std::string& what) {
    if (std::abs(got - want) > tol && fail.empty()) {
        std::ostringstream ss;
        ss << what << ": got " << got << ", want " << want << " (tol " << tol << ")";
        fail = ss.str();
    }
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int run_cli(const std::string& dir, const std::string& args) {
    const std::string cmd = "cd '" + dir + "' && '" + BIOSPIX_CLI_PATH + "' " + args +
                            " >/dev/null 2>.stderr.txt";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), size_t(a.size()) * sizeof(float)) == 0;
}

// ---- criterion bodies -------------------------------------------------------

void c1_csf(std::string& fail) {
    expect_close(fail, csf_eval(0.0), 0.4992, 1e-9, "H(0)");
    const double peak = csf_peak(60.0);
    expect(fail, peak >= 5.0 && peak <= 9.0,
           "band-pass peak " + std::to_string(peak) + " outside [5, 9]");
    // independent 64-bit evaluation of the sensitivity law
    for (double f : {0.0, 0.5, 3.0, 6.53, 8.0, 17.0, 60.0}) {
        const double ref = 2.6 * (0.192 + 0.114 * f) * std::exp(-std::pow(0.114 * f, 1.1));
        expect_close(fail, csf_eval(f), ref, 1e-12, "H(" + std::to_string(f) + ")");
    }
}

void c2_bal(std::string& fail) {
    BalConfig cfg;  // beta 1.2, alpha 0.5, delta_mu 10, clamp [0.3, 1.2]
    expect_close(fail, sigma_of_distance(0.0, cfg), 1.2, 1e-9, "sigma(0)");
    expect_close(fail, sigma_of_distance(4.0, cfg), 0.3, 1e-9, "sigma(4)");

    // normalized target vectors against a direct evaluate-and-normalize oracle
    for (double sigma : {0.3, 0.5, 1.2}) {
        const std::pair<int, int> windows[] = {{-4, 4}, {0, 4}, {-4, 0}};
        for (auto [lo, hi] : windows) {
            std::vector<double> ref;
            double norm = 0;
            for (int j = lo; j <= hi; ++j) norm += std::exp(-0.5 * j * j / (sigma * sigma));
            for (int j = lo; j <= hi; ++j) ref.push_back(std::exp(-0.5 * j * j / (sigma * sigma)) / norm);
            const auto got = gauss_weights(sigma, lo, hi);
            for (size_t i = 0; i < ref.size(); ++i)
                expect_close(fail, got[i], ref[i], 1e-9,
                             "gauss sigma=" + std::to_string(sigma) + " entry " + std::to_string(i));
        }
    }

    // the same vectors through the encoder on an adjacent-category pair
    {
        LabelMap m(1, 2);
        m.at(0, 1) = 1;
        auto t = bal_encode<double>(m, distance_field(m, 4), cfg);
        const auto ref0 = gauss_weights(1.2, 0, 4);     // category 0 at its truncated edge
        const auto ref1 = gauss_weights(1.2, -4, 4);    // category 1 centered at channel 10
        for (int j = 0; j <= 4; ++j)
            expect_close(fail, double(t.y.at4(0, j, 0, 0)), ref0[size_t(j)], 1e-9,
                         "encoded cat0 channel " + std::to_string(j));
        for (int j = -4; j <= 4; ++j)
            expect_close(fail, double(t.y.at4(0, 10 + j, 0, 1)), ref1[size_t(j + 4)], 1e-9,
                         "encoded cat1 channel " + std::to_string(10 + j));
    }

    // inter-class CE: one shared value across 20 random category pairs
    Rng rng(2024);
    std::vector<double> ces;
    for (int trial = 0; trial < 20; ++trial) {
        const int ca = int(rng.uniform_int(cfg.c));
        int cb = int(rng.uniform_int(cfg.c));
        while (cb == ca) cb = int(rng.uniform_int(cfg.c));
        LabelMap m(1, 2);
        m.at(0, 0) = ca;
        m.at(0, 1) = cb;
        auto t = bal_encode<double>(m, distance_field(m, 4), cfg);
        double ce = 0;
        for (int k = 0; k < t.k_stored; ++k) {
            const double a = t.y.at4(0, k, 0, 0), b = t.y.at4(0, k, 0, 1);
            ce -= a * std::log(std::max(b, cfg.eps_log));
        }
        ces.push_back(ce);
    }
    for (double ce : ces)
        expect_close(fail, ce, ces.front(), 1e-9, "pairwise CE equality");
}

void c3_distance_table(std::string& fail) {
    BalConfig cfg;
    auto rows = bal_distance_analysis(cfg, {10.0, 15.0, 20.0}, {0.0});
    expect(fail, rows.size() == 3, "expected 3 mu-gap rows");
    for (const auto& r : rows)
        expect_close(fail, r.ce, rows.front().ce, 1e-9,
                     "CE at mu_gap " + std::to_string(r.mu_gap));

    std::vector<double> gaps;
    for (double g = 0.05; g <= 0.8 + 1e-12; g += 0.05) gaps.push_back(g);
    auto sweep = bal_distance_analysis(cfg, {0.0}, gaps);
    std::vector<double> xs, ys;
    for (const auto& r : sweep) {
        xs.push_back(r.sigma_gap);
        ys.push_back(r.ce);
    }
    const double r2 = oracle::r_squared_linear(xs, ys);
    expect(fail, r2 >= 0.95, "CE-vs-sigma-gap linear fit R^2 " + std::to_string(r2) + " < 0.95");
}

void c4_autograd(std::string& fail) {
    using T = Tensor<double>;
    Rng rng(41);
    auto probe_sum = [](const T& t, Rng& r) {
        T p = T::zeros(t.shape());
        oracle::fill_uniform(p, r, -1.0, 1.0);
        return p;
    };

    try {
        {  // elementwise add/sub/mul/scale/sum_all
            T a = T::zeros({1, 2, 3, 3}), b = T::zeros({1, 2, 3, 3});
            oracle::fill_uniform(a, rng);
            oracle::fill_uniform(b, rng);
            oracle::check_gradients({a, b}, [&] {
                return sum_all(mul(add(a, b), scale(sub(a, b), 1.7)));
            });
        }
        {  // leaky_relu away from the kink
            T a = T::zeros({1, 2, 4, 4});
            for (std::int64_t i = 0; i < a.size(); ++i)
                a.data()[i] = (i % 2 ? 1.0 : -1.0) * (0.1 + rng.uniform());
            oracle::check_gradients({a}, [&] { return sum_all(leaky_relu(a, 0.1)); });
        }
        {  // log_floor above the floor
            T a = T::zeros({1, 1, 4, 4});
            oracle::fill_uniform(a, rng, 0.2, 2.0);
            oracle::check_gradients({a}, [&] { return sum_all(log_floor(a, 1e-12)); });
        }
        {  // softmax_channels through a fixed probe
            T a = T::zeros({1, 5, 3, 3});
            oracle::fill_uniform(a, rng);
            T p = probe_sum(a, rng);
            oracle::check_gradients({a}, [&] { return sum_all(mul(softmax_channels(a), p)); });
        }
        {  // concat_channels
            T a = T::zeros({1, 2, 3, 3}), b = T::zeros({1, 3, 3, 3});
            oracle::fill_uniform(a, rng);
            oracle::fill_uniform(b, rng);
            T p = T::zeros({1, 5, 3, 3});
            oracle::fill_uniform(p, rng);
            oracle::check_gradients({a, b}, [&] { return sum_all(mul(concat_channels(a, b), p)); });
        }
        {  // channel_sum + channel_l2norm
            T a = T::zeros({1, 3, 4, 4});
            oracle::fill_uniform(a, rng, 0.2, 1.0);
            oracle::check_gradients({a}, [&] { return sum_all(channel_sum(a)); });
            oracle::check_gradients({a}, [&] { return sum_all(channel_l2norm(a)); });
        }
        {  // conv2d, strided and padded, with bias
            T x = T::zeros({2, 2, 5, 5}), w = T::zeros({3, 2, 3, 3}), b = T::zeros({3});
            oracle::fill_uniform(x, rng);
            oracle::fill_uniform(w, rng);
            oracle::fill_uniform(b, rng);
            oracle::check_gradients({x, w, b}, [&] { return sum_all(conv2d(x, w, b, 1, 1)); });
            oracle::check_gradients({x, w, b}, [&] { return sum_all(conv2d(x, w, b, 2, 1)); });
        }
        {  // conv_transpose2d
            T x = T::zeros({1, 3, 4, 4}), w = T::zeros({3, 2, 4, 4}), b = T::zeros({2});
            oracle::fill_uniform(x, rng);
            oracle::fill_uniform(w, rng);
            oracle::fill_uniform(b, rng);
            oracle::check_gradients({x, w, b},
                                    [&] { return sum_all(conv_transpose2d(x, w, 2, 1, b)); });
            T w2 = T::zeros({3, 2, 2, 2});
            oracle::fill_uniform(w2, rng);
            oracle::check_gradients({x, w2}, [&] { return sum_all(conv_transpose2d(x, w2, 2, 0)); });
        }
        {  // batch_norm2d, training and eval paths
            T x = T::zeros({2, 2, 4, 4}), g = T::zeros({2}), b = T::zeros({2});
            oracle::fill_uniform(x, rng);
            oracle::fill_uniform(g, rng, 0.5, 1.5);
            oracle::fill_uniform(b, rng);
            T p = T::zeros({2, 2, 4, 4});
            oracle::fill_uniform(p, rng);
            oracle::check_gradients({x, g, b}, [&] {
                BatchNormState<double> fresh;
                return sum_all(mul(batch_norm2d(x, g, b, fresh, 1e-5, true), p));
            });
            BatchNormState<double> ev;
            ev.running_mean = ArrayX<double>::Constant(2, 0.2);
            ev.running_var = ArrayX<double>::Constant(2, 0.8);
            oracle::check_gradients({x, g, b}, [&] {
                return sum_all(mul(batch_norm2d(x, g, b, ev, 1e-5, false), p));
            });
        }
        {  // bilinear upsample
            T x = T::zeros({1, 2, 3, 4});
            oracle::fill_uniform(x, rng);
            T p = T::zeros({1, 2, 6, 8});
            oracle::fill_uniform(p, rng);
            oracle::check_gradients({x}, [&] { return sum_all(mul(upsample_bilinear2x(x), p)); });
        }
        {  // association pipeline: normalize, aggregate, reconstruct
            const GridSpec grid = init_grid(8, 8, 4);
            T q = T::zeros({1, 9, 8, 8}), f = T::zeros({1, 2, 8, 8});
            oracle::fill_uniform(q, rng, 0.1, 1.0);
            oracle::fill_uniform(f, rng);
            T p = T::zeros({1, 2, 8, 8});
            oracle::fill_uniform(p, rng);
            oracle::check_gradients({q, f}, [&] {
                T qn = normalize_border(q, grid);
                return sum_all(mul(spix_reconstruct(qn, spix_aggregate(qn, f, grid), grid), p));
            });
        }

        // end-to-end: scalar objective through the full network in train mode.
        // 32x32 is the smallest input whose bottleneck map still has the
        // population batch-norm statistics need.
        {
            AssocNet<double> net;
            net.init_weights(7);
            net.set_training(true);
            T x = T::zeros({1, 5, 32, 32});
            Rng xr(71);
            oracle::fill_uniform(x, xr, 0.0, 1.0);
            LabelMap labels(32, 32);
            for (int y = 0; y < 32; ++y)
                for (int xx = 0; xx < 32; ++xx) labels.at(y, xx) = (y / 16) * 2 + (xx / 16);
            BalConfig bcfg;
            auto tgt = bal_encode<double>(labels, distance_field(labels, 4), bcfg);
            const GridSpec grid = init_grid(32, 32, 8);
            T pos = coord_features<double>(32, 32);
            LossConfig lcfg;
            lcfg.s = 8;
            oracle::check_gradients(
                net.params(),
                [&] { return superpixel_loss(net.forward(x).assoc, tgt.y, pos, grid, lcfg).total; },
                1e-3, 4, 99);
        }
    } catch (const oracle::FdFailure& f) {
        fail = "gradient check: " + f.what;
    }
}

void c5_gate_contract(std::string& fail) {
    AssocNet<float> net;
    net.init_weights(12);
    net.set_training(false);
    auto x = Tensor<float>::zeros({1, 5, 16, 16});
    Rng rng(13);
    for (std::int64_t i = 0; i < x.size(); ++i) x.data()[i] = float(rng.uniform());

    net.mode = GateMode::ones;
    auto a = net.forward(x);
    expect(fail, bit_equal(a.fused_full, a.dec_full), "gate=ones: full-scale fusion != plain decoder");
    expect(fail, bit_equal(a.fused_half, a.dec_half), "gate=ones: half-scale fusion != plain decoder");

    net.mode = GateMode::zeros;
    auto z = net.forward(x);
    expect(fail, bit_equal(z.fused_full, z.skip_full), "gate=zeros: M1 != L1");
    expect(fail, bit_equal(z.fused_half, z.skip_half), "gate=zeros: M2 != L2");
}

void c6_metric_oracles(std::string& fail) {
    // hand cases
    LabelMap gt(4, 4), sp(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            gt.at(y, x) = x / 2;
            sp.at(y, x) = y / 2;
        }
    expect_close(fail, asa(sp, gt), 0.5, 1e-9, "4x4 orthogonal-halves ASA");
    LabelMap square(4, 4, 0);
    expect_close(fail, compactness(square), 3.14159265358979323846 / 4.0, 1e-9, "square CO");

    Rng rng(1234);
    for (int trial = 0; trial < 200 && fail.empty(); ++trial) {
        const int h = 1 + int(rng.uniform_int(16));
        const int w = 1 + int(rng.uniform_int(16));
        auto s = oracle::random_labels(rng, h, w, 1 + int(rng.uniform_int(5)));
        auto g = oracle::random_labels(rng, h, w, 1 + int(rng.uniform_int(4)));
        const int tol = int(rng.uniform_int(4));
        expect_close(fail, asa(s, g), oracle::asa_ref(s, g), 1e-12,
                     "ASA trial " + std::to_string(trial));
        auto rp = boundary_recall_precision(s, g, tol);
        expect_close(fail, rp.first, oracle::boundary_cover_ref(g, s, tol), 1e-12,
                     "BR trial " + std::to_string(trial));
        expect_close(fail, rp.second, oracle::boundary_cover_ref(s, g, tol), 1e-12,
                     "BP trial " + std::to_string(trial));
        expect_close(fail, compactness(s), oracle::compactness_ref(s), 1e-12,
                     "CO trial " + std::to_string(trial));
    }
}

void c7_overfit(std::string& fail) {
    SynthConfig sc;
    sc.seed = kOverfitSceneSeed;  // one 64x64 scene
    SynthScene scene = make_scene(sc);

    RunConfig cfg;
    cfg.loss.crop = 64;
    cfg.loss.batch = 1;
    cfg.loss.lr = kOverfitLr;
    cfg.train.iterations = 300;
    cfg.validate();

    AssocNet<float> net(cfg.net);
    net.init_weights(cfg.seed);
    TrainResult res = train_loop(net, {{scene.image, scene.labels}}, cfg, "");

    expect(fail, res.total.back() < 0.5 * res.total.front(),
           "loss " + std::to_string(res.total.back()) + " not below half of initial " +
               std::to_string(res.total.front()));

    net.set_training(false);
    auto q = net.forward(input_features(scene.image, cfg.net.in_channels)).assoc;
    auto sp = decode_hard(q, init_grid(64, 64, cfg.loss.s));
    auto m = evaluate_superpixels(sp, scene.labels, 2);
    expect(fail, m.asa >= 0.95, "ASA " + std::to_string(m.asa) + " < 0.95");
    expect(fail, m.br >= 0.90, "BR(2) " + std::to_string(m.br) + " < 0.90");
}

void c8_ablation(std::string& fail) {
    SynthConfig sc;
    std::vector<SamplePair> corpus;
    std::vector<SynthScene> scenes;
    for (int i = 0; i < 20; ++i) {
        sc.seed = mix_seed(kAblationCorpusSeed, std::uint64_t(i));
        scenes.push_back(make_scene(sc));
        corpus.push_back({scenes.back().image, scenes.back().labels});
    }

    auto mean_asa = [&](GateMode gate) {
        RunConfig cfg;
        cfg.loss.crop = 64;
        cfg.loss.batch = 1;
        cfg.loss.lr = kAblationLr;
        cfg.train.iterations = 2000;
        cfg.train.gate = gate;
        cfg.validate();
        AssocNet<float> net(cfg.net);
        net.init_weights(cfg.seed);
        train_loop(net, corpus, cfg, "");
        net.set_training(false);
        double acc = 0;
        for (const auto& s : scenes) {
            auto q = net.forward(input_features(s.image, cfg.net.in_channels)).assoc;
            auto sp = decode_hard(q, init_grid(64, 64, cfg.loss.s));
            acc += asa(sp.as_labels(), s.labels);
        }
        return acc / double(scenes.size());
    };

    const double with_gate = mean_asa(GateMode::learned);
    const double without = mean_asa(GateMode::ones);
    std::printf("       ablation: gated mean ASA %.4f vs plain-decoder %.4f\n", with_gate, without);
    expect(fail, with_gate >= without - 0.002,
           "gated ASA " + std::to_string(with_gate) + " below baseline " + std::to_string(without) +
               " - 0.002");
}

void c9_determinism(std::string& fail) {
    oracle::TmpDir tmp;
    const std::string base =
        " --set synth.h=32 --set synth.w=32 --set synth.count=2"
        " --set loss.crop=32 --set loss.batch=1 --set train.iterations=3";

    expect(fail, run_cli(tmp.path, "synth --out data" + base) == 0, "synth failed");
    expect(fail, run_cli(tmp.path, "train --manifest data/manifest.csv --out r1" + base) == 0,
           "train run 1 failed");
    expect(fail, run_cli(tmp.path, "train --manifest data/manifest.csv --out r2" + base) == 0,
           "train run 2 failed");
    if (!fail.empty()) return;
    expect(fail, slurp(tmp / "r1/loss.csv") == slurp(tmp / "r2/loss.csv"),
           "loss CSVs differ between identical runs");
    expect(fail,
           slurp(tmp / "r1/checkpoint.bspx") == slurp(tmp / "r2/checkpoint.bspx"),
           "checkpoints differ between identical runs");

    const std::string infer =
        "infer --checkpoint r1/checkpoint.bspx --image data/images/scene_0000.png --out ";
    expect(fail, run_cli(tmp.path, infer + "p1" + base) == 0, "infer run 1 failed");
    expect(fail, run_cli(tmp.path, infer + "p2" + base) == 0, "infer run 2 failed");
    if (!fail.empty()) return;
    expect(fail,
           slurp(tmp / "p1/scene_0000_spix.png") == slurp(tmp / "p2/scene_0000_spix.png") &&
               slurp(tmp / "p1/scene_0000_spix.json") == slurp(tmp / "p2/scene_0000_spix.json"),
           "infer reruns are not bit-identical");

    {
        std::ofstream f(tmp / "eval.csv");
        f << "p1/scene_0000_spix.png,data/labels/scene_0000.png,test\n";
    }
    expect(fail, run_cli(tmp.path, "eval --manifest eval.csv --out e1" + base) == 0, "eval 1 failed");
    expect(fail, run_cli(tmp.path, "eval --manifest eval.csv --out e2" + base) == 0, "eval 2 failed");
    if (!fail.empty()) return;
    expect(fail, slurp(tmp / "e1/report.csv") == slurp(tmp / "e2/report.csv"),
           "eval reruns are not bit-identical");
}

void c10_decode_validity(std::string& fail) {
    Rng rng(777);
    for (int trial = 0; trial < 100 && fail.empty(); ++trial) {
        const int s = std::vector<int>{4, 8, 16}[size_t(rng.uniform_int(3))];
        const int h = s + int(rng.uniform_int(3 * s));
        const int w = s + int(rng.uniform_int(3 * s));
        auto q = Tensor<float>::zeros({1, 9, h, w});
        for (std::int64_t i = 0; i < q.size(); ++i) q.data()[i] = float(rng.uniform());
        auto sp = decode_hard(q, init_grid(h, w, s));
        std::string why;
        if (!oracle::segmentation_valid(sp, &why)) {
            fail = "trial " + std::to_string(trial) + " (" + std::to_string(h) + "x" +
                   std::to_string(w) + " s=" + std::to_string(s) + "): " + why;
        }
    }
}

}  // namespace

int main() {
    std::printf("release gate\n");
    criterion(1, "contrast sensitivity reproduction", c1_csf);
    criterion(2, "boundary-aware soft labels", c2_bal);
    criterion(3, "cross-entropy distance table", c3_distance_table);
    criterion(4, "autograd finite differences", c4_autograd);
    criterion(5, "gate forcing bit-exactness", c5_gate_contract);
    criterion(6, "metric oracle agreement", c6_metric_oracles);
    criterion(7, "single-scene overfit", c7_overfit);
    criterion(8, "gated fusion non-inferiority", c8_ablation);
    criterion(9, "cross-process determinism", c9_determinism);
    criterion(10, "hard decode validity", c10_decode_validity);
    if (g_failures) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
