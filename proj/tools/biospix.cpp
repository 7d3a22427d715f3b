// Single command-line front end for the whole engine.
//
// Exit codes: 0 success; 1 usage/config problems; 2 data problems (unreadable
// or mismatched inputs, impossible geometry, label overflow); 3 numeric
// failures. Every error prints one machine-parseable stderr record.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "biospix/bal.hpp"
#include "biospix/csf.hpp"
#include "biospix/dataio.hpp"
#include "biospix/distance.hpp"
#include "biospix/features.hpp"
#include "biospix/metrics.hpp"
#include "biospix/net.hpp"
#include "biospix/pngio.hpp"
#include "biospix/runconfig.hpp"
#include "biospix/slic.hpp"
#include "biospix/spix.hpp"
#include "biospix/synthetic.hpp"
#include "biospix/train.hpp"

namespace fs = std::filesystem;
using namespace biospix;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config;
    std::string out = "out";
    std::vector<std::string> sets;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

void add_common(CLI::App* sub, CommonArgs& c) {
    sub->add_option("--config", c.config, "JSON run configuration");
    sub->add_option("--out", c.out, "output directory")->capture_default_str();
    sub->add_option("--set", c.sets, "override, e.g. --set loss.lr=1e-4")->take_all();
    sub->add_option("--seed", c.seed, "master seed override")
        ->each([&c](const std::string&) { c.seed_given = true; });
}

RunConfig resolve_config(const CommonArgs& c) {
    RunConfig cfg;
    if (!c.config.empty()) cfg = load_runconfig(c.config);
    for (const auto& s : c.sets) apply_override(cfg, s);
    if (c.seed_given) cfg.seed = c.seed;
    cfg.validate();
    return cfg;
}

// Every subcommand leaves the exact configuration it ran with beside its outputs.
void snapshot(const CommonArgs& c, const RunConfig& cfg) {
    fs::create_directories(c.out);
    save_runconfig(c.out + "/resolved_config.json", cfg);
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("hash: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
        if (!in) break;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char b[19];
    std::snprintf(b, sizeof(b), "%016llx", static_cast<unsigned long long>(v));
    return b;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed for " + path);
}

// ---- subcommand bodies ------------------------------------------------------

void run_synth(const CommonArgs& c) {
    RunConfig cfg = resolve_config(c);
    snapshot(c, cfg);
    fs::create_directories(c.out + "/images");
    fs::create_directories(c.out + "/labels");
    std::vector<ManifestRow> rows;
    for (int i = 0; i < cfg.synth.count; ++i) {
        SynthConfig sc = cfg.synth;
        sc.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(i));
        SynthScene scene = make_scene(sc);
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04d.png", i);
        save_image_rgb(c.out + "/images/" + name, scene.image);
        save_label_png(c.out + "/labels/" + name, scene.labels);
        rows.push_back({std::string("images/") + name, std::string("labels/") + name, "train"});
    }
    save_manifest(c.out + "/manifest.csv", rows);
    std::cout << "scenes=" << cfg.synth.count << " out=" << c.out << "\n";
}

void run_train(const CommonArgs& c, const std::string& manifest) {
    RunConfig cfg = resolve_config(c);
    snapshot(c, cfg);
    std::vector<SamplePair> data;
    for (const auto& r : load_manifest(manifest)) {
        if (r.split != "train") continue;
        data.push_back(load_pair(resolve_against(manifest, r.image),
                                 resolve_against(manifest, r.labels), cfg.bal.c));
    }
    if (data.empty()) throw UsageError("train: manifest has no train rows: " + manifest);

    AssocNet<float> net(cfg.net);
    net.init_weights(cfg.seed);
    TrainResult res = train_loop(net, data, cfg, c.out);
    std::cout << "iterations=" << res.total.size() << " first_loss=" << res.total.front()
              << " last_loss=" << res.total.back() << " out=" << c.out << "\n";
}

int pick_interval(const RunConfig& cfg, int h, int w, int spix_count) {
    if (spix_count > 0) {
        const double s = std::sqrt(static_cast<double>(h) * w / spix_count);
        return std::clamp(static_cast<int>(std::lround(s)), 1, std::min(h, w));
    }
    return cfg.loss.s;
}

void run_infer(const CommonArgs& c, const std::string& ckpt, const std::vector<std::string>& images,
               int spix_count) {
    RunConfig cfg = resolve_config(c);
    std::uint64_t ckpt_seed = 0;
    AssocNet<float> net = load_checkpoint(ckpt, &ckpt_seed);
    cfg.net = net.cfg;  // the checkpoint defines the architecture
    snapshot(c, cfg);
    net.set_training(false);
    net.mode = cfg.train.gate;

    for (const auto& path : images) {
        Tensor<float> img = load_image_rgb(path);
        const int h = img.dim(2), w = img.dim(3);
        Tensor<float> q = net.forward(input_features(img, net.cfg.in_channels)).assoc;
        const int s = pick_interval(cfg, h, w, spix_count);
        SuperpixelMap sp = decode_hard(q, init_grid(h, w, s));

        const std::string stem = c.out + "/" + stem_of(path);
        save_label_png(stem + "_spix.png", sp);
        json side = {{"image", path},
                     {"source_fnv1a", hex64(fnv1a_file(path))},
                     {"checkpoint", ckpt},
                     {"checkpoint_seed", ckpt_seed},
                     {"h", h},
                     {"w", w},
                     {"interval", s},
                     {"gate", gate_mode_name(net.mode)},
                     {"superpixels", sp.count}};
        write_json(stem + "_spix.json", side);
        std::cout << "image=" << path << " superpixels=" << sp.count << " interval=" << s
                  << " out=" << stem + "_spix.png" << "\n";
    }
}

void run_eval(const CommonArgs& c, const std::string& manifest) {
    RunConfig cfg = resolve_config(c);
    snapshot(c, cfg);
    const auto rows = load_manifest(manifest);
    if (rows.empty()) throw UsageError("eval: empty manifest " + manifest);

    std::ofstream report(c.out + "/report.csv");
    if (!report) throw IoError("eval: cannot write " + c.out + "/report.csv");
    report << "pred,gt,asa,br,bp,co,superpixels,tol\n";
    char line[512];
    double ma = 0, mr = 0, mp = 0, mc = 0;
    for (const auto& r : rows) {
        LabelMap pred = load_label_png(resolve_against(manifest, r.image));
        LabelMap gt = load_label_png(resolve_against(manifest, r.labels));
        SuperpixelMap sp;
        sp.h = pred.h;
        sp.w = pred.w;
        sp.v = pred.v;
        sp.count = pred.max_label() + 1;
        MetricsReport m = evaluate_superpixels(sp, gt, cfg.boundary_tol);
        std::snprintf(line, sizeof(line), "%s,%s,%.17g,%.17g,%.17g,%.17g,%d,%d\n", r.image.c_str(),
                      r.labels.c_str(), m.asa, m.br, m.bp, m.co, m.superpixel_count,
                      m.boundary_tolerance);
        report << line;
        json j = {{"pred", r.image},         {"gt", r.labels}, {"asa", m.asa},
                  {"br", m.br},              {"bp", m.bp},     {"co", m.co},
                  {"superpixels", m.superpixel_count}, {"tol", m.boundary_tolerance}};
        write_json(c.out + "/" + stem_of(r.image) + "_metrics.json", j);
        ma += m.asa;
        mr += m.br;
        mp += m.bp;
        mc += m.co;
    }
    const double n = static_cast<double>(rows.size());
    std::snprintf(line, sizeof(line), "mean,,%.17g,%.17g,%.17g,%.17g,,\n", ma / n, mr / n, mp / n,
                  mc / n);
    report << line;
    std::cout << "pairs=" << rows.size() << " asa=" << ma / n << " br=" << mr / n
              << " bp=" << mp / n << " co=" << mc / n << "\n";
}

void run_bal(const CommonArgs& c, const std::string& labels_path) {
    RunConfig cfg = resolve_config(c);
    snapshot(c, cfg);
    LabelMap labels = load_label_png(labels_path);
    FieldMap dist = distance_field(labels, cfg.connectivity);
    BalTarget<float> t = bal_encode<float>(labels, dist, cfg.bal);

    std::ofstream bin(c.out + "/target.bin", std::ios::binary);
    if (!bin) throw IoError("bal: cannot write " + c.out + "/target.bin");
    bin.write(reinterpret_cast<const char*>(t.y.data()), t.y.size() * sizeof(float));
    if (!bin) throw IoError("bal: write failed for " + c.out + "/target.bin");

    json side = {{"labels", labels_path},
                 {"h", labels.h},
                 {"w", labels.w},
                 {"k_full", t.k_full},
                 {"k_stored", t.k_stored},
                 {"layout", "chw-float32-le"},
                 {"connectivity", cfg.connectivity},
                 {"note", "channels k_stored..k_full-1 are identically zero and not stored"}};
    write_json(c.out + "/target.json", side);
    save_gray_png(c.out + "/entropy.png", bal_entropy_map(t), 0.0, std::log(9.0));
    save_gray_png(c.out + "/sigma.png", t.sigma, 0.0, cfg.bal.sigma_max);
    std::cout << "h=" << labels.h << " w=" << labels.w << " k_full=" << t.k_full
              << " k_stored=" << t.k_stored << " out=" << c.out << "\n";
}

void run_csf(const CommonArgs& c, double max_f, double step) {
    RunConfig cfg = resolve_config(c);
    snapshot(c, cfg);
    const auto table = csf_table(max_f, step);
    std::ofstream out(c.out + "/csf.csv");
    if (!out) throw IoError("csf: cannot write " + c.out + "/csf.csv");
    char line[96];
    for (const auto& [f, hval] : table) {
        std::snprintf(line, sizeof(line), "%.10g,%.10g\n", f, hval);
        out << line;
    }
    std::cout << "rows=" << table.size() << " peak_f=" << csf_peak(max_f) << " out=" << c.out
              << "/csf.csv\n";
}

void run_viz(const CommonArgs& c, const std::string& image_path, const std::string& spix_path) {
    RunConfig cfg = resolve_config(c);
    snapshot(c, cfg);
    Tensor<float> img = load_image_rgb(image_path);
    LabelMap sp = load_label_png(spix_path);
    const int h = img.dim(2), w = img.dim(3);
    if (sp.h != h || sp.w != w)
        throw ShapeError("viz: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " vs superpixels " + std::to_string(sp.h) + "x" + std::to_string(sp.w));
    Tensor<float> overlay = img.clone();
    float* d = overlay.data();
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const bool edge = (x + 1 < w && sp.at(y, x) != sp.at(y, x + 1)) ||
                              (y + 1 < h && sp.at(y, x) != sp.at(y + 1, x));
            if (!edge) continue;
            const std::int64_t p = static_cast<std::int64_t>(y) * w + x;
            d[p] = 1.0f;
            d[plane + p] = 0.0f;
            d[2 * plane + p] = 0.0f;
        }
    const std::string out_png = c.out + "/" + stem_of(image_path) + "_overlay.png";
    save_image_rgb(out_png, overlay);
    std::cout << "out=" << out_png << "\n";
}

void run_slic(const CommonArgs& c, const std::string& image_path) {
    RunConfig cfg = resolve_config(c);
    snapshot(c, cfg);
    Tensor<float> img = load_image_rgb(image_path);
    SlicResult r = slic_run(img, cfg.slic);
    const std::string stem = c.out + "/" + stem_of(image_path);
    save_label_png(stem + "_slic.png", r.map);
    json side = {{"image", image_path},
                 {"superpixels", r.map.count},
                 {"k", cfg.slic.k},
                 {"compactness", cfg.slic.compactness},
                 {"iterations", cfg.slic.iterations},
                 {"residuals", r.residuals}};
    write_json(stem + "_slic.json", side);
    std::cout << "image=" << image_path << " superpixels=" << r.map.count << " out=" << stem
              << "_slic.png\n";
}

std::string quote_for_record(std::string s) {
    for (char& ch : s)
        if (ch == '"' || ch == '\n') ch = '\'';
    return s;
}

int fail(const char* kind, int code, const std::string& msg) {
    std::cerr << "status=error kind=" << kind << " exit=" << code << " msg=\""
              << quote_for_record(msg) << "\"\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"biospix: boundary-aware superpixel segmentation engine"};
    app.require_subcommand(1);

    CommonArgs synth_c, train_c, infer_c, eval_c, bal_c, csf_c, viz_c, slic_c;
    std::string train_manifest, eval_manifest, infer_ckpt, bal_labels, viz_image, viz_spix,
        slic_image;
    std::vector<std::string> infer_images;
    int infer_count = 0;
    double csf_max_f = 60.0, csf_step = 0.5;

    CLI::App* s_synth = app.add_subcommand("synth", "generate a synthetic corpus + manifest");
    add_common(s_synth, synth_c);

    CLI::App* s_train = app.add_subcommand("train", "train the association network");
    add_common(s_train, train_c);
    s_train->add_option("--manifest", train_manifest, "dataset manifest CSV")->required();

    CLI::App* s_infer = app.add_subcommand("infer", "segment images with a checkpoint");
    add_common(s_infer, infer_c);
    s_infer->add_option("--checkpoint", infer_ckpt, "trained .bspx checkpoint")->required();
    s_infer->add_option("--image", infer_images, "input image(s)")->required()->take_all();
    s_infer->add_option("--spix-count", infer_count,
                        "target superpixel count (selects the sampling interval)");

    CLI::App* s_eval = app.add_subcommand("eval", "score prediction/ground-truth pairs");
    add_common(s_eval, eval_c);
    s_eval->add_option("--manifest", eval_manifest, "CSV of pred,gt,split rows")->required();

    CLI::App* s_bal = app.add_subcommand("bal", "encode soft targets for a label map");
    add_common(s_bal, bal_c);
    s_bal->add_option("--labels", bal_labels, "16-bit label PNG")->required();

    CLI::App* s_csf = app.add_subcommand("csf", "tabulate the contrast sensitivity curve");
    add_common(s_csf, csf_c);
    s_csf->add_option("--max-f", csf_max_f, "highest frequency, cycles/deg")->capture_default_str();
    s_csf->add_option("--step", csf_step, "frequency step")->capture_default_str();

    CLI::App* s_viz = app.add_subcommand("viz", "overlay superpixel boundaries on an image");
    add_common(s_viz, viz_c);
    s_viz->add_option("--image", viz_image, "RGB image")->required();
    s_viz->add_option("--spix", viz_spix, "superpixel label PNG")->required();

    CLI::App* s_slic = app.add_subcommand("slic", "cluster-based baseline segmentation");
    add_common(s_slic, slic_c);
    s_slic->add_option("--image", slic_image, "RGB image")->required();

    try {
        app.parse(argc, argv);
        if (s_synth->parsed()) run_synth(synth_c);
        if (s_train->parsed()) run_train(train_c, train_manifest);
        if (s_infer->parsed()) run_infer(infer_c, infer_ckpt, infer_images, infer_count);
        if (s_eval->parsed()) run_eval(eval_c, eval_manifest);
        if (s_bal->parsed()) run_bal(bal_c, bal_labels);
        if (s_csf->parsed()) run_csf(csf_c, csf_max_f, csf_step);
        if (s_viz->parsed()) run_viz(viz_c, viz_image, viz_spix);
        if (s_slic->parsed()) run_slic(slic_c, slic_image);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        return fail("usage", 1, e.what());
    } catch (const UsageError& e) {
        return fail("usage", 1, e.what());
    } catch (const ParamError& e) {
        return fail("param", 1, e.what());
    } catch (const IoError& e) {
        return fail("io", 2, e.what());
    } catch (const ShapeError& e) {
        return fail("shape", 2, e.what());
    } catch (const GeometryError& e) {
        return fail("geometry", 2, e.what());
    } catch (const CategoryOverflowError& e) {
        return fail("category", 2, e.what());
    } catch (const NumericError& e) {
        return fail("numeric", 3, e.what());
    } catch (const std::exception& e) {
        return fail("internal", 3, e.what());
    }
    return 0;
}
