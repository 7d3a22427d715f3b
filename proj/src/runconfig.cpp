#include "biospix/runconfig.hpp"

#include <fstream>

#include "biospix/common.hpp"

namespace biospix {

void TrainOpts::validate() const {
    if (iterations < 1) throw ParamError("train: iterations must be >= 1");
    if (checkpoint_every < 0) throw ParamError("train: checkpoint_every must be >= 0");
    if (log_every < 1) throw ParamError("train: log_every must be >= 1");
}

void RunConfig::validate() const {
    if (connectivity != 4 && connectivity != 8)
        throw ParamError("config: connectivity must be 4 or 8, got " +
                         std::to_string(connectivity));
    if (boundary_tol < 0) throw ParamError("config: boundary_tol must be >= 0");
    bal.validate();
    net.validate();
    loss.validate();
    slic.validate();
    synth.validate();
    train.validate();
}

const char* gate_mode_name(GateMode m) {
    switch (m) {
        case GateMode::ones: return "ones";
        case GateMode::zeros: return "zeros";
        default: return "learned";
    }
}

GateMode parse_gate_mode(const std::string& s) {
    if (s == "learned") return GateMode::learned;
    if (s == "ones") return GateMode::ones;
    if (s == "zeros") return GateMode::zeros;
    throw UsageError("config: gate mode must be learned|ones|zeros, got '" + s + "'");
}

namespace {

using nlohmann::json;

[[noreturn]] void bad_key(const std::string& where, const std::string& key) {
    throw UsageError("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
}

double want_num(const json& v, const std::string& key) {
    if (!v.is_number()) throw UsageError("config: '" + key + "' must be a number");
    return v.get<double>();
}

std::int64_t want_int(const json& v, const std::string& key) {
    if (!v.is_number_integer()) throw UsageError("config: '" + key + "' must be an integer");
    return v.get<std::int64_t>();
}

// Each setter takes the raw json value so JSON files and CLI overrides share
// one routing table.
void set_top(RunConfig& c, const std::string& k, const json& v) {
    if (k == "seed") c.seed = static_cast<std::uint64_t>(want_int(v, k));
    else if (k == "connectivity") c.connectivity = static_cast<int>(want_int(v, k));
    else if (k == "boundary_tol") c.boundary_tol = static_cast<int>(want_int(v, k));
    else bad_key("", k);
}

void set_bal(BalConfig& b, const std::string& k, const json& v) {
    if (k == "categories") b.c = static_cast<int>(want_int(v, k));
    else if (k == "delta_mu") b.delta_mu = static_cast<int>(want_int(v, k));
    else if (k == "beta") b.beta = want_num(v, k);
    else if (k == "alpha") b.alpha = want_num(v, k);
    else if (k == "sigma_min") b.sigma_min = want_num(v, k);
    else if (k == "sigma_max") b.sigma_max = want_num(v, k);
    else if (k == "support_radius") b.support_radius = static_cast<int>(want_int(v, k));
    else if (k == "eps_log") b.eps_log = want_num(v, k);
    else bad_key("bal", k);
}

void set_net(NetConfig& n, const std::string& k, const json& v) {
    if (k == "in_channels") n.in_channels = static_cast<int>(want_int(v, k));
    else if (k == "assoc_channels") n.assoc_channels = static_cast<int>(want_int(v, k));
    else if (k == "kernel") n.kernel = static_cast<int>(want_int(v, k));
    else if (k == "leaky_slope") n.leaky_slope = want_num(v, k);
    else bad_key("net", k);
}

void set_loss(LossConfig& l, const std::string& k, const json& v) {
    if (k == "m") l.m = want_num(v, k);
    else if (k == "s") l.s = static_cast<int>(want_int(v, k));
    else if (k == "eps_log") l.eps_log = want_num(v, k);
    else if (k == "lr") l.lr = want_num(v, k);
    else if (k == "lr_decay_factor") l.lr_decay_factor = want_num(v, k);
    else if (k == "lr_decay_at") l.lr_decay_at = want_int(v, k);
    else if (k == "batch") l.batch = static_cast<int>(want_int(v, k));
    else if (k == "crop") l.crop = static_cast<int>(want_int(v, k));
    else bad_key("loss", k);
}

void set_slic(SlicConfig& s, const std::string& k, const json& v) {
    if (k == "k") s.k = static_cast<int>(want_int(v, k));
    else if (k == "compactness") s.compactness = want_num(v, k);
    else if (k == "iterations") s.iterations = static_cast<int>(want_int(v, k));
    else bad_key("slic", k);
}

void set_synth(SynthConfig& s, const std::string& k, const json& v) {
    if (k == "h") s.h = static_cast<int>(want_int(v, k));
    else if (k == "w") s.w = static_cast<int>(want_int(v, k));
    else if (k == "regions_min") s.regions_min = static_cast<int>(want_int(v, k));
    else if (k == "regions_max") s.regions_max = static_cast<int>(want_int(v, k));
    else if (k == "jitter") s.jitter = want_num(v, k);
    else if (k == "noise") s.noise = want_num(v, k);
    else if (k == "count") s.count = static_cast<int>(want_int(v, k));
    else bad_key("synth", k);
}

void set_train(TrainOpts& t, const std::string& k, const json& v) {
    if (k == "iterations") t.iterations = want_int(v, k);
    else if (k == "checkpoint_every") t.checkpoint_every = want_int(v, k);
    else if (k == "log_every") t.log_every = want_int(v, k);
    else if (k == "gate") {
        if (!v.is_string()) throw UsageError("config: 'train.gate' must be a string");
        t.gate = parse_gate_mode(v.get<std::string>());
    } else bad_key("train", k);
}

void set_section(RunConfig& c, const std::string& section, const std::string& k, const json& v) {
    if (section == "bal") set_bal(c.bal, k, v);
    else if (section == "net") set_net(c.net, k, v);
    else if (section == "loss") set_loss(c.loss, k, v);
    else if (section == "slic") set_slic(c.slic, k, v);
    else if (section == "synth") set_synth(c.synth, k, v);
    else if (section == "train") set_train(c.train, k, v);
    else bad_key("", section);
}

}  // namespace

RunConfig parse_runconfig(const json& j) {
    if (!j.is_object()) throw UsageError("config: top level must be a JSON object");
    RunConfig c;
    for (const auto& [key, val] : j.items()) {
        if (val.is_object()) {
            for (const auto& [k2, v2] : val.items()) set_section(c, key, k2, v2);
        } else {
            set_top(c, key, val);
        }
    }
    c.validate();
    return c;
}

RunConfig load_runconfig(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("config: " + path + " is not valid JSON: " + e.what());
    }
    return parse_runconfig(j);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw UsageError("override: want key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    // route the textual value through the same json-typed setters
    json v;
    if (key == "train.gate") {
        v = raw;
    } else {
        try {
            size_t used = 0;
            if (raw.find_first_of(".eE") == std::string::npos) {
                v = static_cast<std::int64_t>(std::stoll(raw, &used));
            } else {
                v = std::stod(raw, &used);
            }
            if (used != raw.size()) throw std::invalid_argument(raw);
        } catch (const std::exception&) {
            throw UsageError("override: cannot parse value '" + raw + "' for '" + key + "'");
        }
    }

    const auto dot = key.find('.');
    if (dot == std::string::npos) set_top(cfg, key, v);
    else set_section(cfg, key.substr(0, dot), key.substr(dot + 1), v);
    cfg.validate();
}

nlohmann::json runconfig_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["connectivity"] = c.connectivity;
    j["boundary_tol"] = c.boundary_tol;
    j["bal"] = {{"categories", c.bal.c},
                {"delta_mu", c.bal.delta_mu},
                {"beta", c.bal.beta},
                {"alpha", c.bal.alpha},
                {"sigma_min", c.bal.sigma_min},
                {"sigma_max", c.bal.sigma_max},
                {"support_radius", c.bal.support_radius},
                {"eps_log", c.bal.eps_log}};
    j["net"] = {{"in_channels", c.net.in_channels},
                {"assoc_channels", c.net.assoc_channels},
                {"kernel", c.net.kernel},
                {"leaky_slope", c.net.leaky_slope}};
    j["loss"] = {{"m", c.loss.m},
                 {"s", c.loss.s},
                 {"eps_log", c.loss.eps_log},
                 {"lr", c.loss.lr},
                 {"lr_decay_factor", c.loss.lr_decay_factor},
                 {"lr_decay_at", c.loss.lr_decay_at},
                 {"batch", c.loss.batch},
                 {"crop", c.loss.crop}};
    j["slic"] = {{"k", c.slic.k},
                 {"compactness", c.slic.compactness},
                 {"iterations", c.slic.iterations}};
    j["synth"] = {{"h", c.synth.h},
                  {"w", c.synth.w},
                  {"regions_min", c.synth.regions_min},
                  {"regions_max", c.synth.regions_max},
                  {"jitter", c.synth.jitter},
                  {"noise", c.synth.noise},
                  {"count", c.synth.count}};
    j["train"] = {{"iterations", c.train.iterations},
                  {"checkpoint_every", c.train.checkpoint_every},
                  {"log_every", c.train.log_every},
                  {"gate", gate_mode_name(c.train.gate)}};
    return j;
}

void save_runconfig(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw IoError("config: cannot write " + path);
    out << runconfig_json(cfg).dump(2) << "\n";
    if (!out) throw IoError("config: write failed for " + path);
}

}  // namespace biospix
