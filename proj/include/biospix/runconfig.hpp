#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "biospix/bal.hpp"
#include "biospix/loss.hpp"
#include "biospix/net.hpp"
#include "biospix/slic.hpp"
#include "biospix/synthetic.hpp"

namespace biospix {

// Per-run training knobs kept out of LossConfig (which only holds the loss and
// optimizer hyperparameters themselves).
struct TrainOpts {
    std::int64_t iterations = 300;
    std::int64_t checkpoint_every = 0;  // 0 = final checkpoint only
    std::int64_t log_every = 1;         // stderr progress cadence
    GateMode gate = GateMode::learned;

    void validate() const;
};

// Everything a run needs, round-trippable through JSON. Unknown keys are
// rejected so a typo cannot silently fall back to a default.
struct RunConfig {
    std::uint64_t seed = 1;
    int connectivity = 4;   // distance-field adjacency
    int boundary_tol = 2;   // metric tolerance in pixels
    BalConfig bal;
    NetConfig net;
    LossConfig loss;
    SlicConfig slic;
    SynthConfig synth;
    TrainOpts train;

    void validate() const;
};

const char* gate_mode_name(GateMode m);
GateMode parse_gate_mode(const std::string& s);

RunConfig parse_runconfig(const nlohmann::json& j);
RunConfig load_runconfig(const std::string& path);

// "section.key=value" (or "seed=7" at top level); bad key or unparsable value
// -> UsageError.
void apply_override(RunConfig& cfg, const std::string& assignment);

nlohmann::json runconfig_json(const RunConfig& cfg);
void save_runconfig(const std::string& path, const RunConfig& cfg);

}  // namespace biospix
