#pragma once

#include <string>
#include <vector>

#include "biospix/dataio.hpp"
#include "biospix/net.hpp"
#include "biospix/runconfig.hpp"

namespace biospix {

struct TrainResult {
    std::vector<double> total, ce, pos;  // batch-averaged loss parts per iteration
};

// Deterministic optimization: a fresh per-epoch shuffle of the sample order and
// a per-draw crop/flip stream, both derived from cfg.seed, so two runs with the
// same config produce bit-identical parameter trajectories. When out_dir is
// non-empty it receives loss.csv, optional periodic ckpt_*.bspx files and the
// final checkpoint.bspx. A non-finite loss aborts with the iteration index.
TrainResult train_loop(AssocNet<float>& net, const std::vector<SamplePair>& data,
                       const RunConfig& cfg, const std::string& out_dir);

}  // namespace biospix
