#include "biospix/train.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>

#include "biospix/adam.hpp"
#include "biospix/bal.hpp"
#include "biospix/distance.hpp"
#include "biospix/features.hpp"
#include "biospix/loss.hpp"
#include "biospix/ops.hpp"

namespace biospix {

namespace {

// Epoch-shuffled sample indices, refreshed lazily as draws cross an epoch
// boundary. Streams are tagged so the shuffle RNG never collides with the
// per-sample augmentation RNG.
class SampleSchedule {
public:
    SampleSchedule(size_t n, std::uint64_t seed) : n_(n), seed_(seed), order_(n) {
        for (size_t i = 0; i < n; ++i) order_[i] = i;
        reshuffle();
    }

    size_t next() {
        if (cursor_ == n_) {
            ++epoch_;
            cursor_ = 0;
            reshuffle();
        }
        return order_[cursor_++];
    }

private:
    void reshuffle() {
        Rng rng(mix_seed(mix_seed(seed_, 0x51), epoch_));
        rng.shuffle(order_);
    }

    size_t n_, cursor_ = 0;
    std::uint64_t seed_, epoch_ = 0;
    std::vector<size_t> order_;
};

struct CsvFile {
    std::FILE* f = nullptr;
    ~CsvFile() {
        if (f) std::fclose(f);
    }
};

}  // namespace

TrainResult train_loop(AssocNet<float>& net, const std::vector<SamplePair>& data,
                       const RunConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    if (data.empty()) throw UsageError("train: no samples");
    const int crop = cfg.loss.crop;
    for (const auto& p : data)
        if (p.image.dim(2) < crop || p.image.dim(3) < crop)
            throw ParamError("train: crop " + std::to_string(crop) + " exceeds a sample of " +
                             std::to_string(p.image.dim(2)) + "x" + std::to_string(p.image.dim(3)));

    net.mode = cfg.train.gate;
    net.set_training(true);
    net.set_requires_grad(true);
    Adam<float> opt(net.params());

    CsvFile csv;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const std::string path = out_dir + "/loss.csv";
        csv.f = std::fopen(path.c_str(), "w");
        if (!csv.f) throw IoError("train: cannot write " + path);
        std::fprintf(csv.f, "iteration,lr,total,ce_part,pos_part\n");
    }

    const GridSpec grid = init_grid(crop, crop, cfg.loss.s);
    const Tensor<float> pos = coord_features<float>(crop, crop);
    const int batch = cfg.loss.batch;
    SampleSchedule sched(data.size(), cfg.seed);

    TrainResult res;
    for (std::int64_t iter = 0; iter < cfg.train.iterations; ++iter) {
        const double lr = schedule_lr(cfg.loss, iter);
        opt.zero_grad();
        Tape<float> tape;

        Tensor<float> batch_total;
        double ce_sum = 0, pos_sum = 0;
        for (int b = 0; b < batch; ++b) {
            const std::uint64_t draw = static_cast<std::uint64_t>(iter) * batch + b;
            const size_t idx = sched.next();
            SamplePair s = random_crop_flip(data[idx], crop, mix_seed(mix_seed(cfg.seed, 0xA7), draw));
            Tensor<float> x = input_features(s.image, net.cfg.in_channels);
            BalTarget<float> tgt =
                bal_encode<float>(s.labels, distance_field(s.labels, cfg.connectivity), cfg.bal);

            LossResult<float> r;
            try {
                r = superpixel_loss(net.forward(x).assoc, tgt.y, pos, grid, cfg.loss);
            } catch (const NumericError& e) {
                throw NumericError("train: iteration " + std::to_string(iter) + ": " + e.what());
            }
            batch_total = b == 0 ? r.total : add(batch_total, r.total);
            ce_sum += r.ce;
            pos_sum += r.pos;
        }
        Tensor<float> loss = scale(batch_total, 1.0f / static_cast<float>(batch));
        const double total = static_cast<double>(loss.item());
        if (!std::isfinite(total))
            throw NumericError("train: non-finite batch loss at iteration " + std::to_string(iter));

        tape.backward(loss);
        opt.step(static_cast<float>(lr));

        res.total.push_back(total);
        res.ce.push_back(ce_sum / batch);
        res.pos.push_back(pos_sum / batch);
        if (csv.f)
            std::fprintf(csv.f, "%" PRId64 ",%.17g,%.17g,%.17g,%.17g\n", iter, lr, total,
                         ce_sum / batch, pos_sum / batch);

        if (!out_dir.empty() && cfg.train.checkpoint_every > 0 &&
            (iter + 1) % cfg.train.checkpoint_every == 0 && iter + 1 < cfg.train.iterations) {
            char name[64];
            std::snprintf(name, sizeof(name), "/ckpt_%06" PRId64 ".bspx", iter + 1);
            save_checkpoint(out_dir + name, net, cfg.seed);
        }
    }

    if (!out_dir.empty()) save_checkpoint(out_dir + "/checkpoint.bspx", net, cfg.seed);
    return res;
}

}  // namespace biospix
