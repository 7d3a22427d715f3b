#pragma once

#include <array>
#include <string>
#include <vector>

#include "biospix/ops.hpp"

namespace biospix {

// Architecture knobs. The channel plan is fixed: encoder levels
// [16, 32, 64, 128, 128] at scales [1, 1/2, 1/4, 1/8, 1/16], a 9-channel
// association head, 3x3 kernels throughout the conv stack.
struct NetConfig {
    int in_channels = 5;     // Lab color + normalized y,x coords; 3 = color only
    int assoc_channels = 9;
    int kernel = 3;
    double leaky_slope = 0.1;
    static constexpr std::array<int, 5> enc_channels{16, 32, 64, 128, 128};

    void validate() const {
        if (in_channels != 3 && in_channels != 5)
            throw ParamError("net: in_channels must be 3 or 5");
        if (assoc_channels != 9) throw ParamError("net: association head emits exactly 9 channels");
        if (kernel != 3) throw ParamError("net: conv stack uses 3x3 kernels");
        if (!(leaky_slope > 0.0) || leaky_slope >= 1.0)
            throw ParamError("net: leaky slope must lie in (0, 1)");
    }
};

// How the decoder fuses the upsampled global code with its own features:
//   learned - gate = conv(deconv(code)), fused = gate * dec + skip
//   ones    - gate forced to 1 and skip dropped: fused = dec (plain decoder)
//   zeros   - gate forced to 0: fused = skip alone
// The forced modes are structural (the gate ops are skipped entirely), so
// their outputs are bit-identical to the reduced expressions.
enum class GateMode { learned, ones, zeros };

template <typename S>
struct Activations {
    Tensor<S> skip_full, skip_half;  // encoder skips at 1/1 and 1/2 scale
    Tensor<S> code;                  // bottleneck at 1/16
    Tensor<S> dec_full, dec_half;    // decoder features at 1/1 and 1/2
    Tensor<S> fused_full, fused_half;
    Tensor<S> assoc;                 // 9-way channel-softmax map
};

namespace detail {

constexpr double kBnEps = 1e-5;

template <typename S>
struct ConvBlock {
    Tensor<S> w;  // [cout, cin, k, k]
    Tensor<S> gamma, beta;
    BatchNormState<S> bn;
    int stride = 1, pad = 1;

    void build(int cin, int cout, int k, int stride_) {
        w = Tensor<S>::zeros({cout, cin, k, k});
        gamma = Tensor<S>::full({cout}, S(1));
        beta = Tensor<S>::zeros({cout});
        bn.init(cout);
        stride = stride_;
        pad = k / 2;
    }
    int fan_in() const { return w.dim(1) * w.dim(2) * w.dim(3); }

    Tensor<S> forward(const Tensor<S>& x, S slope, bool training) {
        Tensor<S> y = conv2d(x, w, Tensor<S>(), stride, pad);
        y = batch_norm2d(y, gamma, beta, bn, S(kBnEps), training);
        return leaky_relu(y, slope);
    }
};

template <typename S>
struct DeconvBlock {
    Tensor<S> w;  // [cin, cout, k, k]
    Tensor<S> gamma, beta;
    BatchNormState<S> bn;
    int stride = 2, pad = 1;

    void build(int cin, int cout, int k, int stride_, int pad_) {
        w = Tensor<S>::zeros({cin, cout, k, k});
        gamma = Tensor<S>::full({cout}, S(1));
        beta = Tensor<S>::zeros({cout});
        bn.init(cout);
        stride = stride_;
        pad = pad_;
    }
    // taps contributing to one output element of the transposed conv
    int fan_in() const { return w.dim(0) * w.dim(2) * w.dim(3) / (stride * stride); }

    Tensor<S> forward(const Tensor<S>& x, S slope, bool training) {
        Tensor<S> y = conv_transpose2d(x, w, stride, pad);
        y = batch_norm2d(y, gamma, beta, bn, S(kBnEps), training);
        return leaky_relu(y, slope);
    }
};

}  // namespace detail

// One named tensor of network state: a trainable parameter or a batch-norm
// running buffer. Buffers alias net-owned storage via the node pointer.
template <typename S>
struct NamedState {
    std::string name;
    Tensor<S> t;         // defined for parameters
    ArrayX<S>* buf = nullptr;  // defined for running-stat buffers
    int fan_in = 0;      // > 0 only for weights drawn from the fan-in law

    bool is_param() const { return t.defined(); }
    std::vector<int> shape() const {
        if (is_param()) return t.shape();
        return {static_cast<int>(buf->size())};
    }
};

// Encoder-decoder predicting the per-pixel 9-way cell association map. The
// decoder path is modulated by two gate branches that project the bottleneck
// code straight to full and half scale.
template <typename S>
class AssocNet {
public:
    NetConfig cfg;
    GateMode mode = GateMode::learned;

    explicit AssocNet(NetConfig c = {}) : cfg(c) {
        cfg.validate();
        const auto& ch = NetConfig::enc_channels;
        enc_[0][0].build(cfg.in_channels, ch[0], cfg.kernel, 1);
        enc_[0][1].build(ch[0], ch[0], cfg.kernel, 1);
        for (int l = 1; l < 5; ++l) {
            enc_[l][0].build(ch[l - 1], ch[l], cfg.kernel, 2);
            enc_[l][1].build(ch[l], ch[l], cfg.kernel, 1);
        }
        dec_[0].build(ch[4], 128, 4, 2, 1);  // 1/16 -> 1/8
        dec_[1].build(128, 64, 4, 2, 1);     // 1/8  -> 1/4
        dec_[2].build(64, 32, 4, 2, 1);      // 1/4  -> 1/2
        dec_[3].build(32, 16, 4, 2, 1);      // 1/2  -> 1/1
        gate_full_up_.build(ch[4], 16, 16, 16, 0);
        gate_full_conv_.build(16, 16, cfg.kernel, 1);
        gate_half_up_.build(ch[4], 32, 8, 8, 0);
        gate_half_conv_.build(32, 32, cfg.kernel, 1);
        head_conv_.build(16 + 32, 32, cfg.kernel, 1);
        head_w_ = Tensor<S>::zeros({cfg.assoc_channels, 32, 1, 1});
        head_b_ = Tensor<S>::zeros({cfg.assoc_channels});
    }

    void set_training(bool b) { training_ = b; }
    bool training() const { return training_; }

    // Fan-in scaled uniform init (+-sqrt(3/fan_in), std 1/sqrt(fan_in));
    // biases and batch-norm shifts zero, scales one; deterministic in seed.
    void init_weights(std::uint64_t seed) {
        Rng rng(seed);
        for (auto& e : state()) {
            if (!e.is_param()) continue;
            if (e.fan_in > 0) {
                const double b = std::sqrt(3.0 / e.fan_in);
                for (std::int64_t i = 0; i < e.t.size(); ++i)
                    e.t.data()[i] = static_cast<S>(rng.uniform(-b, b));
            }
        }
    }

    std::vector<Tensor<S>> params() {
        std::vector<Tensor<S>> ps;
        for (auto& e : state())
            if (e.is_param()) ps.push_back(e.t);
        return ps;
    }

    void set_requires_grad(bool b = true) {
        for (auto& p : params()) p.set_requires_grad(b);
    }

    // Stable enumeration order; checkpoint payloads follow it exactly.
    std::vector<NamedState<S>> state() {
        std::vector<NamedState<S>> es;
        auto conv = [&es](const std::string& base, detail::ConvBlock<S>& blk) {
            es.push_back({base + ".w", blk.w, nullptr, blk.fan_in()});
            es.push_back({base + ".gamma", blk.gamma, nullptr, 0});
            es.push_back({base + ".beta", blk.beta, nullptr, 0});
            es.push_back({base + ".running_mean", Tensor<S>(), &blk.bn.running_mean, 0});
            es.push_back({base + ".running_var", Tensor<S>(), &blk.bn.running_var, 0});
        };
        auto deconv = [&es](const std::string& base, detail::DeconvBlock<S>& blk) {
            es.push_back({base + ".w", blk.w, nullptr, blk.fan_in()});
            es.push_back({base + ".gamma", blk.gamma, nullptr, 0});
            es.push_back({base + ".beta", blk.beta, nullptr, 0});
            es.push_back({base + ".running_mean", Tensor<S>(), &blk.bn.running_mean, 0});
            es.push_back({base + ".running_var", Tensor<S>(), &blk.bn.running_var, 0});
        };
        for (int l = 0; l < 5; ++l)
            for (int j = 0; j < 2; ++j)
                conv("enc" + std::to_string(l) + (j ? "b" : "a"), enc_[l][j]);
        for (int d = 0; d < 4; ++d) deconv("dec" + std::to_string(d), dec_[d]);
        deconv("gate_full.up", gate_full_up_);
        conv("gate_full.conv", gate_full_conv_);
        deconv("gate_half.up", gate_half_up_);
        conv("gate_half.conv", gate_half_conv_);
        conv("head.conv", head_conv_);
        es.push_back({"head.w", head_w_, nullptr, head_w_.dim(1)});
        es.push_back({"head.b", head_b_, nullptr, 0});
        return es;
    }

    Activations<S> forward(const Tensor<S>& x) {
        detail::check_4d(x, "net.forward");
        if (x.dim(1) != cfg.in_channels)
            throw ShapeError("net.forward: expected " + std::to_string(cfg.in_channels) + " input channels, got " +
                             std::to_string(x.dim(1)));
        if (x.dim(2) % 16 != 0 || x.dim(3) % 16 != 0)
            throw GeometryError("net.forward: spatial extents must be divisible by 16, got " +
                                shape_str(x.shape()));
        const S slope = static_cast<S>(cfg.leaky_slope);
        Activations<S> a;

        Tensor<S> t = enc_[0][1].forward(enc_[0][0].forward(x, slope, training_), slope, training_);
        a.skip_full = t;
        t = enc_[1][1].forward(enc_[1][0].forward(t, slope, training_), slope, training_);
        a.skip_half = t;
        for (int l = 2; l < 5; ++l)
            t = enc_[l][1].forward(enc_[l][0].forward(t, slope, training_), slope, training_);
        a.code = t;

        t = dec_[0].forward(a.code, slope, training_);
        t = dec_[1].forward(t, slope, training_);
        a.dec_half = dec_[2].forward(t, slope, training_);
        a.dec_full = dec_[3].forward(a.dec_half, slope, training_);

        switch (mode) {
            case GateMode::learned: {
                Tensor<S> gf = gate_full_conv_.forward(gate_full_up_.forward(a.code, slope, training_),
                                                       slope, training_);
                Tensor<S> gh = gate_half_conv_.forward(gate_half_up_.forward(a.code, slope, training_),
                                                       slope, training_);
                a.fused_full = add(mul(gf, a.dec_full), a.skip_full);
                a.fused_half = add(mul(gh, a.dec_half), a.skip_half);
                break;
            }
            case GateMode::ones:
                a.fused_full = a.dec_full;
                a.fused_half = a.dec_half;
                break;
            case GateMode::zeros:
                a.fused_full = a.skip_full;
                a.fused_half = a.skip_half;
                break;
        }

        Tensor<S> h = concat_channels(a.fused_full, upsample_bilinear2x(a.fused_half));
        h = head_conv_.forward(h, slope, training_);
        Tensor<S> logits = conv2d(h, head_w_, head_b_, 1, 0);
        a.assoc = softmax_channels(logits);
        return a;
    }

private:
    detail::ConvBlock<S> enc_[5][2];
    detail::DeconvBlock<S> dec_[4];
    detail::DeconvBlock<S> gate_full_up_, gate_half_up_;
    detail::ConvBlock<S> gate_full_conv_, gate_half_conv_;
    detail::ConvBlock<S> head_conv_;
    Tensor<S> head_w_, head_b_;
    bool training_ = true;
};

// Checkpoint container format: "BSPX", u32 version, u32 header length, JSON
// header (net config, seed, state entry names/shapes/kinds), then the raw
// little-endian float32 payload in header order.
void save_checkpoint(const std::string& path, AssocNet<float>& net, std::uint64_t seed);
AssocNet<float> load_checkpoint(const std::string& path, std::uint64_t* seed_out = nullptr);

}  // namespace biospix
