#pragma once

// Convolution, transposed convolution and leaky-ReLU layers with explicit
// backward passes, built on im2col + GEMM. Layers hold parameters and
// gradients; per-call activations live in caller-owned contexts, so
// inference (ctx = nullptr) never mutates the network.

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "texseg/rng.hpp"
#include "texseg/tensor.hpp"

namespace texseg {

inline int conv_out_size(int in, int k, int stride, int pad) {
    const int out = (in + 2 * pad - k) / stride + 1;
    if (out <= 0) throw std::invalid_argument("convolution output would be empty");
    return out;
}

inline int tconv_out_size(int in, int k, int stride, int pad) {
    return (in - 1) * stride - 2 * pad + k;
}

namespace detail {

// x: [C, H, W] -> col: [C*k*k, OH*OW]
inline void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, float* col) {
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    const std::int64_t P = static_cast<std::int64_t>(OH) * OW;
    for (int c = 0; c < C; ++c) {
        for (int kr = 0; kr < k; ++kr) {
            for (int kc = 0; kc < k; ++kc) {
                float* dst = col + (static_cast<std::int64_t>(c) * k * k + kr * k + kc) * P;
                for (int orow = 0; orow < OH; ++orow) {
                    const int ir = orow * stride - pad + kr;
                    if (ir < 0 || ir >= H) {
                        for (int ocol = 0; ocol < OW; ++ocol) dst[orow * OW + ocol] = 0.0f;
                        continue;
                    }
                    const float* src = x + (static_cast<std::int64_t>(c) * H + ir) * W;
                    for (int ocol = 0; ocol < OW; ++ocol) {
                        const int ic = ocol * stride - pad + kc;
                        dst[orow * OW + ocol] = (ic >= 0 && ic < W) ? src[ic] : 0.0f;
                    }
                }
            }
        }
    }
}

// col: [C*k*k, OH*OW] accumulated back to x: [C, H, W]
inline void col2im(const float* col, int C, int H, int W, int k, int stride, int pad, float* x) {
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    const std::int64_t P = static_cast<std::int64_t>(OH) * OW;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(C) * H * W; ++i) x[i] = 0.0f;
    for (int c = 0; c < C; ++c) {
        for (int kr = 0; kr < k; ++kr) {
            for (int kc = 0; kc < k; ++kc) {
                const float* src = col + (static_cast<std::int64_t>(c) * k * k + kr * k + kc) * P;
                for (int orow = 0; orow < OH; ++orow) {
                    const int ir = orow * stride - pad + kr;
                    if (ir < 0 || ir >= H) continue;
                    float* dst = x + (static_cast<std::int64_t>(c) * H + ir) * W;
                    for (int ocol = 0; ocol < OW; ++ocol) {
                        const int ic = ocol * stride - pad + kc;
                        if (ic >= 0 && ic < W) dst[ic] += src[orow * OW + ocol];
                    }
                }
            }
        }
    }
}

}  // namespace detail

struct LayerCtx {
    Tensor in;   // cached input (leaky relu, tconv)
    Tensor col;  // cached im2col buffer (conv)
};

struct Layer {
    virtual ~Layer() = default;
    // ctx == nullptr runs a pure inference pass.
    virtual Tensor forward(const Tensor& x, LayerCtx* ctx) const = 0;
    virtual Tensor backward(const LayerCtx& ctx, const Tensor& gy) = 0;
    virtual void params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) {}
    virtual std::vector<int> out_shape(const std::vector<int>& in) const = 0;
};

struct Conv2d final : Layer {
    int in_ch, out_ch, ksize, stride, pad;
    Tensor w;   // [out_ch, in_ch*k*k]
    Tensor b;   // [out_ch]
    Tensor gw, gb;

    Conv2d(int in_c, int out_c, int k, int s, int p)
        : in_ch(in_c), out_ch(out_c), ksize(k), stride(s), pad(p),
          w(Tensor({out_c, in_c * k * k})), b(Tensor({out_c})),
          gw(Tensor({out_c, in_c * k * k})), gb(Tensor({out_c})) {}

    void init(Rng& rng, double leaky_slope) {
        const double fan_in = static_cast<double>(in_ch) * ksize * ksize;
        const double std = std::sqrt(2.0 / ((1.0 + leaky_slope * leaky_slope) * fan_in));
        for (auto& v : w.data) v = static_cast<float>(rng.normal() * std);
        b.zero();
    }

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        return {in[0], out_ch, conv_out_size(in[2], ksize, stride, pad),
                conv_out_size(in[3], ksize, stride, pad)};
    }

    Tensor forward(const Tensor& x, LayerCtx* ctx) const override {
        const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        if (x.dim(1) != in_ch) throw std::invalid_argument("conv input channel mismatch");
        const int OH = conv_out_size(H, ksize, stride, pad);
        const int OW = conv_out_size(W, ksize, stride, pad);
        const int ckk = in_ch * ksize * ksize;
        const std::int64_t P = static_cast<std::int64_t>(OH) * OW;

        Tensor y({N, out_ch, OH, OW});
        Tensor local_col;
        Tensor& col = ctx ? ctx->col : local_col;
        col = Tensor({N, ckk, static_cast<int>(P)});
        if (ctx) ctx->in = x;  // true input dims; backward cannot infer them for floor geometries
        for (int i = 0; i < N; ++i) {
            float* ci = col.ptr() + static_cast<std::int64_t>(i) * ckk * P;
            detail::im2col(x.ptr() + static_cast<std::int64_t>(i) * in_ch * H * W, in_ch, H, W,
                           ksize, stride, pad, ci);
            float* yi = y.ptr() + static_cast<std::int64_t>(i) * out_ch * P;
            gemm_nn(w.ptr(), ci, yi, out_ch, ckk, static_cast<int>(P));
            for (int oc = 0; oc < out_ch; ++oc) {
                const float bias = b.data[oc];
                float* row = yi + static_cast<std::int64_t>(oc) * P;
                for (std::int64_t t = 0; t < P; ++t) row[t] += bias;
            }
        }
        return y;
    }

    Tensor backward(const LayerCtx& ctx, const Tensor& gy) override {
        const int N = gy.dim(0), OH = gy.dim(2), OW = gy.dim(3);
        const int ckk = in_ch * ksize * ksize;
        const std::int64_t P = static_cast<std::int64_t>(OH) * OW;
        const int H = ctx.in.dim(2);
        const int W = ctx.in.dim(3);

        Tensor gx({N, in_ch, H, W});
        Tensor gcol({ckk, static_cast<int>(P)});
        for (int i = 0; i < N; ++i) {
            const float* gyi = gy.ptr() + static_cast<std::int64_t>(i) * out_ch * P;
            const float* ci = ctx.col.ptr() + static_cast<std::int64_t>(i) * ckk * P;
            gemm_nt(gyi, ci, gw.ptr(), out_ch, static_cast<int>(P), ckk, true);
            for (int oc = 0; oc < out_ch; ++oc) {
                const float* row = gyi + static_cast<std::int64_t>(oc) * P;
                double acc = 0.0;
                for (std::int64_t t = 0; t < P; ++t) acc += row[t];
                gb.data[oc] += static_cast<float>(acc);
            }
            gemm_tn(w.ptr(), gyi, gcol.ptr(), out_ch, ckk, static_cast<int>(P));
            detail::col2im(gcol.ptr(), in_ch, H, W, ksize, stride, pad,
                           gx.ptr() + static_cast<std::int64_t>(i) * in_ch * H * W);
        }
        return gx;
    }

    void params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) override {
        ps.push_back(&w);
        ps.push_back(&b);
        gs.push_back(&gw);
        gs.push_back(&gb);
    }
};

struct ConvTranspose2d final : Layer {
    int in_ch, out_ch, ksize, stride, pad;
    Tensor w;   // [in_ch, out_ch*k*k]
    Tensor b;   // [out_ch]
    Tensor gw, gb;

    ConvTranspose2d(int in_c, int out_c, int k, int s, int p)
        : in_ch(in_c), out_ch(out_c), ksize(k), stride(s), pad(p),
          w(Tensor({in_c, out_c * k * k})), b(Tensor({out_c})),
          gw(Tensor({in_c, out_c * k * k})), gb(Tensor({out_c})) {}

    // fan_override: taps feeding one output pixel, when the default
    // k^2/s^2 estimate is wrong (e.g. expanding a 1x1 bottleneck)
    void init(Rng& rng, double leaky_slope, double fan_override = 0.0) {
        const double fan =
            fan_override > 0.0
                ? fan_override
                : std::max(1.0, static_cast<double>(in_ch) * ksize * ksize / (stride * stride));
        const double std = std::sqrt(2.0 / ((1.0 + leaky_slope * leaky_slope) * fan));
        for (auto& v : w.data) v = static_cast<float>(rng.normal() * std);
        b.zero();
    }

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        return {in[0], out_ch, tconv_out_size(in[2], ksize, stride, pad),
                tconv_out_size(in[3], ksize, stride, pad)};
    }

    Tensor forward(const Tensor& x, LayerCtx* ctx) const override {
        const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        if (x.dim(1) != in_ch) throw std::invalid_argument("tconv input channel mismatch");
        const int OH = tconv_out_size(H, ksize, stride, pad);
        const int OW = tconv_out_size(W, ksize, stride, pad);
        const int ockk = out_ch * ksize * ksize;
        const std::int64_t Pin = static_cast<std::int64_t>(H) * W;

        if (ctx) ctx->in = x;
        Tensor y({N, out_ch, OH, OW});
        Tensor col({ockk, static_cast<int>(Pin)});
        for (int i = 0; i < N; ++i) {
            const float* xi = x.ptr() + static_cast<std::int64_t>(i) * in_ch * Pin;
            gemm_tn(w.ptr(), xi, col.ptr(), in_ch, ockk, static_cast<int>(Pin));
            float* yi = y.ptr() + static_cast<std::int64_t>(i) * out_ch * OH * OW;
            detail::col2im(col.ptr(), out_ch, OH, OW, ksize, stride, pad, yi);
            for (int oc = 0; oc < out_ch; ++oc) {
                const float bias = b.data[oc];
                float* row = yi + static_cast<std::int64_t>(oc) * OH * OW;
                for (std::int64_t t = 0; t < static_cast<std::int64_t>(OH) * OW; ++t) row[t] += bias;
            }
        }
        return y;
    }

    Tensor backward(const LayerCtx& ctx, const Tensor& gy) override {
        const Tensor& x = ctx.in;
        const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        const int OH = gy.dim(2), OW = gy.dim(3);
        const int ockk = out_ch * ksize * ksize;
        const std::int64_t Pin = static_cast<std::int64_t>(H) * W;

        Tensor gx({N, in_ch, H, W});
        Tensor gcol({ockk, static_cast<int>(Pin)});
        for (int i = 0; i < N; ++i) {
            const float* gyi = gy.ptr() + static_cast<std::int64_t>(i) * out_ch * OH * OW;
            const float* xi = x.ptr() + static_cast<std::int64_t>(i) * in_ch * Pin;
            detail::im2col(gyi, out_ch, OH, OW, ksize, stride, pad, gcol.ptr());
            gemm_nn(w.ptr(), gcol.ptr(), gx.ptr() + static_cast<std::int64_t>(i) * in_ch * Pin,
                    in_ch, ockk, static_cast<int>(Pin));
            gemm_nt(xi, gcol.ptr(), gw.ptr(), in_ch, static_cast<int>(Pin), ockk, true);
            for (int oc = 0; oc < out_ch; ++oc) {
                const float* row = gyi + static_cast<std::int64_t>(oc) * OH * OW;
                double acc = 0.0;
                for (std::int64_t t = 0; t < static_cast<std::int64_t>(OH) * OW; ++t) acc += row[t];
                gb.data[oc] += static_cast<float>(acc);
            }
        }
        return gx;
    }

    void params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) override {
        ps.push_back(&w);
        ps.push_back(&b);
        gs.push_back(&gw);
        gs.push_back(&gb);
    }
};

struct LeakyReLU final : Layer {
    float slope;

    explicit LeakyReLU(float s) : slope(s) {}

    std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }

    Tensor forward(const Tensor& x, LayerCtx* ctx) const override {
        if (ctx) ctx->in = x;
        Tensor y = x;
        for (auto& v : y.data)
            if (v < 0.0f) v *= slope;
        return y;
    }

    Tensor backward(const LayerCtx& ctx, const Tensor& gy) override {
        Tensor gx = gy;
        for (std::int64_t i = 0; i < gx.numel(); ++i)
            if (ctx.in.data[i] < 0.0f) gx.data[i] *= slope;
        return gx;
    }
};

struct Sequential {
    std::vector<std::unique_ptr<Layer>> layers;

    Tensor forward(const Tensor& x, std::vector<LayerCtx>* tape = nullptr) const {
        if (tape) tape->resize(layers.size());
        Tensor cur = x;
        for (size_t i = 0; i < layers.size(); ++i)
            cur = layers[i]->forward(cur, tape ? &(*tape)[i] : nullptr);
        return cur;
    }

    Tensor backward(const std::vector<LayerCtx>& tape, const Tensor& gy) {
        Tensor cur = gy;
        for (size_t i = layers.size(); i-- > 0;) cur = layers[i]->backward(tape[i], cur);
        return cur;
    }

    void params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) {
        for (auto& l : layers) l->params(ps, gs);
    }

    void zero_grad() {
        std::vector<Tensor*> ps, gs;
        params(ps, gs);
        for (auto* g : gs) g->zero();
    }

    std::vector<int> trace_shape(std::vector<int> in) const {
        for (const auto& l : layers) in = l->out_shape(in);
        return in;
    }
};

}  // namespace texseg
