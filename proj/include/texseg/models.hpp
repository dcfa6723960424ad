#pragma once

// The encoder/decoder pair shared by all tested architectures, the three
// autoencoder variants (deterministic, variational, feature matching) and
// checkpoint serialization.
//
// Encoder layout (128x128x1 input):
//   conv 4x4/2/1 -> 64x64x32,  conv 4x4/2/1 -> 32x32x32, conv 3x3/1/1 -> 32x32x32,
//   conv 4x4/2/1 -> 16x16x64,  conv 3x3/1/1 -> 16x16x64, conv 4x4/2/1 -> 8x8x128,
//   conv 3x3/1/1 -> 8x8x64,    conv 3x3/1/1 -> 8x8x32,   conv 8x8/1/0 -> 1x1xd.
// Leaky ReLU (slope 0.2) after every layer except the bottleneck and the
// decoder output, which are linear. The decoder mirrors the table with
// transposed convolutions. The variational encoder emits 2d channels at the
// bottleneck, split into mean and log-variance.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "texseg/image.hpp"
#include "texseg/nn.hpp"
#include "texseg/rng.hpp"
#include "texseg/ssim.hpp"

namespace texseg {

enum class Variant { AE, VAE, FM };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::AE: return "ae";
        case Variant::VAE: return "vae";
        case Variant::FM: return "fm";
    }
    return "?";
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "ae") return Variant::AE;
    if (s == "vae") return Variant::VAE;
    if (s == "fm") return Variant::FM;
    throw std::invalid_argument("unknown model variant '" + s + "' (valid: ae, vae, fm)");
}

struct ModelSpec {
    int latent_dim = 100;
    Variant variant = Variant::AE;
    int input_size = 128;
    float leaky_slope = 0.2f;
    float fm_lambda = 1.0f;   // FM only
    int vae_samples = 6;      // VAE only

    void check() const {
        if (latent_dim < 1) throw std::invalid_argument("latent dimension must be >= 1");
        if (input_size != 128)
            throw std::invalid_argument("architecture is fixed to 128x128 inputs");
        if (variant == Variant::FM && !(fm_lambda > 0.0f))
            throw std::invalid_argument("feature-matching weight must be positive");
        if (variant == Variant::VAE && vae_samples < 1)
            throw std::invalid_argument("vae sample count must be >= 1");
    }
};

struct VaePosterior {
    std::vector<float> mean;
    std::vector<float> log_var;

    int latent_dim() const { return static_cast<int>(mean.size()); }
};

namespace detail {

struct ConvCfg {
    int out_ch, k, s, p;
};

inline constexpr ConvCfg kEncoderConvs[8] = {{32, 4, 2, 1}, {32, 4, 2, 1}, {32, 3, 1, 1},
                                             {64, 4, 2, 1}, {64, 3, 1, 1}, {128, 4, 2, 1},
                                             {64, 3, 1, 1}, {32, 3, 1, 1}};

}  // namespace detail

inline Sequential build_encoder(const ModelSpec& spec, std::uint64_t seed = 0) {
    spec.check();
    Rng rng(derive_seed(seed, 0xe0c0de));
    Sequential net;
    int in_ch = 1;
    for (const auto& cfg : detail::kEncoderConvs) {
        auto conv = std::make_unique<Conv2d>(in_ch, cfg.out_ch, cfg.k, cfg.s, cfg.p);
        conv->init(rng, spec.leaky_slope);
        in_ch = cfg.out_ch;
        net.layers.push_back(std::move(conv));
        net.layers.push_back(std::make_unique<LeakyReLU>(spec.leaky_slope));
    }
    const int bottleneck = spec.variant == Variant::VAE ? 2 * spec.latent_dim : spec.latent_dim;
    auto conv9 = std::make_unique<Conv2d>(in_ch, bottleneck, 8, 1, 0);
    conv9->init(rng, 0.0);  // linear output
    net.layers.push_back(std::move(conv9));
    return net;
}

inline Sequential build_decoder(const ModelSpec& spec, std::uint64_t seed = 0) {
    spec.check();
    Rng rng(derive_seed(seed, 0xdec0de));
    Sequential net;
    auto first = std::make_unique<ConvTranspose2d>(spec.latent_dim, 32, 8, 1, 0);
    first->init(rng, spec.leaky_slope, spec.latent_dim);  // 1x1 input: one tap per channel
    net.layers.push_back(std::move(first));
    net.layers.push_back(std::make_unique<LeakyReLU>(spec.leaky_slope));
    int in_ch = 32;
    for (int i = 7; i >= 0; --i) {
        const auto& cfg = detail::kEncoderConvs[i];
        const int out_ch = i == 0 ? 1 : detail::kEncoderConvs[i - 1].out_ch;
        auto t = std::make_unique<ConvTranspose2d>(cfg.out_ch, out_ch, cfg.k, cfg.s, cfg.p);
        if (t->in_ch != in_ch) throw std::logic_error("decoder channel mirror broken");
        t->init(rng, i == 0 ? 0.0 : spec.leaky_slope);
        if (i == 0) t->b.data[0] = 0.5f;  // start at the intensity midpoint
        in_ch = out_ch;
        net.layers.push_back(std::move(t));
        if (i != 0) net.layers.push_back(std::make_unique<LeakyReLU>(spec.leaky_slope));
    }
    return net;
}

// --- Image/tensor adapters --------------------------------------------------

inline Tensor images_to_tensor(const std::vector<Image>& batch) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    const int h = batch[0].height, w = batch[0].width;
    Tensor t({static_cast<int>(batch.size()), 1, h, w});
    for (size_t i = 0; i < batch.size(); ++i) {
        if (batch[i].height != h || batch[i].width != w)
            throw std::invalid_argument("batch images must share a shape");
        std::copy(batch[i].data.begin(), batch[i].data.end(),
                  t.data.begin() + static_cast<std::int64_t>(i) * h * w);
    }
    return t;
}

inline Image tensor_slice_to_image(const Tensor& t, int index, bool clamp_unit) {
    const int h = t.dim(2), w = t.dim(3);
    Image img(h, w);
    const float* src = t.ptr() + static_cast<std::int64_t>(index) * t.dim(1) * h * w;
    for (size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = clamp_unit ? std::clamp(src[i], 0.0f, 1.0f) : src[i];
    return img;
}

// --- Autoencoder -------------------------------------------------------------

struct Autoencoder {
    ModelSpec spec;
    Sequential encoder;
    Sequential decoder;

    static Autoencoder build(const ModelSpec& spec, std::uint64_t seed) {
        spec.check();
        Autoencoder net;
        net.spec = spec;
        net.encoder = build_encoder(spec, seed);
        net.decoder = build_decoder(spec, seed);
        return net;
    }

    void check_input(const Tensor& x) const {
        if (x.dim(1) != 1 || x.dim(2) != spec.input_size || x.dim(3) != spec.input_size)
            throw std::invalid_argument("expected " + std::to_string(spec.input_size) + "x" +
                                        std::to_string(spec.input_size) + " single-channel patches");
    }

    // Deterministic latent codes; for the VAE this is the posterior mean.
    Tensor encode(const Tensor& x, std::vector<LayerCtx>* tape = nullptr) const {
        check_input(x);
        return encoder.forward(x, tape);
    }

    Tensor decode(const Tensor& z, std::vector<LayerCtx>* tape = nullptr) const {
        return decoder.forward(z, tape);
    }

    // Unclamped reconstruction used by the training path.
    Tensor forward_train(const Tensor& x, std::vector<LayerCtx>& enc_tape,
                         std::vector<LayerCtx>& dec_tape) const {
        Tensor z = encode(x, &enc_tape);
        if (spec.variant == Variant::VAE) {
            Tensor mean({z.dim(0), spec.latent_dim, 1, 1});
            for (int i = 0; i < z.dim(0); ++i)
                std::copy_n(z.ptr() + static_cast<std::int64_t>(i) * 2 * spec.latent_dim,
                            spec.latent_dim, mean.ptr() + static_cast<std::int64_t>(i) * spec.latent_dim);
            return decode(mean, &dec_tape);
        }
        return decode(z, &dec_tape);
    }

    // Inference-time reconstruction, clamped to [0,1]. For the VAE the
    // posterior mean is decoded.
    std::vector<Image> reconstruct(const std::vector<Image>& patches) const {
        Tensor x = images_to_tensor(patches);
        check_input(x);
        Tensor z = encoder.forward(x, nullptr);
        if (spec.variant == Variant::VAE) {
            Tensor mean({z.dim(0), spec.latent_dim, 1, 1});
            for (int i = 0; i < z.dim(0); ++i)
                std::copy_n(z.ptr() + static_cast<std::int64_t>(i) * 2 * spec.latent_dim,
                            spec.latent_dim, mean.ptr() + static_cast<std::int64_t>(i) * spec.latent_dim);
            z = std::move(mean);
        }
        const Tensor y = decoder.forward(z, nullptr);
        std::vector<Image> out;
        out.reserve(patches.size());
        for (size_t i = 0; i < patches.size(); ++i)
            out.push_back(tensor_slice_to_image(y, static_cast<int>(i), true));
        return out;
    }

    Image reconstruct_one(const Image& patch) const { return reconstruct({patch})[0]; }

    void params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) {
        encoder.params(ps, gs);
        decoder.params(ps, gs);
    }

    void zero_grad() {
        encoder.zero_grad();
        decoder.zero_grad();
    }
};

// --- VAE operations ----------------------------------------------------------

inline std::vector<VaePosterior> vae_encode(const Autoencoder& net, const std::vector<Image>& batch) {
    if (net.spec.variant != Variant::VAE)
        throw std::invalid_argument("vae_encode requires a vae model");
    const Tensor z = net.encode(images_to_tensor(batch));
    const int d = net.spec.latent_dim;
    std::vector<VaePosterior> out(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        const float* zi = z.ptr() + static_cast<std::int64_t>(i) * 2 * d;
        out[i].mean.assign(zi, zi + d);
        out[i].log_var.assign(zi + d, zi + 2 * d);
    }
    return out;
}

// Reparameterized draws: z_i = mean + exp(log_var / 2) * eps_i.
inline std::vector<std::vector<float>> vae_sample(const VaePosterior& post, int n,
                                                  std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample count must be >= 1");
    const int d = post.latent_dim();
    Rng rng(seed);
    std::vector<std::vector<float>> zs(n, std::vector<float>(d));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            zs[i][j] = static_cast<float>(post.mean[j] +
                                          std::exp(0.5 * post.log_var[j]) * rng.normal());
    return zs;
}

// Closed-form KL(Q(z|x) || N(0, I)) summed over latent dimensions.
inline double kl_score(const VaePosterior& post) {
    double acc = 0.0;
    for (int j = 0; j < post.latent_dim(); ++j) {
        const double mu = post.mean[j];
        const double lv = post.log_var[j];
        acc += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
    }
    return acc;
}

// Per-pixel reconstruction probability map: mean squared deviation of the
// input from n decoded posterior samples. n = 1 reduces to the l2 residual of
// the single decoded sample.
inline ResidualMap vae_residual(const Autoencoder& net, const Image& x, int n, std::uint64_t seed) {
    if (net.spec.variant != Variant::VAE)
        throw std::invalid_argument("vae_residual requires a vae model");
    if (n < 1) throw std::invalid_argument("sample count must be >= 1");
    const VaePosterior post = vae_encode(net, {x})[0];
    const auto zs = vae_sample(post, n, seed);
    const int d = net.spec.latent_dim;
    Tensor z({n, d, 1, 1});
    for (int i = 0; i < n; ++i) std::copy(zs[i].begin(), zs[i].end(), z.ptr() + static_cast<std::int64_t>(i) * d);
    const Tensor y = net.decode(z);
    ResidualMap res(x.height, x.width);
    for (size_t pix = 0; pix < x.pixels(); ++pix) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const float rec = std::clamp(y.data[static_cast<std::int64_t>(i) * x.pixels() + pix], 0.0f, 1.0f);
            const float diff = x.data[pix] - rec;  // float difference, as in l2_residual
            acc += static_cast<double>(diff) * diff;
        }
        res.scores[pix] = static_cast<float>(acc / n);
    }
    return res;
}

struct VaeLoss {
    double total = 0.0;
    double recon = 0.0;
    double kl = 0.0;
};

// Single-sample reparameterized objective for one image given its posterior,
// with the decoder held fixed: L2 reconstruction of the decoded sample plus
// closed-form KL to the unit Gaussian prior. Optionally returns gradients
// with respect to the posterior parameters. The decoder may be any network
// mapping [1,d,1,1] to [1,1,H,W].
inline VaeLoss vae_loss_given_posterior(Sequential& decoder, const Image& x,
                                        const VaePosterior& post, std::uint64_t seed,
                                        std::vector<float>* grad_mean = nullptr,
                                        std::vector<float>* grad_log_var = nullptr) {
    const int d = post.latent_dim();
    Rng rng(seed);
    std::vector<double> eps(d);
    for (auto& e : eps) e = rng.normal();

    Tensor z({1, d, 1, 1});
    for (int j = 0; j < d; ++j)
        z.data[j] = static_cast<float>(post.mean[j] + std::exp(0.5 * post.log_var[j]) * eps[j]);

    std::vector<LayerCtx> tape;
    const bool want_grad = grad_mean || grad_log_var;
    const Tensor xhat = decoder.forward(z, want_grad ? &tape : nullptr);
    if (xhat.dim(2) != x.height || xhat.dim(3) != x.width)
        throw std::invalid_argument("decoder output shape does not match the image");

    VaeLoss loss;
    Tensor gxhat(xhat.shape);
    for (size_t i = 0; i < x.pixels(); ++i) {
        const double diff = static_cast<double>(xhat.data[i]) - x.data[i];
        loss.recon += diff * diff;
        gxhat.data[i] = static_cast<float>(2.0 * diff);
    }
    loss.kl = kl_score(post);
    loss.total = loss.recon + loss.kl;

    if (want_grad) {
        const Tensor gz = decoder.backward(tape, gxhat);
        decoder.zero_grad();  // parameters are not the differentiation target here
        if (grad_mean) {
            grad_mean->resize(d);
            for (int j = 0; j < d; ++j)
                (*grad_mean)[j] = gz.data[j] + static_cast<float>(post.mean[j]);
        }
        if (grad_log_var) {
            grad_log_var->resize(d);
            for (int j = 0; j < d; ++j) {
                const double lv = post.log_var[j];
                const double dz = gz.data[j] * 0.5 * std::exp(0.5 * lv) * eps[j];
                (*grad_log_var)[j] = static_cast<float>(dz + 0.5 * (std::exp(lv) - 1.0));
            }
        }
    }
    return loss;
}

// Batch objective: mean over images of (sum-of-squares reconstruction of one
// reparameterized sample + KL). Value only; the training loop implements the
// full backward pass.
inline VaeLoss vae_loss(const Autoencoder& net, const std::vector<Image>& x, std::uint64_t seed) {
    if (net.spec.variant != Variant::VAE)
        throw std::invalid_argument("vae_loss requires a vae model");
    const auto posteriors = vae_encode(net, x);
    const int d = net.spec.latent_dim;
    Rng rng(seed);
    Tensor z({static_cast<int>(x.size()), d, 1, 1});
    VaeLoss loss;
    for (size_t b = 0; b < x.size(); ++b) {
        for (int j = 0; j < d; ++j)
            z.data[static_cast<std::int64_t>(b) * d + j] =
                static_cast<float>(posteriors[b].mean[j] +
                                   std::exp(0.5 * posteriors[b].log_var[j]) * rng.normal());
        loss.kl += kl_score(posteriors[b]);
    }
    const Tensor xhat = net.decode(z);
    for (size_t b = 0; b < x.size(); ++b) {
        const float* rec = xhat.ptr() + static_cast<std::int64_t>(b) * x[b].pixels();
        for (size_t i = 0; i < x[b].pixels(); ++i) {
            const double diff = static_cast<double>(rec[i]) - x[b].data[i];
            loss.recon += diff * diff;
        }
    }
    const double inv_b = 1.0 / static_cast<double>(x.size());
    loss.recon *= inv_b;
    loss.kl *= inv_b;
    loss.total = loss.recon + loss.kl;
    return loss;
}

// --- Feature extractor and feature-matching loss ------------------------------

struct FeatureExtractor {
    struct LayerCfg {
        int in_ch, out_ch, k, s, p;
    };
    std::vector<LayerCfg> cfg;
    Sequential net;
    int input_size = 128;

    // Fixed, seeded three-layer conv stack; stands in when no pretrained
    // weights are supplied. A weight file in the checkpoint container can
    // replace it.
    static FeatureExtractor make_default(std::uint64_t seed) {
        FeatureExtractor fe;
        fe.cfg = {{1, 16, 5, 2, 2}, {16, 32, 5, 2, 2}, {32, 64, 3, 2, 1}};
        Rng rng(derive_seed(seed, 0xfea7));
        for (const auto& lc : fe.cfg) {
            auto conv = std::make_unique<Conv2d>(lc.in_ch, lc.out_ch, lc.k, lc.s, lc.p);
            conv->init(rng, 0.0);
            fe.net.layers.push_back(std::move(conv));
            fe.net.layers.push_back(std::make_unique<LeakyReLU>(0.0f));
        }
        return fe;
    }

    int output_dim() const {
        auto s = net.trace_shape({1, 1, input_size, input_size});
        return s[1] * s[2] * s[3];
    }

    // Accepts single-channel batches; replicates the channel if the stack
    // expects more.
    Tensor prepare(const Tensor& x) const {
        const int want = cfg.front().in_ch;
        if (x.dim(1) == want) return x;
        if (x.dim(1) != 1) throw std::invalid_argument("feature extractor channel mismatch");
        Tensor rep({x.dim(0), want, x.dim(2), x.dim(3)});
        const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
        for (int i = 0; i < x.dim(0); ++i)
            for (int c = 0; c < want; ++c)
                std::copy_n(x.ptr() + i * plane, plane,
                            rep.ptr() + (static_cast<std::int64_t>(i) * want + c) * plane);
        return rep;
    }

    Tensor features(const Tensor& x, std::vector<LayerCtx>* tape = nullptr) const {
        return net.forward(prepare(x), tape);
    }
};

struct FmLossTerms {
    double total = 0.0;
    double l2_term = 0.0;
    double fm_term = 0.0;  // unweighted feature distance
};

// L2(x, x_hat) + lambda * ||F(x) - F(x_hat)||^2, batch-averaged. Extractor
// weights stay frozen; the gradient flows through the extractor into x_hat.
inline FmLossTerms fm_loss(FeatureExtractor& extractor, const std::vector<Image>& x,
                           const std::vector<Image>& x_hat, double lambda,
                           std::vector<std::vector<float>>* grads = nullptr) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
    FmLossTerms terms;
    terms.l2_term = l2_loss(x, x_hat, grads);

    const Tensor tx = images_to_tensor(x);
    Tensor txh = images_to_tensor(x_hat);
    const Tensor fx = extractor.features(tx);
    std::vector<LayerCtx> tape;
    const Tensor fxh = extractor.features(txh, grads ? &tape : nullptr);

    const double inv_b = 1.0 / static_cast<double>(x.size());
    double acc = 0.0;
    for (std::int64_t i = 0; i < fx.numel(); ++i) {
        const double d = static_cast<double>(fxh.data[i]) - fx.data[i];
        acc += d * d;
    }
    terms.fm_term = acc * inv_b;
    terms.total = terms.l2_term + lambda * terms.fm_term;

    if (grads) {
        Tensor gfeat(fxh.shape);
        for (std::int64_t i = 0; i < gfeat.numel(); ++i)
            gfeat.data[i] = static_cast<float>(2.0 * (static_cast<double>(fxh.data[i]) - fx.data[i]) *
                                               inv_b * lambda);
        const Tensor gin = extractor.net.backward(tape, gfeat);
        extractor.net.zero_grad();  // frozen; discard parameter gradients
        const std::int64_t plane = static_cast<std::int64_t>(gin.dim(2)) * gin.dim(3);
        for (size_t b = 0; b < x.size(); ++b) {
            float* g = (*grads)[b].data();
            // sum over the replicated channels
            for (int c = 0; c < gin.dim(1); ++c) {
                const float* gi = gin.ptr() + (static_cast<std::int64_t>(b) * gin.dim(1) + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) g[i] += gi[i];
            }
        }
    }
    return terms;
}

// --- Checkpoints --------------------------------------------------------------

struct TrainingMeta {
    int epochs_completed = 0;
    std::uint64_t seed = 0;
    std::string loss_type = "l2";
};

struct NamedBlob {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

struct Checkpoint {
    ModelSpec spec;
    TrainingMeta meta;
    std::vector<NamedBlob> blobs;
};

namespace detail {

inline void collect_blobs(Sequential& net, const std::string& prefix, std::vector<NamedBlob>& out) {
    int conv_idx = 0;
    for (auto& layer : net.layers) {
        std::vector<Tensor*> ps, gs;
        layer->params(ps, gs);
        if (ps.empty()) continue;
        ++conv_idx;
        const char* names[2] = {"w", "b"};
        for (size_t i = 0; i < ps.size(); ++i)
            out.push_back({prefix + "." + std::to_string(conv_idx) + "." + names[i], ps[i]->shape,
                           ps[i]->data});
    }
}

inline void restore_blobs(Sequential& net, const std::string& prefix,
                          const std::vector<NamedBlob>& blobs) {
    int conv_idx = 0;
    for (auto& layer : net.layers) {
        std::vector<Tensor*> ps, gs;
        layer->params(ps, gs);
        if (ps.empty()) continue;
        ++conv_idx;
        const char* names[2] = {"w", "b"};
        for (size_t i = 0; i < ps.size(); ++i) {
            const std::string want = prefix + "." + std::to_string(conv_idx) + "." + names[i];
            const NamedBlob* found = nullptr;
            for (const auto& blob : blobs)
                if (blob.name == want) {
                    found = &blob;
                    break;
                }
            if (!found) throw std::runtime_error("checkpoint missing tensor " + want);
            if (found->shape != ps[i]->shape || found->data.size() != ps[i]->data.size())
                throw std::runtime_error("checkpoint tensor shape mismatch for " + want);
            ps[i]->data = found->data;
        }
    }
}

struct BinWriter {
    std::FILE* f;
    explicit BinWriter(const std::string& path) : f(std::fopen(path.c_str(), "wb")) {
        if (!f) throw std::runtime_error("cannot open file for writing: " + path);
    }
    ~BinWriter() {
        if (f) std::fclose(f);
    }
    void close_checked(const std::string& path) {
        const bool ok = std::fclose(f) == 0;
        f = nullptr;
        if (!ok) throw std::runtime_error("write failed: " + path);
    }
    void bytes(const void* p, size_t n) {
        if (std::fwrite(p, 1, n, f) != n) throw std::runtime_error("checkpoint write failed");
    }
    template <typename T>
    void pod(const T& v) {
        bytes(&v, sizeof(T));
    }
    void str(const std::string& s) {
        const std::uint16_t n = static_cast<std::uint16_t>(s.size());
        pod(n);
        bytes(s.data(), n);
    }
};

struct BinReader {
    std::FILE* f;
    std::string path;
    explicit BinReader(const std::string& p) : f(std::fopen(p.c_str(), "rb")), path(p) {
        if (!f) throw std::runtime_error("cannot open file: " + p);
    }
    ~BinReader() {
        if (f) std::fclose(f);
    }
    void bytes(void* p, size_t n) {
        if (std::fread(p, 1, n, f) != n)
            throw std::runtime_error("corrupt or truncated file: " + path);
    }
    template <typename T>
    T pod() {
        T v;
        bytes(&v, sizeof(T));
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint16_t>();
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
};

inline void write_blob(BinWriter& w, const NamedBlob& blob) {
    w.str(blob.name);
    const std::uint8_t ndim = static_cast<std::uint8_t>(blob.shape.size());
    w.pod(ndim);
    for (int d : blob.shape) w.pod(static_cast<std::int32_t>(d));
    const std::uint64_t n = blob.data.size();
    w.pod(n);
    if (n) w.bytes(blob.data.data(), n * sizeof(float));
}

inline NamedBlob read_blob(BinReader& r) {
    NamedBlob blob;
    blob.name = r.str();
    const auto ndim = r.pod<std::uint8_t>();
    std::int64_t numel = 1;
    for (int i = 0; i < ndim; ++i) {
        blob.shape.push_back(r.pod<std::int32_t>());
        numel *= blob.shape.back();
    }
    const auto n = r.pod<std::uint64_t>();
    if (static_cast<std::int64_t>(n) != numel)
        throw std::runtime_error("corrupt blob header in " + r.path);
    blob.data.resize(n);
    if (n) r.bytes(blob.data.data(), n * sizeof(float));
    return blob;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline Checkpoint snapshot(Autoencoder& net, const TrainingMeta& meta) {
    Checkpoint ckpt;
    ckpt.spec = net.spec;
    ckpt.meta = meta;
    detail::collect_blobs(net.encoder, "enc", ckpt.blobs);
    detail::collect_blobs(net.decoder, "dec", ckpt.blobs);
    return ckpt;
}

inline Autoencoder restore_model(const Checkpoint& ckpt) {
    Autoencoder net = Autoencoder::build(ckpt.spec, 0);
    detail::restore_blobs(net.encoder, "enc", ckpt.blobs);
    detail::restore_blobs(net.decoder, "dec", ckpt.blobs);
    return net;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    detail::BinWriter w(path);
    w.bytes("TSCK", 4);
    w.pod(kCheckpointVersion);
    w.pod(static_cast<std::uint8_t>(ckpt.spec.variant));
    w.pod(static_cast<std::int32_t>(ckpt.spec.latent_dim));
    w.pod(static_cast<std::int32_t>(ckpt.spec.input_size));
    w.pod(ckpt.spec.leaky_slope);
    w.pod(ckpt.spec.fm_lambda);
    w.pod(static_cast<std::int32_t>(ckpt.spec.vae_samples));
    w.pod(static_cast<std::int32_t>(ckpt.meta.epochs_completed));
    w.pod(ckpt.meta.seed);
    w.str(ckpt.meta.loss_type);
    w.pod(static_cast<std::uint32_t>(ckpt.blobs.size()));
    for (const auto& blob : ckpt.blobs) detail::write_blob(w, blob);
    w.close_checked(path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    detail::BinReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "TSCK", 4) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                                 " in " + path);
    Checkpoint ckpt;
    ckpt.spec.variant = static_cast<Variant>(r.pod<std::uint8_t>());
    ckpt.spec.latent_dim = r.pod<std::int32_t>();
    ckpt.spec.input_size = r.pod<std::int32_t>();
    ckpt.spec.leaky_slope = r.pod<float>();
    ckpt.spec.fm_lambda = r.pod<float>();
    ckpt.spec.vae_samples = r.pod<std::int32_t>();
    ckpt.meta.epochs_completed = r.pod<std::int32_t>();
    ckpt.meta.seed = r.pod<std::uint64_t>();
    ckpt.meta.loss_type = r.str();
    const auto n_blobs = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_blobs; ++i) ckpt.blobs.push_back(detail::read_blob(r));
    ckpt.spec.check();
    return ckpt;
}

// Feature-extractor weight files share the blob container.
inline void save_extractor(const FeatureExtractor& fe, const std::string& path) {
    detail::BinWriter w(path);
    w.bytes("TSFX", 4);
    w.pod(kCheckpointVersion);
    w.pod(static_cast<std::int32_t>(fe.input_size));
    w.pod(static_cast<std::uint32_t>(fe.cfg.size()));
    for (const auto& lc : fe.cfg) {
        w.pod(static_cast<std::int32_t>(lc.in_ch));
        w.pod(static_cast<std::int32_t>(lc.out_ch));
        w.pod(static_cast<std::int32_t>(lc.k));
        w.pod(static_cast<std::int32_t>(lc.s));
        w.pod(static_cast<std::int32_t>(lc.p));
    }
    std::vector<NamedBlob> blobs;
    detail::collect_blobs(const_cast<Sequential&>(fe.net), "fx", blobs);
    w.pod(static_cast<std::uint32_t>(blobs.size()));
    for (const auto& blob : blobs) detail::write_blob(w, blob);
    w.close_checked(path);
}

inline FeatureExtractor load_extractor(const std::string& path) {
    detail::BinReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "TSFX", 4) != 0)
        throw std::runtime_error("not an extractor weight file: " + path);
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported extractor file version in " + path);
    FeatureExtractor fe;
    fe.input_size = r.pod<std::int32_t>();
    const auto n_layers = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        FeatureExtractor::LayerCfg lc{};
        lc.in_ch = r.pod<std::int32_t>();
        lc.out_ch = r.pod<std::int32_t>();
        lc.k = r.pod<std::int32_t>();
        lc.s = r.pod<std::int32_t>();
        lc.p = r.pod<std::int32_t>();
        fe.cfg.push_back(lc);
        fe.net.layers.push_back(std::make_unique<Conv2d>(lc.in_ch, lc.out_ch, lc.k, lc.s, lc.p));
        fe.net.layers.push_back(std::make_unique<LeakyReLU>(0.0f));
    }
    std::vector<NamedBlob> blobs;
    const auto n_blobs = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_blobs; ++i) blobs.push_back(detail::read_blob(r));
    detail::restore_blobs(fe.net, "fx", blobs);
    return fe;
}

}  // namespace texseg
