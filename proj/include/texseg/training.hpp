#pragma once

// Reproducible training: up-front seeded patch sampling, ADAM with L2 weight
// decay folded into the gradient (decoupled decay available as an option),
// per-epoch logging and periodic checkpoints. Deterministic for a fixed seed.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "texseg/image.hpp"
#include "texseg/manifest.hpp"
#include "texseg/models.hpp"
#include "texseg/rng.hpp"
#include "texseg/ssim.hpp"

namespace texseg {

enum class LossKind { L2, SSIM, VAE, FM };

inline std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::L2: return "l2";
        case LossKind::SSIM: return "ssim";
        case LossKind::VAE: return "vae";
        case LossKind::FM: return "fm";
    }
    return "?";
}

inline LossKind loss_from_string(const std::string& s) {
    if (s == "l2") return LossKind::L2;
    if (s == "ssim") return LossKind::SSIM;
    if (s == "vae") return LossKind::VAE;
    if (s == "fm") return LossKind::FM;
    throw std::invalid_argument("unknown loss '" + s + "' (valid: l2, ssim, vae, fm)");
}

struct TrainConfig {
    int epochs = 200;
    int batch_size = 64;
    double learning_rate = 2e-4;
    double weight_decay = 1e-5;
    int patch_count = 10000;
    int patch_size = 128;
    LossKind loss = LossKind::L2;
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;
    bool resample_per_epoch = false;     // default: one fixed patch set for all epochs
    bool decoupled_weight_decay = false;
    int checkpoint_every = 50;
    int downscale_to = 0;                // 0 = crop at native resolution
    SsimParams ssim;
    std::string extractor_weights;       // FM only; empty = seeded default stack

    void check(const ModelSpec& spec) const {
        if (epochs < 1 || batch_size < 1 || patch_count < 1 || patch_size < 1)
            throw std::invalid_argument("training counts must be positive");
        if (!(learning_rate > 0.0) || !(weight_decay >= 0.0))
            throw std::invalid_argument("bad optimizer hyperparameters");
        if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
            throw std::invalid_argument("validation fraction must lie in [0,1)");
        if (patch_size != spec.input_size)
            throw std::invalid_argument("patch size must match the model input size");
        const bool ok = (loss == LossKind::VAE) == (spec.variant == Variant::VAE) &&
                        (loss == LossKind::FM) == (spec.variant == Variant::FM);
        if (!ok)
            throw std::invalid_argument("loss '" + to_string(loss) +
                                        "' is inconsistent with model variant '" +
                                        to_string(spec.variant) + "'");
    }
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    std::string final_checkpoint;
};

inline void write_train_log_line(std::ostream& os, const EpochRecord& r) {
    os << "epoch " << r.epoch << " train " << r.train_loss << " val " << r.val_loss << " sec "
       << r.seconds << "\n";
}

inline void write_train_log(const TrainLog& log, std::ostream& os) {
    os.precision(9);
    for (const auto& r : log.epochs) write_train_log_line(os, r);
    if (!log.final_checkpoint.empty()) os << "checkpoint " << log.final_checkpoint << "\n";
}

// --- ADAM ---------------------------------------------------------------------

struct Adam {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    bool decoupled = false;
    std::int64_t t = 0;
    std::vector<std::vector<float>> m, v;

    void attach(const std::vector<Tensor*>& params) {
        m.clear();
        v.clear();
        for (const auto* p : params) {
            m.emplace_back(p->data.size(), 0.0f);
            v.emplace_back(p->data.size(), 0.0f);
        }
        t = 0;
    }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads) {
        if (m.size() != params.size()) throw std::logic_error("optimizer not attached");
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t i = 0; i < params.size(); ++i) {
            float* w = params[i]->ptr();
            const float* g = grads[i]->ptr();
            float* mi = m[i].data();
            float* vi = v[i].data();
            const size_t n = params[i]->data.size();
            for (size_t j = 0; j < n; ++j) {
                double gj = g[j];
                if (!decoupled) gj += weight_decay * w[j];
                const double mj = beta1 * mi[j] + (1.0 - beta1) * gj;
                const double vj = beta2 * vi[j] + (1.0 - beta2) * gj * gj;
                mi[j] = static_cast<float>(mj);
                vi[j] = static_cast<float>(vj);
                double wj = w[j] - lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps);
                if (decoupled) wj -= lr * weight_decay * wj;
                w[j] = static_cast<float>(wj);
            }
        }
    }
};

// --- Batch loss / gradient steps ------------------------------------------------

namespace detail {

inline constexpr std::uint64_t kPatchStream = 0x70a7c4;
inline constexpr std::uint64_t kValPatchStream = 0x7a11da;
inline constexpr std::uint64_t kInitStream = 0x1217;
inline constexpr std::uint64_t kShuffleStream = 0x5f1e;
inline constexpr std::uint64_t kVaeStepStream = 0xeb5;
inline constexpr std::uint64_t kValLossStream = 0x7611;

// One optimization step worth of loss + parameter gradients for the
// deterministic variants (L2, SSIM, FM). Returns the batch-mean loss.
inline double det_loss_step(Autoencoder& net, FeatureExtractor* extractor, LossKind loss,
                            const SsimParams& ssim, const std::vector<Image>& xb,
                            bool with_grad) {
    const Tensor x = images_to_tensor(xb);
    const double inv_b = 1.0 / static_cast<double>(xb.size());
    std::vector<LayerCtx> enc_tape, dec_tape;
    const Tensor z = net.encoder.forward(x, with_grad ? &enc_tape : nullptr);
    const Tensor xhat = net.decoder.forward(z, with_grad ? &dec_tape : nullptr);
    const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);

    Tensor g;
    if (with_grad) g = Tensor(xhat.shape);
    double loss_value = 0.0;

    if (loss == LossKind::L2 || loss == LossKind::FM) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            const double d = static_cast<double>(xhat.data[i]) - x.data[i];
            acc += d * d;
            if (with_grad) g.data[i] = static_cast<float>(2.0 * d * inv_b);
        }
        loss_value = acc * inv_b;
    } else if (loss == LossKind::SSIM) {
        for (size_t b = 0; b < xb.size(); ++b) {
            const float* xp = x.ptr() + static_cast<std::int64_t>(b) * plane;
            const float* xhp = xhat.ptr() + static_cast<std::int64_t>(b) * plane;
            float* gp = with_grad ? g.ptr() + static_cast<std::int64_t>(b) * plane : nullptr;
            loss_value += ssim_loss_image(xp, xhp, x.dim(2), x.dim(3), ssim, gp, inv_b);
        }
        loss_value *= inv_b;
    }

    if (loss == LossKind::FM) {
        if (!extractor) throw std::invalid_argument("feature-matching loss needs an extractor");
        const double lambda = net.spec.fm_lambda;
        const Tensor fx = extractor->features(x);
        std::vector<LayerCtx> fx_tape;
        const Tensor fxh = extractor->features(xhat, with_grad ? &fx_tape : nullptr);
        double acc = 0.0;
        for (std::int64_t i = 0; i < fx.numel(); ++i) {
            const double d = static_cast<double>(fxh.data[i]) - fx.data[i];
            acc += d * d;
        }
        loss_value += lambda * acc * inv_b;
        if (with_grad) {
            Tensor gfeat(fxh.shape);
            for (std::int64_t i = 0; i < gfeat.numel(); ++i)
                gfeat.data[i] = static_cast<float>(
                    2.0 * lambda * inv_b * (static_cast<double>(fxh.data[i]) - fx.data[i]));
            const Tensor gin = extractor->net.backward(fx_tape, gfeat);
            extractor->net.zero_grad();
            const std::int64_t fplane = static_cast<std::int64_t>(gin.dim(2)) * gin.dim(3);
            for (int b = 0; b < gin.dim(0); ++b)
                for (int c = 0; c < gin.dim(1); ++c) {
                    const float* src = gin.ptr() + (static_cast<std::int64_t>(b) * gin.dim(1) + c) * fplane;
                    float* dst = g.ptr() + static_cast<std::int64_t>(b) * plane;
                    for (std::int64_t i = 0; i < fplane; ++i) dst[i] += src[i];
                }
        }
    }

    if (with_grad) {
        const Tensor gz = net.decoder.backward(dec_tape, g);
        net.encoder.backward(enc_tape, gz);
    }
    return loss_value;
}

// VAE step: one reparameterized sample per image, L2 reconstruction plus
// closed-form KL, both batch-averaged.
inline double vae_loss_step(Autoencoder& net, const std::vector<Image>& xb, std::uint64_t seed,
                            bool with_grad) {
    const Tensor x = images_to_tensor(xb);
    const int B = static_cast<int>(xb.size());
    const int d = net.spec.latent_dim;
    const double inv_b = 1.0 / B;

    std::vector<LayerCtx> enc_tape, dec_tape;
    const Tensor z2 = net.encoder.forward(x, with_grad ? &enc_tape : nullptr);

    Rng rng(seed);
    Tensor z({B, d, 1, 1});
    std::vector<double> eps(static_cast<size_t>(B) * d);
    double kl = 0.0;
    for (int b = 0; b < B; ++b) {
        const float* mu = z2.ptr() + static_cast<std::int64_t>(b) * 2 * d;
        const float* lv = mu + d;
        for (int j = 0; j < d; ++j) {
            const double e = rng.normal();
            eps[static_cast<size_t>(b) * d + j] = e;
            z.data[static_cast<std::int64_t>(b) * d + j] =
                static_cast<float>(mu[j] + std::exp(0.5 * static_cast<double>(lv[j])) * e);
            kl += 0.5 * (static_cast<double>(mu[j]) * mu[j] + std::exp(static_cast<double>(lv[j])) -
                         1.0 - lv[j]);
        }
    }

    const Tensor xhat = net.decoder.forward(z, with_grad ? &dec_tape : nullptr);
    double recon = 0.0;
    Tensor g;
    if (with_grad) g = Tensor(xhat.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double diff = static_cast<double>(xhat.data[i]) - x.data[i];
        recon += diff * diff;
        if (with_grad) g.data[i] = static_cast<float>(2.0 * diff * inv_b);
    }
    const double loss_value = (recon + kl) * inv_b;

    if (with_grad) {
        const Tensor gz = net.decoder.backward(dec_tape, g);
        Tensor gz2(z2.shape);
        for (int b = 0; b < B; ++b) {
            const float* mu = z2.ptr() + static_cast<std::int64_t>(b) * 2 * d;
            const float* lv = mu + d;
            float* gmu = gz2.ptr() + static_cast<std::int64_t>(b) * 2 * d;
            float* glv = gmu + d;
            for (int j = 0; j < d; ++j) {
                const double gzj = gz.data[static_cast<std::int64_t>(b) * d + j];
                const double e = eps[static_cast<size_t>(b) * d + j];
                gmu[j] = static_cast<float>(gzj + static_cast<double>(mu[j]) * inv_b);
                glv[j] = static_cast<float>(gzj * 0.5 * std::exp(0.5 * static_cast<double>(lv[j])) * e +
                                            0.5 * (std::exp(static_cast<double>(lv[j])) - 1.0) * inv_b);
            }
        }
        net.encoder.backward(enc_tape, gz2);
    }
    return loss_value;
}

inline double batch_loss(Autoencoder& net, FeatureExtractor* extractor, const TrainConfig& cfg,
                         const std::vector<Image>& xb, std::uint64_t step_seed, bool with_grad) {
    if (cfg.loss == LossKind::VAE) return vae_loss_step(net, xb, step_seed, with_grad);
    return det_loss_step(net, extractor, cfg.loss, cfg.ssim, xb, with_grad);
}

inline double mean_loss_over(Autoencoder& net, FeatureExtractor* extractor, const TrainConfig& cfg,
                             const std::vector<Image>& patches, std::uint64_t seed) {
    double acc = 0.0;
    size_t done = 0;
    while (done < patches.size()) {
        const size_t take = std::min<size_t>(cfg.batch_size, patches.size() - done);
        std::vector<Image> xb(patches.begin() + done, patches.begin() + done + take);
        acc += batch_loss(net, extractor, cfg, xb, derive_seed(seed, done), false) * take;
        done += take;
    }
    return acc / static_cast<double>(patches.size());
}

}  // namespace detail

// --- Training loop ----------------------------------------------------------------

inline std::pair<Checkpoint, TrainLog> train(const DatasetManifest& manifest,
                                             const ModelSpec& spec, const TrainConfig& cfg,
                                             const std::string& out_dir = "") {
    spec.check();
    cfg.check(spec);
    if (manifest.train_images.empty()) throw std::invalid_argument("empty training set");

    // deterministic split by sorted filename
    std::vector<std::string> paths = manifest.train_images;
    std::sort(paths.begin(), paths.end());
    const int n_val = static_cast<int>(std::llround(cfg.validation_fraction * paths.size()));
    if (n_val >= static_cast<int>(paths.size()))
        throw std::invalid_argument("validation fraction leaves no training images");

    auto load_prepared = [&](const std::string& p) {
        Image img = load_image(p);
        if (cfg.downscale_to > 0) img = downscale_bilinear(img, cfg.downscale_to, cfg.downscale_to);
        return img;
    };
    std::vector<Image> train_imgs, val_imgs;
    for (size_t i = 0; i < paths.size(); ++i)
        (static_cast<int>(i) < static_cast<int>(paths.size()) - n_val ? train_imgs : val_imgs)
            .push_back(load_prepared(paths[i]));

    std::vector<Image> patches = sample_patches(train_imgs, cfg.patch_count, cfg.patch_size,
                                                derive_seed(cfg.seed, detail::kPatchStream));
    const int val_count = std::max<int>(1, static_cast<int>(std::llround(
                                               cfg.patch_count * cfg.validation_fraction)));
    std::vector<Image> val_patches =
        val_imgs.empty()
            ? std::vector<Image>(patches.begin(),
                                 patches.begin() + std::min<size_t>(patches.size(), 64))
            : sample_patches(val_imgs, val_count, cfg.patch_size,
                             derive_seed(cfg.seed, detail::kValPatchStream));

    Autoencoder net = Autoencoder::build(spec, derive_seed(cfg.seed, detail::kInitStream));
    FeatureExtractor extractor;
    FeatureExtractor* extractor_ptr = nullptr;
    if (cfg.loss == LossKind::FM) {
        extractor = cfg.extractor_weights.empty() ? FeatureExtractor::make_default(cfg.seed)
                                                  : load_extractor(cfg.extractor_weights);
        extractor_ptr = &extractor;
    }

    std::vector<Tensor*> params, grads;
    net.params(params, grads);
    Adam opt;
    opt.lr = cfg.learning_rate;
    opt.weight_decay = cfg.weight_decay;
    opt.decoupled = cfg.decoupled_weight_decay;
    opt.attach(params);

    std::ofstream log_file;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        log_file.open(out_dir + "/train.log");
        log_file.precision(9);
    }

    TrainLog log;
    std::vector<int> order(patches.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (cfg.resample_per_epoch && epoch > 1)
            patches = sample_patches(train_imgs, cfg.patch_count, cfg.patch_size,
                                     derive_seed(cfg.seed, detail::kPatchStream + epoch));

        Rng shuffle_rng(derive_seed(cfg.seed, detail::kShuffleStream + epoch));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_below(i)]);

        double loss_acc = 0.0;
        size_t done = 0;
        int batch_idx = 0;
        while (done < patches.size()) {
            const size_t take = std::min<size_t>(cfg.batch_size, patches.size() - done);
            std::vector<Image> xb;
            xb.reserve(take);
            for (size_t i = 0; i < take; ++i) xb.push_back(patches[order[done + i]]);
            done += take;

            net.zero_grad();
            const std::uint64_t step_seed = derive_seed(
                cfg.seed, detail::kVaeStepStream + static_cast<std::uint64_t>(epoch) * 1000003 +
                              batch_idx);
            const double loss = detail::batch_loss(net, extractor_ptr, cfg, xb, step_seed, true);
            if (!std::isfinite(loss))
                throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(batch_idx));
            loss_acc += loss * take;
            opt.step(params, grads);
            ++batch_idx;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_acc / static_cast<double>(patches.size());
        rec.val_loss = detail::mean_loss_over(net, extractor_ptr, cfg, val_patches,
                                              derive_seed(cfg.seed, detail::kValLossStream));
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(rec);
        if (log_file) {
            write_train_log_line(log_file, rec);
            log_file.flush();
        }

        if (!out_dir.empty() && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 &&
            epoch != cfg.epochs) {
            TrainingMeta meta{epoch, cfg.seed, to_string(cfg.loss)};
            char name[64];
            std::snprintf(name, sizeof(name), "/model_epoch_%06d.ckpt", epoch);
            save_checkpoint(snapshot(net, meta), out_dir + name);
        }
    }

    TrainingMeta meta{cfg.epochs, cfg.seed, to_string(cfg.loss)};
    Checkpoint ckpt = snapshot(net, meta);
    if (!out_dir.empty()) {
        log.final_checkpoint = out_dir + "/model.ckpt";
        save_checkpoint(ckpt, log.final_checkpoint);
        if (log_file) log_file << "checkpoint " << log.final_checkpoint << "\n";
    }
    return {std::move(ckpt), std::move(log)};
}

// Mean loss of a checkpoint over the given patches under the loss type the
// checkpoint was trained with. No weight updates.
inline double validate(const Checkpoint& ckpt, const std::vector<Image>& patches,
                       const FeatureExtractor* extractor = nullptr) {
    if (patches.empty()) throw std::invalid_argument("validate needs at least one patch");
    Autoencoder net = restore_model(ckpt);
    TrainConfig cfg;
    cfg.loss = loss_from_string(ckpt.meta.loss_type);
    cfg.patch_size = ckpt.spec.input_size;
    cfg.seed = ckpt.meta.seed;
    FeatureExtractor fallback;
    FeatureExtractor* fx = const_cast<FeatureExtractor*>(extractor);
    if (cfg.loss == LossKind::FM && !fx) {
        fallback = FeatureExtractor::make_default(ckpt.meta.seed);
        fx = &fallback;
    }
    return detail::mean_loss_over(net, fx, cfg, patches,
                                  derive_seed(ckpt.meta.seed, detail::kValLossStream));
}

}  // namespace texseg
