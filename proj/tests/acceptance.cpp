// Acceptance suite: prints one pass/fail line per criterion and exits
// non-zero if any required criterion fails. The checkerboard end-to-end
// comparison trains two full models and dominates the runtime.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "texseg/texseg.hpp"

using namespace texseg;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int number, const std::string& name, bool pass, const std::string& detail,
            double seconds) {
    std::printf("[%s] criterion %d %-28s (%.1f s) %s\n", pass ? "PASS" : "FAIL", number,
                name.c_str(), seconds, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

void report_skip(int number, const std::string& name, const std::string& why) {
    std::printf("[SKIP] criterion %d %-28s %s\n", number, name.c_str(), why.c_str());
    std::fflush(stdout);
}

double elapsed(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Image random_image(int h, int w, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
    Rng rng(seed);
    Image img(h, w);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform(lo, hi));
    return img;
}

// direct transliteration of the combined similarity index
double ssim_reference(const Image& p, const Image& q, double c1, double c2) {
    const size_t n = p.pixels();
    double mp = 0, mq = 0;
    for (size_t i = 0; i < n; ++i) {
        mp += p.data[i];
        mq += q.data[i];
    }
    mp /= n;
    mq /= n;
    double vp = 0, vq = 0, cov = 0;
    for (size_t i = 0; i < n; ++i) {
        vp += (p.data[i] - mp) * (p.data[i] - mp);
        vq += (q.data[i] - mq) * (q.data[i] - mq);
        cov += (p.data[i] - mp) * (q.data[i] - mq);
    }
    vp /= n;
    vq /= n;
    cov /= n;
    return ((2 * mp * mq + c1) * (2 * cov + c2)) / ((mp * mp + mq * mq + c1) * (vp + vq + c2));
}

// --- criterion 1: ssim oracle suite ----------------------------------------

void criterion_1() {
    const auto t0 = Clock::now();
    const SsimParams params;
    double max_diff = 0.0, max_sym = 0.0;
    bool ok = true;
    for (int trial = 0; trial < 200; ++trial) {
        const Image p = random_image(11, 11, 10000 + trial);
        const Image q = random_image(11, 11, 20000 + trial);
        const double got = ssim_patch(p, q, params);
        const double want = ssim_reference(p, q, params.c1, params.c2);
        max_diff = std::max(max_diff, std::abs(got - want));
        max_sym = std::max(max_sym, std::abs(got - ssim_patch(q, p, params)));
        ok = ok && got >= -1.0 - 1e-9 && got <= 1.0 + 1e-9;
        ok = ok && std::abs(ssim_patch(p, p, params) - 1.0) <= 1e-9;
    }
    ok = ok && max_diff < 1e-9 && max_sym <= 1e-12;
    const double sec = elapsed(t0);
    char detail[160];
    std::snprintf(detail, sizeof(detail), "max|impl-ref| = %.2e, max asymmetry = %.2e", max_diff,
                  max_sym);
    report(1, "ssim-oracle-suite", ok && sec < 10.0, detail, sec);
}

// --- criterion 2: component separation ---------------------------------------

void criterion_2() {
    const auto t0 = Clock::now();
    const SsimParams params;
    const int K = 11;

    Image lum_p(K, K, 0.25f), lum_q(K, K, 0.75f);
    Image con_p(K, K, 0.5f), con_q(K, K);
    Image str_p(K, K), str_q(K, K);
    for (int r = 0; r < K; ++r)
        for (int c = 0; c < K; ++c) {
            con_q.at(r, c) = ((r + c) & 1) ? 1.0f : 0.0f;
            str_p.at(r, c) = ((r + c) & 1) ? 0.5f : 0.0f;
            str_q.at(r, c) = 0.5f - str_p.at(r, c);
        }

    bool l2_same = true;
    const std::pair<const Image*, const Image*> pairs[3] = {
        {&lum_p, &lum_q}, {&con_p, &con_q}, {&str_p, &str_q}};
    for (const auto& [p, q] : pairs)
        for (float v : l2_residual(*p, *q).scores) l2_same = l2_same && v == 0.25f;

    const auto lum = ssim_components(patch_stats(lum_p, lum_q), params);
    const auto con = ssim_components(patch_stats(con_p, con_q), params);
    const auto str = ssim_components(patch_stats(str_p, str_q), params);
    const bool argmin_ok = lum.l < lum.c && lum.l < lum.s && con.c < con.l && con.c < con.s &&
                           str.s < str.l && str.s < str.c;

    char detail[200];
    std::snprintf(detail, sizeof(detail),
                  "l2 = 0.25 on all pairs: %s; argmins l/c/s: (%.3f %.3f %.3f) (%.3f %.3f %.3f) "
                  "(%.3f %.3f %.3f)",
                  l2_same ? "yes" : "no", lum.l, lum.c, lum.s, con.l, con.c, con.s, str.l, str.c,
                  str.s);
    report(2, "component-separation", l2_same && argmin_ok, detail, elapsed(t0));
}

// --- criterion 3: gradient checks ---------------------------------------------

void criterion_3() {
    const auto t0 = Clock::now();
    const SsimParams params;

    const Image x = random_image(16, 16, 31, 0.1f, 0.9f);
    Image xh = random_image(16, 16, 32, 0.1f, 0.9f);
    std::vector<std::vector<float>> grads;
    ssim_loss({x}, {xh}, params, &grads);
    double max_fd = 0.0, max_err = 0.0;
    for (size_t i = 0; i < xh.pixels(); ++i) {
        const float orig = xh.data[i];
        const float vp = orig + 1e-3f, vm = orig - 1e-3f;
        xh.data[i] = vp;
        const double lp = ssim_loss({x}, {xh}, params);
        xh.data[i] = vm;
        const double lm = ssim_loss({x}, {xh}, params);
        xh.data[i] = orig;
        const double fd = (lp - lm) / (static_cast<double>(vp) - static_cast<double>(vm));
        max_fd = std::max(max_fd, std::abs(fd));
        max_err = std::max(max_err, std::abs(fd - grads[0][i]));
    }
    const double ssim_rel = max_err / max_fd;

    // reparameterized objective on a d = 4 toy decoder
    const int d = 4;
    Sequential decoder;
    Rng rng(61);
    {
        auto t1 = std::make_unique<ConvTranspose2d>(d, 6, 8, 1, 0);
        t1->init(rng, 0.2);
        decoder.layers.push_back(std::move(t1));
        decoder.layers.push_back(std::make_unique<LeakyReLU>(0.2f));
        auto t2 = std::make_unique<ConvTranspose2d>(6, 1, 4, 2, 1);
        t2->init(rng, 0.0);
        decoder.layers.push_back(std::move(t2));
    }
    const Image vx = random_image(16, 16, 62);
    VaePosterior post;
    for (int j = 0; j < d; ++j) {
        post.mean.push_back(static_cast<float>(rng.normal() * 0.5));
        post.log_var.push_back(static_cast<float>(rng.normal() * 0.3));
    }
    std::vector<float> gmean, glogvar;
    vae_loss_given_posterior(decoder, vx, post, 7, &gmean, &glogvar);
    double vae_rel = 0.0;
    const double eps = 1e-3;
    for (int j = 0; j < d; ++j) {
        VaePosterior pp = post;
        pp.mean[j] += static_cast<float>(eps);
        const double lp = vae_loss_given_posterior(decoder, vx, pp, 7).total;
        pp.mean[j] = post.mean[j] - static_cast<float>(eps);
        const double lm = vae_loss_given_posterior(decoder, vx, pp, 7).total;
        const double fd = (lp - lm) / (2 * eps);
        vae_rel = std::max(vae_rel, std::abs(fd - gmean[j]) / std::max(1.0, std::abs(fd)));
    }
    for (int j = 0; j < d; ++j) {
        VaePosterior pp = post;
        pp.log_var[j] += static_cast<float>(eps);
        const double lp = vae_loss_given_posterior(decoder, vx, pp, 7).total;
        pp.log_var[j] = post.log_var[j] - static_cast<float>(eps);
        const double lm = vae_loss_given_posterior(decoder, vx, pp, 7).total;
        const double fd = (lp - lm) / (2 * eps);
        vae_rel = std::max(vae_rel, std::abs(fd - glogvar[j]) / std::max(1.0, std::abs(fd)));
    }

    const double sec = elapsed(t0);
    char detail[160];
    std::snprintf(detail, sizeof(detail), "ssim grad rel err = %.2e, vae grad rel err = %.2e",
                  ssim_rel, vae_rel);
    report(3, "gradient-checks", ssim_rel < 1e-2 && vae_rel < 1e-2 && sec < 30.0, detail, sec);
}

// --- criterion 4: roc oracle ----------------------------------------------------

double auc_mann_whitney(const ResidualMap& res, const GroundTruthMask& mask) {
    std::vector<float> pos, neg;
    for (size_t i = 0; i < res.scores.size(); ++i)
        (mask.data[i] ? pos : neg).push_back(res.scores[i]);
    double acc = 0.0;
    for (float a : pos)
        for (float b : neg) acc += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
    return acc / (static_cast<double>(pos.size()) * neg.size());
}

void criterion_4() {
    const auto t0 = Clock::now();
    double max_diff = 0.0;
    int done = 0;
    for (int trial = 0; done < 20; ++trial) {
        Rng rng(3000 + trial);
        GroundTruthMask mask(8, 8);
        for (auto& v : mask.data) v = rng.uniform() < 0.4 ? 1 : 0;
        if (mask.count() == 0 || mask.count() == mask.pixels()) continue;
        ResidualMap res(8, 8);
        for (auto& v : res.scores) v = static_cast<float>(rng.uniform_below(12)) / 12.0f;
        const RocCurve curve = roc_curve({res}, {mask}, 1 << 20, false);
        max_diff = std::max(max_diff, std::abs(curve.auc - auc_mann_whitney(res, mask)));
        ++done;
    }
    char detail[120];
    std::snprintf(detail, sizeof(detail), "max |trapezoid - mann-whitney| = %.2e over 20 instances",
                  max_diff);
    report(4, "roc-oracle", max_diff < 1e-6, detail, elapsed(t0));
}

// --- criterion 5: morphology oracle ----------------------------------------------

void criterion_5() {
    const auto t0 = Clock::now();
    std::vector<std::pair<int, int>> offs;
    for (int di = -2; di <= 2; ++di)
        for (int dj = -2; dj <= 2; ++dj)
            if (di * di + dj * dj <= 4) offs.emplace_back(di, dj);

    auto erode_ref = [&](const GroundTruthMask& m) {
        GroundTruthMask out(m.height, m.width);
        for (int r = 0; r < m.height; ++r)
            for (int c = 0; c < m.width; ++c) {
                bool keep = true;
                for (const auto& [di, dj] : offs) {
                    const int rr = r + di, cc = c + dj;
                    if (rr < 0 || rr >= m.height || cc < 0 || cc >= m.width || !m.at(rr, cc))
                        keep = false;
                }
                out.at(r, c) = keep ? 1 : 0;
            }
        return out;
    };
    auto dilate_ref = [&](const GroundTruthMask& m) {
        GroundTruthMask out(m.height, m.width);
        for (int r = 0; r < m.height; ++r)
            for (int c = 0; c < m.width; ++c)
                for (const auto& [di, dj] : offs) {
                    const int rr = r + di, cc = c + dj;
                    if (rr >= 0 && rr < m.height && cc >= 0 && cc < m.width && m.at(rr, cc))
                        out.at(r, c) = 1;
                }
        return out;
    };

    bool ok = offs.size() == 13;
    for (int trial = 0; trial < 100 && ok; ++trial) {
        Rng rng(4000 + trial);
        GroundTruthMask m(32, 32);
        const double p = 0.2 + 0.006 * trial;
        for (auto& v : m.data) v = rng.uniform() < p ? 1 : 0;
        const GroundTruthMask got = open_disk4(m);
        const GroundTruthMask want = dilate_ref(erode_ref(m));
        ok = ok && got.data == want.data;
        ok = ok && open_disk4(got).data == got.data;  // idempotent
        for (size_t i = 0; i < m.data.size() && ok; ++i)
            ok = !got.data[i] || m.data[i];  // anti-extensive
    }
    report(5, "morphology-oracle", ok, "exact match with brute-force erosion+dilation", elapsed(t0));
}

// --- criteria 6 and 7: checkerboard end to end ------------------------------------

struct E2EResult {
    double auc_l2 = 0.0;
    double auc_ssim = 0.0;
    double auc_k7 = 0.0;
    double auc_k15 = 0.0;
    double train_seconds = 0.0;
    bool ready = false;
};

E2EResult run_checkerboard_e2e() {
    E2EResult out;
    const auto t0 = Clock::now();
    const std::string dir = "scratch/acceptance_e2e";
    std::filesystem::remove_all(dir);

    CheckerSpec checker;  // 128x128 boards, cells 8..24, rotations 0..45
    DefectSpec defects;
    const DatasetManifest manifest = make_toy_dataset(dir, 100, 50, checker, defects, 7);

    ModelSpec spec;
    spec.latent_dim = 100;
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 8;
    cfg.patch_count = 256;
    cfg.learning_rate = 2e-4;
    cfg.weight_decay = 1e-5;
    cfg.validation_fraction = 0.1;
    cfg.checkpoint_every = 0;
    cfg.seed = 1;

    TrainConfig cfg_l2 = cfg;
    cfg_l2.loss = LossKind::L2;
    const auto [ckpt_l2, log_l2] = train(manifest, spec, cfg_l2);

    TrainConfig cfg_ssim = cfg;
    cfg_ssim.loss = LossKind::SSIM;
    const auto [ckpt_ssim, log_ssim] = train(manifest, spec, cfg_ssim);
    out.train_seconds = elapsed(t0);

    const Autoencoder net_l2 = restore_model(ckpt_l2);
    const Autoencoder net_ssim = restore_model(ckpt_ssim);

    std::vector<GroundTruthMask> masks;
    std::vector<Image> test_images;
    for (const auto& [img_path, mask_path] : manifest.test_images) {
        test_images.push_back(load_image(img_path));
        masks.push_back(load_mask(mask_path));
    }

    SsimParams params;
    auto residuals_for = [&](const Autoencoder& net, LossKind method, int window) {
        SsimParams p = params;
        p.window_size = window;
        std::vector<ResidualMap> maps;
        for (size_t i = 0; i < test_images.size(); ++i)
            maps.push_back(residual_for(method, net, test_images[i], p, 30, derive_seed(1, i)));
        return maps;
    };

    out.auc_l2 = roc_curve(residuals_for(net_l2, LossKind::L2, 11), masks, 256, true).auc;
    out.auc_ssim = roc_curve(residuals_for(net_ssim, LossKind::SSIM, 11), masks, 256, true).auc;
    out.auc_k7 = roc_curve(residuals_for(net_ssim, LossKind::SSIM, 7), masks, 256, true).auc;
    out.auc_k15 = roc_curve(residuals_for(net_ssim, LossKind::SSIM, 15), masks, 256, true).auc;
    out.ready = true;
    return out;
}

void criterion_6(const E2EResult& r) {
    char detail[200];
    std::snprintf(detail, sizeof(detail),
                  "auc(ssim-ae) = %.4f, auc(l2-ae) = %.4f, gap = %+.4f (need >= 0.05 and ssim >= 0.90)",
                  r.auc_ssim, r.auc_l2, r.auc_ssim - r.auc_l2);
    report(6, "checkerboard-end-to-end",
           r.ready && r.auc_ssim >= 0.90 && r.auc_ssim >= r.auc_l2 + 0.05, detail,
           r.train_seconds);
}

void criterion_7(const E2EResult& r) {
    const double spread = std::max({r.auc_k7, r.auc_ssim, r.auc_k15}) -
                          std::min({r.auc_k7, r.auc_ssim, r.auc_k15});
    char detail[160];
    std::snprintf(detail, sizeof(detail), "auc by window: K7 = %.4f, K11 = %.4f, K15 = %.4f, spread = %.4f",
                  r.auc_k7, r.auc_ssim, r.auc_k15, spread);
    report(7, "window-size-robustness", r.ready && spread < 0.05, detail, 0.0);
}

// --- criterion 8: vae/fm mechanism checks -------------------------------------------

void criterion_8() {
    const auto t0 = Clock::now();

    // closed-form KL vs numerical integration on a (mu, sigma) grid, d = 1
    auto kl_numeric = [](double mu, double sigma) {
        const double lo = mu - 12 * sigma - 12, hi = mu + 12 * sigma + 12;
        const int n = 40001;
        const double h = (hi - lo) / (n - 1);
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const double z = lo + i * h;
            const double q = std::exp(-0.5 * (z - mu) * (z - mu) / (sigma * sigma)) /
                             (sigma * std::sqrt(2 * M_PI));
            if (q < 1e-300) continue;
            const double p = std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI);
            const double term = q * std::log(q / p);
            acc += (i == 0 || i == n - 1) ? 0.5 * term : term;
        }
        return acc * h;
    };
    double kl_err = 0.0;
    for (double mu : {-2.0, -0.5, 0.0, 1.0, 3.0})
        for (double sigma : {0.3, 0.7, 1.0, 1.8}) {
            VaePosterior p;
            p.mean = {static_cast<float>(mu)};
            p.log_var = {static_cast<float>(2.0 * std::log(sigma))};
            kl_err = std::max(kl_err, std::abs(kl_score(p) - kl_numeric(mu, sigma)));
        }

    // feature-matching decomposition identity
    FeatureExtractor fe = FeatureExtractor::make_default(11);
    const std::vector<Image> x = {random_image(128, 128, 71)};
    const std::vector<Image> xh = {random_image(128, 128, 72)};
    const double lambda = 1.0;
    const FmLossTerms terms = fm_loss(fe, x, xh, lambda);
    const bool fm_ok = terms.l2_term == l2_loss(x, xh) &&
                       terms.total == terms.l2_term + lambda * terms.fm_term;

    // single-sample reconstruction probability reduces to the l2 residual
    ModelSpec vspec;
    vspec.latent_dim = 6;
    vspec.variant = Variant::VAE;
    Autoencoder vnet = Autoencoder::build(vspec, 5);
    const Image img = random_image(128, 128, 73);
    const ResidualMap r1 = vae_residual(vnet, img, 1, 555);
    const VaePosterior post = vae_encode(vnet, {img})[0];
    const auto zs = vae_sample(post, 1, 555);
    Tensor z({1, 6, 1, 1});
    std::copy(zs[0].begin(), zs[0].end(), z.data.begin());
    const Image decoded = tensor_slice_to_image(vnet.decode(z), 0, true);
    const bool vae_ok = r1.scores == l2_residual(img, decoded).scores;

    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "max KL error = %.2e, fm decomposition exact = %s, vae n=1 residual exact = %s",
                  kl_err, fm_ok ? "yes" : "no", vae_ok ? "yes" : "no");
    report(8, "vae-fm-mechanisms", kl_err < 1e-4 && fm_ok && vae_ok, detail, elapsed(t0));
}

// --- criterion 9: optional full-protocol dataset run --------------------------------

void criterion_9() {
    const char* manifest_path = std::getenv("TEXSEG_NANOTWICE_MANIFEST");
    if (!manifest_path) {
        report_skip(9, "nanofibre-full-protocol",
                    "optional; set TEXSEG_NANOTWICE_MANIFEST to a dataset manifest to enable");
        return;
    }
    const auto t0 = Clock::now();
    const DatasetManifest manifest = load_manifest(manifest_path);
    ModelSpec spec;
    spec.latent_dim = 500;
    TrainConfig cfg;
    cfg.loss = LossKind::SSIM;
    cfg.seed = 1;
    const auto [ckpt, log] = train(manifest, spec, cfg, "scratch/acceptance_nanotwice");
    const Autoencoder net = restore_model(ckpt);

    std::vector<ResidualMap> residuals;
    std::vector<GroundTruthMask> masks;
    SsimParams params;
    for (size_t i = 0; i < manifest.test_images.size(); ++i) {
        residuals.push_back(residual_for(LossKind::SSIM, net, load_image(manifest.test_images[i].first),
                                         params, 30, derive_seed(1, i)));
        masks.push_back(load_mask(manifest.test_images[i].second));
    }
    const double auc = roc_curve(residuals, masks, 256, true).auc;
    char detail[120];
    std::snprintf(detail, sizeof(detail), "auc = %.4f (need >= 0.93)", auc);
    report(9, "nanofibre-full-protocol", auc >= 0.93, detail, elapsed(t0));
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    const E2EResult e2e = run_checkerboard_e2e();
    criterion_6(e2e);
    criterion_7(e2e);
    criterion_8();
    criterion_9();
    if (g_failures) std::printf("%d criterion(s) failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
