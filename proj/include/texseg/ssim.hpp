#pragma once

// Structural similarity: windowed patch statistics, the luminance/contrast/
// structure comparisons, full-image SSIM maps, and the two training losses
// (L2 and SSIM) with analytic gradients with respect to the reconstruction.
//
// Conventions: uniform K x K window, population statistics (divide by K^2),
// stability constants added unsquared. A window is evaluated wherever it fits
// fully inside the image; border pixels are scored as identical (SSIM = 1).

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "texseg/image.hpp"

namespace texseg {

struct SsimParams {
    int window_size = 11;
    double c1 = 0.01;
    double c2 = 0.03;
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;

    void check() const {
        if (window_size < 3 || window_size % 2 == 0)
            throw std::invalid_argument("SSIM window size must be odd and >= 3");
        if (!(c1 > 0.0) || !(c2 > 0.0))
            throw std::invalid_argument("SSIM stability constants must be positive");
    }
    bool unit_exponents() const { return alpha == 1.0 && beta == 1.0 && gamma == 1.0; }
};

struct PatchStats {
    double mu_p = 0.0, mu_q = 0.0;
    double var_p = 0.0, var_q = 0.0;
    double cov_pq = 0.0;
};

struct SsimComponents {
    double l = 0.0, c = 0.0, s = 0.0;
};

struct SsimMaps {
    int height = 0;
    int width = 0;
    std::vector<float> l, c, s, ssim;

    SsimMaps() = default;
    SsimMaps(int h, int w)
        : height(h),
          width(w),
          l(static_cast<size_t>(h) * w, 1.0f),
          c(static_cast<size_t>(h) * w, 1.0f),
          s(static_cast<size_t>(h) * w, 1.0f),
          ssim(static_cast<size_t>(h) * w, 1.0f) {}
};

namespace detail {

inline double checked_pow(double base, double expo, const char* which) {
    if (expo == 1.0) return base;
    if (base < 0.0 && expo != std::floor(expo))
        throw std::invalid_argument(std::string("negative SSIM component '") + which +
                                    "' with non-integer exponent");
    return std::pow(base, expo);
}

}  // namespace detail

// Population statistics over two equally shaped patches.
inline PatchStats patch_stats(const Image& p, const Image& q) {
    if (!p.same_shape(q)) throw std::invalid_argument("patch shapes differ");
    const size_t n = p.pixels();
    if (n == 0) throw std::invalid_argument("empty patch");
    PatchStats st;
    double sp = 0.0, sq = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sp += p.data[i];
        sq += q.data[i];
    }
    st.mu_p = sp / n;
    st.mu_q = sq / n;
    double vp = 0.0, vq = 0.0, cpq = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double dp = p.data[i] - st.mu_p;
        const double dq = q.data[i] - st.mu_q;
        vp += dp * dp;
        vq += dq * dq;
        cpq += dp * dq;
    }
    st.var_p = vp / n;
    st.var_q = vq / n;
    st.cov_pq = cpq / n;
    return st;
}

inline SsimComponents ssim_components(const PatchStats& st, const SsimParams& params) {
    params.check();
    const double sig_p = std::sqrt(st.var_p > 0.0 ? st.var_p : 0.0);
    const double sig_q = std::sqrt(st.var_q > 0.0 ? st.var_q : 0.0);
    SsimComponents out;
    out.l = (2.0 * st.mu_p * st.mu_q + params.c1) / (st.mu_p * st.mu_p + st.mu_q * st.mu_q + params.c1);
    out.c = (2.0 * sig_p * sig_q + params.c2) / (st.var_p + st.var_q + params.c2);
    out.s = (2.0 * st.cov_pq + params.c2) / (2.0 * sig_p * sig_q + params.c2);
    return out;
}

inline double combine_components(const SsimComponents& co, const SsimParams& params) {
    return detail::checked_pow(co.l, params.alpha, "l") *
           detail::checked_pow(co.c, params.beta, "c") *
           detail::checked_pow(co.s, params.gamma, "s");
}

inline double ssim_patch(const Image& p, const Image& q, const SsimParams& params) {
    return combine_components(ssim_components(patch_stats(p, q), params), params);
}

namespace detail {

// Integral image with one row/column of zero padding.
struct Integral {
    int h = 0, w = 0;
    std::vector<double> s;

    Integral(int height, int width) : h(height), w(width), s(static_cast<size_t>(h + 1) * (w + 1), 0.0) {}

    template <typename F>
    void build(F&& value) {
        for (int r = 0; r < h; ++r) {
            double row = 0.0;
            const size_t up = static_cast<size_t>(r) * (w + 1);
            const size_t cur = static_cast<size_t>(r + 1) * (w + 1);
            for (int c = 0; c < w; ++c) {
                row += value(r, c);
                s[cur + c + 1] = s[up + c + 1] + row;
            }
        }
    }

    // inclusive rectangle sum, caller guarantees bounds
    double sum(int r0, int c0, int r1, int c1) const {
        const size_t a = static_cast<size_t>(r0) * (w + 1);
        const size_t b = static_cast<size_t>(r1 + 1) * (w + 1);
        return s[b + c1 + 1] - s[b + c0] - s[a + c1 + 1] + s[a + c0];
    }

    // rectangle sum clipped to the image
    double sum_clipped(int r0, int c0, int r1, int c1) const {
        r0 = std::max(r0, 0);
        c0 = std::max(c0, 0);
        r1 = std::min(r1, h - 1);
        c1 = std::min(c1, w - 1);
        if (r0 > r1 || c0 > c1) return 0.0;
        return sum(r0, c0, r1, c1);
    }
};

}  // namespace detail

// Sliding-window l/c/s/SSIM maps. Border pixels (closer than K/2 to an edge)
// are assigned the identity value 1.
inline SsimMaps ssim_map(const Image& x, const Image& x_hat, const SsimParams& params) {
    params.check();
    if (!x.same_shape(x_hat)) throw std::invalid_argument("image shapes differ");
    const int K = params.window_size;
    if (x.height < K || x.width < K)
        throw std::invalid_argument("image smaller than SSIM window");

    const int h = x.height, w = x.width, half = K / 2;
    const double n = static_cast<double>(K) * K;
    SsimMaps maps(h, w);

    detail::Integral ip(h, w), iq(h, w), ipp(h, w), iqq(h, w), ipq(h, w);
    ip.build([&](int r, int c) { return static_cast<double>(x.at(r, c)); });
    iq.build([&](int r, int c) { return static_cast<double>(x_hat.at(r, c)); });
    ipp.build([&](int r, int c) { return static_cast<double>(x.at(r, c)) * x.at(r, c); });
    iqq.build([&](int r, int c) { return static_cast<double>(x_hat.at(r, c)) * x_hat.at(r, c); });
    ipq.build([&](int r, int c) { return static_cast<double>(x.at(r, c)) * x_hat.at(r, c); });

    for (int r = half; r < h - half; ++r) {
        for (int c = half; c < w - half; ++c) {
            const int r0 = r - half, r1 = r + half, c0 = c - half, c1 = c + half;
            PatchStats st;
            st.mu_p = ip.sum(r0, c0, r1, c1) / n;
            st.mu_q = iq.sum(r0, c0, r1, c1) / n;
            st.var_p = std::max(0.0, ipp.sum(r0, c0, r1, c1) / n - st.mu_p * st.mu_p);
            st.var_q = std::max(0.0, iqq.sum(r0, c0, r1, c1) / n - st.mu_q * st.mu_q);
            st.cov_pq = ipq.sum(r0, c0, r1, c1) / n - st.mu_p * st.mu_q;
            const SsimComponents co = ssim_components(st, params);
            const size_t i = static_cast<size_t>(r) * w + c;
            maps.l[i] = static_cast<float>(co.l);
            maps.c[i] = static_cast<float>(co.c);
            maps.s[i] = static_cast<float>(co.s);
            maps.ssim[i] = static_cast<float>(combine_components(co, params));
        }
    }
    return maps;
}

// Residual = (1 - SSIM)/2 pointwise, mapping [-1,1] similarity to [0,1]
// anomaly scores. Borders come out as 0.
inline ResidualMap ssim_residual(const Image& x, const Image& x_hat, const SsimParams& params) {
    const SsimMaps maps = ssim_map(x, x_hat, params);
    ResidualMap res(maps.height, maps.width);
    for (size_t i = 0; i < res.scores.size(); ++i)
        res.scores[i] = std::max(0.0f, (1.0f - maps.ssim[i]) * 0.5f);
    return res;
}

// --- Losses -----------------------------------------------------------------

namespace detail {

// Per-image SSIM loss: mean over interior window centers of (1 - SSIM),
// with SSIM from the combined form of the similarity index. If grad is given,
// grad_scale * d(loss)/d(x_hat) is accumulated into it.
//
// The derivative of a single window's SSIM with respect to a covered
// reconstruction pixel q_j is affine in (p_j, q_j):
//   dS/dq_j = u + v*p_j + w*q_j,
// with per-window coefficients u, v, w. Summing over all windows covering a
// pixel is a box filter of the u/v/w maps, done with integral images.
inline double ssim_loss_image(const float* p, const float* q, int h, int w,
                              const SsimParams& params, float* grad, double grad_scale) {
    const int K = params.window_size;
    const int half = K / 2;
    if (h < K || w < K) throw std::invalid_argument("image smaller than SSIM window");
    const double n = static_cast<double>(K) * K;
    const long long centers = static_cast<long long>(h - K + 1) * (w - K + 1);

    Integral ip(h, w), iq(h, w), ipp(h, w), iqq(h, w), ipq(h, w);
    ip.build([&](int r, int c) { return static_cast<double>(p[static_cast<size_t>(r) * w + c]); });
    iq.build([&](int r, int c) { return static_cast<double>(q[static_cast<size_t>(r) * w + c]); });
    ipp.build([&](int r, int c) {
        const double v = p[static_cast<size_t>(r) * w + c];
        return v * v;
    });
    iqq.build([&](int r, int c) {
        const double v = q[static_cast<size_t>(r) * w + c];
        return v * v;
    });
    ipq.build([&](int r, int c) {
        return static_cast<double>(p[static_cast<size_t>(r) * w + c]) * q[static_cast<size_t>(r) * w + c];
    });

    std::vector<double> um, vm, wm;
    if (grad) {
        um.assign(static_cast<size_t>(h) * w, 0.0);
        vm.assign(static_cast<size_t>(h) * w, 0.0);
        wm.assign(static_cast<size_t>(h) * w, 0.0);
    }

    double loss_sum = 0.0;
    for (int r = half; r < h - half; ++r) {
        for (int c = half; c < w - half; ++c) {
            const int r0 = r - half, r1 = r + half, c0 = c - half, c1 = c + half;
            const double mu_p = ip.sum(r0, c0, r1, c1) / n;
            const double mu_q = iq.sum(r0, c0, r1, c1) / n;
            const double var_p = std::max(0.0, ipp.sum(r0, c0, r1, c1) / n - mu_p * mu_p);
            const double var_q = std::max(0.0, iqq.sum(r0, c0, r1, c1) / n - mu_q * mu_q);
            const double cov = ipq.sum(r0, c0, r1, c1) / n - mu_p * mu_q;

            const double a1 = 2.0 * mu_p * mu_q + params.c1;
            const double a2 = 2.0 * cov + params.c2;
            const double b1 = mu_p * mu_p + mu_q * mu_q + params.c1;
            const double b2 = var_p + var_q + params.c2;
            const double ssim = (a1 * a2) / (b1 * b2);
            loss_sum += 1.0 - ssim;

            if (grad) {
                const double coef = 2.0 / (n * b1 * b2);
                const size_t i = static_cast<size_t>(r) * w + c;
                um[i] = coef * (mu_p * a2 - a1 * mu_p - ssim * (mu_q * b2 - b1 * mu_q));
                vm[i] = coef * a1;
                wm[i] = -coef * ssim * b1;
            }
        }
    }

    if (grad) {
        Integral iu(h, w), iv(h, w), iw(h, w);
        iu.build([&](int r, int c) { return um[static_cast<size_t>(r) * w + c]; });
        iv.build([&](int r, int c) { return vm[static_cast<size_t>(r) * w + c]; });
        iw.build([&](int r, int c) { return wm[static_cast<size_t>(r) * w + c]; });
        const double scale = -grad_scale / static_cast<double>(centers);
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                const size_t i = static_cast<size_t>(r) * w + c;
                const double su = iu.sum_clipped(r - half, c - half, r + half, c + half);
                const double sv = iv.sum_clipped(r - half, c - half, r + half, c + half);
                const double sw = iw.sum_clipped(r - half, c - half, r + half, c + half);
                grad[i] += static_cast<float>(scale * (su + sv * p[i] + sw * q[i]));
            }
        }
    }
    return loss_sum / static_cast<double>(centers);
}

}  // namespace detail

// Mean over batch and interior pixels of (1 - SSIM). Differentiable in x_hat;
// restricted to unit exponents, which is the only configuration the combined
// similarity form differentiates cleanly.
inline double ssim_loss(const std::vector<Image>& x, const std::vector<Image>& x_hat,
                        const SsimParams& params,
                        std::vector<std::vector<float>>* grads = nullptr) {
    params.check();
    if (!params.unit_exponents())
        throw std::invalid_argument("ssim_loss requires alpha = beta = gamma = 1");
    if (x.size() != x_hat.size()) throw std::invalid_argument("batch sizes differ");
    if (x.empty()) throw std::invalid_argument("empty batch");
    const double inv_b = 1.0 / static_cast<double>(x.size());
    if (grads) {
        grads->assign(x.size(), {});
    }
    double loss = 0.0;
    for (size_t b = 0; b < x.size(); ++b) {
        if (!x[b].same_shape(x_hat[b])) throw std::invalid_argument("image shapes differ");
        float* g = nullptr;
        if (grads) {
            (*grads)[b].assign(x[b].pixels(), 0.0f);
            g = (*grads)[b].data();
        }
        loss += detail::ssim_loss_image(x[b].data.data(), x_hat[b].data.data(), x[b].height,
                                        x[b].width, params, g, inv_b);
    }
    return loss * inv_b;
}

// Sum of squared per-pixel differences, averaged over the batch.
inline double l2_loss(const std::vector<Image>& x, const std::vector<Image>& x_hat,
                      std::vector<std::vector<float>>* grads = nullptr) {
    if (x.size() != x_hat.size()) throw std::invalid_argument("batch sizes differ");
    if (x.empty()) throw std::invalid_argument("empty batch");
    const double inv_b = 1.0 / static_cast<double>(x.size());
    if (grads) grads->assign(x.size(), {});
    double loss = 0.0;
    for (size_t b = 0; b < x.size(); ++b) {
        if (!x[b].same_shape(x_hat[b])) throw std::invalid_argument("image shapes differ");
        double acc = 0.0;
        if (grads) (*grads)[b].resize(x[b].pixels());
        for (size_t i = 0; i < x[b].pixels(); ++i) {
            const double d = static_cast<double>(x_hat[b].data[i]) - x[b].data[i];
            acc += d * d;
            if (grads) (*grads)[b][i] = static_cast<float>(2.0 * d * inv_b);
        }
        loss += acc;
    }
    return loss * inv_b;
}

// Per-pixel squared difference.
inline ResidualMap l2_residual(const Image& x, const Image& x_hat) {
    if (!x.same_shape(x_hat)) throw std::invalid_argument("image shapes differ");
    ResidualMap res(x.height, x.width);
    for (size_t i = 0; i < res.scores.size(); ++i) {
        const float d = x.data[i] - x_hat.data[i];
        res.scores[i] = d * d;
    }
    return res;
}

}  // namespace texseg
