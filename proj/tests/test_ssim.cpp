#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "texseg/ssim.hpp"

using namespace texseg;

namespace {

// direct transliteration of the combined similarity index, kept independent
// of the library path it checks
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

Image constant_patch(int k, float v) { return Image(k, k, v); }

Image checker_patch(int k, float a, float b) {
    Image img(k, k);
    for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c) img.at(r, c) = ((r + c) & 1) ? b : a;
    return img;
}

}  // namespace

TEST_CASE("patch statistics are population moments") {
    const SsimParams params;

    const auto flat = patch_stats(constant_patch(4, 0.5f), constant_patch(4, 0.5f));
    CHECK(flat.mu_p == doctest::Approx(0.5));
    CHECK(flat.var_p == doctest::Approx(0.0));
    CHECK(flat.cov_pq == doctest::Approx(0.0));

    const auto separated = patch_stats(constant_patch(3, 0.0f), constant_patch(3, 1.0f));
    CHECK(separated.mu_p == doctest::Approx(0.0));
    CHECK(separated.mu_q == doctest::Approx(1.0));
    CHECK(separated.var_p == doctest::Approx(0.0));
    CHECK(separated.cov_pq == doctest::Approx(0.0));

    Image p(2, 2), q(2, 2);
    p.data = {0, 1, 1, 0};
    q.data = {1, 0, 0, 1};
    const auto anti = patch_stats(p, q);
    CHECK(anti.mu_p == doctest::Approx(0.5));
    CHECK(anti.mu_q == doctest::Approx(0.5));
    CHECK(anti.var_p == doctest::Approx(0.25));
    CHECK(anti.var_q == doctest::Approx(0.25));
    CHECK(anti.cov_pq == doctest::Approx(-0.25));

    CHECK_THROWS(patch_stats(Image(2, 2, 0.0f), Image(3, 3, 0.0f)));

    // Cauchy-Schwarz bound on random patches
    for (int trial = 0; trial < 20; ++trial) {
        const auto st = patch_stats(testutil::random_image(7, 7, 100 + trial),
                                    testutil::random_image(7, 7, 200 + trial));
        CHECK(std::abs(st.cov_pq) <= std::sqrt(st.var_p * st.var_q) + 1e-9);
    }
}

TEST_CASE("comparison functions separate luminance, contrast and structure") {
    const SsimParams params;
    const int K = 11;

    // identical patches
    const auto same = ssim_components(patch_stats(constant_patch(K, 0.3f), constant_patch(K, 0.3f)),
                                      params);
    CHECK(same.l == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(same.c == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(same.s == doctest::Approx(1.0).epsilon(1e-12));

    // luminance shift only: means 0.25 vs 0.75
    const Image lum_p = constant_patch(K, 0.25f);
    const Image lum_q = constant_patch(K, 0.75f);
    const auto lum = ssim_components(patch_stats(lum_p, lum_q), params);
    const double l_expected = (2 * 0.25 * 0.75 + 0.01) / (0.25 * 0.25 + 0.75 * 0.75 + 0.01);
    CHECK(lum.l == doctest::Approx(l_expected).epsilon(1e-9));
    CHECK(lum.l < 0.62);
    CHECK(lum.c == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(lum.s == doctest::Approx(1.0).epsilon(1e-12));

    // structure negation: same mean and variance, covariance flipped
    Image str_p(K, K), str_q(K, K);
    for (int r = 0; r < K; ++r)
        for (int c = 0; c < K; ++c) {
            str_p.at(r, c) = ((r + c) & 1) ? 0.5f : 0.0f;
            str_q.at(r, c) = 0.5f - str_p.at(r, c);
        }
    const auto str = ssim_components(patch_stats(str_p, str_q), params);
    CHECK(str.s < 0.0);
    CHECK(str.l > 0.99);
    CHECK(str.c > 0.99);
}

TEST_CASE("the three constructed pairs share an l2 residual of 0.25 but split the argmin") {
    const SsimParams params;
    const int K = 11;

    const Image lum_p = constant_patch(K, 0.25f), lum_q = constant_patch(K, 0.75f);
    const Image con_p = constant_patch(K, 0.5f), con_q = checker_patch(K, 0.0f, 1.0f);
    Image str_p(K, K), str_q(K, K);
    for (int r = 0; r < K; ++r)
        for (int c = 0; c < K; ++c) {
            str_p.at(r, c) = ((r + c) & 1) ? 0.5f : 0.0f;
            str_q.at(r, c) = 0.5f - str_p.at(r, c);
        }

    const std::pair<const Image*, const Image*> pairs[3] = {
        {&lum_p, &lum_q}, {&con_p, &con_q}, {&str_p, &str_q}};

    // per-pixel squared residual is exactly 0.25 in all three cases
    for (const auto& [p, q] : pairs) {
        const ResidualMap res = l2_residual(*p, *q);
        for (float v : res.scores) CHECK(v == 0.25f);
    }

    const auto lum = ssim_components(patch_stats(lum_p, lum_q), params);
    CHECK(lum.l < lum.c);
    CHECK(lum.l < lum.s);

    const auto con = ssim_components(patch_stats(con_p, con_q), params);
    CHECK(con.c < con.l);
    CHECK(con.c < con.s);

    const auto str = ssim_components(patch_stats(str_p, str_q), params);
    CHECK(str.s < str.l);
    CHECK(str.s < str.c);
}

TEST_CASE("ssim_patch: identity, symmetry, range, reference oracle") {
    const SsimParams params;

    const Image any = testutil::random_image(11, 11, 42);
    CHECK(ssim_patch(any, any, params) == doctest::Approx(1.0).epsilon(1e-9));

    for (int trial = 0; trial < 50; ++trial) {
        const Image p = testutil::random_image(11, 11, 1000 + trial);
        const Image q = testutil::random_image(11, 11, 2000 + trial);
        const double pq = ssim_patch(p, q, params);
        const double qp = ssim_patch(q, p, params);
        CHECK(std::abs(pq - qp) <= 1e-12);
        CHECK(pq >= -1.0 - 1e-9);
        CHECK(pq <= 1.0 + 1e-9);
        CHECK(pq == doctest::Approx(ssim_reference(p, q, params.c1, params.c2)).epsilon(1e-9));
    }

    const double lum = ssim_patch(constant_patch(11, 0.25f), constant_patch(11, 0.75f), params);
    CHECK(lum == doctest::Approx((2 * 0.25 * 0.75 + 0.01) / (0.625 + 0.01)).epsilon(1e-9));

    CHECK_THROWS(ssim_patch(Image(11, 11, 0.1f), Image(9, 9, 0.1f), params));
}

TEST_CASE("exponent handling") {
    SsimParams params;
    params.alpha = 2.0;
    params.beta = 3.0;
    params.gamma = 1.0;
    const Image p = testutil::random_image(11, 11, 5);
    const Image q = testutil::random_image(11, 11, 6);
    const auto co = ssim_components(patch_stats(p, q), params);
    CHECK(ssim_patch(p, q, params) ==
          doctest::Approx(std::pow(co.l, 2.0) * std::pow(co.c, 3.0) * co.s).epsilon(1e-12));

    // negative structure with a fractional exponent is a configuration error
    Image sp(4, 4), sq(4, 4);
    for (int i = 0; i < 16; ++i) {
        sp.data[i] = (i % 2) ? 0.5f : 0.0f;
        sq.data[i] = 0.5f - sp.data[i];
    }
    SsimParams frac;
    frac.gamma = 0.5;
    CHECK_THROWS_AS(ssim_patch(sp, sq, frac), std::invalid_argument);

    SsimParams bad;
    bad.window_size = 10;
    CHECK_THROWS(bad.check());
    bad.window_size = 11;
    bad.c1 = 0.0;
    CHECK_THROWS(bad.check());
}

TEST_CASE("ssim_map: borders, support of a single defect, cross-check against ssim_patch") {
    const SsimParams params;  // K = 11, half = 5

    const Image x = testutil::random_image(24, 24, 9);
    const SsimMaps same = ssim_map(x, x, params);
    for (float v : same.ssim) CHECK(v == doctest::Approx(1.0).epsilon(1e-7));

    // single differing pixel influences exactly the windows that contain it
    Image clean(32, 32, 0.5f), dirty(32, 32, 0.5f);
    dirty.at(16, 16) = 1.0f;
    const SsimMaps maps = ssim_map(clean, dirty, params);
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c) {
            const bool interior = r >= 5 && r < 27 && c >= 5 && c < 27;
            const bool touched = interior && std::abs(r - 16) <= 5 && std::abs(c - 16) <= 5;
            if (touched)
                CHECK(maps.ssim[r * 32 + c] < 1.0f);
            else
                CHECK(maps.ssim[r * 32 + c] == 1.0f);
        }

    // interior map values equal ssim_patch on the extracted windows
    const Image a = testutil::random_image(20, 26, 31);
    const Image b = testutil::random_image(20, 26, 32);
    const SsimMaps m = ssim_map(a, b, params);
    for (int r = 5; r < 15; ++r)
        for (int c = 5; c < 21; ++c) {
            const Image wa = crop_patch(a, r - 5, c - 5, 11);
            const Image wb = crop_patch(b, r - 5, c - 5, 11);
            // map values are float rasters; compare at float precision
            CHECK(std::abs(static_cast<double>(m.ssim[r * 26 + c]) - ssim_patch(wa, wb, params)) <=
                  1e-6);
            CHECK(static_cast<double>(m.ssim[r * 26 + c]) ==
                  doctest::Approx(static_cast<double>(m.l[r * 26 + c]) * m.c[r * 26 + c] *
                                  m.s[r * 26 + c])
                      .epsilon(1e-6));
        }

    CHECK_THROWS(ssim_map(Image(8, 8, 0.1f), Image(8, 8, 0.1f), params));   // smaller than window
    CHECK_THROWS(ssim_map(Image(16, 16, 0.1f), Image(16, 18, 0.1f), params));
}

TEST_CASE("ssim_residual maps similarity to [0,1] anomaly scores") {
    const SsimParams params;

    const Image x = testutil::random_image(20, 20, 77);
    const ResidualMap zero = ssim_residual(x, x, params);
    for (float v : zero.scores) CHECK(v == doctest::Approx(0.0).epsilon(1e-7));

    const Image y = testutil::random_image(20, 20, 78);
    const ResidualMap ab = ssim_residual(x, y, params);
    const ResidualMap ba = ssim_residual(y, x, params);
    for (size_t i = 0; i < ab.scores.size(); ++i)
        CHECK(std::abs(ab.scores[i] - ba.scores[i]) <= 1e-7f);
    for (float v : ab.scores) CHECK((v >= 0.0f && v <= 1.0f));

    // anti-correlated structure drives the residual towards 1 at the center
    Image cp(21, 21), cq(21, 21);
    for (int r = 0; r < 21; ++r)
        for (int c = 0; c < 21; ++c) {
            cp.at(r, c) = ((r + c) & 1) ? 1.0f : 0.0f;
            cq.at(r, c) = 1.0f - cp.at(r, c);
        }
    const ResidualMap anti = ssim_residual(cp, cq, params);
    CHECK(anti.at(10, 10) > 0.9f);
}

TEST_CASE("ssim_loss: value, analytic gradient, monotone path to the target") {
    const SsimParams params;

    const Image x = testutil::random_image(16, 16, 55, 0.1f, 0.9f);
    CHECK(ssim_loss({x}, {x}, params) == doctest::Approx(0.0).epsilon(1e-9));

    Image xh = testutil::random_image(16, 16, 56, 0.1f, 0.9f);
    std::vector<std::vector<float>> grads;
    const double base = ssim_loss({x}, {xh}, params, &grads);
    CHECK(base > 0.0);
    REQUIRE(grads.size() == 1);
    REQUIRE(grads[0].size() == x.pixels());

    // central finite differences over every pixel
    double max_abs_grad = 0.0, max_err = 0.0;
    for (size_t i = 0; i < x.pixels(); ++i) {
        const float orig = xh.data[i];
        const float vp = orig + 1e-3f;
        const float vm = orig - 1e-3f;
        xh.data[i] = vp;
        const double lp = ssim_loss({x}, {xh}, params);
        xh.data[i] = vm;
        const double lm = ssim_loss({x}, {xh}, params);
        xh.data[i] = orig;
        const double fd = (lp - lm) / (static_cast<double>(vp) - static_cast<double>(vm));
        max_abs_grad = std::max(max_abs_grad, std::abs(fd));
        max_err = std::max(max_err, std::abs(fd - grads[0][i]));
    }
    CHECK(max_abs_grad > 0.0);
    CHECK(max_err / max_abs_grad < 1e-2);

    // walking x_hat towards x lowers the loss at every sampled step
    double prev = base;
    for (int step = 1; step <= 5; ++step) {
        const double t = step / 5.0;
        Image mix(16, 16);
        for (size_t i = 0; i < mix.data.size(); ++i)
            mix.data[i] = static_cast<float>((1 - t) * xh.data[i] + t * x.data[i]);
        const double loss = ssim_loss({x}, {mix}, params);
        CHECK(loss < prev);
        prev = loss;
    }

    SsimParams exps;
    exps.alpha = 2.0;
    CHECK_THROWS(ssim_loss({x}, {xh}, exps));
    CHECK_THROWS(ssim_loss({x}, {Image(18, 18, 0.5f)}, params));
}

TEST_CASE("l2 loss and residual") {
    const Image x(128, 128, 0.0f);
    const Image xh(128, 128, 0.5f);
    CHECK(l2_loss({x}, {x}) == 0.0);
    CHECK(l2_loss({x}, {xh}) == doctest::Approx(4096.0).epsilon(1e-12));

    std::vector<std::vector<float>> grads;
    const Image a = testutil::random_image(9, 9, 14);
    const Image b = testutil::random_image(9, 9, 15);
    l2_loss({a}, {b}, &grads);
    for (size_t i = 0; i < a.pixels(); ++i)
        CHECK(grads[0][i] == doctest::Approx(2.0 * (b.data[i] - a.data[i])).epsilon(1e-6));

    const ResidualMap zero = l2_residual(a, a);
    for (float v : zero.scores) CHECK(v == 0.0f);

    const ResidualMap ab = l2_residual(a, b);
    const ResidualMap ba = l2_residual(b, a);
    CHECK(ab.scores == ba.scores);
    for (size_t i = 0; i < a.pixels(); ++i) {
        const float d = a.data[i] - b.data[i];
        CHECK(ab.scores[i] == d * d);
    }

    CHECK_THROWS(l2_residual(a, Image(4, 4, 0.1f)));
    CHECK_THROWS(l2_loss({a}, {}));
}
