#pragma once

// Whole-image inference and metrics: strided patch reconstruction with
// overlap averaging, residual maps per method, thresholding plus
// morphological opening, pixel-pooled ROC/AUC over a dataset, and
// per-region overlap quantiles at fixed false positive rates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "texseg/image.hpp"
#include "texseg/models.hpp"
#include "texseg/rng.hpp"
#include "texseg/ssim.hpp"
#include "texseg/training.hpp"

namespace texseg {

// Patch anchor positions along one axis: multiples of the stride, plus a
// final position clamped so the far border is always covered.
inline std::vector<int> stride_positions(int dim, int patch, int stride) {
    if (dim < patch) throw std::invalid_argument("image smaller than the patch size");
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    std::vector<int> pos;
    for (int p = 0; p + patch <= dim; p += stride) pos.push_back(p);
    if (pos.empty() || pos.back() != dim - patch) pos.push_back(dim - patch);
    return pos;
}

// Core strided sweep; recon_batch maps a vector of patches to their
// reconstructions. Every pixel is the arithmetic mean of all covering
// patch reconstructions.
template <typename ReconBatch>
Image strided_reconstruct_fn(const Image& img, int patch_size, int stride, ReconBatch&& recon_batch,
                             int batch = 16) {
    const auto rows = stride_positions(img.height, patch_size, stride);
    const auto cols = stride_positions(img.width, patch_size, stride);

    std::vector<double> sum(img.pixels(), 0.0);
    std::vector<std::uint32_t> cnt(img.pixels(), 0);

    std::vector<std::pair<int, int>> anchors;
    for (int r : rows)
        for (int c : cols) anchors.emplace_back(r, c);

    for (size_t start = 0; start < anchors.size(); start += batch) {
        const size_t take = std::min<size_t>(batch, anchors.size() - start);
        std::vector<Image> patches;
        patches.reserve(take);
        for (size_t i = 0; i < take; ++i)
            patches.push_back(
                crop_patch(img, anchors[start + i].first, anchors[start + i].second, patch_size));
        const std::vector<Image> recon = recon_batch(patches);
        if (recon.size() != take) throw std::logic_error("reconstruction batch size mismatch");
        for (size_t i = 0; i < take; ++i) {
            const auto [top, left] = anchors[start + i];
            for (int r = 0; r < patch_size; ++r)
                for (int c = 0; c < patch_size; ++c) {
                    const size_t at = static_cast<size_t>(top + r) * img.width + left + c;
                    sum[at] += recon[i].at(r, c);
                    ++cnt[at];
                }
        }
    }

    Image out(img.height, img.width);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<float>(std::clamp(sum[i] / cnt[i], 0.0, 1.0));
    return out;
}

inline Image strided_reconstruct(const Autoencoder& net, const Image& img, int stride = 30) {
    return strided_reconstruct_fn(img, net.spec.input_size, stride,
                                  [&](const std::vector<Image>& b) { return net.reconstruct(b); });
}

// Full-image residual map for the given evaluation method. L2 and SSIM apply
// to the deterministic autoencoder, FM evaluates with the per-pixel l2
// residual, and the VAE method averages per-patch N-sample residuals over
// the strided sweep.
inline ResidualMap residual_for(LossKind method, const Autoencoder& net, const Image& img,
                                const SsimParams& params, int stride = 30, std::uint64_t seed = 0) {
    const Variant v = net.spec.variant;
    const bool compatible = (method == LossKind::VAE && v == Variant::VAE) ||
                            (method == LossKind::FM && v == Variant::FM) ||
                            ((method == LossKind::L2 || method == LossKind::SSIM) &&
                             (v == Variant::AE || v == Variant::FM));
    if (!compatible)
        throw std::invalid_argument("evaluation method '" + to_string(method) +
                                    "' is incompatible with a '" + to_string(v) + "' checkpoint");

    if (method == LossKind::VAE) {
        const int patch = net.spec.input_size;
        const auto rows = stride_positions(img.height, patch, stride);
        const auto cols = stride_positions(img.width, patch, stride);
        std::vector<double> sum(img.pixels(), 0.0);
        std::vector<std::uint32_t> cnt(img.pixels(), 0);
        int index = 0;
        for (int top : rows)
            for (int left : cols) {
                const Image p = crop_patch(img, top, left, patch);
                const ResidualMap rp =
                    vae_residual(net, p, net.spec.vae_samples, derive_seed(seed, index++));
                for (int r = 0; r < patch; ++r)
                    for (int c = 0; c < patch; ++c) {
                        const size_t at = static_cast<size_t>(top + r) * img.width + left + c;
                        sum[at] += rp.at(r, c);
                        ++cnt[at];
                    }
            }
        ResidualMap res(img.height, img.width);
        for (size_t i = 0; i < res.scores.size(); ++i)
            res.scores[i] = static_cast<float>(sum[i] / cnt[i]);
        return res;
    }

    const Image recon = strided_reconstruct(net, img, stride);
    if (method == LossKind::SSIM) return ssim_residual(img, recon, params);
    return l2_residual(img, recon);  // L2 and FM
}

// --- Thresholding and morphology ---------------------------------------------

inline GroundTruthMask binarize(const ResidualMap& res, double threshold) {
    if (!std::isfinite(threshold)) throw std::invalid_argument("threshold must be finite");
    GroundTruthMask mask(res.height, res.width);
    for (size_t i = 0; i < res.scores.size(); ++i)
        mask.data[i] = res.scores[i] > threshold ? 1 : 0;
    return mask;
}

// Discrete disk of diameter 4: offsets with di^2 + dj^2 <= 4 (13 taps).
inline constexpr int kDisk4Offsets[13][2] = {{0, 0},  {-1, 0}, {1, 0},  {0, -1}, {0, 1},
                                             {-1, -1}, {-1, 1}, {1, -1}, {1, 1},  {-2, 0},
                                             {2, 0},   {0, -2}, {0, 2}};

// Erosion treats out-of-image as background.
inline GroundTruthMask erode_disk4(const GroundTruthMask& mask) {
    GroundTruthMask out(mask.height, mask.width);
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c) {
            bool all = true;
            for (const auto& off : kDisk4Offsets) {
                const int rr = r + off[0], cc = c + off[1];
                if (rr < 0 || rr >= mask.height || cc < 0 || cc >= mask.width || !mask.at(rr, cc)) {
                    all = false;
                    break;
                }
            }
            out.at(r, c) = all ? 1 : 0;
        }
    return out;
}

inline GroundTruthMask dilate_disk4(const GroundTruthMask& mask) {
    GroundTruthMask out(mask.height, mask.width);
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c) {
            bool any = false;
            for (const auto& off : kDisk4Offsets) {
                const int rr = r + off[0], cc = c + off[1];
                if (rr >= 0 && rr < mask.height && cc >= 0 && cc < mask.width && mask.at(rr, cc)) {
                    any = true;
                    break;
                }
            }
            out.at(r, c) = any ? 1 : 0;
        }
    return out;
}

inline GroundTruthMask open_disk4(const GroundTruthMask& mask) {
    return dilate_disk4(erode_disk4(mask));
}

// --- ROC ------------------------------------------------------------------------

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

// Points sorted by descending threshold; both rates are non-decreasing along
// the list, starting at (0,0) above the maximum score and ending at (1,1).
struct RocCurve {
    std::vector<RocPoint> points;
    double auc = 0.0;
};

namespace detail {

inline void check_eval_pairs(const std::vector<ResidualMap>& residuals,
                             const std::vector<GroundTruthMask>& masks) {
    if (residuals.size() != masks.size() || residuals.empty())
        throw std::invalid_argument("residual/mask lists must align and be non-empty");
    for (size_t i = 0; i < residuals.size(); ++i) {
        if (residuals[i].height != masks[i].height || residuals[i].width != masks[i].width)
            throw std::invalid_argument("residual/mask dimensions differ");
        for (float s : residuals[i].scores)
            if (!(s >= 0.0f) || !std::isfinite(s))
                throw std::invalid_argument("residual scores must be finite and >= 0");
    }
}

struct Confusion {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion pooled_confusion(const std::vector<ResidualMap>& residuals,
                                  const std::vector<GroundTruthMask>& masks, double threshold,
                                  bool apply_opening) {
    Confusion conf;
    for (size_t i = 0; i < residuals.size(); ++i) {
        GroundTruthMask det = binarize(residuals[i], threshold);
        if (apply_opening) det = open_disk4(det);
        const auto& gt = masks[i];
        for (size_t j = 0; j < det.data.size(); ++j) {
            const bool d = det.data[j] != 0, g = gt.data[j] != 0;
            if (d && g)
                ++conf.tp;
            else if (d && !g)
                ++conf.fp;
            else if (!d && g)
                ++conf.fn;
            else
                ++conf.tn;
        }
    }
    return conf;
}

}  // namespace detail

// Pixel-pooled ROC over the whole dataset. Thresholds are quantiles of the
// pooled score distribution (all unique scores when there are fewer than
// n_thresholds), plus a sentinel above the maximum; the curve is closed with
// the trivial all-positive point (1,1).
inline RocCurve roc_curve(const std::vector<ResidualMap>& residuals,
                          const std::vector<GroundTruthMask>& masks, int n_thresholds = 256,
                          bool apply_opening = true) {
    detail::check_eval_pairs(residuals, masks);
    if (n_thresholds < 1) throw std::invalid_argument("need at least one threshold");

    std::int64_t defect = 0, background = 0;
    std::vector<float> pooled;
    for (size_t i = 0; i < residuals.size(); ++i) {
        pooled.insert(pooled.end(), residuals[i].scores.begin(), residuals[i].scores.end());
        for (auto v : masks[i].data) (v ? defect : background) += 1;
    }
    if (defect == 0 || background == 0)
        throw std::invalid_argument("ROC undefined: ground truth is all-defect or all-background");

    std::sort(pooled.begin(), pooled.end());
    pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

    std::vector<double> thresholds;
    if (static_cast<int>(pooled.size()) <= n_thresholds) {
        thresholds.assign(pooled.begin(), pooled.end());
    } else {
        thresholds.reserve(n_thresholds);
        for (int i = 0; i < n_thresholds; ++i) {
            const size_t idx = static_cast<size_t>(
                (static_cast<double>(i) * (pooled.size() - 1)) / (n_thresholds - 1));
            thresholds.push_back(pooled[idx]);
        }
        thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    }
    thresholds.push_back(static_cast<double>(pooled.back()) + 1.0);  // sentinel -> (0,0)
    std::sort(thresholds.rbegin(), thresholds.rend());               // descending

    RocCurve curve;
    curve.points.resize(thresholds.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (size_t ti = 0; ti < thresholds.size(); ++ti) {
        const auto conf = detail::pooled_confusion(residuals, masks, thresholds[ti], apply_opening);
        curve.points[ti] = {thresholds[ti],
                            static_cast<double>(conf.fp) / static_cast<double>(background),
                            static_cast<double>(conf.tp) / static_cast<double>(defect)};
    }
    // terminal all-positive point; stated without post-processing so the curve
    // always closes at (1,1)
    curve.points.push_back({static_cast<double>(pooled.front()) - 1.0, 1.0, 1.0});

    double auc = 0.0;
    for (size_t i = 1; i < curve.points.size(); ++i) {
        const auto& a = curve.points[i - 1];
        const auto& b = curve.points[i];
        auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
    }
    curve.auc = auc;
    return curve;
}

// Smallest threshold whose dataset FPR stays within the target, i.e. the
// operating point detecting the most while respecting the budget.
inline double threshold_for_fpr(const RocCurve& curve, double target_fpr) {
    double best = curve.points.front().threshold;
    for (const auto& p : curve.points)
        if (p.fpr <= target_fpr) best = p.threshold;
    return best;
}

// --- Connected components and per-region overlap --------------------------------

inline std::vector<std::vector<int>> connected_components8(const GroundTruthMask& mask) {
    std::vector<std::vector<int>> regions;
    std::vector<char> seen(mask.pixels(), 0);
    std::vector<int> stack;
    for (int start = 0; start < static_cast<int>(mask.pixels()); ++start) {
        if (!mask.data[start] || seen[start]) continue;
        regions.emplace_back();
        auto& region = regions.back();
        stack.assign(1, start);
        seen[start] = 1;
        while (!stack.empty()) {
            const int at = stack.back();
            stack.pop_back();
            region.push_back(at);
            const int r = at / mask.width, c = at % mask.width;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= mask.height || cc < 0 || cc >= mask.width) continue;
                    const int idx = rr * mask.width + cc;
                    if (mask.data[idx] && !seen[idx]) {
                        seen[idx] = 1;
                        stack.push_back(idx);
                    }
                }
        }
    }
    return regions;
}

struct OverlapQuantiles {
    double fpr_target = 0.0;
    double threshold = 0.0;
    double actual_fpr = 0.0;
    double q25 = 0.0, q50 = 0.0, q75 = 0.0;
    int n_regions = 0;
};

struct EvalReport {
    double auc = 0.0;
    RocCurve roc;
    std::vector<OverlapQuantiles> overlaps;
    int n_images = 0;
    double seconds = 0.0;
};

namespace detail {

inline double quantile_lower(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw std::invalid_argument("quantile of empty set");
    const size_t idx = static_cast<size_t>(std::floor(p * (sorted.size() - 1)));
    return sorted[idx];
}

}  // namespace detail

// Ground-truth regions are 8-connected components. For each requested FPR the
// detection threshold is chosen from the ROC sweep; overlaps are pooled over
// all regions in the dataset and summarized by lower-interpolated quantiles.
inline EvalReport region_overlap_quantiles(const std::vector<ResidualMap>& residuals,
                                           const std::vector<GroundTruthMask>& masks,
                                           const std::vector<double>& fprs, int n_thresholds = 256,
                                           bool apply_opening = true) {
    detail::check_eval_pairs(residuals, masks);
    EvalReport report;
    report.n_images = static_cast<int>(residuals.size());
    report.roc = roc_curve(residuals, masks, n_thresholds, apply_opening);
    report.auc = report.roc.auc;

    std::vector<std::vector<std::vector<int>>> regions(masks.size());
    size_t total_regions = 0;
    for (size_t i = 0; i < masks.size(); ++i) {
        regions[i] = connected_components8(masks[i]);
        total_regions += regions[i].size();
    }
    if (total_regions == 0)
        throw std::invalid_argument("no ground-truth defect regions in the dataset");

    for (double target : fprs) {
        OverlapQuantiles oq;
        oq.fpr_target = target;
        oq.threshold = threshold_for_fpr(report.roc, target);
        const auto conf = detail::pooled_confusion(residuals, masks, oq.threshold, apply_opening);
        oq.actual_fpr = static_cast<double>(conf.fp) / static_cast<double>(conf.fp + conf.tn);

        std::vector<double> overlaps;
        overlaps.reserve(total_regions);
        for (size_t i = 0; i < residuals.size(); ++i) {
            if (regions[i].empty()) continue;
            GroundTruthMask det = binarize(residuals[i], oq.threshold);
            if (apply_opening) det = open_disk4(det);
            for (const auto& region : regions[i]) {
                size_t hit = 0;
                for (int idx : region) hit += det.data[idx] ? 1 : 0;
                overlaps.push_back(static_cast<double>(hit) / static_cast<double>(region.size()));
            }
        }
        std::sort(overlaps.begin(), overlaps.end());
        oq.q25 = detail::quantile_lower(overlaps, 0.25);
        oq.q50 = detail::quantile_lower(overlaps, 0.50);
        oq.q75 = detail::quantile_lower(overlaps, 0.75);
        oq.n_regions = static_cast<int>(overlaps.size());
        report.overlaps.push_back(oq);
    }
    return report;
}

// --- Report output ----------------------------------------------------------------

inline void write_roc_csv(const RocCurve& curve, std::ostream& os) {
    os << "threshold,fpr,tpr\n";
    os.precision(9);
    for (const auto& p : curve.points)
        os << p.threshold << "," << p.fpr << "," << p.tpr << "\n";
}

inline void write_eval_report(const EvalReport& report, std::ostream& os) {
    os.precision(9);
    os << "images " << report.n_images << "\n";
    os << "auc " << report.auc << "\n";
    for (const auto& oq : report.overlaps)
        os << "overlap fpr " << oq.fpr_target << " threshold " << oq.threshold << " actual_fpr "
           << oq.actual_fpr << " q25 " << oq.q25 << " q50 " << oq.q50 << " q75 " << oq.q75
           << " regions " << oq.n_regions << "\n";
    os << "runtime sec " << report.seconds << "\n";
}

// Min-max scaling to [0,1] for PNG export; the scale goes into the report so
// raw scores stay recoverable.
struct ResidualScaling {
    float min_score = 0.0f;
    float max_score = 0.0f;
};

inline Image residual_to_unit_image(const ResidualMap& res, ResidualScaling* scaling = nullptr) {
    float lo = res.scores.empty() ? 0.0f : res.scores[0];
    float hi = lo;
    for (float v : res.scores) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (scaling) *scaling = {lo, hi};
    Image img(res.height, res.width);
    const float span = hi - lo;
    if (span > 0.0f)
        for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = (res.scores[i] - lo) / span;
    return img;
}

}  // namespace texseg
