#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "coin/errors.hpp"
#include "coin/image.hpp"
#include "coin/metrics.hpp"
#include "coin/models.hpp"

namespace coin {

struct CounterfactualResult {
    Image input;
    Image counterfactual;
    double p_x = 0;
    double p_cf = 0;
    Image diff;  // |X - X_cf|
};

/// X_cf for every image; dual-condition generators receive 1 - f(X).
template <typename T>
std::vector<CounterfactualResult> counterfactual(Generator<T>& gen, Classifier<T>& clf,
                                                 const std::vector<const Image*>& images, int batch = 32) {
    std::vector<CounterfactualResult> out;
    for (std::size_t s = 0; s < images.size(); s += batch) {
        std::vector<const Image*> part(images.begin() + s, images.begin() + std::min(images.size(), s + batch));
        Tensor<T> x = stack<T>(part);
        const auto px = clf.probabilities(x);
        std::optional<std::vector<T>> cond;
        if (gen.spec().n_conditions == 2) {
            cond.emplace();
            for (double p : px) cond->push_back(static_cast<T>(1.0 - p));
        }
        Tensor<T> xcf = gen.explain(x, cond);
        const auto pcf = clf.probabilities(xcf);
        for (std::size_t i = 0; i < part.size(); ++i) {
            CounterfactualResult r;
            r.input = *part[i];
            r.counterfactual = unstack(xcf, static_cast<int>(i));
            r.p_x = px[i];
            r.p_cf = pcf[i];
            r.diff = Image(r.input.h, r.input.w);
            for (std::size_t k = 0; k < r.diff.size(); ++k)
                r.diff.px[k] = std::abs(r.input.px[k] - r.counterfactual.px[k]);
            out.push_back(std::move(r));
        }
    }
    return out;
}

template <typename T>
CounterfactualResult counterfactual(Generator<T>& gen, Classifier<T>& clf, const Image& image) {
    return counterfactual(gen, clf, std::vector<const Image*>{&image}).front();
}

/// diff > threshold.
inline Mask diff_to_mask(const Image& diff, double threshold) {
    Mask m(diff.h, diff.w);
    for (std::size_t i = 0; i < diff.size(); ++i) m.px[i] = diff.px[i] > threshold;
    return m;
}

struct MaskPostprocessConfig {
    double threshold = 0.5;
    int morph_kernel = 3;
    bool keep_largest = true;

    void validate() const {
        require_config(threshold >= 0 && threshold <= 1, "explain.threshold must be in [0,1]");
        require_config(morph_kernel >= 1 && morph_kernel % 2 == 1, "explain.morph_kernel must be odd and >= 1");
    }
    friend bool operator==(const MaskPostprocessConfig&, const MaskPostprocessConfig&) = default;
};

namespace detail {
/// Square-window max (dilate) or min (erode); the window is clipped at the border.
inline Mask morph(const Mask& m, int k, bool dilate) {
    const int r = k / 2;
    Mask tmp(m.h, m.w), out(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            bool v = !dilate;
            for (int dx = std::max(0, x - r); dx <= std::min(m.w - 1, x + r); ++dx)
                v = dilate ? (v || m(y, dx)) : (v && m(y, dx));
            tmp(y, x) = v;
        }
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            bool v = !dilate;
            for (int dy = std::max(0, y - r); dy <= std::min(m.h - 1, y + r); ++dy)
                v = dilate ? (v || tmp(dy, x)) : (v && tmp(dy, x));
            out(y, x) = v;
        }
    return out;
}
}  // namespace detail

inline Mask dilate(const Mask& m, int k) { return detail::morph(m, k, true); }
inline Mask erode(const Mask& m, int k) { return detail::morph(m, k, false); }
inline Mask closing(const Mask& m, int k) { return erode(dilate(m, k), k); }
inline Mask opening(const Mask& m, int k) { return dilate(erode(m, k), k); }

/// 4-connected component labels (0 = background, 1..n in raster order of first pixel).
inline std::pair<Grid<int>, int> label_components(const Mask& m) {
    Grid<int> lab(m.h, m.w, 0);
    int n = 0;
    std::vector<int> stack;
    for (int i = 0; i < static_cast<int>(m.size()); ++i) {
        if (!m.px[i] || lab.px[i]) continue;
        lab.px[i] = ++n;
        stack.push_back(i);
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int y = p / m.w, x = p % m.w;
            const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
            for (const auto& q : nb) {
                if (q[0] < 0 || q[1] < 0 || q[0] >= m.h || q[1] >= m.w) continue;
                const int qi = q[0] * m.w + q[1];
                if (m.px[qi] && !lab.px[qi]) {
                    lab.px[qi] = n;
                    stack.push_back(qi);
                }
            }
        }
    }
    return {std::move(lab), n};
}

/// Keep the biggest 4-connected component; ties go to the one whose first
/// pixel comes first in raster order.
inline Mask largest_component(const Mask& m) {
    auto [lab, n] = label_components(m);
    Mask out(m.h, m.w);
    if (n == 0) return out;
    std::vector<std::size_t> sizes(n + 1, 0);
    for (int v : lab.px) ++sizes[v];
    int best = 1;
    for (int c = 2; c <= n; ++c)
        if (sizes[c] > sizes[best]) best = c;
    for (std::size_t i = 0; i < out.size(); ++i) out.px[i] = lab.px[i] == best;
    return out;
}

/// Closing, opening, then (optionally) the largest component.
inline Mask postprocess_mask(const Mask& m, const MaskPostprocessConfig& cfg) {
    cfg.validate();
    Mask r = opening(closing(m, cfg.morph_kernel), cfg.morph_kernel);
    return cfg.keep_largest ? largest_component(r) : r;
}

/// n evenly spaced values covering [0, 1].
inline std::vector<double> default_grid(int n = 101) {
    require_config(n >= 1, "sweep grid needs at least one value");
    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) g[i] = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    return g;
}

/// Rescale to [0, 1]; a constant map becomes all zeros.
inline Image normalize_minmax(const Image& m) {
    Image out = m;
    if (m.px.empty()) return out;
    const auto [lo, hi] = std::minmax_element(m.px.begin(), m.px.end());
    const float a = *lo, span = *hi - *lo;
    for (auto& v : out.px) v = span > 0 ? (v - a) / span : 0.0f;
    return out;
}

struct SweepResult {
    double best_threshold = 0;
    double best_iou = 0;
    std::vector<std::pair<double, double>> curve;
    std::vector<double> per_image_iou;  // at best_threshold, eligible maps only
};

/// Best dataset-level binarization threshold by mean IoU over maps whose
/// ground truth is nonempty. With `postprocess` set, every binarized mask goes
/// through postprocess_mask (its threshold field is ignored).
inline SweepResult threshold_sweep(const std::vector<Image>& maps, const std::vector<Mask>& gts,
                                   const std::vector<double>& grid, bool postprocess,
                                   const MaskPostprocessConfig& post = {}) {
    require_config(maps.size() == gts.size(), "threshold_sweep: maps and masks differ in count");
    require_config(!grid.empty(), "threshold_sweep: empty grid");
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < gts.size(); ++i)
        if (area(gts[i]) > 0) eligible.push_back(i);
    require_config(!eligible.empty(), "threshold_sweep: no slice with a nonempty ground-truth mask");

    SweepResult res;
    res.best_iou = -1;
    for (double t : grid) {
        double sum = 0;
        std::vector<double> per;
        for (std::size_t i : eligible) {
            Mask m = diff_to_mask(maps[i], t);
            if (postprocess) m = postprocess_mask(m, post);
            per.push_back(iou(gts[i], m));
            sum += per.back();
        }
        const double mean = sum / static_cast<double>(eligible.size());
        res.curve.emplace_back(t, mean);
        if (mean > res.best_iou || (mean == res.best_iou && t < res.best_threshold)) {
            res.best_iou = mean;
            res.best_threshold = t;
            res.per_image_iou = std::move(per);
        }
    }
    return res;
}

}  // namespace coin
