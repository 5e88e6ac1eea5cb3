#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "coin/errors.hpp"
#include "coin/image.hpp"
#include "coin/models.hpp"
#include "coin/rng.hpp"

namespace coin {

struct RiseConfig {
    int n_masks = 1000;
    int cell_grid = 7;
    double keep_prob = 0.5;
    std::uint64_t seed = 11;
    int batch = 64;

    void validate() const {
        require_config(n_masks >= 1, "rise.n_masks must be >= 1");
        require_config(cell_grid >= 1, "rise.cell_grid must be >= 1");
        require_config(keep_prob > 0 && keep_prob < 1, "rise.keep_prob must be in (0,1)");
        require_config(batch >= 1, "rise.batch must be >= 1");
    }
    friend bool operator==(const RiseConfig&, const RiseConfig&) = default;
};

/// Index of a classifier stage; negative counts from the deepest (-1).
struct CamConfig {
    int target_layer = -1;
    friend bool operator==(const CamConfig&, const CamConfig&) = default;
};

namespace detail {
/// Neumaier-compensated accumulator.
struct CompensatedSum {
    double sum = 0, c = 0;
    void add(double v) {
        const double t = sum + v;
        c += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
        sum = t;
    }
    [[nodiscard]] double value() const { return sum + c; }
};

inline int resolve_layer(const ClassifierSpec& spec, int layer) {
    const int idx = layer < 0 ? spec.depth + layer : layer;
    require_config(idx >= 0 && idx < spec.depth,
                   "cam.target_layer " + std::to_string(layer) + " is not a classifier stage (depth " +
                       std::to_string(spec.depth) + ")");
    return idx;
}

template <typename T>
Tensor<T> masked_batch(const Image& x, const std::vector<Image>& masks, std::size_t from, std::size_t to) {
    Tensor<T> t(Shape{static_cast<int>(to - from), 1, x.h, x.w});
    for (std::size_t m = from; m < to; ++m) {
        T* p = t.sample_ptr(static_cast<int>(m - from));
        for (std::size_t i = 0; i < x.size(); ++i) p[i] = static_cast<T>(x.px[i] * masks[m].px[i]);
    }
    return t;
}
}  // namespace detail

/// Random binary cell grids, bilinearly upsampled to (grid+1) cells and
/// cropped at a random offset inside one cell.
inline std::vector<Image> rise_masks(int h, int w, const RiseConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const int g = cfg.cell_grid;
    const int ch = (h + g - 1) / g, cw = (w + g - 1) / g;
    const double sy = static_cast<double>(g) / ((g + 1) * ch), sx = static_cast<double>(g) / ((g + 1) * cw);
    std::vector<Image> masks;
    masks.reserve(cfg.n_masks);
    for (int m = 0; m < cfg.n_masks; ++m) {
        Image cells(g, g);
        for (auto& v : cells.px) v = rng.bernoulli(cfg.keep_prob) ? 1.0f : 0.0f;
        const int oy = static_cast<int>(rng.index(ch)), ox = static_cast<int>(rng.index(cw));
        // the g x g lattice stretched over (g + 1) cells, read at the crop offset
        Image mask(h, w);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                const double y = (r + oy + 0.5) * sy - 0.5;
                const double x = (c + ox + 0.5) * sx - 0.5;
                const double yy = std::clamp(y, 0.0, g - 1.0), xx = std::clamp(x, 0.0, g - 1.0);
                const int y0 = std::min(static_cast<int>(yy), g - 1), x0 = std::min(static_cast<int>(xx), g - 1);
                const int y1 = std::min(y0 + 1, g - 1), x1 = std::min(x0 + 1, g - 1);
                const double fy = yy - y0, fx = xx - x0;
                mask(r, c) = static_cast<float>((1 - fy) * ((1 - fx) * cells(y0, x0) + fx * cells(y0, x1)) +
                                                fy * ((1 - fx) * cells(y1, x0) + fx * cells(y1, x1)));
            }
        masks.push_back(std::move(mask));
    }
    return masks;
}

/// sum_i f(X * M_i) M_i / (N p) over a pre-generated mask set.
template <typename T, typename Model>
Image rise_saliency(Model& clf, const Image& x, const std::vector<Image>& masks, const RiseConfig& cfg) {
    cfg.validate();
    std::vector<detail::CompensatedSum> acc(x.size());
    for (std::size_t s = 0; s < masks.size(); s += cfg.batch) {
        const std::size_t e = std::min(masks.size(), s + cfg.batch);
        const auto p = clf.probabilities(detail::masked_batch<T>(x, masks, s, e));
        for (std::size_t m = s; m < e; ++m)
            for (std::size_t i = 0; i < x.size(); ++i) acc[i].add(p[m - s] * masks[m].px[i]);
    }
    Image out(x.h, x.w);
    const double norm = static_cast<double>(masks.size()) * cfg.keep_prob;
    for (std::size_t i = 0; i < out.size(); ++i) out.px[i] = static_cast<float>(acc[i].value() / norm);
    return out;
}

template <typename T, typename Model>
Image rise_saliency(Model& clf, const Image& x, const RiseConfig& cfg) {
    return rise_saliency<T>(clf, x, rise_masks(x.h, x.w, cfg), cfg);
}

/// Spatial size of a classifier stage's activation.
inline int cam_resolution(const ClassifierSpec& spec, int layer) {
    return spec.input_size >> (detail::resolve_layer(spec, layer) + 1);
}

/// Score-CAM: each activation channel, bilinearly upsampled and min-max
/// normalized, masks the input; its weight is f(X * M_k) - f(0).
template <typename T>
Image scorecam_saliency(Classifier<T>& clf, const Image& x, const CamConfig& cfg) {
    const int layer = detail::resolve_layer(clf.spec(), cfg.target_layer);
    Tensor<T> act;
    {
        nn::NoGradGuard ng;
        Tensor<T> xt = stack<T>({&x});
        act = clf.forward(nn::constant(xt)).stages[layer]->value;
    }
    const Shape as = act.shape();
    std::vector<Image> masks;
    for (int k = 0; k < as.c; ++k) {
        Image a(as.h, as.w);
        for (int r = 0; r < as.h; ++r)
            for (int c = 0; c < as.w; ++c) a(r, c) = static_cast<float>(act.at(0, k, r, c));
        Image up = resize_bilinear(a, x.h, x.w);
        const auto [lo, hi] = std::minmax_element(up.px.begin(), up.px.end());
        const float l = *lo, span = *hi - *lo;
        for (auto& v : up.px) v = span > 0 ? (v - l) / span : 0.0f;
        masks.push_back(std::move(up));
    }
    const double base = clf.probabilities(Tensor<T>(Shape{1, 1, x.h, x.w}))[0];
    std::vector<double> weight(as.c, 0.0);
    for (int s = 0; s < as.c; s += 64) {
        const int e = std::min(as.c, s + 64);
        const auto p = clf.probabilities(detail::masked_batch<T>(x, masks, s, e));
        for (int k = s; k < e; ++k) weight[k] = p[k - s] - base;
    }
    Image out(x.h, x.w);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = 0;
        for (int k = 0; k < as.c; ++k) v += weight[k] * masks[k].px[i];
        out.px[i] = static_cast<float>(std::max(v, 0.0));
    }
    return out;
}

/// Layer-CAM: ReLU(sum_k ReLU(dlogit/dA_k) * A_k), bilinearly upsampled.
template <typename T>
Image layercam_saliency(Classifier<T>& clf, const Image& x, const CamConfig& cfg) {
    const int layer = detail::resolve_layer(clf.spec(), cfg.target_layer);
    auto input = nn::leaf(stack<T>({&x}));
    auto out = clf.forward(input);
    nn::backward(out.logit);
    const auto& a = out.stages[layer]->value;
    const auto& g = out.stages[layer]->grad;
    const Shape as = a.shape();
    Image cam(as.h, as.w);
    for (int r = 0; r < as.h; ++r)
        for (int c = 0; c < as.w; ++c) {
            double v = 0;
            if (!g.empty())
                for (int k = 0; k < as.c; ++k)
                    v += std::max(static_cast<double>(g.at(0, k, r, c)), 0.0) * a.at(0, k, r, c);
            cam(r, c) = static_cast<float>(std::max(v, 0.0));
        }
    return resize_bilinear(cam, x.h, x.w);
}

}  // namespace coin
