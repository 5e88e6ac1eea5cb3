#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "coin/baselines.hpp"
#include "coin/data.hpp"
#include "coin/errors.hpp"
#include "coin/explain.hpp"
#include "coin/image.hpp"
#include "coin/metrics.hpp"
#include "coin/models.hpp"

namespace coin {

enum class MethodKind { Counterfactual, Rise, ScoreCam, LayerCam };

/// coin and singla are counterfactual (the generator decides the mode).
inline MethodKind method_kind(const std::string& name) {
    if (name == "coin" || name == "singla") return MethodKind::Counterfactual;
    if (name == "rise") return MethodKind::Rise;
    if (name == "scorecam") return MethodKind::ScoreCam;
    if (name == "layercam") return MethodKind::LayerCam;
    throw ConfigError("unknown method '" + name + "' (expected coin, singla, rise, scorecam or layercam)");
}

struct EvalOptions {
    double tau = 0.8;
    int grid_size = 101;
    MaskPostprocessConfig post;
    RiseConfig rise;
    CamConfig cam;
    int batch = 32;
};

/// Report plus the per-image artifacts, aligned with `ids` (every abnormal
/// validation slice, in split order).
struct MethodOutput {
    MetricsReport report;
    bool counterfactual = false;
    std::vector<std::string> ids;
    std::vector<Image> inputs;
    std::vector<Image> maps;             // diff or normalized saliency
    std::vector<Image> counterfactuals;  // empty for attribution methods
    std::vector<Mask> gts;
    std::vector<Mask> predicted;         // at the best threshold
    std::vector<bool> eligible;
};

namespace detail {

inline std::vector<const ScanSlice*> abnormal_val(const Dataset& ds) {
    std::vector<const ScanSlice*> out;
    for (const auto* s : ds.subset(ds.split.val))
        if (s->label == 1) out.push_back(s);
    require_config(!out.empty(), "validation split holds no abnormal slice");
    return out;
}

inline std::vector<const ScanSlice*> normal_val(const Dataset& ds) {
    std::vector<const ScanSlice*> out;
    for (const auto* s : ds.subset(ds.split.val))
        if (s->label == 0) out.push_back(s);
    return out;
}

/// Sweep, predicted masks and per-image records shared by every method.
inline void finish_output(MethodOutput& o, const EvalOptions& opt) {
    const auto sweep = threshold_sweep(o.maps, o.gts, default_grid(opt.grid_size), o.counterfactual, opt.post);
    o.report.best_threshold = sweep.best_threshold;
    o.report.iou_mean = sweep.best_iou;
    o.report.sweep = sweep.curve;
    std::size_t k = 0;
    for (std::size_t i = 0; i < o.maps.size(); ++i) {
        Mask m = diff_to_mask(o.maps[i], sweep.best_threshold);
        if (o.counterfactual) m = postprocess_mask(m, opt.post);
        o.predicted.push_back(std::move(m));
        o.eligible.push_back(area(o.gts[i]) > 0);
        if (!o.eligible.back()) continue;
        PerImageRecord r;
        r.id = o.ids[i];
        r.iou = sweep.per_image_iou[k++];
        o.report.per_image.push_back(r);
    }
    o.report.n_images = o.report.per_image.size();
}

}  // namespace detail

/// Counterfactual method on every abnormal validation slice: CV over
/// (f(X), f(X_cf)), FID of X_cf features against normal validation slices,
/// IoU from the postprocessed threshold sweep of |X - X_cf|.
template <typename T>
MethodOutput evaluate_counterfactual(const std::string& name, Generator<T>& gen, Classifier<T>& clf,
                                     const Dataset& ds, const EvalOptions& opt = {}) {
    MethodOutput o;
    o.counterfactual = true;
    o.report.method = name;
    const auto slices = detail::abnormal_val(ds);
    std::vector<const Image*> ims;
    for (const auto* s : slices) ims.push_back(&s->image);
    auto res = counterfactual(gen, clf, ims, opt.batch);
    std::vector<std::pair<double, double>> pairs;
    std::vector<const Image*> cfs;
    for (std::size_t i = 0; i < res.size(); ++i) {
        pairs.emplace_back(res[i].p_x, res[i].p_cf);
        cfs.push_back(&res[i].counterfactual);
    }
    o.report.cv = cv_score(pairs, opt.tau);

    const auto normals = detail::normal_val(ds);
    if (normals.size() >= 2 && cfs.size() >= 2) {
        std::vector<const Image*> nims;
        for (const auto* s : normals) nims.push_back(&s->image);
        o.report.fid = fid(clf.features(stack<T>(nims)), clf.features(stack<T>(cfs)));
    }

    for (std::size_t i = 0; i < slices.size(); ++i) {
        o.ids.push_back(slices[i]->id);
        o.inputs.push_back(slices[i]->image);
        o.gts.push_back(slices[i]->anomaly_mask);
        o.maps.push_back(std::move(res[i].diff));
        o.counterfactuals.push_back(std::move(res[i].counterfactual));
    }
    detail::finish_output(o, opt);
    // attach probabilities to the eligible records
    std::size_t k = 0;
    for (std::size_t i = 0; i < o.ids.size(); ++i) {
        if (!o.eligible[i]) continue;
        o.report.per_image[k].p_x = pairs[i].first;
        o.report.per_image[k].p_cf = pairs[i].second;
        ++k;
    }
    return o;
}

/// Attribution method: per-image min-max normalized saliency, plain sweep.
template <typename T>
MethodOutput evaluate_attribution(const std::string& name, Classifier<T>& clf, const Dataset& ds,
                                  const EvalOptions& opt = {}) {
    const MethodKind kind = method_kind(name);
    require_config(kind != MethodKind::Counterfactual, name + " needs a generator");
    MethodOutput o;
    o.report.method = name;
    const auto slices = detail::abnormal_val(ds);
    std::vector<Image> rise;
    if (kind == MethodKind::Rise) rise = rise_masks(slices.front()->image.h, slices.front()->image.w, opt.rise);
    for (const auto* s : slices) {
        Image m;
        switch (kind) {
            case MethodKind::Rise: m = rise_saliency<T>(clf, s->image, rise, opt.rise); break;
            case MethodKind::ScoreCam: m = scorecam_saliency(clf, s->image, opt.cam); break;
            default: m = layercam_saliency(clf, s->image, opt.cam); break;
        }
        o.ids.push_back(s->id);
        o.inputs.push_back(s->image);
        o.gts.push_back(s->anomaly_mask);
        o.maps.push_back(normalize_minmax(m));
    }
    detail::finish_output(o, opt);
    return o;
}

/// Single-channel PFM (little endian, bottom-to-top rows).
inline void write_pfm(const std::filesystem::path& p, const Image& im) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    f << "Pf\n" << im.w << ' ' << im.h << "\n-1.0\n";
    for (int r = im.h - 1; r >= 0; --r)
        f.write(reinterpret_cast<const char*>(&im.px[static_cast<std::size_t>(r) * im.w]),
                static_cast<std::streamsize>(im.w * sizeof(float)));
    if (!f) throw IoError("cannot write " + p.string());
}

inline Image read_pfm(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot read " + p.string());
    std::string magic;
    int w = 0, h = 0;
    double scale = 0;
    f >> magic >> w >> h >> scale;
    f.get();
    if (!f || magic != "Pf" || w <= 0 || h <= 0 || scale >= 0) throw IoError(p.string() + ": not a little-endian gray PFM");
    Image im(h, w);
    for (int r = h - 1; r >= 0; --r)
        if (!f.read(reinterpret_cast<char*>(&im.px[static_cast<std::size_t>(r) * w]),
                    static_cast<std::streamsize>(w * sizeof(float))))
            throw IoError(p.string() + ": truncated");
    return im;
}

/// metrics.{json,csv}, sweep.csv and images/<id>_{input,map,cf,pred,gt}.
inline void write_method_output(const std::filesystem::path& dir, const MethodOutput& o) {
    write_metrics(dir, o.report);
    const auto img = dir / "images";
    std::error_code ec;
    std::filesystem::create_directories(img, ec);
    if (ec) throw IoError("cannot create " + img.string() + ": " + ec.message());
    for (std::size_t i = 0; i < o.ids.size(); ++i) {
        const std::string& id = o.ids[i];
        write_image(img / (id + "_input.png"), o.inputs[i]);
        write_pfm(img / (id + "_map.pfm"), o.maps[i]);
        write_png_rgb(img / (id + "_map.png"), heatmap(o.counterfactual ? normalize_minmax(o.maps[i]) : o.maps[i]));
        if (!o.counterfactuals.empty()) write_image(img / (id + "_cf.png"), o.counterfactuals[i]);
        write_mask(img / (id + "_pred.png"), o.predicted[i]);
        write_mask(img / (id + "_gt.png"), o.gts[i]);
    }
}

}  // namespace coin
