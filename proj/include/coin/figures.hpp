#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coin/errors.hpp"
#include "coin/evaluate.hpp"
#include "coin/image.hpp"
#include "coin/metrics.hpp"

namespace coin {

inline constexpr Rgb tp_color{0, 255, 0};
inline constexpr Rgb fp_color{255, 0, 0};
inline constexpr Rgb fn_color{255, 255, 0};

/// TP green, FP red, FN yellow; true negatives show the input in gray.
inline RgbImage outcome_overlay(const Image& input, const Mask& pred, const Mask& gt) {
    require_same_shape(pred, gt, "outcome_overlay");
    RgbImage out = gray_to_rgb(input);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const bool p = pred.px[i] != 0, g = gt.px[i] != 0;
        if (p && g) out.px[i] = tp_color;
        else if (p) out.px[i] = fp_color;
        else if (g) out.px[i] = fn_color;
    }
    return out;
}

/// White ground truth on black.
inline RgbImage mask_panel(const Mask& m) {
    RgbImage out(m.h, m.w);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::uint8_t v = m.px[i] ? 255 : 0;
        out.px[i] = {v, v, v};
    }
    return out;
}

/// Side by side, `gap` black columns between panels.
inline RgbImage hconcat(const std::vector<RgbImage>& panels, int gap = 2) {
    require_config(!panels.empty(), "hconcat: no panels");
    int h = 0, w = 0;
    for (const auto& p : panels) {
        h = std::max(h, p.h);
        w += p.w;
    }
    w += gap * static_cast<int>(panels.size() - 1);
    RgbImage out(h, w);
    int x0 = 0;
    for (const auto& p : panels) {
        for (int r = 0; r < p.h; ++r)
            for (int c = 0; c < p.w; ++c) out(r, x0 + c) = p(r, c);
        x0 += p.w + gap;
    }
    return out;
}

/// Nearest-neighbour enlargement.
inline RgbImage upscale(const RgbImage& im, int k) {
    RgbImage out(im.h * k, im.w * k);
    for (int r = 0; r < out.h; ++r)
        for (int c = 0; c < out.w; ++c) out(r, c) = im(r / k, c / k);
    return out;
}

/// Input | counterfactual or saliency | outcome overlay | ground truth.
inline RgbImage figure_panel(const Image& input, const Image* counterfactual, const Image& map, const Mask& pred,
                             const Mask& gt) {
    return hconcat({gray_to_rgb(input), counterfactual ? gray_to_rgb(*counterfactual) : heatmap(map),
                    outcome_overlay(input, pred, gt), mask_panel(gt)});
}

/// Renders one panel per evaluated image for every method directory under
/// `report_dir` (a directory holding metrics.json). Returns the panel count.
inline std::size_t render_figures(const std::filesystem::path& report_dir, const std::filesystem::path& out_dir,
                                  int zoom = 3) {
    if (!std::filesystem::is_directory(report_dir))
        throw ConfigError("report directory " + report_dir.string() + " does not exist");
    std::vector<std::filesystem::path> methods;
    if (std::filesystem::exists(report_dir / "metrics.json")) methods.push_back(report_dir);
    for (const auto& e : std::filesystem::directory_iterator(report_dir))
        if (e.is_directory() && std::filesystem::exists(e.path() / "metrics.json")) methods.push_back(e.path());
    std::sort(methods.begin(), methods.end());
    if (methods.empty()) throw ConfigError("no evaluation output (metrics.json) under " + report_dir.string());

    std::size_t count = 0;
    for (const auto& dir : methods) {
        std::ifstream f(dir / "metrics.json");
        if (!f) throw IoError("cannot read " + (dir / "metrics.json").string());
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(f);
        } catch (const nlohmann::json::parse_error& e) {
            throw IoError((dir / "metrics.json").string() + ": " + e.what());
        }
        const MetricsReport rep = metrics_from_json(j);
        const auto out = out_dir / rep.method;
        std::error_code ec;
        std::filesystem::create_directories(out, ec);
        if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
        const auto img = dir / "images";
        for (const auto& rec : rep.per_image) {
            const Image input = read_image(img / (rec.id + "_input.png"));
            const Image map = read_pfm(img / (rec.id + "_map.pfm"));
            const Mask pred = read_mask(img / (rec.id + "_pred.png"));
            const Mask gt = read_mask(img / (rec.id + "_gt.png"));
            std::optional<Image> cf;
            if (std::filesystem::exists(img / (rec.id + "_cf.png"))) cf = read_image(img / (rec.id + "_cf.png"));
            write_png_rgb(out / (rec.id + ".png"),
                          upscale(figure_panel(input, cf ? &*cf : nullptr, map, pred, gt), zoom));
            ++count;
        }
    }
    return count;
}

}  // namespace coin
