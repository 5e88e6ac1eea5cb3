#include <gtest/gtest.h>

#include "coin/explain.hpp"
#include "test_util.hpp"

using namespace coin;

namespace {

Mask mask_from(const std::vector<std::string>& rows) {
    Mask m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (int r = 0; r < m.h; ++r)
        for (int c = 0; c < m.w; ++c) m(r, c) = rows[r][c] == '#';
    return m;
}

bool subset_of(const Mask& a, const Mask& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.px[i] && !b.px[i]) return false;
    return true;
}

Mask random_mask(Rng& rng, int h, int w, double p) {
    Mask m(h, w);
    for (auto& v : m.px) v = rng.uniform() < p;
    return m;
}

/// 0.3 everywhere, 0.5 on a 4x4 square at (3,3).
Image blob_diff(int size = 12) {
    Image d(size, size, 0.3f);
    for (int r = 3; r < 7; ++r)
        for (int c = 3; c < 7; ++c) d(r, c) = 0.5f;
    return d;
}

Mask blob_mask(int size = 12) {
    Mask m(size, size);
    for (int r = 3; r < 7; ++r)
        for (int c = 3; c < 7; ++c) m(r, c) = 1;
    return m;
}

}  // namespace

TEST(Counterfactual, IdentityGeneratorGivesZeroDiff) {
    ClassifierSpec cs;
    cs.input_size = 16;
    cs.base_channels = 2;
    cs.depth = 2;
    GeneratorSpec gs;
    gs.input_size = 16;
    gs.depth = 2;
    gs.base_channels = 2;
    gs.n_skip = 2;
    Classifier<double> clf(cs, 1);
    Generator<double> gen(gs, 2);
    Rng rng(3);
    std::vector<Image> ims(5, Image(16, 16));
    for (auto& im : ims)
        for (auto& v : im.px) v = static_cast<float>(rng.uniform());
    std::vector<const Image*> ptrs;
    for (const auto& im : ims) ptrs.push_back(&im);
    const auto res = counterfactual(gen, clf, ptrs, 2);
    ASSERT_EQ(res.size(), 5u);
    for (const auto& r : res) {
        for (float v : r.diff.px) EXPECT_EQ(v, 0.0f);
        EXPECT_NEAR(r.p_cf, r.p_x, 1e-12);
    }
}

TEST(Counterfactual, DiffIsAbsoluteAndInRange) {
    ClassifierSpec cs;
    cs.input_size = 16;
    cs.base_channels = 2;
    cs.depth = 2;
    GeneratorSpec gs;
    gs.input_size = 16;
    gs.depth = 2;
    gs.base_channels = 2;
    gs.n_skip = 1;
    gs.zero_init_output = false;
    gs.n_conditions = 2;
    Classifier<double> clf(cs, 4);
    Generator<double> gen(gs, 5);
    Image im(16, 16, 0.5f);
    const auto r = counterfactual(gen, clf, im);
    for (std::size_t i = 0; i < r.diff.size(); ++i) {
        EXPECT_GE(r.diff.px[i], 0.0f);
        EXPECT_LE(r.diff.px[i], 1.0f);
        EXPECT_FLOAT_EQ(r.diff.px[i], std::abs(r.input.px[i] - r.counterfactual.px[i]));
        EXPECT_TRUE(r.counterfactual.px[i] >= 0.0f && r.counterfactual.px[i] <= 1.0f);
    }
}

TEST(DiffToMask, StrictThreshold) {
    EXPECT_EQ(area(diff_to_mask(Image(8, 8, 0.0f), 0.1)), 0u);
    Image d(2, 2);
    d.px = {0.0f, 0.2f, 0.0f, 1e-6f};
    const Mask m = diff_to_mask(d, 0.0);
    EXPECT_EQ(m.px, (std::vector<std::uint8_t>{0, 1, 0, 1}));
    EXPECT_EQ(diff_to_mask(blob_diff(), 0.4), blob_mask());
    EXPECT_EQ(area(diff_to_mask(Image(3, 3, 0.5f), 0.5)), 0u);
}

TEST(DiffToMask, RaisingThresholdNeverAddsPixels) {
    Rng rng(6);
    Image d(20, 20);
    for (auto& v : d.px) v = static_cast<float>(rng.uniform());
    Mask prev = diff_to_mask(d, 0.0);
    for (double t : default_grid(51)) {
        const Mask m = diff_to_mask(d, t);
        EXPECT_TRUE(subset_of(m, prev)) << t;
        prev = m;
    }
}

TEST(Postprocess, EmptyStaysEmpty) {
    EXPECT_EQ(area(postprocess_mask(Mask(10, 10), {})), 0u);
}

TEST(Postprocess, IsolatedPixelRemovedByOpening) {
    Mask m(9, 9);
    m(4, 4) = 1;
    EXPECT_EQ(area(opening(m, 3)), 0u);
    EXPECT_EQ(area(postprocess_mask(m, {})), 0u);
    // closing alone keeps it: dilate to 3x3, erode back to the pixel
    EXPECT_EQ(closing(m, 3), m);
}

TEST(Postprocess, LargestComponentWins) {
    const Mask m = mask_from({
        "#####...",
        "........",
        "......#.",
        "......#.",
        "......#.",
    });
    const Mask out = largest_component(m);
    EXPECT_EQ(area(out), 5u);
    EXPECT_EQ(out(0, 0), 1);
    EXPECT_EQ(out(2, 6), 0);
    // kernel 1 leaves morphology a no-op, so postprocess reduces to the component step
    MaskPostprocessConfig cfg;
    cfg.morph_kernel = 1;
    EXPECT_EQ(postprocess_mask(m, cfg), out);
}

TEST(Postprocess, TieGoesToFirstInRasterOrder) {
    const Mask m = mask_from({
        "...##",
        "##...",
    });
    const Mask out = largest_component(m);
    EXPECT_EQ(out(0, 3), 1);
    EXPECT_EQ(out(1, 0), 0);
}

TEST(Postprocess, FourConnectivity) {
    const auto [lab, n] = label_components(mask_from({
        "#.",
        ".#",
    }));
    EXPECT_EQ(n, 2);
}

TEST(Postprocess, OutputInsideDilatedClosingWithOneComponent) {
    Rng rng(7);
    for (int k = 0; k < 40; ++k) {
        const Mask m = random_mask(rng, 24, 24, 0.35);
        const Mask out = postprocess_mask(m, {});
        EXPECT_TRUE(subset_of(out, dilate(closing(m, 3), 3)));
        EXPECT_LE(label_components(out).second, 1);
    }
}

TEST(Postprocess, InvalidKernelRejected) {
    MaskPostprocessConfig cfg;
    cfg.morph_kernel = 2;
    EXPECT_THROW(postprocess_mask(Mask(4, 4), cfg), ConfigError);
    cfg = {};
    cfg.threshold = 1.5;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Morphology, SquareWindowByHand) {
    const Mask m = mask_from({
        ".....",
        ".###.",
        ".###.",
        ".###.",
        ".....",
    });
    const Mask e = erode(m, 3);
    EXPECT_EQ(area(e), 1u);
    EXPECT_EQ(e(2, 2), 1);
    EXPECT_EQ(area(dilate(m, 3)), 25u);
    EXPECT_EQ(opening(m, 3), m);
}

TEST(ThresholdSweep, FindsConstructedThreshold) {
    std::vector<double> grid{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    const auto res = threshold_sweep({blob_diff()}, {blob_mask()}, grid, false);
    EXPECT_DOUBLE_EQ(res.best_threshold, 0.4);
    EXPECT_DOUBLE_EQ(res.best_iou, 1.0);
    EXPECT_EQ(res.curve.size(), grid.size());
    ASSERT_EQ(res.per_image_iou.size(), 1u);
}

TEST(ThresholdSweep, SingleValueGrid) {
    const auto res = threshold_sweep({blob_diff()}, {blob_mask()}, {0.7}, true);
    EXPECT_DOUBLE_EQ(res.best_threshold, 0.7);
    EXPECT_EQ(res.curve.size(), 1u);
}

TEST(ThresholdSweep, TiesGoToSmallestThreshold) {
    // 0.4 and 0.45 both isolate the blob exactly
    const auto res = threshold_sweep({blob_diff()}, {blob_mask()}, {0.45, 0.4, 0.6}, false);
    EXPECT_DOUBLE_EQ(res.best_threshold, 0.4);
}

TEST(ThresholdSweep, NoEligibleSliceIsAnError) {
    EXPECT_THROW(threshold_sweep({blob_diff()}, {Mask(12, 12)}, default_grid(), false), ConfigError);
}

TEST(ThresholdSweep, IneligibleSlicesDoNotCount) {
    const auto res = threshold_sweep({blob_diff(), Image(12, 12, 0.9f)}, {blob_mask(), Mask(12, 12)},
                                     default_grid(), false);
    EXPECT_DOUBLE_EQ(res.best_iou, 1.0);
    EXPECT_EQ(res.per_image_iou.size(), 1u);
}

TEST(ThresholdSweep, ScalingMapsAndGridTogetherKeepsBestIou) {
    Rng rng(8);
    std::vector<Image> maps;
    std::vector<Mask> gts;
    for (int k = 0; k < 6; ++k) {
        Image d(16, 16);
        for (auto& v : d.px) v = static_cast<float>(0.4 * rng.uniform());
        Mask g(16, 16);
        const int r0 = static_cast<int>(rng.index(10)), c0 = static_cast<int>(rng.index(10));
        for (int r = r0; r < r0 + 5; ++r)
            for (int c = c0; c < c0 + 5; ++c) {
                g(r, c) = 1;
                d(r, c) += 0.3f + static_cast<float>(0.2 * rng.uniform());
            }
        maps.push_back(d);
        gts.push_back(g);
    }
    const auto grid = default_grid(21);
    const double s = 0.5;
    std::vector<Image> scaled = maps;
    for (auto& m : scaled)
        for (auto& v : m.px) v = static_cast<float>(v * s);
    std::vector<double> sgrid;
    for (double t : grid) sgrid.push_back(t * s);
    for (bool post : {false, true}) {
        const auto a = threshold_sweep(maps, gts, grid, post);
        const auto b = threshold_sweep(scaled, gts, sgrid, post);
        EXPECT_NEAR(a.best_iou, b.best_iou, 1e-12);
        EXPECT_NEAR(a.best_threshold * s, b.best_threshold, 1e-12);
    }
}

TEST(NormalizeMinmax, RangeAndConstantMap) {
    Image m(2, 2);
    m.px = {2.0f, 4.0f, 3.0f, 6.0f};
    const Image n = normalize_minmax(m);
    EXPECT_EQ(n.px, (std::vector<float>{0.0f, 0.5f, 0.25f, 1.0f}));
    for (float v : normalize_minmax(Image(3, 3, 5.0f)).px) EXPECT_EQ(v, 0.0f);
}

TEST(DefaultGrid, EvenlySpaced) {
    const auto g = default_grid();
    ASSERT_EQ(g.size(), 101u);
    EXPECT_EQ(g.front(), 0.0);
    EXPECT_EQ(g.back(), 1.0);
    EXPECT_NEAR(g[37], 0.37, 1e-15);
}
