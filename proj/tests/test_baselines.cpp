#include <gtest/gtest.h>

#include "coin/baselines.hpp"
#include "coin/explain.hpp"
#include "test_util.hpp"

using namespace coin;

namespace {

/// Returns the same probability for every input.
struct ConstantModel {
    double c;
    std::vector<double> probabilities(const Tensor<double>& batch) const {
        return std::vector<double>(batch.shape().n, c);
    }
};

ClassifierSpec spec32() {
    ClassifierSpec s;
    s.input_size = 32;
    s.base_channels = 2;
    s.depth = 3;
    return s;
}

Image random_image(Rng& rng, int size) {
    Image im(size, size);
    for (auto& v : im.px) v = static_cast<float>(rng.uniform(0.1, 0.9));
    return im;
}

nn::Var<double> param(Classifier<double>& clf, const std::string& name) {
    for (auto& [n, p] : clf.params().params())
        if (n == name) return p;
    throw std::runtime_error("no parameter " + name);
}

/// Zeroes the residual branch and every output channel of stage `layer`'s
/// downsampling convolution except those in `keep`.
void isolate_channels(Classifier<double>& clf, int layer, const std::vector<int>& keep) {
    const std::string p = "stage" + std::to_string(layer);
    param(clf, p + ".res_b.weight")->value.fill(0);
    param(clf, p + ".res_b.bias")->value.fill(0);
    auto& w = param(clf, p + ".down.weight")->value;
    auto& b = param(clf, p + ".down.bias")->value;
    const Shape s = w.shape();
    for (int k = 0; k < s.n; ++k) {
        if (std::find(keep.begin(), keep.end(), k) != keep.end()) continue;
        for (std::size_t i = 0; i < s.sample(); ++i) w[k * s.sample() + i] = 0;
        b[k] = 0;
    }
}

double max_of(const Image& m) { return *std::max_element(m.px.begin(), m.px.end()); }

}  // namespace

TEST(RiseConfig, Validation) {
    RiseConfig c;
    c.n_masks = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.keep_prob = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Rise, ConstantClassifierGivesUniformSaliency) {
    RiseConfig cfg;
    cfg.n_masks = 5000;
    ConstantModel model{0.7};
    const Image s = rise_saliency<double>(model, Image(32, 32, 0.5f), cfg);
    double mean = 0, sq = 0;
    for (float v : s.px) mean += v;
    mean /= s.size();
    for (float v : s.px) sq += (v - mean) * (v - mean);
    const double cv = std::sqrt(sq / s.size()) / mean;
    EXPECT_LT(cv, 0.05);
    EXPECT_NEAR(mean, 0.7, 0.05);
}

TEST(Rise, MasksAreSeededAndBounded) {
    RiseConfig cfg;
    cfg.n_masks = 20;
    const auto a = rise_masks(24, 24, cfg), b = rise_masks(24, 24, cfg);
    ASSERT_EQ(a.size(), 20u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i], b[i]);
        for (float v : a[i].px) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
    }
    cfg.seed += 1;
    EXPECT_FALSE(rise_masks(24, 24, cfg)[0] == a[0]);
}

TEST(Rise, DeterministicShapeAndNonNegative) {
    Classifier<double> clf(spec32(), 1);
    Rng rng(1);
    const Image x = random_image(rng, 32);
    RiseConfig cfg;
    cfg.n_masks = 50;
    const Image a = rise_saliency<double>(clf, x, cfg), b = rise_saliency<double>(clf, x, cfg);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.h, 32);
    EXPECT_EQ(a.w, 32);
    for (float v : a.px) EXPECT_TRUE(std::isfinite(v) && v >= 0.0f);
}

TEST(Rise, BatchSizeDoesNotChangeTheMap) {
    Classifier<double> clf(spec32(), 2);
    Rng rng(2);
    const Image x = random_image(rng, 32);
    RiseConfig a;
    a.n_masks = 40;
    RiseConfig b = a;
    b.batch = 7;
    const Image ma = rise_saliency<double>(clf, x, a), mb = rise_saliency<double>(clf, x, b);
    for (std::size_t i = 0; i < ma.size(); ++i) EXPECT_NEAR(ma.px[i], mb.px[i], 1e-6);
}

TEST(ScoreCam, SingleActiveChannelIsProportionalToIt) {
    // the scalar weight is either positive (map follows the channel) or not (rectified to zero)
    const int layer = 2;
    int proportional = 0;
    for (std::uint64_t seed = 3; seed <= 6; ++seed) {
        Classifier<double> clf(spec32(), seed);
        isolate_channels(clf, layer, {0});
        Rng rng(3);
        const Image x = random_image(rng, 32);
        const Image s = scorecam_saliency(clf, x, {layer});
        const double smax = max_of(s);
        if (smax == 0) {
            for (float v : s.px) EXPECT_EQ(v, 0.0f);
            continue;
        }
        // oracle: the channel's upsampled, normalized activation
        Tensor<double> act;
        {
            nn::NoGradGuard ng;
            act = clf.forward(nn::constant(stack<double>({&x}))).stages[layer]->value;
        }
        Image a(act.shape().h, act.shape().w);
        for (int r = 0; r < a.h; ++r)
            for (int c = 0; c < a.w; ++c) a(r, c) = static_cast<float>(act.at(0, 0, r, c));
        const Image m = normalize_minmax(resize_bilinear(a, 32, 32));
        for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s.px[i] / smax, m.px[i], 1e-5) << "seed " << seed;
        ++proportional;
    }
    EXPECT_GE(proportional, 1);
}

TEST(ScoreCam, ZeroActivationsGiveZeroMap) {
    Classifier<double> clf(spec32(), 4);
    isolate_channels(clf, 2, {});
    Rng rng(4);
    const Image s = scorecam_saliency(clf, random_image(rng, 32), {-1});
    for (float v : s.px) EXPECT_EQ(v, 0.0f);
}

TEST(ScoreCam, NonNegativeAndNormalizable) {
    Classifier<double> clf(spec32(), 5);
    Rng rng(5);
    const Image s = scorecam_saliency(clf, random_image(rng, 32), {});
    for (float v : s.px) EXPECT_TRUE(std::isfinite(v) && v >= 0.0f);
    for (float v : normalize_minmax(s).px) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(LayerCam, ZeroGradientGivesZeroMap) {
    Classifier<double> clf(spec32(), 6);
    param(clf, "head.weight")->value.fill(0);
    Rng rng(6);
    const Image s = layercam_saliency(clf, random_image(rng, 32), {});
    for (float v : s.px) EXPECT_EQ(v, 0.0f);
}

TEST(LayerCam, NegativeGradientChannelsContributeNothing) {
    Classifier<double> clf(spec32(), 7);
    auto& hw = param(clf, "head.weight")->value;
    for (std::size_t k = 0; k < hw.size(); ++k) hw[k] = -std::abs(hw[k]) - 0.1;
    Rng rng(7);
    const Image x = random_image(rng, 32);
    // deepest stage: dlogit/dA_k = w_k / (h w), all negative
    for (float v : layercam_saliency(clf, x, {-1}).px) EXPECT_EQ(v, 0.0f);

    // one positive channel: the map is that channel scaled by its gradient
    hw[1] = 0.8;
    const Image s = layercam_saliency(clf, x, {-1});
    Tensor<double> act;
    {
        nn::NoGradGuard ng;
        act = clf.forward(nn::constant(stack<double>({&x}))).stages[2]->value;
    }
    const int h = act.shape().h;
    Image expect(h, h);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < h; ++c) expect(r, c) = static_cast<float>(0.8 / (h * h) * act.at(0, 1, r, c));
    const Image up = resize_bilinear(expect, 32, 32);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s.px[i], up.px[i], 1e-6);
}

TEST(LayerCam, ZeroActivationsGiveZeroMap) {
    Classifier<double> clf(spec32(), 8);
    isolate_channels(clf, 1, {});
    Rng rng(8);
    for (float v : layercam_saliency(clf, random_image(rng, 32), {1}).px) EXPECT_EQ(v, 0.0f);
}

TEST(Cam, DeeperLayersAreCoarser) {
    const auto s = spec32();
    EXPECT_EQ(cam_resolution(s, 0), 16);
    EXPECT_EQ(cam_resolution(s, 1), 8);
    EXPECT_EQ(cam_resolution(s, 2), 4);
    EXPECT_EQ(cam_resolution(s, -1), 4);
    EXPECT_THROW(cam_resolution(s, 3), ConfigError);
    EXPECT_THROW(cam_resolution(s, -4), ConfigError);
    Classifier<double> clf(s, 9);
    Rng rng(9);
    EXPECT_THROW(layercam_saliency(clf, random_image(rng, 32), {5}), ConfigError);
    EXPECT_THROW(scorecam_saliency(clf, random_image(rng, 32), {5}), ConfigError);
}
