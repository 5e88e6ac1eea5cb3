#include <gtest/gtest.h>

#include "coin/losses.hpp"
#include "coin/models.hpp"
#include "test_util.hpp"

using namespace coin;
using namespace coin::testing;

// Analytic against central-difference gradients at double precision, at least
// ten random probes per quantity, relative error at most 1e-4.

namespace {

constexpr int kProbes = 12;
constexpr double kTol = 1e-4;

void expect_close(const std::vector<GradProbe>& probes, const char* what) {
    ASSERT_GE(probes.size(), 10u);
    for (const auto& p : probes)
        EXPECT_LE(p.error(), kTol) << what << " index " << p.index << " analytic " << p.analytic << " numeric "
                                   << p.numeric;
}

/// Moves every entry at least `gap` away from `kink` so |.| stays differentiable
/// over the finite-difference stencil.
TensorD away_from(TensorD t, const TensorD& kink, double gap = 1e-3) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (std::abs(t[i] - kink[i]) < gap) t[i] = kink[i] + (t[i] >= kink[i] ? gap : -gap);
    return t;
}

}  // namespace

TEST(Gradients, ClassifierOutputWrtInput) {
    ClassifierSpec s;
    s.input_size = 32;
    s.base_channels = 2;
    s.depth = 3;
    Classifier<double> clf(s, 3);
    Rng rng(1);
    auto f = [&](const VarD& x) { return nn::sigmoid(clf.forward(x).logit); };
    expect_close(grad_check(f, random_tensor({1, 1, 32, 32}, rng, 0, 1), kProbes, rng), "f(X)");
}

TEST(Gradients, ClassifierOutputWrtWeights) {
    ClassifierSpec s;
    s.input_size = 16;
    s.base_channels = 2;
    s.depth = 2;
    Classifier<double> clf(s, 4);
    Rng rng(2);
    const auto x = nn::constant(random_tensor({2, 1, 16, 16}, rng, 0, 1));
    auto& w = clf.params().params()[2].second;  // first stage convolution weight
    const TensorD w0 = w->value;
    auto f = [&] { return nn::mean_all(nn::sigmoid(clf.forward(x).logit)); };
    clf.params().zero_grad();
    nn::backward(f());
    const TensorD g = w->grad;
    for (int k = 0; k < kProbes; ++k) {
        const std::size_t i = rng.index(w0.size());
        w->value[i] = w0[i] + 1e-6;
        const double fp = f()->value[0];
        w->value[i] = w0[i] - 1e-6;
        const double fm = f()->value[0];
        w->value[i] = w0[i];
        EXPECT_LE(rel_err(g[i], (fp - fm) / 2e-6), kTol) << "weight " << i;
    }
}

TEST(Gradients, ConsistencyCoinProbabilityForm) {
    Rng rng(3);
    auto f = [](const VarD& p) { return losses::classifier_consistency_coin(p); };
    expect_close(grad_check(f, random_tensor({16, 1, 1, 1}, rng, 0.02, 0.98), kProbes, rng), "L_f coin");
}

TEST(Gradients, ConsistencyCoinLogitForm) {
    Rng rng(4);
    auto f = [](const VarD& l) { return losses::classifier_consistency_coin_logits(l); };
    expect_close(grad_check(f, random_tensor({16, 1, 1, 1}, rng, -6, 6), kProbes, rng), "L_f coin logits");
}

TEST(Gradients, ConsistencyCoinThroughClassifier) {
    ClassifierSpec s;
    s.input_size = 16;
    s.base_channels = 2;
    s.depth = 2;
    Classifier<double> clf(s, 5);
    Rng rng(5);
    auto f = [&](const VarD& x) { return losses::classifier_consistency_coin(nn::sigmoid(clf.forward(x).logit)); };
    expect_close(grad_check(f, random_tensor({2, 1, 16, 16}, rng, 0, 1), kProbes, rng), "L_f coin o f");
}

TEST(Gradients, ConsistencyDualBothArguments) {
    Rng rng(6);
    const auto px = nn::constant(random_tensor({16, 1, 1, 1}, rng, 0.05, 0.95));
    auto f_cf = [&](const VarD& p) { return losses::classifier_consistency_dual(p, px); };
    expect_close(grad_check(f_cf, random_tensor({16, 1, 1, 1}, rng, 0.05, 0.95), kProbes, rng), "L_f dual p_cf");

    const auto pcf = nn::constant(random_tensor({16, 1, 1, 1}, rng, 0.05, 0.95));
    auto f_x = [&](const VarD& q) { return losses::classifier_consistency_dual(pcf, q); };
    expect_close(grad_check(f_x, random_tensor({16, 1, 1, 1}, rng, 0.05, 0.95), kProbes, rng), "L_f dual p_x");
}

TEST(Gradients, ConsistencyDualLogitForm) {
    Rng rng(7);
    std::vector<double> target(16);
    for (auto& t : target) t = rng.uniform(0.05, 0.95);
    auto f = [&](const VarD& l) { return losses::classifier_consistency_dual_logits(l, target); };
    expect_close(grad_check(f, random_tensor({16, 1, 1, 1}, rng, -5, 5), kProbes, rng), "L_f dual logits");
}

TEST(Gradients, L1Mean) {
    Rng rng(8);
    const TensorD ref = random_tensor({2, 1, 8, 8}, rng, 0, 1);
    const auto b = nn::constant(ref);
    auto f = [&](const VarD& a) { return losses::l1_mean(a, b); };
    expect_close(grad_check(f, away_from(random_tensor({2, 1, 8, 8}, rng, 0, 1), ref), kProbes, rng), "L1");
}

TEST(Gradients, SelfConsistency) {
    Rng rng(9);
    const TensorD x0 = random_tensor({1, 1, 8, 8}, rng, 0, 1);
    const auto x = nn::constant(x0);
    const auto e2 = nn::constant(random_tensor({1, 1, 8, 8}, rng, 0, 1));
    auto f = [&](const VarD& e1) { return losses::self_consistency(x, e1, e2); };
    expect_close(grad_check(f, away_from(random_tensor({1, 1, 8, 8}, rng, 0, 1), x0), kProbes, rng), "L_idt");
}

TEST(Gradients, MaskedReconstruction) {
    Rng rng(10);
    const TensorD ref = random_tensor({2, 1, 8, 8}, rng, 0, 1);
    TensorD masks(Shape{2, 2, 8, 8});
    for (int n = 0; n < 2; ++n)
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) {
                masks.at(n, 0, r, c) = (r < 4);
                masks.at(n, 1, r, c) = (r >= 4);
            }
    const auto x = nn::constant(ref);
    auto f = [&](const VarD& xr) { return losses::masked_rec_loss(x, xr, masks); };
    expect_close(grad_check(f, away_from(random_tensor({2, 1, 8, 8}, rng, 0, 1), ref), kProbes, rng), "masked rec");
}

TEST(Gradients, TotalVariation) {
    Rng rng(11);
    auto f = [](const VarD& m) { return losses::tv_loss(m); };
    expect_close(grad_check(f, random_tensor({2, 1, 9, 7}, rng), kProbes, rng), "TV");
}

TEST(Gradients, TotalVariationOfAbsoluteDiff) {
    Rng rng(12);
    const TensorD ref = random_tensor({1, 1, 8, 8}, rng, 0, 1);
    const auto x = nn::constant(ref);
    auto f = [&](const VarD& cf) { return losses::tv_loss(nn::abs(nn::sub(cf, x))); };
    expect_close(grad_check(f, away_from(random_tensor({1, 1, 8, 8}, rng, 0, 1), ref), kProbes, rng), "TV |diff|");
}

TEST(Gradients, GanLossBothSides) {
    Rng rng(13);
    const auto real = nn::constant(random_tensor({8, 1, 1, 1}, rng, -3, 3));
    auto fd = [&](const VarD& fake) { return losses::gan_loss(real, fake, losses::GanSide::Discriminator); };
    expect_close(grad_check(fd, random_tensor({8, 1, 1, 1}, rng, -3, 3), kProbes, rng), "gan D");
    auto fg = [&](const VarD& fake) { return losses::gan_loss<double>(nullptr, fake, losses::GanSide::Generator); };
    expect_close(grad_check(fg, random_tensor({8, 1, 1, 1}, rng, -3, 3), kProbes, rng), "gan G");
}

TEST(Gradients, WeightedObjectiveThroughGenerator) {
    // all four generator terms composed through the generator and a frozen classifier
    ClassifierSpec cs;
    cs.input_size = 16;
    cs.base_channels = 2;
    cs.depth = 2;
    Classifier<double> clf(cs, 20);
    clf.params().set_trainable(false);
    GeneratorSpec gs;
    gs.input_size = 16;
    gs.depth = 2;
    gs.base_channels = 2;
    gs.n_skip = 2;
    gs.zero_init_output = false;
    Generator<double> gen(gs, 21);
    DiscriminatorSpec ds;
    ds.input_size = 16;
    ds.depth = 2;
    Discriminator<double> disc(ds, 22);
    disc.params().set_trainable(false);
    Rng rng(14);
    const auto x = nn::constant(random_tensor({2, 1, 16, 16}, rng, 0.1, 0.9));
    auto& w = gen.output_layer().weight();
    const TensorD w0 = w->value;
    auto objective = [&]() {
        auto cf = gen.forward(x);
        auto cf2 = gen.forward(cf);
        auto gan = losses::gan_loss<double>(nullptr, disc.forward(cf, nullptr, false), losses::GanSide::Generator);
        auto lf = losses::classifier_consistency_coin_logits(clf.forward(cf).logit);
        auto idt = losses::self_consistency(x, cf, cf2);
        auto tv = losses::tv_loss(nn::abs(nn::sub(cf, x)));
        return losses::total_objective(gan, lf, idt, tv, losses::LossWeights{}).first;
    };
    gen.params().zero_grad();
    nn::backward(objective());
    const TensorD g = w->grad;
    int checked = 0;
    for (int k = 0; k < 40 && checked < kProbes; ++k) {
        const std::size_t i = rng.index(w0.size());
        w->value = w0;
        w->value[i] += 1e-6;
        const double fp = objective()->value[0];
        w->value[i] = w0[i] - 1e-6;
        const double fm = objective()->value[0];
        w->value = w0;
        const double numeric = (fp - fm) / 2e-6;
        if (std::abs(numeric) < 1e-6) continue;  // probe sits on a flat clamp region
        EXPECT_LE(rel_err(g[i], numeric), kTol) << "weight " << i;
        ++checked;
    }
    EXPECT_GE(checked, 10);
}
