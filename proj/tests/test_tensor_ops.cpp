#include <gtest/gtest.h>

#include "coin/ops.hpp"
#include "test_util.hpp"

using namespace coin;
using namespace coin::testing;

namespace {

/// Reduces any output to a scalar with fixed random weights so every output
/// element influences the probe.
std::function<VarD(const VarD&)> scalarize(std::function<VarD(const VarD&)> op, Shape out_shape, Rng& rng) {
    auto w = nn::constant(random_tensor(out_shape, rng));
    return [op, w](const VarD& x) { return nn::mean_all(nn::mul(op(x), w)); };
}

}  // namespace

TEST(Tensor, ShapeMismatchThrows) {
    EXPECT_THROW(TensorD(Shape{1, 1, 2, 2}, std::vector<double>(3)), ShapeError);
    TensorD a(Shape{1, 1, 2, 2}), b(Shape{1, 1, 2, 3});
    EXPECT_THROW(a.require_same(b, "test"), ShapeError);
}

TEST(Tensor, AtIsRowMajorNchw) {
    TensorD t(Shape{2, 3, 4, 5});
    t.at(1, 2, 3, 4) = 7;
    EXPECT_EQ(t[t.size() - 1], 7);
    t.at(0, 1, 0, 0) = 3;
    EXPECT_EQ(t[20], 3);
}

TEST(Autograd, NoGradRecordsNoHistory) {
    auto x = nn::leaf(TensorD(Shape{1, 1, 2, 2}, 1.0));
    nn::NoGradGuard ng;
    auto y = nn::tanh(x);
    EXPECT_FALSE(y->requires_grad);
    EXPECT_TRUE(y->parents.empty());
}

TEST(Autograd, ConstantsReceiveNoGradient) {
    auto a = nn::constant(TensorD(Shape{1, 1, 1, 2}, 2.0));
    auto b = nn::leaf(TensorD(Shape{1, 1, 1, 2}, 3.0));
    auto y = nn::mean_all(nn::mul(a, b));
    nn::backward(y);
    EXPECT_TRUE(a->grad.empty());
    EXPECT_DOUBLE_EQ(b->grad[0], 1.0);
}

TEST(Autograd, SharedSubexpressionAccumulates) {
    auto x = nn::leaf(TensorD(Shape{1, 1, 1, 1}, 3.0));
    auto y = nn::mul(x, x);  // x^2
    nn::backward(nn::add(y, y));
    EXPECT_DOUBLE_EQ(x->grad[0], 12.0);
}

TEST(OpsGradient, Conv2dInputAndWeight) {
    Rng rng(1);
    for (int stride : {1, 2}) {
        const TensorD x0 = random_tensor({2, 3, 6, 6}, rng);
        auto w = nn::leaf(random_tensor({4, 3, 3, 3}, rng));
        auto b = nn::leaf(random_tensor({1, 4, 1, 1}, rng));
        const int o = (6 + 2 - 3) / stride + 1;
        auto f = scalarize([&](const VarD& x) { return nn::conv2d(x, w, b, stride, 1); }, {2, 4, o, o}, rng);
        EXPECT_LT(max_error(grad_check(f, x0, 12, rng)), 1e-6) << "stride " << stride;

        const auto xc = nn::constant(x0);
        auto fw = scalarize([&](const VarD& wt) { return nn::conv2d(xc, wt, b, stride, 1); }, {2, 4, o, o}, rng);
        EXPECT_LT(max_error(grad_check(fw, w->value, 12, rng)), 1e-6);
    }
}

TEST(OpsGradient, LinearUpsamplePool) {
    Rng rng(2);
    auto w = nn::leaf(random_tensor({5, 12, 1, 1}, rng));
    auto b = nn::leaf(random_tensor({1, 5, 1, 1}, rng));
    auto lin = scalarize([&](const VarD& x) { return nn::linear(x, w, b); }, {2, 5, 1, 1}, rng);
    EXPECT_LT(max_error(grad_check(lin, random_tensor({2, 3, 2, 2}, rng), 10, rng)), 1e-6);

    auto up = scalarize([](const VarD& x) { return nn::upsample2x(x); }, {1, 2, 6, 6}, rng);
    EXPECT_LT(max_error(grad_check(up, random_tensor({1, 2, 3, 3}, rng), 10, rng)), 1e-6);

    auto pool = scalarize([](const VarD& x) { return nn::global_avg_pool(x); }, {2, 3, 1, 1}, rng);
    EXPECT_LT(max_error(grad_check(pool, random_tensor({2, 3, 4, 4}, rng), 10, rng)), 1e-6);
}

TEST(OpsGradient, Pointwise) {
    Rng rng(3);
    const Shape s{2, 2, 3, 3};
    const std::vector<std::function<VarD(const VarD&)>> ops{
        [](const VarD& x) { return nn::tanh(x); },
        [](const VarD& x) { return nn::sigmoid(x); },
        [](const VarD& x) { return nn::leaky_relu(x, 0.2); },
        [](const VarD& x) { return nn::affine(x, 3.0, -1.0); },
        [](const VarD& x) { return nn::clamp(x, -0.5, 0.5); },
        [](const VarD& x) { return nn::abs(x); },
    };
    for (std::size_t k = 0; k < ops.size(); ++k) {
        auto f = scalarize(ops[k], s, rng);
        TensorD x0 = random_tensor(s, rng);
        // keep probes away from kinks at 0 and +-0.5
        for (std::size_t i = 0; i < x0.size(); ++i) {
            double& v = x0[i];
            for (double kink : {0.0, 0.5, -0.5})
                if (std::abs(v - kink) < 1e-3) v += 1e-2;
        }
        EXPECT_LT(max_error(grad_check(f, x0, 12, rng)), 1e-6) << "op " << k;
    }
}

TEST(OpsGradient, BinaryAndChannelOps) {
    Rng rng(4);
    const Shape s{2, 2, 3, 3};
    auto other = nn::leaf(random_tensor(s, rng));
    auto f1 = scalarize([&](const VarD& x) { return nn::mul(x, other); }, s, rng);
    EXPECT_LT(max_error(grad_check(f1, random_tensor(s, rng), 10, rng)), 1e-6);
    auto f2 = scalarize([&](const VarD& x) { return nn::sub(other, x); }, s, rng);
    EXPECT_LT(max_error(grad_check(f2, random_tensor(s, rng), 10, rng)), 1e-6);
    auto f3 = scalarize([&](const VarD& x) { return nn::concat_channels(x, other); }, {2, 4, 3, 3}, rng);
    EXPECT_LT(max_error(grad_check(f3, random_tensor(s, rng), 10, rng)), 1e-6);
    auto f4 = scalarize([](const VarD& x) { return nn::sum_channels(x); }, {2, 1, 3, 3}, rng);
    EXPECT_LT(max_error(grad_check(f4, random_tensor(s, rng), 10, rng)), 1e-6);
}

TEST(OpsGradient, ConditionEmbedding) {
    Rng rng(5);
    auto e1 = nn::leaf(random_tensor({1, 4, 1, 1}, rng));
    const std::vector<double> cond{0.2, 0.9, 0.5};
    auto f = scalarize([&](const VarD& e0) { return nn::condition_embedding(e0, e1, cond); }, {3, 4, 1, 1}, rng);
    EXPECT_LT(max_error(grad_check(f, random_tensor({1, 4, 1, 1}, rng), 8, rng)), 1e-6);
}

TEST(Ops, UpsampleIsNearestNeighbour) {
    TensorD t(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    auto u = nn::upsample2x(nn::constant(t));
    EXPECT_EQ(u->value.at(0, 0, 0, 1), 1);
    EXPECT_EQ(u->value.at(0, 0, 1, 1), 1);
    EXPECT_EQ(u->value.at(0, 0, 3, 3), 4);
}

TEST(Ops, Conv2dMatchesDirectSum) {
    Rng rng(6);
    const TensorD x = random_tensor({1, 2, 4, 4}, rng);
    const TensorD w = random_tensor({1, 2, 3, 3}, rng);
    auto y = nn::conv2d(nn::constant(x), nn::constant(w), nn::constant(TensorD(Shape{1, 1, 1, 1}, 0.5)), 1, 1);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            double s = 0.5;
            for (int ci = 0; ci < 2; ++ci)
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) {
                        const int rr = r + i - 1, cc = c + j - 1;
                        if (rr < 0 || cc < 0 || rr >= 4 || cc >= 4) continue;
                        s += w.at(0, ci, i, j) * x.at(0, ci, rr, cc);
                    }
            EXPECT_NEAR(y->value.at(0, 0, r, c), s, 1e-12);
        }
}
