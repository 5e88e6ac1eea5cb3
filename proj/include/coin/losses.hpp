#pragma once

#include <cmath>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "coin/errors.hpp"
#include "coin/ops.hpp"

namespace coin::losses {

using nn::Var;

/// Clamp applied to every probability before it reaches a logarithm.
inline constexpr double kProbEps = 1e-7;

struct LossWeights {
    double lambda_gan = 1.0;
    double lambda_f = 2.0;
    double lambda_idt = 10.0;
    double lambda_tv = 10.0;

    void validate() const {
        require_config(lambda_gan >= 0, "losses.lambda_gan must be >= 0");
        require_config(lambda_f >= 0, "losses.lambda_f must be >= 0");
        require_config(lambda_idt >= 0, "losses.lambda_idt must be >= 0");
        require_config(lambda_tv >= 0, "losses.lambda_tv must be >= 0");
    }
    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

namespace detail {

template <typename T>
T softplus(T x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
T clamp_prob(T p) {
    return std::min(std::max(p, T(kProbEps)), T(1 - kProbEps));
}

/// Mean over all elements of an elementwise map with known derivative.
template <typename T, typename F>
Var<T> mean_of(const Var<T>& x, F&& value_and_deriv) {
    const auto& xv = x->value;
    require_config(xv.size() > 0, "loss on empty batch");
    const T count = static_cast<T>(xv.size());
    T total = 0;
    std::vector<T> deriv(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        auto [v, d] = value_and_deriv(xv[i]);
        total += v;
        deriv[i] = d / count;
    }
    return nn::make_result<T>(Tensor<T>::scalar(total / count), {x},
                              [x, deriv = std::move(deriv)](const Tensor<T>& g) {
                                  auto& gx = x->grad_buffer();
                                  for (std::size_t i = 0; i < deriv.size(); ++i) gx[i] += g[0] * deriv[i];
                              });
}

template <typename T>
T bernoulli_kl(T p, T q) {
    p = clamp_prob(p);
    q = clamp_prob(q);
    return p * std::log(p / q) + (1 - p) * std::log((1 - p) / (1 - q));
}

}  // namespace detail

enum class GanSide { Discriminator, Generator };

/// Binary cross-entropy on realness logits. Discriminator side averages the
/// real->1 and fake->0 terms; generator side is the non-saturating fake->1 form.
template <typename T>
Var<T> gan_loss(const Var<T>& real_logits, const Var<T>& fake_logits, GanSide side) {
    using detail::softplus;
    if (side == GanSide::Generator) {
        return detail::mean_of<T>(fake_logits, [](T l) {
            return std::pair<T, T>(softplus(-l), -detail::sigmoid(-l));
        });
    }
    require_config(real_logits && real_logits->value.size() > 0, "gan_loss: empty real batch");
    auto real = detail::mean_of<T>(real_logits, [](T l) {
        return std::pair<T, T>(softplus(-l), -detail::sigmoid(-l));
    });
    auto fake = detail::mean_of<T>(fake_logits, [](T l) {
        return std::pair<T, T>(softplus(l), detail::sigmoid(l));
    });
    return nn::affine(nn::add(real, fake), T(0.5), T(0));
}

/// -log(1 - p) with p clamped to [eps, 1 - eps]: cross-entropy toward label 0,
/// averaged over the batch.
template <typename T>
Var<T> classifier_consistency_coin(const Var<T>& p_cf) {
    return detail::mean_of<T>(p_cf, [](T p) {
        const bool inside = p > T(kProbEps) && p < T(1 - kProbEps);
        const T pc = detail::clamp_prob(p);
        return std::pair<T, T>(-std::log(1 - pc), inside ? T(1) / (1 - pc) : T(0));
    });
}

/// Same quantity evaluated from the classifier logit, softplus(l) = -log(1 - sigmoid(l)).
/// Never saturates to a zero gradient, unlike the clamped probability form.
template <typename T>
Var<T> classifier_consistency_coin_logits(const Var<T>& logit_cf) {
    return detail::mean_of<T>(logit_cf, [](T l) {
        return std::pair<T, T>(detail::softplus(l), detail::sigmoid(l));
    });
}

/// KL(Bernoulli(p_cf) || Bernoulli(1 - p_x)), batch mean. Gradients flow into
/// both arguments (the training loop passes p_x as a constant).
template <typename T>
Var<T> classifier_consistency_dual(const Var<T>& p_cf, const Var<T>& p_x) {
    p_cf->value.require_same(p_x->value, "classifier_consistency_dual");
    const auto n = p_cf->value.size();
    require_config(n > 0, "loss on empty batch");
    T total = 0;
    std::vector<T> dp(n), dq(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T praw = p_cf->value[i];
        const T qraw = T(1) - p_x->value[i];
        const T p = detail::clamp_prob(praw);
        const T q = detail::clamp_prob(qraw);
        total += detail::bernoulli_kl(p, q);
        const bool p_in = praw > T(kProbEps) && praw < T(1 - kProbEps);
        const bool q_in = qraw > T(kProbEps) && qraw < T(1 - kProbEps);
        dp[i] = p_in ? (std::log(p / q) - std::log((1 - p) / (1 - q))) / T(n) : T(0);
        // d/dq of KL is -p/q + (1-p)/(1-q); q = 1 - p_x
        dq[i] = q_in ? -(-p / q + (1 - p) / (1 - q)) / T(n) : T(0);
    }
    return nn::make_result<T>(Tensor<T>::scalar(total / T(n)), {p_cf, p_x},
                              [p_cf, p_x, dp = std::move(dp), dq = std::move(dq)](const Tensor<T>& g) {
                                  if (p_cf->requires_grad) {
                                      auto& gp = p_cf->grad_buffer();
                                      for (std::size_t i = 0; i < dp.size(); ++i) gp[i] += g[0] * dp[i];
                                  }
                                  if (p_x->requires_grad) {
                                      auto& gq = p_x->grad_buffer();
                                      for (std::size_t i = 0; i < dq.size(); ++i) gq[i] += g[0] * dq[i];
                                  }
                              });
}

/// Dual-condition consistency from the counterfactual logit; `target` holds
/// 1 - f(X) per image and is treated as constant.
template <typename T>
Var<T> classifier_consistency_dual_logits(const Var<T>& logit_cf, const std::vector<T>& target) {
    require_config(logit_cf->value.size() == target.size(), "dual consistency: target size mismatch");
    const auto n = target.size();
    require_config(n > 0, "loss on empty batch");
    T total = 0;
    std::vector<T> d(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T l = logit_cf->value[i];
        const T q = detail::clamp_prob(target[i]);
        const T p = detail::sigmoid(l);
        // log p = -softplus(-l), log(1-p) = -softplus(l)
        const T logp = -detail::softplus(-l);
        const T log1mp = -detail::softplus(l);
        total += p * (logp - std::log(q)) + (1 - p) * (log1mp - std::log(1 - q));
        // dKL/dl = p(1-p) * (logit(p) - logit(q))
        d[i] = p * (1 - p) * ((logp - log1mp) - (std::log(q) - std::log(1 - q))) / T(n);
    }
    return nn::make_result<T>(Tensor<T>::scalar(total / T(n)), {logit_cf},
                              [logit_cf, d = std::move(d)](const Tensor<T>& g) {
                                  auto& gl = logit_cf->grad_buffer();
                                  for (std::size_t i = 0; i < d.size(); ++i) gl[i] += g[0] * d[i];
                              });
}

/// Binary cross-entropy on logits against 0/1 targets, batch mean.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const std::vector<T>& target) {
    require_config(logits->value.size() == target.size(), "bce_with_logits: target size mismatch");
    require_config(!target.empty(), "loss on empty batch");
    const T n = static_cast<T>(target.size());
    T total = 0;
    std::vector<T> d(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        const T l = logits->value[i];
        total += detail::softplus(l) - target[i] * l;
        d[i] = (detail::sigmoid(l) - target[i]) / n;
    }
    return nn::make_result<T>(Tensor<T>::scalar(total / n), {logits},
                              [logits, d = std::move(d)](const Tensor<T>& g) {
                                  auto& gl = logits->grad_buffer();
                                  for (std::size_t i = 0; i < d.size(); ++i) gl[i] += g[0] * d[i];
                              });
}

/// Mean absolute difference over every pixel (and every image of a batch).
template <typename T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
    a->value.require_same(b->value, "l1_mean");
    return nn::mean_all(nn::abs(nn::sub(a, b)));
}

/// L1(X, E(X)) + L1(X, E(E(X))).
template <typename T>
Var<T> self_consistency(const Var<T>& x, const Var<T>& e1, const Var<T>& e2) {
    return nn::add(l1_mean(x, e1), l1_mean(x, e2));
}

/// Sum over label masks of the foreground-normalized absolute difference,
/// averaged over the batch. `masks` is (N, J, H, W) binary; a mask with no
/// foreground contributes nothing and is reported once on stderr.
template <typename T>
Var<T> masked_rec_loss(const Var<T>& x, const Var<T>& xr, const Tensor<T>& masks) {
    x->value.require_same(xr->value, "masked_rec_loss");
    const Shape xs = x->value.shape();
    const Shape ms = masks.shape();
    if (ms.n != xs.n || ms.h != xs.h || ms.w != xs.w || xs.c != 1) {
        throw ShapeError("masked_rec_loss: masks " + ms.str() + " incompatible with " + xs.str());
    }
    const std::size_t plane = xs.plane();
    // per-pixel weight = sum_j S_j / |S_j|
    Tensor<T> weight(xs);
    int skipped = 0;
    for (int n = 0; n < xs.n; ++n) {
        for (int j = 0; j < ms.c; ++j) {
            const T* m = masks.sample_ptr(n) + j * plane;
            T area = 0;
            for (std::size_t i = 0; i < plane; ++i) area += m[i];
            if (area <= 0) {
                ++skipped;
                continue;
            }
            T* w = weight.sample_ptr(n);
            for (std::size_t i = 0; i < plane; ++i) w[i] += m[i] / area;
        }
    }
    if (skipped > 0) {
        std::cerr << "warning: masked_rec_loss skipped " << skipped << " empty mask term(s)\n";
    }
    T total = 0;
    Tensor<T> sign(xs);
    for (std::size_t i = 0; i < x->value.size(); ++i) {
        const T d = x->value[i] - xr->value[i];
        total += weight[i] * std::abs(d);
        sign[i] = weight[i] * (d > 0 ? T(1) : (d < 0 ? T(-1) : T(0))) / T(xs.n);
    }
    return nn::make_result<T>(Tensor<T>::scalar(total / T(xs.n)), {x, xr},
                              [x, xr, sign = std::move(sign)](const Tensor<T>& g) {
                                  if (x->requires_grad) {
                                      auto& gx = x->grad_buffer();
                                      for (std::size_t i = 0; i < sign.size(); ++i) gx[i] += g[0] * sign[i];
                                  }
                                  if (xr->requires_grad) {
                                      auto& gr = xr->grad_buffer();
                                      for (std::size_t i = 0; i < sign.size(); ++i) gr[i] -= g[0] * sign[i];
                                  }
                              });
}

/// Squared neighbour differences (vertical + horizontal) divided by H*W,
/// averaged over every (image, channel) plane.
template <typename T>
Var<T> tv_loss(const Var<T>& map) {
    const Shape s = map->value.shape();
    const int planes = s.n * s.c;
    const T hw = static_cast<T>(s.h) * s.w;
    T total = 0;
    for (int p = 0; p < planes; ++p) {
        const T* m = map->value.data() + static_cast<std::size_t>(p) * s.plane();
        for (int i = 0; i + 1 < s.h; ++i)
            for (int j = 0; j < s.w; ++j) {
                const T d = m[(i + 1) * s.w + j] - m[i * s.w + j];
                total += d * d;
            }
        for (int i = 0; i < s.h; ++i)
            for (int j = 0; j + 1 < s.w; ++j) {
                const T d = m[i * s.w + j + 1] - m[i * s.w + j];
                total += d * d;
            }
    }
    const T scale = T(1) / (hw * T(planes));
    return nn::make_result<T>(Tensor<T>::scalar(total * scale), {map}, [map, s, planes, scale](const Tensor<T>& g) {
        auto& gm = map->grad_buffer();
        const T k = T(2) * scale * g[0];
        for (int p = 0; p < planes; ++p) {
            const std::size_t off = static_cast<std::size_t>(p) * s.plane();
            const T* m = map->value.data() + off;
            T* d = gm.data() + off;
            for (int i = 0; i + 1 < s.h; ++i)
                for (int j = 0; j < s.w; ++j) {
                    const T diff = k * (m[(i + 1) * s.w + j] - m[i * s.w + j]);
                    d[(i + 1) * s.w + j] += diff;
                    d[i * s.w + j] -= diff;
                }
            for (int i = 0; i < s.h; ++i)
                for (int j = 0; j + 1 < s.w; ++j) {
                    const T diff = k * (m[i * s.w + j + 1] - m[i * s.w + j]);
                    d[i * s.w + j + 1] += diff;
                    d[i * s.w + j] -= diff;
                }
        }
    });
}

struct LossReport {
    std::map<std::string, double> terms;
    double total = 0.0;
};

/// The generator objective lambda_gan*L_gan + lambda_f*L_f + lambda_idt*L_idt + lambda_tv*L_tv.
/// Term names: "gan", "f", "idt", "tv". Throws NumericError on a non-finite term.
template <typename T>
std::pair<Var<T>, LossReport> total_objective(const Var<T>& gan, const Var<T>& f, const Var<T>& idt,
                                              const Var<T>& tv, const LossWeights& w) {
    LossReport report;
    const std::vector<std::pair<const char*, Var<T>>> named{{"gan", gan}, {"f", f}, {"idt", idt}, {"tv", tv}};
    for (const auto& [name, v] : named) {
        const double val = static_cast<double>(v->value[0]);
        if (!std::isfinite(val)) throw NumericError(std::string("non-finite loss term '") + name + "'");
        report.terms[name] = val;
    }
    const std::vector<T> weights{T(w.lambda_gan), T(w.lambda_f), T(w.lambda_idt), T(w.lambda_tv)};
    auto total = nn::weighted_sum<T>({gan, f, idt, tv}, weights);
    report.total = w.lambda_gan * report.terms["gan"] + w.lambda_f * report.terms["f"] +
                   w.lambda_idt * report.terms["idt"] + w.lambda_tv * report.terms["tv"];
    return {total, report};
}

/// Plain-value helpers over single images.
template <typename T>
double value(const Var<T>& v) {
    return static_cast<double>(v->value[0]);
}

}  // namespace coin::losses
