#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "coin/ops.hpp"
#include "coin/rng.hpp"

namespace coin::nn {

/// Ordered, named set of trainable tensors plus non-trainable buffers.
/// Order is construction order and is what checkpoints serialize.
template <typename T>
class ParamStore {
public:
    Var<T> add(std::string name, Tensor<T> init) {
        auto v = leaf(std::move(init));
        params_.emplace_back(std::move(name), v);
        return v;
    }

    Tensor<T>* add_buffer(std::string name, Tensor<T> init) {
        buffers_.emplace_back(std::move(name), std::make_unique<Tensor<T>>(std::move(init)));
        return buffers_.back().second.get();
    }

    [[nodiscard]] const std::vector<std::pair<std::string, Var<T>>>& params() const {
        return params_;
    }
    [[nodiscard]] const std::vector<std::pair<std::string, std::unique_ptr<Tensor<T>>>>& buffers()
        const {
        return buffers_;
    }

    void zero_grad() {
        for (auto& [_, p] : params_) p->zero_grad();
    }

    void set_trainable(bool on) {
        for (auto& [_, p] : params_) p->requires_grad = on;
    }

    [[nodiscard]] std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [_, p] : params_) n += p->value.size();
        return n;
    }

    /// FNV-1a over the raw bytes of every parameter and buffer.
    [[nodiscard]] std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto feed = [&h](const Tensor<T>& t) {
            const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
            for (std::size_t i = 0; i < t.size() * sizeof(T); ++i) {
                h ^= bytes[i];
                h *= 0x100000001b3ULL;
            }
        };
        for (const auto& [_, p] : params_) feed(p->value);
        for (const auto& [_, b] : buffers_) feed(*b);
        return h;
    }

private:
    std::vector<std::pair<std::string, Var<T>>> params_;
    std::vector<std::pair<std::string, std::unique_ptr<Tensor<T>>>> buffers_;
};

/// He-style uniform init, bound sqrt(6 / fan_in) * gain.
template <typename T>
Tensor<T> he_uniform(Shape s, int fan_in, Rng& rng, double gain = 1.0) {
    Tensor<T> t(s);
    const double bound = gain * std::sqrt(6.0 / fan_in);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

namespace detail {
template <typename T>
T normalize(std::vector<T>& v) {
    T n = 0;
    for (T x : v) n += x * x;
    n = std::sqrt(n);
    const T inv = T(1) / std::max(n, T(1e-12));
    for (T& x : v) x *= inv;
    return n;
}
}  // namespace detail

/// Power-iteration state for one weight, viewed as (rows, cols) with
/// rows = leading dimension.
template <typename T>
struct SpectralState {
    Tensor<T>* u = nullptr;  // rows
    Tensor<T>* v = nullptr;  // cols
    int iterations = 1;
};

/// W / sigma(W), sigma estimated by power iteration. When `update` is set the
/// stored singular vectors advance by `iterations` steps first. Gradient treats
/// u and v as constants: dW = G / sigma - <G, W> / sigma^2 * u v^T.
template <typename T>
Var<T> spectral_normalize(const Var<T>& weight, SpectralState<T>& state, bool update) {
    const Shape s = weight->value.shape();
    const int rows = s.n;
    const int cols = static_cast<int>(s.sample());
    const T* w = weight->value.data();
    std::vector<T> u(state.u->vec());
    std::vector<T> v(state.v->vec());
    if (update) {
        for (int it = 0; it < state.iterations; ++it) {
            std::fill(v.begin(), v.end(), T(0));
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) v[c] += w[static_cast<std::size_t>(r) * cols + c] * u[r];
            detail::normalize(v);
            std::fill(u.begin(), u.end(), T(0));
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) u[r] += w[static_cast<std::size_t>(r) * cols + c] * v[c];
            detail::normalize(u);
        }
        state.u->vec() = u;
        state.v->vec() = v;
    }
    T sigma = 0;
    for (int r = 0; r < rows; ++r) {
        T acc = 0;
        for (int c = 0; c < cols; ++c) acc += w[static_cast<std::size_t>(r) * cols + c] * v[c];
        sigma += u[r] * acc;
    }
    sigma = std::max(sigma, T(1e-12));
    Tensor<T> out(s);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = w[i] / sigma;
    return make_result<T>(std::move(out), {weight},
                          [weight, u, v, sigma, rows, cols](const Tensor<T>& g) {
                              const T* wv = weight->value.data();
                              T inner = 0;
                              for (std::size_t i = 0; i < g.size(); ++i) inner += g[i] * wv[i];
                              auto& gw = weight->grad_buffer();
                              const T a = T(1) / sigma;
                              const T b = inner / (sigma * sigma);
                              for (int r = 0; r < rows; ++r)
                                  for (int c = 0; c < cols; ++c) {
                                      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
                                      gw[i] += a * g[i] - b * u[r] * v[c];
                                  }
                          });
}

/// Largest singular value estimate from the stored state (no update).
template <typename T>
T spectral_sigma(const Tensor<T>& weight, const SpectralState<T>& state) {
    const int rows = weight.shape().n;
    const int cols = static_cast<int>(weight.shape().sample());
    T sigma = 0;
    for (int r = 0; r < rows; ++r) {
        T acc = 0;
        for (int c = 0; c < cols; ++c)
            acc += weight[static_cast<std::size_t>(r) * cols + c] * (*state.v)[c];
        sigma += (*state.u)[r] * acc;
    }
    return sigma;
}

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParamStore<T>& store, const std::string& name, int in, int out, int kernel, int stride,
           int pad, Rng& rng, double gain = 1.0, bool zero_init = false)
        : stride_(stride), pad_(pad) {
        Shape ws{out, in, kernel, kernel};
        weight_ = store.add(name + ".weight",
                            zero_init ? Tensor<T>(ws) : he_uniform<T>(ws, in * kernel * kernel, rng, gain));
        bias_ = store.add(name + ".bias", Tensor<T>(Shape{1, out, 1, 1}));
    }

    void enable_spectral_norm(ParamStore<T>& store, const std::string& name, int iterations,
                              Rng& rng) {
        const Shape ws = weight_->value.shape();
        Tensor<T> u(Shape{ws.n, 1, 1, 1});
        Tensor<T> v(Shape{static_cast<int>(ws.sample()), 1, 1, 1});
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = static_cast<T>(rng.normal());
        detail::normalize(u.vec());
        sn_.u = store.add_buffer(name + ".sn_u", std::move(u));
        sn_.v = store.add_buffer(name + ".sn_v", std::move(v));
        sn_.iterations = iterations;
        // settle v so that eval-mode use before any training step is meaningful
        NoGradGuard ng;
        spectral_normalize(weight_, sn_, true);
    }

    [[nodiscard]] bool spectral() const { return sn_.u != nullptr; }

    Var<T> operator()(const Var<T>& x, bool training) {
        Var<T> w = spectral() ? spectral_normalize(weight_, sn_, training) : weight_;
        return conv2d(x, w, bias_, stride_, pad_);
    }

    [[nodiscard]] const Var<T>& weight() const { return weight_; }
    SpectralState<T>& spectral_state() { return sn_; }

private:
    Var<T> weight_;
    Var<T> bias_;
    int stride_ = 1;
    int pad_ = 0;
    SpectralState<T> sn_;
};

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng,
           double gain = 1.0) {
        weight_ = store.add(name + ".weight", he_uniform<T>(Shape{out, in, 1, 1}, in, rng, gain));
        bias_ = store.add(name + ".bias", Tensor<T>(Shape{1, out, 1, 1}));
    }

    void enable_spectral_norm(ParamStore<T>& store, const std::string& name, int iterations,
                              Rng& rng) {
        const Shape ws = weight_->value.shape();
        Tensor<T> u(Shape{ws.n, 1, 1, 1});
        Tensor<T> v(Shape{static_cast<int>(ws.sample()), 1, 1, 1});
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = static_cast<T>(rng.normal());
        detail::normalize(u.vec());
        sn_.u = store.add_buffer(name + ".sn_u", std::move(u));
        sn_.v = store.add_buffer(name + ".sn_v", std::move(v));
        sn_.iterations = iterations;
        NoGradGuard ng;
        spectral_normalize(weight_, sn_, true);
    }

    [[nodiscard]] bool spectral() const { return sn_.u != nullptr; }

    Var<T> operator()(const Var<T>& x, bool training) {
        Var<T> w = spectral() ? spectral_normalize(weight_, sn_, training) : weight_;
        return linear(x, w, bias_);
    }

    [[nodiscard]] const Var<T>& weight() const { return weight_; }

private:
    Var<T> weight_;
    Var<T> bias_;
    SpectralState<T> sn_;
};

struct AdamParams {
    double alpha = 2e-4;
    double beta1 = 0.0;
    double beta2 = 0.9;
    double eps = 1e-8;
};

template <typename T>
class Adam {
public:
    Adam(const ParamStore<T>& store, AdamParams p) : p_(p) {
        for (const auto& [_, v] : store.params()) {
            params_.push_back(v);
            m_.emplace_back(v->value.size(), 0.0);
            s_.emplace_back(v->value.size(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& node = *params_[k];
            if (node.grad.empty()) continue;
            auto& m = m_[k];
            auto& s = s_[k];
            for (std::size_t i = 0; i < node.value.size(); ++i) {
                const double g = node.grad[i];
                m[i] = p_.beta1 * m[i] + (1.0 - p_.beta1) * g;
                s[i] = p_.beta2 * s[i] + (1.0 - p_.beta2) * g * g;
                const double mh = m[i] / c1;
                const double sh = s[i] / c2;
                node.value[i] -= static_cast<T>(p_.alpha * mh / (std::sqrt(sh) + p_.eps));
            }
        }
    }

    [[nodiscard]] long steps() const { return t_; }

private:
    AdamParams p_;
    std::vector<Var<T>> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> s_;
    long t_ = 0;
};

}  // namespace coin::nn
