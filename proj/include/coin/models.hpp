#pragma once

#include <optional>
#include <string>
#include <vector>

#include "coin/errors.hpp"
#include "coin/nn.hpp"

namespace coin {

struct ClassifierSpec {
    int input_size = 64;
    int base_channels = 4;
    int depth = 3;  // downsampling stages
    double threshold_t = 0.5;

    /// Penultimate (pooled) feature length.
    [[nodiscard]] int stage_channels(int stage) const { return base_channels << std::min(stage + 1, 3); }
    [[nodiscard]] int feature_dim() const { return stage_channels(depth - 1); }

    void validate() const {
        require_config(depth >= 2, "classifier.depth must be >= 2");
        require_config(threshold_t > 0.0 && threshold_t < 1.0, "classifier.threshold_t must be in (0,1)");
        require_config(base_channels >= 1, "classifier.base_channels must be >= 1");
        require_config(input_size >= 16 && input_size % (1 << depth) == 0,
                       "classifier.input_size must be >= 16 and divisible by 2^depth");
    }
    friend bool operator==(const ClassifierSpec&, const ClassifierSpec&) = default;
};

enum class SkipFusion { Concat, Add };

struct GeneratorSpec {
    int input_size = 64;
    int n_skip = 4;
    bool perturbation_mode = true;
    int n_conditions = 1;
    int depth = 4;
    int base_channels = 8;
    SkipFusion fusion = SkipFusion::Concat;
    /// Zero the output convolution at construction (identity start in perturbation mode).
    bool zero_init_output = true;

    void validate() const {
        require_config(depth >= 1, "generator.depth must be >= 1");
        require_config(n_skip >= 0 && n_skip <= depth, "generator.n_skip must be in [0, depth]");
        require_config(n_conditions == 1 || n_conditions == 2, "generator.n_conditions must be 1 or 2");
        require_config(base_channels >= 1, "generator.base_channels must be >= 1");
        require_config(input_size >= 16 && input_size % (1 << depth) == 0,
                       "generator.input_size must be >= 16 and divisible by 2^depth");
    }
    friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

struct DiscriminatorSpec {
    int input_size = 64;
    int depth = 4;
    int base_channels = 4;
    bool conditional = false;
    int spectral_norm_iters = 1;

    void validate() const {
        require_config(depth >= 1, "discriminator.depth must be >= 1");
        require_config(spectral_norm_iters >= 1, "discriminator.spectral_norm_iters must be >= 1");
        require_config(base_channels >= 1, "discriminator.base_channels must be >= 1");
        require_config(input_size >= 16 && input_size % (1 << depth) == 0,
                       "discriminator.input_size must be >= 16 and divisible by 2^depth");
    }
    friend bool operator==(const DiscriminatorSpec&, const DiscriminatorSpec&) = default;
};

namespace detail {
inline void require_input(const Shape& s, int size, const char* who) {
    if (s.c != 1 || s.h != size || s.w != size) {
        throw ShapeError(std::string(who) + ": expected (N,1," + std::to_string(size) + "," +
                         std::to_string(size) + ") input, got " + s.str());
    }
}
}  // namespace detail

template <typename T>
struct ClassifierOutput {
    nn::Var<T> logit;                  // (N,1,1,1)
    nn::Var<T> features;               // (N,F,1,1)
    std::vector<nn::Var<T>> stages;    // one activation per downsampling stage
};

/// Small residual CNN: stem, then `depth` stride-2 stages each followed by a
/// residual block, global average pool, linear logit.
template <typename T>
class Classifier {
public:
    Classifier(const ClassifierSpec& spec, std::uint64_t seed) : spec_(spec) {
        spec_.validate();
        Rng rng(seed);
        const int b = spec_.base_channels;
        stem_ = nn::Conv2d<T>(store_, "stem", 1, b, 3, 1, 1, rng);
        int in = b;
        for (int i = 0; i < spec_.depth; ++i) {
            const int out = spec_.stage_channels(i);
            const std::string p = "stage" + std::to_string(i);
            down_.emplace_back(store_, p + ".down", in, out, 4, 2, 1, rng);
            res_a_.emplace_back(store_, p + ".res_a", out, out, 3, 1, 1, rng);
            res_b_.emplace_back(store_, p + ".res_b", out, out, 3, 1, 1, rng, 0.5);
            in = out;
        }
        head_ = nn::Linear<T>(store_, "head", in, 1, rng, 0.5);
    }

    ClassifierOutput<T> forward(const nn::Var<T>& x01) {
        detail::require_input(x01->value.shape(), spec_.input_size, "classifier");
        ClassifierOutput<T> out;
        auto h = nn::relu(stem_(nn::affine(x01, T(2), T(-1)), false));
        for (int i = 0; i < spec_.depth; ++i) {
            h = nn::relu(down_[i](h, false));
            auto r = res_b_[i](nn::relu(res_a_[i](h, false)), false);
            h = nn::relu(nn::add(h, r));
            out.stages.push_back(h);
        }
        out.features = nn::global_avg_pool(h);
        out.logit = head_(out.features, false);
        return out;
    }

    /// f(X) for every image of an (N,1,S,S) batch, in input order.
    std::vector<double> probabilities(const Tensor<T>& batch) {
        nn::NoGradGuard ng;
        auto o = forward(nn::constant(batch));
        std::vector<double> p(o.logit->value.size());
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = 1.0 / (1.0 + std::exp(-double(o.logit->value[i])));
        return p;
    }

    /// Penultimate activations, one row of length feature_dim per image.
    std::vector<std::vector<double>> features(const Tensor<T>& batch) {
        nn::NoGradGuard ng;
        auto o = forward(nn::constant(batch));
        const int f = spec_.feature_dim();
        std::vector<std::vector<double>> out(batch.shape().n, std::vector<double>(f));
        for (int n = 0; n < batch.shape().n; ++n)
            for (int j = 0; j < f; ++j) out[n][j] = o.features->value.at(n, j, 0, 0);
        return out;
    }

    [[nodiscard]] bool label(double probability) const { return probability >= spec_.threshold_t; }

    [[nodiscard]] const ClassifierSpec& spec() const { return spec_; }
    nn::ParamStore<T>& params() { return store_; }
    const nn::ParamStore<T>& params() const { return store_; }

private:
    ClassifierSpec spec_;
    nn::ParamStore<T> store_;
    nn::Conv2d<T> stem_;
    std::vector<nn::Conv2d<T>> down_, res_a_, res_b_;
    nn::Linear<T> head_;
};

/// Encoder-decoder explainer. Encoder features F[0] (stem, full resolution) ..
/// F[depth] (bottleneck z). Decoder stage j convolves at the coarse scale,
/// upsamples to the resolution of F[depth-j] and, when j <= n_skip, fuses F[depth-j].
template <typename T>
class Generator {
public:
    Generator(const GeneratorSpec& spec, std::uint64_t seed) : spec_(spec) {
        spec_.validate();
        Rng rng(seed);
        const int b = spec_.base_channels;
        enc_ch_.push_back(b);
        stem_ = nn::Conv2d<T>(store_, "enc.stem", 1, b, 3, 1, 1, rng);
        for (int i = 0; i < spec_.depth; ++i) {
            const int out = b << std::min(i + 1, 2);
            down_.emplace_back(store_, "enc.down" + std::to_string(i), enc_ch_.back(), out, 4, 2, 1, rng);
            enc_ch_.push_back(out);
        }
        int in = enc_ch_.back() + (spec_.n_conditions == 2 ? 1 : 0);
        for (int j = 1; j <= spec_.depth; ++j) {
            const int out = enc_ch_[spec_.depth - j];
            up_.emplace_back(store_, "dec.up" + std::to_string(j), in, out, 3, 1, 1, rng);
            in = out;
            if (j <= spec_.n_skip && spec_.fusion == SkipFusion::Concat) in += out;
        }
        out_ = nn::Conv2d<T>(store_, "dec.out", in, 1, 3, 1, 1, rng, 0.5, spec_.zero_init_output);
    }

    /// Counterfactual for an (N,1,S,S) batch in [0,1]. `condition` must be given
    /// (one value per image) iff n_conditions == 2.
    nn::Var<T> forward(const nn::Var<T>& x01, const std::vector<T>* condition = nullptr) {
        detail::require_input(x01->value.shape(), spec_.input_size, "generator");
        const int n = x01->value.shape().n;
        if (spec_.n_conditions == 1 && condition) {
            throw ConfigError("generator: condition supplied to a single-condition model");
        }
        if (spec_.n_conditions == 2 && (!condition || static_cast<int>(condition->size()) != n)) {
            throw ConfigError("generator: dual-condition model needs one condition per image");
        }
        const T slope = T(0.2);
        auto xm = nn::affine(x01, T(2), T(-1));
        std::vector<nn::Var<T>> feats;
        feats.push_back(nn::leaky_relu(stem_(xm, false), slope));
        for (auto& d : down_) feats.push_back(nn::leaky_relu(d(feats.back(), false), slope));
        auto h = feats.back();
        if (condition) {
            const Shape zs = h->value.shape();
            h = nn::concat_channels(h, nn::condition_plane<T>(*condition, zs.h, zs.w));
        }
        for (int j = 1; j <= spec_.depth; ++j) {
            h = nn::upsample2x(nn::leaky_relu(up_[j - 1](h, false), slope));
            if (j <= spec_.n_skip) {
                const auto& skip = feats[spec_.depth - j];
                h = spec_.fusion == SkipFusion::Concat ? nn::concat_channels(h, skip) : nn::add(h, skip);
            }
        }
        auto g = nn::tanh(out_(h, false));
        // perturbation applied in [0,1] so a zero map returns x bit-exactly
        if (spec_.perturbation_mode) return nn::clamp(nn::add(x01, nn::affine(g, T(0.5), T(0))), T(0), T(1));
        return nn::affine(g, T(0.5), T(0.5));
    }

    /// Inference convenience: no graph, plain tensor out.
    Tensor<T> explain(const Tensor<T>& batch, std::optional<std::vector<T>> condition = std::nullopt) {
        nn::NoGradGuard ng;
        return forward(nn::constant(batch), condition ? &*condition : nullptr)->value;
    }

    [[nodiscard]] const GeneratorSpec& spec() const { return spec_; }
    nn::ParamStore<T>& params() { return store_; }
    const nn::ParamStore<T>& params() const { return store_; }
    /// The convolution producing the perturbation (or full image) map.
    nn::Conv2d<T>& output_layer() { return out_; }

private:
    GeneratorSpec spec_;
    nn::ParamStore<T> store_;
    std::vector<int> enc_ch_;
    nn::Conv2d<T> stem_;
    std::vector<nn::Conv2d<T>> down_;
    std::vector<nn::Conv2d<T>> up_;
    nn::Conv2d<T> out_;
};

/// Spectrally normalized convolutional critic; projection conditioning when
/// `conditional` is set.
template <typename T>
class Discriminator {
public:
    Discriminator(const DiscriminatorSpec& spec, std::uint64_t seed) : spec_(spec) {
        spec_.validate();
        Rng rng(seed);
        const int b = spec_.base_channels;
        const int it = spec_.spectral_norm_iters;
        stem_ = nn::Conv2d<T>(store_, "stem", 1, b, 3, 1, 1, rng);
        stem_.enable_spectral_norm(store_, "stem", it, rng);
        int in = b;
        for (int i = 0; i < spec_.depth; ++i) {
            const int out = b << std::min(i + 1, 3);
            const std::string name = "down" + std::to_string(i);
            down_.emplace_back(store_, name, in, out, 4, 2, 1, rng);
            down_.back().enable_spectral_norm(store_, name, it, rng);
            in = out;
        }
        head_ = nn::Linear<T>(store_, "head", in, 1, rng);
        head_.enable_spectral_norm(store_, "head", it, rng);
        if (spec_.conditional) {
            embed0_ = store_.add("embed0", nn::he_uniform<T>(Shape{1, in, 1, 1}, in, rng, 0.5));
            embed1_ = store_.add("embed1", nn::he_uniform<T>(Shape{1, in, 1, 1}, in, rng, 0.5));
        }
    }

    /// Realness logits (N,1,1,1). `training` advances the power iteration.
    nn::Var<T> forward(const nn::Var<T>& x01, const std::vector<T>* condition, bool training) {
        detail::require_input(x01->value.shape(), spec_.input_size, "discriminator");
        if (spec_.conditional != (condition != nullptr)) {
            throw ConfigError(spec_.conditional ? "discriminator: conditional model needs a condition"
                                                : "discriminator: condition given to unconditional model");
        }
        const T slope = T(0.2);
        auto h = nn::leaky_relu(stem_(nn::affine(x01, T(2), T(-1)), training), slope);
        for (auto& d : down_) h = nn::leaky_relu(d(h, training), slope);
        auto phi = nn::global_avg_pool(h);
        auto logit = head_(phi, training);
        if (condition) {
            auto e = nn::condition_embedding(embed0_, embed1_, *condition);
            logit = nn::add(logit, nn::sum_channels(nn::mul(phi, e)));
        }
        return logit;
    }

    std::vector<double> scores(const Tensor<T>& batch, std::optional<std::vector<T>> condition = std::nullopt) {
        nn::NoGradGuard ng;
        auto o = forward(nn::constant(batch), condition ? &*condition : nullptr, false);
        return {o->value.vec().begin(), o->value.vec().end()};
    }

    [[nodiscard]] const DiscriminatorSpec& spec() const { return spec_; }
    nn::ParamStore<T>& params() { return store_; }
    const nn::ParamStore<T>& params() const { return store_; }
    nn::Conv2d<T>& stem() { return stem_; }

private:
    DiscriminatorSpec spec_;
    nn::ParamStore<T> store_;
    nn::Conv2d<T> stem_;
    std::vector<nn::Conv2d<T>> down_;
    nn::Linear<T> head_;
    nn::Var<T> embed0_, embed1_;
};

}  // namespace coin
