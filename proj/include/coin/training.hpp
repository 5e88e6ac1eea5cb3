#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "coin/data.hpp"
#include "coin/errors.hpp"
#include "coin/losses.hpp"
#include "coin/models.hpp"

namespace coin {

struct TrainConfig {
    int batch_size = 16;
    double adam_alpha = 2e-4;
    double classifier_alpha = 1e-3;  // classifier stage only
    double adam_beta1 = 0.0;
    double adam_beta2 = 0.9;
    int classifier_epochs = 30;
    int gan_steps = 1500;
    int d_updates_per_g = 1;
    std::uint64_t seed = 7;
    int checkpoint_every = 0;  // steps; 0 disables
    int log_every = 100;

    [[nodiscard]] nn::AdamParams adam() const { return {adam_alpha, adam_beta1, adam_beta2, 1e-8}; }
    [[nodiscard]] nn::AdamParams classifier_adam() const { return {classifier_alpha, adam_beta1, adam_beta2, 1e-8}; }

    void validate() const {
        require_config(batch_size >= 1, "train.batch_size must be >= 1");
        require_config(adam_alpha > 0, "train.adam_alpha must be > 0");
        require_config(classifier_alpha > 0, "train.classifier_alpha must be > 0");
        require_config(adam_beta1 >= 0 && adam_beta1 < 1, "train.adam_beta1 must be in [0,1)");
        require_config(adam_beta2 >= 0 && adam_beta2 < 1, "train.adam_beta2 must be in [0,1)");
        require_config(classifier_epochs >= 0, "train.classifier_epochs must be >= 0");
        require_config(gan_steps >= 0, "train.gan_steps must be >= 0");
        require_config(d_updates_per_g >= 1, "train.d_updates_per_g must be >= 1");
        require_config(checkpoint_every >= 0, "train.checkpoint_every must be >= 0");
        require_config(log_every >= 0, "train.log_every must be >= 0");
    }
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Options that only the GAN stage reads.
struct GanOptions {
    /// Replace L1 in the self-consistency term by the organ/background masked
    /// reconstruction loss.
    bool use_masks = false;
    friend bool operator==(const GanOptions&, const GanOptions&) = default;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
};

struct StepRecord {
    int step = 0;
    double d_loss = 0;
    losses::LossReport g;
};

template <typename T>
struct ClassifierRun {
    Classifier<T> model;
    std::vector<EpochRecord> history;
    int best_epoch = 0;  // 0 = initial weights
    double best_val_acc = 0;
};

template <typename T>
struct GanRun {
    Generator<T> generator;
    Discriminator<T> discriminator;
    std::vector<StepRecord> history;
};

namespace detail {

template <typename T>
std::vector<Tensor<T>> snapshot(const nn::ParamStore<T>& store) {
    std::vector<Tensor<T>> out;
    for (const auto& [_, p] : store.params()) out.push_back(p->value);
    for (const auto& [_, b] : store.buffers()) out.push_back(*b);
    return out;
}

template <typename T>
void restore(nn::ParamStore<T>& store, const std::vector<Tensor<T>>& snap) {
    std::size_t k = 0;
    for (auto& [_, p] : store.params()) p->value = snap[k++];
    for (auto& [_, b] : store.buffers()) *b = snap[k++];
}

template <typename T>
Tensor<T> batch_images(const std::vector<const ScanSlice*>& slices) {
    std::vector<const Image*> ims;
    for (const auto* s : slices) ims.push_back(&s->image);
    return stack<T>(ims);
}

/// (N, 2, H, W): organ mask and its complement.
template <typename T>
Tensor<T> batch_label_masks(const std::vector<const ScanSlice*>& slices) {
    const int h = slices.front()->organ_mask.h, w = slices.front()->organ_mask.w;
    Tensor<T> m(Shape{static_cast<int>(slices.size()), 2, h, w});
    for (std::size_t n = 0; n < slices.size(); ++n) {
        T* p = m.sample_ptr(static_cast<int>(n));
        const auto& om = slices[n]->organ_mask.px;
        for (std::size_t i = 0; i < om.size(); ++i) {
            p[i] = om[i] ? T(1) : T(0);
            p[om.size() + i] = om[i] ? T(0) : T(1);
        }
    }
    return m;
}

/// Endless per-class shuffled streams; each batch takes half its images from
/// each class (the odd one from the abnormal class).
class BalancedSampler {
public:
    BalancedSampler(const std::vector<const ScanSlice*>& pool, std::uint64_t seed) : rng_(seed) {
        for (const auto* s : pool) (s->label ? abnormal_ : normal_).push_back(s);
        if (normal_.empty() || abnormal_.empty())
            throw ConfigError("training split must contain both normal and abnormal slices");
    }

    std::vector<const ScanSlice*> next(int batch) {
        std::vector<const ScanSlice*> out;
        const int n_norm = batch / 2;
        for (int i = 0; i < batch; ++i) out.push_back(draw(i < n_norm ? normal_ : abnormal_, i < n_norm ? pn_ : pa_));
        return out;
    }

private:
    const ScanSlice* draw(std::vector<const ScanSlice*>& v, std::size_t& pos) {
        if (pos == 0) rng_.shuffle(v);
        const ScanSlice* s = v[pos];
        pos = (pos + 1) % v.size();
        return s;
    }

    Rng rng_;
    std::vector<const ScanSlice*> normal_, abnormal_;
    std::size_t pn_ = 0, pa_ = 0;
};

inline double bce_from_logit(double l, int y) {
    return y ? losses::detail::softplus(-l) : losses::detail::softplus(l);
}

}  // namespace detail

/// Loss and accuracy of a classifier over a slice list (inference only).
template <typename T>
std::pair<double, double> evaluate_classifier(Classifier<T>& clf, const std::vector<const ScanSlice*>& slices,
                                              int batch = 64) {
    if (slices.empty()) return {0.0, 0.0};
    double loss = 0;
    int correct = 0;
    nn::NoGradGuard ng;
    for (std::size_t s = 0; s < slices.size(); s += batch) {
        std::vector<const ScanSlice*> part(slices.begin() + s,
                                           slices.begin() + std::min(slices.size(), s + batch));
        auto out = clf.forward(nn::constant(detail::batch_images<T>(part)));
        for (std::size_t i = 0; i < part.size(); ++i) {
            const double l = out.logit->value[i];
            loss += detail::bce_from_logit(l, part[i]->label);
            const double p = 1.0 / (1.0 + std::exp(-l));
            correct += static_cast<int>(clf.label(p)) == part[i]->label;
        }
    }
    return {loss / slices.size(), static_cast<double>(correct) / slices.size()};
}

/// Binary cross-entropy training with Adam; epoch 0 is the initialization.
/// The weights with the best validation accuracy (earliest on ties) are kept.
template <typename T>
ClassifierRun<T> train_classifier(const Dataset& ds, const ClassifierSpec& spec, const TrainConfig& cfg,
                                  std::ostream* log = nullptr) {
    cfg.validate();
    const auto train = ds.subset(ds.split.train);
    const auto val = ds.subset(ds.split.val);
    bool has0 = false, has1 = false;
    for (const auto* s : train) (s->label ? has1 : has0) = true;
    if (!(has0 && has1)) throw ConfigError("train classifier: training split has a single class");

    ClassifierRun<T> run{Classifier<T>(spec, derive_seed(cfg.seed, "classifier.init")), {}, 0, 0.0};
    auto& clf = run.model;
    nn::Adam<T> opt(clf.params(), cfg.classifier_adam());
    Rng rng(derive_seed(cfg.seed, "classifier.batches"));

    auto [vl, va] = evaluate_classifier(clf, val);
    run.best_val_acc = va;
    auto best = detail::snapshot(clf.params());
    std::vector<const ScanSlice*> order = train;
    for (int epoch = 1; epoch <= cfg.classifier_epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0;
        int correct = 0;
        for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
            std::vector<const ScanSlice*> part(order.begin() + s,
                                               order.begin() + std::min(order.size(), s + cfg.batch_size));
            Tensor<T> x = detail::batch_images<T>(part);
            // random flips keep the tiny training set from being memorized
            for (std::size_t n = 0; n < part.size(); ++n) {
                const int h = x.shape().h, w = x.shape().w;
                T* p = x.sample_ptr(static_cast<int>(n));
                if (rng.bernoulli(0.5))
                    for (int r = 0; r < h; ++r) std::reverse(p + r * w, p + (r + 1) * w);
                if (rng.bernoulli(0.5))
                    for (int r = 0; r < h / 2; ++r) std::swap_ranges(p + r * w, p + (r + 1) * w, p + (h - 1 - r) * w);
            }
            clf.params().zero_grad();
            auto out = clf.forward(nn::constant(std::move(x)));
            std::vector<T> target(part.size());
            for (std::size_t i = 0; i < part.size(); ++i) target[i] = static_cast<T>(part[i]->label);
            auto total = losses::bce_with_logits(out.logit, target);
            for (std::size_t i = 0; i < part.size(); ++i) {
                const double l = out.logit->value[i];
                loss_sum += detail::bce_from_logit(l, part[i]->label);
                correct += static_cast<int>(clf.label(1.0 / (1.0 + std::exp(-l)))) == part[i]->label;
            }
            if (!std::isfinite(static_cast<double>(total->value[0])))
                throw NumericError("classifier loss is non-finite at epoch " + std::to_string(epoch));
            nn::backward(total);
            opt.step();
        }
        std::tie(vl, va) = evaluate_classifier(clf, val);
        EpochRecord rec{epoch, loss_sum / order.size(), static_cast<double>(correct) / order.size(), vl, va};
        run.history.push_back(rec);
        if (va > run.best_val_acc) {
            run.best_val_acc = va;
            run.best_epoch = epoch;
            best = detail::snapshot(clf.params());
        }
        if (log)
            *log << "classifier epoch " << epoch << " train_loss " << rec.train_loss << " train_acc " << rec.train_acc
                 << " val_loss " << rec.val_loss << " val_acc " << rec.val_acc << '\n';
    }
    detail::restore(clf.params(), best);
    return run;
}

/// Called every `checkpoint_every` steps with the step index.
template <typename T>
using GanCheckpointHook = std::function<void(int, Generator<T>&, Discriminator<T>&)>;

/// Adversarial training against a frozen classifier. Single-condition models
/// push every counterfactual toward f = 0; dual-condition models use the
/// condition 1 - f(X) for the counterfactual and f(X) for reconstruction.
template <typename T>
GanRun<T> train_gan(const Dataset& ds, Classifier<T>& clf, const GeneratorSpec& gspec,
                    const DiscriminatorSpec& dspec, const losses::LossWeights& w, const TrainConfig& cfg,
                    const GanOptions& opt = {}, std::ostream* log = nullptr,
                    const GanCheckpointHook<T>& hook = {}) {
    cfg.validate();
    w.validate();
    gspec.validate();
    dspec.validate();
    const bool dual = gspec.n_conditions == 2;
    require_config(dspec.conditional == dual, "discriminator.conditional must be set iff generator.n_conditions == 2");
    require_config(gspec.input_size == clf.spec().input_size && dspec.input_size == gspec.input_size,
                   "generator, discriminator and classifier input sizes differ");

    GanRun<T> run{Generator<T>(gspec, derive_seed(cfg.seed, "generator.init")),
                  Discriminator<T>(dspec, derive_seed(cfg.seed, "discriminator.init")),
                  {}};
    auto& gen = run.generator;
    auto& disc = run.discriminator;
    nn::Adam<T> opt_g(gen.params(), cfg.adam());
    nn::Adam<T> opt_d(disc.params(), cfg.adam());
    clf.params().set_trainable(false);

    detail::BalancedSampler sampler(ds.subset(ds.split.train), derive_seed(cfg.seed, "gan.batches"));

    for (int step = 1; step <= cfg.gan_steps; ++step) {
        auto batch = sampler.next(cfg.batch_size);
        auto x = nn::constant(detail::batch_images<T>(batch));

        std::vector<T> c_id, c_cf;
        if (dual) {
            auto p = clf.probabilities(x->value);
            for (double v : p) {
                c_id.push_back(static_cast<T>(v));
                c_cf.push_back(static_cast<T>(1.0 - v));
            }
        }
        const std::vector<T>* cond_cf = dual ? &c_cf : nullptr;
        const std::vector<T>* cond_id = dual ? &c_id : nullptr;

        auto xcf = gen.forward(x, cond_cf);

        StepRecord rec;
        rec.step = step;
        disc.params().set_trainable(true);
        for (int k = 0; k < cfg.d_updates_per_g; ++k) {
            disc.params().zero_grad();
            auto real = disc.forward(x, cond_id, true);
            auto fake = disc.forward(nn::detach(xcf), cond_cf, true);
            auto ld = losses::gan_loss(real, fake, losses::GanSide::Discriminator);
            rec.d_loss = losses::value(ld);
            if (!std::isfinite(rec.d_loss))
                throw NumericError("non-finite discriminator loss at step " + std::to_string(step));
            nn::backward(ld);
            opt_d.step();
        }

        disc.params().set_trainable(false);
        gen.params().zero_grad();
        auto l_gan = losses::gan_loss<T>(nullptr, disc.forward(xcf, cond_cf, false), losses::GanSide::Generator);
        auto logit_cf = clf.forward(xcf).logit;
        nn::Var<T> l_f;
        if (dual) {
            l_f = losses::classifier_consistency_dual_logits(logit_cf, c_cf);
        } else {
            l_f = losses::classifier_consistency_coin_logits(logit_cf);
        }
        Tensor<T> masks;
        if (opt.use_masks) masks = detail::batch_label_masks<T>(batch);
        auto rec_loss = [&](const nn::Var<T>& a, const nn::Var<T>& b) {
            return opt.use_masks ? losses::masked_rec_loss(a, b, masks) : losses::l1_mean(a, b);
        };
        nn::Var<T> l_idt;
        if (w.lambda_idt > 0) {
            if (dual) {
                auto xid = gen.forward(x, cond_id);
                auto xcyc = gen.forward(xcf, cond_id);
                l_idt = nn::add(rec_loss(x, xid), rec_loss(x, xcyc));
            } else {
                auto e2 = gen.forward(xcf);
                l_idt = nn::add(rec_loss(x, xcf), rec_loss(x, e2));
            }
        } else {
            // not part of the objective; report its value without building a graph
            nn::NoGradGuard ng;
            auto e2 = gen.forward(nn::constant(xcf->value), dual ? cond_id : nullptr);
            auto first = dual ? gen.forward(x, cond_id) : nn::constant(xcf->value);
            l_idt = nn::add(rec_loss(x, first), rec_loss(x, e2));
        }
        auto l_tv = losses::tv_loss(nn::abs(nn::sub(xcf, x)));
        std::pair<nn::Var<T>, losses::LossReport> obj;
        try {
            obj = losses::total_objective(l_gan, l_f, l_idt, l_tv, w);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " at step " + std::to_string(step));
        }
        rec.g = obj.second;
        nn::backward(obj.first);
        opt_g.step();
        run.history.push_back(rec);

        if (log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.gan_steps)) {
            *log << "gan step " << step << " d " << rec.d_loss;
            for (const auto& [k, v] : rec.g.terms) *log << ' ' << k << ' ' << v;
            *log << " total " << rec.g.total << '\n';
        }
        if (hook && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) hook(step, gen, disc);
    }
    disc.params().set_trainable(true);
    return run;
}

// ---- history CSV ----------------------------------------------------------

inline void write_classifier_history(const std::filesystem::path& path, const std::vector<EpochRecord>& h) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << "epoch,train_loss,train_acc,val_loss,val_acc\n" << std::setprecision(9);
    for (const auto& r : h)
        f << r.epoch << ',' << r.train_loss << ',' << r.train_acc << ',' << r.val_loss << ',' << r.val_acc << '\n';
    if (!f) throw IoError("cannot write " + path.string());
}

inline void write_gan_history(const std::filesystem::path& path, const std::vector<StepRecord>& h) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << "step,d_loss,gan,f,idt,tv,total\n" << std::setprecision(9);
    for (const auto& r : h) {
        auto t = [&](const char* k) {
            auto it = r.g.terms.find(k);
            return it == r.g.terms.end() ? 0.0 : it->second;
        };
        f << r.step << ',' << r.d_loss << ',' << t("gan") << ',' << t("f") << ',' << t("idt") << ',' << t("tv")
          << ',' << r.g.total << '\n';
    }
    if (!f) throw IoError("cannot write " + path.string());
}

}  // namespace coin
