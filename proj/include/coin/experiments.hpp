#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "coin/config.hpp"
#include "coin/evaluate.hpp"
#include "coin/training.hpp"

namespace coin {

inline EvalOptions eval_options(const RunConfig& cfg) {
    const RunConfig r = cfg.resolved();
    EvalOptions o;
    o.tau = r.eval.tau;
    o.grid_size = r.explain.grid_size;
    o.post.morph_kernel = r.explain.morph_kernel;
    o.post.keep_largest = r.explain.keep_largest;
    o.rise = r.rise;
    o.cam = r.cam;
    return o;
}

template <typename T>
ClassifierRun<T> train_classifier(const Dataset& ds, const RunConfig& cfg, std::ostream* log = nullptr) {
    const RunConfig r = cfg.resolved();
    return train_classifier<T>(ds, r.classifier, r.train, log);
}

template <typename T>
GanRun<T> train_gan(const Dataset& ds, Classifier<T>& clf, const RunConfig& cfg, std::ostream* log = nullptr,
                    const GanCheckpointHook<T>& hook = {}) {
    const RunConfig r = cfg.resolved();
    return train_gan<T>(ds, clf, r.generator, r.discriminator, r.losses, r.train, r.gan, log, hook);
}

/// One row of the ablation matrix.
struct Experiment {
    std::string id;
    std::string group;  // "loss" or "ladder"
    RunConfig cfg;
};

namespace detail {
inline RunConfig ladder_row(const RunConfig& base, bool masks, bool perturbation, int skips, int conditions) {
    RunConfig c = base;
    c.gan.use_masks = masks;
    c.generator.perturbation_mode = perturbation;
    c.generator.n_skip = std::min(skips, c.generator.depth);
    c.generator.n_conditions = conditions;
    return c;
}
}  // namespace detail

/// Loss study: baseline, idt=0, f=0, tv=0. Ladder: rows A..H then COIN.
inline std::vector<Experiment> ablation_matrix(const RunConfig& base) {
    std::vector<Experiment> rows;
    if (base.ablate.loss_study) {
        rows.push_back({"baseline", "loss", base});
        RunConfig c = base;
        c.losses.lambda_idt = 0;
        rows.push_back({"no_idt", "loss", c});
        c = base;
        c.losses.lambda_f = 0;
        rows.push_back({"no_f", "loss", c});
        c = base;
        c.losses.lambda_tv = 0;
        rows.push_back({"no_tv", "loss", c});
    }
    if (base.ablate.ladder) {
        const int d = base.generator.depth;
        rows.push_back({"A", "ladder", detail::ladder_row(base, true, false, 0, 2)});
        rows.push_back({"B", "ladder", detail::ladder_row(base, true, true, 0, 2)});
        rows.push_back({"C", "ladder", detail::ladder_row(base, true, true, 1, 2)});
        rows.push_back({"D", "ladder", detail::ladder_row(base, true, true, 2, 2)});
        rows.push_back({"E", "ladder", detail::ladder_row(base, true, true, 3, 2)});
        rows.push_back({"F", "ladder", detail::ladder_row(base, true, true, 4, 2)});
        rows.push_back({"G", "ladder", detail::ladder_row(base, false, true, d, 2)});
        rows.push_back({"H", "ladder", detail::ladder_row(base, false, false, d, 2)});
        rows.push_back({"COIN", "ladder", detail::ladder_row(base, false, true, d, 1)});
    }
    for (auto& r : rows) r.cfg.validate();
    return rows;
}

struct ExperimentResult {
    Experiment experiment;
    MetricsReport report;
};

/// Trains a GAN per row against the shared classifier and evaluates it.
/// Rows whose effective configuration coincides reuse the earlier result.
template <typename T>
std::vector<ExperimentResult> run_ablation(const Dataset& ds, Classifier<T>& clf, const std::vector<Experiment>& rows,
                                           std::ostream* log = nullptr,
                                           const std::function<void(const ExperimentResult&, const MethodOutput&)>&
                                               on_row = {}) {
    std::vector<ExperimentResult> out;
    std::map<std::string, MetricsReport> done;
    for (const auto& e : rows) {
        const std::string key = to_json(e.cfg.resolved()).dump();
        if (auto it = done.find(key); it != done.end()) {
            if (log) *log << "experiment " << e.id << ": same configuration as an earlier row, reusing it\n";
            MetricsReport r = it->second;
            r.method = e.id;
            out.push_back({e, r});
            continue;
        }
        if (log) *log << "experiment " << e.id << '\n';
        MethodOutput o;
        try {
            auto gan = train_gan<T>(ds, clf, e.cfg, log);
            o = evaluate_counterfactual<T>(e.id, gan.generator, clf, ds, eval_options(e.cfg));
        } catch (const ConfigError& err) {
            throw ConfigError("experiment " + e.id + ": " + err.what());
        } catch (const NumericError& err) {
            throw NumericError("experiment " + e.id + ": " + err.what());
        } catch (const IoError& err) {
            throw IoError("experiment " + e.id + ": " + err.what());
        }
        done.emplace(key, o.report);
        out.push_back({e, o.report});
        if (on_row) on_row(out.back(), o);
    }
    return out;
}

inline std::string ablation_csv_header() {
    return "id,group,masks,perturbation,n_skip,n_conditions,lambda_gan,lambda_f,lambda_idt,lambda_tv,fid,cv,iou,"
           "best_threshold";
}

inline std::string ablation_csv_row(const ExperimentResult& r) {
    const RunConfig& c = r.experiment.cfg;
    std::ostringstream os;
    os << r.experiment.id << ',' << r.experiment.group << ',' << c.gan.use_masks << ','
       << c.generator.perturbation_mode << ',' << c.generator.n_skip << ',' << c.generator.n_conditions << ','
       << c.losses.lambda_gan << ',' << c.losses.lambda_f << ',' << c.losses.lambda_idt << ',' << c.losses.lambda_tv
       << ',' << fmt_opt(r.report.fid, 6) << ',' << fmt_opt(r.report.cv, 6) << ',' << std::fixed
       << std::setprecision(6) << r.report.iou_mean << ',' << std::setprecision(2) << r.report.best_threshold;
    return os.str();
}

/// loss_study.csv and ladder.csv (rows of the selected groups only).
inline void write_ablation(const std::filesystem::path& dir, const std::vector<ExperimentResult>& rows) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    for (const char* group : {"loss", "ladder"}) {
        bool any = false;
        for (const auto& r : rows) any = any || r.experiment.group == group;
        if (!any) continue;
        const auto p = dir / (std::string(group) == "loss" ? "loss_study.csv" : "ladder.csv");
        std::ofstream f(p);
        if (!f) throw IoError("cannot write " + p.string());
        f << ablation_csv_header() << '\n';
        for (const auto& r : rows)
            if (r.experiment.group == group) f << ablation_csv_row(r) << '\n';
        if (!f) throw IoError("cannot write " + p.string());
    }
}

}  // namespace coin
