// coin: phantom data, classifier and GAN training, evaluation, ablations, figures.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "coin/checkpoint.hpp"
#include "coin/config.hpp"
#include "coin/data.hpp"
#include "coin/evaluate.hpp"
#include "coin/experiments.hpp"
#include "coin/figures.hpp"
#include "coin/training.hpp"

namespace fs = std::filesystem;
using namespace coin;

namespace {

constexpr int exit_config = 2;
constexpr int exit_io = 3;
constexpr int exit_numeric = 4;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

RunConfig load(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    cfg.validate();
    return cfg;
}

void make_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

Dataset load_data(const std::string& dir, const RunConfig& cfg) {
    if (!fs::is_directory(dir)) throw IoError("data directory " + dir + " does not exist");
    return load_dataset(dir, cfg.phantom.image_size, cfg.seed);
}

Classifier<float> load_clf(const std::string& path, const RunConfig& cfg) {
    if (path.empty()) throw ConfigError("paths.classifier_checkpoint is not set (use --classifier)");
    const auto spec = cfg.resolved().classifier;
    return load_classifier<float>(path, &spec);
}

Generator<float> load_gen(const std::string& path, const char* field) {
    if (path.empty()) throw ConfigError(std::string(field) + " is not set");
    return load_generator<float>(path);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int cmd_gen_data(const Common& c) {
    RunConfig cfg = load(c);
    const RunConfig r = cfg.resolved();
    const fs::path out = c.out;
    make_dir(out);
    const Dataset ds = build_dataset(r.phantom);
    save_dataset(out, ds);
    write_effective_config(out / "config.effective.json", cfg);
    std::size_t ab = 0;
    for (const auto& s : ds.slices) ab += s.label == 1;
    std::cout << "slices " << ds.slices.size() << " normal " << ds.slices.size() - ab << " abnormal " << ab
              << " train " << ds.split.train.size() << " val " << ds.split.val.size() << '\n';
    return 0;
}

int cmd_train_classifier(const Common& c, const std::string& data) {
    RunConfig cfg = load(c);
    const Dataset ds = load_data(data, cfg);
    const fs::path out = c.out;
    make_dir(out);
    auto run = train_classifier<float>(ds, cfg, &std::cout);
    const fs::path ck = out / "classifier.bin";
    save_checkpoint(run.model, ck);
    write_classifier_history(out / "classifier_history.csv", run.history);
    cfg.paths.classifier_checkpoint = fs::absolute(ck).string();
    write_effective_config(out / "config.effective.json", cfg);
    std::cout << "classifier best_epoch " << run.best_epoch << " val_acc " << run.best_val_acc << '\n';
    return 0;
}

int cmd_train_gan(const Common& c, const std::string& data, const std::string& classifier) {
    RunConfig cfg = load(c);
    if (!classifier.empty()) cfg.paths.classifier_checkpoint = classifier;
    auto clf = load_clf(cfg.paths.classifier_checkpoint, cfg);
    const Dataset ds = load_data(data, cfg);
    const fs::path out = c.out;
    make_dir(out);
    auto hook = [&out](int step, Generator<float>& g, Discriminator<float>& d) {
        save_checkpoint(g, out / ("generator_step" + std::to_string(step) + ".bin"));
        save_checkpoint(d, out / ("discriminator_step" + std::to_string(step) + ".bin"));
    };
    auto run = train_gan<float>(ds, clf, cfg, &std::cout, hook);
    const fs::path ck = out / "generator.bin";
    save_checkpoint(run.generator, ck);
    save_checkpoint(run.discriminator, out / "discriminator.bin");
    write_gan_history(out / "gan_history.csv", run.history);
    if (cfg.generator.n_conditions == 2)
        cfg.paths.singla_checkpoint = fs::absolute(ck).string();
    else
        cfg.paths.generator_checkpoint = fs::absolute(ck).string();
    write_effective_config(out / "config.effective.json", cfg);
    std::cout << "gan steps " << cfg.train.gan_steps;
    if (!run.history.empty()) {
        const auto& last = run.history.back();
        std::cout << " d " << last.d_loss;
        for (const auto& [k, v] : last.g.terms) std::cout << ' ' << k << ' ' << v;
        std::cout << " total " << last.g.total;
    }
    std::cout << '\n';
    return 0;
}

int cmd_evaluate(const Common& c, const std::string& data, const std::string& classifier,
                 const std::string& generator, const std::string& singla, const std::string& methods) {
    RunConfig cfg = load(c);
    if (!classifier.empty()) cfg.paths.classifier_checkpoint = classifier;
    if (!generator.empty()) cfg.paths.generator_checkpoint = generator;
    if (!singla.empty()) cfg.paths.singla_checkpoint = singla;
    if (!methods.empty()) cfg.eval.methods = split_list(methods);
    require_config(!cfg.eval.methods.empty(), "eval.methods is empty");
    cfg.validate();
    for (const auto& m : cfg.eval.methods) (void)method_kind(m);

    auto clf = load_clf(cfg.paths.classifier_checkpoint, cfg);
    const Dataset ds = load_data(data, cfg);
    const fs::path out = c.out;
    make_dir(out);
    const EvalOptions opt = eval_options(cfg);
    std::vector<MetricsReport> rows;
    for (const auto& m : cfg.eval.methods) {
        std::cout << "evaluating " << m << '\n';
        MethodOutput o;
        if (m == "coin") {
            auto g = load_gen(cfg.paths.generator_checkpoint, "paths.generator_checkpoint");
            o = evaluate_counterfactual<float>(m, g, clf, ds, opt);
        } else if (m == "singla") {
            auto g = load_gen(cfg.paths.singla_checkpoint, "paths.singla_checkpoint");
            o = evaluate_counterfactual<float>(m, g, clf, ds, opt);
        } else {
            o = evaluate_attribution<float>(m, clf, ds, opt);
        }
        write_method_output(out / m, o);
        rows.push_back(o.report);
    }
    {
        std::ofstream f(out / "comparison.csv");
        if (!f) throw IoError("cannot write " + (out / "comparison.csv").string());
        f << metrics_csv_header() << '\n';
        for (const auto& r : rows) f << metrics_csv_row(r) << '\n';
    }
    const std::string table = render_table(rows);
    {
        std::ofstream f(out / "comparison.txt");
        if (!f) throw IoError("cannot write " + (out / "comparison.txt").string());
        f << table;
    }
    write_effective_config(out / "config.effective.json", cfg);
    std::cout << table;
    return 0;
}

int cmd_ablate(const Common& c, const std::string& data, const std::string& classifier, const std::string& only) {
    RunConfig cfg = load(c);
    if (!classifier.empty()) cfg.paths.classifier_checkpoint = classifier;
    if (!only.empty()) {
        require_config(only == "loss" || only == "ladder", "--only expects loss or ladder");
        cfg.ablate.loss_study = only == "loss";
        cfg.ablate.ladder = only == "ladder";
    }
    const auto rows = ablation_matrix(cfg);
    require_config(!rows.empty(), "ablate.loss_study and ablate.ladder are both off");
    const Dataset ds = load_data(data, cfg);
    const fs::path out = c.out;
    make_dir(out);
    std::optional<Classifier<float>> clf;
    if (cfg.paths.classifier_checkpoint.empty()) {
        auto run = train_classifier<float>(ds, cfg, &std::cout);
        save_checkpoint(run.model, out / "classifier.bin");
        cfg.paths.classifier_checkpoint = fs::absolute(out / "classifier.bin").string();
        clf.emplace(std::move(run.model));
    } else {
        clf.emplace(load_clf(cfg.paths.classifier_checkpoint, cfg));
    }
    write_effective_config(out / "config.effective.json", cfg);
    auto results = run_ablation<float>(ds, *clf, ablation_matrix(cfg), &std::cout,
                                       [&out](const ExperimentResult& r, const MethodOutput& o) {
                                           write_method_output(out / r.experiment.id, o);
                                           write_effective_config(out / r.experiment.id / "config.effective.json",
                                                                  r.experiment.cfg);
                                       });
    write_ablation(out, results);
    std::vector<MetricsReport> reports;
    for (const auto& r : results) reports.push_back(r.report);
    std::cout << render_table(reports);
    return 0;
}

int cmd_figures(const std::string& report, const std::string& out) {
    const std::size_t n = render_figures(report, out);
    std::cout << "panels " << n << '\n';
    return 0;
}

void add_common(CLI::App* app, Common& c, bool needs_out = true) {
    app->add_option("--config,-c", c.config, "JSON run configuration (defaults when omitted)");
    app->add_option("--seed", c.seed, "root seed; overrides the config");
    auto* o = app->add_option("--out,-o", c.out, "output directory");
    if (needs_out) o->required();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Counterfactual inpainting for weakly supervised segmentation"};
    app.require_subcommand(1);

    Common common;
    std::string data, classifier, generator, singla, methods, only, report, fig_out;

    auto* gen = app.add_subcommand("gen-data", "generate the phantom dataset");
    add_common(gen, common);

    auto* train = app.add_subcommand("train", "train a pipeline stage");
    train->require_subcommand(1);
    auto* tc = train->add_subcommand("classifier", "train the binary classifier");
    add_common(tc, common);
    tc->add_option("--data,-d", data, "dataset directory")->required();
    auto* tg = train->add_subcommand("gan", "train the generator against the frozen classifier");
    add_common(tg, common);
    tg->add_option("--data,-d", data, "dataset directory")->required();
    tg->add_option("--classifier", classifier, "classifier checkpoint (overrides paths.classifier_checkpoint)");

    auto* ev = app.add_subcommand("evaluate", "score methods on the validation split");
    add_common(ev, common);
    ev->add_option("--data,-d", data, "dataset directory")->required();
    ev->add_option("--classifier", classifier, "classifier checkpoint");
    ev->add_option("--generator", generator, "single-condition generator checkpoint (coin)");
    ev->add_option("--singla", singla, "dual-condition generator checkpoint (singla)");
    ev->add_option("--methods", methods, "comma-separated: coin,singla,rise,scorecam,layercam");

    auto* ab = app.add_subcommand("ablate", "run the loss study and the architecture ladder");
    add_common(ab, common);
    ab->add_option("--data,-d", data, "dataset directory")->required();
    ab->add_option("--classifier", classifier, "classifier checkpoint (trained here when absent)");
    ab->add_option("--only", only, "loss or ladder");

    auto* fig = app.add_subcommand("figures", "render per-image panels from evaluation output");
    fig->add_option("--report,-r", report, "evaluation output directory")->required();
    fig->add_option("--out,-o", fig_out, "output directory")->required();

    auto* conf = app.add_subcommand("config", "configuration helpers");
    conf->require_subcommand(1);
    auto* conf_ref = conf->add_subcommand("reference", "print every field with its default and meaning");
    auto* conf_def = conf->add_subcommand("defaults", "print the default configuration as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_config;
    }

    try {
        if (*gen) return cmd_gen_data(common);
        if (*tc) return cmd_train_classifier(common, data);
        if (*tg) return cmd_train_gan(common, data, classifier);
        if (*ev) return cmd_evaluate(common, data, classifier, generator, singla, methods);
        if (*ab) return cmd_ablate(common, data, classifier, only);
        if (*fig) return cmd_figures(report, fig_out);
        if (*conf_ref) {
            std::cout << config_reference();
            return 0;
        }
        if (*conf_def) {
            std::cout << to_json(RunConfig{}).dump(2) << '\n';
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return exit_io;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return exit_numeric;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return exit_config;
}
