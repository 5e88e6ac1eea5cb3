#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coin/baselines.hpp"
#include "coin/data.hpp"
#include "coin/errors.hpp"
#include "coin/explain.hpp"
#include "coin/losses.hpp"
#include "coin/models.hpp"
#include "coin/training.hpp"

namespace coin {

using Json = nlohmann::ordered_json;

struct ExplainSettings {
    int morph_kernel = 3;
    bool keep_largest = true;
    int grid_size = 101;
    friend bool operator==(const ExplainSettings&, const ExplainSettings&) = default;
};

struct EvalSettings {
    double tau = 0.8;
    std::vector<std::string> methods{"coin", "rise", "scorecam", "layercam"};
    friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

struct AblateSettings {
    bool loss_study = true;
    bool ladder = true;
    friend bool operator==(const AblateSettings&, const AblateSettings&) = default;
};

struct PathSettings {
    std::string classifier_checkpoint;
    std::string generator_checkpoint;
    std::string singla_checkpoint;
    friend bool operator==(const PathSettings&, const PathSettings&) = default;
};

/// Everything a run reads. Stage seeds are derived from `seed`.
struct RunConfig {
    std::uint64_t seed = 7;
    PhantomConfig phantom;
    ClassifierSpec classifier;
    GeneratorSpec generator;
    DiscriminatorSpec discriminator;
    losses::LossWeights losses;
    TrainConfig train;
    GanOptions gan;
    ExplainSettings explain;
    RiseConfig rise;
    CamConfig cam;
    EvalSettings eval;
    AblateSettings ablate;
    PathSettings paths;

    /// Copy with every stage seed derived from the root seed and the image
    /// size propagated to all networks.
    [[nodiscard]] RunConfig resolved() const {
        RunConfig r = *this;
        r.phantom.seed = derive_seed(seed, "data");
        r.train.seed = derive_seed(seed, "train");
        r.rise.seed = derive_seed(seed, "rise");
        r.classifier.input_size = phantom.image_size;
        r.generator.input_size = phantom.image_size;
        r.discriminator.input_size = phantom.image_size;
        r.discriminator.conditional = generator.n_conditions == 2;
        return r;
    }

    void validate() const {
        const RunConfig r = resolved();
        r.phantom.validate();
        r.classifier.validate();
        r.generator.validate();
        r.discriminator.validate();
        r.losses.validate();
        r.train.validate();
        r.rise.validate();
        require_config(explain.morph_kernel >= 1 && explain.morph_kernel % 2 == 1,
                       "explain.morph_kernel must be odd and >= 1");
        require_config(explain.grid_size >= 1, "explain.grid_size must be >= 1");
        require_config(eval.tau >= 0 && eval.tau <= 1, "eval.tau must be in [0,1]");
        (void)detail::resolve_layer(r.classifier, cam.target_layer);
        for (const auto& m : eval.methods)
            require_config(m == "coin" || m == "singla" || m == "rise" || m == "scorecam" || m == "layercam",
                           "eval.methods: unknown method '" + m + "'");
    }
    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// ---- reading ----------------------------------------------------------------

namespace detail {

/// Walks one JSON object, remembers consumed keys and rejects leftovers.
class JsonReader {
public:
    JsonReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where("") + " must be an object");
    }

    template <typename V>
    void get(const char* key, V& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const auto& v = j_.at(key);
        try {
            if constexpr (std::is_same_v<V, bool>) {
                if (!v.is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<V>) {
                if (!v.is_number_integer()) throw ConfigError("");
                if constexpr (std::is_unsigned_v<V>) {
                    if (v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError("");
                }
            } else if constexpr (std::is_floating_point_v<V>) {
                if (!v.is_number()) throw ConfigError("");
            } else if constexpr (std::is_same_v<V, std::string>) {
                if (!v.is_string()) throw ConfigError("");
            }
            out = v.get<V>();
        } catch (const std::exception&) {
            throw ConfigError(where(key) + ": wrong type (" + std::string(v.type_name()) + ")");
        }
    }

    JsonReader sub(const char* key) {
        seen_.insert(key);
        static const nlohmann::json empty = nlohmann::json::object();
        return JsonReader(j_.contains(key) ? j_.at(key) : empty, where(key));
    }

    void finish() const {
        for (const auto& [k, _] : j_.items())
            if (!seen_.count(k)) throw ConfigError(where(k) + ": unknown field");
    }

    [[nodiscard]] std::string where(const std::string& key) const {
        if (path_.empty()) return key;
        return key.empty() ? path_ : path_ + "." + key;
    }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void read(JsonReader r, AugmentConfig& c) {
    r.get("max_rotation_deg", c.max_rotation_deg);
    r.get("scale_min", c.scale_min);
    r.get("scale_max", c.scale_max);
    r.get("grid_points", c.grid_points);
    r.get("max_displacement_frac", c.max_displacement_frac);
    r.finish();
}

inline void read(JsonReader r, PhantomConfig& c) {
    r.get("image_size", c.image_size);
    r.get("n_slices", c.n_slices);
    r.get("abnormal_fraction", c.abnormal_fraction);
    r.get("blob_sigma", c.blob_sigma);
    r.get("blob_radius", c.blob_radius);
    r.get("amplitude_min", c.amplitude_min);
    r.get("amplitude_max", c.amplitude_max);
    r.get("min_organ_area", c.min_organ_area);
    r.get("organ_axis_min", c.organ_axis_min);
    r.get("organ_axis_max", c.organ_axis_max);
    read(r.sub("augment"), c.augment);
    r.finish();
}

inline void read(JsonReader r, ClassifierSpec& c) {
    r.get("input_size", c.input_size);
    r.get("base_channels", c.base_channels);
    r.get("depth", c.depth);
    r.get("threshold_t", c.threshold_t);
    r.finish();
}

inline void read(JsonReader r, GeneratorSpec& c) {
    r.get("input_size", c.input_size);
    r.get("n_skip", c.n_skip);
    r.get("perturbation_mode", c.perturbation_mode);
    r.get("n_conditions", c.n_conditions);
    r.get("depth", c.depth);
    r.get("base_channels", c.base_channels);
    std::string fusion = c.fusion == SkipFusion::Concat ? "concat" : "add";
    r.get("fusion", fusion);
    if (fusion != "concat" && fusion != "add") throw ConfigError(r.where("fusion") + ": expected concat or add");
    c.fusion = fusion == "concat" ? SkipFusion::Concat : SkipFusion::Add;
    r.get("zero_init_output", c.zero_init_output);
    r.finish();
}

inline void read(JsonReader r, DiscriminatorSpec& c) {
    r.get("input_size", c.input_size);
    r.get("depth", c.depth);
    r.get("base_channels", c.base_channels);
    r.get("conditional", c.conditional);
    r.get("spectral_norm_iters", c.spectral_norm_iters);
    r.finish();
}

inline void read(JsonReader r, losses::LossWeights& c) {
    r.get("lambda_gan", c.lambda_gan);
    r.get("lambda_f", c.lambda_f);
    r.get("lambda_idt", c.lambda_idt);
    r.get("lambda_tv", c.lambda_tv);
    r.finish();
}

inline void read(JsonReader r, TrainConfig& c) {
    r.get("batch_size", c.batch_size);
    r.get("adam_alpha", c.adam_alpha);
    r.get("classifier_alpha", c.classifier_alpha);
    r.get("adam_beta1", c.adam_beta1);
    r.get("adam_beta2", c.adam_beta2);
    r.get("classifier_epochs", c.classifier_epochs);
    r.get("gan_steps", c.gan_steps);
    r.get("d_updates_per_g", c.d_updates_per_g);
    r.get("checkpoint_every", c.checkpoint_every);
    r.get("log_every", c.log_every);
    r.finish();
}

inline void read(JsonReader r, RunConfig& c) {
    r.get("seed", c.seed);
    read(r.sub("phantom"), c.phantom);
    read(r.sub("classifier"), c.classifier);
    read(r.sub("generator"), c.generator);
    read(r.sub("discriminator"), c.discriminator);
    read(r.sub("losses"), c.losses);
    read(r.sub("train"), c.train);
    {
        auto g = r.sub("gan");
        g.get("use_masks", c.gan.use_masks);
        g.finish();
    }
    {
        auto e = r.sub("explain");
        e.get("morph_kernel", c.explain.morph_kernel);
        e.get("keep_largest", c.explain.keep_largest);
        e.get("grid_size", c.explain.grid_size);
        e.finish();
    }
    {
        auto s = r.sub("rise");
        s.get("n_masks", c.rise.n_masks);
        s.get("cell_grid", c.rise.cell_grid);
        s.get("keep_prob", c.rise.keep_prob);
        s.get("batch", c.rise.batch);
        s.finish();
    }
    {
        auto s = r.sub("cam");
        s.get("target_layer", c.cam.target_layer);
        s.finish();
    }
    {
        auto s = r.sub("eval");
        s.get("tau", c.eval.tau);
        s.get("methods", c.eval.methods);
        s.finish();
    }
    {
        auto s = r.sub("ablate");
        s.get("loss_study", c.ablate.loss_study);
        s.get("ladder", c.ablate.ladder);
        s.finish();
    }
    {
        auto s = r.sub("paths");
        s.get("classifier_checkpoint", c.paths.classifier_checkpoint);
        s.get("generator_checkpoint", c.paths.generator_checkpoint);
        s.get("singla_checkpoint", c.paths.singla_checkpoint);
        s.finish();
    }
    r.finish();
}

}  // namespace detail

// ---- writing ----------------------------------------------------------------

inline Json to_json(const AugmentConfig& c) {
    return {{"max_rotation_deg", c.max_rotation_deg},
            {"scale_min", c.scale_min},
            {"scale_max", c.scale_max},
            {"grid_points", c.grid_points},
            {"max_displacement_frac", c.max_displacement_frac}};
}

inline Json to_json(const PhantomConfig& c) {
    return {{"image_size", c.image_size},         {"n_slices", c.n_slices},
            {"abnormal_fraction", c.abnormal_fraction}, {"blob_sigma", c.blob_sigma},
            {"blob_radius", c.blob_radius},       {"amplitude_min", c.amplitude_min},
            {"amplitude_max", c.amplitude_max},   {"min_organ_area", c.min_organ_area},
            {"organ_axis_min", c.organ_axis_min}, {"organ_axis_max", c.organ_axis_max},
            {"augment", to_json(c.augment)}};
}

inline Json to_json(const ClassifierSpec& c) {
    return {{"input_size", c.input_size},
            {"base_channels", c.base_channels},
            {"depth", c.depth},
            {"threshold_t", c.threshold_t}};
}

inline Json to_json(const GeneratorSpec& c) {
    return {{"input_size", c.input_size},
            {"n_skip", c.n_skip},
            {"perturbation_mode", c.perturbation_mode},
            {"n_conditions", c.n_conditions},
            {"depth", c.depth},
            {"base_channels", c.base_channels},
            {"fusion", c.fusion == SkipFusion::Concat ? "concat" : "add"},
            {"zero_init_output", c.zero_init_output}};
}

inline Json to_json(const DiscriminatorSpec& c) {
    return {{"input_size", c.input_size},
            {"depth", c.depth},
            {"base_channels", c.base_channels},
            {"conditional", c.conditional},
            {"spectral_norm_iters", c.spectral_norm_iters}};
}

inline Json to_json(const losses::LossWeights& c) {
    return {{"lambda_gan", c.lambda_gan},
            {"lambda_f", c.lambda_f},
            {"lambda_idt", c.lambda_idt},
            {"lambda_tv", c.lambda_tv}};
}

inline Json to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size},
            {"adam_alpha", c.adam_alpha},
            {"classifier_alpha", c.classifier_alpha},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"classifier_epochs", c.classifier_epochs},
            {"gan_steps", c.gan_steps},
            {"d_updates_per_g", c.d_updates_per_g},
            {"checkpoint_every", c.checkpoint_every},
            {"log_every", c.log_every}};
}

inline Json to_json(const RunConfig& c) {
    Json j;
    j["seed"] = c.seed;
    j["phantom"] = to_json(c.phantom);
    j["classifier"] = to_json(c.classifier);
    j["generator"] = to_json(c.generator);
    j["discriminator"] = to_json(c.discriminator);
    j["losses"] = to_json(c.losses);
    j["train"] = to_json(c.train);
    j["gan"] = {{"use_masks", c.gan.use_masks}};
    j["explain"] = {{"morph_kernel", c.explain.morph_kernel},
                    {"keep_largest", c.explain.keep_largest},
                    {"grid_size", c.explain.grid_size}};
    j["rise"] = {{"n_masks", c.rise.n_masks},
                 {"cell_grid", c.rise.cell_grid},
                 {"keep_prob", c.rise.keep_prob},
                 {"batch", c.rise.batch}};
    j["cam"] = {{"target_layer", c.cam.target_layer}};
    j["eval"] = {{"tau", c.eval.tau}, {"methods", c.eval.methods}};
    j["ablate"] = {{"loss_study", c.ablate.loss_study}, {"ladder", c.ablate.ladder}};
    j["paths"] = {{"classifier_checkpoint", c.paths.classifier_checkpoint},
                  {"generator_checkpoint", c.paths.generator_checkpoint},
                  {"singla_checkpoint", c.paths.singla_checkpoint}};
    return j;
}

/// Overlay `j` on the defaults. Unknown or mistyped fields are ConfigErrors
/// naming the dotted field path.
inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    detail::read(detail::JsonReader(j, ""), c);
    c.validate();
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

/// Writes the effective configuration (defaults applied).
inline void write_effective_config(const std::filesystem::path& path, const RunConfig& c) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << to_json(c).dump(2) << '\n';
    if (!f) throw IoError("cannot write " + path.string());
}

struct FieldDoc {
    const char* path;
    const char* text;
};

inline const std::vector<FieldDoc>& field_docs() {
    static const std::vector<FieldDoc> docs{
        {"seed", "root seed; every stage seed is derived from it and the stage name"},
        {"phantom.image_size", "pixels per side of generated and ingested images"},
        {"phantom.n_slices", "number of generated slices"},
        {"phantom.abnormal_fraction", "fraction of slices carrying an anomaly"},
        {"phantom.blob_sigma", "Gaussian blob sigma, pixels"},
        {"phantom.blob_radius", "hard cutoff radius of the blob, pixels"},
        {"phantom.amplitude_min", "lowest blob peak intensity"},
        {"phantom.amplitude_max", "highest blob peak intensity"},
        {"phantom.min_organ_area", "minimum organ mask area, pixels"},
        {"phantom.organ_axis_min", "smallest organ semi-axis, fraction of image_size"},
        {"phantom.organ_axis_max", "largest organ semi-axis, fraction of image_size"},
        {"phantom.augment.max_rotation_deg", "blob rotation drawn from [-v, v] degrees"},
        {"phantom.augment.scale_min", "lower bound of the isotropic blob scale"},
        {"phantom.augment.scale_max", "upper bound of the isotropic blob scale"},
        {"phantom.augment.grid_points", "control points per side of the distortion lattice"},
        {"phantom.augment.max_displacement_frac", "largest control-point shift, fraction of image side"},
        {"classifier.input_size", "overridden by phantom.image_size"},
        {"classifier.base_channels", "stem width; stage i has base << min(i+1, 3) channels"},
        {"classifier.depth", "stride-2 stages, each followed by a residual block"},
        {"classifier.threshold_t", "probability at or above which an image is abnormal"},
        {"generator.input_size", "overridden by phantom.image_size"},
        {"generator.n_skip", "skip connections, deepest first, 0..depth"},
        {"generator.perturbation_mode", "decoder emits a residual added to the input"},
        {"generator.n_conditions", "1 = inpainting only, 2 = dual condition 1-f(X) / f(X)"},
        {"generator.depth", "encoder/decoder stages"},
        {"generator.base_channels", "stem width"},
        {"generator.fusion", "skip fusion, concat or add"},
        {"generator.zero_init_output", "start from a zero output layer"},
        {"discriminator.input_size", "overridden by phantom.image_size"},
        {"discriminator.depth", "stride-2 stages"},
        {"discriminator.base_channels", "stem width"},
        {"discriminator.conditional", "overridden: set iff generator.n_conditions == 2"},
        {"discriminator.spectral_norm_iters", "power iterations per training forward pass"},
        {"losses.lambda_gan", "weight of the adversarial term"},
        {"losses.lambda_f", "weight of the classifier consistency term"},
        {"losses.lambda_idt", "weight of the self-consistency term"},
        {"losses.lambda_tv", "weight of the total-variation term on |X - X_cf|"},
        {"train.batch_size", "images per batch"},
        {"train.adam_alpha", "Adam step size for the GAN"},
        {"train.classifier_alpha", "Adam step size for the classifier"},
        {"train.adam_beta1", "Adam first-moment decay"},
        {"train.adam_beta2", "Adam second-moment decay"},
        {"train.classifier_epochs", "classifier epochs"},
        {"train.gan_steps", "generator updates"},
        {"train.d_updates_per_g", "discriminator updates per generator update"},
        {"train.checkpoint_every", "write a GAN checkpoint every n steps (0 = only at the end)"},
        {"train.log_every", "progress line every n steps (0 = silent)"},
        {"gan.use_masks", "self-consistency uses organ/background masked reconstruction"},
        {"explain.morph_kernel", "side of the square structuring element"},
        {"explain.keep_largest", "keep only the largest 4-connected component"},
        {"explain.grid_size", "evenly spaced thresholds in [0, 1] for the sweep"},
        {"rise.n_masks", "random masks per image"},
        {"rise.cell_grid", "mask cells per side"},
        {"rise.keep_prob", "probability that a cell is kept"},
        {"rise.batch", "masked images per classifier call"},
        {"cam.target_layer", "classifier stage for Score-CAM / Layer-CAM (-1 = deepest)"},
        {"eval.tau", "probability change counted as a flip"},
        {"eval.methods", "any of coin, singla, rise, scorecam, layercam"},
        {"ablate.loss_study", "run the loss-term ablation rows"},
        {"ablate.ladder", "run the architecture ladder rows"},
        {"paths.classifier_checkpoint", "classifier weights for the gan/evaluate stages"},
        {"paths.generator_checkpoint", "single-condition generator weights for the coin method"},
        {"paths.singla_checkpoint", "dual-condition generator weights for the singla method"},
    };
    return docs;
}

/// Markdown table: field, default, description.
inline std::string config_reference() {
    const Json defaults = to_json(RunConfig{});
    std::ostringstream os;
    os << "| field | default | description |\n|---|---|---|\n";
    for (const auto& d : field_docs()) {
        const Json* node = &defaults;
        std::string p = d.path;
        std::size_t pos = 0;
        while (true) {
            const auto dot = p.find('.', pos);
            node = &node->at(p.substr(pos, dot - pos));
            if (dot == std::string::npos) break;
            pos = dot + 1;
        }
        os << "| `" << d.path << "` | `" << node->dump() << "` | " << d.text << " |\n";
    }
    return os.str();
}

}  // namespace coin
