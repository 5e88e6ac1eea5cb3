#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "coin/errors.hpp"
#include "coin/image.hpp"
#include "coin/rng.hpp"

namespace coin {

struct AugmentConfig {
    double max_rotation_deg = 180.0;
    double scale_min = 0.8;
    double scale_max = 1.25;
    int grid_points = 4;                 // control points per side
    double max_displacement_frac = 0.1;  // of the image side

    void validate() const {
        require_config(max_rotation_deg >= 0.0, "augment.max_rotation_deg must be >= 0");
        require_config(scale_min > 0.0 && scale_min <= scale_max, "augment.scale_min must be in (0, scale_max]");
        require_config(grid_points >= 2, "augment.grid_points must be >= 2");
        require_config(max_displacement_frac >= 0.0 && max_displacement_frac < 0.5,
                       "augment.max_displacement_frac must be in [0, 0.5)");
    }
    friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct PhantomConfig {
    int image_size = 64;
    int n_slices = 400;
    double abnormal_fraction = 0.5;
    double blob_sigma = 3.0;
    double blob_radius = 6.0;
    double amplitude_min = 0.3;
    double amplitude_max = 0.5;
    int min_organ_area = 32;
    /// Organ semi-axes as a fraction of image_size.
    double organ_axis_min = 0.14;
    double organ_axis_max = 0.26;
    AugmentConfig augment;
    std::uint64_t seed = 7;

    /// Largest ellipse the organ sampler can produce, in pixels.
    [[nodiscard]] double max_organ_area() const {
        const double a = organ_axis_max * image_size;
        return std::numbers::pi * a * a;
    }

    void validate() const {
        require_config(image_size >= 16, "phantom.image_size must be >= 16");
        require_config(n_slices >= 0, "phantom.n_slices must be >= 0");
        require_config(abnormal_fraction >= 0.0 && abnormal_fraction <= 1.0,
                       "phantom.abnormal_fraction must be in [0,1]");
        require_config(blob_sigma > 0.0, "phantom.blob_sigma must be > 0");
        require_config(blob_radius >= blob_sigma, "phantom.blob_radius must be >= blob_sigma");
        require_config(amplitude_min > 0.0 && amplitude_min <= amplitude_max && amplitude_max <= 1.0,
                       "phantom.amplitude range must satisfy 0 < min <= max <= 1");
        require_config(min_organ_area >= 1, "phantom.min_organ_area must be >= 1");
        require_config(organ_axis_min > 0.0 && organ_axis_min <= organ_axis_max && organ_axis_max < 0.5,
                       "phantom.organ_axis range must satisfy 0 < min <= max < 0.5");
        require_config(min_organ_area <= image_size * image_size && min_organ_area < max_organ_area(),
                       "phantom.min_organ_area cannot fit in the image");
        augment.validate();
    }
    friend bool operator==(const PhantomConfig&, const PhantomConfig&) = default;
};

struct ScanSlice {
    std::string id;
    Image image;
    Mask organ_mask;
    Mask anomaly_mask;
    int label = 0;
    /// Ground-truth anomaly mask is known; only annotated slices enter IoU.
    bool annotated = true;
};

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::map<std::string, std::size_t> stratification_key;  // id -> anomaly area
};

struct Dataset {
    std::vector<ScanSlice> slices;
    DatasetSplit split;

    [[nodiscard]] const ScanSlice& by_id(const std::string& id) const {
        auto it = std::find_if(slices.begin(), slices.end(), [&](const ScanSlice& s) { return s.id == id; });
        if (it == slices.end()) throw ConfigError("unknown slice id '" + id + "'");
        return *it;
    }
    [[nodiscard]] std::vector<const ScanSlice*> subset(const std::vector<std::string>& ids) const {
        std::map<std::string, const ScanSlice*> index;
        for (const auto& s : slices) index[s.id] = &s;
        std::vector<const ScanSlice*> out;
        for (const auto& id : ids) {
            auto it = index.find(id);
            if (it == index.end()) throw ConfigError("unknown slice id '" + id + "'");
            out.push_back(it->second);
        }
        return out;
    }
};

// ---- phantom ------------------------------------------------------------

struct Phantom {
    Image image;
    Mask organ_mask;
};

/// Low-frequency background plus one filled, rotated elliptical organ.
inline Phantom generate_phantom_background(const PhantomConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int s = cfg.image_size;
    Rng rng(seed);

    // coarse 8x8 lattice, bilinear upsample, light fine-grain noise
    Image coarse(8, 8);
    for (auto& v : coarse.px) v = static_cast<float>(rng.uniform(0.15, 0.40));
    Image img = resize_bilinear(coarse, s, s);
    for (auto& v : img.px) v += static_cast<float>(0.015 * rng.normal());

    Mask organ(s, s);
    for (int attempt = 0;; ++attempt) {
        if (attempt == 1000) throw ConfigError("phantom.min_organ_area: no organ of sufficient area after 1000 draws");
        const double a = rng.uniform(cfg.organ_axis_min, cfg.organ_axis_max) * s;
        const double b = rng.uniform(cfg.organ_axis_min, cfg.organ_axis_max) * s;
        const double theta = rng.uniform(0.0, std::numbers::pi);
        const double margin = std::max(a, b) + 1.0;
        const double cy = rng.uniform(std::min(margin, s / 2.0), std::max(s - margin, s / 2.0));
        const double cx = rng.uniform(std::min(margin, s / 2.0), std::max(s - margin, s / 2.0));
        const double ct = std::cos(theta), st = std::sin(theta);
        std::fill(organ.px.begin(), organ.px.end(), 0);
        for (int r = 0; r < s; ++r)
            for (int c = 0; c < s; ++c) {
                const double dy = r - cy, dx = c - cx;
                const double u = (dx * ct + dy * st) / a;
                const double v = (-dx * st + dy * ct) / b;
                organ(r, c) = (u * u + v * v) <= 1.0;
            }
        if (area(organ) >= static_cast<std::size_t>(cfg.min_organ_area)) break;
    }
    const float offset = static_cast<float>(rng.uniform(0.18, 0.28));
    for (std::size_t i = 0; i < img.size(); ++i) {
        if (organ.px[i]) img.px[i] += offset;
        img.px[i] = quantize8(img.px[i]);
    }
    return {std::move(img), std::move(organ)};
}

/// amplitude * exp(-d^2 / (2 sigma^2)) inside `radius`, zero outside.
inline Image gaussian_blob(int height, int width, double center_r, double center_c, double sigma, double radius,
                           double amplitude) {
    require_config(sigma > 0.0, "gaussian_blob: sigma must be > 0");
    require_config(center_r >= 0 && center_r <= height - 1 && center_c >= 0 && center_c <= width - 1,
                   "gaussian_blob: center outside image");
    Image out(height, width);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            const double d2 = (r - center_r) * (r - center_r) + (c - center_c) * (c - center_c);
            if (d2 <= radius * radius)
                out(r, c) = static_cast<float>(amplitude * std::exp(-d2 / (2.0 * sigma * sigma)));
        }
    return out;
}

struct AugmentParams {
    double rotation_rad = 0.0;
    double scale = 1.0;
    int grid_points = 4;
    /// grid_points x grid_points (dy, dx) control displacements, pixels.
    std::vector<std::pair<double, double>> displacement;

    static AugmentParams identity(int grid_points = 4) {
        AugmentParams p;
        p.grid_points = grid_points;
        p.displacement.assign(static_cast<std::size_t>(grid_points) * grid_points, {0.0, 0.0});
        return p;
    }
};

inline AugmentParams sample_augment_params(const AugmentConfig& cfg, int image_size, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    AugmentParams p;
    const double maxrot = cfg.max_rotation_deg * std::numbers::pi / 180.0;
    p.rotation_rad = rng.uniform(-maxrot, maxrot);
    p.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
    p.grid_points = cfg.grid_points;
    const double dmax = cfg.max_displacement_frac * image_size;
    for (int i = 0; i < cfg.grid_points * cfg.grid_points; ++i) {
        const double dy = rng.uniform(-dmax, dmax);
        const double dx = rng.uniform(-dmax, dmax);
        p.displacement.emplace_back(dy, dx);
    }
    return p;
}

namespace detail {
/// Bilinear interpolation of the control lattice spread evenly over the image.
inline std::pair<double, double> displacement_at(const AugmentParams& p, int h, int w, int r, int c) {
    const int g = p.grid_points;
    const double gy = h > 1 ? static_cast<double>(r) * (g - 1) / (h - 1) : 0.0;
    const double gx = w > 1 ? static_cast<double>(c) * (g - 1) / (w - 1) : 0.0;
    const int y0 = std::min(static_cast<int>(gy), g - 2);
    const int x0 = std::min(static_cast<int>(gx), g - 2);
    const double fy = gy - y0, fx = gx - x0;
    auto at = [&](int y, int x) { return p.displacement[static_cast<std::size_t>(y) * g + x]; };
    auto mix = [&](double a, double b, double c2, double d) {
        return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c2 + fx * d);
    };
    const auto a = at(y0, x0), b = at(y0, x0 + 1), c2 = at(y0 + 1, x0), d = at(y0 + 1, x0 + 1);
    return {mix(a.first, b.first, c2.first, d.first), mix(a.second, b.second, c2.second, d.second)};
}
}  // namespace detail

/// Rotate and scale about the blob's intensity centroid, then warp by the
/// control-point displacement field; one backward map, bilinear resampling.
inline Image augment_blob(const Image& blob, const AugmentParams& p) {
    require_config(p.grid_points >= 2 &&
                       p.displacement.size() == static_cast<std::size_t>(p.grid_points) * p.grid_points,
                   "augment_blob: displacement lattice size mismatch");
    double mass = 0, cy = 0, cx = 0;
    for (int r = 0; r < blob.h; ++r)
        for (int c = 0; c < blob.w; ++c) {
            mass += blob(r, c);
            cy += r * static_cast<double>(blob(r, c));
            cx += c * static_cast<double>(blob(r, c));
        }
    if (mass <= 0) return blob;
    cy /= mass;
    cx /= mass;
    const double cs = std::cos(p.rotation_rad), sn = std::sin(p.rotation_rad);
    Image out(blob.h, blob.w);
    for (int r = 0; r < blob.h; ++r)
        for (int c = 0; c < blob.w; ++c) {
            auto [dy, dx] = detail::displacement_at(p, blob.h, blob.w, r, c);
            const double y = r - dy - cy;
            const double x = c - dx - cx;
            // inverse similarity: rotate by -theta, divide by scale
            const double sy = (-sn * x + cs * y) / p.scale + cy;
            const double sx = (cs * x + sn * y) / p.scale + cx;
            out(r, c) = std::clamp(static_cast<float>(sample_bilinear(blob, sy, sx)), 0.0f, 1.0f);
        }
    return out;
}

inline Image augment_blob(const Image& blob, const AugmentConfig& cfg, std::uint64_t seed) {
    return augment_blob(blob, sample_augment_params(cfg, blob.h, seed));
}

struct Injection {
    ScanSlice slice;
    int center_r = 0;
    int center_c = 0;
    double amplitude = 0;
};

/// Place one augmented blob inside the organ. The half-maximum region is the
/// anomaly mask and must lie inside the organ; placements that leave it are redrawn.
inline Injection inject_anomaly(const Image& image, const Mask& organ_mask, const PhantomConfig& cfg,
                                std::uint64_t seed, int max_retries = 64) {
    cfg.validate();
    require_same_shape(organ_mask, Mask(image.h, image.w), "inject_anomaly");
    std::vector<int> organ_px;
    for (int i = 0; i < static_cast<int>(organ_mask.size()); ++i)
        if (organ_mask.px[i]) organ_px.push_back(i);
    require_config(!organ_px.empty(), "inject_anomaly: organ mask is empty");

    Rng rng(seed);
    for (int attempt = 0; attempt < max_retries; ++attempt) {
        const int idx = organ_px[rng.index(organ_px.size())];
        const int cr = idx / image.w, cc = idx % image.w;
        const double amp = rng.uniform(cfg.amplitude_min, cfg.amplitude_max);
        Image blob = gaussian_blob(image.h, image.w, cr, cc, cfg.blob_sigma, cfg.blob_radius, amp);
        blob = augment_blob(blob, cfg.augment, rng.next());
        Mask anomaly(image.h, image.w);
        bool inside = true;
        for (std::size_t i = 0; i < blob.size(); ++i) {
            anomaly.px[i] = blob.px[i] > 0.5 * amp;
            if (anomaly.px[i] && !organ_mask.px[i]) inside = false;
        }
        if (!inside || area(anomaly) == 0) continue;
        Injection inj;
        inj.center_r = cr;
        inj.center_c = cc;
        inj.amplitude = amp;
        inj.slice.image = image;
        for (std::size_t i = 0; i < blob.size(); ++i)
            inj.slice.image.px[i] = quantize8(image.px[i] + blob.px[i]);
        inj.slice.organ_mask = organ_mask;
        inj.slice.anomaly_mask = std::move(anomaly);
        inj.slice.label = 1;
        return inj;
    }
    throw NumericError("inject_anomaly: no valid placement inside the organ after " + std::to_string(max_retries) +
                       " draws");
}

// ---- dataset ------------------------------------------------------------

inline std::string slice_id(int index) {
    std::ostringstream os;
    os << "slice_" << std::setw(5) << std::setfill('0') << index;
    return os.str();
}

/// 80/20 split stratified by anomaly area. Normal slices (area 0) come first in
/// shuffled order, abnormal ones follow sorted by area; one slice of every run
/// of five consecutive slices goes to validation.
inline DatasetSplit stratified_split(const std::vector<ScanSlice>& slices, std::uint64_t seed,
                                     double val_fraction = 0.2) {
    DatasetSplit split;
    std::vector<const ScanSlice*> normals, abnormals;
    for (const auto& s : slices) {
        split.stratification_key[s.id] = area(s.anomaly_mask);
        (area(s.anomaly_mask) == 0 ? normals : abnormals).push_back(&s);
    }
    Rng rng(seed);
    rng.shuffle(normals);
    std::stable_sort(abnormals.begin(), abnormals.end(), [&](const ScanSlice* a, const ScanSlice* b) {
        return split.stratification_key[a->id] < split.stratification_key[b->id];
    });
    std::vector<const ScanSlice*> order = normals;
    order.insert(order.end(), abnormals.begin(), abnormals.end());

    const std::size_t n = order.size();
    const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(n)));
    const std::size_t chunk = val_fraction > 0 ? static_cast<std::size_t>(std::lround(1.0 / val_fraction)) : n + 1;
    std::vector<bool> is_val(n, false);
    std::size_t taken = 0;
    for (std::size_t start = 0; start < n && taken < n_val; start += chunk, ++taken) {
        const std::size_t len = std::min(chunk, n - start);
        is_val[start + rng.index(len)] = true;
    }
    // leftover demand (fractions other than 1/k) is filled from the tail of each chunk
    for (std::size_t i = n; i-- > 0 && taken < n_val;)
        if (!is_val[i]) {
            is_val[i] = true;
            ++taken;
        }
    for (std::size_t i = 0; i < n; ++i) (is_val[i] ? split.val : split.train).push_back(order[i]->id);
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    return split;
}

/// One slice, a pure function of (config, index).
inline ScanSlice generate_slice(const PhantomConfig& cfg, int index, bool abnormal) {
    const std::uint64_t s = derive_seed(derive_seed(cfg.seed, "phantom"), static_cast<std::uint64_t>(index));
    // a too-small organ can reject every placement; redraw the background a few times
    for (std::uint64_t redraw = 0;; ++redraw) {
        auto bg = generate_phantom_background(cfg, derive_seed(s, redraw));
        if (!abnormal) {
            ScanSlice sl;
            sl.id = slice_id(index);
            sl.image = std::move(bg.image);
            sl.organ_mask = std::move(bg.organ_mask);
            sl.anomaly_mask = Mask(cfg.image_size, cfg.image_size);
            sl.label = 0;
            return sl;
        }
        try {
            auto inj = inject_anomaly(bg.image, bg.organ_mask, cfg, derive_seed(s, "anomaly") + redraw);
            inj.slice.id = slice_id(index);
            return std::move(inj.slice);
        } catch (const NumericError&) {
            if (redraw >= 16) throw;
        }
    }
}

inline Dataset build_dataset(const PhantomConfig& cfg) {
    cfg.validate();
    const int n = cfg.n_slices;
    const int n_abn = static_cast<int>(std::lround(cfg.abnormal_fraction * n));
    std::vector<int> labels(n, 0);
    std::fill(labels.begin(), labels.begin() + n_abn, 1);
    Rng rng(derive_seed(cfg.seed, "labels"));
    rng.shuffle(labels);
    Dataset ds;
    ds.slices.reserve(n);
    for (int i = 0; i < n; ++i) ds.slices.push_back(generate_slice(cfg, i, labels[i] == 1));
    ds.split = stratified_split(ds.slices, derive_seed(cfg.seed, "split"));
    return ds;
}

// ---- on-disk layout -----------------------------------------------------

inline void write_split_json(const std::filesystem::path& path, const DatasetSplit& split) {
    nlohmann::ordered_json j;
    j["train"] = split.train;
    j["val"] = split.val;
    nlohmann::ordered_json key = nlohmann::ordered_json::object();
    for (const auto& [id, a] : split.stratification_key) key[id] = a;
    j["stratification_key"] = key;
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << j.dump(2) << '\n';
    if (!f) throw IoError("cannot write " + path.string());
}

inline DatasetSplit read_split_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path.string());
    DatasetSplit s;
    try {
        auto j = nlohmann::json::parse(f);
        s.train = j.at("train").get<std::vector<std::string>>();
        s.val = j.at("val").get<std::vector<std::string>>();
        if (j.contains("stratification_key"))
            for (auto& [k, v] : j["stratification_key"].items()) s.stratification_key[k] = v.get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed " + path.string() + ": " + e.what());
    }
    return s;
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    namespace fs = std::filesystem;
    std::error_code ec;
    for (const char* sub : {"images", "organ_masks", "anomaly_masks"}) {
        fs::create_directories(dir / sub, ec);
        if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
    }
    std::ofstream labels(dir / "labels.csv");
    if (!labels) throw IoError("cannot write " + (dir / "labels.csv").string());
    labels << "id,label\n";
    for (const auto& s : ds.slices) {
        write_image(dir / "images" / (s.id + ".png"), s.image);
        write_mask(dir / "organ_masks" / (s.id + ".png"), s.organ_mask);
        if (s.annotated) write_mask(dir / "anomaly_masks" / (s.id + ".png"), s.anomaly_mask);
        labels << s.id << ',' << s.label << '\n';
    }
    if (!labels) throw IoError("cannot write " + (dir / "labels.csv").string());
    write_split_json(dir / "split.json", ds.split);
}

inline std::map<std::string, int> read_labels_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path.string());
    std::map<std::string, int> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || (lineno == 1 && line.rfind("id,", 0) == 0)) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected id,label");
        const std::string id = line.substr(0, comma);
        const std::string lab = line.substr(comma + 1);
        if (lab != "0" && lab != "1")
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": label must be 0 or 1, got '" + lab + "'");
        out[id] = lab == "1";
    }
    return out;
}

struct FolderOptions {
    int image_size = 64;
    bool with_masks = true;
};

/// Ingest `images/*.png` with `labels.csv`; `anomaly_masks/` and
/// `organ_masks/` are optional per image. Slices without an anomaly mask are
/// kept for training and marked not annotated.
inline std::vector<ScanSlice> load_image_folder(const std::filesystem::path& dir, const FolderOptions& opt) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir / "images")) throw IoError("missing directory " + (dir / "images").string());
    const auto labels = read_labels_csv(dir / "labels.csv");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir / "images"))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());

    std::vector<ScanSlice> out;
    const int s = opt.image_size;
    for (const auto& p : files) {
        ScanSlice sl;
        sl.id = p.stem().string();
        auto it = labels.find(sl.id);
        if (it == labels.end()) throw ConfigError("labels.csv has no row for id '" + sl.id + "'");
        sl.label = it->second;
        sl.image = resize_bilinear(read_image(p), s, s);
        for (auto& v : sl.image.px) v = std::clamp(v, 0.0f, 1.0f);

        const fs::path organ = dir / "organ_masks" / p.filename();
        sl.organ_mask = fs::exists(organ) ? resize_mask(read_mask(organ), s, s) : Mask(s, s, 1);

        const fs::path anom = dir / "anomaly_masks" / p.filename();
        if (opt.with_masks && fs::exists(anom)) {
            sl.anomaly_mask = resize_mask(read_mask(anom), s, s);
            const bool nonempty = area(sl.anomaly_mask) > 0;
            if (nonempty != (sl.label == 1))
                throw ConfigError("inconsistent annotation for id '" + sl.id + "': label " + std::to_string(sl.label) +
                                  (nonempty ? " with nonempty" : " with empty") + " anomaly mask");
            sl.annotated = true;
        } else {
            sl.anomaly_mask = Mask(s, s);
            sl.annotated = false;
        }
        out.push_back(std::move(sl));
    }
    return out;
}

/// Read a directory written by save_dataset (or a compatible folder). A
/// missing split.json gets a fresh stratified split.
inline Dataset load_dataset(const std::filesystem::path& dir, int image_size, std::uint64_t seed = 0) {
    Dataset ds;
    ds.slices = load_image_folder(dir, {image_size, true});
    if (std::filesystem::exists(dir / "split.json")) {
        ds.split = read_split_json(dir / "split.json");
        std::set<std::string> ids;
        for (const auto& s : ds.slices) ids.insert(s.id);
        for (const auto* list : {&ds.split.train, &ds.split.val})
            for (const auto& id : *list)
                if (!ids.count(id)) throw IoError("split.json names unknown id '" + id + "'");
    } else {
        ds.split = stratified_split(ds.slices, derive_seed(seed, "split"));
    }
    return ds;
}

}  // namespace coin
