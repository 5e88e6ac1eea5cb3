#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "coin/errors.hpp"
#include "coin/image.hpp"

namespace coin {

/// |S & Sc| / |S | Sc|; two empty masks agree perfectly (1).
inline double iou(const Mask& s, const Mask& sc) {
    require_same_shape(s, sc, "iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const bool a = s.px[i] != 0, b = sc.px[i] != 0;
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Fraction of pairs with |p_x - p_cf| > tau.
inline double cv_score(const std::vector<std::pair<double, double>>& pairs, double tau = 0.8) {
    require_config(!pairs.empty(), "cv_score: empty list");
    std::size_t flipped = 0;
    for (const auto& [px, pcf] : pairs) flipped += std::abs(px - pcf) > tau;
    return static_cast<double>(flipped) / static_cast<double>(pairs.size());
}

/// Principal square root of a symmetric PSD matrix. Eigenvalues in
/// [-1e-6, 0) are treated as zero; anything more negative is rejected.
inline Eigen::MatrixXd psd_matrix_sqrt(const Eigen::MatrixXd& m, double neg_tol = 1e-6) {
    require_config(m.rows() == m.cols(), "psd_matrix_sqrt: matrix is not square");
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw NumericError("psd_matrix_sqrt: eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < -neg_tol)
            throw NumericError("psd_matrix_sqrt: eigenvalue " + std::to_string(ev(i)) + " below tolerance");
        ev(i) = std::sqrt(std::max(ev(i), 0.0));
    }
    const Eigen::MatrixXd& v = es.eigenvectors();
    Eigen::MatrixXd r = v * ev.asDiagonal() * v.transpose();
    return 0.5 * (r + r.transpose());
}

namespace detail {
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> gaussian_fit(const std::vector<std::vector<double>>& f) {
    const auto n = static_cast<Eigen::Index>(f.size());
    const auto d = static_cast<Eigen::Index>(f.front().size());
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<Eigen::Index>(f[i].size()) != d) throw ShapeError("fid: ragged feature set");
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = f[i][j];
    }
    Eigen::VectorXd mu = x.colwise().mean();
    Eigen::MatrixXd c = x.rowwise() - mu.transpose();
    Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(n - 1);
    return {mu, cov};
}
}  // namespace detail

/// Frechet distance between Gaussian fits (sample mean, unbiased covariance).
/// Cross term uses sqrt(S1^1/2 S2 S1^1/2), whose trace equals that of (S1 S2)^1/2.
inline double fid(const std::vector<std::vector<double>>& real, const std::vector<std::vector<double>>& gen) {
    require_config(real.size() >= 2 && gen.size() >= 2, "fid: need at least 2 vectors per set");
    if (real.front().size() != gen.front().size()) throw ShapeError("fid: feature dimensions differ");
    auto [m1, s1] = detail::gaussian_fit(real);
    auto [m2, s2] = detail::gaussian_fit(gen);
    const Eigen::MatrixXd r1 = psd_matrix_sqrt(s1);
    const Eigen::MatrixXd cross = psd_matrix_sqrt(r1 * s2 * r1, 1e-6 * std::max(1.0, s1.norm() * s2.norm()));
    const double v = (m1 - m2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * cross.trace();
    return std::max(v, 0.0);
}

struct PerImageRecord {
    std::string id;
    double iou = 0;
    std::optional<double> p_x, p_cf;
};

struct MetricsReport {
    std::string method;
    std::optional<double> fid;
    std::optional<double> cv;
    double iou_mean = 0;
    double best_threshold = 0;
    std::size_t n_images = 0;
    std::vector<PerImageRecord> per_image;
    std::vector<std::pair<double, double>> sweep;  // (threshold, mean IoU)
};

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["method"] = r.method;
    j["fid"] = r.fid ? nlohmann::ordered_json(*r.fid) : nlohmann::ordered_json(nullptr);
    j["cv"] = r.cv ? nlohmann::ordered_json(*r.cv) : nlohmann::ordered_json(nullptr);
    j["iou_mean"] = r.iou_mean;
    j["best_threshold"] = r.best_threshold;
    j["n_images"] = r.n_images;
    auto& pi = j["per_image"] = nlohmann::ordered_json::array();
    for (const auto& p : r.per_image) {
        nlohmann::ordered_json e;
        e["id"] = p.id;
        e["iou"] = p.iou;
        if (p.p_x) e["p_x"] = *p.p_x;
        if (p.p_cf) e["p_cf"] = *p.p_cf;
        pi.push_back(e);
    }
    return j;
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
    MetricsReport r;
    try {
        r.method = j.at("method").get<std::string>();
        if (!j.at("fid").is_null()) r.fid = j["fid"].get<double>();
        if (!j.at("cv").is_null()) r.cv = j["cv"].get<double>();
        r.iou_mean = j.at("iou_mean").get<double>();
        r.best_threshold = j.at("best_threshold").get<double>();
        r.n_images = j.at("n_images").get<std::size_t>();
        for (const auto& e : j.value("per_image", nlohmann::json::array())) {
            PerImageRecord p;
            p.id = e.at("id").get<std::string>();
            p.iou = e.at("iou").get<double>();
            if (e.contains("p_x")) p.p_x = e["p_x"].get<double>();
            if (e.contains("p_cf")) p.p_cf = e["p_cf"].get<double>();
            r.per_image.push_back(p);
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed metrics report: ") + e.what());
    }
    return r;
}

inline std::string fmt_opt(const std::optional<double>& v, int prec = 4) {
    if (!v) return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << *v;
    return os.str();
}

/// method,fid,cv,iou_mean,best_threshold,n_images
inline std::string metrics_csv_header() { return "method,fid,cv,iou_mean,best_threshold,n_images"; }

inline std::string metrics_csv_row(const MetricsReport& r) {
    std::ostringstream os;
    os << r.method << ',' << fmt_opt(r.fid, 6) << ',' << fmt_opt(r.cv, 6) << ',' << std::fixed << std::setprecision(6)
       << r.iou_mean << ',' << std::setprecision(2) << r.best_threshold << ',' << r.n_images;
    return os.str();
}

inline void write_metrics(const std::filesystem::path& dir, const MetricsReport& r) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    {
        std::ofstream f(dir / "metrics.json");
        if (!f) throw IoError("cannot write " + (dir / "metrics.json").string());
        f << to_json(r).dump(2) << '\n';
    }
    {
        std::ofstream f(dir / "metrics.csv");
        if (!f) throw IoError("cannot write " + (dir / "metrics.csv").string());
        f << metrics_csv_header() << '\n' << metrics_csv_row(r) << '\n';
    }
    std::ofstream f(dir / "sweep.csv");
    if (!f) throw IoError("cannot write " + (dir / "sweep.csv").string());
    f << "threshold,mean_iou\n" << std::setprecision(9);
    for (const auto& [t, v] : r.sweep) f << t << ',' << v << '\n';
}

/// Fixed-width text rendering of a comparison table.
inline std::string render_table(const std::vector<MetricsReport>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(14) << "method" << std::right << std::setw(10) << "FID" << std::setw(8) << "CV"
       << std::setw(8) << "IoU" << std::setw(16) << "best_threshold" << '\n';
    for (const auto& r : rows) {
        os << std::left << std::setw(14) << r.method << std::right << std::setw(10) << fmt_opt(r.fid)
           << std::setw(8) << fmt_opt(r.cv, 3) << std::setw(8) << std::fixed << std::setprecision(3) << r.iou_mean
           << std::setw(16) << std::setprecision(2) << r.best_threshold << '\n';
    }
    return os.str();
}

}  // namespace coin
