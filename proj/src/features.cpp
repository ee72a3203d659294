#include "atlas_istn/features.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "atlas_istn/error.hpp"

namespace atlas_istn::features {

namespace fs = std::filesystem;

std::string to_string(Source s) {
    switch (s) {
        case Source::ExpertGt: return "expert_gt";
        case Source::SegPrediction: return "seg_prediction";
        case Source::AtlasWarped: return "atlas_warped";
    }
    return "seg_prediction";
}

Source source_from_string(const std::string& s) {
    if (s == "expert_gt") return Source::ExpertGt;
    if (s == "seg_prediction") return Source::SegPrediction;
    if (s == "atlas_warped") return Source::AtlasWarped;
    throw InvalidArgument("unknown feature source '" + s + "'");
}

AreaCounts area_counts(const LabelMap& labels) {
    AreaCounts counts{};
    for (auto v : labels.values()) {
        if (v >= kNumClasses) throw InvalidArgument("area_counts: unknown class id " + std::to_string(v));
        ++counts[v];
    }
    return counts;
}

const std::array<std::pair<int, int>, kNumFeatures>& feature_pairs() {
    static const auto pairs = [] {
        std::array<std::pair<int, int>, kNumFeatures> p{};
        int k = 0;
        for (int a = 1; a < kNumClasses; ++a)
            for (int b = a + 1; b < kNumClasses; ++b) p[k++] = {a, b};
        return p;
    }();
    return pairs;
}

const std::array<std::string, kNumFeatures>& feature_names() {
    static const auto names = [] {
        std::array<std::string, kNumFeatures> n;
        for (int k = 0; k < kNumFeatures; ++k) {
            const auto [a, b] = feature_pairs()[k];
            n[k] = std::string("r_") + kClassNames[a] + "_" + kClassNames[b];
        }
        return n;
    }();
    return names;
}

RatioFeatures ratio_features(const AreaCounts& areas, Source source, bool wh_excludes_chambers, double eps) {
    std::array<double, kNumClasses> a{};
    std::int64_t fg = 0;
    for (int c = 1; c < kNumClasses; ++c) {
        if (areas[c] < 0) throw InvalidArgument("ratio_features: negative area");
        a[c] = static_cast<double>(areas[c]);
        fg += areas[c];
    }
    if (fg == 0) throw InvalidArgument("empty segmentation");
    if (!wh_excludes_chambers) a[5] += a[1] + a[2] + a[3] + a[4];

    RatioFeatures out;
    out.source = source;
    for (int c = 1; c < kNumClasses; ++c) {
        if (a[c] <= 0) {
            a[c] = eps;
            out.eps_floored = true;
        }
    }
    for (int k = 0; k < kNumFeatures; ++k) {
        const auto [i, j] = feature_pairs()[k];
        out.f[k] = a[i] / a[j];
    }
    return out;
}

void write_feature_csv(const fs::path& path, const std::vector<FeatureRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << "id";
    for (const auto& n : feature_names()) out << ',' << n;
    out << ",source,hlhs,eps_floored\n";
    char buf[32];
    for (const auto& r : rows) {
        if (r.id.find_first_of(",\n\"") != std::string::npos) throw InvalidArgument("feature csv: id contains a separator");
        out << r.id;
        for (double v : r.features.f) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << ',' << buf;
        }
        out << ',' << to_string(r.features.source) << ',' << r.hlhs << ',' << (r.features.eps_floored ? 1 : 0) << '\n';
    }
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

std::vector<FeatureRow> read_feature_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw IoError("'" + path.string() + "' is empty");
    const auto header = split_csv_line(line);
    auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw IoError("'" + path.string() + "' has no column '" + name + "'");
    };
    const int c_id = col("id"), c_src = col("source"), c_y = col("hlhs");
    std::array<int, kNumFeatures> c_f{};
    for (int k = 0; k < kNumFeatures; ++k) c_f[k] = col(feature_names()[k]);
    int c_floor = -1;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == "eps_floored") c_floor = static_cast<int>(i);

    std::vector<FeatureRow> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw IoError("'" + path.string() + "' line " + std::to_string(line_no) + ": wrong number of columns");
        }
        FeatureRow r;
        try {
            r.id = cells[c_id];
            for (int k = 0; k < kNumFeatures; ++k) r.features.f[k] = std::stod(cells[c_f[k]]);
            r.features.source = source_from_string(cells[c_src]);
            r.hlhs = std::stoi(cells[c_y]);
            if (c_floor >= 0) r.features.eps_floored = std::stoi(cells[c_floor]) != 0;
        } catch (const std::exception& e) {
            throw IoError("'" + path.string() + "' line " + std::to_string(line_no) + ": " + e.what());
        }
        if (r.hlhs != 0 && r.hlhs != 1) throw IoError("'" + path.string() + "': hlhs label must be 0 or 1");
        rows.push_back(std::move(r));
    }
    return rows;
}

Eigen::MatrixXd to_matrix(const std::vector<FeatureRow>& rows) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), kNumFeatures);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (int k = 0; k < kNumFeatures; ++k) x(static_cast<Eigen::Index>(i), k) = rows[i].features.f[k];
    return x;
}

std::vector<int> to_labels(const std::vector<FeatureRow>& rows) {
    std::vector<int> y;
    y.reserve(rows.size());
    for (const auto& r : rows) y.push_back(r.hlhs);
    return y;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& x) {
    if (x.rows() == 0) throw InvalidArgument("standardizer: no rows");
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    s.scale.resize(x.cols());
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
        const double var = (x.col(k).array() - s.mean(k)).square().mean();
        s.scale(k) = var > 0 ? std::sqrt(var) : 1.0;
    }
    return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
    if (x.cols() != mean.size()) {
        throw InvalidArgument("feature dimension mismatch: expected " + std::to_string(mean.size()) + ", got " +
                              std::to_string(x.cols()));
    }
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

void to_json(nlohmann::json& j, const Standardizer& s) {
    j = nlohmann::json{{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
                       {"scale", std::vector<double>(s.scale.data(), s.scale.data() + s.scale.size())}};
}

void from_json(const nlohmann::json& j, Standardizer& s) {
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto sc = j.at("scale").get<std::vector<double>>();
    if (m.size() != sc.size()) throw IoError("standardizer: mean/scale length mismatch");
    s.mean = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    s.scale = Eigen::Map<const Eigen::VectorXd>(sc.data(), static_cast<Eigen::Index>(sc.size()));
}

}  // namespace atlas_istn::features
