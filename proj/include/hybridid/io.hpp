#pragma once

// Artifact files: CSV tables with a provenance comment line, JSON documents,
// datasets with MV knot sidecars, and the config hash.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include <nlohmann/json.hpp>

#include "hybridid/core.hpp"
#include "hybridid/pseudo_data.hpp"

namespace hybridid {

namespace fs = std::filesystem;

/// Shortest decimal text that parses back to the same double.
inline std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& where) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && *b == ' ') ++b;
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e) throw DataError(where + ": cannot parse number '" + s + "'");
    return v;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

/// Provenance stamped into every artifact.
struct Stamp {
    std::string config_hash;
    std::uint64_t seed = 0;

    std::string comment() const { return "# config_hash=" + config_hash + ";seed=" + std::to_string(seed); }
};

inline void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f << content;
    if (!f) throw DataError("write failed for " + path.string());
}

inline std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DependencyError("missing artifact " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

inline void require_file(const fs::path& path, const std::string& stage) {
    if (!fs::exists(path)) {
        throw DependencyError("missing artifact " + path.string() + " (run '" + stage + "' first)");
    }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_file(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

inline nlohmann::json stamped(const Stamp& s, const std::string& kind) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = kind;
    j["config_hash"] = s.config_hash;
    j["seed"] = s.seed;
    return j;
}

struct CsvTable {
    std::string comment;  // first line without the leading "# ", may be empty
    std::vector<std::string> header;
    Mat data;

    Vec col(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return data.col(static_cast<Eigen::Index>(i));
        }
        throw DataError("CSV has no column '" + name + "'");
    }
};

inline std::string format_csv(const std::string& comment, const std::vector<std::string>& header, const Mat& data) {
    if (static_cast<Eigen::Index>(header.size()) != data.cols()) throw DimensionError("CSV header/data width mismatch");
    std::string out;
    if (!comment.empty()) out += comment + "\n";
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out += ',';
        out += header[i];
    }
    out += '\n';
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
        for (Eigen::Index c = 0; c < data.cols(); ++c) {
            if (c) out += ',';
            out += fmt_double(data(r, c));
        }
        out += '\n';
    }
    return out;
}

inline void write_csv(const fs::path& path, const std::string& comment, const std::vector<std::string>& header,
                      const Mat& data) {
    write_file(path, format_csv(comment, header, data));
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

inline CsvTable parse_csv(const std::string& text, const std::string& where) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    std::vector<std::vector<double>> rows;
    bool have_header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (!have_header && t.comment.empty()) t.comment = line;
            continue;
        }
        auto cells = split_csv_line(line);
        if (!have_header) {
            t.header = cells;
            have_header = true;
            continue;
        }
        if (cells.size() != t.header.size()) {
            throw DataError(where + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                            " fields, got " + std::to_string(cells.size()));
        }
        std::vector<double> r;
        for (const auto& c : cells) r.push_back(parse_double(c, where + ":" + std::to_string(line_no)));
        rows.push_back(std::move(r));
    }
    if (!have_header) throw DataError(where + ": empty CSV");
    t.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.header.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            t.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return t;
}

inline CsvTable read_csv(const fs::path& path) { return parse_csv(read_file(path), path.string()); }

inline std::string labeled(const VarInfo& v) { return v.unit.empty() ? v.name : v.name + "[" + v.unit + "]"; }

// ---- datasets ----

/// Dataset CSV: t, outputs, MVs (held value at each measurement time).
/// Knot sidecar: one row per MV interval, t_start, t_end, values.
struct DatasetFiles {
    fs::path csv;
    fs::path knots;
};

inline DatasetFiles dataset_paths(const fs::path& dir, const std::string& stem) {
    return {dir / (stem + ".csv"), dir / (stem + "_knots.csv")};
}

inline void write_dataset(const DatasetFiles& files, const MeasurementDataset& ds, const ModelStructure& model,
                          const std::string& comment) {
    const auto n = static_cast<Eigen::Index>(ds.meas_grid.size());
    const auto nz = ds.z_meas.cols();
    const auto nu = static_cast<Eigen::Index>(ds.mv.dim());
    std::vector<std::string> header{"t[" + model.time_unit + "]"};
    for (const auto& v : model.outputs) header.push_back(labeled(v));
    for (const auto& v : model.inputs) header.push_back(labeled(v));
    Mat d(n, 1 + nz + nu);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double t = ds.meas_grid[static_cast<std::size_t>(j)];
        d(j, 0) = t;
        d.row(j).segment(1, nz) = ds.z_meas.row(j);
        d.row(j).tail(nu) = ds.mv.eval(t).transpose();
    }
    write_csv(files.csv, comment, header, d);

    std::vector<std::string> kh{"t_start[" + model.time_unit + "]", "t_end[" + model.time_unit + "]"};
    for (const auto& v : model.inputs) kh.push_back(labeled(v));
    const auto K = static_cast<Eigen::Index>(ds.mv.intervals());
    Mat k(K, 2 + nu);
    for (Eigen::Index i = 0; i < K; ++i) {
        k(i, 0) = ds.mv.grid()[static_cast<std::size_t>(i)];
        k(i, 1) = ds.mv.grid()[static_cast<std::size_t>(i) + 1];
        k.row(i).tail(nu) = ds.mv.values().row(i);
    }
    write_csv(files.knots, comment, kh, k);
}

/// Reads a dataset pair; weights come from the declared noise model.
inline MeasurementDataset read_dataset(const DatasetFiles& files, const ModelStructure& model,
                                       const NoiseConfig& noise) {
    CsvTable t = read_csv(files.csv);
    CsvTable k = read_csv(files.knots);
    const auto nz = static_cast<Eigen::Index>(model.n_z), nu = static_cast<Eigen::Index>(model.n_u);
    if (t.data.cols() != 1 + nz + nu) {
        throw DimensionError(files.csv.string() + ": expected " + std::to_string(1 + nz + nu) + " columns");
    }
    if (k.data.cols() != 2 + nu || k.data.rows() < 1) {
        throw DimensionError(files.knots.string() + ": expected " + std::to_string(2 + nu) + " columns");
    }
    MeasurementDataset ds;
    std::vector<double> tp(static_cast<std::size_t>(t.data.rows()));
    for (Eigen::Index j = 0; j < t.data.rows(); ++j) tp[static_cast<std::size_t>(j)] = t.data(j, 0);
    ds.meas_grid = TimeGrid(tp, model.time_unit);
    ds.z_meas = t.data.middleCols(1, nz);
    std::vector<double> kp;
    for (Eigen::Index i = 0; i < k.data.rows(); ++i) {
        if (i > 0 && k.data(i, 0) != k.data(i - 1, 1)) {
            throw ConsistencyError(files.knots.string() + ": MV intervals are not contiguous at row " +
                                   std::to_string(i + 1));
        }
        kp.push_back(k.data(i, 0));
    }
    kp.push_back(k.data(k.data.rows() - 1, 1));
    ds.mv = PiecewiseConstantProfile(TimeGrid(kp, model.time_unit), k.data.rightCols(nu));
    ds.weights = noise_weights(ds.z_meas, noise);
    ds.x0_guess = model.state_from_output ? model.state_from_output(ds.z_meas.row(0).transpose())
                                          : Vec(Vec::Zero(static_cast<Eigen::Index>(model.n_x)));
    for (const auto& v : model.outputs) ds.output_labels.push_back(v.name);
    for (const auto& v : model.inputs) ds.mv_labels.push_back(v.name);
    ds.validate();
    return ds;
}

// ---- JSON helpers for grids and profiles ----

inline nlohmann::json vec_to_json(const Vec& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Vec vec_from_json(const nlohmann::json& a, const std::string& where) {
    if (!a.is_array()) throw DataError(where + ": expected an array");
    Vec v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) throw DataError(where + "/" + std::to_string(i) + ": expected a number");
        v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    }
    return v;
}

inline nlohmann::json profile_to_json(const PiecewiseConstantProfile& p) {
    nlohmann::json j;
    j["grid"] = p.grid().points();
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t k = 0; k < p.intervals(); ++k) rows.push_back(vec_to_json(p.row(k)));
    j["values"] = rows;
    return j;
}

inline PiecewiseConstantProfile profile_from_json(const nlohmann::json& j, const std::string& unit,
                                                  const std::string& where) {
    try {
        TimeGrid g(j.at("grid").get<std::vector<double>>(), unit);
        const auto& rows = j.at("values");
        if (rows.size() != g.intervals()) throw DimensionError(where + ": profile value count mismatch");
        const std::size_t dim = rows.empty() ? 0 : rows[0].size();
        Mat v(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            Vec r = vec_from_json(rows[k], where);
            if (static_cast<std::size_t>(r.size()) != dim) throw DimensionError(where + ": ragged profile");
            v.row(static_cast<Eigen::Index>(k)) = r.transpose();
        }
        return PiecewiseConstantProfile(std::move(g), std::move(v));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(where + ": " + e.what());
    }
}

}  // namespace hybridid
