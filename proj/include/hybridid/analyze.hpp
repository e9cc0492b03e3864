#pragma once

// Flux table assembly from estimation results and Pearson input screening.

#include <string>
#include <vector>

#include "hybridid/estimate.hpp"

namespace hybridid {

/// Rows of (x*(t_mid), u(t_mid), p_k), one per dataset and disc interval.
struct FluxTable {
    std::vector<std::string> columns;  // states, then inputs, then fluxes
    std::size_t n_states = 0, n_inputs = 0, n_fluxes = 0;
    Mat data;
    std::vector<std::pair<std::size_t, std::size_t>> provenance;  // (dataset, interval)
    std::size_t dropped = 0;

    std::size_t rows() const { return static_cast<std::size_t>(data.rows()); }
    std::optional<std::size_t> column(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (columns[i] == name) return i;
        }
        return std::nullopt;
    }
    Vec col(const std::string& name) const {
        auto i = column(name);
        if (!i) throw ConfigError("flux table has no column '" + name + "'");
        return data.col(static_cast<Eigen::Index>(*i));
    }
    bool is_flux(std::size_t c) const { return c >= n_states + n_inputs; }
};

inline FluxTable build_flux_table(const std::vector<EstimateResult>& results, const ModelStructure& model) {
    FluxTable t;
    for (const auto& v : model.states) t.columns.push_back(v.name);
    for (const auto& v : model.inputs) t.columns.push_back(v.name);
    for (const auto& v : model.fluxes) t.columns.push_back(v.name);
    t.n_states = model.n_x;
    t.n_inputs = model.n_u;
    t.n_fluxes = model.n_p;
    const auto n_cols = static_cast<Eigen::Index>(t.columns.size());

    std::vector<Vec> rows;
    for (std::size_t d = 0; d < results.size(); ++d) {
        const auto& r = results[d];
        if (r.p_star.dim() != model.n_p || r.mv.dim() != model.n_u ||
            static_cast<std::size_t>(r.trajectory.states.cols()) != model.n_x) {
            throw DimensionError("estimation result " + std::to_string(d) + " does not match model " + model.id);
        }
        const auto mids = r.p_star.grid().midpoints();
        for (std::size_t k = 0; k < mids.size(); ++k) {
            Vec row(n_cols);
            row.head(static_cast<Eigen::Index>(model.n_x)) = r.trajectory.state_at(mids[k]);
            row.segment(static_cast<Eigen::Index>(model.n_x), static_cast<Eigen::Index>(model.n_u)) = r.mv.eval(mids[k]);
            row.tail(static_cast<Eigen::Index>(model.n_p)) = r.p_star.row(k);
            if (!row.allFinite()) {
                ++t.dropped;
                continue;
            }
            rows.push_back(std::move(row));
            t.provenance.emplace_back(d, k);
        }
    }
    t.data.resize(static_cast<Eigen::Index>(rows.size()), n_cols);
    for (std::size_t i = 0; i < rows.size(); ++i) t.data.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return t;
}

struct CorrelationMatrix {
    std::vector<std::string> labels;
    Mat r;
    std::vector<bool> constant;
    Vec mean;
};

/// Two-pass Pearson coefficients between all table columns. Columns with
/// sample std < 1e-12 are flagged constant and get r = 0 everywhere,
/// including the diagonal.
inline CorrelationMatrix pearson_matrix(const FluxTable& table) {
    const Eigen::Index n = table.data.rows(), m = table.data.cols();
    if (n < 2) throw DataError("Pearson correlation needs at least 2 rows, got " + std::to_string(n));
    CorrelationMatrix c;
    c.labels = table.columns;
    c.mean = table.data.colwise().mean().transpose();
    Mat centered = table.data.rowwise() - c.mean.transpose();
    Vec ss(m);
    c.constant.assign(static_cast<std::size_t>(m), false);
    for (Eigen::Index j = 0; j < m; ++j) {
        ss[j] = centered.col(j).squaredNorm();
        const double sd = std::sqrt(ss[j] / static_cast<double>(n - 1));
        c.constant[static_cast<std::size_t>(j)] = !(sd >= 1e-12);
    }
    c.r = Mat::Zero(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
        if (c.constant[static_cast<std::size_t>(a)]) continue;
        c.r(a, a) = 1.0;
        for (Eigen::Index b = a + 1; b < m; ++b) {
            if (c.constant[static_cast<std::size_t>(b)]) continue;
            double v = centered.col(a).dot(centered.col(b)) / std::sqrt(ss[a] * ss[b]);
            v = std::clamp(v, -1.0, 1.0);
            c.r(a, b) = v;
            c.r(b, a) = v;
        }
    }
    return c;
}

struct FluxSelection {
    std::string flux;
    std::vector<std::string> inputs;
    bool constant = false;     // no input reached the threshold
    double mean = 0.0;         // recommended constant when `constant`
};

struct CorrelationReport {
    CorrelationMatrix matrix;
    double tau = 0.5;
    std::vector<FluxSelection> selections;

    const FluxSelection& selection(const std::string& flux) const {
        for (const auto& s : selections) {
            if (s.flux == flux) return s;
        }
        throw ConfigError("correlation report has no flux '" + flux + "'");
    }
};

/// Inputs with |r| >= tau among state and MV columns, per flux column.
inline CorrelationReport select_inputs(const CorrelationMatrix& m, const FluxTable& table, double tau) {
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1], got " + detail::fmt_time(tau));
    CorrelationReport rep;
    rep.matrix = m;
    rep.tau = tau;
    const std::size_t n_cand = table.n_states + table.n_inputs;
    for (std::size_t f = n_cand; f < m.labels.size(); ++f) {
        FluxSelection s;
        s.flux = m.labels[f];
        for (std::size_t c = 0; c < n_cand; ++c) {
            if (std::abs(m.r(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(c))) >= tau) {
                s.inputs.push_back(m.labels[c]);
            }
        }
        s.constant = s.inputs.empty();
        s.mean = m.mean[static_cast<Eigen::Index>(f)];
        rep.selections.push_back(std::move(s));
    }
    return rep;
}

inline CorrelationReport correlate(const FluxTable& table, double tau) {
    return select_inputs(pearson_matrix(table), table, tau);
}

}  // namespace hybridid
