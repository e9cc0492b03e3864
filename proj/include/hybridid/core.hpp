#pragma once

// Shared domain types: time grids, piecewise-constant profiles, trajectories,
// measurement datasets and the model-structure contract.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hybridid/errors.hpp"

namespace hybridid {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace detail {

inline bool same_time(double a, double b) {
    return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
}

inline std::string fmt_time(double t) {
    std::ostringstream os;
    os.precision(17);
    os << t;
    return os.str();
}

}  // namespace detail

/// Strictly increasing list of at least two time points with a unit tag.
class TimeGrid {
public:
    TimeGrid() = default;

    explicit TimeGrid(std::vector<double> points, std::string unit = "")
        : points_(std::move(points)), unit_(std::move(unit)) {
        if (points_.size() < 2) {
            throw ConfigError("time grid needs at least 2 points, got " + std::to_string(points_.size()));
        }
        for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
            if (!(points_[i + 1] > points_[i])) {
                throw ConfigError("time grid not strictly increasing at index " + std::to_string(i + 1) +
                                  " (t=" + detail::fmt_time(points_[i + 1]) + ")");
            }
        }
    }

    /// Uniform grid from `start` to `end` inclusive with `n_intervals` intervals.
    static TimeGrid uniform(double start, double end, std::size_t n_intervals, std::string unit = "") {
        if (n_intervals == 0) throw ConfigError("uniform grid needs at least one interval");
        std::vector<double> p(n_intervals + 1);
        for (std::size_t j = 0; j <= n_intervals; ++j) {
            p[j] = start + (end - start) * static_cast<double>(j) / static_cast<double>(n_intervals);
        }
        p.back() = end;
        return TimeGrid(std::move(p), std::move(unit));
    }

    /// Grid with spacing `period` from `start`; the last point is `end` (the final interval may be shorter).
    static TimeGrid with_period(double start, double end, double period, std::string unit = "") {
        if (!(period > 0)) throw ConfigError("grid period must be positive");
        std::vector<double> p;
        for (std::size_t j = 0;; ++j) {
            double t = start + period * static_cast<double>(j);
            if (t > end || detail::same_time(t, end)) break;
            p.push_back(t);
        }
        p.push_back(end);
        return TimeGrid(std::move(p), std::move(unit));
    }

    std::size_t size() const noexcept { return points_.size(); }
    std::size_t intervals() const noexcept { return points_.empty() ? 0 : points_.size() - 1; }
    double operator[](std::size_t i) const { return points_[i]; }
    double front() const { return points_.front(); }
    double back() const { return points_.back(); }
    const std::vector<double>& points() const noexcept { return points_; }
    const std::string& unit() const noexcept { return unit_; }

    bool contains(double t) const { return t >= front() && t <= back(); }

    /// Index k with t in [p_k, p_{k+1}); the terminal point maps to the last interval.
    std::size_t interval_of(double t) const {
        if (!(t >= front() && t <= back())) {
            throw RangeError("time " + detail::fmt_time(t) + " outside grid [" + detail::fmt_time(front()) + ", " +
                             detail::fmt_time(back()) + "]");
        }
        auto it = std::upper_bound(points_.begin(), points_.end(), t);
        std::size_t k = static_cast<std::size_t>(it - points_.begin());
        if (k == 0) return 0;
        return std::min(k - 1, intervals() - 1);
    }

    /// Exact (to 1e-9 relative) lookup of a grid point.
    std::optional<std::size_t> find(double t) const {
        auto it = std::lower_bound(points_.begin(), points_.end(), t);
        if (it != points_.end() && detail::same_time(*it, t)) return static_cast<std::size_t>(it - points_.begin());
        if (it != points_.begin() && detail::same_time(*(it - 1), t)) {
            return static_cast<std::size_t>(it - points_.begin() - 1);
        }
        return std::nullopt;
    }

    /// Interval midpoints, one per interval.
    std::vector<double> midpoints() const {
        std::vector<double> m(intervals());
        for (std::size_t k = 0; k < m.size(); ++k) m[k] = 0.5 * (points_[k] + points_[k + 1]);
        return m;
    }

    friend bool operator==(const TimeGrid& a, const TimeGrid& b) {
        return a.points_ == b.points_ && a.unit_ == b.unit_;
    }

private:
    std::vector<double> points_;
    std::string unit_;
};

/// Subdivides every interval uniformly so that no step exceeds `max_step`.
inline TimeGrid grid_refine(const TimeGrid& grid, double max_step) {
    if (!(max_step > 0)) throw ConfigError("grid_refine: max_step must be positive");
    std::vector<double> out;
    out.reserve(grid.size());
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        const double a = grid[k], b = grid[k + 1];
        const double ratio = (b - a) / max_step;
        auto n = static_cast<std::size_t>(std::ceil(ratio - 1e-9));
        if (n == 0) n = 1;
        out.push_back(a);
        for (std::size_t j = 1; j < n; ++j) {
            out.push_back(a + (b - a) * static_cast<double>(j) / static_cast<double>(n));
        }
    }
    out.push_back(grid.back());
    return TimeGrid(std::move(out), grid.unit());
}

/// Sorted union of time points; points closer than 1e-9 relative are merged.
/// Points outside [lo, hi] are dropped.
inline TimeGrid grid_union(const std::vector<const TimeGrid*>& grids, double lo, double hi) {
    std::vector<double> all;
    std::string unit;
    for (const TimeGrid* g : grids) {
        if (!g) continue;
        if (unit.empty()) unit = g->unit();
        for (double t : g->points()) {
            if (t >= lo - 1e-12 && t <= hi + 1e-12) all.push_back(t);
        }
    }
    all.push_back(lo);
    all.push_back(hi);
    std::sort(all.begin(), all.end());
    std::vector<double> merged;
    for (double t : all) {
        if (merged.empty() || !detail::same_time(merged.back(), t)) merged.push_back(t);
    }
    merged.front() = lo;
    merged.back() = hi;
    return TimeGrid(std::move(merged), unit);
}

/// One constant vector per grid interval.
class PiecewiseConstantProfile {
public:
    PiecewiseConstantProfile() = default;

    /// `values` has one row per interval and `dim` columns.
    PiecewiseConstantProfile(TimeGrid grid, Mat values) : grid_(std::move(grid)), values_(std::move(values)) {
        if (static_cast<std::size_t>(values_.rows()) != grid_.intervals()) {
            throw DimensionError("profile has " + std::to_string(values_.rows()) + " values for " +
                                 std::to_string(grid_.intervals()) + " intervals");
        }
    }

    static PiecewiseConstantProfile constant(TimeGrid grid, const Vec& value) {
        Mat v(grid.intervals(), value.size());
        for (Eigen::Index k = 0; k < v.rows(); ++k) v.row(k) = value.transpose();
        return {std::move(grid), std::move(v)};
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    const Mat& values() const noexcept { return values_; }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(values_.cols()); }
    std::size_t intervals() const noexcept { return grid_.intervals(); }

    auto row(std::size_t k) const { return values_.row(static_cast<Eigen::Index>(k)).transpose(); }

    /// value(t) = values[k] for t in [grid[k], grid[k+1]); value(t_end) = values[last].
    Vec eval(double t) const { return row(grid_.interval_of(t)); }

private:
    TimeGrid grid_;
    Mat values_;
};

inline Vec profile_eval(const PiecewiseConstantProfile& profile, double t) { return profile.eval(t); }

/// States (and optionally outputs) sampled on a grid.
struct Trajectory {
    TimeGrid grid;
    Mat states;   // rows = grid points
    Mat outputs;  // rows = grid points, or empty

    Vec state_at(double t) const {
        auto i = grid.find(t);
        if (!i) throw ConsistencyError("trajectory has no sample at t=" + detail::fmt_time(t));
        return states.row(static_cast<Eigen::Index>(*i)).transpose();
    }
};

struct VarInfo {
    std::string name;
    std::string unit;
};

/// Experimental dataset: noisy outputs at measurement times plus the applied MV profile.
struct MeasurementDataset {
    TimeGrid meas_grid;
    Mat z_meas;                  // N_meas x N_z
    std::vector<Mat> weights;    // N_meas matrices N_z x N_z
    PiecewiseConstantProfile mv;
    Vec x0_guess;
    std::vector<std::string> output_labels;
    std::vector<std::string> mv_labels;

    void validate() const {
        if (static_cast<std::size_t>(z_meas.rows()) != meas_grid.size()) {
            throw DimensionError("dataset has " + std::to_string(z_meas.rows()) + " rows for " +
                                 std::to_string(meas_grid.size()) + " measurement times");
        }
        if (weights.size() != meas_grid.size()) throw DimensionError("dataset weight count mismatch");
        for (std::size_t j = 0; j < weights.size(); ++j) {
            const Mat& w = weights[j];
            if (w.rows() != z_meas.cols() || w.cols() != z_meas.cols()) {
                throw DimensionError("weight matrix " + std::to_string(j) + " has wrong shape");
            }
            if ((w - w.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, w.cwiseAbs().maxCoeff())) {
                throw DataError("weight matrix " + std::to_string(j) + " is not symmetric");
            }
            Eigen::SelfAdjointEigenSolver<Mat> es(w, Eigen::EigenvaluesOnly);
            if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, w.cwiseAbs().maxCoeff())) {
                throw DataError("weight matrix " + std::to_string(j) + " is not positive semidefinite");
            }
        }
        if (mv.grid().front() > meas_grid.front() || mv.grid().back() < meas_grid.back()) {
            throw RangeError("MV profile does not cover the measurement horizon");
        }
    }
};

/// Diagonal weights 1/sigma^2 with sigma = max(sigma_frac*|z|, floor) per channel.
inline std::vector<Mat> relative_noise_weights(const Mat& z, double sigma_frac, double floor = 1e-6) {
    std::vector<Mat> w(static_cast<std::size_t>(z.rows()));
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
        Mat m = Mat::Zero(z.cols(), z.cols());
        for (Eigen::Index i = 0; i < z.cols(); ++i) {
            double s = std::max(sigma_frac * std::abs(z(j, i)), floor);
            m(i, i) = 1.0 / (s * s);
        }
        w[static_cast<std::size_t>(j)] = std::move(m);
    }
    return w;
}

/// Diagonal weights 1/sigma_i^2 from absolute per-channel noise levels.
inline std::vector<Mat> absolute_noise_weights(std::size_t n_points, const Vec& sigma) {
    Mat m = Mat::Zero(sigma.size(), sigma.size());
    for (Eigen::Index i = 0; i < sigma.size(); ++i) m(i, i) = 1.0 / (sigma[i] * sigma[i]);
    return std::vector<Mat>(n_points, m);
}

using RhsFn = std::function<void(const Vec& x, const Vec& u, const Vec& p, double t, Vec& dx)>;
using OutputFn = std::function<void(const Vec& x, Vec& z)>;
using FluxFn = std::function<void(const Vec& x, const Vec& u, double t, Vec& p)>;

/// Known mechanistic part of a model with open flux slots p.
///
/// `rhs` computes dx/dt from the known terms plus the flux entries; it throws
/// DomainError outside its domain instead of returning garbage.
struct ModelStructure {
    std::string id;
    std::string time_unit;
    std::size_t n_x = 0, n_u = 0, n_p = 0, n_z = 0;
    RhsFn rhs;
    OutputFn output;
    std::vector<VarInfo> states, inputs, fluxes, outputs;
    std::optional<std::pair<Vec, Vec>> p_bounds;
    /// Maps an output vector back to a state guess when the output map is a state selector.
    std::function<Vec(const Vec& z)> state_from_output;

    std::optional<std::size_t> state_index(const std::string& name) const { return find(states, name); }
    std::optional<std::size_t> input_index(const std::string& name) const { return find(inputs, name); }
    std::optional<std::size_t> flux_index(const std::string& name) const { return find(fluxes, name); }

private:
    static std::optional<std::size_t> find(const std::vector<VarInfo>& v, const std::string& name) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (v[i].name == name) return i;
        }
        return std::nullopt;
    }
};

/// A model whose right-hand side depends only on (x, u, t): fluxes already closed.
struct ClosedModel {
    std::size_t n_x = 0, n_u = 0, n_z = 0;
    std::function<void(const Vec& x, const Vec& u, double t, Vec& dx)> rhs;
    OutputFn output;
};

/// A structure plus a flux law; used for ground-truth simulators.
struct TruthModel {
    ModelStructure structure;
    FluxFn flux;

    ClosedModel closed() const {
        ClosedModel m;
        m.n_x = structure.n_x;
        m.n_u = structure.n_u;
        m.n_z = structure.n_z;
        m.output = structure.output;
        auto s = structure;
        auto f = flux;
        m.rhs = [s, f, p = Vec(Vec::Zero(static_cast<Eigen::Index>(structure.n_p)))](
                    const Vec& x, const Vec& u, double t, Vec& dx) mutable {
            f(x, u, t, p);
            s.rhs(x, u, p, t, dx);
        };
        return m;
    }
};

}  // namespace hybridid
