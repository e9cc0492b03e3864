#pragma once

// Fixed-step integration with piecewise-constant inputs. Steps are aligned to
// every knot of every input profile so inputs are constant within a step.

#include <cmath>
#include <span>
#include <variant>

#include "hybridid/core.hpp"

namespace hybridid {

struct IntegratorConfig {
    enum class Method { rk4, implicit_euler };
    Method method = Method::rk4;
    double max_step = 0.1;
    double newton_tol = 1e-10;
    int newton_max_iter = 50;

    void validate() const {
        if (!(max_step > 0)) throw ConfigError("integrator max_step must be positive");
        if (!(newton_tol > 0) || newton_max_iter < 1) throw ConfigError("invalid Newton settings");
    }
};

/// Step grid plus the positions of the requested output times in it.
struct StepPlan {
    TimeGrid steps;
    std::vector<std::size_t> out_index;

    /// Builds the refined union of all knot grids over [out.front(), out.back()].
    static StepPlan build(const TimeGrid& out, const std::vector<const TimeGrid*>& knots, double max_step) {
        std::vector<const TimeGrid*> all = knots;
        all.push_back(&out);
        TimeGrid merged = grid_union(all, out.front(), out.back());
        StepPlan plan{grid_refine(merged, max_step), {}};
        plan.out_index.reserve(out.size());
        for (double t : out.points()) {
            auto i = plan.steps.find(t);
            if (!i) throw ConsistencyError("output time missing from step grid");
            plan.out_index.push_back(*i);
        }
        return plan;
    }
};

namespace detail {

template <class F>
void implicit_euler_step(F& f, const Vec& x, double t0, double h, std::size_t k, const IntegratorConfig& cfg,
                         Vec& y, Vec& work, Vec& fy) {
    const Eigen::Index n = x.size();
    // Explicit predictor, then Newton on g(y) = y - x - h f(y).
    f(x, t0, k, work);
    y = x + h * work;
    Mat jac(n, n);
    Vec g(n), fp(n), yp(n);
    for (int it = 0; it < cfg.newton_max_iter; ++it) {
        f(y, t0 + h, k, fy);
        g = y - x - h * fy;
        for (Eigen::Index c = 0; c < n; ++c) {
            const double d = 1e-7 * std::max(1.0, std::abs(y[c]));
            yp = y;
            yp[c] += d;
            f(yp, t0 + h, k, fp);
            jac.col(c) = (yp - x - h * fp - g) / d;
        }
        Vec delta = jac.partialPivLu().solve(-g);
        y += delta;
        if (!delta.allFinite()) break;
        if (delta.cwiseAbs().maxCoeff() <= cfg.newton_tol * (1.0 + y.cwiseAbs().maxCoeff())) return;
    }
    throw IntegrationError("implicit Euler Newton iteration did not converge", t0 + h);
}

}  // namespace detail

/// Integrates over `steps[first..]` starting from `x_start` at steps[first].
///
/// `f(x, t, step_index, dx)` evaluates the right-hand side; `step_index` is the
/// index of the left end of the current step, so piecewise-constant inputs can
/// be looked up without knot ambiguity. Returns one state row per step point
/// (rows before `first` are left untouched in `states`).
template <class F>
void integrate_plan(F&& f, const Vec& x_start, std::span<const double> steps, std::size_t first,
                    const IntegratorConfig& cfg, Mat& states) {
    const Eigen::Index n = x_start.size();
    if (states.rows() != static_cast<Eigen::Index>(steps.size()) || states.cols() != n) {
        states.resize(static_cast<Eigen::Index>(steps.size()), n);
    }
    Vec x = x_start;
    if (!x.allFinite()) throw IntegrationError("non-finite initial state", steps[first]);
    states.row(static_cast<Eigen::Index>(first)) = x.transpose();
    Vec k1(n), k2(n), k3(n), k4(n), tmp(n), y(n);
    for (std::size_t k = first; k + 1 < steps.size(); ++k) {
        const double t0 = steps[k];
        const double h = steps[k + 1] - t0;
        if (cfg.method == IntegratorConfig::Method::rk4) {
            f(x, t0, k, k1);
            tmp = x + (0.5 * h) * k1;
            f(tmp, t0 + 0.5 * h, k, k2);
            tmp = x + (0.5 * h) * k2;
            f(tmp, t0 + 0.5 * h, k, k3);
            tmp = x + h * k3;
            f(tmp, t0 + h, k, k4);
            x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        } else {
            detail::implicit_euler_step(f, x, t0, h, k, cfg, y, tmp, k4);
            x = y;
        }
        if (!x.allFinite()) throw IntegrationError("non-finite state during integration", steps[k + 1]);
        states.row(static_cast<Eigen::Index>(k + 1)) = x.transpose();
    }
}

namespace detail {

/// Interval index of `profile` for the left end of every step.
inline std::vector<std::size_t> step_intervals(const TimeGrid& steps, const TimeGrid& profile_grid) {
    std::vector<std::size_t> idx(steps.size());
    for (std::size_t k = 0; k < steps.size(); ++k) idx[k] = profile_grid.interval_of(steps[k]);
    return idx;
}

inline Trajectory sample_outputs(const StepPlan& plan, const TimeGrid& out, const Mat& states, const OutputFn& output,
                                 std::size_t n_z) {
    Trajectory tr;
    tr.grid = out;
    tr.states.resize(static_cast<Eigen::Index>(out.size()), states.cols());
    tr.outputs.resize(static_cast<Eigen::Index>(out.size()), static_cast<Eigen::Index>(n_z));
    Vec x(states.cols()), z(static_cast<Eigen::Index>(n_z));
    for (std::size_t j = 0; j < out.size(); ++j) {
        x = states.row(static_cast<Eigen::Index>(plan.out_index[j])).transpose();
        tr.states.row(static_cast<Eigen::Index>(j)) = x.transpose();
        if (output) {
            output(x, z);
            tr.outputs.row(static_cast<Eigen::Index>(j)) = z.transpose();
        }
    }
    return tr;
}

inline void check_span(const TimeGrid& out, const TimeGrid& mv) {
    if (out.front() < mv.front() || out.back() > mv.back()) {
        throw RangeError("output grid [" + fmt_time(out.front()) + ", " + fmt_time(out.back()) +
                         "] outside MV profile span");
    }
}

}  // namespace detail

using FluxInput = std::variant<PiecewiseConstantProfile, Vec>;

/// Forward simulation of a structure with prescribed fluxes (profile or constant).
inline Trajectory simulate(const ModelStructure& model, const Vec& x0, const PiecewiseConstantProfile& mv,
                           const FluxInput& flux, const TimeGrid& out_grid, const IntegratorConfig& cfg) {
    cfg.validate();
    if (static_cast<std::size_t>(x0.size()) != model.n_x || mv.dim() != model.n_u) {
        throw DimensionError("simulate: state or MV dimension does not match model " + model.id);
    }
    detail::check_span(out_grid, mv.grid());
    const auto* flux_profile = std::get_if<PiecewiseConstantProfile>(&flux);
    if (flux_profile) {
        if (flux_profile->dim() != model.n_p) throw DimensionError("simulate: flux profile dimension mismatch");
        detail::check_span(out_grid, flux_profile->grid());
    } else if (static_cast<std::size_t>(std::get<Vec>(flux).size()) != model.n_p) {
        throw DimensionError("simulate: flux vector dimension mismatch");
    }
    std::vector<const TimeGrid*> knots{&mv.grid()};
    if (flux_profile) knots.push_back(&flux_profile->grid());
    StepPlan plan = StepPlan::build(out_grid, knots, cfg.max_step);
    auto mv_idx = detail::step_intervals(plan.steps, mv.grid());
    std::vector<std::size_t> p_idx;
    if (flux_profile) p_idx = detail::step_intervals(plan.steps, flux_profile->grid());
    Vec u(static_cast<Eigen::Index>(model.n_u));
    Vec p = flux_profile ? Vec(Vec::Zero(static_cast<Eigen::Index>(model.n_p))) : std::get<Vec>(flux);
    auto f = [&](const Vec& x, double t, std::size_t k, Vec& dx) {
        u = mv.row(mv_idx[k]);
        if (flux_profile) p = flux_profile->row(p_idx[k]);
        model.rhs(x, u, p, t, dx);
    };
    Mat states;
    integrate_plan(f, x0, plan.steps.points(), 0, cfg, states);
    return detail::sample_outputs(plan, out_grid, states, model.output, model.n_z);
}

/// Forward simulation of a closed model (fluxes computed from the state).
inline Trajectory simulate_closed(const ClosedModel& model, const Vec& x0, const PiecewiseConstantProfile& mv,
                                  const TimeGrid& out_grid, const IntegratorConfig& cfg) {
    cfg.validate();
    if (static_cast<std::size_t>(x0.size()) != model.n_x || mv.dim() != model.n_u) {
        throw DimensionError("simulate: state or MV dimension mismatch");
    }
    detail::check_span(out_grid, mv.grid());
    StepPlan plan = StepPlan::build(out_grid, {&mv.grid()}, cfg.max_step);
    auto mv_idx = detail::step_intervals(plan.steps, mv.grid());
    Vec u(static_cast<Eigen::Index>(model.n_u));
    auto f = [&](const Vec& x, double t, std::size_t k, Vec& dx) {
        u = mv.row(mv_idx[k]);
        model.rhs(x, u, t, dx);
    };
    Mat states;
    integrate_plan(f, x0, plan.steps.points(), 0, cfg, states);
    return detail::sample_outputs(plan, out_grid, states, model.output, model.n_z);
}

}  // namespace hybridid
