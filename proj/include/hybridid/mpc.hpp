#pragma once

// Receding-horizon tracking control by single shooting with the LM solver,
// and a closed-loop harness that alternates plant integration and control.

#include <chrono>

#include "hybridid/hybrid.hpp"

namespace hybridid {

struct SetpointChange {
    double time = 0.0;
    Vec target;  // over controller outputs
};

struct MpcConfig {
    double sampling = 8.0;
    double horizon = 180.0;
    Vec q;  // diagonal CV weights
    Vec s;  // diagonal move weights
    Vec u_lo, u_hi;
    std::vector<SetpointChange> setpoints;  // sorted by time, first entry applies from -inf
    LmConfig lm;
    bool warm_start = true;
    IntegratorConfig integrator;

    /// Three-tank defaults: track h2 only, S = 0.1 I, flows in [0.01, 0.04].
    static MpcConfig tank_default() {
        MpcConfig c;
        c.q = Vec::Zero(4);
        c.q[1] = 1.0;
        c.s = Vec::Constant(2, 0.1);
        c.u_lo = Vec::Constant(2, 0.01);
        c.u_hi = Vec::Constant(2, 0.04);
        c.integrator.max_step = 2.0;
        c.lm.max_iter = 30;
        c.lm.cost_tol = 1e-10;
        return c;
    }

    std::size_t moves() const { return static_cast<std::size_t>(std::floor(horizon / sampling + 1e-9)); }

    void validate(std::size_t n_u, std::size_t n_z) const {
        if (!(sampling > 0)) throw ConfigError("mpc.sampling must be positive");
        if (!(horizon >= sampling)) throw ConfigError("mpc.horizon must be at least one sampling interval");
        if (static_cast<std::size_t>(q.size()) != n_z || (q.array() < 0).any()) {
            throw ConfigError("mpc.q must hold " + std::to_string(n_z) + " nonnegative weights");
        }
        if (static_cast<std::size_t>(s.size()) != n_u || (s.array() < 0).any()) {
            throw ConfigError("mpc.s must hold " + std::to_string(n_u) + " nonnegative weights");
        }
        if (static_cast<std::size_t>(u_lo.size()) != n_u || static_cast<std::size_t>(u_hi.size()) != n_u ||
            (u_lo.array() > u_hi.array()).any()) {
            throw ConfigError("mpc MV bounds must have " + std::to_string(n_u) + " entries with lo <= hi");
        }
        if (setpoints.empty()) throw ConfigError("mpc needs at least one setpoint");
        for (std::size_t i = 0; i < setpoints.size(); ++i) {
            if (static_cast<std::size_t>(setpoints[i].target.size()) != n_z) {
                throw ConfigError("mpc setpoint " + std::to_string(i) + " has wrong dimension");
            }
            if (i > 0 && !(setpoints[i].time > setpoints[i - 1].time)) {
                throw ConfigError("mpc setpoint times must increase");
            }
        }
        integrator.validate();
        lm.validate();
    }

    Vec setpoint(double t) const {
        const SetpointChange* cur = &setpoints.front();
        for (const auto& s : setpoints) {
            if (s.time <= t + 1e-9) cur = &s;
        }
        return cur->target;
    }
};

struct MpcStepResult {
    Vec u_apply;
    Mat plan;  // moves x n_u
    double cost = 0.0;
    int iterations = 0;
    bool ok = true;
    std::string message;
};

namespace detail {

/// Horizon knots: `moves` full sampling intervals plus a shorter remainder
/// that reuses the last move.
inline TimeGrid control_grid(double t0, const MpcConfig& cfg) {
    std::vector<double> p;
    const std::size_t m = cfg.moves();
    for (std::size_t i = 0; i <= m; ++i) p.push_back(t0 + cfg.sampling * static_cast<double>(i));
    const double end = t0 + cfg.horizon;
    if (!same_time(p.back(), end) && end > p.back()) p.push_back(end);
    return TimeGrid(std::move(p), "");
}

class MpcShooting {
public:
    MpcShooting(const ClosedModel& model, const Vec& x_now, double t_now, const Vec& u_prev, const MpcConfig& cfg)
        : model_(model), x_now_(x_now), u_prev_(u_prev), cfg_(cfg), n_u_(model.n_u), m_(cfg.moves()) {
        ctrl_ = control_grid(t_now, cfg);
        plan_ = StepPlan::build(ctrl_, {}, cfg.integrator.max_step);
        move_idx_ = step_intervals(plan_.steps, ctrl_);
        for (auto& k : move_idx_) k = std::min(k, m_ - 1);
        sqrt_q_ = cfg.q.cwiseSqrt();
        sqrt_s_ = cfg.s.cwiseSqrt();
        for (std::size_t i = 1; i < ctrl_.size(); ++i) sp_.push_back(cfg.setpoint(ctrl_[i]));
        n_track_ = (ctrl_.size() - 1) * model.n_z;
        n_res_ = n_track_ + m_ * n_u_;
    }

    std::size_t dim() const { return m_ * n_u_; }
    std::size_t moves() const { return m_; }

    void simulate(const Vec& th, std::size_t first, const Vec& x_start, Mat& states) const {
        Vec u(static_cast<Eigen::Index>(n_u_));
        auto f = [&](const Vec& x, double t, std::size_t k, Vec& dx) {
            u = th.segment(static_cast<Eigen::Index>(move_idx_[k] * n_u_), static_cast<Eigen::Index>(n_u_));
            model_.rhs(x, u, t, dx);
        };
        integrate_plan(f, x_start, plan_.steps.points(), first, cfg_.integrator, states);
    }

    void tracking(const Mat& states, std::size_t first_point, Vec& r) const {
        Vec x, z(static_cast<Eigen::Index>(model_.n_z));
        const auto nz = static_cast<Eigen::Index>(model_.n_z);
        for (std::size_t i = first_point; i + 1 < ctrl_.size(); ++i) {
            x = states.row(static_cast<Eigen::Index>(plan_.out_index[i + 1])).transpose();
            model_.output(x, z);
            r.segment(static_cast<Eigen::Index>(i) * nz, nz) = sqrt_q_.cwiseProduct(z - sp_[i]);
        }
    }

    void moves_residual(const Vec& th, Vec& r) const {
        const auto nu = static_cast<Eigen::Index>(n_u_);
        for (std::size_t i = 0; i < m_; ++i) {
            Vec prev = i == 0 ? u_prev_ : Vec(th.segment(static_cast<Eigen::Index>(i - 1) * nu, nu));
            r.segment(static_cast<Eigen::Index>(n_track_) + static_cast<Eigen::Index>(i) * nu, nu) =
                sqrt_s_.cwiseProduct(th.segment(static_cast<Eigen::Index>(i) * nu, nu) - prev);
        }
    }

    Vec residual(const Vec& th) const {
        Mat states;
        simulate(th, 0, x_now_, states);
        Vec r(static_cast<Eigen::Index>(n_res_));
        tracking(states, 0, r);
        moves_residual(th, r);
        cache_th_ = th;
        cache_states_ = std::move(states);
        return r;
    }

    /// Move i only affects outputs after its start knot, so perturbed runs restart there.
    Mat jacobian(const Vec& th, const Vec& r) const {
        if (cache_th_.size() != th.size() || cache_th_ != th) (void)residual(th);
        const Mat nominal = cache_states_;
        Mat J = Mat::Zero(static_cast<Eigen::Index>(n_res_), th.size());
        Vec t = th, rp = r;
        Mat states = nominal;
        const auto nu = static_cast<Eigen::Index>(n_u_);
        for (std::size_t i = 0; i < m_; ++i) {
            const std::size_t s0 = plan_.out_index[i];
            for (Eigen::Index c = 0; c < nu; ++c) {
                const Eigen::Index col = static_cast<Eigen::Index>(i) * nu + c;
                double h = 1e-6 * std::max(std::abs(th[col]), 1.0);
                if (th[col] + h > cfg_.u_hi[c]) h = -h;
                t[col] = th[col] + h;
                simulate(t, s0, nominal.row(static_cast<Eigen::Index>(s0)).transpose(), states);
                tracking(states, i, rp);
                const Eigen::Index off = static_cast<Eigen::Index>(i * model_.n_z);
                const Eigen::Index len = static_cast<Eigen::Index>(n_track_) - off;
                J.col(col).segment(off, len) = (rp.segment(off, len) - r.segment(off, len)) / h;
                t[col] = th[col];
                const Eigen::Index mr = static_cast<Eigen::Index>(n_track_) + static_cast<Eigen::Index>(i) * nu + c;
                J(mr, col) = sqrt_s_[c];
                if (i + 1 < m_) J(mr + nu, col) = -sqrt_s_[c];
            }
        }
        return J;
    }

private:
    const ClosedModel& model_;
    Vec x_now_, u_prev_;
    const MpcConfig& cfg_;
    std::size_t n_u_, m_;
    TimeGrid ctrl_;
    StepPlan plan_;
    std::vector<std::size_t> move_idx_;
    Vec sqrt_q_, sqrt_s_;
    std::vector<Vec> sp_;
    std::size_t n_track_ = 0, n_res_ = 0;
    mutable Vec cache_th_;
    mutable Mat cache_states_;
};

}  // namespace detail

/// One OCP solve at (t_now, x_now). `u_prev` is the move applied over the last
/// sampling interval; `prev_plan` (if any) seeds the warm start.
inline MpcStepResult mpc_step(const ClosedModel& controller, const Vec& x_now, double t_now, const Vec& u_prev,
                              const MpcConfig& cfg, const Mat* prev_plan = nullptr) {
    cfg.validate(controller.n_u, controller.n_z);
    if (!x_now.allFinite() || static_cast<std::size_t>(x_now.size()) != controller.n_x) {
        throw DataError("mpc_step: state must be finite with " + std::to_string(controller.n_x) + " entries");
    }
    detail::MpcShooting shoot(controller, x_now, t_now, u_prev, cfg);
    const std::size_t m = shoot.moves();
    const auto nu = static_cast<Eigen::Index>(controller.n_u);
    Vec th0(static_cast<Eigen::Index>(shoot.dim()));
    if (cfg.warm_start && prev_plan && static_cast<std::size_t>(prev_plan->rows()) == m && prev_plan->cols() == nu) {
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t src = std::min(i + 1, m - 1);
            th0.segment(static_cast<Eigen::Index>(i) * nu, nu) = prev_plan->row(static_cast<Eigen::Index>(src)).transpose();
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) th0.segment(static_cast<Eigen::Index>(i) * nu, nu) = u_prev;
    }
    ResidualProblem pb;
    pb.dim_theta = shoot.dim();
    pb.lower = Vec(cfg.u_lo.replicate(static_cast<Eigen::Index>(m), 1));
    pb.upper = Vec(cfg.u_hi.replicate(static_cast<Eigen::Index>(m), 1));
    pb.residual = [&shoot](const Vec& th) { return shoot.residual(th); };
    pb.jacobian = [&shoot](const Vec& th, const Vec& r) { return shoot.jacobian(th, r); };

    MpcStepResult res;
    try {
        LmReport rep = lm_solve(pb, th0, cfg.lm);
        res.plan.resize(static_cast<Eigen::Index>(m), nu);
        for (std::size_t i = 0; i < m; ++i) {
            res.plan.row(static_cast<Eigen::Index>(i)) = rep.theta.segment(static_cast<Eigen::Index>(i) * nu, nu).transpose();
        }
        res.u_apply = res.plan.row(0).transpose();
        res.cost = rep.cost;
        res.iterations = rep.iterations;
    } catch (const NumericalError& e) {
        res.ok = false;
        res.message = e.what();
        res.u_apply = u_prev.cwiseMax(cfg.u_lo).cwiseMin(cfg.u_hi);
        res.plan = res.u_apply.transpose().replicate(static_cast<Eigen::Index>(m), 1);
        res.cost = std::numeric_limits<double>::quiet_NaN();
    }
    return res;
}

struct ClosedLoopRecord {
    double time = 0.0;
    Vec state;
    Vec measured;
    Vec setpoint;
    Vec applied;
    double cost = 0.0;
    int iterations = 0;
    bool ok = true;
    double wall_seconds = 0.0;
};

struct ClosedLoopLog {
    std::vector<ClosedLoopRecord> records;
    bool aborted = false;
    std::string abort_reason;
};

struct MeasurementNoise {
    double sigma = 0.0;
    std::uint64_t seed = 0;
};

/// Alternates mpc_step on the measured state with one sampling interval of
/// plant integration. Full state feedback; optional Gaussian measurement noise.
inline ClosedLoopLog closed_loop(const ClosedModel& plant, const ClosedModel& controller, const MpcConfig& cfg,
                                 double duration, const Vec& x0, const Vec& u0,
                                 const IntegratorConfig& plant_integ, const MeasurementNoise& noise = {}) {
    cfg.validate(controller.n_u, controller.n_z);
    if (plant.n_x != controller.n_x || plant.n_u != controller.n_u) {
        throw DimensionError("plant and controller dimensions differ");
    }
    const auto steps = static_cast<std::size_t>(std::floor(duration / cfg.sampling + 1e-9));
    ClosedLoopLog log;
    Vec x = x0, u_prev = u0;
    Mat plan;
    const Mat* prev = nullptr;
    Vec z(static_cast<Eigen::Index>(plant.n_z));
    for (std::size_t k = 0; k <= steps; ++k) {
        const double t = cfg.sampling * static_cast<double>(k);
        Vec xm = x;
        if (noise.sigma > 0) {
            for (Eigen::Index i = 0; i < xm.size(); ++i) {
                xm[i] += noise.sigma * noise_draw(noise.seed, 0, k, static_cast<std::size_t>(i));
            }
        }
        ClosedLoopRecord rec;
        rec.time = t;
        rec.state = x;
        plant.output(xm, z);
        rec.measured = z;
        rec.setpoint = cfg.setpoint(t);
        if (k == steps) {
            rec.applied = u_prev;
            log.records.push_back(std::move(rec));
            break;
        }
        const auto w0 = std::chrono::steady_clock::now();
        MpcStepResult st = mpc_step(controller, xm, t, u_prev, cfg, prev);
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - w0).count();
        rec.applied = st.u_apply;
        rec.cost = st.cost;
        rec.iterations = st.iterations;
        rec.ok = st.ok;
        plan = std::move(st.plan);
        prev = &plan;
        u_prev = rec.applied;
        log.records.push_back(rec);
        try {
            TimeGrid g({t, t + cfg.sampling});
            auto mv = PiecewiseConstantProfile::constant(g, rec.applied);
            x = simulate_closed(plant, x, mv, g, plant_integ).states.row(1).transpose();
        } catch (const NumericalError& e) {
            log.aborted = true;
            log.abort_reason = e.what();
            break;
        }
    }
    return log;
}

}  // namespace hybridid
