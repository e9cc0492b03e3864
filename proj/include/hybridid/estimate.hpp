#pragma once

// Regularized dynamic flux estimation by single shooting: piecewise-constant
// flux profiles (and optionally x0) are fitted to one dataset with LM.

#include <variant>

#include "hybridid/integrate.hpp"
#include "hybridid/nls.hpp"

namespace hybridid {

/// Either a scalar w (meaning w*I for every interval pair) or one matrix per
/// adjacent-interval difference.
using RegWeights = std::variant<double, std::vector<Mat>>;

struct EstimationConfig {
    /// Flux discretization grid; when unset the measurement grid is coarsened by `disc_factor`.
    std::optional<TimeGrid> disc_grid;
    std::size_t disc_factor = 10;
    RegWeights w_reg = 1e-2;
    bool estimate_x0 = true;
    std::optional<std::pair<Vec, Vec>> x0_bounds;
    /// Initial flux guess: constant vector (empty means zeros) or a profile on the disc grid.
    std::variant<Vec, PiecewiseConstantProfile> p_init = Vec();
    /// Unset means RK4 with 1/10 of the smallest measurement interval.
    std::optional<IntegratorConfig> integrator;
    LmConfig lm;
};

struct EstimateResult {
    PiecewiseConstantProfile p_star;
    Vec x0_star;
    /// States and outputs on the union of measurement, disc and disc-midpoint times.
    Trajectory trajectory;
    double fit_cost = 0.0;
    double reg_cost = 0.0;
    Mat residuals;  // z_j - z~_j, N_meas x N_z
    LmReport lm;
    PiecewiseConstantProfile mv;
};

class EstimationError : public NumericalError {
public:
    EstimationError(const std::string& what, LmReport report)
        : NumericalError(what), report_(std::move(report)) {}
    const LmReport& report() const noexcept { return report_; }

private:
    LmReport report_;
};

/// Every `factor`-th point of `grid`, always keeping the last point.
inline TimeGrid coarsen_grid(const TimeGrid& grid, std::size_t factor) {
    if (factor == 0) throw ConfigError("coarsening factor must be at least 1");
    std::vector<double> p;
    for (std::size_t i = 0; i < grid.size(); i += factor) p.push_back(grid[i]);
    if (!detail::same_time(p.back(), grid.back())) p.push_back(grid.back());
    return TimeGrid(std::move(p), grid.unit());
}

namespace detail {

inline Mat reg_matrix(const RegWeights& w, std::size_t k, std::size_t n_p) {
    if (const double* s = std::get_if<double>(&w)) {
        return *s * Mat::Identity(static_cast<Eigen::Index>(n_p), static_cast<Eigen::Index>(n_p));
    }
    const auto& v = std::get<std::vector<Mat>>(w);
    if (k >= v.size()) throw DimensionError("too few regularization matrices");
    return v[k];
}

/// F with F^T F = W for a symmetric PSD W.
inline Mat weight_factor(const Mat& W) {
    if (W.isDiagonal(0.0)) {
        Mat F = Mat::Zero(W.rows(), W.cols());
        for (Eigen::Index i = 0; i < W.rows(); ++i) F(i, i) = std::sqrt(std::max(W(i, i), 0.0));
        return F;
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(W);
    Vec s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return s.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// R = sum_k (p_{k+1} - p_k)^T W_k (p_{k+1} - p_k) over adjacent interval values.
inline double regularization_value(const PiecewiseConstantProfile& p, const RegWeights& w) {
    double R = 0.0;
    for (std::size_t k = 0; k + 1 < p.intervals(); ++k) {
        Vec d = p.row(k + 1) - p.row(k);
        const Mat W = detail::reg_matrix(w, k, p.dim());
        if (W.rows() != d.size()) throw DimensionError("regularization weight shape mismatch");
        R += d.dot(W * d);
    }
    return R;
}

/// Weighted squared deviation sum_j e_j^T W_j e_j with e_j = z_j - z~_j.
inline double fit_value(const Trajectory& traj, const MeasurementDataset& ds) {
    if (traj.outputs.cols() != ds.z_meas.cols()) throw DimensionError("fit_value: output dimension mismatch");
    double F = 0.0;
    for (std::size_t j = 0; j < ds.meas_grid.size(); ++j) {
        auto i = traj.grid.find(ds.meas_grid[j]);
        if (!i) {
            throw ConsistencyError("trajectory has no sample at measurement time " +
                                   detail::fmt_time(ds.meas_grid[j]));
        }
        Vec e = traj.outputs.row(static_cast<Eigen::Index>(*i)).transpose() -
                ds.z_meas.row(static_cast<Eigen::Index>(j)).transpose();
        F += e.dot(ds.weights[j] * e);
    }
    return F;
}

namespace detail {

/// Single-shooting residual map for one dataset.
class FluxShooting {
public:
    FluxShooting(const ModelStructure& model, const MeasurementDataset& ds, TimeGrid disc,
                 const EstimationConfig& cfg, IntegratorConfig integ)
        : model_(model), ds_(ds), disc_(std::move(disc)), cfg_(cfg), integ_(integ) {
        n_p_ = model.n_p;
        n_x_ = model.n_x;
        n_z_ = model.n_z;
        K_ = disc_.intervals();
        TimeGrid mids(disc_.midpoints().size() >= 2 ? disc_.midpoints() : std::vector<double>{disc_.front(),
                                                                                             disc_.back()},
                      disc_.unit());
        out_ = grid_union({&ds.meas_grid, &disc_, &mids}, ds.meas_grid.front(), ds.meas_grid.back());
        plan_ = StepPlan::build(out_, {&ds.mv.grid(), &disc_}, integ_.max_step);
        mv_idx_ = step_intervals(plan_.steps, ds.mv.grid());
        p_idx_ = step_intervals(plan_.steps, disc_);
        for (double t : ds.meas_grid.points()) meas_step_.push_back(*plan_.steps.find(t));
        for (double t : disc_.points()) knot_step_.push_back(*plan_.steps.find(t));
        for (const Mat& W : ds.weights) meas_factor_.push_back(weight_factor(W));
        for (std::size_t k = 0; k + 1 < K_; ++k) reg_factor_.push_back(weight_factor(reg_matrix(cfg.w_reg, k, n_p_)));
        n_fit_ = ds.meas_grid.size() * n_z_;
        n_res_ = n_fit_ + (K_ > 0 ? (K_ - 1) * n_p_ : 0);
    }

    std::size_t dim() const { return K_ * n_p_ + (cfg_.estimate_x0 ? n_x_ : 0); }
    std::size_t intervals() const { return K_; }
    const StepPlan& plan() const { return plan_; }
    const TimeGrid& out_grid() const { return out_; }

    Vec x0_of(const Vec& theta) const {
        return cfg_.estimate_x0 ? Vec(theta.tail(static_cast<Eigen::Index>(n_x_))) : fixed_x0_;
    }
    void set_fixed_x0(Vec x0) { fixed_x0_ = std::move(x0); }

    /// Integrates from knot `k0` (step index knot_step_[k0]) using `base` for the earlier states.
    void simulate(const Vec& theta, std::size_t first_step, const Vec& x_start, Mat& states) const {
        Vec u(static_cast<Eigen::Index>(model_.n_u)), p(static_cast<Eigen::Index>(n_p_));
        auto f = [&](const Vec& x, double t, std::size_t k, Vec& dx) {
            u = ds_.mv.row(mv_idx_[k]);
            p = theta.segment(static_cast<Eigen::Index>(p_idx_[k] * n_p_), static_cast<Eigen::Index>(n_p_));
            model_.rhs(x, u, p, t, dx);
        };
        integrate_plan(f, x_start, plan_.steps.points(), first_step, integ_, states);
    }

    void fit_residuals(const Mat& states, std::size_t first_meas, Vec& r) const {
        Vec x(static_cast<Eigen::Index>(n_x_)), z(static_cast<Eigen::Index>(n_z_));
        for (std::size_t j = first_meas; j < meas_step_.size(); ++j) {
            x = states.row(static_cast<Eigen::Index>(meas_step_[j])).transpose();
            model_.output(x, z);
            Vec e = z - ds_.z_meas.row(static_cast<Eigen::Index>(j)).transpose();
            r.segment(static_cast<Eigen::Index>(j * n_z_), static_cast<Eigen::Index>(n_z_)) = meas_factor_[j] * e;
        }
    }

    void reg_residuals(const Vec& theta, Vec& r) const {
        for (std::size_t k = 0; k + 1 < K_; ++k) {
            Vec d = theta.segment(static_cast<Eigen::Index>((k + 1) * n_p_), static_cast<Eigen::Index>(n_p_)) -
                    theta.segment(static_cast<Eigen::Index>(k * n_p_), static_cast<Eigen::Index>(n_p_));
            r.segment(static_cast<Eigen::Index>(n_fit_ + k * n_p_), static_cast<Eigen::Index>(n_p_)) =
                reg_factor_[k] * d;
        }
    }

    Vec residual(const Vec& theta) const {
        Mat states;
        simulate(theta, 0, x0_of(theta), states);
        Vec r(static_cast<Eigen::Index>(n_res_));
        fit_residuals(states, 0, r);
        reg_residuals(theta, r);
        cache_theta_ = theta;
        cache_states_ = std::move(states);
        return r;
    }

    /// Forward differences; a flux interval only influences measurements at or
    /// after its left knot, so perturbed runs restart there from the nominal state.
    Mat jacobian(const Vec& theta, const Vec& r) const {
        if (cache_theta_.size() != theta.size() || cache_theta_ != theta) (void)residual(theta);
        const Mat nominal = cache_states_;
        Mat J = Mat::Zero(static_cast<Eigen::Index>(n_res_), theta.size());
        Vec t = theta;
        Mat states = nominal;
        Vec rp = r;
        const auto& lo = lower_;
        const auto& hi = upper_;
        for (std::size_t k = 0; k < K_; ++k) {
            const std::size_t s0 = knot_step_[k];
            std::size_t first_meas = 0;
            while (first_meas < meas_step_.size() && meas_step_[first_meas] <= s0) ++first_meas;
            for (std::size_t i = 0; i < n_p_; ++i) {
                const auto col = static_cast<Eigen::Index>(k * n_p_ + i);
                double h = 1e-6 * std::max(std::abs(theta[col]), 1.0);
                if (hi && theta[col] + h > (*hi)[col]) h = -h;
                (void)lo;
                t[col] = theta[col] + h;
                simulate(t, s0, nominal.row(static_cast<Eigen::Index>(s0)).transpose(), states);
                fit_residuals(states, first_meas, rp);
                const auto off = static_cast<Eigen::Index>(first_meas * n_z_);
                const auto len = static_cast<Eigen::Index>(n_fit_) - off;
                J.col(col).segment(off, len) = (rp.segment(off, len) - r.segment(off, len)) / h;
                t[col] = theta[col];
            }
            // Regularization residuals are linear in theta.
            for (std::size_t i = 0; i < n_p_; ++i) {
                const auto col = static_cast<Eigen::Index>(k * n_p_ + i);
                if (k + 1 < K_) {
                    J.col(col).segment(static_cast<Eigen::Index>(n_fit_ + k * n_p_), static_cast<Eigen::Index>(n_p_)) -=
                        reg_factor_[k].col(static_cast<Eigen::Index>(i));
                }
                if (k > 0) {
                    J.col(col).segment(static_cast<Eigen::Index>(n_fit_ + (k - 1) * n_p_),
                                       static_cast<Eigen::Index>(n_p_)) +=
                        reg_factor_[k - 1].col(static_cast<Eigen::Index>(i));
                }
            }
        }
        if (cfg_.estimate_x0) {
            for (std::size_t i = 0; i < n_x_; ++i) {
                const auto col = static_cast<Eigen::Index>(K_ * n_p_ + i);
                double h = 1e-6 * std::max(std::abs(theta[col]), 1.0);
                if (hi && theta[col] + h > (*hi)[col]) h = -h;
                t[col] = theta[col] + h;
                simulate(t, 0, x0_of(t), states);
                fit_residuals(states, 0, rp);
                J.col(col).head(static_cast<Eigen::Index>(n_fit_)) =
                    (rp.head(static_cast<Eigen::Index>(n_fit_)) - r.head(static_cast<Eigen::Index>(n_fit_))) / h;
                t[col] = theta[col];
            }
        }
        return J;
    }

    void set_bounds(std::optional<Vec> lo, std::optional<Vec> hi) {
        lower_ = std::move(lo);
        upper_ = std::move(hi);
    }

private:
    const ModelStructure& model_;
    const MeasurementDataset& ds_;
    TimeGrid disc_;
    const EstimationConfig& cfg_;
    IntegratorConfig integ_;
    std::size_t n_p_ = 0, n_x_ = 0, n_z_ = 0, K_ = 0, n_fit_ = 0, n_res_ = 0;
    TimeGrid out_;
    StepPlan plan_;
    std::vector<std::size_t> mv_idx_, p_idx_, meas_step_, knot_step_;
    std::vector<Mat> meas_factor_, reg_factor_;
    Vec fixed_x0_;
    std::optional<Vec> lower_, upper_;
    mutable Vec cache_theta_;
    mutable Mat cache_states_;
};

inline double min_spacing(const TimeGrid& g) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < g.size(); ++i) m = std::min(m, g[i + 1] - g[i]);
    return m;
}

}  // namespace detail

/// Default integrator for estimation: RK4 with a tenth of the smallest measurement interval.
inline IntegratorConfig default_integrator(const TimeGrid& meas) {
    IntegratorConfig c;
    c.max_step = detail::min_spacing(meas) / 10.0;
    return c;
}

/// Fits piecewise-constant flux profiles (and x0) to one dataset.
inline EstimateResult estimate_fluxes(const ModelStructure& model, const MeasurementDataset& ds,
                                      const EstimationConfig& cfg) {
    ds.validate();
    if (static_cast<std::size_t>(ds.z_meas.cols()) != model.n_z || ds.mv.dim() != model.n_u) {
        throw DimensionError("dataset dimensions do not match model " + model.id);
    }
    TimeGrid disc = cfg.disc_grid ? *cfg.disc_grid : coarsen_grid(ds.meas_grid, cfg.disc_factor);
    if (!detail::same_time(disc.front(), ds.meas_grid.front()) ||
        !detail::same_time(disc.back(), ds.meas_grid.back())) {
        throw ConfigError("flux discretization grid must start and end at the first and last measurement times");
    }
    if (const auto* mats = std::get_if<std::vector<Mat>>(&cfg.w_reg)) {
        if (mats->size() + 1 != disc.intervals()) {
            throw ConfigError("need one regularization matrix per adjacent interval pair (" +
                              std::to_string(disc.intervals() - 1) + "), got " + std::to_string(mats->size()));
        }
        for (const Mat& W : *mats) {
            if (W.rows() != static_cast<Eigen::Index>(model.n_p) || !W.isApprox(W.transpose(), 1e-10)) {
                throw ConfigError("regularization matrices must be symmetric n_p x n_p");
            }
            Eigen::SelfAdjointEigenSolver<Mat> es(W, Eigen::EigenvaluesOnly);
            if (es.eigenvalues().minCoeff() < -1e-10) throw ConfigError("regularization matrix not PSD");
        }
    } else if (std::get<double>(cfg.w_reg) < 0) {
        throw ConfigError("regularization weight must be nonnegative");
    }
    IntegratorConfig integ = cfg.integrator ? *cfg.integrator : default_integrator(ds.meas_grid);
    integ.validate();

    detail::FluxShooting shoot(model, ds, disc, cfg, integ);
    const std::size_t K = shoot.intervals();
    const auto n_p = static_cast<Eigen::Index>(model.n_p);
    const auto n_x = static_cast<Eigen::Index>(model.n_x);

    Vec x0 = model.state_from_output ? model.state_from_output(ds.z_meas.row(0).transpose()) : ds.x0_guess;
    if (x0.size() != n_x) throw DimensionError("initial state guess has wrong dimension");
    shoot.set_fixed_x0(cfg.estimate_x0 ? x0 : ds.x0_guess);

    Vec theta0(static_cast<Eigen::Index>(shoot.dim()));
    if (const auto* prof = std::get_if<PiecewiseConstantProfile>(&cfg.p_init)) {
        if (!(prof->grid() == disc) && prof->grid().points() != disc.points()) {
            throw ConfigError("initial flux profile must live on the flux discretization grid");
        }
        for (std::size_t k = 0; k < K; ++k) theta0.segment(static_cast<Eigen::Index>(k) * n_p, n_p) = prof->row(k);
    } else {
        Vec p0 = std::get<Vec>(cfg.p_init);
        if (p0.size() == 0) p0 = Vec::Zero(n_p);
        if (p0.size() != n_p) throw ConfigError("initial flux guess has wrong dimension");
        for (std::size_t k = 0; k < K; ++k) theta0.segment(static_cast<Eigen::Index>(k) * n_p, n_p) = p0;
    }
    if (cfg.estimate_x0) theta0.tail(n_x) = x0;

    std::optional<Vec> lo, hi;
    const double inf = std::numeric_limits<double>::infinity();
    if (model.p_bounds || cfg.x0_bounds) {
        lo = Vec::Constant(theta0.size(), -inf);
        hi = Vec::Constant(theta0.size(), inf);
        if (model.p_bounds) {
            for (std::size_t k = 0; k < K; ++k) {
                lo->segment(static_cast<Eigen::Index>(k) * n_p, n_p) = model.p_bounds->first;
                hi->segment(static_cast<Eigen::Index>(k) * n_p, n_p) = model.p_bounds->second;
            }
        }
        if (cfg.x0_bounds && cfg.estimate_x0) {
            lo->tail(n_x) = cfg.x0_bounds->first;
            hi->tail(n_x) = cfg.x0_bounds->second;
        }
    }
    shoot.set_bounds(lo, hi);

    ResidualProblem pb;
    pb.dim_theta = shoot.dim();
    pb.lower = lo;
    pb.upper = hi;
    pb.residual = [&shoot](const Vec& th) { return shoot.residual(th); };
    pb.jacobian = [&shoot](const Vec& th, const Vec& r) { return shoot.jacobian(th, r); };

    LmReport rep;
    try {
        rep = lm_solve(pb, theta0, cfg.lm);
    } catch (const NumericalError& e) {
        throw EstimationError(std::string("flux estimation failed: ") + e.what(), LmReport{});
    }

    EstimateResult res;
    Mat pv(static_cast<Eigen::Index>(K), n_p);
    for (std::size_t k = 0; k < K; ++k) {
        pv.row(static_cast<Eigen::Index>(k)) = rep.theta.segment(static_cast<Eigen::Index>(k) * n_p, n_p).transpose();
    }
    res.p_star = PiecewiseConstantProfile(disc, std::move(pv));
    res.x0_star = shoot.x0_of(rep.theta);
    res.mv = ds.mv;

    Mat states;
    shoot.simulate(rep.theta, 0, res.x0_star, states);
    res.trajectory = detail::sample_outputs(shoot.plan(), shoot.out_grid(), states, model.output, model.n_z);
    res.fit_cost = fit_value(res.trajectory, ds);
    res.reg_cost = regularization_value(res.p_star, cfg.w_reg);
    res.residuals.resize(ds.z_meas.rows(), ds.z_meas.cols());
    for (std::size_t j = 0; j < ds.meas_grid.size(); ++j) {
        auto i = *res.trajectory.grid.find(ds.meas_grid[j]);
        res.residuals.row(static_cast<Eigen::Index>(j)) =
            res.trajectory.outputs.row(static_cast<Eigen::Index>(i)) - ds.z_meas.row(static_cast<Eigen::Index>(j));
    }
    res.lm = std::move(rep);
    return res;
}

/// Total variation sum_k |p_{k+1} - p_k|_1 of a profile.
inline double total_variation(const PiecewiseConstantProfile& p) {
    double tv = 0.0;
    for (std::size_t k = 0; k + 1 < p.intervals(); ++k) tv += (p.row(k + 1) - p.row(k)).cwiseAbs().sum();
    return tv;
}

}  // namespace hybridid
