#pragma once

// Dense SPD solve and a box-constrained Levenberg-Marquardt solver for
// stacked residual vectors.

#include <limits>
#include <optional>

#include "hybridid/core.hpp"

namespace hybridid {

/// Cholesky solve of A x = b. Returns nullopt when A is not positive definite,
/// which tells LM to raise its damping.
inline std::optional<Vec> solve_spd(const Mat& A, const Vec& b) {
    if (A.rows() != A.cols() || A.rows() != b.size()) throw DimensionError("solve_spd: shape mismatch");
    Eigen::LLT<Mat> llt(A);
    if (llt.info() != Eigen::Success) return std::nullopt;
    Vec x = llt.solve(b);
    if (!x.allFinite()) return std::nullopt;
    return x;
}

struct ResidualProblem {
    std::function<Vec(const Vec& theta)> residual;
    std::size_t dim_theta = 0;
    std::optional<Vec> lower, upper;
    /// Optional Jacobian; gets theta and the residual already evaluated there.
    std::function<Mat(const Vec& theta, const Vec& r)> jacobian;
};

struct LmConfig {
    double lambda0 = 1e-3;
    double lambda_up = 10.0;
    double lambda_down = 0.1;
    int max_iter = 200;
    double grad_tol = 1e-8;
    double step_tol = 1e-10;
    double cost_tol = 1e-12;

    void validate() const {
        if (!(lambda0 > 0 && lambda_up > 1 && lambda_down > 0 && lambda_down < 1)) {
            throw ConfigError("LM damping factors must satisfy lambda0 > 0, lambda_down < 1 < lambda_up");
        }
        if (max_iter < 0 || !(grad_tol > 0) || !(step_tol > 0) || !(cost_tol > 0)) {
            throw ConfigError("LM tolerances must be positive");
        }
    }
};

enum class Termination { gradient, step, cost, max_iter };

inline const char* termination_name(Termination t) {
    switch (t) {
        case Termination::gradient: return "gradient";
        case Termination::step: return "step";
        case Termination::cost: return "cost";
        case Termination::max_iter: return "max_iter";
    }
    return "unknown";
}

struct LmReport {
    Vec theta;
    double cost = 0.0;  // 0.5*|r|^2
    int iterations = 0;
    int evaluations = 0;
    Termination termination = Termination::max_iter;
    std::vector<double> cost_history;  // initial cost, then every accepted step
    Vec residual;
};

inline Vec project_to_box(Vec theta, const std::optional<Vec>& lo, const std::optional<Vec>& hi) {
    if (lo) theta = theta.cwiseMax(*lo);
    if (hi) theta = theta.cwiseMin(*hi);
    return theta;
}

/// Forward differences with step 1e-6*max(|theta_i|, 1); steps backward when the
/// forward point would leave the box.
inline Mat fd_jacobian(const ResidualProblem& pb, const Vec& theta, const Vec& r) {
    Mat J(r.size(), theta.size());
    Vec t = theta;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        double h = 1e-6 * std::max(std::abs(theta[i]), 1.0);
        if (pb.upper && theta[i] + h > (*pb.upper)[i]) h = -h;
        t[i] = theta[i] + h;
        J.col(i) = (pb.residual(t) - r) / h;
        t[i] = theta[i];
    }
    return J;
}

/// Minimizes 0.5*|r(theta)|^2 inside the box with Marquardt-scaled damping.
///
/// Trial points are clamped to the box before evaluation. A residual that
/// throws NumericalError at a trial point counts as a rejected step; at the
/// initial point it is fatal.
inline LmReport lm_solve(const ResidualProblem& pb, const Vec& theta0, const LmConfig& cfg = {}) {
    cfg.validate();
    if (static_cast<std::size_t>(theta0.size()) != pb.dim_theta) throw DimensionError("lm_solve: theta0 size");
    if (pb.lower && pb.upper && ((*pb.upper - *pb.lower).array() < 0).any()) {
        throw ConfigError("lm_solve: lower bound above upper bound");
    }
    LmReport rep;
    rep.theta = project_to_box(theta0, pb.lower, pb.upper);
    try {
        rep.residual = pb.residual(rep.theta);
    } catch (const NumericalError& e) {
        throw NumericalError(std::string("residual evaluation failed at the initial point: ") + e.what());
    }
    ++rep.evaluations;
    if (rep.residual.size() < 1) throw DimensionError("lm_solve: empty residual");
    if (!rep.residual.allFinite()) throw NumericalError("non-finite residual at the initial point");
    rep.cost = 0.5 * rep.residual.squaredNorm();
    rep.cost_history.push_back(rep.cost);

    double lambda = cfg.lambda0;
    for (;;) {
        if (rep.iterations >= cfg.max_iter) {
            rep.termination = Termination::max_iter;
            return rep;
        }
        Mat J = pb.jacobian ? pb.jacobian(rep.theta, rep.residual) : fd_jacobian(pb, rep.theta, rep.residual);
        Vec g = J.transpose() * rep.residual;
        if (g.cwiseAbs().maxCoeff() <= cfg.grad_tol) {
            rep.termination = Termination::gradient;
            return rep;
        }
        ++rep.iterations;
        Mat A(J.cols(), J.cols());
        A.setZero();
        A.selfadjointView<Eigen::Lower>().rankUpdate(J.transpose());
        A = A.selfadjointView<Eigen::Lower>();
        Vec d = A.diagonal();
        const double dmax = std::max(d.maxCoeff(), std::numeric_limits<double>::min());
        for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = std::max(d[i], 1e-12 * dmax);

        bool accepted = false;
        while (!accepted) {
            if (lambda > 1e20) {
                rep.termination = Termination::step;
                return rep;
            }
            Mat M = A;
            M.diagonal() += lambda * d;
            auto delta = solve_spd(M, -g);
            if (!delta) {
                lambda *= cfg.lambda_up;
                continue;
            }
            Vec trial = project_to_box(rep.theta + *delta, pb.lower, pb.upper);
            const double step = (trial - rep.theta).norm();
            if (step <= cfg.step_tol * (rep.theta.norm() + cfg.step_tol)) {
                rep.termination = Termination::step;
                return rep;
            }
            Vec r_trial;
            try {
                r_trial = pb.residual(trial);
                ++rep.evaluations;
            } catch (const NumericalError&) {
                ++rep.evaluations;
                lambda *= cfg.lambda_up;
                continue;
            }
            const double c_trial = r_trial.allFinite() ? 0.5 * r_trial.squaredNorm()
                                                       : std::numeric_limits<double>::infinity();
            if (c_trial < rep.cost) {
                const double decrease = rep.cost - c_trial;
                const double before = rep.cost;
                rep.theta = std::move(trial);
                rep.residual = std::move(r_trial);
                rep.cost = c_trial;
                rep.cost_history.push_back(c_trial);
                lambda = std::max(lambda * cfg.lambda_down, 1e-20);
                accepted = true;
                if (decrease <= cfg.cost_tol * before) {
                    rep.termination = Termination::cost;
                    return rep;
                }
            } else {
                lambda *= cfg.lambda_up;
            }
        }
    }
}

}  // namespace hybridid
