#pragma once

// Built-in benchmark models: the jacketed CSTR (time in minutes) and the
// three-tank/reservoir plant (time in seconds). Each comes as a hybrid
// structure with open flux slots plus a ground-truth flux law.

#include <cmath>
#include <numbers>

#include "hybridid/core.hpp"

namespace hybridid {

/// CSTR constants: m, min, K, kmol, kJ.
struct CstrParams {
    double F0 = 0.1;      // m^3/min
    double T0 = 350.0;    // K
    double c0 = 1.0;      // kmol/m^3
    double r = 0.219;     // m
    double k0 = 7.2e10;   // 1/min
    double E_R = 8750.0;  // K
    double U = 54.94;     // kJ/(min m^2 K)
    double rho = 1000.0;  // kg/m^3
    double Cp = 0.239;    // kJ/(kg K)
    double dH = -5.0e4;   // kJ/kmol

    double area() const { return std::numbers::pi * r * r; }
    double reaction_rate(double T) const { return k0 * std::exp(-E_R / T); }
};

namespace detail {

inline void require_cstr_domain(const Vec& x) {
    if (!(x[0] > 0.0)) throw DomainError("CSTR level h must be positive, got " + fmt_time(x[0]));
    if (!(x[2] > 0.0)) throw DomainError("CSTR temperature T must be positive, got " + fmt_time(x[2]));
}

}  // namespace detail

/// Full mechanistic CSTR: x = (h, c, T), u = (F_out, T_c).
inline Vec cstr_truth_rhs(const Vec& x, const Vec& u, const CstrParams& P = {}) {
    detail::require_cstr_domain(x);
    const double h = x[0], c = x[1], T = x[2];
    const double F_out = u[0], Tc = u[1];
    const double A = P.area();
    const double rate = P.reaction_rate(T) * c;
    Vec dx(3);
    dx[0] = (P.F0 - F_out) / A;
    dx[1] = P.F0 * (P.c0 - c) / (A * h) - rate;
    dx[2] = P.F0 * (P.T0 - T) / (A * h) - P.dH / (P.rho * P.Cp) * rate +
            2.0 * P.U / (P.r * P.rho * P.Cp) * (Tc - T);
    return dx;
}

/// The fluxes the hybrid CSTR structure leaves open, evaluated with the true kinetics.
inline void cstr_true_fluxes(const Vec& x, const Vec& u, Vec& p, const CstrParams& P = {}) {
    detail::require_cstr_domain(x);
    const double c = x[1], T = x[2], Tc = u[1];
    const double rate = P.reaction_rate(T) * c;
    p.resize(3);
    p[0] = 0.0;
    p[1] = -rate;
    p[2] = -P.dH / (P.rho * P.Cp) * rate + 2.0 * P.U / (P.r * P.rho * P.Cp) * (Tc - T);
}

/// Hybrid CSTR structure: only the flow terms are known; p1..p3 are additive fluxes.
inline ModelStructure cstr_structure(const CstrParams& P = {}) {
    ModelStructure m;
    m.id = "cstr";
    m.time_unit = "min";
    m.n_x = 3;
    m.n_u = 2;
    m.n_p = 3;
    m.n_z = 3;
    m.states = {{"h", "m"}, {"c", "kmol/m3"}, {"T", "K"}};
    m.inputs = {{"F_out", "m3/min"}, {"T_c", "K"}};
    m.fluxes = {{"p1", "m/min"}, {"p2", "kmol/(m3 min)"}, {"p3", "K/min"}};
    m.outputs = m.states;
    m.rhs = [P](const Vec& x, const Vec& u, const Vec& p, double, Vec& dx) {
        if (!(x[0] > 0.0)) throw DomainError("CSTR level h must be positive, got " + detail::fmt_time(x[0]));
        const double A = P.area();
        const double h = x[0];
        dx.resize(3);
        dx[0] = (P.F0 - u[0]) / A + p[0];
        dx[1] = P.F0 * (P.c0 - x[1]) / (A * h) + p[1];
        dx[2] = P.F0 * (P.T0 - x[2]) / (A * h) + p[2];
    };
    m.output = [](const Vec& x, Vec& z) { z = x; };
    m.state_from_output = [](const Vec& z) { return z; };
    return m;
}

inline TruthModel cstr_truth(const CstrParams& P = {}) {
    return {cstr_structure(P), [P](const Vec& x, const Vec& u, double, Vec& p) { cstr_true_fluxes(x, u, p, P); }};
}

/// Torricelli outflow coefficients, holdup^(1/2)/s.
struct TankParams {
    double c12 = 0.05;
    double c23 = 0.05;
    double c3r = 0.05;
};

namespace detail {

inline void require_tank_domain(const Vec& x) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (x[i] < 0.0) throw DomainError("negative tank holdup at index " + std::to_string(i));
    }
}

}  // namespace detail

/// Inter-tank flows F12, F23, F3r for holdups x = (h1, h2, h3, hres).
inline void tank_true_fluxes(const Vec& x, const Vec&, Vec& p, const TankParams& P = {}) {
    detail::require_tank_domain(x);
    const double F12 = P.c12 * std::sqrt(x[0]);
    const double F23 = P.c23 * std::sqrt(x[1]);
    const double F3r = P.c3r * std::sqrt(x[2]);
    p.resize(4);
    p[0] = -F12;
    p[1] = F12 - F23;
    p[2] = F23 - F3r;
    p[3] = F3r;
}

/// Full three-tank mass balance with Torricelli flows; u = (F1_in, F3_in).
inline Vec tank_truth_rhs(const Vec& x, const Vec& u, const TankParams& P = {}) {
    detail::require_tank_domain(x);
    const double F12 = P.c12 * std::sqrt(x[0]);
    const double F23 = P.c23 * std::sqrt(x[1]);
    const double F3r = P.c3r * std::sqrt(x[2]);
    Vec dx(4);
    dx[0] = u[0] - F12;
    dx[1] = F12 - F23;
    dx[2] = u[1] + F23 - F3r;
    dx[3] = F3r - u[0] - u[1];
    return dx;
}

/// Hybrid tank structure: mass balances known, every inter-tank flow is a flux.
inline ModelStructure tank_structure() {
    ModelStructure m;
    m.id = "three-tank";
    m.time_unit = "s";
    m.n_x = 4;
    m.n_u = 2;
    m.n_p = 4;
    m.n_z = 4;
    m.states = {{"h1", "holdup"}, {"h2", "holdup"}, {"h3", "holdup"}, {"hres", "holdup"}};
    m.inputs = {{"F1_in", "holdup/s"}, {"F3_in", "holdup/s"}};
    m.fluxes = {{"p1", "holdup/s"}, {"p2", "holdup/s"}, {"p3", "holdup/s"}, {"p4", "holdup/s"}};
    m.outputs = m.states;
    m.rhs = [](const Vec&, const Vec& u, const Vec& p, double, Vec& dx) {
        dx.resize(4);
        dx[0] = u[0] + p[0];
        dx[1] = p[1];
        dx[2] = u[1] + p[2];
        dx[3] = -u[0] - u[1] + p[3];
    };
    m.output = [](const Vec& x, Vec& z) { z = x; };
    m.state_from_output = [](const Vec& z) { return z; };
    return m;
}

inline TruthModel tank_truth(const TankParams& P = {}) {
    return {tank_structure(), [P](const Vec& x, const Vec& u, double, Vec& p) { tank_true_fluxes(x, u, p, P); }};
}

}  // namespace hybridid
