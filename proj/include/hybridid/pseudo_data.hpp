#pragma once

// Scenario design for the built-in case studies and noisy pseudo-measurement generation.

#include <cstdint>
#include <random>

#include "hybridid/integrate.hpp"
#include "hybridid/models.hpp"

namespace hybridid {

struct Scenario {
    Vec x0;
    PiecewiseConstantProfile mv;
};

namespace detail {

inline std::mt19937_64 seeded_engine(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
    std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    for (std::uint64_t s : stream) {
        words.push_back(static_cast<std::uint32_t>(s));
        words.push_back(static_cast<std::uint32_t>(s >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

// Stream tags keep the RNG streams of different consumers apart.
inline constexpr std::uint64_t kCstrScenarioTag = 0x43535452;
inline constexpr std::uint64_t kTankScenarioTag = 0x54414e4b;
inline constexpr std::uint64_t kNoiseTag = 0x4e4f4953;

}  // namespace detail

/// Steady (c, T) of the CSTR at level h and coolant temperature Tc with
/// balanced flows, found by integrating from a low-temperature start.
inline Vec cstr_steady_state(double h, double Tc, const CstrParams& P = {}) {
    Vec x(3);
    x << h, 0.9, Tc + 20.0;
    Vec u(2);
    u << P.F0, Tc;
    const double dt = 0.05;
    for (int i = 0; i < 8000; ++i) {
        Vec k1 = cstr_truth_rhs(x, u, P);
        Vec k2 = cstr_truth_rhs(x + 0.5 * dt * k1, u, P);
        Vec k3 = cstr_truth_rhs(x + 0.5 * dt * k2, u, P);
        Vec k4 = cstr_truth_rhs(x + dt * k3, u, P);
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return x;
}

/// Load-campaign excitation for the CSTR.
///
/// Each scenario starts at the steady state of its initial coolant
/// temperature and moves in `segment`-long steps toward a high-load (even
/// index) or low-load (odd index) region: the level target ramps by
/// `level_excursion`, the coolant temperature trends by `tc_excursion` with a
/// random component, and F_out is the constant outflow that brings the level
/// onto its target over each segment. The level is a pure integrator in
/// F_out, so free random F_out steps would drain or flood the reactor.
struct CstrScenarioConfig {
    double span = 1200.0;  // min
    double segment = 60.0;
    double level_nominal = 0.7;
    double level_excursion = 0.05;
    double tc_nominal = 295.0;
    double tc_excursion = 5.0;
    double tc_trend = 0.5;
    double level0_spread = 0.005;
    double tc0_spread = 1.0;
};

inline Scenario cstr_campaign_scenario(std::size_t index, std::uint64_t seed, const CstrScenarioConfig& cfg = {},
                                       const CstrParams& P = {}) {
    auto rng = detail::seeded_engine(seed, {detail::kCstrScenarioTag, index});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double dir = (index % 2 == 0) ? 1.0 : -1.0;
    const auto n_seg = static_cast<std::size_t>(std::llround(cfg.span / cfg.segment));
    if (n_seg == 0) throw ConfigError("CSTR scenario span shorter than one segment");

    const double h0 = cfg.level_nominal + cfg.level0_spread * (2.0 * unit(rng) - 1.0);
    const double tc0 = cfg.tc_nominal + cfg.tc0_spread * (2.0 * unit(rng) - 1.0);
    Vec x0 = cstr_steady_state(h0, tc0, P);

    TimeGrid grid = TimeGrid::uniform(0.0, cfg.span, n_seg, "min");
    Mat mv(static_cast<Eigen::Index>(n_seg), 2);
    double level = h0;
    const double seg_len = cfg.span / static_cast<double>(n_seg);
    for (std::size_t k = 0; k < n_seg; ++k) {
        const double progress = static_cast<double>(k + 1) / static_cast<double>(n_seg);
        const double target = cfg.level_nominal + dir * cfg.level_excursion * progress;
        const auto row = static_cast<Eigen::Index>(k);
        mv(row, 0) = P.F0 - P.area() * (target - level) / seg_len;
        mv(row, 1) =
            tc0 + dir * cfg.tc_excursion * (cfg.tc_trend * progress + (1.0 - cfg.tc_trend) * unit(rng));
        level = target;
    }
    return {x0, PiecewiseConstantProfile(std::move(grid), std::move(mv))};
}

/// Random piecewise-constant feed steps for the tank plant, starting at the
/// steady state of a random initial operating point.
struct TankScenarioConfig {
    double span = 900.0;  // s
    double segment = 60.0;
    double flow_lo = 0.01, flow_hi = 0.04;
    double reservoir_nominal = 5.0;
    double reservoir_spread = 1.0;
};

inline Vec tank_steady_state(double F1, double F3, double hres, const TankParams& P = {}) {
    Vec x(4);
    x[0] = (F1 / P.c12) * (F1 / P.c12);
    x[1] = (F1 / P.c23) * (F1 / P.c23);
    x[2] = ((F1 + F3) / P.c3r) * ((F1 + F3) / P.c3r);
    x[3] = hres;
    return x;
}

inline Scenario tank_scenario(std::size_t index, std::uint64_t seed, const TankScenarioConfig& cfg = {},
                              const TankParams& P = {}) {
    auto rng = detail::seeded_engine(seed, {detail::kTankScenarioTag, index});
    std::uniform_real_distribution<double> flow(cfg.flow_lo, cfg.flow_hi);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const auto n_seg = static_cast<std::size_t>(std::llround(cfg.span / cfg.segment));
    if (n_seg == 0) throw ConfigError("tank scenario span shorter than one segment");
    const double F1 = flow(rng), F3 = flow(rng);
    Vec x0 = tank_steady_state(F1, F3, cfg.reservoir_nominal + cfg.reservoir_spread * unit(rng), P);
    Mat mv(static_cast<Eigen::Index>(n_seg), 2);
    for (Eigen::Index k = 0; k < mv.rows(); ++k) {
        mv(k, 0) = flow(rng);
        mv(k, 1) = flow(rng);
    }
    return {x0, PiecewiseConstantProfile(TimeGrid::uniform(0.0, cfg.span, n_seg, "s"), std::move(mv))};
}

struct NoiseConfig {
    enum class Mode { relative, absolute };
    Mode mode = Mode::relative;
    /// Relative mode: sigma = level*|z|. Absolute mode: sigma = level.
    double level = 0.02;
};

struct PseudoData {
    std::vector<MeasurementDataset> datasets;
    std::vector<Trajectory> truth;  // noise-free trajectories on the measurement grids
};

/// Standard normal draw tied to (seed, scenario, sample, channel); independent of call order.
inline double noise_draw(std::uint64_t seed, std::size_t scenario, std::size_t sample, std::size_t channel) {
    auto rng = detail::seeded_engine(seed, {detail::kNoiseTag, scenario, sample, channel});
    std::normal_distribution<double> n01(0.0, 1.0);
    return n01(rng);
}

inline std::vector<Mat> noise_weights(const Mat& z, const NoiseConfig& noise) {
    if (noise.mode == NoiseConfig::Mode::relative) return relative_noise_weights(z, noise.level);
    const double s = std::max(noise.level, 1e-6);
    return absolute_noise_weights(static_cast<std::size_t>(z.rows()), Vec::Constant(z.cols(), s));
}

/// Simulates every scenario with the ground truth and perturbs the outputs.
inline PseudoData generate_pseudo_data(const TruthModel& truth, const std::vector<Scenario>& scenarios,
                                       double meas_period, const NoiseConfig& noise, std::uint64_t seed,
                                       const IntegratorConfig& integ) {
    if (scenarios.empty()) throw ConfigError("generate_pseudo_data: no scenarios");
    if (!(noise.level >= 0.0)) throw ConfigError("noise level must be nonnegative");
    PseudoData out;
    const ClosedModel model = truth.closed();
    const auto& S = truth.structure;
    for (std::size_t s = 0; s < scenarios.size(); ++s) {
        const Scenario& sc = scenarios[s];
        TimeGrid meas =
            TimeGrid::with_period(sc.mv.grid().front(), sc.mv.grid().back(), meas_period, S.time_unit);
        Trajectory tr;
        try {
            tr = simulate_closed(model, sc.x0, sc.mv, meas, integ);
        } catch (const NumericalError& e) {
            throw NumericalError("scenario " + std::to_string(s) + ": " + e.what());
        }
        MeasurementDataset ds;
        ds.meas_grid = meas;
        ds.z_meas = tr.outputs;
        for (Eigen::Index j = 0; j < ds.z_meas.rows(); ++j) {
            for (Eigen::Index i = 0; i < ds.z_meas.cols(); ++i) {
                const double xi = noise.level == 0.0 ? 0.0
                                                     : noise_draw(seed, s, static_cast<std::size_t>(j),
                                                                  static_cast<std::size_t>(i));
                if (noise.mode == NoiseConfig::Mode::relative) {
                    ds.z_meas(j, i) = tr.outputs(j, i) * (1.0 + noise.level * xi);
                } else {
                    ds.z_meas(j, i) = tr.outputs(j, i) + noise.level * xi;
                }
            }
        }
        ds.weights = noise_weights(ds.z_meas, noise);
        ds.mv = sc.mv;
        ds.x0_guess = S.state_from_output ? S.state_from_output(ds.z_meas.row(0).transpose()) : sc.x0;
        for (const auto& v : S.outputs) ds.output_labels.push_back(v.name);
        for (const auto& v : S.inputs) ds.mv_labels.push_back(v.name);
        out.datasets.push_back(std::move(ds));
        out.truth.push_back(std::move(tr));
    }
    return out;
}

}  // namespace hybridid
