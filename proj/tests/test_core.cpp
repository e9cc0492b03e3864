// Time grids, profiles, integration, ground-truth models, pseudo-data and CSV I/O.

#include <gtest/gtest.h>

#include <numeric>

#include "hybridid/io.hpp"

using namespace hybridid;

namespace {

Vec v(std::initializer_list<double> xs) {
    Vec out(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) out[i++] = x;
    return out;
}

PiecewiseConstantProfile five_seven() {
    Mat m(2, 1);
    m << 5, 7;
    return {TimeGrid({0.0, 1.0, 2.0}), m};
}

// dx/dt = -x with no inputs and no fluxes.
ClosedModel decay(double rate = 1.0) {
    ClosedModel m;
    m.n_x = 1;
    m.n_u = 1;
    m.n_z = 1;
    m.rhs = [rate](const Vec& x, const Vec&, double, Vec& dx) { dx = -rate * x; };
    m.output = [](const Vec& x, Vec& z) { z = x; };
    return m;
}

PiecewiseConstantProfile zero_mv(double t0, double t1) { return PiecewiseConstantProfile::constant(TimeGrid({t0, t1}), v({0.0})); }

}  // namespace

TEST(TimeGrid, RejectsNonIncreasingPoints) {
    EXPECT_THROW(TimeGrid({0.0, 0.0, 1.0}), ConfigError);
    EXPECT_THROW(TimeGrid({0.0}), ConfigError);
}

TEST(Profile, IntervalMembershipAndKnots) {
    const auto p = five_seven();
    EXPECT_EQ(p.eval(0.5)[0], 5.0);
    EXPECT_EQ(p.eval(1.0)[0], 7.0);
    EXPECT_EQ(p.eval(2.0)[0], 7.0);
    EXPECT_EQ(p.eval(0.0)[0], 5.0);
}

TEST(Profile, OutOfRangeNamesTheTime) {
    const auto p = five_seven();
    try {
        p.eval(2.5);
        FAIL() << "expected RangeError";
    } catch (const RangeError& e) {
        EXPECT_NE(std::string(e.what()).find("2.5"), std::string::npos);
    }
}

TEST(Profile, PiecewiseConstantWithinIntervals) {
    const auto p = five_seven();
    for (double t = 0.0; t < 1.0; t += 0.125) EXPECT_EQ(p.eval(t), p.eval(0.0));
    for (double t = 1.0; t < 2.0; t += 0.125) EXPECT_EQ(p.eval(t), p.eval(1.0));
}

TEST(GridRefine, SubdividesUniformly) {
    EXPECT_EQ(grid_refine(TimeGrid({0.0, 10.0}), 5.0).points(), (std::vector<double>{0, 5, 10}));
    const auto g = grid_refine(TimeGrid({0.0, 10.0}), 4.0);
    ASSERT_EQ(g.size(), 4u);
    EXPECT_NEAR(g[1], 10.0 / 3.0, 1e-15);
    EXPECT_NEAR(g[2], 20.0 / 3.0, 1e-15);
    EXPECT_EQ(grid_refine(TimeGrid({0.0, 1.0, 2.0}), 10.0).points(), (std::vector<double>{0, 1, 2}));
}

TEST(GridRefine, SupersetAndFixpoint) {
    const TimeGrid g({0.0, 0.3, 1.7, 2.0, 5.5});
    const auto r = grid_refine(g, 0.4);
    for (double t : g.points()) EXPECT_TRUE(r.find(t).has_value());
    for (std::size_t i = 0; i + 1 < r.size(); ++i) EXPECT_LE(r[i + 1] - r[i], 0.4 + 1e-12);
    EXPECT_EQ(grid_refine(r, 0.4).points(), r.points());
}

TEST(Simulate, DecayMatchesExponential) {
    IntegratorConfig cfg;
    cfg.max_step = 0.01;
    const auto tr = simulate_closed(decay(), v({1.0}), zero_mv(0, 1), TimeGrid({0.0, 1.0}), cfg);
    EXPECT_NEAR(tr.states(1, 0), std::exp(-1.0), 1e-8);
}

TEST(Simulate, Rk4ObservedOrder) {
    std::vector<double> err;
    for (double h : {0.1, 0.05, 0.025}) {
        IntegratorConfig cfg;
        cfg.max_step = h;
        const auto tr = simulate_closed(decay(), v({1.0}), zero_mv(0, 1), TimeGrid({0.0, 1.0}), cfg);
        err.push_back(std::abs(tr.states(1, 0) - std::exp(-1.0)));
    }
    EXPECT_GE(std::log2(err[0] / err[1]), 3.8);
    EXPECT_GE(std::log2(err[1] / err[2]), 3.8);
}

TEST(Simulate, ImplicitEulerStableOnStiffDecay) {
    IntegratorConfig cfg;
    cfg.method = IntegratorConfig::Method::implicit_euler;
    cfg.max_step = 0.1;
    const auto tr = simulate_closed(decay(1000.0), v({1.0}), zero_mv(0, 2), TimeGrid::uniform(0, 2, 20), cfg);
    for (Eigen::Index i = 1; i < tr.states.rows(); ++i) {
        EXPECT_GE(tr.states(i, 0), 0.0);
        EXPECT_LE(tr.states(i, 0), tr.states(i - 1, 0));
    }
    EXPECT_LT(tr.states(tr.states.rows() - 1, 0), 1e-10);
}

TEST(Simulate, SubgridEqualsSubsampledFullGrid) {
    const TruthModel truth = cstr_truth();
    IntegratorConfig cfg;
    cfg.max_step = 0.05;
    const Scenario sc = cstr_campaign_scenario(0, 3);
    const TimeGrid full = TimeGrid::with_period(0, 120, 1.0, "min");
    const TimeGrid sub = TimeGrid::with_period(0, 120, 10.0, "min");
    const auto a = simulate_closed(truth.closed(), sc.x0, sc.mv, full, cfg);
    const auto b = simulate_closed(truth.closed(), sc.x0, sc.mv, sub, cfg);
    for (std::size_t j = 0; j < sub.size(); ++j) {
        EXPECT_EQ(b.states.row(static_cast<Eigen::Index>(j)), a.states.row(static_cast<Eigen::Index>(*full.find(sub[j]))));
    }
}

TEST(Simulate, IntegrationFailureCarriesTime) {
    ClosedModel m = decay();
    m.rhs = [](const Vec& x, const Vec&, double t, Vec& dx) {
        dx = x;
        if (t > 0.5) dx[0] = std::numeric_limits<double>::infinity();
    };
    IntegratorConfig cfg;
    try {
        simulate_closed(m, v({1.0}), zero_mv(0, 1), TimeGrid({0.0, 1.0}), cfg);
        FAIL() << "expected IntegrationError";
    } catch (const IntegrationError& e) {
        EXPECT_GT(e.time(), 0.5);
    }
}

TEST(Cstr, ArrheniusRateAndTrueFluxes) {
    const CstrParams P;
    const double rate = P.k0 * std::exp(-P.E_R / 350.0);
    EXPECT_NEAR(rate, 0.99993, 5e-6);
    Vec p;
    cstr_true_fluxes(v({0.7, 0.5, 350.0}), v({0.1, 300.0}), p);
    EXPECT_EQ(p[0], 0.0);
    EXPECT_NEAR(p[1], -0.5 * rate, 1e-12);
    const double expect3 = (-P.dH / (P.rho * P.Cp)) * rate * 0.5 + 2 * P.U / (P.r * P.rho * P.Cp) * (300.0 - 350.0);
    EXPECT_NEAR(p[2], expect3, 1e-9);
    EXPECT_NEAR(p[2], -0.37, 0.01);
}

TEST(Cstr, BalancedOutflowKeepsLevel) {
    IntegratorConfig cfg;
    cfg.max_step = 0.05;
    const auto mv = PiecewiseConstantProfile::constant(TimeGrid({0.0, 60.0}, "min"), v({0.1, 300.0}));
    const auto tr = simulate_closed(cstr_truth().closed(), v({0.7, 0.5, 340.0}), mv, TimeGrid::uniform(0, 60, 6), cfg);
    for (Eigen::Index i = 0; i < tr.states.rows(); ++i) EXPECT_NEAR(tr.states(i, 0), 0.7, 1e-12);
}

TEST(Cstr, DomainViolationSignals) {
    EXPECT_THROW(cstr_truth_rhs(v({0.0, 0.5, 350.0}), v({0.1, 300.0})), DomainError);
    EXPECT_THROW(cstr_truth_rhs(v({0.7, 0.5, -1.0}), v({0.1, 300.0})), DomainError);
}

TEST(Tank, ZeroFlowEquilibrium) {
    EXPECT_EQ(tank_truth_rhs(Vec::Zero(4), Vec::Zero(2)), Vec::Zero(4));
    IntegratorConfig cfg;
    const auto mv = PiecewiseConstantProfile::constant(TimeGrid({0.0, 100.0}), Vec::Zero(2));
    const auto tr = simulate_closed(tank_truth().closed(), Vec::Zero(4), mv, TimeGrid::uniform(0, 100, 10), cfg);
    EXPECT_EQ(tr.states.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Tank, TorricelliFlowAndConservation) {
    Vec p;
    tank_true_fluxes(v({1.0, 0.0, 0.0, 0.0}), Vec::Zero(2), p);
    EXPECT_NEAR(-p[0], 0.05, 1e-15);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(0.0, 2.0);
    for (int i = 0; i < 100; ++i) {
        const Vec dx = tank_truth_rhs(v({U(rng), U(rng), U(rng), U(rng)}), v({U(rng) * 0.02, U(rng) * 0.02}));
        EXPECT_NEAR(dx.sum(), 0.0, 1e-16);
    }
    EXPECT_THROW(tank_truth_rhs(v({-0.1, 0, 0, 0}), Vec::Zero(2)), DomainError);
}

TEST(Tank, MassConservedPerStep) {
    const Scenario sc = tank_scenario(0, 7);
    const TimeGrid steps = grid_refine(grid_union({&sc.mv.grid()}, 0, 900), 0.5);
    const auto idx = detail::step_intervals(steps, sc.mv.grid());
    const auto truth = tank_truth().closed();
    Mat states;
    integrate_plan([&](const Vec& x, double t, std::size_t k, Vec& dx) { truth.rhs(x, sc.mv.row(idx[k]), t, dx); },
                   sc.x0, steps.points(), 0, IntegratorConfig{}, states);
    double worst = 0;
    for (Eigen::Index i = 1; i < states.rows(); ++i) worst = std::max(worst, std::abs(states.row(i).sum() - states.row(i - 1).sum()));
    EXPECT_LE(worst, 1e-9);
}

TEST(PseudoData, ZeroNoiseIsIdentity) {
    const auto truth = cstr_truth();
    IntegratorConfig cfg;
    cfg.max_step = 0.05;
    NoiseConfig noise;
    noise.level = 0.0;
    const auto pd = generate_pseudo_data(truth, {cstr_campaign_scenario(0, 1)}, 1.0, noise, 1, cfg);
    EXPECT_EQ(pd.datasets[0].z_meas, pd.truth[0].outputs);
}

TEST(PseudoData, SeededRunsAreBitIdentical) {
    const auto truth = tank_truth();
    const std::vector<Scenario> sc{tank_scenario(0, 5), tank_scenario(1, 5)};
    const auto a = generate_pseudo_data(truth, sc, 2.0, NoiseConfig{}, 5, IntegratorConfig{});
    const auto b = generate_pseudo_data(truth, sc, 2.0, NoiseConfig{}, 5, IntegratorConfig{});
    for (std::size_t d = 0; d < 2; ++d) EXPECT_EQ(a.datasets[d].z_meas, b.datasets[d].z_meas);
}

TEST(PseudoData, RelativeNoiseStd) {
    double s = 0, ss = 0;
    const int n = 10000;
    for (int j = 0; j < n; ++j) {
        const double z = 1.0 * (1.0 + 0.02 * noise_draw(9, 0, static_cast<std::size_t>(j), 0));
        s += z;
        ss += z * z;
    }
    const double mean = s / n, sd = std::sqrt((ss - n * mean * mean) / (n - 1));
    EXPECT_GE(sd, 0.019);
    EXPECT_LE(sd, 0.021);
}

TEST(PseudoData, CampaignScenariosStayInDomain) {
    const auto truth = cstr_truth();
    IntegratorConfig cfg;
    cfg.max_step = 0.05;
    std::vector<Scenario> sc;
    for (std::size_t i = 0; i < 4; ++i) sc.push_back(cstr_campaign_scenario(i, 21));
    NoiseConfig noise;
    noise.level = 0;
    const auto pd = generate_pseudo_data(truth, sc, 5.0, noise, 21, cfg);
    for (const auto& tr : pd.truth) {
        EXPECT_GT(tr.states.col(0).minCoeff(), 0.5);
        EXPECT_LT(tr.states.col(2).maxCoeff(), 400.0);
    }
}

TEST(Io, ShortestRoundTripDoubles) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-1e6, 1e6);
    for (int i = 0; i < 1000; ++i) {
        const double x = U(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
        EXPECT_EQ(parse_double(fmt_double(x), "test"), x);
    }
    EXPECT_EQ(fmt_double(0.1), "0.1");
}

TEST(Io, DatasetCsvRoundTripIsByteIdentical) {
    const auto model = tank_structure();
    const auto pd = generate_pseudo_data(tank_truth(), {tank_scenario(0, 2)}, 2.0, NoiseConfig{}, 2, IntegratorConfig{});
    const fs::path dir = fs::temp_directory_path() / "hybridid_io_test";
    fs::remove_all(dir);
    const auto a = dataset_paths(dir, "a"), b = dataset_paths(dir, "b");
    write_dataset(a, pd.datasets[0], model, "# config_hash=0;seed=2");
    const auto back = read_dataset(a, model, NoiseConfig{});
    write_dataset(b, back, model, "# config_hash=0;seed=2");
    EXPECT_EQ(read_file(a.csv), read_file(b.csv));
    EXPECT_EQ(read_file(a.knots), read_file(b.knots));
    EXPECT_EQ(back.z_meas, pd.datasets[0].z_meas);
    EXPECT_NE(read_file(a.csv).find("h1[holdup]"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Io, MissingArtifactIsDependencyError) {
    EXPECT_THROW(read_file("/nonexistent/dir/file.csv"), DependencyError);
    EXPECT_THROW(require_file("/nonexistent/x.json", "gen-data"), DependencyError);
}

TEST(Io, MalformedCsvIsDataError) {
    EXPECT_THROW(parse_csv("a,b\n1,2\n3\n", "x"), DataError);
    EXPECT_THROW(parse_csv("a,b\n1,zz\n", "x"), DataError);
}

TEST(Io, Fnv1aKnownValues) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}
