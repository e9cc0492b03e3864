// Flux tables, Pearson screening, MLP training and hybrid assembly.

#include <gtest/gtest.h>

#include <random>

#include "hybridid/analyze.hpp"
#include "hybridid/hybrid.hpp"
#include "hybridid/pseudo_data.hpp"

using namespace hybridid;

namespace {

Vec v(std::initializer_list<double> xs) {
    Vec out(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) out[i++] = x;
    return out;
}

FluxTable table_of(const std::vector<std::string>& states, const std::vector<std::string>& fluxes, Mat data) {
    FluxTable t;
    t.columns = states;
    t.columns.insert(t.columns.end(), fluxes.begin(), fluxes.end());
    t.n_states = states.size();
    t.n_fluxes = fluxes.size();
    t.data = std::move(data);
    return t;
}

double naive_pearson(const Vec& a, const Vec& b) {
    const double n = static_cast<double>(a.size());
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        sa += a[i];
        sb += b[i];
        saa += a[i] * a[i];
        sbb += b[i] * b[i];
        sab += a[i] * b[i];
    }
    return (n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb));
}

Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
    return m;
}

MlpSpec spec(std::vector<std::size_t> sizes, std::vector<Activation> acts, double dropout = 0.0, std::uint64_t seed = 1) {
    MlpSpec s;
    s.layer_sizes = std::move(sizes);
    s.activations = std::move(acts);
    s.dropout_rate = dropout;
    s.seed = seed;
    return s;
}

// Table with y = 2 a - b + 0.5 and an unrelated column c.
FluxTable linear_table(Eigen::Index n) {
    Mat d = random_mat(n, 4, 9);
    for (Eigen::Index i = 0; i < n; ++i) d(i, 3) = 2.0 * d(i, 0) - d(i, 1) + 0.5;
    return table_of({"a", "b", "c"}, {"y"}, d);
}

}  // namespace

TEST(Pearson, HandComputedExamples) {
    Mat d(4, 3);
    d << 1, 2, 4,
         2, 4, 3,
         3, 6, 2,
         4, 8, 1;
    const auto m = pearson_matrix(table_of({"a"}, {"b", "c"}, d));
    EXPECT_NEAR(m.r(0, 1), 1.0, 1e-15);
    EXPECT_NEAR(m.r(0, 2), -1.0, 1e-15);
    EXPECT_NEAR(m.r(1, 2), -1.0, 1e-15);
    Mat e(3, 2);
    e << 1, 1, 2, 3, 3, 2;
    EXPECT_NEAR(pearson_matrix(table_of({"a"}, {"b"}, e)).r(0, 1), 0.5, 1e-15);
}

TEST(Pearson, MatchesNaiveFormulaAndIsSymmetric) {
    const Mat d = random_mat(50, 5, 2);
    const auto m = pearson_matrix(table_of({"a", "b", "c"}, {"p", "q"}, d));
    for (Eigen::Index i = 0; i < 5; ++i) {
        for (Eigen::Index j = 0; j < 5; ++j) {
            if (i == j) continue;
            EXPECT_NEAR(m.r(i, j), naive_pearson(d.col(i), d.col(j)), 1e-12);
            EXPECT_EQ(m.r(i, j), m.r(j, i));
        }
    }
}

TEST(Pearson, InvariantUnderAffineRescaling) {
    const Mat d = random_mat(30, 3, 4);
    Mat s = d;
    s.col(0) = 1e4 * d.col(0).array() + 1e6;
    s.col(1) = -3.0 * d.col(1).array() - 7.0;
    const auto a = pearson_matrix(table_of({"x", "y"}, {"p"}, d));
    const auto b = pearson_matrix(table_of({"x", "y"}, {"p"}, s));
    EXPECT_NEAR(b.r(0, 2), a.r(0, 2), 1e-10);
    EXPECT_NEAR(b.r(1, 2), -a.r(1, 2), 1e-10);
}

TEST(Pearson, ConstantColumnsAndTooFewRows) {
    Mat d(3, 2);
    d << 1, 5, 2, 5, 3, 5;
    const auto m = pearson_matrix(table_of({"a"}, {"p"}, d));
    EXPECT_TRUE(m.constant[1]);
    EXPECT_EQ(m.r(0, 1), 0.0);
    EXPECT_EQ(m.r(1, 1), 0.0);
    EXPECT_THROW(pearson_matrix(table_of({"a"}, {"p"}, Mat::Ones(1, 2))), DataError);
}

TEST(SelectInputs, ThresholdIsInclusive) {
    Mat d(3, 2);
    d << 1, 1, 2, 3, 3, 2;
    const auto t = table_of({"a"}, {"p"}, d);
    EXPECT_EQ(correlate(t, 0.5).selection("p").inputs, std::vector<std::string>{"a"});
    const auto r = correlate(t, 0.51);
    EXPECT_TRUE(r.selection("p").constant);
    EXPECT_NEAR(r.selection("p").mean, 2.0, 1e-15);
    EXPECT_THROW(correlate(t, 0.0), ConfigError);
    EXPECT_THROW(correlate(t, 1.5), ConfigError);
}

TEST(SelectInputs, PicksCorrelatedColumnsOnly) {
    const auto rep = correlate(linear_table(200), 0.3);
    EXPECT_EQ(rep.selection("y").inputs, (std::vector<std::string>{"a", "b"}));
}

TEST(FluxTable, OneRowPerDatasetInterval) {
    const auto truth = cstr_truth();
    IntegratorConfig integ;
    integ.max_step = 0.1;
    std::vector<Scenario> sc{cstr_campaign_scenario(0, 7), cstr_campaign_scenario(1, 7)};
    const auto pd = generate_pseudo_data(truth, sc, 1.0, NoiseConfig{}, 7, integ);
    EstimationConfig cfg;
    cfg.disc_factor = 20;
    cfg.integrator = integ;
    cfg.lm.max_iter = 3;
    std::vector<EstimateResult> res;
    for (const auto& ds : pd.datasets) res.push_back(estimate_fluxes(truth.structure, ds, cfg));
    const auto t = build_flux_table(res, truth.structure);
    EXPECT_EQ(t.rows(), res[0].p_star.intervals() + res[1].p_star.intervals());
    EXPECT_EQ(t.columns.size(), 3u + 2u + 3u);
    EXPECT_EQ(t.provenance.front(), std::make_pair(std::size_t{0}, std::size_t{0}));
    EXPECT_EQ(t.provenance.back().first, 1u);
    const double tmid = res[1].p_star.grid().midpoints().back();
    EXPECT_EQ(t.data(static_cast<Eigen::Index>(t.rows() - 1), 0), res[1].trajectory.state_at(tmid)[0]);
}

TEST(Mlp, ForwardHandComputed) {
    auto net = Mlp::init(spec({2, 2, 1}, {Activation::tanh, Activation::linear}));
    net.W[0] << 1, 0, 0, -1;
    net.b[0] << 0, 0.5;
    net.W[1] << 2, 3;
    net.b[1] << -1;
    const double y = mlp_forward(net, v({0.3, 0.2}))[0];
    EXPECT_NEAR(y, 2 * std::tanh(0.3) + 3 * std::tanh(0.3) - 1, 1e-15);
    auto leaky = Mlp::init(spec({1, 1}, {Activation::leaky_relu}));
    leaky.W[0] << 1;
    EXPECT_NEAR(mlp_forward(leaky, v({-2.0}))[0], -2.0 * kLeakyAlpha, 1e-15);
    EXPECT_EQ(mlp_forward(leaky, v({2.0}))[0], 2.0);
}

TEST(Mlp, ForwardAppliesScalers) {
    auto net = Mlp::init(spec({1, 1}, {Activation::linear}));
    net.W[0] << 1;
    net.input_mean = v({10.0});
    net.input_std = v({2.0});
    net.output_mean = v({-1.0});
    net.output_std = v({4.0});
    EXPECT_NEAR(mlp_forward(net, v({14.0}))[0], 4.0 * 2.0 - 1.0, 1e-15);
}

TEST(Mlp, GradientMatchesCentralDifferences) {
    const Mat X = random_mat(16, 2, 3);
    const Mat Y = random_mat(16, 1, 5);
    const auto tanh_net = Mlp::init(spec({2, 4, 4, 1}, {Activation::tanh, Activation::tanh, Activation::linear}));
    EXPECT_LT(gradient_check(tanh_net, X, Y), 1e-6);
    const auto leaky_net = Mlp::init(spec({2, 10, 10, 1}, {Activation::leaky_relu, Activation::leaky_relu, Activation::linear}, 0.1));
    EXPECT_LT(gradient_check(leaky_net, X, Y), 1e-6);
}

TEST(Mlp, TrainsLinearMap) {
    TrainConfig tc;
    tc.epochs = 3000;
    tc.learning_rate = 1e-2;
    const auto tf = train_mlp(linear_table(200), "y", {"a", "b"}, spec({2, 1}, {Activation::linear}), tc);
    EXPECT_LT(tf.report.train_mse, 1e-6);
    EXPECT_LT(tf.report.val_mse, 1e-6);
    EXPECT_EQ(tf.report.n_train + tf.report.n_val, 200u);
    EXPECT_EQ(tf.report.n_val, 40u);
    EXPECT_NEAR(mlp_forward(tf.net, v({1.0, 1.0}))[0], 1.5, 1e-3);
    for (std::size_t i = 1; i < tf.report.train_loss.size(); i += 500) {
        EXPECT_LE(tf.report.train_loss[i], tf.report.train_loss[0]);
    }
}

TEST(Mlp, TrainingIsDeterministic) {
    TrainConfig tc;
    tc.epochs = 100;
    const auto s = spec({2, 10, 1}, {Activation::leaky_relu, Activation::linear}, 0.1, 42);
    const auto a = train_mlp(linear_table(60), "y", {"a", "b"}, s, tc);
    const auto b = train_mlp(linear_table(60), "y", {"a", "b"}, s, tc);
    EXPECT_EQ(mlp_to_json(a.net).dump(), mlp_to_json(b.net).dump());
    EXPECT_EQ(a.report.train_loss, b.report.train_loss);
}

TEST(Mlp, DropoutInactiveAtInference) {
    auto net = Mlp::init(spec({2, 10, 1}, {Activation::leaky_relu, Activation::linear}, 0.5, 3));
    const Vec x = v({0.4, -0.7});
    const double y = mlp_forward(net, x)[0];
    for (int i = 0; i < 5; ++i) EXPECT_EQ(mlp_forward(net, x)[0], y);
    net.spec.dropout_rate = 0.0;
    EXPECT_EQ(mlp_forward(net, x)[0], y);
}

TEST(Mlp, JsonRoundTripIsExact) {
    TrainConfig tc;
    tc.epochs = 20;
    const auto tf = train_mlp(linear_table(50), "y", {"a", "b"},
                              spec({2, 3, 1}, {Activation::tanh, Activation::linear}, 0.0, 8), tc);
    const auto back = mlp_from_json(mlp_to_json(tf.net));
    EXPECT_EQ(back.input_names, tf.net.input_names);
    EXPECT_EQ(mlp_to_json(back).dump(), mlp_to_json(tf.net).dump());
    const Vec x = v({0.123456789, -3.3});
    EXPECT_EQ(mlp_forward(back, x)[0], mlp_forward(tf.net, x)[0]);
}

TEST(Mlp, RejectsBadSpecsAndInputs) {
    EXPECT_THROW(Mlp::init(spec({2}, {})), ConfigError);
    EXPECT_THROW(Mlp::init(spec({2, 1}, {Activation::tanh, Activation::tanh})), ConfigError);
    EXPECT_THROW(Mlp::init(spec({2, 1}, {Activation::tanh}, 1.0)), ConfigError);
    TrainConfig tc;
    EXPECT_THROW(train_mlp(linear_table(20), "y", {}, spec({1, 1}, {Activation::linear}), tc), ConfigError);
    EXPECT_THROW(train_mlp(linear_table(20), "y", {"zz"}, spec({1, 1}, {Activation::linear}), tc), ConfigError);
    EXPECT_THROW(parse_activation("sigmoid"), ConfigError);
}

TEST(Hybrid, TrueFluxSubstitutionReproducesTruth) {
    const auto model = cstr_structure();
    Vec p;
    const Vec x0 = v({0.7, 0.5, 350.0});
    const Vec u0 = v({0.1, 300.0});
    cstr_true_fluxes(x0, u0, p);
    const HybridModel hm(model, {ConstantBinding{p[0]}, ConstantBinding{p[1]}, ConstantBinding{p[2]}});
    Vec dh, dm;
    hm.closed().rhs(x0, u0, 0.0, dh);
    model.rhs(x0, u0, p, 0.0, dm);
    EXPECT_EQ(dh, dm);
    const Vec dt = cstr_truth_rhs(x0, u0);
    EXPECT_LT((dh - dt).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, dt.cwiseAbs().maxCoeff()));
}

TEST(Hybrid, NetworkBindingRoutesNamedInputs) {
    const auto model = tank_structure();
    auto net = Mlp::init(spec({2, 1}, {Activation::linear}));
    net.W[0] << 1.0, -2.0;
    net.input_names = {"h3", model.inputs[1].name};
    net.output_name = model.fluxes[2].name;
    std::map<std::string, Mlp> nets{{model.fluxes[2].name, net}};
    std::map<std::string, double> consts{{model.fluxes[0].name, 0.1}, {model.fluxes[1].name, 0.2}, {model.fluxes[3].name, 0.3}};
    std::map<std::string, std::pair<double, double>> bounds{{model.fluxes[2].name, {-1.0, 1.0}}};
    const auto hm = assemble_hybrid(model, nets, consts, nullptr, bounds);
    Vec p;
    hm.fluxes(v({0, 0, 0.5, 0}), v({0, 0.1}), p);
    EXPECT_EQ(p, v({0.1, 0.2, 0.5 - 0.2, 0.3}));
    hm.fluxes(v({0, 0, 5.0, 0}), v({0, 0.1}), p);
    EXPECT_EQ(p[2], 1.0);
}

TEST(Hybrid, AssemblyErrors) {
    const auto model = tank_structure();
    auto net = Mlp::init(spec({1, 1}, {Activation::linear}));
    net.input_names = {"nonexistent"};
    std::map<std::string, double> consts;
    for (std::size_t i = 1; i < model.n_p; ++i) consts[model.fluxes[i].name] = 0.0;
    EXPECT_THROW(assemble_hybrid(model, {{model.fluxes[0].name, net}}, consts), ConfigError);
    EXPECT_THROW(assemble_hybrid(model, {}, consts), ConfigError);
    consts[model.fluxes[0].name] = 0.0;
    EXPECT_NO_THROW(assemble_hybrid(model, {}, consts));
    net.input_names = {"h1"};
    EXPECT_THROW(assemble_hybrid(model, {{model.fluxes[0].name, net}}, consts), ConfigError);
    consts["bogus"] = 1.0;
    EXPECT_THROW(assemble_hybrid(model, {}, consts), ConfigError);
}

TEST(Hybrid, EvaluateRecordsPerDatasetFailures) {
    const auto truth = cstr_truth();
    IntegratorConfig integ;
    integ.max_step = 0.1;
    std::vector<Scenario> sc{cstr_campaign_scenario(0, 7)};
    const auto pd = generate_pseudo_data(truth, sc, 1.0, NoiseConfig{}, 7, integ);
    const HybridModel ok(truth.structure, {ConstantBinding{0.0}, ConstantBinding{0.0}, ConstantBinding{0.0}});
    const HybridModel bad(truth.structure, {ConstantBinding{-1.0}, ConstantBinding{0.0}, ConstantBinding{0.0}});
    const auto a = evaluate_hybrid(ok, pd.datasets, {}, {1.0}, integ);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_TRUE(a[0].ok);
    EXPECT_NEAR(*a[0].delta(), a[0].fit - 1.0, 1e-12);
    const auto b = evaluate_hybrid(bad, pd.datasets, {}, {}, integ);
    EXPECT_FALSE(b[0].ok);
    EXPECT_FALSE(b[0].delta());
    EXPECT_FALSE(b[0].error.empty());
}
