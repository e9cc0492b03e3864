// Single-shooting MPC on the three-tank plant.

#include <gtest/gtest.h>

#include "hybridid/mpc.hpp"
#include "hybridid/pseudo_data.hpp"

using namespace hybridid;

namespace {

Vec u_nominal() { return Vec::Constant(2, 0.02); }

MpcConfig config_tracking(const Vec& target) {
    MpcConfig c = MpcConfig::tank_default();
    c.horizon = 80.0;
    c.setpoints = {{0.0, target}};
    return c;
}

}  // namespace

TEST(Mpc, SteadyStateIsAFixpoint) {
    const Vec xs = tank_steady_state(0.02, 0.02, 5.0);
    const auto plant = tank_truth().closed();
    const auto st = mpc_step(plant, xs, 0.0, u_nominal(), config_tracking(xs));
    ASSERT_TRUE(st.ok);
    EXPECT_LT((st.u_apply - u_nominal()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT(st.cost, 1e-10);
}

TEST(Mpc, ZeroTrackingWeightHoldsPreviousMove) {
    auto cfg = config_tracking(Vec::Constant(4, 1.0));
    cfg.q.setZero();
    const Vec u_prev = (Vec(2) << 0.015, 0.03).finished();
    const auto st = mpc_step(tank_truth().closed(), tank_steady_state(0.02, 0.02, 5.0), 0.0, u_prev, cfg);
    EXPECT_EQ(st.u_apply, u_prev);
    EXPECT_EQ(st.cost, 0.0);
}

TEST(Mpc, UnreachableSetpointPinsMovesToBounds) {
    const Vec xs = tank_steady_state(0.02, 0.02, 5.0);
    Vec high = xs;
    high[1] = 10.0;
    const auto cfg = config_tracking(high);
    const auto st = mpc_step(tank_truth().closed(), xs, 0.0, u_nominal(), cfg);
    EXPECT_NEAR(st.u_apply[0], cfg.u_hi[0], 1e-9);
    for (Eigen::Index i = 0; i < st.plan.size(); ++i) {
        EXPECT_GE(st.plan.data()[i], 0.01);
        EXPECT_LE(st.plan.data()[i], 0.04);
    }
}

TEST(Mpc, WarmStartNeverRaisesCost) {
    const Vec xs = tank_steady_state(0.02, 0.02, 5.0);
    Vec target = xs;
    target[1] = 0.25;
    const auto warm = config_tracking(target);
    auto cold = warm;
    cold.warm_start = false;
    const auto plant = tank_truth().closed();
    IntegratorConfig integ;
    integ.max_step = 0.5;
    Vec x = xs, u = u_nominal();
    Mat plan;
    const Mat* prev = nullptr;
    for (int k = 0; k < 10; ++k) {
        const double t = warm.sampling * k;
        const auto w = mpc_step(plant, x, t, u, warm, prev);
        const auto c = mpc_step(plant, x, t, u, cold, prev);
        EXPECT_LE(w.cost, c.cost + 1e-9) << "step " << k;
        plan = w.plan;
        prev = &plan;
        u = w.u_apply;
        const TimeGrid g({t, t + warm.sampling});
        x = simulate_closed(plant, x, PiecewiseConstantProfile::constant(g, u), g, integ).states.row(1).transpose();
    }
}

TEST(Mpc, ClosedLoopLogsEverySample) {
    const Vec xs = tank_steady_state(0.02, 0.02, 5.0);
    Vec target = xs;
    target[1] = 0.2;
    const auto cfg = config_tracking(target);
    IntegratorConfig plant;
    plant.max_step = 0.5;
    const auto log = closed_loop(tank_truth().closed(), tank_truth().closed(), cfg, 40.0, xs, u_nominal(), plant);
    ASSERT_EQ(log.records.size(), 6u);
    EXPECT_FALSE(log.aborted);
    for (const auto& r : log.records) {
        EXPECT_TRUE(r.ok);
        EXPECT_TRUE(((r.applied - cfg.u_lo).array() >= 0).all());
        EXPECT_TRUE(((cfg.u_hi - r.applied).array() >= 0).all());
    }
    EXPECT_GT(log.records.back().state[1], xs[1]);
}

TEST(Mpc, ConfigValidation) {
    const auto plant = tank_truth().closed();
    const Vec xs = tank_steady_state(0.02, 0.02, 5.0);
    auto cfg = config_tracking(xs);
    cfg.q = Vec::Ones(3);
    EXPECT_THROW(mpc_step(plant, xs, 0.0, u_nominal(), cfg), ConfigError);
    cfg = config_tracking(xs);
    cfg.horizon = 1.0;
    EXPECT_THROW(mpc_step(plant, xs, 0.0, u_nominal(), cfg), ConfigError);
    cfg = config_tracking(xs);
    cfg.u_lo[0] = 0.05;
    EXPECT_THROW(mpc_step(plant, xs, 0.0, u_nominal(), cfg), ConfigError);
    cfg = config_tracking(xs);
    cfg.setpoints.push_back({0.0, xs});
    EXPECT_THROW(mpc_step(plant, xs, 0.0, u_nominal(), cfg), ConfigError);
    EXPECT_THROW(mpc_step(plant, Vec::Zero(3), 0.0, u_nominal(), config_tracking(xs)), DataError);
}

TEST(Mpc, SetpointScheduleIsPiecewiseConstant) {
    MpcConfig c;
    c.setpoints = {{0.0, Vec::Constant(1, 1.0)}, {80.0, Vec::Constant(1, 2.0)}};
    EXPECT_EQ(c.setpoint(-5.0)[0], 1.0);
    EXPECT_EQ(c.setpoint(79.9)[0], 1.0);
    EXPECT_EQ(c.setpoint(80.0)[0], 2.0);
    EXPECT_EQ(c.setpoint(1e6)[0], 2.0);
}
