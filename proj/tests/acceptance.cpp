// Acceptance run: one PASS/FAIL line per criterion; exit status 1 if any fails.
// Usage: acceptance [work-dir]

#include <chrono>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "hybridid/pipeline.hpp"

using namespace hybridid;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
}

struct Run {
    std::map<std::string, json> metrics;
    double seconds = 0.0;
};

Run run_pipeline(const PipelineConfig& cfg, const fs::path& out, const std::vector<std::string>& only = {}) {
    fs::remove_all(out);
    Pipeline pipe(cfg, out);
    Run r;
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& s : only.empty() ? pipe.stages() : only) r.metrics[s] = pipe.run(s).metrics;
    r.seconds = seconds_since(t0);
    return r;
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
    }
    return files;
}

Mat randn(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
    return m;
}

const json& selection(const json& report, const std::string& flux) {
    for (const auto& s : report.at("selections")) {
        if (s.at("flux") == flux) return s;
    }
    throw ConsistencyError("no selection for " + flux);
}

Verdict crit1(const Run& cstr) {
    const double chi2 = cstr.metrics.at("estimate").at("chi2_per_point");
    return {chi2 >= 0.5 && chi2 <= 2.0 && cstr.seconds <= 300.0,
            "chi2/pt=" + fmt(chi2) + " runtime=" + fmt(cstr.seconds) + " s"};
}

Verdict crit2(const Run& cstr) {
    const json& rep = cstr.metrics.at("correlate");
    const json& p1 = selection(rep, "p1");
    const double mean = p1.at("mean");
    bool pass = p1.at("constant").get<bool>() && std::abs(mean) <= 1e-3;
    std::string d = "p1 constant=" + std::string(p1.at("constant").get<bool>() ? "yes" : "no") + " mean=" + fmt(mean);
    for (const char* f : {"p2", "p3"}) {
        const auto n = selection(rep, f).at("inputs").size();
        pass = pass && n == 5;
        d += std::string(" ") + f + " inputs=" + std::to_string(n);
    }
    return {pass, d};
}

Verdict crit3(const Run& cstr) {
    const json& s = cstr.metrics.at("simulate");
    const double c = s.at("state_rel_rmse").at("c"), T = s.at("state_rel_rmse").at("T");
    const double p2 = s.at("flux_error").at("p2").at("rel_rms"), p3 = s.at("flux_error").at("p3").at("rel_rms");
    return {c <= 0.05 && T <= 0.05 && p2 <= 0.10 && p3 <= 0.10,
            "c=" + fmt(100 * c) + "% T=" + fmt(100 * T) + "% p2=" + fmt(100 * p2) + "% p3=" + fmt(100 * p3) + "%"};
}

Verdict crit4(const Run& reg, const Run& unreg) {
    const json& a = reg.metrics.at("estimate");
    const json& b = unreg.metrics.at("estimate");
    const double tv_a = a.at("total_variation"), tv_b = b.at("total_variation");
    const double fit_a = a.at("fit_cost"), fit_b = b.at("fit_cost");
    return {tv_a < tv_b && fit_a <= 1.1 * fit_b,
            "TV " + fmt(tv_a) + " vs " + fmt(tv_b) + ", fit " + fmt(fit_a) + " vs " + fmt(fit_b) + " (+" +
                fmt(100 * (fit_a / fit_b - 1)) + "%)"};
}

Verdict crit5() {
    const Mat A = randn(40, 6, 1);
    const Vec b = randn(40, 1, 2).col(0);
    const Vec exact = A.colPivHouseholderQr().solve(b);
    ResidualProblem lin;
    lin.dim_theta = 6;
    lin.residual = [&](const Vec& th) -> Vec { return A * th - b; };
    const double e_lin = (lm_solve(lin, Vec::Zero(6)).theta - exact).norm() / exact.norm();

    ResidualProblem rb;
    rb.dim_theta = 2;
    rb.residual = [](const Vec& th) {
        Vec r(2);
        r << 10.0 * (th[1] - th[0] * th[0]), 1.0 - th[0];
        return r;
    };
    Vec x0(2);
    x0 << -1.2, 1.0;
    const double e_rb = (lm_solve(rb, x0).theta - Vec::Ones(2)).cwiseAbs().maxCoeff();

    double e_spd = 0.0;
    const Mat G = randn(30, 30, 3);
    const Mat S = G * G.transpose() + 30.0 * Mat::Identity(30, 30);
    Mat H(8, 8);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) H(i, j) = 1.0 / (i + j + 1);
    for (const Mat* M : std::initializer_list<const Mat*>{&S, &H}) {
        const Vec rhs = *M * Vec::Ones(M->rows());
        const auto x = solve_spd(*M, rhs);
        e_spd = std::max(e_spd, x ? (*M * *x - rhs).norm() / rhs.norm() : 1.0);
    }
    return {e_lin <= 1e-8 && e_rb <= 1e-6 && e_spd <= 1e-10,
            "linear rel err=" + fmt(e_lin) + " rosenbrock err=" + fmt(e_rb) + " spd rel residual=" + fmt(e_spd)};
}

Verdict crit6(const PipelineConfig& cstr, const PipelineConfig& tank) {
    std::vector<double> err;
    for (double h : {0.1, 0.05, 0.025}) {
        std::vector<double> grid;
        for (int k = 0; k <= static_cast<int>(std::lround(1.0 / h)); ++k) grid.push_back(k * h);
        Mat st;
        IntegratorConfig ic;
        ic.max_step = h;
        integrate_plan([](const Vec& x, double, std::size_t, Vec& dx) { dx = -x; }, Vec::Ones(1), grid, 0, ic, st);
        err.push_back(std::abs(st(st.rows() - 1, 0) - std::exp(-1.0)));
    }
    const double order = std::min(std::log2(err[0] / err[1]), std::log2(err[1] / err[2]));

    double grad = 0.0;
    for (const auto* c : {&cstr, &tank}) {
        MlpSpec s;
        s.layer_sizes.push_back(c == &cstr ? 5 : 3);
        for (auto h : c->training.hidden) s.layer_sizes.push_back(h);
        s.layer_sizes.push_back(1);
        s.activations = c->training.activations;
        s.dropout_rate = c->training.dropout;
        s.seed = 5;
        const Mlp net = Mlp::init(s);
        const auto n_in = static_cast<Eigen::Index>(s.layer_sizes.front());
        grad = std::max(grad, gradient_check(net, randn(32, n_in, 6), randn(32, 1, 7)));
    }

    const Mat d = randn(200, 6, 8);
    FluxTable t;
    t.columns = {"a", "b", "c", "d", "e", "f"};
    t.n_states = 3;
    t.n_fluxes = 3;
    t.data = d;
    const auto m = pearson_matrix(t);
    double e_r = 0.0;
    for (Eigen::Index i = 0; i < 6; ++i) {
        for (Eigen::Index j = 0; j < 6; ++j) {
            if (i == j) continue;
            const double n = 200.0;
            const double sa = d.col(i).sum(), sb = d.col(j).sum();
            const double saa = d.col(i).squaredNorm(), sbb = d.col(j).squaredNorm(), sab = d.col(i).dot(d.col(j));
            const double naive = (n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb));
            e_r = std::max(e_r, std::abs(m.r(i, j) - naive));
        }
    }
    return {order >= 3.8 && grad <= 1e-5 && e_r <= 1e-12,
            "rk4 order=" + fmt(order) + " grad rel err=" + fmt(grad) + " pearson err=" + fmt(e_r)};
}

Verdict crit7(const Run& tank) {
    const json& m = tank.metrics.at("mpc");
    const json& p = m.at("perfect_model");
    const json& h = m.at("hybrid_model");
    const bool settled = !p.at("settle_1pct").is_null() && p.at("settle_1pct").get<double>() <= 600.0;
    const bool entered = !h.at("enter_5pct").is_null();
    const int violations = p.at("bound_violations").get<int>() + h.at("bound_violations").get<int>();
    const double wall = std::max(p.at("max_wall_seconds").get<double>(), h.at("max_wall_seconds").get<double>());
    const bool clean = !p.at("aborted").get<bool>() && !h.at("aborted").get<bool>();
    auto show = [](const json& v) { return v.is_null() ? std::string("never") : fmt(v.get<double>()) + " s"; };
    return {settled && entered && violations == 0 && wall <= 1.0 && clean,
            "perfect settle(1%)=" + show(p.at("settle_1pct")) + " hybrid enter(5%)=" + show(h.at("enter_5pct")) +
                " hybrid offset=" + fmt(h.at("steady_offset")) + " violations=" + std::to_string(violations) +
                " max step wall=" + fmt(wall) + " s"};
}

Verdict crit8(const std::vector<std::pair<fs::path, fs::path>>& pairs) {
    std::size_t files = 0, differing = 0;
    std::string first;
    for (const auto& [a, b] : pairs) {
        const auto ta = tree(a), tb = tree(b);
        for (const auto& [name, content] : ta) {
            ++files;
            auto it = tb.find(name);
            if (it == tb.end() || it->second != content) {
                ++differing;
                if (first.empty()) first = (a / name).string();
            }
        }
        if (tb.size() != ta.size()) ++differing;
    }
    return {files > 0 && differing == 0,
            std::to_string(files) + " files compared, " + std::to_string(differing) + " differ" +
                (first.empty() ? "" : " (first: " + first + ")")};
}

Verdict crit9(const PipelineConfig& tank) {
    const auto truth = tank_truth().closed();
    double worst = 0.0;
    std::size_t steps_total = 0;
    for (std::size_t s = 0; s < tank.data.scenarios; ++s) {
        const Scenario sc = tank_scenario(s, tank.seed, tank.data.tank);
        const auto& g = sc.mv.grid();
        const TimeGrid steps = grid_refine(grid_union({&g}, g.front(), g.back()), tank.data.integrator.max_step);
        const auto idx = detail::step_intervals(steps, g);
        Mat st;
        integrate_plan([&](const Vec& x, double t, std::size_t k, Vec& dx) { truth.rhs(x, sc.mv.row(idx[k]), t, dx); },
                       sc.x0, steps.points(), 0, tank.data.integrator, st);
        for (Eigen::Index i = 1; i < st.rows(); ++i) worst = std::max(worst, std::abs(st.row(i).sum() - st.row(i - 1).sum()));
        steps_total += static_cast<std::size_t>(st.rows() - 1);
    }
    return {worst <= 1e-9, "max mass drift per step=" + fmt(worst) + " over " + std::to_string(steps_total) + " steps"};
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "hybridid_acceptance";
    fs::create_directories(work);

    const PipelineConfig cstr = default_config(CaseKind::cstr);
    const PipelineConfig tank = default_config(CaseKind::three_tank);
    PipelineConfig unreg = cstr;
    unreg.estimation.w_reg = 0.0;

    std::map<int, std::function<Verdict()>> checks;
    Run r_cstr, r_tank, r_unreg;
    bool ran_cstr = false, ran_tank = false, ran_unreg = false;
    auto need_cstr = [&]() -> const Run& {
        if (!ran_cstr) r_cstr = run_pipeline(cstr, work / "cstr_a"), ran_cstr = true;
        return r_cstr;
    };
    auto need_tank = [&]() -> const Run& {
        if (!ran_tank) r_tank = run_pipeline(tank, work / "tank_a"), ran_tank = true;
        return r_tank;
    };
    auto need_unreg = [&]() -> const Run& {
        if (!ran_unreg) r_unreg = run_pipeline(unreg, work / "cstr_wreg0", {"gen-data", "estimate"}), ran_unreg = true;
        return r_unreg;
    };
    checks[1] = [&] { return crit1(need_cstr()); };
    checks[2] = [&] { return crit2(need_cstr()); };
    checks[3] = [&] { return crit3(need_cstr()); };
    checks[4] = [&] { return crit4(need_cstr(), need_unreg()); };
    checks[5] = [] { return crit5(); };
    checks[6] = [&] { return crit6(cstr, tank); };
    checks[7] = [&] { return crit7(need_tank()); };
    checks[8] = [&] {
        need_cstr();
        need_tank();
        run_pipeline(cstr, work / "cstr_b");
        run_pipeline(tank, work / "tank_b");
        return crit8({{work / "cstr_a", work / "cstr_b"}, {work / "tank_a", work / "tank_b"}});
    };
    checks[9] = [&] { return crit9(tank); };

    int failed = 0;
    for (auto& [n, check] : checks) {
        Verdict v;
        try {
            v = check();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        if (!v.pass) ++failed;
        std::cout << "criterion " << n << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
    }
    std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
    return failed ? 1 : 0;
}
