#pragma once

// File-based pipeline stages. Every stage reads its inputs from the output
// directory, writes stamped artifacts and returns a one-line summary plus
// metrics for programmatic callers.

#include <cstdio>

#include "hybridid/config.hpp"

namespace hybridid {

struct StageResult {
    std::string stage;
    std::string summary;
    json metrics;  // may hold wall times; never written to disk
};

// ---- user-model manifest (affine known part) ----

/// dx/dt = A x + B u + E p + c, z = selected states.
inline ModelStructure affine_model_from_json(const json& j, const std::string& where) {
    auto vars = [&](const char* key) {
        std::vector<VarInfo> v;
        if (!j.contains(key) || !j.at(key).is_array()) throw ConfigError(where + "/" + key + ": expected an array");
        for (const auto& e : j.at(key)) {
            if (e.is_string()) {
                v.push_back({e.get<std::string>(), ""});
            } else if (e.is_object() && e.contains("name")) {
                v.push_back({e.at("name").get<std::string>(), e.value("unit", std::string())});
            } else {
                throw ConfigError(where + "/" + key + ": entries must be names or {name, unit}");
            }
        }
        return v;
    };
    auto matrix = [&](const char* key, std::size_t rows, std::size_t cols) {
        Mat M = Mat::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        if (!j.contains(key)) return M;
        const auto& a = j.at(key);
        if (!a.is_array() || a.size() != rows) {
            throw ConfigError(where + "/" + key + ": expected " + std::to_string(rows) + " rows");
        }
        for (std::size_t r = 0; r < rows; ++r) {
            Vec row = vec_from_json(a[r], where + "/" + key + "/" + std::to_string(r));
            if (static_cast<std::size_t>(row.size()) != cols) {
                throw ConfigError(where + "/" + key + "/" + std::to_string(r) + ": expected " + std::to_string(cols) +
                                  " columns");
            }
            M.row(static_cast<Eigen::Index>(r)) = row.transpose();
        }
        return M;
    };
    try {
        ModelStructure m;
        m.id = j.at("id").get<std::string>();
        m.time_unit = j.value("time_unit", std::string("s"));
        m.states = vars("states");
        m.inputs = vars("inputs");
        m.fluxes = vars("fluxes");
        m.n_x = m.states.size();
        m.n_u = m.inputs.size();
        m.n_p = m.fluxes.size();
        if (m.n_x == 0 || m.n_p == 0) throw ConfigError(where + ": need at least one state and one flux");
        std::vector<std::size_t> sel;
        if (j.contains("outputs")) {
            for (const auto& o : j.at("outputs")) {
                auto i = m.state_index(o.get<std::string>());
                if (!i) throw ConfigError(where + "/outputs: unknown state '" + o.get<std::string>() + "'");
                sel.push_back(*i);
                m.outputs.push_back(m.states[*i]);
            }
        } else {
            for (std::size_t i = 0; i < m.n_x; ++i) sel.push_back(i);
            m.outputs = m.states;
        }
        m.n_z = sel.size();
        Mat A = matrix("A", m.n_x, m.n_x), B = matrix("B", m.n_x, m.n_u), E = matrix("E", m.n_x, m.n_p);
        Vec c = j.contains("c") ? vec_from_json(j.at("c"), where + "/c") : Vec(Vec::Zero(static_cast<Eigen::Index>(m.n_x)));
        if (static_cast<std::size_t>(c.size()) != m.n_x) throw ConfigError(where + "/c: wrong length");
        m.rhs = [A, B, E, c](const Vec& x, const Vec& u, const Vec& p, double, Vec& dx) {
            dx = A * x + E * p + c;
            if (B.cols() > 0) dx += B * u;
        };
        m.output = [sel](const Vec& x, Vec& z) {
            z.resize(static_cast<Eigen::Index>(sel.size()));
            for (std::size_t i = 0; i < sel.size(); ++i) z[static_cast<Eigen::Index>(i)] = x[static_cast<Eigen::Index>(sel[i])];
        };
        if (sel.size() == m.n_x) {
            m.state_from_output = [sel](const Vec& z) {
                Vec x(static_cast<Eigen::Index>(sel.size()));
                for (std::size_t i = 0; i < sel.size(); ++i) x[static_cast<Eigen::Index>(sel[i])] = z[static_cast<Eigen::Index>(i)];
                return x;
            };
        }
        if (j.contains("p_bounds")) {
            m.p_bounds = std::make_pair(vec_from_json(j.at("p_bounds").at("lower"), where + "/p_bounds/lower"),
                                        vec_from_json(j.at("p_bounds").at("upper"), where + "/p_bounds/upper"));
        }
        return m;
    } catch (const json::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

// ---- stage context ----

class Pipeline {
public:
    Pipeline(PipelineConfig cfg, fs::path out) : cfg_(std::move(cfg)), out_(std::move(out)) {
        validate_config(cfg_);
        stamp_ = stamp_of(cfg_);
        switch (cfg_.kind) {
            case CaseKind::cstr: truth_ = cstr_truth(); break;
            case CaseKind::three_tank: truth_ = tank_truth(); break;
            case CaseKind::user_model: {
                const fs::path p = resolve(cfg_, cfg_.model);
                if (!fs::exists(p)) throw ConfigError("/model: file not found: " + p.string());
                try {
                    model_ = affine_model_from_json(json::parse(read_file(p)), p.string());
                } catch (const json::parse_error& e) {
                    throw ConfigError(p.string() + ": " + e.what());
                }
                break;
            }
        }
        if (truth_) model_ = truth_->structure;
    }

    const PipelineConfig& config() const noexcept { return cfg_; }
    const ModelStructure& model() const noexcept { return model_; }
    const Stamp& stamp() const noexcept { return stamp_; }
    const fs::path& out() const noexcept { return out_; }

    static const std::vector<std::string>& stage_names() {
        static const std::vector<std::string> names{"gen-data", "estimate", "table",    "correlate", "train",
                                                    "assemble", "simulate", "evaluate", "mpc"};
        return names;
    }

    /// Stages `pipeline` runs for this case.
    std::vector<std::string> stages() const {
        std::vector<std::string> s;
        for (const auto& n : stage_names()) {
            if (n == "simulate" && !truth_) continue;
            if (n == "mpc" && cfg_.kind != CaseKind::three_tank) continue;
            s.push_back(n);
        }
        return s;
    }

    StageResult run(const std::string& stage) {
        if (stage == "gen-data") return gen_data();
        if (stage == "estimate") return estimate();
        if (stage == "table") return table();
        if (stage == "correlate") return correlate_stage();
        if (stage == "train") return train();
        if (stage == "assemble") return assemble();
        if (stage == "simulate") return simulate();
        if (stage == "evaluate") return evaluate();
        if (stage == "mpc") return mpc();
        throw ConfigError("unknown stage '" + stage + "'");
    }

    // ---- artifact readers shared by stages and tests ----

    std::vector<MeasurementDataset> load_datasets() const {
        const fs::path man = out_ / "data" / "manifest.json";
        require_file(man, "gen-data");
        const json m = read_json(man);
        std::vector<MeasurementDataset> out;
        for (const auto& d : m.at("datasets")) {
            DatasetFiles f{out_ / "data" / d.at("csv").get<std::string>(), out_ / "data" / d.at("knots").get<std::string>()};
            require_file(f.csv, "gen-data");
            require_file(f.knots, "gen-data");
            out.push_back(read_dataset(f, model_, cfg_.data.noise));
        }
        return out;
    }

    std::vector<EstimateResult> load_estimates(const std::vector<MeasurementDataset>& data) const {
        std::vector<EstimateResult> out;
        for (std::size_t d = 0; d < data.size(); ++d) {
            const fs::path jp = out_ / "estimate" / (stem(d) + ".json");
            const fs::path tp = out_ / "estimate" / (stem(d) + "_trajectory.csv");
            require_file(jp, "estimate");
            require_file(tp, "estimate");
            const json j = read_json(jp);
            EstimateResult r;
            r.p_star = profile_from_json(j.at("p_star"), model_.time_unit, jp.string());
            r.x0_star = vec_from_json(j.at("x0_star"), jp.string() + "/x0_star");
            r.fit_cost = j.at("fit_cost").get<double>();
            r.reg_cost = j.at("reg_cost").get<double>();
            r.mv = data[d].mv;
            CsvTable t = read_csv(tp);
            if (static_cast<std::size_t>(t.data.cols()) != 1 + model_.n_x) {
                throw DimensionError(tp.string() + ": expected " + std::to_string(1 + model_.n_x) + " columns");
            }
            std::vector<double> g(static_cast<std::size_t>(t.data.rows()));
            for (Eigen::Index i = 0; i < t.data.rows(); ++i) g[static_cast<std::size_t>(i)] = t.data(i, 0);
            r.trajectory.grid = TimeGrid(g, model_.time_unit);
            r.trajectory.states = t.data.rightCols(static_cast<Eigen::Index>(model_.n_x));
            out.push_back(std::move(r));
        }
        return out;
    }

    FluxTable load_table() const {
        const fs::path p = out_ / "table" / "flux_table.csv";
        require_file(p, "table");
        CsvTable t = read_csv(p);
        FluxTable ft;
        for (const auto& v : model_.states) ft.columns.push_back(v.name);
        for (const auto& v : model_.inputs) ft.columns.push_back(v.name);
        for (const auto& v : model_.fluxes) ft.columns.push_back(v.name);
        ft.n_states = model_.n_x;
        ft.n_inputs = model_.n_u;
        ft.n_fluxes = model_.n_p;
        if (t.data.cols() != static_cast<Eigen::Index>(3 + ft.columns.size())) {
            throw DimensionError(p.string() + ": column count does not match model " + model_.id);
        }
        ft.data = t.data.rightCols(static_cast<Eigen::Index>(ft.columns.size()));
        for (Eigen::Index i = 0; i < t.data.rows(); ++i) {
            ft.provenance.emplace_back(static_cast<std::size_t>(t.data(i, 0)), static_cast<std::size_t>(t.data(i, 1)));
        }
        return ft;
    }

    CorrelationReport load_report() const {
        const fs::path p = out_ / "correlate" / "report.json";
        require_file(p, "correlate");
        const json j = read_json(p);
        CorrelationReport rep;
        rep.tau = j.at("tau").get<double>();
        rep.matrix.labels = j.at("labels").get<std::vector<std::string>>();
        const auto n = static_cast<Eigen::Index>(rep.matrix.labels.size());
        rep.matrix.r.resize(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            rep.matrix.r.row(i) = vec_from_json(j.at("r")[static_cast<std::size_t>(i)], p.string()).transpose();
        }
        rep.matrix.constant = j.at("constant").get<std::vector<bool>>();
        rep.matrix.mean = vec_from_json(j.at("mean"), p.string());
        for (const auto& s : j.at("selections")) {
            FluxSelection f;
            f.flux = s.at("flux").get<std::string>();
            f.inputs = s.at("inputs").get<std::vector<std::string>>();
            f.constant = s.at("constant").get<bool>();
            f.mean = s.at("mean").get<double>();
            rep.selections.push_back(std::move(f));
        }
        return rep;
    }

    HybridModel load_hybrid() const {
        const fs::path p = out_ / "hybrid" / "manifest.json";
        require_file(p, "assemble");
        return hybrid_from_json(read_json(p), model_, p.string());
    }

    static HybridModel hybrid_from_json(const json& j, const ModelStructure& model, const std::string& where) {
        try {
            if (j.at("base_model").get<std::string>() != model.id) {
                throw ConsistencyError(where + ": manifest is for model '" + j.at("base_model").get<std::string>() +
                                       "', not '" + model.id + "'");
            }
            std::vector<FluxBinding> b(model.n_p);
            std::vector<bool> bound(model.n_p, false);
            for (const auto& e : j.at("bindings")) {
                const std::string flux = e.at("flux").get<std::string>();
                auto i = model.flux_index(flux);
                if (!i) throw ConfigError(where + ": binding for unknown flux '" + flux + "'");
                if (bound[*i]) throw ConfigError(where + ": flux '" + flux + "' bound twice");
                bound[*i] = true;
                const std::string kind = e.at("kind").get<std::string>();
                if (kind == "constant") {
                    b[*i] = ConstantBinding{e.at("value").get<double>()};
                } else if (kind == "mlp") {
                    MlpBinding mb{mlp_from_json(e.at("model")), std::nullopt};
                    if (e.contains("output_bounds")) {
                        const auto& ob = e.at("output_bounds");
                        mb.output_bounds = std::make_pair(ob.at(0).get<double>(), ob.at(1).get<double>());
                    }
                    b[*i] = std::move(mb);
                } else {
                    throw ConfigError(where + ": unknown binding kind '" + kind + "'");
                }
            }
            for (std::size_t i = 0; i < model.n_p; ++i) {
                if (!bound[i]) throw ConfigError(where + ": flux '" + model.fluxes[i].name + "' is unbound");
            }
            return HybridModel(model, std::move(b));
        } catch (const json::exception& e) {
            throw DataError(where + ": " + e.what());
        }
    }

    static json hybrid_to_json(const HybridModel& hm, const Stamp& s) {
        json j = stamped(s, "hybrid-manifest");
        j["base_model"] = hm.base().id;
        json b = json::array();
        for (std::size_t i = 0; i < hm.bindings().size(); ++i) {
            json e;
            e["flux"] = hm.base().fluxes[i].name;
            if (const auto* c = std::get_if<ConstantBinding>(&hm.bindings()[i])) {
                e["kind"] = "constant";
                e["value"] = c->value;
            } else {
                const auto& mb = std::get<MlpBinding>(hm.bindings()[i]);
                e["kind"] = "mlp";
                e["inputs"] = mb.net.input_names;
                if (mb.output_bounds) e["output_bounds"] = {mb.output_bounds->first, mb.output_bounds->second};
                e["model"] = mlp_to_json(mb.net);
            }
            b.push_back(std::move(e));
        }
        j["bindings"] = std::move(b);
        return j;
    }

    /// Built-in scenario `index` for the configured case.
    Scenario scenario(std::size_t index) const {
        if (cfg_.kind == CaseKind::cstr) return cstr_campaign_scenario(index, cfg_.seed, cfg_.data.cstr);
        if (cfg_.kind == CaseKind::three_tank) return tank_scenario(index, cfg_.seed, cfg_.data.tank);
        throw ConfigError("user-model case has no built-in scenarios");
    }

    EstimationConfig estimation_config() const {
        EstimationConfig e;
        e.disc_factor = cfg_.estimation.disc_factor;
        e.w_reg = cfg_.estimation.w_reg;
        e.estimate_x0 = cfg_.estimation.estimate_x0;
        e.integrator = cfg_.estimation.integrator;
        e.lm = cfg_.estimation.lm;
        return e;
    }

    MpcConfig mpc_config() const {
        const auto& m = cfg_.mpc;
        MpcConfig c;
        c.sampling = m.sampling;
        c.horizon = m.horizon;
        c.q = to_vec(m.q);
        c.s = to_vec(m.s);
        c.u_lo = to_vec(m.u_lo);
        c.u_hi = to_vec(m.u_hi);
        for (const auto& sp : m.setpoints) c.setpoints.push_back({sp.time, to_vec(sp.target)});
        c.warm_start = m.warm_start;
        c.lm = m.lm;
        c.integrator = m.integrator;
        try {
            c.validate(model_.n_u, model_.n_z);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("/mpc: ") + e.what());
        }
        return c;
    }

private:
    static std::string stem(std::size_t d) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "dataset_%03zu", d);
        return buf;
    }

    static Vec to_vec(const std::vector<double>& v) {
        return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
    }

    std::vector<std::string> header(const std::vector<VarInfo>& vars, const std::string& suffix = "") const {
        std::vector<std::string> h;
        for (const auto& v : vars) {
            h.push_back(v.unit.empty() ? v.name + suffix : v.name + suffix + "[" + v.unit + "]");
        }
        return h;
    }

    std::string time_col() const { return "t[" + model_.time_unit + "]"; }

    const TruthModel& need_truth(const std::string& stage) const {
        if (!truth_) throw ConfigError("stage '" + stage + "' needs a built-in ground truth (case cstr or three-tank)");
        return *truth_;
    }

    static std::string num(double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4g", v);
        return buf;
    }

    // ---- stages ----

    StageResult gen_data() {
        const fs::path dir = out_ / "data";
        fs::create_directories(dir);
        std::vector<MeasurementDataset> sets;
        std::vector<Trajectory> truth;
        if (truth_) {
            std::vector<Scenario> scs;
            for (std::size_t i = 0; i < cfg_.data.scenarios; ++i) scs.push_back(scenario(i));
            PseudoData pd =
                generate_pseudo_data(*truth_, scs, cfg_.data.meas_period, cfg_.data.noise, cfg_.seed, cfg_.data.integrator);
            sets = std::move(pd.datasets);
            truth = std::move(pd.truth);
        } else {
            for (std::size_t i = 0; i < cfg_.data.files.size(); ++i) {
                DatasetFiles f{resolve(cfg_, cfg_.data.files[i].csv), resolve(cfg_, cfg_.data.files[i].knots)};
                for (const auto& p : {f.csv, f.knots}) {
                    if (!fs::exists(p)) throw ConfigError("/data/files/" + std::to_string(i) + ": file not found: " + p.string());
                }
                sets.push_back(read_dataset(f, model_, cfg_.data.noise));
            }
        }
        json man = stamped(stamp_, "datasets");
        man["case"] = case_name(cfg_.kind);
        man["datasets"] = json::array();
        std::size_t points = 0;
        for (std::size_t d = 0; d < sets.size(); ++d) {
            const auto files = dataset_paths(dir, stem(d));
            write_dataset(files, sets[d], model_, stamp_.comment());
            points += sets[d].meas_grid.size();
            man["datasets"].push_back({{"csv", files.csv.filename().string()},
                                       {"knots", files.knots.filename().string()},
                                       {"points", sets[d].meas_grid.size()}});
            if (d < truth.size()) {
                const Trajectory& tr = truth[d];
                const auto n = tr.states.rows();
                Mat m(n, static_cast<Eigen::Index>(1 + model_.n_x + model_.n_p));
                Vec p;
                for (Eigen::Index j = 0; j < n; ++j) {
                    const double t = tr.grid[static_cast<std::size_t>(j)];
                    m(j, 0) = t;
                    m.row(j).segment(1, static_cast<Eigen::Index>(model_.n_x)) = tr.states.row(j);
                    truth_->flux(tr.states.row(j).transpose(), sets[d].mv.eval(t), t, p);
                    m.row(j).tail(static_cast<Eigen::Index>(model_.n_p)) = p.transpose();
                }
                std::vector<std::string> h{time_col()};
                for (const auto& s : header(model_.states)) h.push_back(s);
                for (const auto& s : header(model_.fluxes)) h.push_back(s);
                write_csv(dir / (stem(d) + "_truth.csv"), stamp_.comment(), h, m);
            }
        }
        write_json(dir / "manifest.json", man);
        write_json(out_ / "config.json", config_to_json(cfg_));
        json metrics{{"datasets", sets.size()}, {"points", points}};
        return {"gen-data", "gen-data: " + std::to_string(sets.size()) + " datasets, " + std::to_string(points) +
                                " measurement times",
                metrics};
    }

    StageResult estimate() {
        const auto data = load_datasets();
        const fs::path dir = out_ / "estimate";
        fs::create_directories(dir);
        const EstimationConfig ecfg = estimation_config();
        json summary = stamped(stamp_, "estimate-summary");
        summary["datasets"] = json::array();
        double fit = 0, reg = 0, tv = 0;
        std::size_t n_res = 0;
        for (std::size_t d = 0; d < data.size(); ++d) {
            EstimateResult r;
            try {
                r = estimate_fluxes(model_, data[d], ecfg);
            } catch (const NumericalError& e) {
                throw NumericalError("dataset " + std::to_string(d) + ": " + e.what());
            }
            const std::size_t npts = data[d].meas_grid.size() * model_.n_z;
            json j = stamped(stamp_, "estimate");
            j["dataset"] = d;
            j["p_star"] = profile_to_json(r.p_star);
            j["x0_star"] = vec_to_json(r.x0_star);
            j["fit_cost"] = r.fit_cost;
            j["reg_cost"] = r.reg_cost;
            j["chi2_per_point"] = r.fit_cost / static_cast<double>(npts);
            j["total_variation"] = total_variation(r.p_star);
            j["lm"] = {{"iterations", r.lm.iterations},
                       {"evaluations", r.lm.evaluations},
                       {"termination", termination_name(r.lm.termination)},
                       {"cost_history", r.lm.cost_history}};
            write_json(dir / (stem(d) + ".json"), j);

            std::vector<std::string> h{time_col()};
            for (const auto& s : header(model_.states)) h.push_back(s);
            Mat tm(r.trajectory.states.rows(), static_cast<Eigen::Index>(1 + model_.n_x));
            for (Eigen::Index i = 0; i < tm.rows(); ++i) tm(i, 0) = r.trajectory.grid[static_cast<std::size_t>(i)];
            tm.rightCols(static_cast<Eigen::Index>(model_.n_x)) = r.trajectory.states;
            write_csv(dir / (stem(d) + "_trajectory.csv"), stamp_.comment(), h, tm);

            std::vector<std::string> rh{time_col()};
            for (const auto& s : header(model_.outputs, "_residual")) rh.push_back(s);
            Mat rm(r.residuals.rows(), 1 + r.residuals.cols());
            for (Eigen::Index i = 0; i < rm.rows(); ++i) rm(i, 0) = data[d].meas_grid[static_cast<std::size_t>(i)];
            rm.rightCols(r.residuals.cols()) = r.residuals;
            write_csv(dir / (stem(d) + "_residuals.csv"), stamp_.comment(), rh, rm);

            summary["datasets"].push_back({{"dataset", d},
                                           {"fit_cost", r.fit_cost},
                                           {"reg_cost", r.reg_cost},
                                           {"points", npts},
                                           {"chi2_per_point", r.fit_cost / static_cast<double>(npts)},
                                           {"total_variation", total_variation(r.p_star)},
                                           {"iterations", r.lm.iterations}});
            fit += r.fit_cost;
            reg += r.reg_cost;
            tv += total_variation(r.p_star);
            n_res += npts;
        }
        const double chi2 = fit / static_cast<double>(n_res);
        summary["fit_cost"] = fit;
        summary["reg_cost"] = reg;
        summary["chi2_per_point"] = chi2;
        summary["total_variation"] = tv;
        write_json(dir / "summary.json", summary);
        json metrics{{"fit_cost", fit}, {"reg_cost", reg}, {"chi2_per_point", chi2}, {"total_variation", tv}};
        return {"estimate",
                "estimate: " + std::to_string(data.size()) + " datasets, fit_cost=" + num(fit) + ", reg_cost=" + num(reg) +
                    ", chi2/pt=" + num(chi2),
                metrics};
    }

    StageResult table() {
        const auto data = load_datasets();
        require_file(out_ / "estimate" / "summary.json", "estimate");
        const auto est = load_estimates(data);
        FluxTable ft = build_flux_table(est, model_);
        const auto n = static_cast<Eigen::Index>(ft.rows());
        Mat m(n, static_cast<Eigen::Index>(3 + ft.columns.size()));
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto [d, k] = ft.provenance[static_cast<std::size_t>(i)];
            m(i, 0) = static_cast<double>(d);
            m(i, 1) = static_cast<double>(k);
            m(i, 2) = est[d].p_star.grid().midpoints()[k];
            m.row(i).tail(static_cast<Eigen::Index>(ft.columns.size())) = ft.data.row(i);
        }
        std::vector<std::string> h{"dataset", "interval", "t_mid[" + model_.time_unit + "]"};
        for (const auto& s : header(model_.states)) h.push_back(s);
        for (const auto& s : header(model_.inputs)) h.push_back(s);
        for (const auto& s : header(model_.fluxes)) h.push_back(s);
        write_csv(out_ / "table" / "flux_table.csv", stamp_.comment(), h, m);
        json metrics{{"rows", ft.rows()}, {"dropped", ft.dropped}};
        return {"table", "table: " + std::to_string(ft.rows()) + " rows, " + std::to_string(ft.dropped) + " dropped",
                metrics};
    }

    StageResult correlate_stage() {
        const FluxTable ft = load_table();
        const CorrelationReport rep = correlate(ft, cfg_.analysis.tau);
        json j = stamped(stamp_, "correlation-report");
        j["tau"] = rep.tau;
        j["labels"] = rep.matrix.labels;
        j["r"] = json::array();
        for (Eigen::Index i = 0; i < rep.matrix.r.rows(); ++i) j["r"].push_back(vec_to_json(rep.matrix.r.row(i).transpose()));
        j["constant"] = rep.matrix.constant;
        j["mean"] = vec_to_json(rep.matrix.mean);
        j["selections"] = json::array();
        std::string line = "correlate: tau=" + num(rep.tau);
        for (const auto& s : rep.selections) {
            json e{{"flux", s.flux}, {"inputs", s.inputs}, {"constant", s.constant}, {"mean", s.mean}};
            if (s.constant) e["recommended_constant"] = snap(s.mean);
            j["selections"].push_back(std::move(e));
            line += "; " + s.flux + ":";
            if (s.constant) {
                line += " constant " + num(snap(s.mean));
            } else {
                for (const auto& in : s.inputs) line += " " + in;
            }
        }
        write_json(out_ / "correlate" / "report.json", j);
        write_csv(out_ / "correlate" / "correlation.csv", stamp_.comment(), rep.matrix.labels, rep.matrix.r);
        return {"correlate", line, j};
    }

    double snap(double mean) const { return std::abs(mean) <= cfg_.analysis.zero_snap ? 0.0 : mean; }

    StageResult train() {
        const FluxTable ft = load_table();
        const CorrelationReport rep = load_report();
        const fs::path dir = out_ / "train";
        fs::create_directories(dir);
        json summary = stamped(stamp_, "training-summary");
        summary["fluxes"] = json::object();
        std::string line = "train:";
        json metrics = json::object();
        for (std::size_t f = 0; f < model_.n_p; ++f) {
            const std::string& name = model_.fluxes[f].name;
            const FluxSelection& sel = rep.selection(name);
            const auto ov = cfg_.training.inputs.find(name);
            if (sel.constant && ov == cfg_.training.inputs.end()) {
                line += " " + name + "=constant";
                continue;
            }
            const std::vector<std::string> inputs = ov != cfg_.training.inputs.end() ? ov->second : sel.inputs;
            MlpSpec spec;
            spec.layer_sizes.push_back(inputs.size());
            for (std::size_t h : cfg_.training.hidden) spec.layer_sizes.push_back(h);
            spec.layer_sizes.push_back(1);
            spec.activations = cfg_.training.activations;
            spec.dropout_rate = cfg_.training.dropout;
            spec.seed = cfg_.seed + 1000003ULL * (f + 1);
            TrainedFlux tf;
            try {
                tf = train_mlp(ft, name, inputs, spec, cfg_.training.train);
            } catch (const ConfigError& e) {
                throw ConfigError("/training (" + name + "): " + e.what());
            }
            json doc = stamped(stamp_, "trained-flux");
            doc["flux"] = name;
            doc["screened_inputs"] = sel.inputs;
            doc["model"] = mlp_to_json(tf.net);
            doc["train_mse"] = tf.report.train_mse;
            doc["val_mse"] = tf.report.val_mse;
            doc["n_train"] = tf.report.n_train;
            doc["n_val"] = tf.report.n_val;
            write_json(dir / (name + ".json"), doc);
            const auto E = static_cast<Eigen::Index>(tf.report.train_loss.size());
            Mat curve(E, 3);
            for (Eigen::Index e = 0; e < E; ++e) {
                curve(e, 0) = static_cast<double>(e + 1);
                curve(e, 1) = tf.report.train_loss[static_cast<std::size_t>(e)];
                curve(e, 2) = tf.report.val_loss.empty() ? 0.0 : tf.report.val_loss[static_cast<std::size_t>(e)];
            }
            write_csv(dir / (name + "_loss.csv"), stamp_.comment(), {"epoch", "train_loss", "val_loss"}, curve);
            summary["fluxes"][name] = {{"inputs", inputs},
                                       {"screened_inputs", sel.inputs},
                                       {"train_mse", tf.report.train_mse},
                                       {"val_mse", tf.report.val_mse}};
            metrics[name] = summary["fluxes"][name];
            line += " " + name + " val_mse=" + num(tf.report.val_mse);
        }
        write_json(dir / "summary.json", summary);
        return {"train", line, metrics};
    }

    StageResult assemble() {
        const CorrelationReport rep = load_report();
        require_file(out_ / "train" / "summary.json", "train");
        std::map<std::string, Mlp> nets;
        std::map<std::string, double> consts;
        for (const auto& f : model_.fluxes) {
            const fs::path p = out_ / "train" / (f.name + ".json");
            const FluxSelection& sel = rep.selection(f.name);
            const bool expect_net = !sel.constant || cfg_.training.inputs.count(f.name);
            if (expect_net) {
                require_file(p, "train");
                nets[f.name] = mlp_from_json(read_json(p).at("model"));
            } else {
                consts[f.name] = snap(sel.mean);
            }
        }
        std::map<std::string, std::pair<double, double>> bounds;
        for (const auto& [k, b] : cfg_.training.output_bounds) bounds[k] = {b[0], b[1]};
        const bool screened = cfg_.training.inputs.empty();
        HybridModel hm = assemble_hybrid(model_, nets, consts, screened ? &rep : nullptr, bounds);
        write_json(out_ / "hybrid" / "manifest.json", hybrid_to_json(hm, stamp_));
        std::string line = "assemble: " + std::to_string(nets.size()) + " networks, " + std::to_string(consts.size()) +
                           " constants";
        return {"assemble", line, json{{"networks", nets.size()}, {"constants", consts.size()}}};
    }

    static double rel_rms(const Vec& a, const Vec& b) {
        const double nb = std::sqrt(b.squaredNorm() / static_cast<double>(b.size()));
        const double e = std::sqrt((a - b).squaredNorm() / static_cast<double>(b.size()));
        return nb > 0 ? e / nb : std::numeric_limits<double>::quiet_NaN();
    }

    StageResult simulate() {
        const TruthModel& truth = need_truth("simulate");
        const HybridModel hm = load_hybrid();
        const Scenario sc = scenario(cfg_.simulate.heldout_index);
        const double t0 = sc.mv.grid().front();
        const double t1 = std::min(sc.mv.grid().back(), t0 + cfg_.simulate.window);
        const TimeGrid g = TimeGrid::with_period(t0, t1, cfg_.simulate.sample_period, model_.time_unit);
        const Trajectory tt = simulate_closed(truth.closed(), sc.x0, sc.mv, g, cfg_.simulate.integrator);
        const Trajectory th = simulate_hybrid(hm, sc.x0, sc.mv, g, cfg_.simulate.integrator);
        const auto n = static_cast<Eigen::Index>(g.size());
        const auto nx = static_cast<Eigen::Index>(model_.n_x), nu = static_cast<Eigen::Index>(model_.n_u),
                   np = static_cast<Eigen::Index>(model_.n_p);
        Mat pt(n, np), ph(n, np);
        Mat m(n, 1 + nu + 2 * nx + 2 * np);
        Vec p;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double t = g[static_cast<std::size_t>(j)];
            const Vec u = sc.mv.eval(t);
            truth.flux(tt.states.row(j).transpose(), u, t, p);
            pt.row(j) = p.transpose();
            hm.fluxes(th.states.row(j).transpose(), u, p);
            ph.row(j) = p.transpose();
            m(j, 0) = t;
            m.row(j).segment(1, nu) = u.transpose();
            m.row(j).segment(1 + nu, nx) = tt.states.row(j);
            m.row(j).segment(1 + nu + nx, nx) = th.states.row(j);
            m.row(j).segment(1 + nu + 2 * nx, np) = pt.row(j);
            m.row(j).segment(1 + nu + 2 * nx + np, np) = ph.row(j);
        }
        std::vector<std::string> h{time_col()};
        for (const auto& s : header(model_.inputs)) h.push_back(s);
        for (const auto& s : header(model_.states, "_truth")) h.push_back(s);
        for (const auto& s : header(model_.states, "_hybrid")) h.push_back(s);
        for (const auto& s : header(model_.fluxes, "_truth")) h.push_back(s);
        for (const auto& s : header(model_.fluxes, "_hybrid")) h.push_back(s);
        write_csv(out_ / "simulate" / "heldout.csv", stamp_.comment(), h, m);

        json sj = stamped(stamp_, "heldout-simulation");
        sj["scenario"] = cfg_.simulate.heldout_index;
        sj["window"] = {t0, t1};
        json states = json::object(), fluxes = json::object();
        std::string line = "simulate: rel_rmse";
        for (std::size_t i = 0; i < model_.n_x; ++i) {
            const double r = rel_rms(th.states.col(static_cast<Eigen::Index>(i)), tt.states.col(static_cast<Eigen::Index>(i)));
            states[model_.states[i].name] = r;
            line += " " + model_.states[i].name + "=" + num(r);
        }
        line += "; flux rel_rms";
        for (std::size_t i = 0; i < model_.n_p; ++i) {
            const auto c = static_cast<Eigen::Index>(i);
            const double r = rel_rms(ph.col(c), pt.col(c));
            fluxes[model_.fluxes[i].name] = {{"rel_rms", r},
                                             {"rms", std::sqrt((ph.col(c) - pt.col(c)).squaredNorm() / static_cast<double>(n))}};
            line += " " + model_.fluxes[i].name + "=" + num(r);
        }
        sj["state_rel_rmse"] = states;
        sj["flux_error"] = fluxes;
        write_json(out_ / "simulate" / "summary.json", sj);
        return {"simulate", line, sj};
    }

    StageResult evaluate() {
        const HybridModel hm = load_hybrid();
        const auto data = load_datasets();
        const auto est = load_estimates(data);
        std::vector<Vec> x0s;
        std::vector<double> fits;
        for (const auto& r : est) {
            x0s.push_back(r.x0_star);
            fits.push_back(r.fit_cost);
        }
        const auto scores = evaluate_hybrid(hm, data, x0s, fits, cfg_.estimation.integrator);
        json j = stamped(stamp_, "evaluation");
        j["datasets"] = json::array();
        Mat m(static_cast<Eigen::Index>(scores.size()), 5);
        double worst = 0.0;
        std::size_t failed = 0;
        for (std::size_t d = 0; d < scores.size(); ++d) {
            const auto& s = scores[d];
            json e{{"dataset", d}, {"ok", s.ok}, {"step1_fit", fits[d]}};
            const auto row = static_cast<Eigen::Index>(d);
            m(row, 0) = static_cast<double>(d);
            m(row, 1) = s.ok ? 1.0 : 0.0;
            m(row, 2) = fits[d];
            if (s.ok) {
                e["fit"] = s.fit;
                e["delta"] = *s.delta();
                e["ratio"] = s.fit / fits[d];
                worst = std::max(worst, s.fit / fits[d]);
                m(row, 3) = s.fit;
                m(row, 4) = s.fit / fits[d];
            } else {
                e["error"] = s.error;
                ++failed;
                m(row, 3) = std::numeric_limits<double>::quiet_NaN();
                m(row, 4) = std::numeric_limits<double>::quiet_NaN();
            }
            j["datasets"].push_back(std::move(e));
        }
        j["worst_ratio"] = worst;
        j["failed"] = failed;
        write_json(out_ / "evaluate" / "evaluation.json", j);
        write_csv(out_ / "evaluate" / "fits.csv", stamp_.comment(), {"dataset", "ok", "step1_fit", "hybrid_fit", "ratio"}, m);
        return {"evaluate",
                "evaluate: " + std::to_string(scores.size() - failed) + "/" + std::to_string(scores.size()) +
                    " datasets simulated, worst hybrid/step1 fit ratio=" + num(worst),
                j};
    }

    struct Tracking {
        std::size_t cv = 0;
        double step_time = 0, step = 0;
        std::optional<double> settle_1pct;  // seconds after the step
        std::optional<double> enter_5pct;
        double offset = 0;
        std::size_t violations = 0, failed_steps = 0;
        double max_wall = 0, mean_wall = 0;
    };

    static Tracking tracking(const ClosedLoopLog& log, const MpcConfig& c) {
        Tracking tr;
        Eigen::Index cv = 0;
        c.q.maxCoeff(&cv);
        tr.cv = static_cast<std::size_t>(cv);
        const auto& sps = c.setpoints;
        tr.step_time = sps.back().time;
        tr.step = sps.size() > 1 ? sps.back().target[cv] - sps[sps.size() - 2].target[cv] : 0.0;
        const double mag = std::abs(tr.step);
        std::optional<double> last_outside;
        std::vector<double> errs;
        std::size_t n_wall = 0;
        for (const auto& r : log.records) {
            if ((r.applied.array() < c.u_lo.array() - 1e-12).any() || (r.applied.array() > c.u_hi.array() + 1e-12).any()) {
                ++tr.violations;
            }
            if (!r.ok) ++tr.failed_steps;
            if (r.wall_seconds > 0) {
                tr.max_wall = std::max(tr.max_wall, r.wall_seconds);
                tr.mean_wall += r.wall_seconds;
                ++n_wall;
            }
            if (r.time < tr.step_time - 1e-9) continue;
            const double e = r.measured[cv] - r.setpoint[cv];
            errs.push_back(e);
            if (mag > 0 && std::abs(e) <= 0.05 * mag && !tr.enter_5pct) tr.enter_5pct = r.time - tr.step_time;
            if (mag > 0 && std::abs(e) > 0.01 * mag) last_outside = r.time;
        }
        if (n_wall) tr.mean_wall /= static_cast<double>(n_wall);
        if (mag > 0 && !errs.empty() && std::abs(errs.back()) <= 0.01 * mag) {
            tr.settle_1pct = last_outside ? *last_outside + c.sampling - tr.step_time : 0.0;
        }
        const std::size_t k = std::min<std::size_t>(10, errs.size());
        for (std::size_t i = errs.size() - k; i < errs.size(); ++i) tr.offset += errs[i] / static_cast<double>(k);
        return tr;
    }

    void write_log(const fs::path& p, const ClosedLoopLog& log) const {
        const auto nx = static_cast<Eigen::Index>(model_.n_x), nz = static_cast<Eigen::Index>(model_.n_z),
                   nu = static_cast<Eigen::Index>(model_.n_u);
        Mat m(static_cast<Eigen::Index>(log.records.size()), 1 + nx + 2 * nz + nu + 3);
        for (std::size_t i = 0; i < log.records.size(); ++i) {
            const auto& r = log.records[i];
            const auto row = static_cast<Eigen::Index>(i);
            m(row, 0) = r.time;
            m.row(row).segment(1, nx) = r.state.transpose();
            m.row(row).segment(1 + nx, nz) = r.measured.transpose();
            m.row(row).segment(1 + nx + nz, nz) = r.setpoint.transpose();
            m.row(row).segment(1 + nx + 2 * nz, nu) = r.applied.transpose();
            m(row, 1 + nx + 2 * nz + nu) = r.cost;
            m(row, 2 + nx + 2 * nz + nu) = r.iterations;
            m(row, 3 + nx + 2 * nz + nu) = r.ok ? 1.0 : 0.0;
        }
        std::vector<std::string> h{time_col()};
        for (const auto& s : header(model_.states)) h.push_back(s);
        for (const auto& s : header(model_.outputs, "_meas")) h.push_back(s);
        for (const auto& s : header(model_.outputs, "_sp")) h.push_back(s);
        for (const auto& s : header(model_.inputs)) h.push_back(s);
        h.push_back("ocp_cost");
        h.push_back("iterations");
        h.push_back("ok");
        write_csv(p, stamp_.comment(), h, m);
    }

    static json tracking_json(const Tracking& t, const ClosedLoopLog& log) {
        json j{{"step_time", t.step_time},
               {"step", t.step},
               {"steady_offset", t.offset},
               {"bound_violations", t.violations},
               {"failed_steps", t.failed_steps},
               {"aborted", log.aborted},
               {"records", log.records.size()}};
        j["settle_1pct"] = t.settle_1pct ? json(*t.settle_1pct) : json(nullptr);
        j["enter_5pct"] = t.enter_5pct ? json(*t.enter_5pct) : json(nullptr);
        if (log.aborted) j["abort_reason"] = log.abort_reason;
        return j;
    }

    StageResult mpc() {
        if (cfg_.kind != CaseKind::three_tank) throw ConfigError("stage 'mpc' is defined for the three-tank case only");
        const TruthModel& truth = need_truth("mpc");
        const HybridModel hm = load_hybrid();
        const MpcConfig mc = mpc_config();
        const Vec u0 = to_vec(cfg_.mpc.u0);
        const Vec x0 = tank_steady_state(u0[0], u0[1], cfg_.mpc.reservoir0);
        const ClosedModel plant = truth.closed();
        const MeasurementNoise noise{cfg_.mpc.noise_sigma, cfg_.seed};
        const ClosedLoopLog perfect =
            closed_loop(plant, plant, mc, cfg_.mpc.duration, x0, u0, cfg_.mpc.plant_integrator, noise);
        const ClosedLoopLog hybrid =
            closed_loop(plant, hm.closed(), mc, cfg_.mpc.duration, x0, u0, cfg_.mpc.plant_integrator, noise);
        write_log(out_ / "mpc" / "closed_loop_truth.csv", perfect);
        write_log(out_ / "mpc" / "closed_loop_hybrid.csv", hybrid);
        const Tracking tp = tracking(perfect, mc), th = tracking(hybrid, mc);
        json j = stamped(stamp_, "mpc-summary");
        j["cv"] = model_.outputs[tp.cv].name;
        j["perfect_model"] = tracking_json(tp, perfect);
        j["hybrid_model"] = tracking_json(th, hybrid);
        write_json(out_ / "mpc" / "summary.json", j);
        json metrics = j;
        metrics["perfect_model"]["max_wall_seconds"] = tp.max_wall;
        metrics["hybrid_model"]["max_wall_seconds"] = th.max_wall;
        metrics["perfect_model"]["mean_wall_seconds"] = tp.mean_wall;
        metrics["hybrid_model"]["mean_wall_seconds"] = th.mean_wall;
        auto opt = [](const std::optional<double>& v) { return v ? num(*v) + " s" : std::string("never"); };
        std::string line = "mpc: perfect settle(1%)=" + opt(tp.settle_1pct) + ", hybrid enter(5%)=" + opt(th.enter_5pct) +
                           ", hybrid offset=" + num(th.offset) + ", violations=" + std::to_string(tp.violations + th.violations) +
                           ", max step wall=" + num(std::max(tp.max_wall, th.max_wall)) + " s";
        return {"mpc", line, metrics};
    }

    PipelineConfig cfg_;
    fs::path out_;
    Stamp stamp_;
    ModelStructure model_;
    std::optional<TruthModel> truth_;
};

}  // namespace hybridid
