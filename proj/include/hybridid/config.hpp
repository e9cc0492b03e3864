#pragma once

// Pipeline configuration. Each section lists its fields once in a `fields`
// visitor; the same visitor drives strict JSON reading and the canonical dump
// that feeds the config hash.

#include <map>
#include <set>

#include "hybridid/io.hpp"
#include "hybridid/mlp.hpp"
#include "hybridid/mpc.hpp"

namespace hybridid {

using json = nlohmann::json;

enum class CaseKind { cstr, three_tank, user_model };

inline const char* case_name(CaseKind c) {
    switch (c) {
        case CaseKind::cstr: return "cstr";
        case CaseKind::three_tank: return "three-tank";
        case CaseKind::user_model: return "user-model";
    }
    return "?";
}

inline CaseKind parse_case(const std::string& s, const std::string& where = "/case") {
    if (s == "cstr") return CaseKind::cstr;
    if (s == "three-tank") return CaseKind::three_tank;
    if (s == "user-model") return CaseKind::user_model;
    throw ConfigError(where + ": unknown case '" + s + "' (expected cstr, three-tank or user-model)");
}

struct DatasetRef {
    std::string csv;
    std::string knots;
};

struct DataSection {
    std::size_t scenarios = 8;
    double meas_period = 1.0;
    NoiseConfig noise;
    IntegratorConfig integrator;  // ground-truth simulation
    CstrScenarioConfig cstr;
    TankScenarioConfig tank;
    std::vector<DatasetRef> files;  // user-model case
};

struct EstimationSection {
    std::size_t disc_factor = 10;
    double w_reg = 1e-2;
    bool estimate_x0 = true;
    IntegratorConfig integrator;
    LmConfig lm;
};

struct AnalysisSection {
    double tau = 0.5;
    double zero_snap = 1e-3;
};

struct TrainingSection {
    std::vector<std::size_t> hidden{4, 4};
    std::vector<Activation> activations{Activation::tanh, Activation::linear, Activation::linear};
    double dropout = 0.0;
    TrainConfig train;
    std::map<std::string, std::vector<std::string>> inputs;  // per-flux override of the screened inputs
    std::map<std::string, std::vector<double>> output_bounds;
};

struct SimulateSection {
    std::size_t heldout_index = 1000;
    double window = 120.0;
    double sample_period = 1.0;
    IntegratorConfig integrator;
};

struct SetpointSpec {
    double time = 0.0;
    std::vector<double> target;
};

struct MpcSection {
    double sampling = 8.0;
    double horizon = 180.0;
    std::vector<double> q{0.0, 1.0, 0.0, 0.0};
    std::vector<double> s{0.1, 0.1};
    std::vector<double> u_lo{0.01, 0.01};
    std::vector<double> u_hi{0.04, 0.04};
    std::vector<SetpointSpec> setpoints{{0.0, {0.0, 0.16, 0.0, 0.0}}, {80.0, {0.0, 0.25, 0.0, 0.0}}};
    bool warm_start = true;
    LmConfig lm;
    IntegratorConfig integrator;        // controller model
    IntegratorConfig plant_integrator;  // truth plant
    double duration = 880.0;
    std::vector<double> u0{0.02, 0.02};
    double reservoir0 = 5.0;
    double noise_sigma = 0.0;
};

struct PipelineConfig {
    CaseKind kind = CaseKind::cstr;
    std::uint64_t seed = 7;
    std::string model;  // user-model manifest
    std::string out = "out";
    DataSection data;
    EstimationSection estimation;
    AnalysisSection analysis;
    TrainingSection training;
    SimulateSection simulate;
    MpcSection mpc;
    fs::path base_dir;  // relative file references resolve here; not part of the hash
};

// ---- field lists ----

template <class A> void fields(A& a, IntegratorConfig& c) {
    a("method", c.method);
    a("max_step", c.max_step);
    a("newton_tol", c.newton_tol);
    a("newton_max_iter", c.newton_max_iter);
}

template <class A> void fields(A& a, LmConfig& c) {
    a("lambda0", c.lambda0);
    a("lambda_up", c.lambda_up);
    a("lambda_down", c.lambda_down);
    a("max_iter", c.max_iter);
    a("grad_tol", c.grad_tol);
    a("step_tol", c.step_tol);
    a("cost_tol", c.cost_tol);
}

template <class A> void fields(A& a, NoiseConfig& c) {
    a("mode", c.mode);
    a("level", c.level);
}

template <class A> void fields(A& a, CstrScenarioConfig& c) {
    a("span", c.span);
    a("segment", c.segment);
    a("level_nominal", c.level_nominal);
    a("level_excursion", c.level_excursion);
    a("tc_nominal", c.tc_nominal);
    a("tc_excursion", c.tc_excursion);
    a("tc_trend", c.tc_trend);
    a("level0_spread", c.level0_spread);
    a("tc0_spread", c.tc0_spread);
}

template <class A> void fields(A& a, TankScenarioConfig& c) {
    a("span", c.span);
    a("segment", c.segment);
    a("flow_lo", c.flow_lo);
    a("flow_hi", c.flow_hi);
    a("reservoir_nominal", c.reservoir_nominal);
    a("reservoir_spread", c.reservoir_spread);
}

template <class A> void fields(A& a, DatasetRef& c) {
    a("csv", c.csv);
    a("knots", c.knots);
}

template <class A> void fields(A& a, DataSection& c) {
    a("scenarios", c.scenarios);
    a("meas_period", c.meas_period);
    a("noise", c.noise);
    a("integrator", c.integrator);
    a("cstr", c.cstr);
    a("tank", c.tank);
    a("files", c.files);
}

template <class A> void fields(A& a, EstimationSection& c) {
    a("disc_factor", c.disc_factor);
    a("w_reg", c.w_reg);
    a("estimate_x0", c.estimate_x0);
    a("integrator", c.integrator);
    a("lm", c.lm);
}

template <class A> void fields(A& a, AnalysisSection& c) {
    a("tau", c.tau);
    a("zero_snap", c.zero_snap);
}

template <class A> void fields(A& a, TrainingSection& c) {
    a("hidden", c.hidden);
    a("activations", c.activations);
    a("dropout", c.dropout);
    a("epochs", c.train.epochs);
    a("learning_rate", c.train.learning_rate);
    a("beta1", c.train.beta1);
    a("beta2", c.train.beta2);
    a("eps", c.train.eps);
    a("validation_fraction", c.train.validation_fraction);
    a("inputs", c.inputs);
    a("output_bounds", c.output_bounds);
}

template <class A> void fields(A& a, SimulateSection& c) {
    a("heldout_index", c.heldout_index);
    a("window", c.window);
    a("sample_period", c.sample_period);
    a("integrator", c.integrator);
}

template <class A> void fields(A& a, SetpointSpec& c) {
    a("time", c.time);
    a("target", c.target);
}

template <class A> void fields(A& a, MpcSection& c) {
    a("sampling", c.sampling);
    a("horizon", c.horizon);
    a("q", c.q);
    a("s", c.s);
    a("u_lo", c.u_lo);
    a("u_hi", c.u_hi);
    a("setpoints", c.setpoints);
    a("warm_start", c.warm_start);
    a("lm", c.lm);
    a("integrator", c.integrator);
    a("plant_integrator", c.plant_integrator);
    a("duration", c.duration);
    a("u0", c.u0);
    a("reservoir0", c.reservoir0);
    a("noise_sigma", c.noise_sigma);
}

template <class A> void fields(A& a, PipelineConfig& c) {
    a("case", c.kind);
    a("seed", c.seed);
    a("model", c.model);
    a("data", c.data);
    a("estimation", c.estimation);
    a("analysis", c.analysis);
    a("training", c.training);
    a("simulate", c.simulate);
    a("mpc", c.mpc);
}

namespace detail {

struct ProbeArchive {
    template <class T> void operator()(const char*, T&) {}
};

template <class T>
concept HasFields = requires(ProbeArchive& a, T& t) { fields(a, t); };

[[noreturn]] inline void bad(const std::string& path, const std::string& what) {
    throw ConfigError(path + ": " + what);
}

inline void read_value(const json& j, const std::string& p, double& v) {
    if (!j.is_number()) bad(p, "expected a number");
    v = j.get<double>();
}
inline void read_value(const json& j, const std::string& p, bool& v) {
    if (!j.is_boolean()) bad(p, "expected true or false");
    v = j.get<bool>();
}
inline void read_value(const json& j, const std::string& p, int& v) {
    if (!j.is_number_integer()) bad(p, "expected an integer");
    v = j.get<int>();
}
inline void read_value(const json& j, const std::string& p, std::size_t& v) {
    if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
        bad(p, "expected a nonnegative integer");
    }
    v = j.get<std::size_t>();
}
inline void read_value(const json& j, const std::string& p, std::string& v) {
    if (!j.is_string()) bad(p, "expected a string");
    v = j.get<std::string>();
}
inline void read_value(const json& j, const std::string& p, Activation& v) {
    std::string s;
    read_value(j, p, s);
    try {
        v = parse_activation(s);
    } catch (const ConfigError& e) {
        bad(p, e.what());
    }
}
inline void read_value(const json& j, const std::string& p, CaseKind& v) {
    std::string s;
    read_value(j, p, s);
    v = parse_case(s, p);
}
inline void read_value(const json& j, const std::string& p, NoiseConfig::Mode& v) {
    std::string s;
    read_value(j, p, s);
    if (s == "relative") v = NoiseConfig::Mode::relative;
    else if (s == "absolute") v = NoiseConfig::Mode::absolute;
    else bad(p, "expected relative or absolute");
}
inline void read_value(const json& j, const std::string& p, IntegratorConfig::Method& v) {
    std::string s;
    read_value(j, p, s);
    if (s == "rk4") v = IntegratorConfig::Method::rk4;
    else if (s == "implicit_euler") v = IntegratorConfig::Method::implicit_euler;
    else bad(p, "expected rk4 or implicit_euler");
}

template <class T> void read_value(const json& j, const std::string& p, std::vector<T>& v);
template <class T> void read_value(const json& j, const std::string& p, std::map<std::string, T>& v);
template <HasFields T> void read_value(const json& j, const std::string& p, T& v);

template <class T> void read_value(const json& j, const std::string& p, std::vector<T>& v) {
    if (!j.is_array()) bad(p, "expected an array");
    v.clear();
    v.resize(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) read_value(j[i], p + "/" + std::to_string(i), v[i]);
}

template <class T> void read_value(const json& j, const std::string& p, std::map<std::string, T>& v) {
    if (!j.is_object()) bad(p, "expected an object");
    v.clear();
    for (const auto& [k, x] : j.items()) read_value(x, p + "/" + k, v[k]);
}

/// Reads known keys into a section and rejects everything else.
class JsonReader {
public:
    JsonReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) bad(path_.empty() ? "/" : path_, "expected an object");
    }

    template <class T> void operator()(const char* key, T& v) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it != j_.end()) read_value(*it, path_ + "/" + key, v);
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) bad(path_ + "/" + k, "unknown key");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <HasFields T> void read_value(const json& j, const std::string& p, T& v) {
    JsonReader r(j, p);
    fields(r, v);
    r.finish();
}

inline json write_value(double v) { return v; }
inline json write_value(bool v) { return v; }
inline json write_value(int v) { return v; }
inline json write_value(std::size_t v) { return v; }
inline json write_value(const std::string& v) { return v; }
inline json write_value(Activation v) { return activation_name(v); }
inline json write_value(CaseKind v) { return case_name(v); }
inline json write_value(NoiseConfig::Mode v) { return v == NoiseConfig::Mode::relative ? "relative" : "absolute"; }
inline json write_value(IntegratorConfig::Method v) {
    return v == IntegratorConfig::Method::rk4 ? "rk4" : "implicit_euler";
}
template <class T> json write_value(const std::vector<T>& v);
template <class T> json write_value(const std::map<std::string, T>& v);
template <HasFields T> json write_value(const T& v);

template <class T> json write_value(const std::vector<T>& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back(write_value(x));
    return a;
}

template <class T> json write_value(const std::map<std::string, T>& v) {
    json o = json::object();
    for (const auto& [k, x] : v) o[k] = write_value(x);
    return o;
}

class JsonWriter {
public:
    template <class T> void operator()(const char* key, const T& v) { j_[key] = write_value(v); }
    json take() { return std::move(j_); }

private:
    json j_ = json::object();
};

template <HasFields T> json write_value(const T& v) {
    JsonWriter w;
    T copy = v;
    fields(w, copy);
    return w.take();
}

}  // namespace detail

/// Case defaults; a config file only needs to state what differs.
inline PipelineConfig default_config(CaseKind kind) {
    PipelineConfig c;
    c.kind = kind;
    if (kind == CaseKind::cstr) {
        c.data.scenarios = 8;
        c.data.meas_period = 1.0;  // min
        c.data.noise = {NoiseConfig::Mode::relative, 0.02};
        c.data.integrator.max_step = 0.05;
        c.estimation.disc_factor = 10;
        c.estimation.integrator.max_step = 0.1;
        c.estimation.lm.cost_tol = 1e-10;
        c.simulate = {1000, 120.0, 1.0, c.data.integrator};
    } else if (kind == CaseKind::three_tank) {
        c.data.scenarios = 6;
        c.data.meas_period = 2.0;  // s
        c.data.noise = {NoiseConfig::Mode::relative, 0.01};
        c.data.integrator.max_step = 0.5;
        c.estimation.disc_factor = 5;
        c.estimation.integrator.max_step = 0.5;
        c.estimation.lm.cost_tol = 1e-10;
        c.training.hidden = {10, 10};
        c.training.activations = {Activation::leaky_relu, Activation::leaky_relu, Activation::linear};
        c.training.dropout = 0.1;
        c.training.inputs = {{"p1", {"h1"}}, {"p2", {"h1", "h2"}}, {"p3", {"h2", "h3"}}, {"p4", {"h3"}}};
        c.simulate = {1000, 900.0, 2.0, c.data.integrator};
        MpcConfig d = MpcConfig::tank_default();
        c.mpc.lm = d.lm;
        c.mpc.integrator = d.integrator;
        c.mpc.plant_integrator.max_step = 0.5;
    } else {
        c.data.scenarios = 0;
        c.estimation.integrator.max_step = 0.1;
    }
    return c;
}

/// Canonical effective configuration; the hash covers exactly this text.
inline json config_to_json(const PipelineConfig& c) {
    json j = detail::write_value(c);
    j["schema_version"] = 1;
    return j;
}

inline std::string config_hash(const PipelineConfig& c) { return hex64(fnv1a64(config_to_json(c).dump())); }

inline Stamp stamp_of(const PipelineConfig& c) { return {config_hash(c), c.seed}; }

inline void validate_config(const PipelineConfig& c) {
    auto need = [](bool ok, const std::string& path, const std::string& what) {
        if (!ok) throw ConfigError(path + ": " + what);
    };
    const bool builtin = c.kind != CaseKind::user_model;
    if (builtin) {
        need(c.data.scenarios >= 1, "/data/scenarios", "need at least one scenario");
        need(c.data.meas_period > 0, "/data/meas_period", "must be positive");
    } else {
        need(!c.model.empty(), "/model", "user-model case needs a model manifest");
        need(!c.data.files.empty(), "/data/files", "user-model case needs at least one dataset");
        for (std::size_t i = 0; i < c.data.files.size(); ++i) {
            need(!c.data.files[i].csv.empty() && !c.data.files[i].knots.empty(),
                 "/data/files/" + std::to_string(i), "needs csv and knots paths");
        }
    }
    need(c.data.noise.level >= 0, "/data/noise/level", "must be nonnegative");
    need(c.data.integrator.max_step > 0, "/data/integrator/max_step", "must be positive");
    need(c.estimation.disc_factor >= 1, "/estimation/disc_factor", "must be at least 1");
    need(c.estimation.w_reg >= 0, "/estimation/w_reg", "must be nonnegative");
    need(c.estimation.integrator.max_step > 0, "/estimation/integrator/max_step", "must be positive");
    try {
        c.estimation.lm.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("/estimation/lm: ") + e.what());
    }
    need(c.analysis.tau > 0 && c.analysis.tau <= 1, "/analysis/tau", "must lie in (0, 1]");
    need(c.analysis.zero_snap >= 0, "/analysis/zero_snap", "must be nonnegative");
    need(c.training.activations.size() == c.training.hidden.size() + 1, "/training/activations",
         "need one activation per hidden layer plus one for the output");
    for (std::size_t i = 0; i < c.training.hidden.size(); ++i) {
        need(c.training.hidden[i] >= 1, "/training/hidden/" + std::to_string(i), "must be at least 1");
    }
    need(c.training.dropout >= 0 && c.training.dropout < 1, "/training/dropout", "must lie in [0, 1)");
    need(c.training.train.epochs >= 1, "/training/epochs", "must be at least 1");
    need(c.training.train.learning_rate > 0, "/training/learning_rate", "must be positive");
    need(c.training.train.validation_fraction >= 0 && c.training.train.validation_fraction < 1,
         "/training/validation_fraction", "must lie in [0, 1)");
    for (const auto& [k, b] : c.training.output_bounds) {
        need(b.size() == 2 && b[0] <= b[1], "/training/output_bounds/" + k, "expected [lo, hi] with lo <= hi");
    }
    for (const auto& [k, in] : c.training.inputs) {
        need(!in.empty(), "/training/inputs/" + k, "input list must not be empty");
    }
    if (builtin) {
        need(c.simulate.window > 0, "/simulate/window", "must be positive");
        need(c.simulate.sample_period > 0, "/simulate/sample_period", "must be positive");
    }
    if (c.kind == CaseKind::three_tank) {
        need(c.mpc.duration > 0, "/mpc/duration", "must be positive");
        need(c.mpc.u0.size() == 2, "/mpc/u0", "expected 2 values");
        need(c.mpc.reservoir0 >= 0, "/mpc/reservoir0", "must be nonnegative");
        need(c.mpc.noise_sigma >= 0, "/mpc/noise_sigma", "must be nonnegative");
    }
}

/// Defaults for the case, overlaid with the document. `case_override` wins
/// over the document's "case".
inline PipelineConfig config_from_json(const json& j, const std::optional<std::string>& case_override = {}) {
    if (!j.is_object()) throw ConfigError("/: expected an object");
    CaseKind kind = CaseKind::cstr;
    if (case_override) {
        kind = parse_case(*case_override, "--case");
    } else if (auto it = j.find("case"); it != j.end()) {
        detail::read_value(*it, "/case", kind);
    }
    json body = j;
    if (auto it = body.find("schema_version"); it != body.end()) {
        if (*it != 1) throw ConfigError("/schema_version: unsupported version");
        body.erase("schema_version");
    }
    PipelineConfig c = default_config(kind);
    if (auto it = body.find("out"); it != body.end()) {
        detail::read_value(*it, "/out", c.out);
        body.erase("out");
    }
    detail::read_value(body, "", c);
    c.kind = kind;
    return c;
}

inline PipelineConfig load_config(const fs::path& path, const std::optional<std::string>& case_override = {}) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    PipelineConfig c = config_from_json(j, case_override);
    c.base_dir = path.parent_path();
    return c;
}

inline fs::path resolve(const PipelineConfig& c, const std::string& p) {
    fs::path q(p);
    return q.is_absolute() || c.base_dir.empty() ? q : c.base_dir / q;
}

}  // namespace hybridid
