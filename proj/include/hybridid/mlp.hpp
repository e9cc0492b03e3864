#pragma once

// Small fully connected networks for flux regression: z-score scalers,
// backpropagation of the MSE loss, Adam with inverted dropout, and a JSON
// model document that round-trips bit-exactly.

#include <cstdint>
#include <map>
#include <random>

#include <nlohmann/json.hpp>

#include "hybridid/analyze.hpp"
#include "hybridid/pseudo_data.hpp"

namespace hybridid {

enum class Activation { tanh, linear, leaky_relu };

inline constexpr double kLeakyAlpha = 0.01;

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::tanh: return "tanh";
        case Activation::linear: return "linear";
        case Activation::leaky_relu: return "leaky-relu";
    }
    return "?";
}

inline Activation parse_activation(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "linear") return Activation::linear;
    if (s == "leaky-relu" || s == "leaky_relu") return Activation::leaky_relu;
    throw ConfigError("unknown activation '" + s + "' (expected tanh, linear or leaky-relu)");
}

struct MlpSpec {
    std::vector<std::size_t> layer_sizes;  // n_in, hidden..., n_out
    std::vector<Activation> activations;   // one per weight layer
    double dropout_rate = 0.0;             // after each hidden layer, training only
    std::uint64_t seed = 0;

    std::size_t layers() const { return layer_sizes.empty() ? 0 : layer_sizes.size() - 1; }

    void validate() const {
        if (layer_sizes.size() < 2) throw ConfigError("MLP needs at least input and output sizes");
        for (std::size_t s : layer_sizes) {
            if (s < 1) throw ConfigError("MLP layer sizes must be at least 1");
        }
        if (activations.size() != layers()) {
            throw ConfigError("MLP needs " + std::to_string(layers()) + " activations, got " +
                              std::to_string(activations.size()));
        }
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
    }
};

namespace detail {

inline double activate(Activation a, double v) {
    switch (a) {
        case Activation::tanh: return std::tanh(v);
        case Activation::linear: return v;
        case Activation::leaky_relu: return v > 0.0 ? v : kLeakyAlpha * v;
    }
    return v;
}

/// Derivative expressed through the pre-activation v and activation y.
inline double activate_deriv(Activation a, double v, double y) {
    switch (a) {
        case Activation::tanh: return 1.0 - y * y;
        case Activation::linear: return 1.0;
        case Activation::leaky_relu: return v > 0.0 ? 1.0 : kLeakyAlpha;
    }
    return 1.0;
}

inline constexpr std::uint64_t kInitTag = 0x494e4954;
inline constexpr std::uint64_t kDropoutTag = 0x44524f50;

}  // namespace detail

struct Mlp {
    MlpSpec spec;
    std::vector<Mat> W;  // out x in
    std::vector<Vec> b;
    Vec input_mean, input_std, output_mean, output_std;
    std::vector<std::string> input_names;
    std::string output_name;

    std::size_t n_in() const { return spec.layer_sizes.front(); }
    std::size_t n_out() const { return spec.layer_sizes.back(); }

    /// Glorot-uniform weights, zero biases, identity scalers.
    static Mlp init(const MlpSpec& spec) {
        spec.validate();
        Mlp net;
        net.spec = spec;
        auto rng = detail::seeded_engine(spec.seed, {detail::kInitTag});
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        for (std::size_t l = 0; l < spec.layers(); ++l) {
            const auto in = static_cast<Eigen::Index>(spec.layer_sizes[l]);
            const auto out = static_cast<Eigen::Index>(spec.layer_sizes[l + 1]);
            const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
            Mat w(out, in);
            for (Eigen::Index i = 0; i < out; ++i) {
                for (Eigen::Index j = 0; j < in; ++j) w(i, j) = limit * unit(rng);
            }
            net.W.push_back(std::move(w));
            net.b.push_back(Vec::Zero(out));
        }
        net.input_mean = Vec::Zero(static_cast<Eigen::Index>(net.n_in()));
        net.input_std = Vec::Ones(static_cast<Eigen::Index>(net.n_in()));
        net.output_mean = Vec::Zero(static_cast<Eigen::Index>(net.n_out()));
        net.output_std = Vec::Ones(static_cast<Eigen::Index>(net.n_out()));
        return net;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < W.size(); ++l) n += static_cast<std::size_t>(W[l].size() + b[l].size());
        return n;
    }

    Vec standardize_input(const Vec& x) const { return (x - input_mean).cwiseQuotient(input_std); }
    Vec standardize_output(const Vec& y) const { return (y - output_mean).cwiseQuotient(output_std); }
    Vec unstandardize_output(const Vec& y) const { return y.cwiseProduct(output_std) + output_mean; }

    /// Network map in standardized coordinates (no dropout).
    Vec forward_standardized(const Vec& xs) const {
        std::vector<Vec> ws(W.size() + 1);
        ws[0] = xs;
        layers(ws);
        return ws.back();
    }

    /// Raw-unit forward pass. `ws` is scratch space; once sized by a first
    /// call, later calls do not allocate.
    void forward(const Vec& x, Vec& y, std::vector<Vec>& ws) const {
        ws.resize(W.size() + 1);
        ws[0] = (x - input_mean).cwiseQuotient(input_std);
        layers(ws);
        y = ws.back().cwiseProduct(output_std) + output_mean;
    }

private:
    void layers(std::vector<Vec>& ws) const {
        for (std::size_t l = 0; l < W.size(); ++l) {
            Vec& v = ws[l + 1];
            v.noalias() = W[l] * ws[l];
            v += b[l];
            for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = detail::activate(spec.activations[l], v[i]);
        }
    }
};

inline Vec mlp_forward(const Mlp& net, const Vec& x) {
    if (static_cast<std::size_t>(x.size()) != net.n_in()) {
        throw DimensionError("MLP expects " + std::to_string(net.n_in()) + " inputs, got " +
                             std::to_string(x.size()));
    }
    std::vector<Vec> ws;
    Vec y;
    net.forward(x, y, ws);
    return y;
}

struct MlpGradient {
    std::vector<Mat> dW;
    std::vector<Vec> db;
    double loss = 0.0;
};

namespace detail {

/// Batch forward/backward in standardized space. Rows of Xs/Ys are samples.
/// `masks[l]` (if given) scales hidden activations of layer l (inverted dropout).
inline MlpGradient backprop(const Mlp& net, const Mat& Xs, const Mat& Ys, const std::vector<Mat>* masks) {
    const std::size_t L = net.W.size();
    const double N = static_cast<double>(Xs.rows() * Ys.cols());
    std::vector<Mat> pre(L), act(L + 1);
    act[0] = Xs.transpose();  // features x samples
    for (std::size_t l = 0; l < L; ++l) {
        pre[l] = (net.W[l] * act[l]).colwise() + net.b[l];
        Mat a = pre[l].unaryExpr([&](double v) { return activate(net.spec.activations[l], v); });
        if (masks && l + 1 < L) a = a.cwiseProduct((*masks)[l]);
        act[l + 1] = std::move(a);
    }
    Mat delta = act[L] - Ys.transpose();
    MlpGradient g;
    g.loss = delta.squaredNorm() / N;
    delta *= 2.0 / N;
    g.dW.resize(L);
    g.db.resize(L);
    for (std::size_t l = L; l-- > 0;) {
        // delta holds dLoss/d(activation of layer l); move it to the pre-activation.
        Mat d(delta.rows(), delta.cols());
        for (Eigen::Index j = 0; j < d.cols(); ++j) {
            for (Eigen::Index i = 0; i < d.rows(); ++i) {
                double y = act[l + 1](i, j);
                double m = 1.0;
                if (masks && l + 1 < L) {
                    m = (*masks)[l](i, j);
                    if (m == 0.0) {
                        d(i, j) = 0.0;
                        continue;
                    }
                    y /= m;
                }
                d(i, j) = delta(i, j) * m * activate_deriv(net.spec.activations[l], pre[l](i, j), y);
            }
        }
        g.dW[l] = d * act[l].transpose();
        g.db[l] = d.rowwise().sum();
        if (l > 0) delta = net.W[l].transpose() * d;
    }
    return g;
}

inline Mat standardize_rows(const Mat& X, const Vec& mean, const Vec& sd) {
    Mat out = X.rowwise() - mean.transpose();
    for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j) /= sd[j];
    return out;
}

}  // namespace detail

/// Exact gradient of the mean squared error (over samples and outputs) in
/// standardized coordinates, for raw-unit inputs X and targets Y.
inline MlpGradient mlp_gradient(const Mlp& net, const Mat& X, const Mat& Y) {
    if (X.rows() < 1 || X.rows() != Y.rows()) throw DimensionError("mlp_gradient: empty or mismatched batch");
    if (static_cast<std::size_t>(X.cols()) != net.n_in() || static_cast<std::size_t>(Y.cols()) != net.n_out()) {
        throw DimensionError("mlp_gradient: batch width does not match the network");
    }
    return detail::backprop(net, detail::standardize_rows(X, net.input_mean, net.input_std),
                            detail::standardize_rows(Y, net.output_mean, net.output_std), nullptr);
}

inline double mlp_loss(const Mlp& net, const Mat& X, const Mat& Y) {
    Mat Xs = detail::standardize_rows(X, net.input_mean, net.input_std);
    Mat Ys = detail::standardize_rows(Y, net.output_mean, net.output_std);
    double s = 0.0;
    for (Eigen::Index i = 0; i < Xs.rows(); ++i) {
        s += (net.forward_standardized(Xs.row(i).transpose()) - Ys.row(i).transpose()).squaredNorm();
    }
    return s / static_cast<double>(Xs.rows() * Ys.cols());
}

/// Largest |analytic - central difference| / max(|analytic|, |fd|, floor)
/// over all weights and biases.
inline double gradient_check(const Mlp& net, const Mat& X, const Mat& Y, double step = 1e-6,
                             double floor = 1e-4) {
    const MlpGradient g = mlp_gradient(net, X, Y);
    Mlp probe = net;
    double worst = 0.0;
    auto check = [&](double& w, double analytic) {
        const double w0 = w;
        w = w0 + step;
        const double up = mlp_loss(probe, X, Y);
        w = w0 - step;
        const double down = mlp_loss(probe, X, Y);
        w = w0;
        const double fd = (up - down) / (2.0 * step);
        const double rel = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), floor});
        worst = std::max(worst, rel);
    };
    for (std::size_t l = 0; l < probe.W.size(); ++l) {
        for (Eigen::Index i = 0; i < probe.W[l].size(); ++i) check(probe.W[l].data()[i], g.dW[l].data()[i]);
        for (Eigen::Index i = 0; i < probe.b[l].size(); ++i) check(probe.b[l][i], g.db[l][i]);
    }
    return worst;
}

struct TrainConfig {
    int epochs = 2000;
    double learning_rate = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double validation_fraction = 0.2;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be at least 1");
        if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
            throw ConfigError("validation fraction must lie in [0, 1)");
        }
        if (!(learning_rate > 0) || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(eps > 0)) {
            throw ConfigError("invalid Adam settings");
        }
    }
};

struct TrainingReport {
    std::vector<double> train_loss;  // standardized MSE per epoch, dropout off
    std::vector<double> val_loss;
    double train_mse = 0.0;          // final, in flux units
    double val_mse = 0.0;
    std::size_t n_train = 0, n_val = 0;
};

struct TrainedFlux {
    Mlp net;
    TrainingReport report;
};

namespace detail {

/// Rows sorted by provenance, then by values, so training does not depend on
/// the order in which datasets were supplied.
inline std::vector<std::size_t> canonical_order(const FluxTable& t, const std::vector<std::size_t>& cols) {
    const bool tagged = !t.provenance.empty();
    if (tagged && t.provenance.size() != t.rows()) throw DimensionError("flux table provenance does not match its rows");
    std::vector<std::size_t> idx(t.rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (tagged && t.provenance[a] != t.provenance[b]) return t.provenance[a] < t.provenance[b];
        for (std::size_t c : cols) {
            const double va = t.data(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
            const double vb = t.data(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c));
            if (va != vb) return va < vb;
        }
        return false;
    });
    return idx;
}

inline void population_stats(const Mat& X, Vec& mean, Vec& sd) {
    mean = X.colwise().mean().transpose();
    sd.resize(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        sd[j] = std::max(std::sqrt((X.col(j).array() - mean[j]).square().mean()), 1e-12);
    }
}

}  // namespace detail

/// Trains one network for `flux_name` from the selected input columns.
inline TrainedFlux train_mlp(const FluxTable& table, const std::string& flux_name,
                             const std::vector<std::string>& inputs, const MlpSpec& spec, const TrainConfig& cfg) {
    cfg.validate();
    spec.validate();
    if (inputs.empty()) {
        throw ConfigError("no inputs selected for flux '" + flux_name + "'; bind it to a constant instead");
    }
    if (spec.layer_sizes.front() != inputs.size() || spec.layer_sizes.back() != 1) {
        throw ConfigError("MLP for '" + flux_name + "' must have " + std::to_string(inputs.size()) +
                          " inputs and 1 output");
    }
    if (table.rows() < 10) throw DataError("training table needs at least 10 rows, got " + std::to_string(table.rows()));
    std::vector<std::size_t> in_cols;
    for (const auto& name : inputs) {
        auto c = table.column(name);
        if (!c || table.is_flux(*c)) throw ConfigError("'" + name + "' is not a state or MV column");
        in_cols.push_back(*c);
    }
    auto out_col = table.column(flux_name);
    if (!out_col || !table.is_flux(*out_col)) throw ConfigError("'" + flux_name + "' is not a flux column");

    std::vector<std::size_t> key_cols = in_cols;
    key_cols.push_back(*out_col);
    const auto order = detail::canonical_order(table, key_cols);
    const std::size_t n = order.size();
    std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(n)));
    n_val = std::min(n_val, n - 1);
    const std::size_t n_tr = n - n_val;

    const auto n_in = static_cast<Eigen::Index>(inputs.size());
    Mat X(static_cast<Eigen::Index>(n), n_in), Y(static_cast<Eigen::Index>(n), 1);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(order[i]);
        for (Eigen::Index j = 0; j < n_in; ++j) {
            X(static_cast<Eigen::Index>(i), j) = table.data(r, static_cast<Eigen::Index>(in_cols[static_cast<std::size_t>(j)]));
        }
        Y(static_cast<Eigen::Index>(i), 0) = table.data(r, static_cast<Eigen::Index>(*out_col));
    }
    const Mat Xtr = X.topRows(static_cast<Eigen::Index>(n_tr)), Ytr = Y.topRows(static_cast<Eigen::Index>(n_tr));
    const Mat Xva = X.bottomRows(static_cast<Eigen::Index>(n_val)), Yva = Y.bottomRows(static_cast<Eigen::Index>(n_val));

    TrainedFlux out;
    Mlp& net = out.net;
    net = Mlp::init(spec);
    net.input_names = inputs;
    net.output_name = flux_name;
    detail::population_stats(Xtr, net.input_mean, net.input_std);
    detail::population_stats(Ytr, net.output_mean, net.output_std);
    const Mat Xs = detail::standardize_rows(Xtr, net.input_mean, net.input_std);
    const Mat Ys = detail::standardize_rows(Ytr, net.output_mean, net.output_std);
    const Mat Xvs = detail::standardize_rows(Xva, net.input_mean, net.input_std);
    const Mat Yvs = detail::standardize_rows(Yva, net.output_mean, net.output_std);

    const std::size_t L = net.W.size();
    std::vector<Mat> mW(L), vW(L);
    std::vector<Vec> mb(L), vb(L);
    for (std::size_t l = 0; l < L; ++l) {
        mW[l] = Mat::Zero(net.W[l].rows(), net.W[l].cols());
        vW[l] = mW[l];
        mb[l] = Vec::Zero(net.b[l].size());
        vb[l] = mb[l];
    }
    const double keep = 1.0 - spec.dropout_rate;
    std::vector<Mat> masks(L > 0 ? L - 1 : 0);
    double b1t = 1.0, b2t = 1.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<Mat>* mp = nullptr;
        if (spec.dropout_rate > 0.0) {
            auto rng = detail::seeded_engine(spec.seed, {detail::kDropoutTag, static_cast<std::uint64_t>(epoch)});
            std::bernoulli_distribution bern(keep);
            for (std::size_t l = 0; l + 1 < L; ++l) {
                masks[l].resize(static_cast<Eigen::Index>(spec.layer_sizes[l + 1]), Xs.rows());
                for (Eigen::Index j = 0; j < masks[l].cols(); ++j) {
                    for (Eigen::Index i = 0; i < masks[l].rows(); ++i) masks[l](i, j) = bern(rng) ? 1.0 / keep : 0.0;
                }
            }
            mp = &masks;
        }
        MlpGradient g = detail::backprop(net, Xs, Ys, mp);
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        const double c1 = 1.0 - b1t, c2 = 1.0 - b2t;
        for (std::size_t l = 0; l < L; ++l) {
            mW[l] = cfg.beta1 * mW[l] + (1.0 - cfg.beta1) * g.dW[l];
            vW[l] = cfg.beta2 * vW[l] + (1.0 - cfg.beta2) * g.dW[l].cwiseProduct(g.dW[l]);
            net.W[l].array() -= cfg.learning_rate * (mW[l].array() / c1) / ((vW[l].array() / c2).sqrt() + cfg.eps);
            mb[l] = cfg.beta1 * mb[l] + (1.0 - cfg.beta1) * g.db[l];
            vb[l] = cfg.beta2 * vb[l] + (1.0 - cfg.beta2) * g.db[l].cwiseProduct(g.db[l]);
            net.b[l].array() -= cfg.learning_rate * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + cfg.eps);
        }
        out.report.train_loss.push_back(detail::backprop(net, Xs, Ys, nullptr).loss);
        if (n_val > 0) out.report.val_loss.push_back(detail::backprop(net, Xvs, Yvs, nullptr).loss);
    }
    auto mse = [&](const Mat& A, const Mat& B) {
        if (A.rows() == 0) return 0.0;
        double s = 0.0;
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
            const double e = mlp_forward(net, A.row(i).transpose())[0] - B(i, 0);
            s += e * e;
        }
        return s / static_cast<double>(A.rows());
    };
    out.report.train_mse = mse(Xtr, Ytr);
    out.report.val_mse = mse(Xva, Yva);
    out.report.n_train = n_tr;
    out.report.n_val = n_val;
    return out;
}

// ---- serialization ----

inline constexpr int kSchemaVersion = 1;

namespace detail {

inline nlohmann::json vec_json(const Vec& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Vec json_vec(const nlohmann::json& a) {
    if (!a.is_array()) throw DataError("expected a numeric array");
    Vec v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    return v;
}

}  // namespace detail

inline nlohmann::json mlp_to_json(const Mlp& net) {
    using nlohmann::json;
    json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = "mlp";
    j["input_names"] = net.input_names;
    j["output_name"] = net.output_name;
    json spec;
    spec["layer_sizes"] = net.spec.layer_sizes;
    json acts = json::array();
    for (Activation a : net.spec.activations) acts.push_back(activation_name(a));
    spec["activations"] = acts;
    spec["dropout_rate"] = net.spec.dropout_rate;
    spec["seed"] = net.spec.seed;
    j["spec"] = spec;
    j["scalers"] = {{"input_mean", detail::vec_json(net.input_mean)},
                    {"input_std", detail::vec_json(net.input_std)},
                    {"output_mean", detail::vec_json(net.output_mean)},
                    {"output_std", detail::vec_json(net.output_std)}};
    json layers = json::array();
    for (std::size_t l = 0; l < net.W.size(); ++l) {
        json w = json::array();
        for (Eigen::Index r = 0; r < net.W[l].rows(); ++r) {
            for (Eigen::Index c = 0; c < net.W[l].cols(); ++c) w.push_back(net.W[l](r, c));
        }
        layers.push_back({{"rows", net.W[l].rows()}, {"cols", net.W[l].cols()}, {"weights", w},
                          {"bias", detail::vec_json(net.b[l])}});
    }
    j["layers"] = layers;
    return j;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
    try {
        if (j.at("schema_version").get<int>() != kSchemaVersion) throw DataError("unsupported MLP schema version");
        Mlp net;
        const auto& s = j.at("spec");
        net.spec.layer_sizes = s.at("layer_sizes").get<std::vector<std::size_t>>();
        for (const auto& a : s.at("activations")) net.spec.activations.push_back(parse_activation(a.get<std::string>()));
        net.spec.dropout_rate = s.at("dropout_rate").get<double>();
        net.spec.seed = s.at("seed").get<std::uint64_t>();
        net.spec.validate();
        net.input_names = j.at("input_names").get<std::vector<std::string>>();
        net.output_name = j.at("output_name").get<std::string>();
        const auto& sc = j.at("scalers");
        net.input_mean = detail::json_vec(sc.at("input_mean"));
        net.input_std = detail::json_vec(sc.at("input_std"));
        net.output_mean = detail::json_vec(sc.at("output_mean"));
        net.output_std = detail::json_vec(sc.at("output_std"));
        const auto& layers = j.at("layers");
        if (layers.size() != net.spec.layers()) throw DataError("MLP layer count does not match spec");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& L = layers[l];
            const auto rows = L.at("rows").get<Eigen::Index>(), cols = L.at("cols").get<Eigen::Index>();
            if (static_cast<std::size_t>(rows) != net.spec.layer_sizes[l + 1] ||
                static_cast<std::size_t>(cols) != net.spec.layer_sizes[l]) {
                throw DataError("MLP layer " + std::to_string(l) + " shape does not match spec");
            }
            const auto& w = L.at("weights");
            if (w.size() != static_cast<std::size_t>(rows * cols)) throw DataError("MLP weight count mismatch");
            Mat W(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r) {
                for (Eigen::Index c = 0; c < cols; ++c) W(r, c) = w[static_cast<std::size_t>(r * cols + c)].get<double>();
            }
            net.W.push_back(std::move(W));
            net.b.push_back(detail::json_vec(L.at("bias")));
            if (net.b.back().size() != rows) throw DataError("MLP bias size mismatch");
        }
        if (net.input_mean.size() != static_cast<Eigen::Index>(net.n_in()) ||
            net.input_std.size() != static_cast<Eigen::Index>(net.n_in()) ||
            net.output_mean.size() != static_cast<Eigen::Index>(net.n_out()) ||
            net.output_std.size() != static_cast<Eigen::Index>(net.n_out())) {
            throw DataError("MLP scaler sizes do not match spec");
        }
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed MLP document: ") + e.what());
    }
}

}  // namespace hybridid
