#pragma once

// Hybrid model assembly: each flux slot of a structure is bound to a trained
// network or a constant, giving a closed model for simulation and control.

#include <map>
#include <memory>
#include <variant>

#include "hybridid/mlp.hpp"

namespace hybridid {

struct ConstantBinding {
    double value = 0.0;
};

struct MlpBinding {
    Mlp net;
    std::optional<std::pair<double, double>> output_bounds;
};

using FluxBinding = std::variant<ConstantBinding, MlpBinding>;

class HybridModel {
public:
    HybridModel() = default;

    /// `bindings[i]` closes flux i of `base`. Network input names must be
    /// states or MVs of `base`.
    HybridModel(ModelStructure base, std::vector<FluxBinding> bindings)
        : base_(std::move(base)), bindings_(std::move(bindings)) {
        if (bindings_.size() != base_.n_p) {
            throw ConfigError("hybrid model needs " + std::to_string(base_.n_p) + " flux bindings, got " +
                              std::to_string(bindings_.size()));
        }
        sources_.resize(bindings_.size());
        for (std::size_t i = 0; i < bindings_.size(); ++i) {
            const auto* mb = std::get_if<MlpBinding>(&bindings_[i]);
            if (!mb) continue;
            if (mb->net.n_out() != 1) throw ConfigError("flux network for " + base_.fluxes[i].name + " must have one output");
            if (mb->net.input_names.size() != mb->net.n_in()) {
                throw ConfigError("flux network for " + base_.fluxes[i].name + " has " +
                                  std::to_string(mb->net.input_names.size()) + " input names for " +
                                  std::to_string(mb->net.n_in()) + " inputs");
            }
            for (const auto& name : mb->net.input_names) {
                if (auto s = base_.state_index(name)) {
                    sources_[i].push_back({false, *s});
                } else if (auto u = base_.input_index(name)) {
                    sources_[i].push_back({true, *u});
                } else {
                    throw ConfigError("flux network for " + base_.fluxes[i].name + " uses unknown variable '" +
                                      name + "'");
                }
            }
            if (mb->output_bounds && mb->output_bounds->first > mb->output_bounds->second) {
                throw ConfigError("output bounds of " + base_.fluxes[i].name + " are inverted");
            }
        }
    }

    const ModelStructure& base() const noexcept { return base_; }
    const std::vector<FluxBinding>& bindings() const noexcept { return bindings_; }

    /// Scratch buffers for allocation-free flux evaluation.
    struct Workspace {
        Vec in, out;
        std::vector<Vec> layers;
    };

    /// Flux vector from the instantaneous state and MV; no history is kept.
    void fluxes(const Vec& x, const Vec& u, Vec& p) const {
        Workspace ws;
        fluxes(x, u, p, ws);
    }

    void fluxes(const Vec& x, const Vec& u, Vec& p, Workspace& ws) const {
        p.resize(static_cast<Eigen::Index>(bindings_.size()));
        for (std::size_t i = 0; i < bindings_.size(); ++i) {
            if (const auto* c = std::get_if<ConstantBinding>(&bindings_[i])) {
                p[static_cast<Eigen::Index>(i)] = c->value;
                continue;
            }
            const auto& mb = std::get<MlpBinding>(bindings_[i]);
            ws.in.resize(static_cast<Eigen::Index>(sources_[i].size()));
            for (std::size_t j = 0; j < sources_[i].size(); ++j) {
                const auto [is_input, idx] = sources_[i][j];
                const Vec& src = is_input ? u : x;
                if (static_cast<Eigen::Index>(idx) >= src.size()) throw DomainError("flux network input out of range");
                ws.in[static_cast<Eigen::Index>(j)] = src[static_cast<Eigen::Index>(idx)];
            }
            mb.net.forward(ws.in, ws.out, ws.layers);
            double v = ws.out[0];
            if (mb.output_bounds) v = std::clamp(v, mb.output_bounds->first, mb.output_bounds->second);
            p[static_cast<Eigen::Index>(i)] = v;
        }
    }

    ClosedModel closed() const {
        ClosedModel m;
        m.n_x = base_.n_x;
        m.n_u = base_.n_u;
        m.n_z = base_.n_z;
        m.output = base_.output;
        auto self = std::make_shared<const HybridModel>(*this);
        m.rhs = [self, p = Vec(), ws = Workspace()](const Vec& x, const Vec& u, double t, Vec& dx) mutable {
            self->fluxes(x, u, p, ws);
            self->base_.rhs(x, u, p, t, dx);
        };
        return m;
    }

private:
    ModelStructure base_;
    std::vector<FluxBinding> bindings_;
    std::vector<std::vector<std::pair<bool, std::size_t>>> sources_;  // (is MV, index)
};

/// Binds every flux from `trained` or `constants`, each flux exactly once.
/// With a report, network inputs must match the screened selection.
inline HybridModel assemble_hybrid(const ModelStructure& model, const std::map<std::string, Mlp>& trained,
                                   const std::map<std::string, double>& constants,
                                   const CorrelationReport* report = nullptr,
                                   const std::map<std::string, std::pair<double, double>>& bounds = {}) {
    for (const auto& [name, net] : trained) {
        if (!model.flux_index(name)) throw ConfigError("trained network for unknown flux '" + name + "'");
    }
    for (const auto& [name, v] : constants) {
        if (!model.flux_index(name)) throw ConfigError("constant for unknown flux '" + name + "'");
    }
    std::vector<FluxBinding> b;
    for (const auto& f : model.fluxes) {
        const bool has_net = trained.count(f.name) > 0, has_const = constants.count(f.name) > 0;
        if (has_net == has_const) {
            throw ConfigError("flux '" + f.name + "' must be bound exactly once (network or constant)");
        }
        if (has_const) {
            b.emplace_back(ConstantBinding{constants.at(f.name)});
            continue;
        }
        MlpBinding mb{trained.at(f.name), std::nullopt};
        if (report && mb.net.input_names != report->selection(f.name).inputs) {
            throw ConfigError("network inputs for '" + f.name + "' differ from the screened selection");
        }
        if (auto it = bounds.find(f.name); it != bounds.end()) mb.output_bounds = it->second;
        b.emplace_back(std::move(mb));
    }
    return HybridModel(model, std::move(b));
}

inline Trajectory simulate_hybrid(const HybridModel& hm, const Vec& x0, const PiecewiseConstantProfile& mv,
                                  const TimeGrid& out_grid, const IntegratorConfig& cfg) {
    return simulate_closed(hm.closed(), x0, mv, out_grid, cfg);
}

struct DatasetScore {
    std::size_t dataset = 0;
    bool ok = false;
    double fit = 0.0;
    std::optional<double> step1_fit;
    std::string error;

    std::optional<double> delta() const {
        if (!ok || !step1_fit) return std::nullopt;
        return fit - *step1_fit;
    }
};

/// Simulates every dataset with the hybrid model and scores it with fit_value.
/// Failures are recorded per dataset; the others still run.
inline std::vector<DatasetScore> evaluate_hybrid(const HybridModel& hm, const std::vector<MeasurementDataset>& datasets,
                                                 const std::vector<Vec>& x0s, const std::vector<double>& step1_fits,
                                                 const std::optional<IntegratorConfig>& integ = std::nullopt) {
    const ClosedModel model = hm.closed();
    std::vector<DatasetScore> out;
    for (std::size_t d = 0; d < datasets.size(); ++d) {
        DatasetScore s;
        s.dataset = d;
        if (d < step1_fits.size()) s.step1_fit = step1_fits[d];
        const auto& ds = datasets[d];
        try {
            Vec x0 = d < x0s.size() ? x0s[d] : ds.x0_guess;
            const IntegratorConfig cfg = integ ? *integ : default_integrator(ds.meas_grid);
            Trajectory tr = simulate_closed(model, x0, ds.mv, ds.meas_grid, cfg);
            s.fit = fit_value(tr, ds);
            s.ok = std::isfinite(s.fit);
            if (!s.ok) s.error = "non-finite fit value";
        } catch (const Error& e) {
            s.error = e.what();
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace hybridid
