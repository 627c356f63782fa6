#include "fedrun/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedrun/errors.hpp"

namespace fedrun {

const char* to_string(AlgorithmKind k) {
    switch (k) {
        case AlgorithmKind::fedavg: return "fedavg";
        case AlgorithmKind::fedprox: return "fedprox";
        case AlgorithmKind::ditto: return "ditto";
    }
    return "?";
}

const char* to_string(Weighting w) { return w == Weighting::uniform ? "uniform" : "sample_count"; }

AlgorithmKind algorithm_from_string(const std::string& s) {
    if (s == "fedavg") return AlgorithmKind::fedavg;
    if (s == "fedprox") return AlgorithmKind::fedprox;
    if (s == "ditto") return AlgorithmKind::ditto;
    throw ConfigError("unknown algorithm kind '" + s + "'");
}

Weighting weighting_from_string(const std::string& s) {
    if (s == "sample_count") return Weighting::sample_count;
    if (s == "uniform") return Weighting::uniform;
    throw ConfigError("unknown weighting '" + s + "'");
}

void AlgorithmConfig::validate() const {
    if (!(prox_mu >= 0.0) || !std::isfinite(prox_mu)) throw ConfigError("prox_mu must be finite and >= 0");
    if (!(ditto_lambda >= 0.0) || !std::isfinite(ditto_lambda)) {
        throw ConfigError("ditto_lambda must be finite and >= 0");
    }
    if (kind == AlgorithmKind::fedavg && (prox_mu != 0.0 || ditto_lambda != 0.0)) {
        throw ConfigError("fedavg requires prox_mu = 0 and ditto_lambda = 0");
    }
}

ParameterVector federated_average(std::span<const ModelUpdate> updates, Weighting weighting) {
    if (updates.empty()) throw EmptyAggregationError("no updates to aggregate");
    const auto& first = updates.front();
    const std::size_t dim = first.params.dim();
    for (const auto& u : updates) {
        if (u.params.dim() != dim) {
            throw DimensionError("update from '" + u.client_id + "' has dim " +
                                 std::to_string(u.params.dim()) + ", expected " + std::to_string(dim));
        }
        if (u.round != first.round) {
            throw ProtocolError("update from '" + u.client_id + "' is for round " +
                                std::to_string(u.round) + ", expected " + std::to_string(first.round));
        }
        u.validate();
    }

    // Running weighted mean: m_k = m_{k-1} + (n_k / N_k) * (w_k - m_{k-1}).
    // Identical inputs reproduce themselves exactly, and equal sample counts
    // give the same step ratios as uniform weighting.
    std::vector<double> mean(first.params.values().begin(), first.params.values().end());
    std::vector<double> lo = mean, hi = mean;
    double seen = weighting == Weighting::uniform ? 1.0 : static_cast<double>(first.sample_count);
    for (std::size_t k = 1; k < updates.size(); ++k) {
        const double n = weighting == Weighting::uniform ? 1.0 : static_cast<double>(updates[k].sample_count);
        seen += n;
        const double t = n / seen;
        const auto w = updates[k].params.values();
        for (std::size_t i = 0; i < dim; ++i) {
            mean[i] += t * (w[i] - mean[i]);
            lo[i] = std::min(lo[i], w[i]);
            hi[i] = std::max(hi[i], w[i]);
        }
    }
    // Rounding can push a coordinate a hair outside the inputs' envelope.
    for (std::size_t i = 0; i < dim; ++i) mean[i] = std::clamp(mean[i], lo[i], hi[i]);
    return ParameterVector(std::move(mean));
}

ParameterVector proximal_loss_gradient(const ParameterVector& local_grad, const ParameterVector& w,
                                       const ParameterVector& w_global, double mu) {
    if (local_grad.dim() != w.dim() || w.dim() != w_global.dim()) {
        throw DimensionError("proximal_loss_gradient: mismatched dims");
    }
    if (!(mu >= 0.0)) throw DomainError("proximal_loss_gradient: mu must be >= 0");
    if (mu == 0.0) return local_grad;
    std::vector<double> out(w.dim());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = local_grad[i] + mu * (w[i] - w_global[i]);
    return ParameterVector(std::move(out));
}

ParameterVector gradient_step(const ParameterVector& w, const ParameterVector& grad, double lr) {
    if (w.dim() != grad.dim()) throw DimensionError("gradient_step: mismatched dims");
    std::vector<double> out(w.dim());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = w[i] - lr * grad[i];
    return ParameterVector(std::move(out));
}

ParameterVector ditto_personal_step(const ParameterVector& v, const ParameterVector& local_grad_at_v,
                                    const ParameterVector& w_global, double lambda, double lr) {
    if (v.dim() != local_grad_at_v.dim() || v.dim() != w_global.dim()) {
        throw DimensionError("ditto_personal_step: mismatched dims");
    }
    if (!(lambda >= 0.0)) throw DomainError("ditto_personal_step: lambda must be >= 0");
    if (!(lr > 0.0)) throw DomainError("ditto_personal_step: lr must be > 0");
    if (lambda == 0.0) return gradient_step(v, local_grad_at_v, lr);
    std::vector<double> out(v.dim());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = v[i] - lr * (local_grad_at_v[i] + lambda * (v[i] - w_global[i]));
    }
    return ParameterVector(std::move(out));
}

}  // namespace fedrun
