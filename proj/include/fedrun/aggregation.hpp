#ifndef FEDRUN_AGGREGATION_HPP_
#define FEDRUN_AGGREGATION_HPP_

#include <span>
#include <string>

#include "fedrun/params.hpp"

namespace fedrun {

enum class AlgorithmKind { fedavg, fedprox, ditto };
enum class Weighting { sample_count, uniform };

const char* to_string(AlgorithmKind k);
const char* to_string(Weighting w);
AlgorithmKind algorithm_from_string(const std::string& s);
Weighting weighting_from_string(const std::string& s);

struct AlgorithmConfig {
    AlgorithmKind kind = AlgorithmKind::fedavg;
    double prox_mu = 0.0;       // FedProx proximal coefficient
    double ditto_lambda = 0.0;  // Ditto personalization strength
    Weighting weighting = Weighting::sample_count;

    /// Throws ConfigError. FedAvg requires both coefficients to be stored as 0.
    void validate() const;
    friend bool operator==(const AlgorithmConfig&, const AlgorithmConfig&) = default;
};

/// Weighted mean of the updates' parameters, summed in the given order.
/// Callers that need run-to-run bit identity must pass updates in a fixed
/// order (the coordinator uses config site order).
ParameterVector federated_average(std::span<const ModelUpdate> updates, Weighting weighting);

/// local_grad + mu * (w - w_global). Returns local_grad untouched when mu == 0.
ParameterVector proximal_loss_gradient(const ParameterVector& local_grad, const ParameterVector& w,
                                       const ParameterVector& w_global, double mu);

/// One step on the personal track: v - lr * (grad + lambda * (v - w_global)).
/// With lambda == 0 the regularizer is skipped, so the step is exactly the
/// plain local step v - lr * grad.
ParameterVector ditto_personal_step(const ParameterVector& v, const ParameterVector& local_grad_at_v,
                                    const ParameterVector& w_global, double lambda, double lr);

/// Plain gradient step w - lr * grad.
ParameterVector gradient_step(const ParameterVector& w, const ParameterVector& grad, double lr);

}  // namespace fedrun

#endif  // FEDRUN_AGGREGATION_HPP_
