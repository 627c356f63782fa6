#ifndef FEDRUN_TRAINING_HPP_
#define FEDRUN_TRAINING_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedrun/aggregation.hpp"
#include "fedrun/params.hpp"

namespace fedrun {

enum class TrainerKind { least_squares, synthetic_segmentation };

const char* to_string(TrainerKind k);
TrainerKind trainer_from_string(const std::string& s);

struct TrainerConfig {
    TrainerKind trainer = TrainerKind::least_squares;
    double lr = 0.1;
    std::uint64_t local_steps = 1;
    // Only full-batch gradients are supported; kept so configs can say so.
    std::string batch = "full";
    std::uint64_t seed = 0;  // seeds the initial global model

    void validate() const;
    friend bool operator==(const TrainerConfig&, const TrainerConfig&) = default;
};

/// Knobs of the synthetic non-IID generator.
///
/// For least_squares, base_optimum is the shared regression optimum w*; each
/// site's targets come from w* + delta_i with |delta_i| = shift_scale. For
/// synthetic_segmentation, base_optimum holds the {background, foreground}
/// intensity levels and delta_i shifts them per site (a scanner offset).
struct HeterogeneityConfig {
    std::vector<double> base_optimum{1.0, -2.0, 0.5};
    double shift_scale = 0.0;
    double noise_std = 0.0;
    std::uint64_t samples_per_site = 32;
    double fraction = 1.0;  // applies to the training split only
    std::uint64_t validation_samples = 0;  // 0 means samples_per_site

    void validate(TrainerKind kind) const;
    std::uint64_t train_rows() const;
    friend bool operator==(const HeterogeneityConfig&, const HeterogeneityConfig&) = default;
};

enum class Split { train, validation };

/// Row-major sample matrix plus targets. For segmentation a row is one 8x8
/// image and its target row the matching 0/1 mask.
struct ClientDataset {
    TrainerKind kind = TrainerKind::least_squares;
    std::size_t rows = 0;
    std::size_t feature_dim = 0;
    std::size_t target_dim = 0;
    std::vector<double> features;
    std::vector<double> targets;
    std::vector<double> site_shift;

    std::span<const double> row(std::size_t i) const { return {features.data() + i * feature_dim, feature_dim}; }
    std::span<const double> target(std::size_t i) const { return {targets.data() + i * target_dim, target_dim}; }

    void validate() const;
    friend bool operator==(const ClientDataset&, const ClientDataset&) = default;
};

inline constexpr std::size_t kImageSide = 8;
inline constexpr std::size_t kBlobSide = 3;

/// Deterministic in (cfg, kind, site_index, seed, split). The site shift
/// depends only on (seed, site_index), so train and validation splits of one
/// site share their optimum.
ClientDataset generate_site_data(const HeterogeneityConfig& cfg, TrainerKind kind, std::uint64_t site_index,
                                 std::uint64_t seed, Split split = Split::train);

/// Local objective and its gradient, one implementation per task.
class Trainer {
public:
    virtual ~Trainer() = default;
    virtual TrainerKind kind() const = 0;
    virtual Metric metric() const = 0;
    virtual std::size_t param_dim(const HeterogeneityConfig& cfg) const = 0;
    virtual double objective(const ParameterVector& w, const ClientDataset& data) const = 0;
    virtual ParameterVector gradient(const ParameterVector& w, const ClientDataset& data) const = 0;
    /// Per-sample metric values (squared error or per-image Dice).
    virtual std::vector<double> sample_scores(const ParameterVector& w, const ClientDataset& data) const = 0;
};

const Trainer& trainer_for(TrainerKind kind);

/// Starting global model: N(0, 0.01^2) per coordinate from tcfg.seed.
ParameterVector initial_params(const TrainerConfig& tcfg, const HeterogeneityConfig& het);

/// local_steps full-batch steps from `start`. FedProx routes each gradient
/// through proximal_loss_gradient; FedAvg and Ditto's global track take plain
/// steps. sample_count is the dataset row count; client_id/round/timing are
/// left for the caller.
ModelUpdate local_train(const ParameterVector& start, const ClientDataset& data, const TrainerConfig& tcfg,
                        const AlgorithmConfig& acfg, const ParameterVector& w_global);

/// local_steps Ditto steps on the personal track v, regularized toward w_global.
ParameterVector ditto_personal_train(const ParameterVector& v, const ClientDataset& data, const TrainerConfig& tcfg,
                                     const AlgorithmConfig& acfg, const ParameterVector& w_global);

/// Throws ConfigError when the metric does not belong to the dataset's task.
EvalScore evaluate(const ParameterVector& params, const ClientDataset& data, Metric metric);

/// Metric over the union of several datasets' samples.
EvalScore evaluate_pooled(const ParameterVector& params, std::span<const ClientDataset> datasets, Metric metric);

/// Nominal work of one local_train call, in seconds at multiplier 1.
double work_estimate_seconds(const ClientDataset& data, const TrainerConfig& tcfg);

}  // namespace fedrun

#endif  // FEDRUN_TRAINING_HPP_
