#ifndef FEDRUN_PARAMS_HPP_
#define FEDRUN_PARAMS_HPP_

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fedrun {

/// Flat, ordered model weights. Always non-empty and finite; immutable once
/// built, so instances can be shared across threads freely.
class ParameterVector {
public:
    /// Throws DimensionError when empty and NumericError on NaN/inf.
    explicit ParameterVector(std::vector<double> values);
    ParameterVector(std::initializer_list<double> values);

    static ParameterVector zeros(std::size_t dim);

    std::size_t dim() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

    /// Bit-for-bit comparison of every coordinate.
    friend bool operator==(const ParameterVector& a, const ParameterVector& b);

private:
    std::vector<double> values_;
};

/// Post-training parameters from one site for one round.
struct ModelUpdate {
    std::string client_id;
    std::uint64_t round = 0;
    ParameterVector params = ParameterVector::zeros(1);
    std::uint64_t sample_count = 1;
    double train_seconds = 0.0;

    /// Throws DomainError if sample_count is zero or train_seconds negative.
    void validate() const;
    friend bool operator==(const ModelUpdate&, const ModelUpdate&) = default;
};

enum class Metric { dice, mse_loss };

const char* to_string(Metric m);
Metric metric_from_string(const std::string& s);

struct EvalScore {
    double mean = 0.0;
    double std = 0.0;
    Metric metric = Metric::mse_loss;

    void validate() const;
    friend bool operator==(const EvalScore&, const EvalScore&) = default;
};

/// a + coeff * b, element-wise.
ParameterVector add_scaled(const ParameterVector& a, const ParameterVector& b, double coeff);

double l2_distance(const ParameterVector& a, const ParameterVector& b);

/// 2|A n B| / (|A| + |B|) over flat 0/1 masks. Two empty masks score 1.0.
double dice_score(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth);

/// Mean and population standard deviation.
EvalScore mean_std(std::span<const double> xs, Metric metric);

}  // namespace fedrun

#endif  // FEDRUN_PARAMS_HPP_
