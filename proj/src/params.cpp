#include "fedrun/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fedrun/errors.hpp"

namespace fedrun {

namespace {

void require_same_dim(const ParameterVector& a, const ParameterVector& b, const char* op) {
    if (a.dim() != b.dim()) {
        throw DimensionError(std::string(op) + ": dim " + std::to_string(a.dim()) + " vs " +
                             std::to_string(b.dim()));
    }
}

}  // namespace

ParameterVector::ParameterVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw DimensionError("parameter vector must have dim >= 1");
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw NumericError("non-finite parameter at index " + std::to_string(i));
        }
    }
}

ParameterVector::ParameterVector(std::initializer_list<double> values)
    : ParameterVector(std::vector<double>(values)) {}

ParameterVector ParameterVector::zeros(std::size_t dim) {
    return ParameterVector(std::vector<double>(dim, 0.0));
}

bool operator==(const ParameterVector& a, const ParameterVector& b) {
    return a.values_.size() == b.values_.size() &&
           std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(double)) == 0;
}

void ModelUpdate::validate() const {
    if (sample_count < 1) throw DomainError("sample_count must be >= 1");
    if (!(train_seconds >= 0.0)) throw DomainError("train_seconds must be >= 0");
}

const char* to_string(Metric m) { return m == Metric::dice ? "dice" : "mse_loss"; }

Metric metric_from_string(const std::string& s) {
    if (s == "dice") return Metric::dice;
    if (s == "mse_loss") return Metric::mse_loss;
    throw ConfigError("unknown metric '" + s + "'");
}

void EvalScore::validate() const {
    if (!(std >= 0.0)) throw DomainError("std must be >= 0");
    if (metric == Metric::dice && !(mean >= 0.0 && mean <= 1.0)) {
        throw DomainError("dice mean outside [0,1]");
    }
}

ParameterVector add_scaled(const ParameterVector& a, const ParameterVector& b, double coeff) {
    require_same_dim(a, b, "add_scaled");
    if (!std::isfinite(coeff)) throw NumericError("add_scaled: non-finite coefficient");
    std::vector<double> out(a.dim());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + coeff * b[i];
    return ParameterVector(std::move(out));
}

double l2_distance(const ParameterVector& a, const ParameterVector& b) {
    require_same_dim(a, b, "l2_distance");
    // hypot-style scaling keeps the 1e100 range from overflowing.
    double scale = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) scale = std::max(scale, std::abs(a[i] - b[i]));
    if (scale == 0.0 || !std::isfinite(scale)) return scale;
    double sum = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        const double d = (a[i] - b[i]) / scale;
        sum += d * d;
    }
    return scale * std::sqrt(sum);
}

double dice_score(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
    if (predicted.size() != truth.size()) {
        throw DimensionError("dice_score: mask lengths " + std::to_string(predicted.size()) +
                             " vs " + std::to_string(truth.size()));
    }
    std::size_t both = 0, in_pred = 0, in_truth = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] > 1 || truth[i] > 1) {
            throw DomainError("dice_score: non-binary entry at index " + std::to_string(i));
        }
        in_pred += predicted[i];
        in_truth += truth[i];
        both += predicted[i] & truth[i];
    }
    if (in_pred + in_truth == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(in_pred + in_truth);
}

EvalScore mean_std(std::span<const double> xs, Metric metric) {
    if (xs.empty()) throw DomainError("mean_std of empty sequence");
    // Welford: constant inputs give that constant and a zero std exactly.
    double mean = 0.0, m2 = 0.0;
    std::size_t k = 0;
    for (double x : xs) {
        ++k;
        const double delta = x - mean;
        mean += delta / static_cast<double>(k);
        m2 += delta * (x - mean);
    }
    EvalScore s{mean, std::sqrt(std::max(0.0, m2) / static_cast<double>(xs.size())), metric};
    if (metric == Metric::dice) s.mean = std::clamp(s.mean, 0.0, 1.0);
    return s;
}

}  // namespace fedrun
