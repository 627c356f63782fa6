#include "fedrun/training.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fedrun/errors.hpp"

namespace fedrun {

const char* to_string(TrainerKind k) {
    return k == TrainerKind::least_squares ? "least_squares" : "synthetic_segmentation";
}

TrainerKind trainer_from_string(const std::string& s) {
    if (s == "least_squares") return TrainerKind::least_squares;
    if (s == "synthetic_segmentation") return TrainerKind::synthetic_segmentation;
    throw ConfigError("unknown trainer '" + s + "'");
}

void TrainerConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("trainer.lr must be > 0");
    if (local_steps < 1) throw ConfigError("trainer.local_steps must be >= 1");
    if (batch != "full") throw ConfigError("trainer.batch must be \"full\"");
}

void HeterogeneityConfig::validate(TrainerKind kind) const {
    if (base_optimum.empty()) throw ConfigError("heterogeneity.base_optimum must be non-empty");
    if (kind == TrainerKind::synthetic_segmentation && base_optimum.size() != 2) {
        throw ConfigError("heterogeneity.base_optimum must hold [background, foreground] for segmentation");
    }
    for (double v : base_optimum) {
        if (!std::isfinite(v)) throw ConfigError("heterogeneity.base_optimum must be finite");
    }
    if (!(shift_scale >= 0.0) || !std::isfinite(shift_scale)) throw ConfigError("heterogeneity.shift_scale must be >= 0");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("heterogeneity.noise_std must be >= 0");
    if (samples_per_site < 1) throw ConfigError("heterogeneity.samples_per_site must be >= 1");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("heterogeneity.fraction must be in (0, 1]");
}

std::uint64_t HeterogeneityConfig::train_rows() const {
    const auto rows = static_cast<std::uint64_t>(std::floor(static_cast<double>(samples_per_site) * fraction));
    return std::max<std::uint64_t>(rows, 1);
}

void ClientDataset::validate() const {
    if (rows < 1) throw DomainError("dataset must have at least one row");
    if (features.size() != rows * feature_dim || targets.size() != rows * target_dim) {
        throw DimensionError("dataset storage does not match rows x dims");
    }
}

namespace {

enum Stream : std::uint64_t { kShiftStream = 0, kTrainStream = 1, kValidationStream = 2, kInitStream = 3 };

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t site, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(site), static_cast<std::uint32_t>(site >> 32),
                      static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

std::vector<double> site_shift(const HeterogeneityConfig& cfg, std::size_t dim, std::uint64_t site,
                               std::uint64_t seed) {
    std::vector<double> shift(dim, 0.0);
    if (cfg.shift_scale == 0.0) return shift;
    auto rng = make_rng(seed, site, kShiftStream);
    std::normal_distribution<double> normal(0.0, 1.0);
    double norm = 0.0;
    while (norm == 0.0) {
        norm = 0.0;
        for (auto& s : shift) {
            s = normal(rng);
            norm += s * s;
        }
        norm = std::sqrt(norm);
    }
    for (auto& s : shift) s *= cfg.shift_scale / norm;
    return shift;
}

double sigmoid(double z) {
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

void require_dims(const ParameterVector& w, std::size_t dim, const char* what) {
    if (w.dim() != dim) {
        throw DimensionError(std::string(what) + ": parameter dim " + std::to_string(w.dim()) + ", trainer expects " +
                             std::to_string(dim));
    }
}

class LeastSquaresTrainer final : public Trainer {
public:
    TrainerKind kind() const override { return TrainerKind::least_squares; }
    Metric metric() const override { return Metric::mse_loss; }
    std::size_t param_dim(const HeterogeneityConfig& cfg) const override { return cfg.base_optimum.size(); }

    // F(w) = 1/(2n) * sum_i (x_i . w - y_i)^2
    double objective(const ParameterVector& w, const ClientDataset& data) const override {
        require_dims(w, data.feature_dim, "least_squares objective");
        double sum = 0.0;
        for (std::size_t i = 0; i < data.rows; ++i) {
            const double r = residual(w, data, i);
            sum += r * r;
        }
        return sum / (2.0 * static_cast<double>(data.rows));
    }

    ParameterVector gradient(const ParameterVector& w, const ClientDataset& data) const override {
        require_dims(w, data.feature_dim, "least_squares gradient");
        std::vector<double> g(data.feature_dim, 0.0);
        for (std::size_t i = 0; i < data.rows; ++i) {
            const double r = residual(w, data, i);
            const auto x = data.row(i);
            for (std::size_t j = 0; j < g.size(); ++j) g[j] += r * x[j];
        }
        for (auto& v : g) v /= static_cast<double>(data.rows);
        return ParameterVector(std::move(g));
    }

    std::vector<double> sample_scores(const ParameterVector& w, const ClientDataset& data) const override {
        require_dims(w, data.feature_dim, "least_squares evaluate");
        std::vector<double> out(data.rows);
        for (std::size_t i = 0; i < data.rows; ++i) {
            const double r = residual(w, data, i);
            out[i] = r * r;
        }
        return out;
    }

private:
    static double residual(const ParameterVector& w, const ClientDataset& data, std::size_t i) {
        const auto x = data.row(i);
        double pred = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) pred += x[j] * w[j];
        return pred - data.target(i)[0];
    }
};

/// Per-pixel logistic model shared across pixels:
/// logit = w0 * intensity + w1 * (3x3 neighbourhood mean) + w2.
class SegmentationTrainer final : public Trainer {
public:
    static constexpr std::size_t kDim = 3;

    TrainerKind kind() const override { return TrainerKind::synthetic_segmentation; }
    Metric metric() const override { return Metric::dice; }
    std::size_t param_dim(const HeterogeneityConfig&) const override { return kDim; }

    // Mean binary cross-entropy over every pixel of every image.
    double objective(const ParameterVector& w, const ClientDataset& data) const override {
        require_dims(w, kDim, "segmentation objective");
        double sum = 0.0;
        for_each_pixel(data, [&](double x, double m, double t) {
            const double z = w[0] * x + w[1] * m + w[2];
            // log(1 + e^z) - t z, stable for large |z|
            sum += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - t * z;
        });
        return sum / static_cast<double>(data.rows * data.feature_dim);
    }

    ParameterVector gradient(const ParameterVector& w, const ClientDataset& data) const override {
        require_dims(w, kDim, "segmentation gradient");
        std::vector<double> g(kDim, 0.0);
        for_each_pixel(data, [&](double x, double m, double t) {
            const double err = sigmoid(w[0] * x + w[1] * m + w[2]) - t;
            g[0] += err * x;
            g[1] += err * m;
            g[2] += err;
        });
        for (auto& v : g) v /= static_cast<double>(data.rows * data.feature_dim);
        return ParameterVector(std::move(g));
    }

    std::vector<double> sample_scores(const ParameterVector& w, const ClientDataset& data) const override {
        require_dims(w, kDim, "segmentation evaluate");
        std::vector<double> out(data.rows);
        std::vector<std::uint8_t> pred(data.feature_dim), truth(data.feature_dim);
        for (std::size_t i = 0; i < data.rows; ++i) {
            const auto img = data.row(i);
            const auto mask = data.target(i);
            for (std::size_t p = 0; p < img.size(); ++p) {
                const double z = w[0] * img[p] + w[1] * neighbourhood_mean(img, p) + w[2];
                pred[p] = z > 0.0 ? 1 : 0;
                truth[p] = mask[p] > 0.5 ? 1 : 0;
            }
            out[i] = dice_score(pred, truth);
        }
        return out;
    }

private:
    static double neighbourhood_mean(std::span<const double> img, std::size_t p) {
        const int r = static_cast<int>(p / kImageSide), c = static_cast<int>(p % kImageSide);
        const int side = static_cast<int>(kImageSide);
        double sum = 0.0;
        int count = 0;
        for (int dr = -1; dr <= 1; ++dr) {
            for (int dc = -1; dc <= 1; ++dc) {
                const int rr = r + dr, cc = c + dc;
                if (rr < 0 || cc < 0 || rr >= side || cc >= side) continue;
                sum += img[static_cast<std::size_t>(rr * side + cc)];
                ++count;
            }
        }
        return sum / count;
    }

    template <class F>
    static void for_each_pixel(const ClientDataset& data, F&& f) {
        for (std::size_t i = 0; i < data.rows; ++i) {
            const auto img = data.row(i);
            const auto mask = data.target(i);
            for (std::size_t p = 0; p < img.size(); ++p) f(img[p], neighbourhood_mean(img, p), mask[p]);
        }
    }
};

ClientDataset make_least_squares(const HeterogeneityConfig& cfg, std::size_t rows, std::vector<double> shift,
                                 std::mt19937_64& rng) {
    const std::size_t dim = cfg.base_optimum.size();
    ClientDataset d;
    d.kind = TrainerKind::least_squares;
    d.rows = rows;
    d.feature_dim = dim;
    d.target_dim = 1;
    d.features.resize(rows * dim);
    d.targets.resize(rows);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < rows; ++i) {
        double y = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double x = normal(rng);
            d.features[i * dim + j] = x;
            y += x * (cfg.base_optimum[j] + shift[j]);
        }
        if (cfg.noise_std > 0.0) y += cfg.noise_std * normal(rng);
        d.targets[i] = y;
    }
    d.site_shift = std::move(shift);
    return d;
}

ClientDataset make_segmentation(const HeterogeneityConfig& cfg, std::size_t rows, std::vector<double> shift,
                                std::mt19937_64& rng) {
    constexpr std::size_t pixels = kImageSide * kImageSide;
    ClientDataset d;
    d.kind = TrainerKind::synthetic_segmentation;
    d.rows = rows;
    d.feature_dim = pixels;
    d.target_dim = pixels;
    d.features.resize(rows * pixels);
    d.targets.resize(rows * pixels);
    const double background = cfg.base_optimum[0] + shift[0];
    const double foreground = cfg.base_optimum[1] + shift[1];
    std::uniform_int_distribution<std::size_t> corner(0, kImageSide - kBlobSide);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t top = corner(rng), left = corner(rng);
        for (std::size_t p = 0; p < pixels; ++p) {
            const std::size_t r = p / kImageSide, c = p % kImageSide;
            const bool in_blob = r >= top && r < top + kBlobSide && c >= left && c < left + kBlobSide;
            double v = in_blob ? foreground : background;
            if (cfg.noise_std > 0.0) v += cfg.noise_std * normal(rng);
            d.features[i * pixels + p] = v;
            d.targets[i * pixels + p] = in_blob ? 1.0 : 0.0;
        }
    }
    d.site_shift = std::move(shift);
    return d;
}

}  // namespace

ClientDataset generate_site_data(const HeterogeneityConfig& cfg, TrainerKind kind, std::uint64_t site_index,
                                 std::uint64_t seed, Split split) {
    cfg.validate(kind);
    const std::size_t rows = split == Split::train
                                 ? cfg.train_rows()
                                 : (cfg.validation_samples ? cfg.validation_samples : cfg.samples_per_site);
    auto shift = site_shift(cfg, cfg.base_optimum.size(), site_index, seed);
    auto rng = make_rng(seed, site_index, split == Split::train ? kTrainStream : kValidationStream);
    return kind == TrainerKind::least_squares ? make_least_squares(cfg, rows, std::move(shift), rng)
                                              : make_segmentation(cfg, rows, std::move(shift), rng);
}

const Trainer& trainer_for(TrainerKind kind) {
    static const LeastSquaresTrainer least_squares;
    static const SegmentationTrainer segmentation;
    if (kind == TrainerKind::least_squares) return least_squares;
    return segmentation;
}

ParameterVector initial_params(const TrainerConfig& tcfg, const HeterogeneityConfig& het) {
    const std::size_t dim = trainer_for(tcfg.trainer).param_dim(het);
    auto rng = make_rng(tcfg.seed, 0, kInitStream);
    std::normal_distribution<double> normal(0.0, 0.01);
    std::vector<double> w(dim);
    for (auto& v : w) v = normal(rng);
    return ParameterVector(std::move(w));
}

namespace {

void check_task(const ClientDataset& data, const TrainerConfig& tcfg) {
    if (data.kind != tcfg.trainer) {
        throw ConfigError(std::string("dataset is for ") + to_string(data.kind) + ", trainer is " +
                          to_string(tcfg.trainer));
    }
}

}  // namespace

ModelUpdate local_train(const ParameterVector& start, const ClientDataset& data, const TrainerConfig& tcfg,
                        const AlgorithmConfig& acfg, const ParameterVector& w_global) {
    tcfg.validate();
    check_task(data, tcfg);
    if (w_global.dim() != start.dim()) throw DimensionError("local_train: w_global dim differs from start dim");
    const auto& trainer = trainer_for(tcfg.trainer);
    ParameterVector w = start;
    for (std::uint64_t step = 0; step < tcfg.local_steps; ++step) {
        try {
            auto grad = trainer.gradient(w, data);
            if (acfg.kind == AlgorithmKind::fedprox) grad = proximal_loss_gradient(grad, w, w_global, acfg.prox_mu);
            w = gradient_step(w, grad, tcfg.lr);
        } catch (const NumericError& e) {
            throw NumericError("local_train diverged at step " + std::to_string(step) + " (" + e.what() + ")");
        }
    }
    ModelUpdate u;
    u.params = std::move(w);
    u.sample_count = data.rows;
    return u;
}

ParameterVector ditto_personal_train(const ParameterVector& v, const ClientDataset& data, const TrainerConfig& tcfg,
                                     const AlgorithmConfig& acfg, const ParameterVector& w_global) {
    tcfg.validate();
    check_task(data, tcfg);
    const auto& trainer = trainer_for(tcfg.trainer);
    ParameterVector out = v;
    for (std::uint64_t step = 0; step < tcfg.local_steps; ++step) {
        try {
            out = ditto_personal_step(out, trainer.gradient(out, data), w_global, acfg.ditto_lambda, tcfg.lr);
        } catch (const NumericError& e) {
            throw NumericError("ditto personal track diverged at step " + std::to_string(step) + " (" + e.what() +
                               ")");
        }
    }
    return out;
}

EvalScore evaluate(const ParameterVector& params, const ClientDataset& data, Metric metric) {
    return evaluate_pooled(params, std::span<const ClientDataset>(&data, 1), metric);
}

EvalScore evaluate_pooled(const ParameterVector& params, std::span<const ClientDataset> datasets, Metric metric) {
    if (datasets.empty()) throw DomainError("evaluate_pooled: no datasets");
    std::vector<double> scores;
    for (const auto& d : datasets) {
        const auto& trainer = trainer_for(d.kind);
        if (trainer.metric() != metric) {
            throw ConfigError(std::string("metric ") + to_string(metric) + " does not apply to " + to_string(d.kind));
        }
        auto s = trainer.sample_scores(params, d);
        scores.insert(scores.end(), s.begin(), s.end());
    }
    return mean_std(scores, metric);
}

double work_estimate_seconds(const ClientDataset& data, const TrainerConfig& tcfg) {
    // ~2 flops per multiply-add at a nominal 1 GFLOP/s.
    const double per_step = 2.0 * static_cast<double>(data.rows * std::max(data.feature_dim, data.target_dim)) *
                            (data.kind == TrainerKind::least_squares ? 1.0 : 12.0);
    return per_step * static_cast<double>(tcfg.local_steps) * 1e-9;
}

}  // namespace fedrun
