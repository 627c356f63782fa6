#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fedrun/errors.hpp"
#include "fedrun/training.hpp"

using namespace fedrun;

namespace {

ClientDataset tiny_least_squares() {
    ClientDataset d;
    d.kind = TrainerKind::least_squares;
    d.rows = 3;
    d.feature_dim = 2;
    d.target_dim = 1;
    d.features = {1, 0, 0, 1, 1, 1};
    d.targets = {1, 2, 3};
    d.site_shift = {0, 0};
    return d;
}

HeterogeneityConfig het(double shift, double noise, std::uint64_t samples = 32) {
    HeterogeneityConfig h;
    h.shift_scale = shift;
    h.noise_std = noise;
    h.samples_per_site = samples;
    return h;
}

}  // namespace

TEST(LeastSquares, HandComputedStep) {
    // residuals at w = 0 are -y; X^T r = [-4, -5]; mean gradient [-4/3, -5/3]
    TrainerConfig t;
    t.lr = 0.3;
    const auto u = local_train(ParameterVector::zeros(2), tiny_least_squares(), t, AlgorithmConfig{},
                               ParameterVector::zeros(2));
    EXPECT_NEAR(u.params[0], 0.4, 1e-15);
    EXPECT_NEAR(u.params[1], 0.5, 1e-15);
    EXPECT_EQ(u.sample_count, 3u);
}

TEST(LeastSquares, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> n(0.0, 1.0);
    const auto& trainer = trainer_for(TrainerKind::least_squares);
    for (int trial = 0; trial < 50; ++trial) {
        auto h = het(0.7, 0.5, 16);
        h.base_optimum = {n(rng), n(rng), n(rng), n(rng)};
        const auto data = generate_site_data(h, TrainerKind::least_squares, trial % 3, trial);
        std::vector<double> w(4);
        for (auto& x : w) x = n(rng);
        const ParameterVector wv(w);
        const auto g = trainer.gradient(wv, data);
        for (std::size_t j = 0; j < w.size(); ++j) {
            auto plus = w, minus = w;
            plus[j] += 1e-6;
            minus[j] -= 1e-6;
            const double fd = (trainer.objective(ParameterVector(plus), data) -
                               trainer.objective(ParameterVector(minus), data)) / 2e-6;
            EXPECT_LE(std::abs(fd - g[j]), 1e-5 * std::max(1.0, std::abs(g[j])));
        }
    }
}

TEST(LeastSquares, ConvergesToOptimumWithoutNoise) {
    const auto h = het(0.0, 0.0);
    const auto data = generate_site_data(h, TrainerKind::least_squares, 0, 4);
    TrainerConfig t;
    t.local_steps = 5000;
    const auto u = local_train(ParameterVector::zeros(3), data, t, AlgorithmConfig{}, ParameterVector::zeros(3));
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(u.params[j], h.base_optimum[j], 1e-6);
}

TEST(LeastSquares, IidDataIsExactlyConsistent) {
    const auto h = het(0.0, 0.0);
    const ParameterVector opt(h.base_optimum);
    for (std::uint64_t site = 0; site < 4; ++site) {
        const auto d = generate_site_data(h, TrainerKind::least_squares, site, 1);
        EXPECT_EQ(evaluate(opt, d, Metric::mse_loss).mean, 0.0);
    }
}

TEST(GenerateSiteData, FractionAndDeterminism) {
    auto h = het(0.5, 0.1, 24);
    h.fraction = 0.5;
    const auto a = generate_site_data(h, TrainerKind::least_squares, 2, 17);
    EXPECT_EQ(a.rows, 12u);
    EXPECT_EQ(a, generate_site_data(h, TrainerKind::least_squares, 2, 17));
    EXPECT_FALSE(a == generate_site_data(h, TrainerKind::least_squares, 1, 17));
    h.fraction = 0.01;
    EXPECT_EQ(generate_site_data(h, TrainerKind::least_squares, 0, 0).rows, 1u);
}

TEST(GenerateSiteData, ShiftHasExactScale) {
    const auto h = het(0.3, 0.0);
    for (std::uint64_t site = 0; site < 5; ++site) {
        const auto d = generate_site_data(h, TrainerKind::least_squares, site, 8);
        double norm = 0.0;
        for (double s : d.site_shift) norm += s * s;
        EXPECT_NEAR(std::sqrt(norm), 0.3, 1e-12);
        const auto v = generate_site_data(h, TrainerKind::least_squares, site, 8, Split::validation);
        EXPECT_EQ(v.site_shift, d.site_shift);
    }
}

TEST(GenerateSiteData, InvalidFraction) {
    auto h = het(0.0, 0.0);
    h.fraction = 0.0;
    EXPECT_THROW(generate_site_data(h, TrainerKind::least_squares, 0, 0), ConfigError);
    h.fraction = 1.5;
    EXPECT_THROW(generate_site_data(h, TrainerKind::least_squares, 0, 0), ConfigError);
}

TEST(TrainerConfig, RejectsNonPositiveRate) {
    TrainerConfig t;
    t.lr = 0.0;
    EXPECT_THROW(t.validate(), ConfigError);
    t.lr = 0.1;
    t.local_steps = 0;
    EXPECT_THROW(t.validate(), ConfigError);
}

TEST(LocalTrain, Errors) {
    TrainerConfig t;
    EXPECT_THROW(local_train(ParameterVector::zeros(3), tiny_least_squares(), t, {}, ParameterVector::zeros(3)),
                 DimensionError);
    EXPECT_THROW(local_train(ParameterVector::zeros(2), tiny_least_squares(), t, {}, ParameterVector::zeros(3)),
                 DimensionError);
    t.lr = 1e6;
    t.local_steps = 200;
    try {
        local_train(ParameterVector::zeros(2), tiny_least_squares(), t, {}, ParameterVector::zeros(2));
        FAIL() << "expected divergence";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
    }
}

TEST(LocalTrain, ProxWithZeroMuMatchesPlain) {
    const auto data = generate_site_data(het(0.4, 0.3), TrainerKind::least_squares, 1, 3);
    TrainerConfig t;
    t.local_steps = 7;
    AlgorithmConfig prox;
    prox.kind = AlgorithmKind::fedprox;
    const ParameterVector start{0.2, 0.1, -0.3};
    const ParameterVector global{1.0, 1.0, 1.0};
    EXPECT_EQ(local_train(start, data, t, prox, global).params, local_train(start, data, t, {}, global).params);
}

TEST(Segmentation, ZeroParamsScoreBelowOne) {
    HeterogeneityConfig h;
    h.base_optimum = {0.0, 1.0};
    h.noise_std = 0.1;
    h.samples_per_site = 8;
    const auto data = generate_site_data(h, TrainerKind::synthetic_segmentation, 0, 5);
    EXPECT_EQ(data.feature_dim, kImageSide * kImageSide);
    const auto s = evaluate(ParameterVector::zeros(3), data, Metric::dice);
    EXPECT_LT(s.mean, 1.0);
    EXPECT_GE(s.mean, 0.0);
}

TEST(Segmentation, TrainingImprovesDice) {
    HeterogeneityConfig h;
    h.base_optimum = {0.0, 1.0};
    h.noise_std = 0.2;
    h.samples_per_site = 16;
    const auto data = generate_site_data(h, TrainerKind::synthetic_segmentation, 0, 5);
    TrainerConfig t;
    t.trainer = TrainerKind::synthetic_segmentation;
    t.lr = 1.0;
    t.local_steps = 300;
    const auto start = ParameterVector::zeros(3);
    const auto trained = local_train(start, data, t, {}, start).params;
    EXPECT_GT(evaluate(trained, data, Metric::dice).mean, 0.9);
}

TEST(Segmentation, GradientMatchesFiniteDifferences) {
    HeterogeneityConfig h;
    h.base_optimum = {0.0, 1.0};
    h.noise_std = 0.3;
    h.samples_per_site = 4;
    const auto data = generate_site_data(h, TrainerKind::synthetic_segmentation, 1, 9);
    const auto& trainer = trainer_for(TrainerKind::synthetic_segmentation);
    const std::vector<double> w{0.7, -0.4, 0.1};
    const auto g = trainer.gradient(ParameterVector(w), data);
    for (std::size_t j = 0; j < w.size(); ++j) {
        auto plus = w, minus = w;
        plus[j] += 1e-6;
        minus[j] -= 1e-6;
        const double fd =
            (trainer.objective(ParameterVector(plus), data) - trainer.objective(ParameterVector(minus), data)) / 2e-6;
        EXPECT_LE(std::abs(fd - g[j]), 1e-5 * std::max(1.0, std::abs(g[j])));
    }
}

TEST(Evaluate, DeterministicAndMetricChecked) {
    const auto data = generate_site_data(het(0.2, 0.4), TrainerKind::least_squares, 0, 2);
    const ParameterVector w{0.5, -1.0, 0.0};
    EXPECT_EQ(evaluate(w, data, Metric::mse_loss), evaluate(w, data, Metric::mse_loss));
    EXPECT_THROW(evaluate(w, data, Metric::dice), ConfigError);
}

TEST(InitialParams, SmallAndSeeded) {
    TrainerConfig t;
    t.seed = 42;
    const auto a = initial_params(t, het(0, 0));
    EXPECT_EQ(a, initial_params(t, het(0, 0)));
    EXPECT_EQ(a.dim(), 3u);
    for (double v : a.values()) EXPECT_LT(std::abs(v), 0.1);
    t.seed = 43;
    EXPECT_FALSE(a == initial_params(t, het(0, 0)));
}
