#ifndef FEDRUN_CLOCK_HPP_
#define FEDRUN_CLOCK_HPP_

#include <algorithm>
#include <chrono>
#include <functional>
#include <optional>

#include "fedrun/config.hpp"

namespace fedrun {

/// Seconds since an arbitrary epoch. Deployment uses the steady clock; the
/// simulator advances a virtual one.
class Clock {
public:
    virtual ~Clock() = default;
    virtual double now() const = 0;
};

class SteadyClock final : public Clock {
public:
    SteadyClock() : start_(std::chrono::steady_clock::now()) {}
    double now() const override {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

class VirtualClock final : public Clock {
public:
    double now() const override { return now_; }
    void advance_to(double t) { now_ = t; }

private:
    double now_ = 0.0;
};

/// How a site reports the duration of its local work.
struct TimingModel {
    TimingMode mode = TimingMode::real;
    double compute_multiplier = 1.0;
    /// Simulated base cost of one training call; unset means the trainer's
    /// own work estimate.
    std::optional<double> train_base_seconds;
    double validate_base_seconds = 0.0;
};

/// Real mode: wall-clock seconds around `run` (always > 0). Simulated mode:
/// base_cost * compute_multiplier, with `run` still executed.
double measure_train_time(const TimingModel& timing, double base_cost, const std::function<void()>& run);

/// Capped exponential backoff. Never gives up; the delay saturates at max.
class Backoff {
public:
    explicit Backoff(BackoffConfig cfg) : cfg_(cfg), next_(cfg.initial_seconds) {}

    double next_delay() {
        const double d = next_;
        next_ = std::min(cfg_.max_seconds, next_ * cfg_.multiplier);
        return d;
    }
    void reset() { next_ = cfg_.initial_seconds; }

private:
    BackoffConfig cfg_;
    double next_;
};

}  // namespace fedrun

#endif  // FEDRUN_CLOCK_HPP_
