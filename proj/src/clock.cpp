#include "fedrun/clock.hpp"

#include <limits>

namespace fedrun {

double measure_train_time(const TimingModel& timing, double base_cost, const std::function<void()>& run) {
    if (timing.mode == TimingMode::simulated) {
        run();
        return base_cost * timing.compute_multiplier;
    }
    const auto start = std::chrono::steady_clock::now();
    run();
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    // steady_clock can tick coarser than a tiny training call.
    return std::max(elapsed, std::numeric_limits<double>::min());
}

}  // namespace fedrun
