#ifndef FEDRUN_SIMULATOR_HPP_
#define FEDRUN_SIMULATOR_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedrun/config.hpp"
#include "fedrun/metrics.hpp"
#include "fedrun/params.hpp"

namespace fedrun {

struct SimulationReport {
    ExperimentReport experiment;
    /// Global model after each aggregated round, indexed by round.
    std::vector<ParameterVector> global_history;
    ParameterVector final_global = ParameterVector::zeros(1);
    /// Ditto personal models; empty for other algorithms.
    std::map<std::string, ParameterVector> personal;
    double virtual_seconds = 0.0;
    std::uint64_t stale_submissions = 0;
    std::uint64_t server_restarts = 0;
};

/// Runs the aggregator and every site in one process over a zero-latency
/// in-memory transport and a virtual clock. Deterministic in the scenario.
/// A run that can make no further progress ends with status hung and a
/// diagnosis instead of throwing. Throws ConfigError for an invalid scenario.
SimulationReport simulate(const SimScenario& scenario);

/// speedup() over the two experiments' total times.
double speedup(const SimulationReport& baseline, const SimulationReport& candidate);

}  // namespace fedrun

#endif  // FEDRUN_SIMULATOR_HPP_
