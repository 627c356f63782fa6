#ifndef FEDRUN_SERVER_HPP_
#define FEDRUN_SERVER_HPP_

#include <functional>
#include <string>
#include <utility>

#include "fedrun/config.hpp"
#include "fedrun/metrics.hpp"

namespace fedrun {

struct ServerOptions {
    std::string listen = "127.0.0.1:7600";
    /// Continue from cfg.checkpoint_path; a missing or corrupt file is a
    /// CheckpointError. Without it the run starts at round 0.
    bool resume = false;
    /// Called on the I/O thread once the socket accepts, with the bound port.
    std::function<void(unsigned short port)> on_listening;
};

/// "host:port" split; throws ConfigError.
std::pair<std::string, unsigned short> split_address(const std::string& address);

/// Runs the aggregator over TCP until the experiment completes or aborts.
/// Checkpoints after every aggregation. Throws StartupError when no site joins
/// within the startup timeout, CheckpointError on a failed resume, IoError on
/// a failed checkpoint write or bind.
ExperimentReport run_experiment(const FederationConfig& cfg, const ServerOptions& opts);

}  // namespace fedrun

#endif  // FEDRUN_SERVER_HPP_
