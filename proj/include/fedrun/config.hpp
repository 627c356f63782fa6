#ifndef FEDRUN_CONFIG_HPP_
#define FEDRUN_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedrun/aggregation.hpp"
#include "fedrun/training.hpp"

namespace fedrun {

struct SiteSpec {
    std::string name;
    bool expected = true;
    std::optional<double> data_fraction;  // overrides heterogeneity.fraction for this site
    friend bool operator==(const SiteSpec&, const SiteSpec&) = default;
};

enum class LossPolicy { wait, continue_without };
enum class TimingMode { real, simulated };

const char* to_string(LossPolicy p);
const char* to_string(TimingMode m);

struct BackoffConfig {
    double initial_seconds = 0.5;
    double max_seconds = 30.0;
    double multiplier = 2.0;
    void validate() const;
    friend bool operator==(const BackoffConfig&, const BackoffConfig&) = default;
};

/// Site-side runtime knobs shared by every client of a deployment.
struct ClientSection {
    TimingMode timing = TimingMode::real;
    double compute_multiplier = 1.0;
    BackoffConfig reconnect_backoff;
    friend bool operator==(const ClientSection&, const ClientSection&) = default;
};

struct FederationConfig {
    std::string name;
    std::vector<SiteSpec> sites;
    std::uint64_t rounds = 50;
    AlgorithmConfig algorithm;
    TrainerConfig trainer;
    HeterogeneityConfig heterogeneity;
    LossPolicy on_client_loss = LossPolicy::wait;
    std::optional<std::uint64_t> min_clients_per_round;
    std::filesystem::path checkpoint_path = "checkpoint.json";
    std::optional<double> round_timeout_seconds;
    double startup_timeout_seconds = 60.0;
    std::uint64_t data_seed = 0;
    ClientSection client;

    /// Re-checks every nested invariant; throws ConfigError.
    void validate() const;
    std::uint64_t min_clients() const { return min_clients_per_round.value_or(sites.size()); }
    /// Position of the site in `sites`; throws ConfigError for unknown names.
    std::size_t site_index(const std::string& site) const;
    HeterogeneityConfig heterogeneity_for(const std::string& site) const;
    std::vector<std::string> expected_sites() const;

    friend bool operator==(const FederationConfig&, const FederationConfig&) = default;
};

/// Hash over everything that shapes the model trajectory (sites, algorithm,
/// trainer, data). Resuming under a different hash is refused.
std::uint64_t config_hash(const FederationConfig& cfg);

struct ClientConfig {
    std::string site_name;
    std::string server_address;  // host:port
    std::uint64_t data_seed = 0;
    std::size_t site_index = 0;
    double compute_multiplier = 1.0;
    BackoffConfig reconnect_backoff;
    TimingMode timing = TimingMode::real;

    void validate() const;
};

ClientConfig client_config_for(const FederationConfig& cfg, const std::string& site, const std::string& server);

enum class FaultTarget { server, client };
enum class FaultKind { crash, disconnect };

/// Server crash at round k: right after round k is aggregated and
/// checkpointed. Client crash at round k: on receiving the round-k task,
/// losing in-flight work. Client disconnect at round k: after training, before
/// the submission reaches the server.
struct FaultEvent {
    std::uint64_t at_round = 0;
    FaultTarget target = FaultTarget::server;
    std::string client;  // for client faults
    FaultKind kind = FaultKind::crash;
    double downtime_seconds = 0.0;
    bool permanent = false;
    friend bool operator==(const FaultEvent&, const FaultEvent&) = default;
};

struct SimScenario {
    FederationConfig federation;
    std::map<std::string, double> site_multipliers;
    double base_round_cost_seconds = 1.0;
    double aggregation_cost_seconds = 0.0;
    double validation_cost_seconds = 0.0;
    std::vector<FaultEvent> faults;
    /// Also train every site alone and score it on every site.
    bool local_baselines = false;
    /// Virtual seconds without a completed round before declaring a hang; 0 = automatic.
    double stall_horizon_seconds = 0.0;

    void validate() const;
    double multiplier(const std::string& site) const;
};

/// A parsed config document: the federation plus optional simulator keys.
struct ConfigFile {
    FederationConfig federation;
    std::optional<SimScenario> simulation;
};

/// Parses JSON text. Errors are ConfigError with a "<source>:<line>: " prefix
/// pointing at the offending key. Unknown keys are rejected.
ConfigFile parse_config(const std::string& text, const std::string& source = "config");
ConfigFile load_config(const std::filesystem::path& path);
SimScenario load_scenario(const std::filesystem::path& path);

std::string federation_to_json(const FederationConfig& cfg);
std::string scenario_to_json(const SimScenario& scenario);

}  // namespace fedrun

#endif  // FEDRUN_CONFIG_HPP_
