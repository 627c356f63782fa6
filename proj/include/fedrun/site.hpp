#ifndef FEDRUN_SITE_HPP_
#define FEDRUN_SITE_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedrun/clock.hpp"
#include "fedrun/config.hpp"
#include "fedrun/protocol.hpp"
#include "fedrun/training.hpp"

namespace fedrun {

/// What a site does in response to one incoming message.
struct SiteReaction {
    std::vector<Message> replies;
    /// Local work behind the replies (train + validate); the simulator delays
    /// delivery by this much.
    double busy_seconds = 0.0;
    bool done = false;
    bool aborted = false;
    std::string abort_reason;
};

/// Site-side protocol logic with no I/O. The TCP client and the simulator
/// both drive it.
class SiteRuntime {
public:
    SiteRuntime(const FederationConfig& cfg, const std::string& site, TimingModel timing);

    const std::string& site() const { return site_; }
    Message join_message() const;
    /// Throws ConfigError when the aggregator rejects the join.
    SiteReaction on_message(const Message& msg);
    /// Process restart: in-flight work and the cached submission are lost. The
    /// personal model survives, as it lives in site storage.
    void restart();

    const ClientDataset& train_data() const { return train_; }
    const ClientDataset& validation_data() const { return validation_; }
    /// Ditto's personal model; unset for other algorithms.
    const std::optional<ParameterVector>& personal() const { return personal_; }
    std::uint64_t trained_rounds() const { return trained_rounds_; }

private:
    SiteReaction handle_task(const Message& msg);

    FederationConfig cfg_;
    std::string site_;
    TimingModel timing_;
    ClientDataset train_;
    ClientDataset validation_;
    Metric metric_;
    std::optional<ParameterVector> personal_;
    std::optional<Message> cached_;
    std::uint64_t trained_rounds_ = 0;
};

}  // namespace fedrun

#endif  // FEDRUN_SITE_HPP_
