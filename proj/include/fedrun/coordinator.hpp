#ifndef FEDRUN_COORDINATOR_HPP_
#define FEDRUN_COORDINATOR_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedrun/checkpoint.hpp"
#include "fedrun/clock.hpp"
#include "fedrun/config.hpp"
#include "fedrun/metrics.hpp"
#include "fedrun/protocol.hpp"

namespace fedrun {

using ConnId = std::uint64_t;

struct RoundState {
    std::uint64_t round = 0;
    ParameterVector global = ParameterVector::zeros(1);
    std::set<std::string> received;
    std::set<std::string> pending;
    double started_at = 0.0;
    std::map<std::string, double> per_client_times;
};

enum class LossDecision { wait, drop_for_round, abort };

const char* to_string(LossDecision d);

/// Policy for a participant that disconnects mid-round. `wait` keeps the round
/// open for it; under continue_without the round goes on as long as the
/// received plus still-pending sites reach the quorum, else it aborts.
LossDecision handle_client_loss(const RoundState& state, const std::string& lost, const FederationConfig& cfg);

/// Where the coordinator persists its state after each aggregation.
class CheckpointStore {
public:
    virtual ~CheckpointStore() = default;
    virtual void save(const Checkpoint& cp) = 0;
};

class FileCheckpointStore final : public CheckpointStore {
public:
    explicit FileCheckpointStore(std::filesystem::path path) : path_(std::move(path)) {}
    void save(const Checkpoint& cp) override { write_checkpoint(path_, cp); }

private:
    std::filesystem::path path_;
};

/// Keeps the serialized document, so a resume goes through the same parser
/// as a file-backed one.
class MemoryCheckpointStore final : public CheckpointStore {
public:
    void save(const Checkpoint& cp) override { text_ = serialize_checkpoint(cp); }
    bool empty() const { return text_.empty(); }
    Checkpoint load(std::optional<std::uint64_t> expected_hash) const {
        return parse_checkpoint(text_, expected_hash, "in-memory checkpoint");
    }

private:
    std::string text_;
};

struct Outgoing {
    ConnId conn = 0;
    Message msg;
    /// Virtual-time delay before the message leaves; non-zero only when the
    /// aggregation cost is simulated.
    double delay_seconds = 0.0;
};

struct CoordinatorOptions {
    const Clock* clock = nullptr;
    CheckpointStore* checkpoints = nullptr;
    /// Simulated aggregation cost. Unset: measure the real aggregation time.
    std::optional<double> fixed_aggregation_seconds;
    /// Called after each aggregation and checkpoint, before the next broadcast.
    std::function<void(std::uint64_t round, const ParameterVector& global)> on_aggregated;
};

/// Aggregator state machine with no I/O of its own. Transports feed it
/// connection events and decoded messages, then drain the outbox. Updates are
/// averaged in config site order, so arrival order never changes the model.
class Coordinator {
public:
    enum class Phase { awaiting_clients, training, validating, done, aborted };

    Coordinator(FederationConfig cfg, CoordinatorOptions opts, std::optional<Checkpoint> resume = std::nullopt);

    void on_connect(ConnId conn);
    void on_message(ConnId conn, const Message& msg);
    void on_disconnect(ConnId conn);
    /// Evaluates startup and round timeouts. Throws StartupError when the
    /// startup window closes without a single join.
    void on_tick();
    /// Earliest time at which on_tick() may change state.
    std::optional<double> next_deadline() const;

    std::vector<Outgoing> take_outbox();
    std::vector<ConnId> take_closes();

    Phase phase() const { return phase_; }
    bool finished() const { return phase_ == Phase::done || phase_ == Phase::aborted; }
    const RoundState& round_state() const { return state_; }
    const ParameterVector& global() const { return state_.global; }
    const std::string& diagnosis() const { return diagnosis_; }
    std::uint64_t stale_submissions() const { return stale_; }
    std::vector<std::string> connected_sites() const;
    /// Report over every round recorded so far, including checkpointed ones.
    ExperimentReport report() const;

private:
    void send(const std::string& site, Message msg, double delay = 0.0);
    void send_conn(ConnId conn, Message msg, double delay = 0.0);
    void close(ConnId conn);
    void unbind(ConnId conn);
    void handle_join(ConnId conn, const Message& msg);
    void handle_submission(ConnId conn, const std::string& site, const Message& msg);
    void maybe_start(bool startup_window_over);
    void start_round(double delay);
    void broadcast_task(const std::string& site, double delay);
    double round_span() const;
    void finish_round();
    void finish_validation();
    void lose(const std::string& site, const char* why);
    void abort(const std::string& reason);
    std::set<std::string> participants() const;
    TaskAssignment current_task() const;

    FederationConfig cfg_;
    CoordinatorOptions opts_;
    std::uint64_t hash_;
    Phase phase_ = Phase::awaiting_clients;
    RoundState state_;
    std::set<std::string> round_participants_;
    double created_at_;
    std::optional<double> awaiting_deadline_;
    bool any_joined_ = false;

    std::map<ConnId, std::string> site_of_;
    std::map<std::string, ConnId> conn_of_;

    std::map<std::string, ModelUpdate> updates_;
    std::map<std::string, UpdateSubmission> submissions_;
    std::map<std::string, double> submitted_at_;

    std::vector<RoundRecord> records_;
    ScoreMap final_scores_;
    std::string diagnosis_;
    std::uint64_t stale_ = 0;

    std::vector<Outgoing> outbox_;
    std::vector<ConnId> closes_;
};

const char* to_string(Coordinator::Phase p);

}  // namespace fedrun

#endif  // FEDRUN_COORDINATOR_HPP_
