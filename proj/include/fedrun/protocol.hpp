#ifndef FEDRUN_PROTOCOL_HPP_
#define FEDRUN_PROTOCOL_HPP_

// Wire format shared by the aggregator and every site:
//
//   frame   = length:u32 big-endian | payload[length]
//   payload = UTF-8 JSON {"kind": str, "round": u64, "client_id": str, "body": {...}}
//
// Parameter values travel as JSON number arrays with shortest round-trip
// formatting, so decode(encode(m)) reproduces every double bit for bit.
//
// WARNING: frames are plaintext and unauthenticated. There is no TLS, no
// client authentication and no integrity protection beyond JSON validation.
// Run it only on trusted networks or behind an authenticated tunnel.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedrun/aggregation.hpp"
#include "fedrun/params.hpp"

namespace fedrun {

inline constexpr std::size_t kMaxFramePayload = std::size_t{256} << 20;  // 256 MiB
inline constexpr std::size_t kFrameHeader = 4;

enum class MessageKind { join_request, join_ack, task_assignment, update_submission, heartbeat, experiment_done, abort };

const char* to_string(MessageKind k);

struct JoinRequest {
    friend bool operator==(const JoinRequest&, const JoinRequest&) = default;
};

struct JoinAck {
    bool accepted = true;
    std::uint64_t current_round = 0;
    std::string reason;
    friend bool operator==(const JoinAck&, const JoinAck&) = default;
};

struct TaskAssignment {
    ParameterVector params = ParameterVector::zeros(1);
    AlgorithmConfig algorithm;
    // Final pass: evaluate the global model and report back without training.
    bool validate_only = false;
    friend bool operator==(const TaskAssignment&, const TaskAssignment&) = default;
};

/// The envelope's client_id and round are the update's; the body carries the
/// rest of the ModelUpdate plus the site's evaluation of the global model it
/// was handed.
struct UpdateSubmission {
    ParameterVector params = ParameterVector::zeros(1);
    std::uint64_t sample_count = 1;
    double train_seconds = 0.0;
    double validate_seconds = 0.0;
    std::optional<EvalScore> global_eval;
    friend bool operator==(const UpdateSubmission&, const UpdateSubmission&) = default;
};

struct Heartbeat {
    friend bool operator==(const Heartbeat&, const Heartbeat&) = default;
};

struct ExperimentDone {
    friend bool operator==(const ExperimentDone&, const ExperimentDone&) = default;
};

struct Abort {
    std::string reason;
    friend bool operator==(const Abort&, const Abort&) = default;
};

// Alternative order matches MessageKind.
using MessageBody =
    std::variant<JoinRequest, JoinAck, TaskAssignment, UpdateSubmission, Heartbeat, ExperimentDone, Abort>;

struct Message {
    std::uint64_t round = 0;
    std::string client_id;
    MessageBody body;

    MessageKind kind() const { return static_cast<MessageKind>(body.index()); }
    /// Rebuilds the ModelUpdate of an update_submission.
    ModelUpdate update() const;

    friend bool operator==(const Message&, const Message&) = default;
};

Message make_submission(const ModelUpdate& update, double validate_seconds, std::optional<EvalScore> global_eval);

using Bytes = std::vector<std::uint8_t>;

/// Throws EncodeError on non-finite values or a payload over the frame cap.
Bytes encode(const Message& msg);

/// Decodes exactly one frame. Throws NeedMoreBytes if the buffer ends early,
/// ProtocolError on an oversized prefix, malformed JSON, unknown kind, missing
/// or extra fields, or trailing bytes.
Message decode(std::span<const std::uint8_t> frame);

/// Incremental decoder for one connection's byte stream.
class FrameDecoder {
public:
    void feed(std::span<const std::uint8_t> bytes);
    /// Next complete message, or nullopt if more bytes are needed. A thrown
    /// ProtocolError leaves the stream unusable; drop the connection.
    std::optional<Message> next();
    std::size_t buffered() const { return buffer_.size() - offset_; }

private:
    Bytes buffer_;
    std::size_t offset_ = 0;
};

}  // namespace fedrun

#endif  // FEDRUN_PROTOCOL_HPP_
