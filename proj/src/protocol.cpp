#include "fedrun/protocol.hpp"

#include <array>
#include <cmath>

#include "fedrun/errors.hpp"
#include "json_io.hpp"

namespace fedrun {

using detail::json;

namespace {

constexpr std::array<const char*, 7> kNames = {"join_request", "join_ack",        "task_assignment", "update_submission",
                                               "heartbeat",    "experiment_done", "abort"};

MessageKind kind_from_string(const std::string& s) {
    for (std::size_t i = 0; i < kNames.size(); ++i) {
        if (s == kNames[i]) return static_cast<MessageKind>(i);
    }
    throw ProtocolError("unknown message kind '" + s + "'");
}

void check_finite(const ParameterVector& p) {
    // Unreachable through ParameterVector's constructor; kept at the wire boundary.
    for (double v : p.values()) {
        if (!std::isfinite(v)) throw EncodeError("non-finite parameter value");
    }
}

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw EncodeError(std::string("non-finite ") + what);
}

json body_to_json(const MessageBody& body) {
    return std::visit(
        [](const auto& b) -> json {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, JoinAck>) {
                return json{{"accepted", b.accepted}, {"current_round", b.current_round}, {"reason", b.reason}};
            } else if constexpr (std::is_same_v<T, TaskAssignment>) {
                check_finite(b.params);
                return json{{"params", detail::params_to_json(b.params)},
                            {"algorithm", detail::algorithm_to_json(b.algorithm)},
                            {"validate_only", b.validate_only}};
            } else if constexpr (std::is_same_v<T, UpdateSubmission>) {
                check_finite(b.params);
                check_finite(b.train_seconds, "train_seconds");
                check_finite(b.validate_seconds, "validate_seconds");
                json j{{"params", detail::params_to_json(b.params)},
                       {"sample_count", b.sample_count},
                       {"train_seconds", b.train_seconds},
                       {"validate_seconds", b.validate_seconds}};
                if (b.global_eval) {
                    check_finite(b.global_eval->mean, "eval mean");
                    check_finite(b.global_eval->std, "eval std");
                    j["global_eval"] = detail::eval_to_json(*b.global_eval);
                }
                return j;
            } else if constexpr (std::is_same_v<T, Abort>) {
                return json{{"reason", b.reason}};
            } else {
                return json::object();
            }
        },
        body);
}

MessageBody body_from_json(MessageKind kind, const json& j) {
    using detail::reject_unknown_keys;
    using detail::require;
    const std::string where = std::string(to_string(kind)) + " body";
    if (!j.is_object()) throw ProtocolError(where + " must be an object");
    switch (kind) {
        case MessageKind::join_request:
            reject_unknown_keys<ProtocolError>(j, {}, where);
            return JoinRequest{};
        case MessageKind::heartbeat:
            reject_unknown_keys<ProtocolError>(j, {}, where);
            return Heartbeat{};
        case MessageKind::experiment_done:
            reject_unknown_keys<ProtocolError>(j, {}, where);
            return ExperimentDone{};
        case MessageKind::join_ack: {
            reject_unknown_keys<ProtocolError>(j, {"accepted", "current_round", "reason"}, where);
            JoinAck a;
            a.accepted = detail::boolean<ProtocolError>(require<ProtocolError>(j, "accepted", where), "accepted");
            a.current_round =
                detail::unsigned_int<ProtocolError>(require<ProtocolError>(j, "current_round", where), "current_round");
            a.reason = detail::string<ProtocolError>(require<ProtocolError>(j, "reason", where), "reason");
            return a;
        }
        case MessageKind::task_assignment: {
            reject_unknown_keys<ProtocolError>(j, {"params", "algorithm", "validate_only"}, where);
            TaskAssignment t;
            t.params = detail::params_from_json<ProtocolError>(require<ProtocolError>(j, "params", where), "params");
            t.algorithm =
                detail::algorithm_from_json<ProtocolError>(require<ProtocolError>(j, "algorithm", where), "algorithm");
            t.validate_only =
                detail::boolean<ProtocolError>(require<ProtocolError>(j, "validate_only", where), "validate_only");
            return t;
        }
        case MessageKind::update_submission: {
            reject_unknown_keys<ProtocolError>(
                j, {"params", "sample_count", "train_seconds", "validate_seconds", "global_eval"}, where);
            UpdateSubmission u;
            u.params = detail::params_from_json<ProtocolError>(require<ProtocolError>(j, "params", where), "params");
            u.sample_count =
                detail::unsigned_int<ProtocolError>(require<ProtocolError>(j, "sample_count", where), "sample_count");
            if (u.sample_count < 1) throw ProtocolError("sample_count must be >= 1");
            u.train_seconds =
                detail::number<ProtocolError>(require<ProtocolError>(j, "train_seconds", where), "train_seconds");
            u.validate_seconds =
                detail::number<ProtocolError>(require<ProtocolError>(j, "validate_seconds", where), "validate_seconds");
            if (!(u.train_seconds >= 0.0) || !(u.validate_seconds >= 0.0)) {
                throw ProtocolError("timings must be >= 0");
            }
            if (j.contains("global_eval")) u.global_eval = detail::eval_from_json<ProtocolError>(j["global_eval"], "global_eval");
            return u;
        }
        case MessageKind::abort: {
            reject_unknown_keys<ProtocolError>(j, {"reason"}, where);
            return Abort{detail::string<ProtocolError>(require<ProtocolError>(j, "reason", where), "reason")};
        }
    }
    throw ProtocolError("unhandled kind");
}

std::uint32_t read_be32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

Message parse_payload(std::span<const std::uint8_t> payload) {
    json j;
    try {
        j = json::parse(payload.begin(), payload.end());
    } catch (const json::parse_error& e) {
        throw ProtocolError(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ProtocolError("payload must be a JSON object");
    detail::reject_unknown_keys<ProtocolError>(j, {"kind", "round", "client_id", "body"}, "message");
    Message m;
    const auto kind = kind_from_string(
        detail::string<ProtocolError>(detail::require<ProtocolError>(j, "kind", "message"), "kind"));
    m.round = detail::unsigned_int<ProtocolError>(detail::require<ProtocolError>(j, "round", "message"), "round");
    m.client_id =
        detail::string<ProtocolError>(detail::require<ProtocolError>(j, "client_id", "message"), "client_id");
    m.body = body_from_json(kind, detail::require<ProtocolError>(j, "body", "message"));
    return m;
}

}  // namespace

const char* to_string(MessageKind k) { return kNames[static_cast<std::size_t>(k)]; }

ModelUpdate Message::update() const {
    const auto* sub = std::get_if<UpdateSubmission>(&body);
    if (!sub) throw ProtocolError(std::string("expected update_submission, got ") + to_string(kind()));
    ModelUpdate u;
    u.client_id = client_id;
    u.round = round;
    u.params = sub->params;
    u.sample_count = sub->sample_count;
    u.train_seconds = sub->train_seconds;
    return u;
}

Message make_submission(const ModelUpdate& update, double validate_seconds, std::optional<EvalScore> global_eval) {
    UpdateSubmission sub;
    sub.params = update.params;
    sub.sample_count = update.sample_count;
    sub.train_seconds = update.train_seconds;
    sub.validate_seconds = validate_seconds;
    sub.global_eval = std::move(global_eval);
    return Message{update.round, update.client_id, std::move(sub)};
}

Bytes encode(const Message& msg) {
    json j{{"kind", to_string(msg.kind())},
           {"round", msg.round},
           {"client_id", msg.client_id},
           {"body", body_to_json(msg.body)}};
    std::string payload;
    try {
        payload = j.dump();
    } catch (const json::type_error& e) {
        throw EncodeError(std::string("payload is not valid UTF-8: ") + e.what());
    }
    if (payload.size() > kMaxFramePayload) {
        throw EncodeError("payload of " + std::to_string(payload.size()) + " bytes exceeds the 256 MiB frame cap");
    }
    const auto n = static_cast<std::uint32_t>(payload.size());
    Bytes out;
    out.reserve(kFrameHeader + payload.size());
    out.push_back(static_cast<std::uint8_t>(n >> 24));
    out.push_back(static_cast<std::uint8_t>(n >> 16));
    out.push_back(static_cast<std::uint8_t>(n >> 8));
    out.push_back(static_cast<std::uint8_t>(n));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

Message decode(std::span<const std::uint8_t> frame) {
    if (frame.size() < kFrameHeader) throw NeedMoreBytes("frame header incomplete");
    const std::size_t n = read_be32(frame.data());
    if (n > kMaxFramePayload) {
        throw ProtocolError("length prefix " + std::to_string(n) + " exceeds the 256 MiB frame cap");
    }
    if (frame.size() < kFrameHeader + n) throw NeedMoreBytes("frame payload incomplete");
    if (frame.size() > kFrameHeader + n) throw ProtocolError("trailing bytes after frame");
    return parse_payload(frame.subspan(kFrameHeader, n));
}

void FrameDecoder::feed(std::span<const std::uint8_t> bytes) {
    if (offset_ > 0 && offset_ == buffer_.size()) {
        buffer_.clear();
        offset_ = 0;
    }
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Message> FrameDecoder::next() {
    const std::size_t avail = buffer_.size() - offset_;
    if (avail < kFrameHeader) return std::nullopt;
    const std::size_t n = read_be32(buffer_.data() + offset_);
    if (n > kMaxFramePayload) {
        throw ProtocolError("length prefix " + std::to_string(n) + " exceeds the 256 MiB frame cap");
    }
    if (avail < kFrameHeader + n) return std::nullopt;
    auto msg = parse_payload(std::span<const std::uint8_t>(buffer_.data() + offset_ + kFrameHeader, n));
    offset_ += kFrameHeader + n;
    if (offset_ > (1u << 20) && offset_ * 2 > buffer_.size()) {
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
        offset_ = 0;
    }
    return msg;
}

}  // namespace fedrun
