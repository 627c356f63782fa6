#include "fedrun/coordinator.hpp"

#include <algorithm>
#include <chrono>
#include <limits>

#include "fedrun/aggregation.hpp"
#include "fedrun/errors.hpp"
#include "fedrun/training.hpp"

namespace fedrun {

const char* to_string(LossDecision d) {
    switch (d) {
        case LossDecision::wait: return "wait";
        case LossDecision::drop_for_round: return "drop_for_round";
        case LossDecision::abort: return "abort";
    }
    return "?";
}

const char* to_string(Coordinator::Phase p) {
    switch (p) {
        case Coordinator::Phase::awaiting_clients: return "awaiting_clients";
        case Coordinator::Phase::training: return "training";
        case Coordinator::Phase::validating: return "validating";
        case Coordinator::Phase::done: return "done";
        case Coordinator::Phase::aborted: return "aborted";
    }
    return "?";
}

LossDecision handle_client_loss(const RoundState& state, const std::string& lost, const FederationConfig& cfg) {
    if (cfg.on_client_loss == LossPolicy::wait) return LossDecision::wait;
    std::size_t remaining = state.received.size();
    for (const auto& p : state.pending) remaining += p != lost;
    return remaining >= cfg.min_clients() ? LossDecision::drop_for_round : LossDecision::abort;
}

Coordinator::Coordinator(FederationConfig cfg, CoordinatorOptions opts, std::optional<Checkpoint> resume)
    : cfg_(std::move(cfg)), opts_(std::move(opts)), hash_(config_hash(cfg_)) {
    cfg_.validate();
    if (!opts_.clock) throw ConfigError("coordinator needs a clock");
    created_at_ = opts_.clock->now();
    if (resume) {
        if (resume->config_hash != hash_) throw CheckpointError("checkpoint was written under a different config");
        state_.round = resume->next_round();
        state_.global = resume->global;
        records_ = resume->history;
    } else {
        state_.round = 0;
        state_.global = initial_params(cfg_.trainer, cfg_.heterogeneity);
    }
}

std::vector<Outgoing> Coordinator::take_outbox() { return std::exchange(outbox_, {}); }
std::vector<ConnId> Coordinator::take_closes() { return std::exchange(closes_, {}); }

std::vector<std::string> Coordinator::connected_sites() const {
    std::vector<std::string> out;
    for (const auto& [site, _] : conn_of_) out.push_back(site);
    return out;
}

void Coordinator::send_conn(ConnId conn, Message msg, double delay) {
    outbox_.push_back(Outgoing{conn, std::move(msg), delay});
}

void Coordinator::send(const std::string& site, Message msg, double delay) {
    auto it = conn_of_.find(site);
    if (it != conn_of_.end()) send_conn(it->second, std::move(msg), delay);
}

void Coordinator::close(ConnId conn) {
    closes_.push_back(conn);
    unbind(conn);
}

void Coordinator::unbind(ConnId conn) {
    auto it = site_of_.find(conn);
    if (it == site_of_.end()) return;
    conn_of_.erase(it->second);
    site_of_.erase(it);
}

void Coordinator::on_connect(ConnId) {}

void Coordinator::on_message(ConnId conn, const Message& msg) {
    if (finished() && msg.kind() != MessageKind::join_request && msg.kind() != MessageKind::heartbeat) return;
    switch (msg.kind()) {
        case MessageKind::join_request:
            handle_join(conn, msg);
            return;
        case MessageKind::heartbeat:
            send_conn(conn, Message{state_.round, msg.client_id, Heartbeat{}});
            return;
        case MessageKind::update_submission: {
            auto it = site_of_.find(conn);
            if (it == site_of_.end() || it->second != msg.client_id) {
                close(conn);  // submission before join or under another site's name
                return;
            }
            handle_submission(conn, it->second, msg);
            return;
        }
        default:
            // Server-to-client kinds arriving at the server.
            close(conn);
            return;
    }
}

void Coordinator::handle_join(ConnId conn, const Message& msg) {
    const std::string& site = msg.client_id;
    bool known = false;
    for (const auto& s : cfg_.sites) known = known || s.name == site;
    if (!known) {
        send_conn(conn, Message{state_.round, site, JoinAck{false, state_.round, "unknown site '" + site + "'"}});
        closes_.push_back(conn);
        return;
    }
    if (auto old = conn_of_.find(site); old != conn_of_.end() && old->second != conn) close(old->second);
    unbind(conn);
    site_of_[conn] = site;
    conn_of_[site] = conn;
    any_joined_ = true;
    send_conn(conn, Message{state_.round, site, JoinAck{true, state_.round, ""}});

    switch (phase_) {
        case Phase::done:
            send_conn(conn, Message{state_.round, site, ExperimentDone{}});
            return;
        case Phase::aborted:
            send_conn(conn, Message{state_.round, site, Abort{diagnosis_}});
            return;
        case Phase::awaiting_clients:
            maybe_start(false);
            return;
        case Phase::training:
        case Phase::validating:
            // Rejoining participants get the open task again; newcomers wait
            // for the next round boundary.
            if (state_.pending.count(site)) broadcast_task(site, 0.0);
            return;
    }
}

void Coordinator::handle_submission(ConnId, const std::string& site, const Message& msg) {
    if ((phase_ != Phase::training && phase_ != Phase::validating) || msg.round != state_.round ||
        !state_.pending.count(site)) {
        ++stale_;  // late, duplicate or unsolicited: discard
        return;
    }
    const auto& sub = std::get<UpdateSubmission>(msg.body);
    if (phase_ == Phase::training && sub.params.dim() != state_.global.dim()) {
        ++stale_;
        return;
    }
    state_.pending.erase(site);
    state_.received.insert(site);
    state_.per_client_times[site] = sub.train_seconds + sub.validate_seconds;
    submitted_at_[site] = opts_.clock->now();
    submissions_.insert_or_assign(site, sub);
    if (phase_ == Phase::training) updates_.insert_or_assign(site, msg.update());
    if (state_.pending.empty()) {
        if (phase_ == Phase::training) finish_round();
        else finish_validation();
    }
}

void Coordinator::on_disconnect(ConnId conn) {
    auto it = site_of_.find(conn);
    if (it == site_of_.end()) return;
    const std::string site = it->second;
    unbind(conn);
    if ((phase_ == Phase::training || phase_ == Phase::validating) && state_.pending.count(site)) {
        lose(site, "disconnected");
    }
}

void Coordinator::lose(const std::string& site, const char* why) {
    switch (handle_client_loss(state_, site, cfg_)) {
        case LossDecision::wait:
            return;
        case LossDecision::drop_for_round:
            state_.pending.erase(site);
            if (state_.pending.empty()) {
                if (phase_ == Phase::training) finish_round();
                else finish_validation();
            }
            return;
        case LossDecision::abort:
            abort("site '" + site + "' " + why + " in round " + std::to_string(state_.round) +
                  " and the quorum of " + std::to_string(cfg_.min_clients()) + " can no longer be met");
            return;
    }
}

void Coordinator::abort(const std::string& reason) {
    diagnosis_ = reason;
    phase_ = Phase::aborted;
    for (const auto& [site, conn] : conn_of_) send_conn(conn, Message{state_.round, site, Abort{reason}});
}

std::optional<double> Coordinator::next_deadline() const {
    switch (phase_) {
        case Phase::awaiting_clients:
            if (awaiting_deadline_) return awaiting_deadline_;
            return created_at_ + cfg_.startup_timeout_seconds;
        case Phase::training:
        case Phase::validating:
            if (cfg_.round_timeout_seconds) return state_.started_at + *cfg_.round_timeout_seconds;
            return std::nullopt;
        default:
            return std::nullopt;
    }
}

void Coordinator::on_tick() {
    const double now = opts_.clock->now();
    switch (phase_) {
        case Phase::awaiting_clients:
            if (awaiting_deadline_) {
                if (now >= *awaiting_deadline_) {
                    abort("round " + std::to_string(state_.round) + " timed out waiting for a quorum of " +
                          std::to_string(cfg_.min_clients()) + " sites");
                }
                return;
            }
            if (now >= created_at_ + cfg_.startup_timeout_seconds) {
                if (!any_joined_) {
                    throw StartupError("no site joined within " + std::to_string(cfg_.startup_timeout_seconds) + " s");
                }
                maybe_start(true);
            }
            return;
        case Phase::training:
        case Phase::validating:
            if (cfg_.round_timeout_seconds && now >= state_.started_at + *cfg_.round_timeout_seconds) {
                const auto late = state_.pending;
                for (const auto& site : late) {
                    if (phase_ == Phase::aborted || !state_.pending.count(site)) break;
                    if (cfg_.on_client_loss == LossPolicy::wait) {
                        abort("round " + std::to_string(state_.round) + " timed out waiting for site '" + site + "'");
                        return;
                    }
                    lose(site, "timed out");
                }
            }
            return;
        default:
            return;
    }
}

std::set<std::string> Coordinator::participants() const {
    std::set<std::string> out;
    for (const auto& [site, _] : conn_of_) out.insert(site);
    if (cfg_.on_client_loss == LossPolicy::wait) {
        for (const auto& s : cfg_.expected_sites()) out.insert(s);
    }
    return out;
}

void Coordinator::maybe_start(bool startup_window_over) {
    if (phase_ != Phase::awaiting_clients) return;
    bool all_expected = true;
    for (const auto& s : cfg_.expected_sites()) all_expected = all_expected && conn_of_.count(s);
    const bool quorum = conn_of_.size() >= cfg_.min_clients();
    const bool partial_ok = cfg_.on_client_loss == LossPolicy::continue_without && quorum &&
                            (startup_window_over || awaiting_deadline_.has_value());
    if (all_expected || partial_ok) {
        awaiting_deadline_.reset();
        start_round(0.0);
    }
}

TaskAssignment Coordinator::current_task() const {
    TaskAssignment t;
    t.params = state_.global;
    t.algorithm = cfg_.algorithm;
    t.validate_only = phase_ == Phase::validating;
    return t;
}

void Coordinator::broadcast_task(const std::string& site, double delay) {
    send(site, Message{state_.round, site, current_task()}, delay);
}

void Coordinator::start_round(double delay) {
    phase_ = state_.round >= cfg_.rounds ? Phase::validating : Phase::training;
    state_.pending = participants();
    round_participants_ = state_.pending;
    state_.received.clear();
    state_.per_client_times.clear();
    state_.started_at = opts_.clock->now() + delay;
    updates_.clear();
    submissions_.clear();
    submitted_at_.clear();
    for (const auto& site : state_.pending) broadcast_task(site, delay);
}

double Coordinator::round_span() const {
    double last = state_.started_at;
    for (const auto& [site, t] : submitted_at_) last = std::max(last, t);
    // Never shorter than the slowest site's own work, which the clock
    // difference can undercut by a rounding step.
    double own = 0.0;
    for (const auto& [site, sub] : submissions_) own = std::max(own, sub.train_seconds + sub.validate_seconds);
    return std::max(last - state_.started_at, own);
}

void Coordinator::finish_round() {
    const auto agg_start = std::chrono::steady_clock::now();

    std::vector<ModelUpdate> ordered;
    for (const auto& s : cfg_.sites) {
        if (auto it = updates_.find(s.name); it != updates_.end()) ordered.push_back(it->second);
    }
    if (ordered.empty()) {
        abort("round " + std::to_string(state_.round) + " ended with no updates");
        return;
    }
    state_.global = federated_average(ordered, cfg_.algorithm.weighting);

    RoundRecord rec;
    rec.round = state_.round;
    rec.span_seconds = round_span();
    std::map<std::string, EvalScore> evals;
    for (const auto& site : round_participants_) {
        ClientRoundStats stats;
        if (auto it = submissions_.find(site); it != submissions_.end()) {
            stats.submitted = true;
            stats.train_seconds = it->second.train_seconds;
            stats.validate_seconds = it->second.validate_seconds;
            stats.waiting_seconds = std::max(0.0, rec.span_seconds - stats.train_seconds - stats.validate_seconds);
            if (it->second.global_eval) evals[site] = *it->second.global_eval;
        }
        rec.per_client[site] = stats;
    }
    if (!evals.empty()) rec.global_eval = std::move(evals);
    auto elapsed = [&] {
        return opts_.fixed_aggregation_seconds
                   ? *opts_.fixed_aggregation_seconds
                   : std::chrono::duration<double>(std::chrono::steady_clock::now() - agg_start).count();
    };
    rec.aggregation_seconds = elapsed();
    records_.push_back(rec);

    if (opts_.checkpoints) {
        opts_.checkpoints->save(Checkpoint{state_.round, state_.global, hash_, records_});
    }
    const double agg_seconds = elapsed();
    records_.back().aggregation_seconds = agg_seconds;
    if (opts_.on_aggregated) opts_.on_aggregated(state_.round, state_.global);

    ++state_.round;
    const double delay = opts_.fixed_aggregation_seconds ? agg_seconds : 0.0;
    if (cfg_.on_client_loss == LossPolicy::continue_without && conn_of_.size() < cfg_.min_clients()) {
        phase_ = Phase::awaiting_clients;
        if (cfg_.round_timeout_seconds) awaiting_deadline_ = opts_.clock->now() + *cfg_.round_timeout_seconds;
        else awaiting_deadline_ = std::numeric_limits<double>::infinity();
        return;
    }
    start_round(delay);
}

void Coordinator::finish_validation() {
    RoundRecord rec;
    rec.round = state_.round;
    rec.validation_only = true;
    rec.span_seconds = round_span();
    std::map<std::string, EvalScore> evals;
    for (const auto& [site, sub] : submissions_) {
        ClientRoundStats stats;
        stats.submitted = true;
        stats.validate_seconds = sub.validate_seconds;
        stats.waiting_seconds = std::max(0.0, rec.span_seconds - stats.validate_seconds);
        rec.per_client[site] = stats;
        if (sub.global_eval) evals[site] = *sub.global_eval;
    }
    if (!evals.empty()) rec.global_eval = evals;
    records_.push_back(std::move(rec));
    final_scores_ = std::move(evals);
    phase_ = Phase::done;
    for (const auto& [site, conn] : conn_of_) send_conn(conn, Message{state_.round, site, ExperimentDone{}});
}

ExperimentReport Coordinator::report() const {
    ExperimentReport r;
    if (!records_.empty()) r = summarize(records_, final_scores_);
    r.name = cfg_.name;
    r.config_json = federation_to_json(cfg_);
    r.status = phase_ == Phase::done      ? RunStatus::completed
               : phase_ == Phase::aborted ? RunStatus::aborted
                                          : RunStatus::hung;
    r.diagnosis = diagnosis_;
    if (!records_.empty()) r.final_global.assign(state_.global.values().begin(), state_.global.values().end());
    return r;
}

}  // namespace fedrun
