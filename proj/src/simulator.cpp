#include "fedrun/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <queue>
#include <set>
#include <sstream>
#include <variant>

#include "fedrun/coordinator.hpp"
#include "fedrun/errors.hpp"
#include "fedrun/site.hpp"
#include "fedrun/training.hpp"

namespace fedrun {

namespace {

struct ConnectAttempt {
    std::string site;
};
struct ToServer {
    ConnId conn;
    Message msg;
};
struct ToSite {
    ConnId conn;
    Message msg;
};
struct CloseConn {
    ConnId conn;
};
struct SiteLinkDrop {
    std::string site;
    ConnId conn;
    double downtime;
};
struct SiteRestart {
    std::string site;
};
struct ServerRestart {};

using Payload = std::variant<ConnectAttempt, ToServer, ToSite, CloseConn, SiteLinkDrop, SiteRestart, ServerRestart>;

struct Event {
    double time;
    std::uint64_t seq;
    Payload payload;
};

struct Later {
    bool operator()(const Event& a, const Event& b) const {
        return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
};

struct SimSite {
    SimSite(std::unique_ptr<SiteRuntime> rt, const BackoffConfig& b) : runtime(std::move(rt)), backoff(b) {}

    std::unique_ptr<SiteRuntime> runtime;
    Backoff backoff;
    bool up = true;
    bool finished = false;
    bool connect_scheduled = false;
    std::optional<ConnId> conn;
    double link_down_until = 0.0;
};

class Simulation {
public:
    explicit Simulation(const SimScenario& sc) : sc_(sc), cfg_(sc.federation) {
        for (const auto& s : cfg_.sites) {
            TimingModel timing;
            timing.mode = TimingMode::simulated;
            timing.compute_multiplier = sc_.multiplier(s.name);
            timing.train_base_seconds = sc_.base_round_cost_seconds;
            timing.validate_base_seconds = sc_.validation_cost_seconds;
            sites_.try_emplace(s.name, std::make_unique<SiteRuntime>(cfg_, s.name, timing),
                               cfg_.client.reconnect_backoff);
        }
        fired_.assign(sc_.faults.size(), false);
        horizon_ = sc_.stall_horizon_seconds > 0.0 ? sc_.stall_horizon_seconds : automatic_horizon();
    }

    SimulationReport run() {
        start_server(std::nullopt);
        for (const auto& s : cfg_.sites) schedule_connect(s.name, 0.0);

        while (!coordinator_ || !coordinator_->finished()) {
            if (aborted_by_error_) break;
            maybe_tick();
            if (coordinator_->finished() || aborted_by_error_) break;
            if (queue_.empty()) {
                hang("no further events can occur");
                break;
            }
            Event ev = queue_.top();
            queue_.pop();
            if (std::isinf(ev.time)) {
                hang("no further events can occur");
                break;
            }
            if (ev.time - last_progress_ > horizon_) {
                hang("nothing left to do within the " + fmt(horizon_) + " s stall horizon, next event at t=" + fmt(ev.time) + " s");
                break;
            }
            clock_.advance_to(ev.time);
            std::visit([&](auto& p) { handle(p); }, ev.payload);
            note_progress();
        }
        return finish();
    }

private:
    static std::string fmt(double v) {
        std::ostringstream os;
        os << v;
        return os.str();
    }

    double automatic_horizon() const {
        double slowest = 0.0;
        for (const auto& s : cfg_.sites) slowest = std::max(slowest, sc_.multiplier(s.name));
        const double round = sc_.base_round_cost_seconds * slowest + sc_.validation_cost_seconds * slowest +
                             sc_.aggregation_cost_seconds;
        double downtime = 0.0;
        for (const auto& f : sc_.faults) downtime = std::max(downtime, f.downtime_seconds);
        return std::max(600.0, 10.0 * round + 2.0 * downtime + 4.0 * cfg_.client.reconnect_backoff.max_seconds +
                                   cfg_.startup_timeout_seconds + cfg_.round_timeout_seconds.value_or(0.0));
    }

    void push(double delay, Payload p) { queue_.push(Event{clock_.now() + delay, seq_++, std::move(p)}); }

    void schedule_connect(const std::string& site, double delay) {
        auto& s = sites_.at(site);
        if (s.connect_scheduled || !s.up || s.finished) return;
        s.connect_scheduled = true;
        push(delay, ConnectAttempt{site});
    }

    // Server lifecycle.

    void start_server(std::optional<Checkpoint> resume) {
        CoordinatorOptions opts;
        opts.clock = &clock_;
        opts.checkpoints = &store_;
        opts.fixed_aggregation_seconds = sc_.aggregation_cost_seconds;
        opts.on_aggregated = [this](std::uint64_t round, const ParameterVector& global) {
            if (history_.size() <= round) history_.resize(round + 1, global);
            history_[round] = global;
            for (std::size_t i = 0; i < sc_.faults.size(); ++i) {
                const auto& f = sc_.faults[i];
                if (!fired_[i] && f.target == FaultTarget::server && f.at_round == round) {
                    fired_[i] = true;
                    crash_ = &f;
                }
            }
        };
        coordinator_ = std::make_unique<Coordinator>(cfg_, std::move(opts), std::move(resume));
        server_up_ = true;
    }

    // Runs one coordinator call, then ships its output unless it crashed.
    template <typename Fn>
    void drive(Fn&& fn) {
        if (!server_up_) return;
        try {
            fn(*coordinator_);
        } catch (const StartupError& e) {
            diagnosis_ = e.what();
            aborted_by_error_ = true;
            return;
        }
        if (crash_) {
            const FaultEvent fault = *crash_;
            crash_ = nullptr;
            crash_server(fault);
            return;
        }
        flush();
    }

    void flush() {
        std::map<ConnId, double> last_delay;
        for (auto& out : coordinator_->take_outbox()) {
            last_delay[out.conn] = std::max(last_delay[out.conn], out.delay_seconds);
            push(out.delay_seconds, ToSite{out.conn, std::move(out.msg)});
        }
        for (ConnId c : coordinator_->take_closes()) push(last_delay[c], CloseConn{c});
    }

    void crash_server(const FaultEvent& fault) {
        coordinator_->take_outbox();
        coordinator_->take_closes();
        server_up_ = false;
        const auto conns = conn_site_;
        for (const auto& [conn, site] : conns) drop_conn(conn, false);
        if (!fault.permanent) push(fault.downtime_seconds, ServerRestart{});
    }

    void handle(ServerRestart&) {
        ++restarts_;
        start_server(store_.load(config_hash(cfg_)));
    }

    void maybe_tick() {
        if (!server_up_) return;
        const auto deadline = coordinator_->next_deadline();
        if (!deadline || !std::isfinite(*deadline) || *deadline <= last_tick_) return;
        if (!queue_.empty() && queue_.top().time < *deadline) return;
        last_tick_ = *deadline;
        clock_.advance_to(std::max(clock_.now(), *deadline));
        drive([](Coordinator& c) { c.on_tick(); });
        note_progress();
    }

    // Connections.

    void drop_conn(ConnId conn, bool notify_server) {
        auto it = conn_site_.find(conn);
        if (it == conn_site_.end()) return;
        const std::string site = it->second;
        conn_site_.erase(it);
        if (notify_server) drive([&](Coordinator& c) { c.on_disconnect(conn); });
        auto& s = sites_.at(site);
        if (s.conn == conn) {
            s.conn.reset();
            schedule_connect(site, std::max(s.backoff.next_delay(), s.link_down_until - clock_.now()));
        }
    }

    void handle(ConnectAttempt& ev) {
        auto& s = sites_.at(ev.site);
        s.connect_scheduled = false;
        if (!s.up || s.finished || s.conn) return;
        if (clock_.now() < s.link_down_until) {
            schedule_connect(ev.site, s.link_down_until - clock_.now());
            return;
        }
        if (!server_up_) {
            schedule_connect(ev.site, s.backoff.next_delay());
            return;
        }
        s.backoff.reset();
        const ConnId conn = next_conn_++;
        conn_site_[conn] = ev.site;
        s.conn = conn;
        drive([&](Coordinator& c) {
            c.on_connect(conn);
            c.on_message(conn, s.runtime->join_message());
        });
    }

    void handle(ToServer& ev) {
        if (!conn_site_.count(ev.conn)) return;
        drive([&](Coordinator& c) { c.on_message(ev.conn, ev.msg); });
    }

    void handle(CloseConn& ev) { drop_conn(ev.conn, false); }

    void handle(SiteLinkDrop& ev) {
        auto& s = sites_.at(ev.site);
        if (s.conn != ev.conn) return;
        s.link_down_until = clock_.now() + ev.downtime;
        drop_conn(ev.conn, true);
    }

    void handle(SiteRestart& ev) {
        auto& s = sites_.at(ev.site);
        s.up = true;
        s.runtime->restart();
        schedule_connect(ev.site, 0.0);
    }

    const FaultEvent* client_fault(const std::string& site, std::uint64_t round, FaultKind kind) {
        for (std::size_t i = 0; i < sc_.faults.size(); ++i) {
            const auto& f = sc_.faults[i];
            if (!fired_[i] && f.target == FaultTarget::client && f.client == site && f.kind == kind &&
                f.at_round == round) {
                fired_[i] = true;
                return &f;
            }
        }
        return nullptr;
    }

    void handle(ToSite& ev) {
        auto it = conn_site_.find(ev.conn);
        if (it == conn_site_.end()) return;
        const std::string site = it->second;
        auto& s = sites_.at(site);
        if (!s.up || s.conn != ev.conn) return;

        const bool training_task = ev.msg.kind() == MessageKind::task_assignment &&
                                   !std::get<TaskAssignment>(ev.msg.body).validate_only;
        if (training_task) {
            if (const auto* f = client_fault(site, ev.msg.round, FaultKind::crash)) {
                s.up = false;
                s.runtime->restart();
                drop_conn(ev.conn, true);
                if (!f->permanent) push(f->downtime_seconds, SiteRestart{site});
                return;
            }
        }

        SiteReaction r;
        try {
            r = s.runtime->on_message(ev.msg);
        } catch (const ConfigError& e) {
            diagnosis_ = e.what();
            aborted_by_error_ = true;
            return;
        }
        if (r.done || r.aborted) {
            s.finished = true;
            return;
        }
        if (training_task && !r.replies.empty()) {
            if (const auto* f = client_fault(site, ev.msg.round, FaultKind::disconnect)) {
                push(r.busy_seconds,
                     SiteLinkDrop{site, ev.conn, f->permanent ? std::numeric_limits<double>::infinity()
                                                              : f->downtime_seconds});
                return;
            }
        }
        for (auto& reply : r.replies) push(r.busy_seconds, ToServer{ev.conn, std::move(reply)});
    }

    // Progress and outcome.

    void note_progress() {
        if (!server_up_ || !coordinator_) return;
        const auto key = std::make_pair(coordinator_->round_state().round, static_cast<int>(coordinator_->phase()));
        if (key != progress_key_) {
            progress_key_ = key;
            last_progress_ = clock_.now();
        }
    }

    void hang(const std::string& why) {
        std::ostringstream os;
        os << why << "; last progress at t=" << last_progress_ << " s";
        if (!server_up_) {
            os << "; the aggregator is down";
        } else {
            const auto& st = coordinator_->round_state();
            os << "; aggregator " << to_string(coordinator_->phase()) << " in round " << st.round;
            if (!st.pending.empty()) {
                os << ", waiting on";
                for (const auto& p : st.pending) os << ' ' << p;
            }
            os << "; connected:";
            for (const auto& c : coordinator_->connected_sites()) os << ' ' << c;
        }
        std::vector<std::string> gone;
        for (const auto& [name, s] : sites_) {
            if (!s.up) gone.push_back(name);
        }
        if (!gone.empty()) {
            os << "; sites down:";
            for (const auto& g : gone) os << ' ' << g;
        }
        diagnosis_ = os.str();
        hung_ = true;
    }

    SimulationReport finish() {
        SimulationReport out;
        out.experiment = coordinator_->report();
        if (hung_) {
            out.experiment.status = RunStatus::hung;
            out.experiment.diagnosis = diagnosis_;
        } else if (aborted_by_error_) {
            out.experiment.status = RunStatus::aborted;
            out.experiment.diagnosis = diagnosis_;
        }
        out.global_history = history_;
        out.final_global = coordinator_->global();
        for (const auto& [name, s] : sites_) {
            if (s.runtime->personal()) out.personal.emplace(name, *s.runtime->personal());
        }
        out.virtual_seconds = clock_.now();
        out.stale_submissions = coordinator_->stale_submissions();
        out.server_restarts = restarts_;
        if (sc_.local_baselines) out.experiment.local_cross = local_baselines();
        return out;
    }

    CrossScores local_baselines() const {
        TrainerConfig solo = cfg_.trainer;
        solo.local_steps = cfg_.trainer.local_steps * cfg_.rounds;
        AlgorithmConfig plain;
        const auto start = initial_params(cfg_.trainer, cfg_.heterogeneity);
        const Metric metric = trainer_for(cfg_.trainer.trainer).metric();
        CrossScores cross;
        for (const auto& trained : cfg_.sites) {
            const auto model =
                local_train(start, sites_.at(trained.name).runtime->train_data(), solo, plain, start).params;
            for (const auto& val : cfg_.sites) {
                cross[trained.name][val.name] = evaluate(model, sites_.at(val.name).runtime->validation_data(), metric);
            }
        }
        return cross;
    }

    const SimScenario& sc_;
    const FederationConfig& cfg_;
    VirtualClock clock_;
    MemoryCheckpointStore store_;
    std::unique_ptr<Coordinator> coordinator_;
    bool server_up_ = false;
    const FaultEvent* crash_ = nullptr;
    std::uint64_t restarts_ = 0;

    std::map<std::string, SimSite> sites_;
    std::map<ConnId, std::string> conn_site_;
    ConnId next_conn_ = 1;

    std::priority_queue<Event, std::vector<Event>, Later> queue_;
    std::uint64_t seq_ = 0;
    std::vector<bool> fired_;
    std::vector<ParameterVector> history_;

    double horizon_ = 0.0;
    double last_progress_ = 0.0;
    double last_tick_ = -std::numeric_limits<double>::infinity();
    std::pair<std::uint64_t, int> progress_key_{std::numeric_limits<std::uint64_t>::max(), -1};
    bool hung_ = false;
    bool aborted_by_error_ = false;
    std::string diagnosis_;
};

}  // namespace

SimulationReport simulate(const SimScenario& scenario) {
    scenario.validate();
    return Simulation(scenario).run();
}

double speedup(const SimulationReport& baseline, const SimulationReport& candidate) {
    return speedup(baseline.experiment, candidate.experiment);
}

}  // namespace fedrun
