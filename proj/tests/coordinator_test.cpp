#include <gtest/gtest.h>

#include "fedrun/coordinator.hpp"
#include "fedrun/errors.hpp"
#include "fedrun/site.hpp"

using namespace fedrun;

namespace {

FederationConfig three_sites(LossPolicy policy = LossPolicy::wait, std::uint64_t rounds = 2) {
    FederationConfig c;
    c.name = "t";
    c.sites = {{"a", true, {}}, {"b", true, {}}, {"c", true, {}}};
    c.rounds = rounds;
    c.on_client_loss = policy;
    if (policy == LossPolicy::continue_without) c.min_clients_per_round = 2;
    c.startup_timeout_seconds = 10;
    return c;
}

struct Harness {
    explicit Harness(FederationConfig c) : cfg(std::move(c)) {
        CoordinatorOptions o;
        o.clock = &clock;
        o.checkpoints = &store;
        o.fixed_aggregation_seconds = 0.0;
        coord = std::make_unique<Coordinator>(cfg, std::move(o));
    }

    void join(ConnId conn, const std::string& site) {
        coord->on_connect(conn);
        coord->on_message(conn, Message{0, site, JoinRequest{}});
    }

    std::vector<Outgoing> tasks() {
        std::vector<Outgoing> out;
        for (auto& o : coord->take_outbox()) {
            if (o.msg.kind() == MessageKind::task_assignment) out.push_back(std::move(o));
        }
        return out;
    }

    void submit(ConnId conn, const std::string& site, std::uint64_t round, ParameterVector p) {
        UpdateSubmission s;
        s.params = std::move(p);
        s.sample_count = 10;
        coord->on_message(conn, Message{round, site, s});
    }

    FederationConfig cfg;
    VirtualClock clock;
    MemoryCheckpointStore store;
    std::unique_ptr<Coordinator> coord;
};

}  // namespace

TEST(HandleClientLoss, Examples) {
    RoundState st;
    st.pending = {"a", "b", "c"};
    EXPECT_EQ(handle_client_loss(st, "a", three_sites()), LossDecision::wait);
    EXPECT_EQ(handle_client_loss(st, "a", three_sites(LossPolicy::continue_without)), LossDecision::drop_for_round);
    auto two = three_sites(LossPolicy::continue_without);
    two.sites.pop_back();
    st.pending = {"a", "b"};
    EXPECT_EQ(handle_client_loss(st, "a", two), LossDecision::abort);
}

TEST(Coordinator, StartsWhenAllExpectedJoin) {
    Harness h(three_sites());
    h.join(1, "a");
    h.join(2, "b");
    EXPECT_EQ(h.coord->phase(), Coordinator::Phase::awaiting_clients);
    EXPECT_TRUE(h.tasks().empty());
    h.join(3, "c");
    EXPECT_EQ(h.coord->phase(), Coordinator::Phase::training);
    EXPECT_EQ(h.tasks().size(), 3u);
    const auto& st = h.coord->round_state();
    EXPECT_TRUE(st.received.empty());
    EXPECT_EQ(st.pending.size(), 3u);
}

TEST(Coordinator, StaleAndDuplicateSubmissionsAreDiscarded) {
    Harness h(three_sites());
    for (ConnId i = 1; i <= 3; ++i) h.join(i, std::string(1, char('a' + i - 1)));
    h.tasks();
    h.submit(1, "a", 5, ParameterVector::zeros(3));  // wrong round
    EXPECT_EQ(h.coord->stale_submissions(), 1u);
    h.submit(1, "a", 0, ParameterVector({3, 3, 3}));
    h.submit(1, "a", 0, ParameterVector({100, 100, 100}));  // duplicate
    EXPECT_EQ(h.coord->stale_submissions(), 2u);
    h.submit(2, "b", 0, ParameterVector({6, 6, 6}));
    h.submit(3, "c", 0, ParameterVector({9, 9, 9}));
    EXPECT_EQ(h.coord->global(), ParameterVector({6, 6, 6}));
    EXPECT_EQ(h.coord->round_state().round, 1u);
}

TEST(Coordinator, SubmissionUnderAnotherNameClosesConnection) {
    Harness h(three_sites());
    for (ConnId i = 1; i <= 3; ++i) h.join(i, std::string(1, char('a' + i - 1)));
    h.submit(1, "b", 0, ParameterVector::zeros(3));
    EXPECT_EQ(h.coord->take_closes(), std::vector<ConnId>{1});
}

TEST(Coordinator, UnknownSiteIsRejected) {
    Harness h(three_sites());
    h.join(9, "zurich");
    const auto out = h.coord->take_outbox();
    ASSERT_EQ(out.size(), 1u);
    const auto& ack = std::get<JoinAck>(out[0].msg.body);
    EXPECT_FALSE(ack.accepted);
    EXPECT_EQ(h.coord->take_closes(), std::vector<ConnId>{9});
}

TEST(Coordinator, RejoiningParticipantGetsTaskAgain) {
    Harness h(three_sites());
    for (ConnId i = 1; i <= 3; ++i) h.join(i, std::string(1, char('a' + i - 1)));
    h.tasks();
    h.coord->on_disconnect(2);
    EXPECT_EQ(h.coord->phase(), Coordinator::Phase::training);
    h.join(7, "b");
    const auto t = h.tasks();
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(t[0].conn, 7u);
    EXPECT_EQ(t[0].msg.round, 0u);
}

TEST(Coordinator, NewcomerWaitsForNextRound) {
    auto cfg = three_sites();
    cfg.sites[2].expected = false;
    Harness h(cfg);
    h.join(1, "a");
    h.join(2, "b");
    EXPECT_EQ(h.tasks().size(), 2u);
    h.join(3, "c");
    EXPECT_TRUE(h.tasks().empty());
    h.submit(1, "a", 0, ParameterVector::zeros(3));
    h.submit(2, "b", 0, ParameterVector::zeros(3));
    const auto t = h.tasks();
    EXPECT_EQ(t.size(), 3u);
    for (const auto& o : t) EXPECT_EQ(o.msg.round, 1u);
}

TEST(Coordinator, ContinueWithoutDropsLostSite) {
    Harness h(three_sites(LossPolicy::continue_without));
    for (ConnId i = 1; i <= 3; ++i) h.join(i, std::string(1, char('a' + i - 1)));
    h.tasks();
    h.submit(1, "a", 0, ParameterVector({2, 2, 2}));
    h.coord->on_disconnect(3);
    h.submit(2, "b", 0, ParameterVector({4, 4, 4}));
    EXPECT_EQ(h.coord->global(), ParameterVector({3, 3, 3}));
    const auto rec = h.coord->report().rounds.at(0);
    EXPECT_FALSE(rec.per_client.at("c").submitted);
    EXPECT_TRUE(rec.per_client.at("a").submitted);
}

TEST(Coordinator, ContinueWithoutAbortsBelowQuorum) {
    Harness h(three_sites(LossPolicy::continue_without));
    for (ConnId i = 1; i <= 3; ++i) h.join(i, std::string(1, char('a' + i - 1)));
    h.coord->on_disconnect(2);
    h.coord->on_disconnect(3);
    EXPECT_EQ(h.coord->phase(), Coordinator::Phase::aborted);
    EXPECT_NE(h.coord->diagnosis().find("quorum"), std::string::npos);
}

TEST(Coordinator, WaitPolicyRoundTimeoutAborts) {
    auto cfg = three_sites();
    cfg.round_timeout_seconds = 30;
    Harness h(cfg);
    for (ConnId i = 1; i <= 3; ++i) h.join(i, std::string(1, char('a' + i - 1)));
    EXPECT_EQ(*h.coord->next_deadline(), 30.0);
    h.clock.advance_to(31);
    h.coord->on_tick();
    EXPECT_EQ(h.coord->phase(), Coordinator::Phase::aborted);
}

TEST(Coordinator, StartupTimeoutWithoutJoins) {
    Harness h(three_sites());
    h.clock.advance_to(11);
    EXPECT_THROW(h.coord->on_tick(), StartupError);
}

TEST(Coordinator, PartialStartAfterStartupWindow) {
    Harness h(three_sites(LossPolicy::continue_without));
    h.join(1, "a");
    h.join(2, "b");
    EXPECT_EQ(h.coord->phase(), Coordinator::Phase::awaiting_clients);
    h.clock.advance_to(11);
    h.coord->on_tick();
    EXPECT_EQ(h.coord->phase(), Coordinator::Phase::training);
    EXPECT_EQ(h.tasks().size(), 2u);
}

TEST(Coordinator, FinalValidationPassThenDone) {
    Harness h(three_sites(LossPolicy::wait, 1));
    for (ConnId i = 1; i <= 3; ++i) h.join(i, std::string(1, char('a' + i - 1)));
    h.tasks();
    for (ConnId i = 1; i <= 3; ++i) h.submit(i, std::string(1, char('a' + i - 1)), 0, ParameterVector::zeros(3));
    EXPECT_EQ(h.coord->phase(), Coordinator::Phase::validating);
    const auto t = h.tasks();
    ASSERT_EQ(t.size(), 3u);
    EXPECT_TRUE(std::get<TaskAssignment>(t[0].msg.body).validate_only);
    for (ConnId i = 1; i <= 3; ++i) {
        UpdateSubmission s;
        s.global_eval = EvalScore{0.5, 0.0, Metric::mse_loss};
        h.coord->on_message(i, Message{1, std::string(1, char('a' + i - 1)), s});
    }
    EXPECT_EQ(h.coord->phase(), Coordinator::Phase::done);
    const auto r = h.coord->report();
    EXPECT_EQ(r.status, RunStatus::completed);
    EXPECT_EQ(r.final_scores.size(), 3u);
    EXPECT_EQ(r.rounds.size(), 2u);
    EXPECT_TRUE(r.rounds.back().validation_only);
}

TEST(Coordinator, ResumeContinuesFromCheckpoint) {
    Harness h(three_sites(LossPolicy::wait, 3));
    for (ConnId i = 1; i <= 3; ++i) h.join(i, std::string(1, char('a' + i - 1)));
    for (ConnId i = 1; i <= 3; ++i) h.submit(i, std::string(1, char('a' + i - 1)), 0, ParameterVector({1, 2, 3}));
    ASSERT_FALSE(h.store.empty());
    const auto cp = h.store.load(config_hash(h.cfg));
    EXPECT_EQ(cp.round, 0u);

    CoordinatorOptions o;
    o.clock = &h.clock;
    Coordinator resumed(h.cfg, std::move(o), cp);
    EXPECT_EQ(resumed.round_state().round, 1u);
    EXPECT_EQ(resumed.global(), ParameterVector({1, 2, 3}));

    auto other = h.cfg;
    other.trainer.lr = 0.5;
    CoordinatorOptions o2;
    o2.clock = &h.clock;
    EXPECT_THROW(Coordinator(other, std::move(o2), cp), CheckpointError);
}

TEST(SiteRuntime, ResendsCachedUpdateForSameRound) {
    auto cfg = three_sites();
    cfg.algorithm.kind = AlgorithmKind::ditto;
    cfg.algorithm.ditto_lambda = 0.1;
    TimingModel timing;
    timing.mode = TimingMode::simulated;
    timing.train_base_seconds = 4.0;
    timing.compute_multiplier = 2.5;
    SiteRuntime site(cfg, "b", timing);
    const Message task{3, "b", TaskAssignment{ParameterVector({0.1, 0.2, 0.3}), cfg.algorithm, false}};
    const auto first = site.on_message(task);
    ASSERT_EQ(first.replies.size(), 1u);
    EXPECT_EQ(first.busy_seconds, 10.0);
    const auto personal = *site.personal();
    const auto again = site.on_message(task);
    EXPECT_EQ(again.replies, first.replies);
    EXPECT_EQ(*site.personal(), personal);
    EXPECT_EQ(site.trained_rounds(), 1u);
    site.restart();
    site.on_message(task);
    EXPECT_EQ(site.trained_rounds(), 2u);
}

TEST(SiteRuntime, RejectedJoinIsFatal) {
    SiteRuntime site(three_sites(), "a", TimingModel{});
    EXPECT_THROW(site.on_message(Message{0, "a", JoinAck{false, 0, "unknown"}}), ConfigError);
}

TEST(SiteRuntime, SimulatedTimesScaleWithMultiplier) {
    const Message task{0, "a", TaskAssignment{ParameterVector({0, 0, 0}), AlgorithmConfig{}, false}};
    TimingModel t1;
    t1.mode = TimingMode::simulated;
    auto t2 = t1;
    t2.compute_multiplier = 2.0;
    SiteRuntime s1(three_sites(), "a", t1), s2(three_sites(), "a", t2);
    const auto a = std::get<UpdateSubmission>(s1.on_message(task).replies[0].body).train_seconds;
    const auto b = std::get<UpdateSubmission>(s2.on_message(task).replies[0].body).train_seconds;
    EXPECT_GT(a, 0.0);
    EXPECT_EQ(b, 2.0 * a);
}

TEST(SiteRuntime, RealTimingIsPositive) {
    SiteRuntime site(three_sites(), "a", TimingModel{});
    const Message task{0, "a", TaskAssignment{ParameterVector({0, 0, 0}), AlgorithmConfig{}, false}};
    EXPECT_GT(std::get<UpdateSubmission>(site.on_message(task).replies[0].body).train_seconds, 0.0);
}
