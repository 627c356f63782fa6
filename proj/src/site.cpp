#include "fedrun/site.hpp"

#include "fedrun/errors.hpp"

namespace fedrun {

SiteRuntime::SiteRuntime(const FederationConfig& cfg, const std::string& site, TimingModel timing)
    : cfg_(cfg), site_(site), timing_(timing) {
    const auto index = cfg_.site_index(site_);
    const auto het = cfg_.heterogeneity_for(site_);
    train_ = generate_site_data(het, cfg_.trainer.trainer, index, cfg_.data_seed, Split::train);
    validation_ = generate_site_data(het, cfg_.trainer.trainer, index, cfg_.data_seed, Split::validation);
    metric_ = trainer_for(cfg_.trainer.trainer).metric();
    if (cfg_.algorithm.kind == AlgorithmKind::ditto) personal_ = initial_params(cfg_.trainer, cfg_.heterogeneity);
}

Message SiteRuntime::join_message() const { return Message{0, site_, JoinRequest{}}; }

void SiteRuntime::restart() { cached_.reset(); }

SiteReaction SiteRuntime::on_message(const Message& msg) {
    SiteReaction r;
    switch (msg.kind()) {
        case MessageKind::join_ack: {
            const auto& ack = std::get<JoinAck>(msg.body);
            if (!ack.accepted) throw ConfigError("join rejected for site '" + site_ + "': " + ack.reason);
            return r;
        }
        case MessageKind::task_assignment:
            return handle_task(msg);
        case MessageKind::experiment_done:
            r.done = true;
            return r;
        case MessageKind::abort:
            r.aborted = true;
            r.abort_reason = std::get<Abort>(msg.body).reason;
            return r;
        default:
            return r;
    }
}

SiteReaction SiteRuntime::handle_task(const Message& msg) {
    SiteReaction r;
    const auto& task = std::get<TaskAssignment>(msg.body);
    // A resent task for a round already completed gets the same submission
    // back; retraining would step the personal track twice.
    if (cached_ && cached_->round == msg.round) {
        r.replies.push_back(*cached_);
        return r;
    }
    cached_.reset();

    EvalScore eval;
    const double validate_seconds = measure_train_time(timing_, timing_.validate_base_seconds,
                                                       [&] { eval = evaluate(task.params, validation_, metric_); });

    ModelUpdate update;
    double train_seconds = 0.0;
    if (task.validate_only) {
        update.params = task.params;
    } else {
        const double base = timing_.train_base_seconds.value_or(work_estimate_seconds(train_, cfg_.trainer));
        train_seconds = measure_train_time(timing_, base, [&] {
            update = local_train(task.params, train_, cfg_.trainer, task.algorithm, task.params);
            if (task.algorithm.kind == AlgorithmKind::ditto) {
                if (!personal_) personal_ = initial_params(cfg_.trainer, cfg_.heterogeneity);
                personal_ = ditto_personal_train(*personal_, train_, cfg_.trainer, task.algorithm, task.params);
            }
        });
        ++trained_rounds_;
    }
    update.client_id = site_;
    update.round = msg.round;
    update.sample_count = train_.rows;
    update.train_seconds = train_seconds;

    cached_ = make_submission(update, validate_seconds, eval);
    r.replies.push_back(*cached_);
    r.busy_seconds = train_seconds + validate_seconds;
    return r;
}

}  // namespace fedrun
