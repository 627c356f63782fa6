// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedrun/aggregation.hpp"
#include "fedrun/metrics.hpp"
#include "fedrun/params.hpp"
#include "fedrun/protocol.hpp"
#include "fedrun/simulator.hpp"
#include "fedrun/training.hpp"
#include "generators.hpp"
#include "loopback.hpp"

using namespace fedrun;

namespace {

// Pinned tolerances and budgets.
constexpr double kAverageTolerance = 1e-12;
constexpr double kCentralizedTolerance = 1e-9;
constexpr double kSpeedupTolerance = 0.01;
constexpr double kWaitingUlps = 4.0;
constexpr double kSignTestAlpha = 0.05;
constexpr int kSeeds = 20;

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            pass = false;
            detail << "[failed: " << what << "] ";
        }
    }
};

std::vector<std::string> site_names(const FederationConfig& f) {
    std::vector<std::string> out;
    for (const auto& s : f.sites) out.push_back(s.name);
    return out;
}

SimScenario three_sites(std::uint64_t rounds, std::uint64_t seed = 0) {
    SimScenario sc;
    auto& f = sc.federation;
    f.name = "acceptance";
    f.sites = {{"basel", true, {}}, {"freiburg", true, {}}, {"strasbourg", true, {}}};
    f.rounds = rounds;
    f.trainer.lr = 0.1;
    f.trainer.local_steps = 5;
    f.heterogeneity.base_optimum.assign(10, 0.0);
    for (std::size_t j = 0; j < 10; ++j) f.heterogeneity.base_optimum[j] = static_cast<double>(j % 3) - 1.0;
    f.heterogeneity.noise_std = 1.0;
    f.heterogeneity.shift_scale = 0.2;
    f.heterogeneity.samples_per_site = 15;
    f.heterogeneity.validation_samples = 400;
    f.data_seed = seed;
    for (const auto& s : f.sites) sc.site_multipliers[s.name] = 1.0;
    return sc;
}

ClientDataset train_split(const FederationConfig& f, const std::string& site) {
    return generate_site_data(f.heterogeneity_for(site), f.trainer.trainer, f.site_index(site), f.data_seed,
                              Split::train);
}

// One-sided sign test: P(X >= successes) for X ~ Binomial(n, 1/2).
double sign_test_p(int successes, int n) {
    double p = 0.0;
    for (int k = successes; k <= n; ++k) {
        double c = 1.0;
        for (int i = 0; i < k; ++i) c = c * (n - i) / (i + 1);
        p += c;
    }
    return p / std::pow(2.0, n);
}

Outcome aggregation_oracle() {
    Outcome o;
    std::mt19937_64 rng(20240);
    std::uniform_real_distribution<double> val(-10.0, 10.0);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t dim = 1 + rng() % 64, clients = 1 + rng() % 10;
        std::vector<ModelUpdate> us;
        for (std::size_t k = 0; k < clients; ++k) {
            ModelUpdate u;
            std::vector<double> w(dim);
            for (auto& x : w) x = val(rng);
            u.params = ParameterVector(std::move(w));
            u.sample_count = 1 + rng() % 1000;
            us.push_back(std::move(u));
        }
        const auto got = federated_average(us, Weighting::sample_count);
        for (std::size_t i = 0; i < dim; ++i) {
            long double num = 0.0L, den = 0.0L;
            for (const auto& u : us) {
                num += static_cast<long double>(u.sample_count) * u.params[i];
                den += static_cast<long double>(u.sample_count);
            }
            worst = std::max(worst, std::abs(got[i] - static_cast<double>(num / den)));
        }
    }
    o.require(worst <= kAverageTolerance, "per-coordinate error within tolerance");
    o.detail << "1000 sets, max error " << worst;
    return o;
}

Outcome reductions() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    auto avg = three_sites(50);
    auto prox = avg;
    prox.federation.algorithm.kind = AlgorithmKind::fedprox;
    prox.federation.algorithm.prox_mu = 0.0;
    const auto a = simulate(avg), b = simulate(prox);
    o.require(a.global_history.size() == 50 && a.global_history == b.global_history,
              "FedProx mu=0 history equals FedAvg");
    const double prox_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const auto t1 = std::chrono::steady_clock::now();
    auto ditto = three_sites(50);
    ditto.federation.algorithm.kind = AlgorithmKind::ditto;
    ditto.federation.algorithm.ditto_lambda = 0.0;
    const auto d = simulate(ditto);
    const auto& f = ditto.federation;
    TrainerConfig solo = f.trainer;
    solo.local_steps = f.trainer.local_steps * f.rounds;
    const auto start = initial_params(f.trainer, f.heterogeneity);
    int identical = 0;
    for (const auto& site : site_names(f)) {
        const auto local = local_train(start, train_split(f, site), solo, AlgorithmConfig{}, start).params;
        identical += d.personal.count(site) && d.personal.at(site) == local;
    }
    o.require(identical == 3, "Ditto lambda=0 personal models equal local training");
    const double ditto_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
    o.require(prox_s < 30.0 && ditto_s < 30.0, "each run under 30 s");
    o.detail << "3 sites x 50 rounds; prox history bit-identical, " << identical << "/3 personal tracks bit-identical ("
             << prox_s << " s, " << ditto_s << " s)";
    return o;
}

Outcome centralized_gd() {
    Outcome o;
    auto sc = three_sites(50);
    sc.federation.trainer.local_steps = 1;
    const auto r = simulate(sc);
    const auto& f = sc.federation;
    std::vector<ClientDataset> data;
    for (const auto& site : site_names(f)) data.push_back(train_split(f, site));
    const auto start = initial_params(f.trainer, f.heterogeneity);
    std::vector<double> w(start.values().begin(), start.values().end());
    double worst = 0.0;
    for (std::uint64_t round = 0; round < f.rounds; ++round) {
        // Equal counts: the pooled gradient is the plain mean of site gradients.
        std::vector<double> g(w.size(), 0.0);
        for (const auto& d : data) {
            for (std::size_t i = 0; i < d.rows; ++i) {
                double res = -d.targets[i];
                for (std::size_t j = 0; j < w.size(); ++j) res += d.features[i * d.feature_dim + j] * w[j];
                for (std::size_t j = 0; j < w.size(); ++j) {
                    g[j] += res * d.features[i * d.feature_dim + j] / static_cast<double>(d.rows * data.size());
                }
            }
        }
        for (std::size_t j = 0; j < w.size(); ++j) {
            w[j] -= f.trainer.lr * g[j];
            worst = std::max(worst, std::abs(r.global_history.at(round)[j] - w[j]));
        }
    }
    o.require(worst <= kCentralizedTolerance, "FedAvg tracks centralized GD");
    o.detail << "50 rounds, max deviation " << worst;
    return o;
}

Outcome global_vs_local() {
    Outcome o;
    int per_site_ok = 0, pooled_ok = 0;
    for (int seed = 0; seed < kSeeds; ++seed) {
        auto sc = three_sites(50, seed);
        sc.local_baselines = true;
        const auto r = simulate(sc);
        const auto& global = r.experiment.final_scores;
        const auto& local = *r.experiment.local_cross;
        // Validation splits are the same size everywhere, so the pooled loss
        // is the mean of the per-site means.
        auto pooled = [](const ScoreMap& m) {
            double s = 0.0;
            for (const auto& [_, v] : m) s += v.mean;
            return s / static_cast<double>(m.size());
        };
        bool all_sites = true, all_pooled = true;
        for (const auto& [trained, row] : local) {
            for (const auto& [validated, score] : row) all_sites = all_sites && global.at(validated).mean < score.mean;
            all_pooled = all_pooled && pooled(global) <= pooled(row);
        }
        per_site_ok += all_sites;
        pooled_ok += all_pooled;
    }
    o.require(pooled_ok == kSeeds, "pooled global loss <= every local model on every seed");
    o.require(per_site_ok == kSeeds, "global best on every validation site on every seed");
    o.detail << "shift 0.2, " << kSeeds << " seeds: pooled " << pooled_ok << "/" << kSeeds << ", per-site sign pattern "
             << per_site_ok << "/" << kSeeds;
    return o;
}

Outcome data_quantity() {
    Outcome o;
    int improved = 0, local_worse_low = 0, local_worse_high = 0;
    for (int seed = 0; seed < kSeeds; ++seed) {
        double global_loss[2], local_loss[2];
        const double fractions[2] = {0.2, 0.5};
        for (int k = 0; k < 2; ++k) {
            auto sc = three_sites(50, seed);
            sc.local_baselines = true;
            sc.federation.sites[0].data_fraction = fractions[k];
            sc.federation.heterogeneity.samples_per_site = 60;
            sc.federation.heterogeneity.shift_scale = 0.3;
            const auto r = simulate(sc);
            global_loss[k] = r.experiment.final_scores.at("basel").mean;
            local_loss[k] = r.experiment.local_cross->at("basel").at("basel").mean;
        }
        improved += global_loss[1] <= global_loss[0];
        local_worse_low += local_loss[0] > global_loss[0];
        local_worse_high += local_loss[1] > global_loss[1];
    }
    const double p_trend = sign_test_p(improved, kSeeds);
    const double p_low = sign_test_p(local_worse_low, kSeeds);
    const double p_high = sign_test_p(local_worse_high, kSeeds);
    o.require(p_trend < kSignTestAlpha, "more data does not worsen the site's global loss");
    o.require(p_low < kSignTestAlpha && p_high < kSignTestAlpha, "local-only worse than global at both fractions");
    o.detail << "fraction 0.2 -> 0.5: not worse " << improved << "/" << kSeeds << " (p=" << p_trend
             << "); local worse " << local_worse_low << "/" << kSeeds << " (p=" << p_low << ") and "
             << local_worse_high << "/" << kSeeds << " (p=" << p_high << ")";
    return o;
}

SimScenario hardware(const std::map<std::string, double>& multipliers, std::uint64_t rounds) {
    SimScenario sc;
    auto& f = sc.federation;
    f.name = "hardware";
    f.sites = {{"strasbourg", true, {}}, {"basel", true, {}}, {"mock", true, {}}};
    f.rounds = rounds;
    f.heterogeneity.samples_per_site = 12;
    sc.site_multipliers = multipliers;
    sc.base_round_cost_seconds = 3600.0;
    return sc;
}

Outcome timing() {
    Outcome o;
    // Per-site hours per round on each device class.
    const std::map<std::string, std::pair<double, double>> device{
        {"strasbourg", {0.58, 0.41}}, {"basel", {0.34, 0.27}}, {"mock", {0.48, 0.27}}};
    auto row = [&](const std::set<std::string>& gpu) {
        std::map<std::string, double> m;
        for (const auto& [site, speeds] : device) m[site] = gpu.count(site) ? speeds.second : speeds.first;
        return simulate(hardware(m, 20));
    };
    const auto cpu = row({}), one = row({"strasbourg"}), all = row({"strasbourg", "basel", "mock"});
    const double t1 = cpu.experiment.total_seconds(), t2 = one.experiment.total_seconds(),
                 t3 = all.experiment.total_seconds();
    o.require(t1 > t2 && t2 > t3, "all-CPU > one-GPU > all-GPU");

    const auto e1 = simulate(hardware({{"strasbourg", 0.6418}, {"basel", 0.34}, {"mock", 0.48}}, 100));
    const auto e2 = simulate(hardware({{"strasbourg", 0.41}, {"basel", 0.34}, {"mock", 0.5033}}, 100));
    const auto e3 = simulate(hardware({{"strasbourg", 0.4355}, {"basel", 0.27}, {"mock", 0.27}}, 100));
    const double s31 = speedup(e1, e3), s21 = speedup(e1, e2);
    o.require(std::abs(s31 - 32.14) <= kSpeedupTolerance, "fitted speedup 32.14%");

    double worst_ulps = 0.0;
    std::size_t rounds = 0;
    for (const auto* r : {&cpu, &one, &all, &e1, &e2, &e3}) {
        for (const auto& rec : r->experiment.rounds) {
            if (rec.validation_only) continue;
            ++rounds;
            const double ulp = std::nextafter(rec.span_seconds, INFINITY) - rec.span_seconds;
            for (const auto& [_, c] : rec.per_client) {
                const double total = c.waiting_seconds + c.train_seconds + c.validate_seconds;
                worst_ulps = std::max(worst_ulps, std::abs(total - rec.span_seconds) / ulp);
            }
        }
    }
    o.require(worst_ulps <= kWaitingUlps, "waiting + own time equals the round span");
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "totals %.2f > %.2f > %.2f hr; fitted %.2f/%.2f/%.2f hr, speedup %s (exp 2: %s); "
                  "waiting identity over %zu rounds, worst %.0f ulp",
                  t1 / 3600, t2 / 3600, t3 / 3600, e1.experiment.total_seconds() / 3600,
                  e2.experiment.total_seconds() / 3600, e3.experiment.total_seconds() / 3600,
                  format_percent(s31).c_str(), format_percent(s21).c_str(), rounds, worst_ulps);
    o.detail << buf;
    return o;
}

FaultEvent fault(FaultTarget target, FaultKind kind, std::uint64_t round, const std::string& site, double down) {
    FaultEvent e;
    e.target = target;
    e.kind = kind;
    e.at_round = round;
    e.client = site;
    e.downtime_seconds = down;
    return e;
}

Outcome fault_tolerance() {
    Outcome o;
    auto base = three_sites(8);
    base.site_multipliers = {{"basel", 1.0}, {"freiburg", 2.0}, {"strasbourg", 1.5}};
    base.base_round_cost_seconds = 60.0;
    const auto clean = simulate(base);
    std::mt19937_64 rng(77);
    int identical = 0, faults = 0;
    const int trials = 40;
    for (int t = 0; t < trials; ++t) {
        auto sc = base;
        const int n = 1 + rng() % 5;
        for (int i = 0; i < n; ++i) {
            const std::uint64_t round = rng() % 8;
            const std::string site = site_names(sc.federation)[rng() % 3];
            const double down = 1.0 + rng() % 600;
            switch (rng() % 3) {
                case 0: sc.faults.push_back(fault(FaultTarget::server, FaultKind::crash, round, "", down)); break;
                case 1: sc.faults.push_back(fault(FaultTarget::client, FaultKind::crash, round, site, down)); break;
                default: sc.faults.push_back(fault(FaultTarget::client, FaultKind::disconnect, round, site, down));
            }
        }
        faults += n;
        const auto r = simulate(sc);
        identical += r.experiment.status == RunStatus::completed && r.final_global == clean.final_global &&
                     r.global_history == clean.global_history;
    }
    o.require(identical == trials, "every faulted run equals the fault-free model");

    FederationConfig cfg;
    cfg.name = "outage";
    cfg.sites = {{"a", true, {}}, {"b", true, {}}, {"c", true, {}}};
    cfg.rounds = 3;
    cfg.heterogeneity.samples_per_site = 16;
    cfg.startup_timeout_seconds = 60;
    cfg.client.reconnect_backoff = BackoffConfig{0.1, 1.0, 2.0};
    SimScenario fault_free;
    fault_free.federation = cfg;
    const auto expected = simulate(fault_free).final_global;
    const auto t0 = std::chrono::steady_clock::now();
    const auto run = testing::run_server_outage(FEDRUN_BINARY, cfg, std::chrono::seconds(10), "fedrun_acceptance_outage");
    const double outage_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool clients_done = true;
    for (auto c : run.clients) clients_done = clients_done && c == ClientOutcome::done;
    o.require(clients_done, "clients finish after the outage");
    o.require(run.server_exit && *run.server_exit == 0 && run.report.status == RunStatus::completed,
              "resumed server completes");
    o.require(ParameterVector(run.report.final_global) == expected, "loopback model equals the fault-free model");
    o.detail << identical << "/" << trials << " random schedules (" << faults
             << " faults) bit-identical; real sockets: server killed mid-round, down 10 s, resumed, clients "
             << (clients_done ? "reconnected and finished" : "did not finish") << " (" << outage_s << " s)";
    return o;
}

Outcome protocol_round_trip() {
    Outcome o;
    std::mt19937_64 rng(8);
    std::vector<Message> msgs;
    Bytes stream;
    int same = 0;
    for (int i = 0; i < 1000; ++i) {
        msgs.push_back(testing::random_message(rng));
        const Bytes frame = encode(msgs.back());
        same += decode(frame) == msgs.back();
        stream.insert(stream.end(), frame.begin(), frame.end());
    }
    o.require(same == 1000, "decode(encode(m)) == m");
    int chunkings_ok = 0;
    for (int trial = 0; trial < 20; ++trial) {
        FrameDecoder d;
        std::vector<Message> got;
        for (std::size_t pos = 0; pos < stream.size();) {
            const std::size_t n = std::min<std::size_t>(stream.size() - pos, trial == 0 ? 1 : 1 + rng() % 4096);
            d.feed(std::span<const std::uint8_t>(stream.data() + pos, n));
            pos += n;
            while (auto m = d.next()) got.push_back(std::move(*m));
        }
        chunkings_ok += got == msgs && d.buffered() == 0;
    }
    o.require(chunkings_ok == 20, "stream decoding independent of chunking");
    o.detail << same << "/1000 round trips, " << chunkings_ok << "/20 random chunkings (" << stream.size()
             << " bytes)";
    return o;
}

Outcome dice() {
    Outcome o;
    using Mask = std::vector<std::uint8_t>;
    const Mask m{1, 0, 1, 1, 0, 1};
    o.require(dice_score(m, m) == 1.0, "identical masks give 1");
    o.require(dice_score(Mask{1, 1, 0, 0}, Mask{0, 0, 1, 1}) == 0.0, "disjoint masks give 0");
    const Mask a{1, 1, 1, 1, 0, 0, 0}, b{1, 1, 1, 0, 1, 1, 1};
    o.require(dice_score(a, b) == 0.6, "|A|=4, |B|=6, overlap 3 gives 0.6");

    std::mt19937_64 rng(500);
    int agree = 0;
    for (int t = 0; t < 500; ++t) {
        const std::size_t n = 1 + rng() % 200;
        const unsigned density = rng() % 5;  // 0 gives all-zero masks now and then
        Mask p(n), q(n);
        std::set<std::size_t> sp, sq;
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = density && rng() % 4 < density;
            q[i] = density && rng() % 4 < density;
            if (p[i]) sp.insert(i);
            if (q[i]) sq.insert(i);
        }
        std::vector<std::size_t> both;
        std::set_intersection(sp.begin(), sp.end(), sq.begin(), sq.end(), std::back_inserter(both));
        const double want = sp.empty() && sq.empty()
                                ? 1.0
                                : 2.0 * static_cast<double>(both.size()) / static_cast<double>(sp.size() + sq.size());
        agree += dice_score(p, q) == want;
    }
    o.require(agree == 500, "agreement with the counting oracle");
    o.detail << "3 examples, " << agree << "/500 random pairs equal the counting oracle exactly";
    return o;
}

Outcome report_formulas() {
    Outcome o;
    auto dice_of = [](double v) { return EvalScore{v, 0.0, Metric::dice}; };
    const ScoreMap global{{"basel", dice_of(0.608)}, {"freiburg", dice_of(0.675)}, {"strasbourg", dice_of(0.628)}};
    const CrossScores local{
        {"basel", {{"basel", dice_of(0.365)}, {"freiburg", dice_of(0.315)}, {"strasbourg", dice_of(0.510)}}},
        {"freiburg", {{"basel", dice_of(0.570)}, {"freiburg", dice_of(0.633)}, {"strasbourg", dice_of(0.565)}}},
        {"strasbourg", {{"basel", dice_of(0.556)}, {"freiburg", dice_of(0.619)}, {"strasbourg", dice_of(0.615)}}}};
    const auto table = compare_global_local(global, local);
    const auto c1 = format_percent(table.at("strasbourg").at("strasbourg"));
    const auto c2 = format_percent(table.at("basel").at("basel"));
    const auto c3 = format_percent(table.at("basel").at("freiburg"));
    o.require(c1 == "-1.30%" && c2 == "-24.30%" && c3 == "-36.00%", "loss cells");

    const auto mean = global_mean_of({{"basel", dice_of(0.630)}, {"freiburg", dice_of(0.595)},
                                      {"strasbourg", dice_of(0.582)}});
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", mean.mean);
    o.require(std::string(buf) == "0.602", "global mean 0.602");
    o.detail << "loss cells " << c1 << " " << c2 << " " << c3 << "; global mean " << buf;
    return o;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double budget_seconds;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "aggregation oracle equivalence", 5, aggregation_oracle},
        {2, "reduction claims", 60, reductions},
        {3, "centralized gradient descent equivalence", 10, centralized_gd},
        {4, "global-vs-local direction", 120, global_vs_local},
        {5, "data-quantity trend", 120, data_quantity},
        {6, "timing reproduction", 5, timing},
        {7, "fault-tolerance transparency", 60, fault_tolerance},
        {8, "protocol round trip", 5, protocol_round_trip},
        {9, "dice metric", 5, dice},
        {10, "report formulas", 5, report_formulas},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "threw: " << e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (secs > c.budget_seconds) {
            o.pass = false;
            o.detail << " [over the " << c.budget_seconds << " s budget]";
        }
        failed += !o.pass;
        std::printf("%s %2d %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.str().c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed ? 1 : 0;
}
