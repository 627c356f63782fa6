#include "fedrun/metrics.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "fedrun/errors.hpp"
#include "json_io.hpp"

namespace fedrun {

using detail::json;

void RoundRecord::validate() const {
    if (!(aggregation_seconds >= 0.0)) throw ReportError("aggregation_seconds must be >= 0");
    for (const auto& [site, s] : per_client) {
        if (!(s.waiting_seconds >= 0.0)) throw ReportError("negative waiting time for " + site);
    }
}

double RoundRecord::validate_span() const {
    double v = 0.0;
    for (const auto& [_, s] : per_client) {
        if (s.submitted) v = std::max(v, s.validate_seconds);
    }
    return v;
}

const char* to_string(RunStatus s) {
    switch (s) {
        case RunStatus::completed: return "completed";
        case RunStatus::aborted: return "aborted";
        case RunStatus::hung: return "hung";
    }
    return "?";
}

RunStatus run_status_from_string(const std::string& s) {
    if (s == "completed") return RunStatus::completed;
    if (s == "aborted") return RunStatus::aborted;
    if (s == "hung") return RunStatus::hung;
    throw ReportError("unknown run status '" + s + "'");
}

EvalScore global_mean_of(const ScoreMap& per_site) {
    if (per_site.empty()) throw ReportError("no per-site scores");
    std::vector<double> means;
    Metric metric = per_site.begin()->second.metric;
    for (const auto& [site, s] : per_site) {
        if (s.metric != metric) throw ReportError("mixed metrics across sites");
        means.push_back(s.mean);
    }
    return mean_std(means, metric);
}

ExperimentReport summarize(std::span<const RoundRecord> records, ScoreMap final_scores) {
    if (records.empty()) throw ReportError("no round records to summarize");
    ExperimentReport r;
    r.rounds.assign(records.begin(), records.end());
    for (const auto& rec : records) {
        rec.validate();
        const double v = rec.validate_span();
        r.totals.validate += v;
        r.totals.train += rec.span_seconds - v;
        r.totals.aggregate += rec.aggregation_seconds;
    }
    if (final_scores.empty()) {
        // Fall back to the newest per-round evaluation.
        for (auto it = records.rbegin(); it != records.rend(); ++it) {
            if (it->global_eval && !it->global_eval->empty()) {
                final_scores = *it->global_eval;
                break;
            }
        }
    }
    r.final_scores = std::move(final_scores);
    if (!r.final_scores.empty()) r.global_mean = global_mean_of(r.final_scores);
    return r;
}

std::map<std::string, SiteTiming> site_timings(const ExperimentReport& report) {
    std::map<std::string, SiteTiming> out;
    std::map<std::string, double> round_sum, wait_sum;
    for (const auto& rec : report.rounds) {
        if (rec.validation_only) continue;
        for (const auto& [site, s] : rec.per_client) {
            if (!s.submitted) continue;
            auto& t = out[site];
            const double own = s.train_seconds + s.validate_seconds;
            if (t.rounds == 0) t.first_round = own;
            t.last_round = own;
            ++t.rounds;
            round_sum[site] += own;
            wait_sum[site] += s.waiting_seconds;
        }
    }
    for (auto& [site, t] : out) {
        t.avg_round = round_sum[site] / static_cast<double>(t.rounds);
        t.avg_waiting = wait_sum[site] / static_cast<double>(t.rounds);
    }
    return out;
}

LossTable compare_global_local(const ScoreMap& global_scores, const CrossScores& local_cross_scores) {
    std::set<std::string> sites;
    for (const auto& [s, _] : global_scores) sites.insert(s);
    auto mismatch = [&](const std::set<std::string>& other, const std::string& what) {
        if (other != sites) throw ReportError("site set of " + what + " does not match the global scores");
    };
    std::set<std::string> trained;
    for (const auto& [t, _] : local_cross_scores) trained.insert(t);
    mismatch(trained, "locally trained models");
    LossTable table;
    for (const auto& [t, row] : local_cross_scores) {
        std::set<std::string> validated;
        for (const auto& [v, _] : row) validated.insert(v);
        mismatch(validated, "validation sites of '" + t + "'");
        for (const auto& [v, score] : row) {
            table[t][v] = (score.mean - global_scores.at(v).mean) * 100.0;
        }
    }
    return table;
}

std::string format_percent(double percent_points) {
    char buf[64];
    // Round half away from zero at two decimals, then drop a negative zero.
    double rounded = std::round(percent_points * 100.0) / 100.0;
    if (rounded == 0.0) rounded = 0.0;
    std::snprintf(buf, sizeof buf, "%.2f%%", rounded);
    return buf;
}

double speedup(const ExperimentReport& baseline, const ExperimentReport& candidate) {
    for (const auto* r : {&baseline, &candidate}) {
        if (r->status != RunStatus::completed) {
            throw ReportError("report '" + r->name + "' did not complete (" + to_string(r->status) + ")");
        }
    }
    const double a = baseline.total_seconds();
    if (!(a > 0.0)) throw ReportError("baseline total time must be > 0");
    return (a - candidate.total_seconds()) / a * 100.0;
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string to_csv(const ExperimentReport& report) {
    std::ostringstream os;
    os << kCsvHeader << '\n';
    for (const auto& rec : report.rounds) {
        for (const auto& [site, s] : rec.per_client) {
            os << rec.round << ',' << site << ',' << fmt_double(s.train_seconds) << ','
               << fmt_double(s.waiting_seconds) << ',' << fmt_double(rec.aggregation_seconds) << ','
               << (s.submitted ? 1 : 0) << ',' << fmt_double(s.validate_seconds) << '\n';
        }
    }
    return os.str();
}

void export_csv(const ExperimentReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << to_csv(report);
    if (!out.flush()) throw IoError("failed writing " + path.string());
}

std::vector<CsvRow> parse_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw ReportError("CSV header mismatch");
    std::vector<CsvRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 7) throw ReportError("CSV line " + std::to_string(lineno) + ": expected 7 columns");
        try {
            CsvRow r;
            r.round = std::stoull(cells[0]);
            r.site = cells[1];
            r.train_seconds = std::stod(cells[2]);
            r.waiting_seconds = std::stod(cells[3]);
            r.aggregation_seconds = std::stod(cells[4]);
            r.submitted = cells[5] == "1";
            r.validate_seconds = std::stod(cells[6]);
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw ReportError("CSV line " + std::to_string(lineno) + ": malformed number");
        }
    }
    return rows;
}

Totals totals_from_csv(std::span<const CsvRow> rows) {
    struct Acc {
        double span = 0.0, validate = 0.0, aggregation = 0.0;
    };
    std::map<std::uint64_t, Acc> per_round;
    for (const auto& r : rows) {
        auto& a = per_round[r.round];
        a.aggregation = r.aggregation_seconds;
        if (!r.submitted) continue;
        a.span = std::max(a.span, r.train_seconds + r.validate_seconds + r.waiting_seconds);
        a.validate = std::max(a.validate, r.validate_seconds);
    }
    Totals t;
    for (const auto& [_, a] : per_round) {
        t.train += a.span - a.validate;
        t.validate += a.validate;
        t.aggregate += a.aggregation;
    }
    return t;
}

namespace {

json scores_to_json(const ScoreMap& m) {
    json j = json::object();
    for (const auto& [site, s] : m) j[site] = detail::eval_to_json(s);
    return j;
}

ScoreMap scores_from_json(const json& j, const std::string& where) {
    if (!j.is_object()) throw ReportError(where + " must be an object");
    ScoreMap m;
    for (auto it = j.begin(); it != j.end(); ++it) {
        m[it.key()] = detail::eval_from_json<ReportError>(it.value(), where + "." + it.key());
    }
    return m;
}

}  // namespace

std::string report_to_json(const ExperimentReport& report) {
    json rounds = json::array();
    for (const auto& rec : report.rounds) {
        json clients = json::object();
        for (const auto& [site, s] : rec.per_client) {
            clients[site] = json{{"train_seconds", s.train_seconds},
                                 {"validate_seconds", s.validate_seconds},
                                 {"waiting_seconds", s.waiting_seconds},
                                 {"submitted", s.submitted}};
        }
        json r{{"round", rec.round},
               {"per_client", std::move(clients)},
               {"aggregation_seconds", rec.aggregation_seconds},
               {"span_seconds", rec.span_seconds},
               {"validation_only", rec.validation_only}};
        if (rec.global_eval) r["global_eval"] = scores_to_json(*rec.global_eval);
        rounds.push_back(std::move(r));
    }
    json j{{"name", report.name},
           {"status", to_string(report.status)},
           {"diagnosis", report.diagnosis},
           {"totals",
            {{"train_seconds", report.totals.train},
             {"validate_seconds", report.totals.validate},
             {"aggregate_seconds", report.totals.aggregate}}},
           {"rounds", std::move(rounds)},
           {"final_scores", scores_to_json(report.final_scores)}};
    j["config"] = report.config_json.empty() ? json(nullptr) : json::parse(report.config_json);
    if (!report.final_global.empty()) j["final_global"] = report.final_global;
    if (report.global_mean) j["global_mean"] = detail::eval_to_json(*report.global_mean);
    if (report.local_cross) {
        json lc = json::object();
        for (const auto& [t, row] : *report.local_cross) lc[t] = scores_to_json(row);
        j["local_cross"] = std::move(lc);
    }
    return j.dump(2) + "\n";
}

ExperimentReport report_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ReportError(std::string("report is not valid JSON: ") + e.what());
    }
    using detail::require;
    ExperimentReport r;
    try {
        r.name = j.value("name", "");
        r.status = run_status_from_string(j.value("status", "completed"));
        r.diagnosis = j.value("diagnosis", "");
        const auto& t = require<ReportError>(j, "totals", "report");
        r.totals.train = detail::number<ReportError>(require<ReportError>(t, "train_seconds", "totals"), "train");
        r.totals.validate =
            detail::number<ReportError>(require<ReportError>(t, "validate_seconds", "totals"), "validate");
        r.totals.aggregate =
            detail::number<ReportError>(require<ReportError>(t, "aggregate_seconds", "totals"), "aggregate");
        for (const auto& jr : require<ReportError>(j, "rounds", "report")) {
            RoundRecord rec;
            rec.round = jr.at("round").get<std::uint64_t>();
            rec.aggregation_seconds = jr.at("aggregation_seconds").get<double>();
            rec.span_seconds = jr.at("span_seconds").get<double>();
            rec.validation_only = jr.value("validation_only", false);
            for (auto it = jr.at("per_client").begin(); it != jr.at("per_client").end(); ++it) {
                const auto& c = it.value();
                rec.per_client[it.key()] = ClientRoundStats{c.at("train_seconds").get<double>(),
                                                            c.at("validate_seconds").get<double>(),
                                                            c.at("waiting_seconds").get<double>(),
                                                            c.at("submitted").get<bool>()};
            }
            if (jr.contains("global_eval")) rec.global_eval = scores_from_json(jr["global_eval"], "global_eval");
            r.rounds.push_back(std::move(rec));
        }
        r.final_scores = scores_from_json(require<ReportError>(j, "final_scores", "report"), "final_scores");
        if (j.contains("global_mean")) r.global_mean = detail::eval_from_json<ReportError>(j["global_mean"], "global_mean");
        if (j.contains("local_cross")) {
            CrossScores lc;
            for (auto it = j["local_cross"].begin(); it != j["local_cross"].end(); ++it) {
                lc[it.key()] = scores_from_json(it.value(), "local_cross." + it.key());
            }
            r.local_cross = std::move(lc);
        }
        if (j.contains("final_global")) r.final_global = j["final_global"].get<std::vector<double>>();
        if (j.contains("config") && !j["config"].is_null()) r.config_json = j["config"].dump();
    } catch (const json::exception& e) {
        throw ReportError(std::string("malformed report: ") + e.what());
    }
    return r;
}

std::string render_summary(const ExperimentReport& report) {
    std::ostringstream os;
    char buf[256];
    auto hours = [](double s) { return s / 3600.0; };
    os << "experiment: " << (report.name.empty() ? "(unnamed)" : report.name) << "\n";
    os << "status: " << to_string(report.status) << "\n";
    if (!report.diagnosis.empty()) os << "diagnosis: " << report.diagnosis << "\n";
    std::snprintf(buf, sizeof buf, "total time: %.4f hr (train %.4f hr, validate %.4f hr, aggregate %.4f hr)\n",
                  hours(report.total_seconds()), hours(report.totals.train), hours(report.totals.validate),
                  hours(report.totals.aggregate));
    os << buf;
    const auto timings = site_timings(report);
    if (!timings.empty()) {
        os << "\nper-site round times (hr):\n";
        std::snprintf(buf, sizeof buf, "  %-16s %10s %10s %10s %10s\n", "site", "first", "last", "avg", "waiting");
        os << buf;
        for (const auto& [site, t] : timings) {
            std::snprintf(buf, sizeof buf, "  %-16s %10.4f %10.4f %10.4f %10.4f\n", site.c_str(),
                          hours(t.first_round), hours(t.last_round), hours(t.avg_round), hours(t.avg_waiting));
            os << buf;
        }
    }
    if (!report.final_scores.empty()) {
        os << (report.status == RunStatus::completed ? "\nfinal" : "\nlatest") << " global-model scores:\n";
        for (const auto& [site, s] : report.final_scores) {
            std::snprintf(buf, sizeof buf, "  %-16s %s %.6f +/- %.6f\n", site.c_str(), to_string(s.metric), s.mean,
                          s.std);
            os << buf;
        }
        if (report.global_mean) {
            std::snprintf(buf, sizeof buf, "  %-16s %s %.6f +/- %.6f\n", "global mean",
                          to_string(report.global_mean->metric), report.global_mean->mean, report.global_mean->std);
            os << buf;
        }
    }
    if (report.local_cross) {
        os << "\nlocally trained models (rows trained at, columns validated at):\n";
        for (const auto& [t, row] : *report.local_cross) {
            os << "  " << t << ":";
            for (const auto& [v, s] : row) {
                std::snprintf(buf, sizeof buf, " %s=%.6f", v.c_str(), s.mean);
                os << buf;
            }
            os << "\n";
        }
    }
    return os.str();
}

void write_report_dir(const ExperimentReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    auto write = [](const std::filesystem::path& p, const std::string& text) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + p.string() + " for writing");
        out << text;
        if (!out.flush()) throw IoError("failed writing " + p.string());
    };
    write(dir / "report.json", report_to_json(report));
    export_csv(report, dir / "rounds.csv");
    write(dir / "summary.txt", render_summary(report));
}

ExperimentReport read_report_dir(const std::filesystem::path& dir) {
    const auto path = std::filesystem::is_directory(dir) ? dir / "report.json" : dir;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return report_from_json(ss.str());
}

}  // namespace fedrun
