#ifndef FEDRUN_METRICS_HPP_
#define FEDRUN_METRICS_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedrun/params.hpp"

namespace fedrun {

struct ClientRoundStats {
    double train_seconds = 0.0;
    double validate_seconds = 0.0;
    double waiting_seconds = 0.0;
    bool submitted = false;
    friend bool operator==(const ClientRoundStats&, const ClientRoundStats&) = default;
};

/// One round as the aggregator saw it. All times in seconds.
struct RoundRecord {
    std::uint64_t round = 0;
    std::map<std::string, ClientRoundStats> per_client;
    double aggregation_seconds = 0.0;
    /// Task broadcast to last accepted submission.
    double span_seconds = 0.0;
    /// The closing evaluation pass (no training, no aggregation).
    bool validation_only = false;
    /// Each site's score for the global model it received this round.
    std::optional<std::map<std::string, EvalScore>> global_eval;

    void validate() const;
    double validate_span() const;
    friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

struct Totals {
    double train = 0.0;
    double validate = 0.0;
    double aggregate = 0.0;
    double total() const { return train + validate + aggregate; }
    friend bool operator==(const Totals&, const Totals&) = default;
};

enum class RunStatus { completed, aborted, hung };

const char* to_string(RunStatus s);
RunStatus run_status_from_string(const std::string& s);

using ScoreMap = std::map<std::string, EvalScore>;
/// local_cross[trained_site][validation_site]
using CrossScores = std::map<std::string, ScoreMap>;

struct ExperimentReport {
    std::string name;
    std::string config_json;  // echo of the config that produced the run
    std::vector<RoundRecord> rounds;
    Totals totals;
    ScoreMap final_scores;
    std::optional<EvalScore> global_mean;
    std::optional<CrossScores> local_cross;
    /// Global model after the last aggregated round.
    std::vector<double> final_global;
    RunStatus status = RunStatus::completed;
    std::string diagnosis;

    double total_seconds() const { return totals.total(); }
    friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;
};

/// Unweighted mean of per-site means; std is the population std across sites.
EvalScore global_mean_of(const ScoreMap& per_site);

/// Builds totals from the records: train = sum(span - validate span),
/// validate = sum(validate span), aggregate = sum(aggregation). Throws
/// ReportError on empty input.
ExperimentReport summarize(std::span<const RoundRecord> records, ScoreMap final_scores = {});

/// Per-site timing in the shape of a per-client round/waiting table.
struct SiteTiming {
    double first_round = 0.0;
    double last_round = 0.0;
    double avg_round = 0.0;
    double avg_waiting = 0.0;
    std::size_t rounds = 0;
};
std::map<std::string, SiteTiming> site_timings(const ExperimentReport& report);

/// loss[trained][validated] = 100 * (local[trained][validated] - global[validated]),
/// signed percent points. Throws ReportError when the site sets differ.
using LossTable = std::map<std::string, std::map<std::string, double>>;
LossTable compare_global_local(const ScoreMap& global_scores, const CrossScores& local_cross_scores);

/// "%+.2f%%"-style rendering, e.g. -1.30%.
std::string format_percent(double percent_points);

/// (a - b) / a * 100 on total experiment time. Throws ReportError unless both
/// runs completed.
double speedup(const ExperimentReport& baseline, const ExperimentReport& candidate);

/// Header of the per-(round, site) CSV export.
inline constexpr const char* kCsvHeader =
    "round,site,train_seconds,waiting_seconds,aggregation_seconds,submitted,validate_seconds";

void export_csv(const ExperimentReport& report, const std::filesystem::path& path);
std::string to_csv(const ExperimentReport& report);

struct CsvRow {
    std::uint64_t round = 0;
    std::string site;
    double train_seconds = 0.0;
    double waiting_seconds = 0.0;
    double aggregation_seconds = 0.0;
    bool submitted = false;
    double validate_seconds = 0.0;
};
std::vector<CsvRow> parse_csv(const std::string& text);
/// Recomputes totals from parsed rows with the same rules as summarize().
Totals totals_from_csv(std::span<const CsvRow> rows);

std::string report_to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const std::string& text);

/// Human-readable summary (hours at presentation).
std::string render_summary(const ExperimentReport& report);

/// Writes report.json, rounds.csv and summary.txt into dir.
void write_report_dir(const ExperimentReport& report, const std::filesystem::path& dir);
ExperimentReport read_report_dir(const std::filesystem::path& dir);

}  // namespace fedrun

#endif  // FEDRUN_METRICS_HPP_
