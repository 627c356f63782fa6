#include "fedrun/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <ostream>

#include "fedrun/client.hpp"
#include "fedrun/config.hpp"
#include "fedrun/errors.hpp"
#include "fedrun/metrics.hpp"
#include "fedrun/server.hpp"
#include "fedrun/simulator.hpp"

namespace fedrun {

namespace {

constexpr const char* kDefaultListen = "127.0.0.1:7600";

std::string listen_address(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("FEDRUN_LISTEN"); env && *env) return env;
    return kDefaultListen;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

int cmd_server(const std::string& config, const std::string& listen, bool resume, const std::string& out_dir,
               std::ostream& out, std::ostream& err) {
    FederationConfig cfg;
    try {
        cfg = load_config(config).federation;
    } catch (const Error& e) {
        err << e.what() << "\n";
        return kExitConfig;
    }
    ServerOptions opts;
    opts.listen = listen_address(listen);
    opts.resume = resume;
    ExperimentReport report;
    try {
        report = run_experiment(cfg, opts);
    } catch (const ConfigError& e) {
        err << e.what() << "\n";
        return kExitConfig;
    } catch (const Error& e) {
        err << e.what() << "\n";
        return kExitStartup;
    }
    const std::filesystem::path dir = out_dir.empty() ? std::filesystem::path(cfg.name + "-report")
                                                      : std::filesystem::path(out_dir);
    try {
        write_report_dir(report, dir);
    } catch (const Error& e) {
        err << e.what() << "\n";
        return kExitFailed;
    }
    out << render_summary(report);
    out << "report written to " << dir.string() << "\n";
    return report.status == RunStatus::completed ? kExitOk : kExitFailed;
}

int cmd_client(const std::string& config, const std::string& site, const std::string& server, std::ostream& out,
               std::ostream& err) {
    ClientConfig ccfg;
    FederationConfig cfg;
    try {
        cfg = load_config(config).federation;
        ccfg = client_config_for(cfg, site, server);
    } catch (const Error& e) {
        err << e.what() << "\n";
        return kExitConfig;
    }
    ClientOutcome outcome;
    try {
        outcome = run_client(ccfg, cfg);
    } catch (const ConfigError& e) {
        err << e.what() << "\n";
        return kExitConfig;
    }
    switch (outcome) {
        case ClientOutcome::done: out << site << ": done\n"; break;
        case ClientOutcome::aborted: err << site << ": experiment aborted by the aggregator\n"; break;
        case ClientOutcome::rejected: err << site << ": join rejected\n"; break;
        case ClientOutcome::stopped: err << site << ": stopped\n"; break;
    }
    return exit_code(outcome);
}

int cmd_simulate(const std::vector<std::string>& scenarios, const std::string& out_dir, std::ostream& out,
                 std::ostream& err) {
    std::vector<std::pair<std::string, SimScenario>> loaded;
    for (const auto& path : scenarios) {
        try {
            auto sc = load_scenario(path);
            sc.validate();
            std::string name = sc.federation.name.empty() ? std::filesystem::path(path).stem().string()
                                                          : sc.federation.name;
            loaded.emplace_back(std::move(name), std::move(sc));
        } catch (const Error& e) {
            err << e.what() << "\n";
            return kExitConfig;
        }
    }
    for (const auto& [name, sc] : loaded) {
        SimulationReport r;
        try {
            r = simulate(sc);
        } catch (const ConfigError& e) {
            err << e.what() << "\n";
            return kExitConfig;
        }
        const auto dir = std::filesystem::path(out_dir) / name;
        try {
            write_report_dir(r.experiment, dir);
        } catch (const Error& e) {
            err << e.what() << "\n";
            return kExitFailed;
        }
        out << name << ": " << to_string(r.experiment.status) << ", total "
            << fixed(r.experiment.total_seconds() / 3600.0, 4) << " hr -> " << dir.string() << "\n";
        if (!r.experiment.diagnosis.empty()) out << "  diagnosis: " << r.experiment.diagnosis << "\n";
    }
    return kExitOk;
}

int cmd_report(const std::vector<std::string>& inputs, std::ostream& out, std::ostream& err) {
    std::vector<ExperimentReport> reports;
    for (const auto& in : inputs) {
        try {
            reports.push_back(read_report_dir(in));
            if (reports.back().name.empty()) reports.back().name = std::filesystem::path(in).filename().string();
        } catch (const Error& e) {
            err << e.what() << "\n";
            return kExitConfig;
        }
    }

    out << "totals (hr):\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "  %-24s %10s %10s %10s %10s  %s\n", "experiment", "train", "validate",
                  "aggregate", "total", "status");
    out << buf;
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "  %-24s %10.2f %10.2f %10.2f %10.2f  %s\n", r.name.c_str(),
                      r.totals.train / 3600.0, r.totals.validate / 3600.0, r.totals.aggregate / 3600.0,
                      r.total_seconds() / 3600.0, to_string(r.status));
        out << buf;
    }

    if (reports.size() > 1) {
        out << "\nspeedup vs " << reports.front().name << ":\n";
        for (std::size_t i = 1; i < reports.size(); ++i) {
            try {
                out << "  " << reports[i].name << ": " << format_percent(speedup(reports.front(), reports[i]))
                    << "\n";
            } catch (const ReportError& e) {
                err << e.what() << "\n";
            }
        }
    }

    const ScoreMap& global = reports.front().final_scores;
    for (const auto& r : reports) {
        if (!r.local_cross) continue;
        try {
            const auto table = compare_global_local(global, *r.local_cross);
            out << "\nloss against global model (" << r.name << ", rows trained at, columns validated at):\n";
            out << "  " << std::string(16, ' ');
            for (const auto& [v, _] : global) {
                std::snprintf(buf, sizeof buf, " %10s", v.c_str());
                out << buf;
            }
            out << "\n";
            for (const auto& [t, row] : table) {
                std::snprintf(buf, sizeof buf, "  %-16s", t.c_str());
                out << buf;
                for (const auto& [v, loss] : row) {
                    std::snprintf(buf, sizeof buf, " %10s", format_percent(loss).c_str());
                    out << buf;
                }
                out << "\n";
            }
        } catch (const ReportError& e) {
            err << e.what() << "\n";
        }
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Federated learning server, client, simulator and report tool", "fedrun"};
    app.require_subcommand(1);

    std::string config, listen, out_dir, site, server = kDefaultListen, sim_out;
    bool resume = false;
    std::vector<std::string> scenarios, inputs;

    auto* srv = app.add_subcommand("server", "Run the aggregator");
    srv->add_option("--config", config, "Config file")->required();
    srv->add_option("--listen", listen, "host:port (default: $FEDRUN_LISTEN or " + std::string(kDefaultListen) + ")");
    srv->add_flag("--resume", resume, "Continue from the checkpoint");
    srv->add_option("--out", out_dir, "Report directory (default: <name>-report)");

    auto* cli = app.add_subcommand("client", "Run one site");
    cli->add_option("--config", config, "Config file")->required();
    cli->add_option("--site", site, "Site name from the config")->required();
    cli->add_option("--server", server, "Aggregator host:port")->capture_default_str();

    auto* sim = app.add_subcommand("simulate", "Run scenarios under virtual time");
    sim->add_option("--scenario", scenarios, "Scenario file (repeatable)")->required();
    sim->add_option("--out", sim_out, "Output directory")->required();

    auto* rep = app.add_subcommand("report", "Compare saved reports");
    rep->add_option("--in", inputs, "Report directory or report.json (repeatable)")->required();

    std::vector<std::string> argv_store{"fedrun"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitConfig;
    }

    if (srv->parsed()) return cmd_server(config, listen, resume, out_dir, out, err);
    if (cli->parsed()) return cmd_client(config, site, server, out, err);
    if (sim->parsed()) return cmd_simulate(scenarios, sim_out, out, err);
    return cmd_report(inputs, out, err);
}

}  // namespace fedrun
