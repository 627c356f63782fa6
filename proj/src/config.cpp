#include "fedrun/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "fedrun/errors.hpp"
#include "json_io.hpp"

namespace fedrun {

using detail::json;

const char* to_string(LossPolicy p) { return p == LossPolicy::wait ? "wait" : "continue_without"; }
const char* to_string(TimingMode m) { return m == TimingMode::real ? "real" : "simulated"; }

void BackoffConfig::validate() const {
    if (!(initial_seconds > 0.0)) throw ConfigError("reconnect_backoff.initial_seconds must be > 0");
    if (!(max_seconds >= initial_seconds)) throw ConfigError("reconnect_backoff.initial_seconds must be <= max_seconds");
    if (!(multiplier >= 1.0)) throw ConfigError("reconnect_backoff.multiplier must be >= 1");
}

void FederationConfig::validate() const {
    if (sites.empty()) throw ConfigError("sites must list at least one site");
    std::set<std::string> names;
    for (const auto& s : sites) {
        if (s.name.empty()) throw ConfigError("sites[].name must be non-empty");
        if (!names.insert(s.name).second) throw ConfigError("duplicate site name '" + s.name + "'");
        if (s.data_fraction && !(*s.data_fraction > 0.0 && *s.data_fraction <= 1.0)) {
            throw ConfigError("sites[].data_fraction of '" + s.name + "' must be in (0, 1]");
        }
    }
    if (expected_sites().empty()) throw ConfigError("sites must mark at least one site as expected");
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    algorithm.validate();
    trainer.validate();
    heterogeneity.validate(trainer.trainer);
    if (on_client_loss == LossPolicy::continue_without && !min_clients_per_round) {
        throw ConfigError("on_client_loss 'continue_without' requires min_clients_per_round");
    }
    if (min_clients_per_round && (*min_clients_per_round < 1 || *min_clients_per_round > sites.size())) {
        throw ConfigError("min_clients_per_round must be in [1, number of sites]");
    }
    if (round_timeout_seconds && !(*round_timeout_seconds > 0.0)) {
        throw ConfigError("round_timeout_seconds must be > 0");
    }
    if (!(startup_timeout_seconds > 0.0)) throw ConfigError("startup_timeout_seconds must be > 0");
    if (!(client.compute_multiplier > 0.0)) throw ConfigError("client.compute_multiplier must be > 0");
    client.reconnect_backoff.validate();
}

std::size_t FederationConfig::site_index(const std::string& site) const {
    for (std::size_t i = 0; i < sites.size(); ++i) {
        if (sites[i].name == site) return i;
    }
    throw ConfigError("unknown site '" + site + "'");
}

HeterogeneityConfig FederationConfig::heterogeneity_for(const std::string& site) const {
    HeterogeneityConfig h = heterogeneity;
    if (const auto& f = sites[site_index(site)].data_fraction) h.fraction = *f;
    return h;
}

std::vector<std::string> FederationConfig::expected_sites() const {
    std::vector<std::string> out;
    for (const auto& s : sites) {
        if (s.expected) out.push_back(s.name);
    }
    return out;
}

void ClientConfig::validate() const {
    if (site_name.empty()) throw ConfigError("site name must be non-empty");
    if (!(compute_multiplier > 0.0)) throw ConfigError("compute_multiplier must be > 0");
    reconnect_backoff.validate();
}

ClientConfig client_config_for(const FederationConfig& cfg, const std::string& site, const std::string& server) {
    ClientConfig c;
    c.site_index = cfg.site_index(site);
    c.site_name = site;
    c.server_address = server;
    c.data_seed = cfg.data_seed;
    c.compute_multiplier = cfg.client.compute_multiplier;
    c.reconnect_backoff = cfg.client.reconnect_backoff;
    c.timing = cfg.client.timing;
    c.validate();
    return c;
}

void SimScenario::validate() const {
    federation.validate();
    for (const auto& [site, m] : site_multipliers) {
        federation.site_index(site);
        if (!(m > 0.0)) throw ConfigError("simulation.site_multipliers['" + site + "'] must be > 0");
    }
    if (!(base_round_cost_seconds > 0.0)) throw ConfigError("simulation.base_round_cost_seconds must be > 0");
    if (!(aggregation_cost_seconds >= 0.0)) throw ConfigError("simulation.aggregation_cost_seconds must be >= 0");
    if (!(validation_cost_seconds >= 0.0)) throw ConfigError("simulation.validation_cost_seconds must be >= 0");
    if (!(stall_horizon_seconds >= 0.0)) throw ConfigError("simulation.stall_horizon_seconds must be >= 0");
    for (const auto& f : faults) {
        if (f.at_round >= federation.rounds) throw ConfigError("simulation.faults[].at_round must be < rounds");
        if (!(f.downtime_seconds >= 0.0)) throw ConfigError("simulation.faults[].downtime_seconds must be >= 0");
        if (f.target == FaultTarget::client) federation.site_index(f.client);
    }
}

double SimScenario::multiplier(const std::string& site) const {
    auto it = site_multipliers.find(site);
    return it == site_multipliers.end() ? 1.0 : it->second;
}

namespace {

json sites_to_json(const std::vector<SiteSpec>& sites) {
    json arr = json::array();
    for (const auto& s : sites) {
        json j{{"name", s.name}, {"expected", s.expected}};
        if (s.data_fraction) j["data_fraction"] = *s.data_fraction;
        arr.push_back(std::move(j));
    }
    return arr;
}

json trainer_to_json(const TrainerConfig& t) {
    return json{{"trainer", to_string(t.trainer)},
                {"lr", t.lr},
                {"local_steps", t.local_steps},
                {"batch", t.batch},
                {"seed", t.seed}};
}

json heterogeneity_to_json(const HeterogeneityConfig& h) {
    return json{{"base_optimum", h.base_optimum},
                {"shift_scale", h.shift_scale},
                {"noise_std", h.noise_std},
                {"samples_per_site", h.samples_per_site},
                {"fraction", h.fraction},
                {"validation_samples", h.validation_samples}};
}

json federation_json(const FederationConfig& c) {
    json j{{"name", c.name},
           {"sites", sites_to_json(c.sites)},
           {"rounds", c.rounds},
           {"algorithm", detail::algorithm_to_json(c.algorithm)},
           {"trainer", trainer_to_json(c.trainer)},
           {"heterogeneity", heterogeneity_to_json(c.heterogeneity)},
           {"on_client_loss", to_string(c.on_client_loss)},
           {"checkpoint_path", c.checkpoint_path.string()},
           {"startup_timeout_seconds", c.startup_timeout_seconds},
           {"data_seed", c.data_seed},
           {"client",
            {{"timing", to_string(c.client.timing)},
             {"compute_multiplier", c.client.compute_multiplier},
             {"reconnect_backoff",
              {{"initial_seconds", c.client.reconnect_backoff.initial_seconds},
               {"max_seconds", c.client.reconnect_backoff.max_seconds},
               {"multiplier", c.client.reconnect_backoff.multiplier}}}}}};
    if (c.min_clients_per_round) j["min_clients_per_round"] = *c.min_clients_per_round;
    if (c.round_timeout_seconds) j["round_timeout_seconds"] = *c.round_timeout_seconds;
    return j;
}

json simulation_json(const SimScenario& s) {
    json faults = json::array();
    for (const auto& f : s.faults) {
        json jf{{"at_round", f.at_round},
                {"target", f.target == FaultTarget::server ? "server" : "client"},
                {"kind", f.kind == FaultKind::crash ? "crash" : "disconnect"},
                {"downtime_seconds", f.downtime_seconds},
                {"permanent", f.permanent}};
        if (f.target == FaultTarget::client) jf["client"] = f.client;
        faults.push_back(std::move(jf));
    }
    return json{{"site_multipliers", s.site_multipliers},
                {"base_round_cost_seconds", s.base_round_cost_seconds},
                {"aggregation_cost_seconds", s.aggregation_cost_seconds},
                {"validation_cost_seconds", s.validation_cost_seconds},
                {"faults", std::move(faults)},
                {"local_baselines", s.local_baselines},
                {"stall_horizon_seconds", s.stall_horizon_seconds}};
}

// ---- parsing ----

using E = ConfigError;

double num(const json& obj, const char* key, const std::string& where, double fallback) {
    return obj.contains(key) ? detail::number<E>(obj[key], where + "." + key) : fallback;
}

std::uint64_t uint(const json& obj, const char* key, const std::string& where, std::uint64_t fallback) {
    return obj.contains(key) ? detail::unsigned_int<E>(obj[key], where + "." + key) : fallback;
}

void require_object(const json& j, const std::string& where) {
    if (!j.is_object()) throw E(where + " must be an object");
}

TrainerConfig parse_trainer(const json& j) {
    require_object(j, "trainer");
    detail::reject_unknown_keys<E>(j, {"trainer", "lr", "local_steps", "batch", "seed"}, "trainer");
    TrainerConfig t;
    if (j.contains("trainer")) t.trainer = trainer_from_string(detail::string<E>(j["trainer"], "trainer.trainer"));
    t.lr = num(j, "lr", "trainer", t.lr);
    t.local_steps = uint(j, "local_steps", "trainer", t.local_steps);
    if (j.contains("batch")) t.batch = detail::string<E>(j["batch"], "trainer.batch");
    t.seed = uint(j, "seed", "trainer", t.seed);
    return t;
}

HeterogeneityConfig parse_heterogeneity(const json& j, TrainerKind kind) {
    require_object(j, "heterogeneity");
    detail::reject_unknown_keys<E>(
        j, {"base_optimum", "shift_scale", "noise_std", "samples_per_site", "fraction", "validation_samples"},
        "heterogeneity");
    HeterogeneityConfig h;
    if (kind == TrainerKind::synthetic_segmentation) h.base_optimum = {0.0, 1.0};
    if (j.contains("base_optimum")) {
        const auto& b = j["base_optimum"];
        if (!b.is_array()) throw E("heterogeneity.base_optimum must be a number array");
        h.base_optimum.clear();
        for (const auto& v : b) h.base_optimum.push_back(detail::number<E>(v, "heterogeneity.base_optimum[]"));
    }
    h.shift_scale = num(j, "shift_scale", "heterogeneity", h.shift_scale);
    h.noise_std = num(j, "noise_std", "heterogeneity", h.noise_std);
    h.samples_per_site = uint(j, "samples_per_site", "heterogeneity", h.samples_per_site);
    h.fraction = num(j, "fraction", "heterogeneity", h.fraction);
    h.validation_samples = uint(j, "validation_samples", "heterogeneity", h.validation_samples);
    return h;
}

BackoffConfig parse_backoff(const json& j) {
    require_object(j, "client.reconnect_backoff");
    detail::reject_unknown_keys<E>(j, {"initial_seconds", "max_seconds", "multiplier"}, "client.reconnect_backoff");
    BackoffConfig b;
    b.initial_seconds = num(j, "initial_seconds", "reconnect_backoff", b.initial_seconds);
    b.max_seconds = num(j, "max_seconds", "reconnect_backoff", b.max_seconds);
    b.multiplier = num(j, "multiplier", "reconnect_backoff", b.multiplier);
    return b;
}

ClientSection parse_client(const json& j) {
    require_object(j, "client");
    detail::reject_unknown_keys<E>(j, {"timing", "compute_multiplier", "reconnect_backoff"}, "client");
    ClientSection c;
    if (j.contains("timing")) {
        const auto t = detail::string<E>(j["timing"], "client.timing");
        if (t == "real") c.timing = TimingMode::real;
        else if (t == "simulated") c.timing = TimingMode::simulated;
        else throw E("client.timing must be 'real' or 'simulated', got '" + t + "'");
    }
    c.compute_multiplier = num(j, "compute_multiplier", "client", c.compute_multiplier);
    if (j.contains("reconnect_backoff")) c.reconnect_backoff = parse_backoff(j["reconnect_backoff"]);
    return c;
}

std::vector<SiteSpec> parse_sites(const json& j) {
    if (!j.is_array()) throw E("sites must be an array");
    std::vector<SiteSpec> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string where = "sites[" + std::to_string(i) + "]";
        const auto& s = j[i];
        if (s.is_string()) {
            out.push_back(SiteSpec{s.get<std::string>(), true, std::nullopt});
            continue;
        }
        require_object(s, where);
        detail::reject_unknown_keys<E>(s, {"name", "expected", "data_fraction"}, where);
        SiteSpec spec;
        spec.name = detail::string<E>(detail::require<E>(s, "name", where), where + ".name");
        if (s.contains("expected")) spec.expected = detail::boolean<E>(s["expected"], where + ".expected");
        if (s.contains("data_fraction")) spec.data_fraction = detail::number<E>(s["data_fraction"], where + ".data_fraction");
        out.push_back(std::move(spec));
    }
    return out;
}

FederationConfig parse_federation(const json& j) {
    FederationConfig c;
    c.name = j.contains("name") ? detail::string<E>(j["name"], "name") : "";
    c.sites = parse_sites(detail::require<E>(j, "sites", "config"));
    c.rounds = uint(j, "rounds", "config", c.rounds);
    if (j.contains("algorithm")) c.algorithm = detail::algorithm_from_json<E>(j["algorithm"], "algorithm");
    if (j.contains("trainer")) c.trainer = parse_trainer(j["trainer"]);
    if (j.contains("heterogeneity")) {
        c.heterogeneity = parse_heterogeneity(j["heterogeneity"], c.trainer.trainer);
    } else if (c.trainer.trainer == TrainerKind::synthetic_segmentation) {
        c.heterogeneity.base_optimum = {0.0, 1.0};
    }
    if (j.contains("on_client_loss")) {
        const auto p = detail::string<E>(j["on_client_loss"], "on_client_loss");
        if (p == "wait") c.on_client_loss = LossPolicy::wait;
        else if (p == "continue_without") c.on_client_loss = LossPolicy::continue_without;
        else throw E("on_client_loss must be 'wait' or 'continue_without', got '" + p + "'");
    }
    if (j.contains("min_clients_per_round")) c.min_clients_per_round = uint(j, "min_clients_per_round", "config", 0);
    if (j.contains("checkpoint_path")) c.checkpoint_path = detail::string<E>(j["checkpoint_path"], "checkpoint_path");
    if (j.contains("round_timeout_seconds") && !j["round_timeout_seconds"].is_null()) {
        c.round_timeout_seconds = num(j, "round_timeout_seconds", "config", 0.0);
    }
    c.startup_timeout_seconds = num(j, "startup_timeout_seconds", "config", c.startup_timeout_seconds);
    c.data_seed = uint(j, "data_seed", "config", c.data_seed);
    if (j.contains("client")) c.client = parse_client(j["client"]);
    return c;
}

FaultEvent parse_fault(const json& j, const std::string& where) {
    require_object(j, where);
    detail::reject_unknown_keys<E>(j, {"at_round", "target", "client", "kind", "downtime_seconds", "permanent"}, where);
    FaultEvent f;
    f.at_round = detail::unsigned_int<E>(detail::require<E>(j, "at_round", where), where + ".at_round");
    const auto target = detail::string<E>(detail::require<E>(j, "target", where), where + ".target");
    if (target == "server") {
        f.target = FaultTarget::server;
    } else if (target == "client") {
        f.target = FaultTarget::client;
        f.client = detail::string<E>(detail::require<E>(j, "client", where), where + ".client");
    } else {
        throw E(where + ".target must be 'server' or 'client', got '" + target + "'");
    }
    const auto kind = detail::string<E>(detail::require<E>(j, "kind", where), where + ".kind");
    if (kind == "crash") f.kind = FaultKind::crash;
    else if (kind == "disconnect") f.kind = FaultKind::disconnect;
    else throw E(where + ".kind must be 'crash' or 'disconnect', got '" + kind + "'");
    f.downtime_seconds = num(j, "downtime_seconds", where, 0.0);
    if (j.contains("permanent")) f.permanent = detail::boolean<E>(j["permanent"], where + ".permanent");
    return f;
}

SimScenario parse_simulation(const json& j, FederationConfig federation) {
    require_object(j, "simulation");
    detail::reject_unknown_keys<E>(j,
                                   {"site_multipliers", "base_round_cost_seconds", "aggregation_cost_seconds",
                                    "validation_cost_seconds", "faults", "local_baselines", "stall_horizon_seconds"},
                                   "simulation");
    SimScenario s;
    s.federation = std::move(federation);
    if (j.contains("site_multipliers")) {
        const auto& m = j["site_multipliers"];
        require_object(m, "simulation.site_multipliers");
        for (auto it = m.begin(); it != m.end(); ++it) {
            s.site_multipliers[it.key()] = detail::number<E>(it.value(), "site_multipliers." + it.key());
        }
    }
    s.base_round_cost_seconds = num(j, "base_round_cost_seconds", "simulation", s.base_round_cost_seconds);
    s.aggregation_cost_seconds = num(j, "aggregation_cost_seconds", "simulation", s.aggregation_cost_seconds);
    s.validation_cost_seconds = num(j, "validation_cost_seconds", "simulation", s.validation_cost_seconds);
    s.stall_horizon_seconds = num(j, "stall_horizon_seconds", "simulation", s.stall_horizon_seconds);
    if (j.contains("local_baselines")) s.local_baselines = detail::boolean<E>(j["local_baselines"], "local_baselines");
    if (j.contains("faults")) {
        if (!j["faults"].is_array()) throw E("simulation.faults must be an array");
        for (std::size_t i = 0; i < j["faults"].size(); ++i) {
            s.faults.push_back(parse_fault(j["faults"][i], "faults[" + std::to_string(i) + "]"));
        }
    }
    return s;
}

std::size_t line_of_offset(const std::string& text, std::size_t offset) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i) line += text[i] == '\n';
    return line;
}

// Best-effort anchor: the first quoted name in the message ('key'), else the
// last component of a dotted path such as "trainer.lr".
std::size_t anchor_line(const std::string& text, const std::string& message) {
    std::string key;
    const auto q = message.find('\'');
    if (q != std::string::npos) {
        const auto q2 = message.find('\'', q + 1);
        if (q2 != std::string::npos) key = message.substr(q + 1, q2 - q - 1);
    }
    if (key.empty()) {
        const auto end = message.find(' ');
        std::string path = message.substr(0, end);
        const auto cut = path.find_last_of(".]");
        key = cut == std::string::npos ? path : path.substr(cut + 1);
        const auto bracket = key.find('[');
        if (bracket != std::string::npos) key = key.substr(0, bracket);
    }
    if (key.empty()) return 1;
    const auto pos = text.find("\"" + key + "\"");
    return pos == std::string::npos ? 1 : line_of_offset(text, pos);
}

}  // namespace

std::uint64_t config_hash(const FederationConfig& cfg) {
    json j{{"sites", sites_to_json(cfg.sites)},
           {"algorithm", detail::algorithm_to_json(cfg.algorithm)},
           {"trainer", trainer_to_json(cfg.trainer)},
           {"heterogeneity", heterogeneity_to_json(cfg.heterogeneity)},
           {"data_seed", cfg.data_seed}};
    return detail::fnv1a(j.dump());
}

std::string federation_to_json(const FederationConfig& cfg) { return federation_json(cfg).dump(); }

std::string scenario_to_json(const SimScenario& scenario) {
    json j = federation_json(scenario.federation);
    j["simulation"] = simulation_json(scenario);
    return j.dump();
}

ConfigFile parse_config(const std::string& text, const std::string& source) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(source + ":" + std::to_string(line_of_offset(text, e.byte)) + ": invalid JSON: " + e.what());
    }
    try {
        if (!j.is_object()) throw E("top level must be an object");
        detail::reject_unknown_keys<E>(j,
                                       {"name", "sites", "rounds", "algorithm", "trainer", "heterogeneity",
                                        "on_client_loss", "min_clients_per_round", "checkpoint_path",
                                        "round_timeout_seconds", "startup_timeout_seconds", "data_seed", "client",
                                        "simulation"},
                                       "config");
        ConfigFile out;
        out.federation = parse_federation(j);
        out.federation.validate();
        if (j.contains("simulation")) {
            out.simulation = parse_simulation(j["simulation"], out.federation);
            out.simulation->validate();
        }
        return out;
    } catch (const Error& e) {
        // Strip the "ConfigError: " prefix of nested errors before re-anchoring.
        std::string msg = e.what();
        const std::string prefix = std::string(e.kind()) + ": ";
        if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
        throw ConfigError(source + ":" + std::to_string(anchor_line(text, msg)) + ": " + msg);
    }
}

ConfigFile load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string() + ": cannot read file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

SimScenario load_scenario(const std::filesystem::path& path) {
    auto file = load_config(path);
    if (!file.simulation) {
        SimScenario s;
        s.federation = std::move(file.federation);
        return s;
    }
    return std::move(*file.simulation);
}

}  // namespace fedrun
