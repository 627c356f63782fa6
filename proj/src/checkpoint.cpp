#include "fedrun/checkpoint.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fedrun/errors.hpp"
#include "json_io.hpp"

namespace fedrun {

using detail::json;

namespace {

json body_json(const Checkpoint& cp) {
    ExperimentReport history;
    history.rounds = cp.history;
    return json{{"round", cp.round},
                {"global", detail::params_to_json(cp.global)},
                {"config_hash", cp.config_hash},
                {"history", json::parse(report_to_json(history))["rounds"]}};
}

void write_all(int fd, const std::string& data, const std::string& path) {
    std::size_t off = 0;
    while (off < data.size()) {
        const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw IoError("write " + path + ": " + std::strerror(errno));
        }
        off += static_cast<std::size_t>(n);
    }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& cp) {
    json body = body_json(cp);
    const std::string canonical = body.dump();
    json doc = std::move(body);
    doc["checksum"] = detail::fnv1a(canonical);
    return doc.dump() + "\n";
}

Checkpoint parse_checkpoint(const std::string& text, std::optional<std::uint64_t> expected_hash,
                            const std::string& source) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw CheckpointError(source + " is truncated or corrupt: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("checksum")) throw CheckpointError(source + " has no checksum");
    Checkpoint cp;
    try {
        const auto checksum = doc["checksum"].get<std::uint64_t>();
        json body = doc;
        body.erase("checksum");
        if (detail::fnv1a(body.dump()) != checksum) throw CheckpointError(source + " failed its checksum");
        cp.round = body.at("round").get<std::uint64_t>();
        cp.global = detail::params_from_json<CheckpointError>(body.at("global"), "global");
        cp.config_hash = body.at("config_hash").get<std::uint64_t>();
        json history{{"totals", {{"train_seconds", 0.0}, {"validate_seconds", 0.0}, {"aggregate_seconds", 0.0}}},
                     {"rounds", body.at("history")},
                     {"final_scores", json::object()}};
        cp.history = report_from_json(history.dump()).rounds;
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError(source + " is malformed: " + e.what());
    }
    if (expected_hash && *expected_hash != cp.config_hash) {
        throw CheckpointError(source + " was written under a different config (hash " +
                              std::to_string(cp.config_hash) + ", expected " + std::to_string(*expected_hash) + ")");
    }
    return cp;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
    const std::string text = serialize_checkpoint(cp);
    auto tmp = path;
    tmp += ".tmp";
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw IoError("open " + tmp.string() + ": " + std::strerror(errno));
    try {
        write_all(fd, text, tmp.string());
        if (::fsync(fd) != 0) throw IoError("fsync " + tmp.string() + ": " + std::strerror(errno));
    } catch (...) {
        ::close(fd);
        ::unlink(tmp.c_str());
        throw;
    }
    ::close(fd);
    if (::rename(tmp.c_str(), path.c_str()) != 0) {
        const std::string err = std::strerror(errno);
        ::unlink(tmp.c_str());
        throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + err);
    }
}

Checkpoint resume_from_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("no checkpoint at " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str(), expected_hash, path.string());
}

}  // namespace fedrun
