#ifndef FEDRUN_CHECKPOINT_HPP_
#define FEDRUN_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedrun/metrics.hpp"
#include "fedrun/params.hpp"

namespace fedrun {

/// Server state after an aggregation: the global model of `round` plus the
/// round records so far.
struct Checkpoint {
    std::uint64_t round = 0;  // last aggregated round
    ParameterVector global = ParameterVector::zeros(1);
    std::uint64_t config_hash = 0;
    std::vector<RoundRecord> history;

    std::uint64_t next_round() const { return round + 1; }
};

/// Checkpoint document as written to disk (JSON with a checksum).
std::string serialize_checkpoint(const Checkpoint& cp);
/// Throws CheckpointError; `source` names the origin in messages.
Checkpoint parse_checkpoint(const std::string& text, std::optional<std::uint64_t> expected_hash,
                            const std::string& source = "checkpoint");

/// Atomic write: temp file in the same directory, fsync, rename. A crash at
/// any point leaves the previous checkpoint or the new one, never a mix.
/// Throws IoError.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& cp);

/// Throws CheckpointError when the file is missing, truncated, fails its
/// checksum, or was written under a different config hash.
Checkpoint resume_from_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash);

}  // namespace fedrun

#endif  // FEDRUN_CHECKPOINT_HPP_
