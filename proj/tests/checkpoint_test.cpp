#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fedrun/checkpoint.hpp"
#include "fedrun/errors.hpp"

using namespace fedrun;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "fedrun_checkpoint_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

Checkpoint sample(std::uint64_t round) {
    Checkpoint cp;
    cp.round = round;
    cp.global = ParameterVector({0.1, -2.5, 1e-300, 0.30000000000000004});
    cp.config_hash = 0xfeedbeefcafe;
    RoundRecord rec;
    rec.round = round;
    rec.per_client["a"] = ClientRoundStats{1.5, 0.5, 0.0, true};
    rec.span_seconds = 2.0;
    cp.history.push_back(rec);
    return cp;
}

}  // namespace

TEST(Checkpoint, ResumeAfterRoundSevenStartsRoundEight) {
    const auto path = temp_file("seven.json");
    write_checkpoint(path, sample(7));
    const auto cp = resume_from_checkpoint(path, 0xfeedbeefcafe);
    EXPECT_EQ(cp.round, 7u);
    EXPECT_EQ(cp.next_round(), 8u);
    EXPECT_EQ(cp.global, sample(7).global);
    EXPECT_EQ(cp.history, sample(7).history);
    EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
}

TEST(Checkpoint, TruncatedFileIsRejected) {
    const auto path = temp_file("truncated.json");
    write_checkpoint(path, sample(3));
    const auto size = std::filesystem::file_size(path);
    for (auto keep : {std::uintmax_t{0}, size / 3, size - 2}) {
        std::filesystem::resize_file(path, keep);
        EXPECT_THROW(resume_from_checkpoint(path, std::nullopt), CheckpointError) << keep;
        write_checkpoint(path, sample(3));
    }
}

TEST(Checkpoint, TamperedValueFailsChecksum) {
    const auto path = temp_file("tampered.json");
    write_checkpoint(path, sample(3));
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    const auto pos = text.find("-2.5");
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, 4, "-2.6");
    EXPECT_THROW(parse_checkpoint(text, std::nullopt), CheckpointError);
}

TEST(Checkpoint, MissingFileAndHashMismatch) {
    EXPECT_THROW(resume_from_checkpoint(temp_file("absent.json"), std::nullopt), CheckpointError);
    const auto path = temp_file("hash.json");
    write_checkpoint(path, sample(1));
    EXPECT_THROW(resume_from_checkpoint(path, 1234), CheckpointError);
}

TEST(Checkpoint, UnwritableDirectoryIsIoError) {
    EXPECT_THROW(write_checkpoint("/nonexistent-dir/cp.json", sample(0)), IoError);
}
