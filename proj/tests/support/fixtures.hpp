#pragma once

// Shared helpers for tests: temporary directories, mock gateways, random
// viewset fixtures and synthetic benchmark files in their published layouts.

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mep/llm_gateway.hpp"
#include "mep/ngt_oracle.hpp"
#include "mep/pipelines.hpp"

namespace mep::testing {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(std::string_view tag = "mep");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    [[nodiscard]] std::filesystem::path operator/(std::string_view name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

void write_file(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Gateway over a backend with no backoff delay.
struct Rig {
    explicit Rig(std::shared_ptr<gateway::Backend> backend, gateway::PriceTable prices = {}, int max_retries = 3,
                 std::shared_ptr<gateway::ResponseCache> cache = nullptr);

    std::shared_ptr<gateway::Backend> backend;
    gateway::UsageLedger ledger;
    gateway::Gateway gw;
};

struct OracleRig : Rig {
    explicit OracleRig(const oracle::OracleFixture& fixture, gateway::PriceTable prices = {});

    std::shared_ptr<gateway::MockBackend> mock;
};

/// Fixture with `n` experts over topics t1..t<topics>; each expert holds each
/// topic with probability 1/2 and a random polarity.
oracle::OracleFixture random_fixture(std::mt19937_64& rng, int n, int topics);

/// The three-viewset example used throughout the docs:
///   V1 = {(t1,+),(t2,+)}, V2 = {(t1,+),(t3,+)}, V3 = {(t1,+),(t3,-),(t4,+)}
oracle::OracleFixture reference_fixture();

std::vector<oracle::Keypoint> keypoints_of(std::string_view kp_section);

// Synthetic benchmark files -------------------------------------------------

/// `open` open-ended questions over `topics` fields plus `closed` rows of other
/// question types, interleaved.
void write_expertqa(const std::filesystem::path& path, std::size_t open = 528, std::size_t topics = 32,
                    std::size_t closed = 40);
void write_truthfulqa(const std::filesystem::path& path, std::size_t count);
void write_factualityprompt(const std::filesystem::path& dir, std::size_t factual = 600,
                            std::size_t nonfactual = 700);
void write_bold(const std::filesystem::path& path, std::size_t actors = 1587, std::size_t actresses = 776,
                std::size_t prompts_per_name = 3);
void write_honest(const std::filesystem::path& path, std::size_t count = 705);

/// Record with the fields the statistics read.
pipelines::PipelineRecord make_record(std::string sample_id, pipelines::Strategy strategy,
                                      std::optional<transcript::Selection> selection,
                                      std::vector<std::string> flags = {});

}  // namespace mep::testing
