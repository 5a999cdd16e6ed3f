#pragma once

// Strategy orchestration: Multi-expert Prompting and the baselines, each with
// a fixed number of model calls per sample.
//
//   strategy              calls
//   multi-expert          1 + n + 1   (generate experts, cast each, aggregate)
//   zero-shot             1
//   zero-shot-cot         1
//   self-refine           1 + 2 * (feedback + revise) = 5
//   expert-prompting      2           (identity, answer)
//   fixed-temp-agg        n + 1
//   var-temp-agg          n + 1       (temperature ladder applied positionally)
//   expert-prompting-agg  1 + n + 1
//   naive-agg             1 + n + 1
//
// Parse-retry re-prompts are tagged "retry" and excluded from call_count.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mep/error.hpp"
#include "mep/llm_gateway.hpp"
#include "mep/prompt_kit.hpp"
#include "mep/task.hpp"
#include "mep/transcript.hpp"

namespace mep::pipelines {

enum class Strategy {
    MultiExpert,
    ZeroShot,
    ZeroShotCoT,
    SelfRefine,
    ExpertPrompting,
    FixedTempAgg,
    VarTempAgg,
    ExpertPromptingAgg,
    NaiveAgg,
};

inline constexpr Strategy kAllStrategies[] = {
    Strategy::MultiExpert,  Strategy::ZeroShot,   Strategy::ZeroShotCoT,        Strategy::SelfRefine,
    Strategy::ExpertPrompting, Strategy::FixedTempAgg, Strategy::VarTempAgg, Strategy::ExpertPromptingAgg,
    Strategy::NaiveAgg,
};

std::string_view to_string(Strategy strategy);
std::optional<Strategy> parse_strategy(std::string_view name);
/// True for strategies whose record carries a transcript and a selection.
bool aggregates(Strategy strategy);
/// Non-retry model calls a strategy makes for one sample.
int expected_call_count(Strategy strategy, int n);

struct TemperatureProfile {
    std::string name;
    double base = 0.0;
    std::vector<double> ladder;

    static TemperatureProfile chatgpt() { return {"chatgpt", 0.0, {0.0, 0.4, 0.8}}; }
    static TemperatureProfile mistral() { return {"mistral", 0.1, {0.1, 0.4, 0.8}}; }
    static std::optional<TemperatureProfile> named(std::string_view name);
};

enum class ConfigErrc { InvalidCount, LadderMismatch, InvalidTemperature, InvalidRetries };
using ConfigError = CodedError<ConfigErrc>;

struct PipelineConfig {
    Strategy strategy = Strategy::MultiExpert;
    int n = 3;
    TemperatureProfile temperature = TemperatureProfile::chatgpt();
    std::string model_id = "gpt-3.5-turbo-0613";
    int max_parse_retries = 1;
    int max_output_tokens = gateway::kDefaultMaxOutputTokens;
    int fanout_workers = 1;  // concurrent casting calls within one sample

    /// Throws ConfigError.
    void validate() const;
};

struct UsageSlice {
    int calls = 0;  // non-cached calls, retries included
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
    double cost = 0.0;
};

struct ErrorInfo {
    std::string kind;
    std::string message;
};

struct PipelineRecord {
    std::string sample_id;
    std::string instruction;
    Dataset dataset = Dataset::Adhoc;
    std::string category;
    Strategy strategy = Strategy::MultiExpert;
    std::string model_id;
    std::vector<transcript::ExpertSpec> experts;
    std::optional<std::string> expert_identity;  // ExpertPrompting variants
    std::vector<std::string> expert_answers;
    std::optional<transcript::AggregationTranscript> transcript;
    std::string final_answer;
    std::optional<transcript::Selection> selection;
    int call_count = 0;
    int retry_calls = 0;
    std::vector<double> temperatures;  // per non-retry call, in call order
    UsageSlice usage;
    std::vector<std::string> flags;
    double wall_time_s = 0.0;
    std::optional<ErrorInfo> error;

    [[nodiscard]] bool ok() const { return !error.has_value(); }
};

enum class FailureKind { ExpertParseFailure, AggregationParseFailure, EmptyResponse, BackendUnavailable,
                         BackendRejected, InvalidInput };

std::string_view to_string(FailureKind kind);

/// A strategy could not finish; carries the partial record (with `error` set).
class PipelineError : public CodedError<FailureKind> {
public:
    PipelineError(FailureKind kind, const std::string& message, PipelineRecord partial);

    [[nodiscard]] const PipelineRecord& partial() const noexcept { return partial_; }

private:
    PipelineRecord partial_;
};

PipelineRecord run_multi_expert(const Task& task, const PipelineConfig& cfg, gateway::Gateway& gw,
                                const prompts::PromptKit& kit = prompts::PromptKit::builtin());

/// Every strategy other than MultiExpert; `kind` must equal cfg.strategy.
PipelineRecord run_baseline(Strategy kind, const Task& task, const PipelineConfig& cfg, gateway::Gateway& gw,
                            const prompts::PromptKit& kit = prompts::PromptKit::builtin());

/// Dispatches on cfg.strategy.
PipelineRecord run_strategy(const Task& task, const PipelineConfig& cfg, gateway::Gateway& gw,
                            const prompts::PromptKit& kit = prompts::PromptKit::builtin());

// ---------------------------------------------------------------------------
// Batches

enum class SinkErrc { SinkUnwritable };
using SinkError = CodedError<SinkErrc>;

class RecordSink {
public:
    virtual ~RecordSink() = default;
    [[nodiscard]] virtual bool contains(const std::string& sample_id) const = 0;
    virtual void append(const PipelineRecord& record) = 0;
};

/// Append-only JSONL file. Sample ids already present when the file is
/// opened (or appended since) are reported by contains().
class JsonlSink : public RecordSink {
public:
    explicit JsonlSink(std::filesystem::path path);

    [[nodiscard]] bool contains(const std::string& sample_id) const override;
    void append(const PipelineRecord& record) override;
    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::set<std::string> ids_;
    std::ofstream out_;
};

class MemorySink : public RecordSink {
public:
    [[nodiscard]] bool contains(const std::string& sample_id) const override;
    void append(const PipelineRecord& record) override;
    [[nodiscard]] std::vector<PipelineRecord> records() const;

private:
    mutable std::mutex mutex_;
    std::vector<PipelineRecord> records_;
};

struct BatchReport {
    std::size_t completed = 0;
    std::size_t failed = 0;
    std::size_t skipped = 0;
};

struct BatchOptions {
    int workers = 1;
};

/// Runs every task not already in the sink. Failed samples are persisted with
/// their cause and do not stop the batch.
BatchReport run_batch(const std::vector<Task>& tasks, const PipelineConfig& cfg, gateway::Gateway& gw,
                      RecordSink& sink, BatchOptions options = {},
                      const prompts::PromptKit& kit = prompts::PromptKit::builtin());

}  // namespace mep::pipelines
