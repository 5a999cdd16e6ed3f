#pragma once

// Benchmark loaders, judge-based pairwise comparison and summary statistics.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mep/error.hpp"
#include "mep/llm_gateway.hpp"
#include "mep/pipelines.hpp"
#include "mep/prompt_kit.hpp"
#include "mep/task.hpp"
#include "mep/transcript.hpp"

namespace mep::evaluation {

enum class EvalErrc {
    SourceMissing,
    SchemaMismatch,
    EmptyScores,
    OutOfRangeScore,
    EmptyInput,
    NoEligibleRecords,
    ScorerUnavailable,
    NoVerdict,
};

using EvalError = CodedError<EvalErrc>;

// ---------------------------------------------------------------------------
// Loaders

inline constexpr std::size_t kFactualityPromptSample = 250;
inline constexpr std::size_t kBoldPerCategory = 776;

/// Loads one benchmark.
///   ExpertQA       JSONL {question, field | metadata.field}; when a
///                  question_type is present only open-ended ones are kept
///   TruthfulQA     JSONL {question, category}
///   FactualityPrompt{Factual,Nonfactual}
///                  JSONL {prompt}; `source` is the file or the directory
///                  holding fever_{factual,nonfactual}_final.jsonl; 250
///                  prompts sampled with `seed`, kept in file order
///   BOLD           gender_prompt.json {group: {name: [prompts]}}; first
///                  prompt per name; American_actors and American_actresses
///                  each sampled down to 776 with `seed`
///   HONEST         JSONL {template_masked | masked_template, category?};
///                  every "[M]" removed
/// Throws EvalError(SourceMissing | SchemaMismatch).
std::vector<Task> load_dataset(Dataset kind, const std::filesystem::path& source, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Scores

struct ScoreReport {
    std::string dataset;
    std::string strategy;  // "A vs B" for pairwise reports
    std::string metric;
    std::vector<std::pair<std::string, double>> values;
    std::size_t samples = 0;
    std::size_t excluded = 0;

    [[nodiscard]] std::optional<double> value(std::string_view name) const;
};

/// Fraction of scores at or above `threshold`.
double toxicity_ratio(std::span<const double> scores, double threshold = 0.5);

struct JudgeOptions {
    std::string model_id = "gpt-3.5-turbo-0613";
    double temperature = 0.0;
    int max_retries = 1;  // re-prompts when no verdict can be read
    std::string sample_id;
};

/// Asks the judge which of `answer_a`/`answer_b` is better. With swap_mode
/// both orderings are judged; agreement keeps the verdict, disagreement is a
/// Draw. Throws EvalError(NoVerdict) when a reply stays unreadable after the
/// retries; gateway errors propagate.
transcript::Verdict judge_pair(std::string_view question, std::string_view answer_a, std::string_view answer_b,
                               prompts::JudgeMetric metric, gateway::Gateway& gw, bool swap_mode,
                               const JudgeOptions& options = {},
                               const prompts::PromptKit& kit = prompts::PromptKit::builtin());

/// Win/draw/lose percentages (from A's side) rounded to 0.1 and summing to
/// exactly 100.
ScoreReport win_report(std::span<const transcript::Verdict> verdicts, std::size_t excluded = 0);

struct SelectionStats {
    double ratio = 0.0;
    std::size_t combined = 0;
    std::size_t eligible = 0;
    std::size_t excluded = 0;  // aggregating records that failed or used the fallback
};

/// Fraction of eligible aggregating records whose selection is the combined
/// answer. Throws EvalError(NoEligibleRecords).
SelectionStats selection_ratio(std::span<const pipelines::PipelineRecord> records);

// ---------------------------------------------------------------------------
// External scorers

struct ScoreRequest {
    std::string sample_id;
    std::string prompt;
    std::string answer;
};

class Scorer {
public:
    virtual ~Scorer() = default;
    /// nullopt when the scorer rejects the sample. Throws
    /// EvalError(ScorerUnavailable) when the scorer cannot be reached.
    virtual std::optional<double> score(const ScoreRequest& request) = 0;
};

class CallbackScorer : public Scorer {
public:
    using Fn = std::function<std::optional<double>(const ScoreRequest&)>;
    explicit CallbackScorer(Fn fn) : fn_(std::move(fn)) {}
    std::optional<double> score(const ScoreRequest& request) override { return fn_(request); }

private:
    Fn fn_;
};

/// POSTs {sample_id, prompt, answer} to `url` and reads {score}.
class HttpScorer : public Scorer {
public:
    explicit HttpScorer(std::string url);
    std::optional<double> score(const ScoreRequest& request) override;

private:
    std::string scheme_host_;
    std::string path_;
};

/// Runs `command` through /bin/sh and exchanges one JSON object per line:
/// a request line on its stdin, a {score} line back on its stdout.
class SubprocessScorer : public Scorer {
public:
    explicit SubprocessScorer(std::string command);
    ~SubprocessScorer() override;
    SubprocessScorer(const SubprocessScorer&) = delete;
    SubprocessScorer& operator=(const SubprocessScorer&) = delete;

    std::optional<double> score(const ScoreRequest& request) override;

private:
    void start();
    void stop();

    std::string command_;
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
};

/// Mean score over successful records, times 100. Failed records and
/// rejected samples are counted in `excluded`. Throws
/// EvalError(ScorerUnavailable) when `scorer` is null.
ScoreReport external_score(std::span<const pipelines::PipelineRecord> records, Scorer* scorer,
                           std::string metric = "external");

// ---------------------------------------------------------------------------
// Record summaries

struct RecordSummary {
    std::size_t records = 0;
    std::size_t failed = 0;
    std::optional<SelectionStats> selection;  // absent without eligible records
    std::size_t calls = 0;
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
    double avg_tokens_per_sample = 0.0;
    double cost = 0.0;
    std::map<std::string, std::size_t> flag_counts;
    std::map<std::string, std::size_t> error_counts;
};

RecordSummary summarize_records(std::span<const pipelines::PipelineRecord> records);

}  // namespace mep::evaluation
