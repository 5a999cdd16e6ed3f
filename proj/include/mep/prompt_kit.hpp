#pragma once

// Renders every prompt the pipelines send. Templates are UTF-8 text resources
// with `{name}` placeholders; the defaults are compiled in from
// resources/prompts/ and can be overridden from a directory at runtime.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mep/error.hpp"

namespace mep::prompts {

enum class PromptErrc {
    EmptyInstruction,
    EmptyField,
    EmptyAnswerList,
    InvalidCount,
    MissingContext,
    UnexpectedContext,
    WrongKind,
    UnfilledPlaceholder,
    TemplateUnreadable,
};

using PromptError = CodedError<PromptErrc>;

enum class PromptKind {
    ExpertGeneration,
    ExpertCasting,
    Aggregation,
    ZeroShot,
    ZeroShotCoT,
    SelfRefineFeedback,
    SelfRefineRevise,
    ExpertPromptingIdentity,
    ExpertPromptingAnswer,
    NaiveAggregation,
    JudgeInformativeness,
    JudgeUsefulness,
};

inline constexpr std::array kAllPromptKinds = {
    PromptKind::ExpertGeneration,     PromptKind::ExpertCasting,          PromptKind::Aggregation,
    PromptKind::ZeroShot,             PromptKind::ZeroShotCoT,            PromptKind::SelfRefineFeedback,
    PromptKind::SelfRefineRevise,     PromptKind::ExpertPromptingIdentity, PromptKind::ExpertPromptingAnswer,
    PromptKind::NaiveAggregation,     PromptKind::JudgeInformativeness,   PromptKind::JudgeUsefulness,
};

std::string_view to_string(PromptKind kind);
/// Resource file name (without directory) holding the template for `kind`.
std::string_view resource_name(PromptKind kind);

enum class JudgeMetric { Informativeness, Usefulness };

std::string_view to_string(JudgeMetric metric);
std::optional<JudgeMetric> parse_judge_metric(std::string_view name);

/// Delimiter line separating answer blocks in aggregation prompts.
inline constexpr std::string_view kAnswerDelimiter = "###";
/// Indentation applied to every nonblank answer line inside a block.
inline constexpr std::string_view kAnswerIndent = "    ";

struct RenderedPrompt {
    PromptKind kind;
    std::string text;
    std::vector<std::pair<std::string, std::string>> placeholders_filled;  // (name, value digest)
};

/// A parsed template: literal runs interleaved with named placeholders. A
/// placeholder is `{identifier}`; any other brace is literal text.
class Template {
public:
    Template() = default;
    explicit Template(std::string_view source);

    /// Single-pass substitution; substituted values are never re-scanned.
    /// Throws PromptError(UnfilledPlaceholder) for a name missing in `values`.
    [[nodiscard]] std::string render(const std::map<std::string, std::string, std::less<>>& values) const;

    [[nodiscard]] std::vector<std::string> placeholders() const;
    /// Number of times `name` occurs as a placeholder.
    [[nodiscard]] std::size_t occurrences(std::string_view name) const;

private:
    struct Segment {
        bool is_placeholder;
        std::string text;
    };
    std::vector<Segment> segments_;
};

/// Optional inputs for baseline prompts. Which fields must be present depends
/// on the kind (see render_baseline).
struct BaselineContext {
    std::optional<std::string> answer;
    std::optional<std::string> feedback;
    std::optional<std::string> expert_identity;
    std::vector<std::string> answers;

    [[nodiscard]] bool empty() const { return !answer && !feedback && !expert_identity && answers.empty(); }
};

struct ExpertIdentity {
    std::string role;
    std::string description;
};

class PromptKit {
public:
    /// The compiled-in templates.
    static const PromptKit& builtin();
    /// Templates read from `directory`; kinds without a file there keep the
    /// compiled-in text.
    static PromptKit from_directory(const std::filesystem::path& directory);

    [[nodiscard]] const Template& template_for(PromptKind kind) const;

    [[nodiscard]] RenderedPrompt render_expert_generation(std::string_view instruction, int n) const;
    [[nodiscard]] RenderedPrompt render_expert_casting(std::string_view instruction,
                                                       const ExpertIdentity& expert) const;
    [[nodiscard]] RenderedPrompt render_aggregation(std::string_view instruction,
                                                    const std::vector<std::string>& answers) const;

    /// Baseline prompts. Context requirements:
    ///   ZeroShot, ZeroShotCoT, ExpertPromptingIdentity: none
    ///   SelfRefineFeedback: answer
    ///   SelfRefineRevise: answer and feedback
    ///   ExpertPromptingAnswer: expert_identity
    ///   NaiveAggregation: answers (nonempty)
    [[nodiscard]] RenderedPrompt render_baseline(PromptKind kind, std::string_view instruction,
                                                 const BaselineContext& context = {}) const;

    [[nodiscard]] RenderedPrompt render_judge(JudgeMetric metric, std::string_view question,
                                              std::string_view answer_a, std::string_view answer_b) const;

private:
    PromptKit() = default;
    [[nodiscard]] RenderedPrompt render(PromptKind kind,
                                        const std::map<std::string, std::string, std::less<>>& values) const;
    [[nodiscard]] RenderedPrompt render_answer_set(PromptKind kind, std::string_view instruction,
                                                   const std::vector<std::string>& answers) const;

    std::map<PromptKind, Template> templates_;
};

/// The `"[role k]": "[description k]"` mapping scaffold for n roles.
std::string expert_answer_scaffold(int n);
/// Answer blocks joined by delimiter lines, each answer indented.
std::string format_answer_blocks(const std::vector<std::string>& answers);
/// Inverse of format_answer_blocks over the region between the first and
/// last delimiter lines of `prompt`.
std::vector<std::string> extract_answer_blocks(std::string_view prompt);

/// Every template rendered with sample inputs, for auditing.
std::string dump_prompts(const PromptKit& kit = PromptKit::builtin());

}  // namespace mep::prompts
