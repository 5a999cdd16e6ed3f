#pragma once

// Recovers typed structures from free-text model output: the expert mapping,
// the seven-step aggregation transcript, best-answer selections and judge
// verdicts. Every parser returns a value or throws ParseError; none of them
// assume well-formed input.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mep/error.hpp"

namespace mep::transcript {

enum class ParseErrc {
    NoAnswerMarker,
    MalformedMapping,
    CountMismatch,
    NoCombinedAnswer,
    NoChoice,
    OutOfRange,
    NoMatch,
    NoVerdict,
};

std::string_view to_string(ParseErrc code);

using ParseError = CodedError<ParseErrc>;

struct ExpertSpec {
    std::string role;
    std::string description;
    int ordinal = 0;  // 1-based

    bool operator==(const ExpertSpec&) const = default;
};

/// The expert list parsed but its size differs from the requested count.
class CountMismatchError : public ParseError {
public:
    CountMismatchError(std::size_t found, std::size_t expected, std::vector<ExpertSpec> partial);

    [[nodiscard]] std::size_t found() const noexcept { return found_; }
    [[nodiscard]] std::size_t expected() const noexcept { return expected_; }
    [[nodiscard]] const std::vector<ExpertSpec>& partial() const noexcept { return partial_; }

private:
    std::size_t found_;
    std::size_t expected_;
    std::vector<ExpertSpec> partial_;
};

/// A selection named an answer index outside 1..n.
class OutOfRangeError : public ParseError {
public:
    OutOfRangeError(long long index, int n);

    [[nodiscard]] long long index() const noexcept { return index_; }

private:
    long long index_;
};

/// Best-answer choice: one of the expert answers or the combined answer.
class Selection {
public:
    static Selection combined() { return Selection(0); }
    static Selection expert(int ordinal);

    [[nodiscard]] bool is_combined() const noexcept { return ordinal_ == 0; }
    /// Expert ordinal (1-based); 0 for the combined answer.
    [[nodiscard]] int ordinal() const noexcept { return ordinal_; }
    /// "Combined answer" or "Answer k", the spelling used in prompts.
    [[nodiscard]] std::string label() const;

    bool operator==(const Selection&) const = default;

private:
    explicit Selection(int ordinal) : ordinal_(ordinal) {}
    int ordinal_;
};

enum class Verdict { WinA, WinB, Draw };

std::string_view to_string(Verdict verdict);
std::optional<Verdict> parse_verdict_name(std::string_view name);

enum class Section {
    Agreed,
    Conflicted,
    Resolved,
    Uniques,
    MergedFacts,
    CombinedAnswer,
    BestChoice,
    Explanation,
    FinalAnswer,
};

std::string_view to_string(Section section);
/// Canonical label line prefix (including the colon) emitted for `section`.
std::string_view canonical_label(Section section);

struct ParseFlag {
    enum class Kind { MissingSection, FallbackUsed, FinalAnswerDivergence };

    Kind kind;
    std::optional<Section> section;  // set for MissingSection

    static ParseFlag missing(Section s) { return {Kind::MissingSection, s}; }
    static ParseFlag fallback() { return {Kind::FallbackUsed, std::nullopt}; }
    static ParseFlag divergence() { return {Kind::FinalAnswerDivergence, std::nullopt}; }

    /// "MissingSection(FinalAnswer)", "FallbackUsed", "FinalAnswerDivergence".
    [[nodiscard]] std::string str() const;
    static std::optional<ParseFlag> from_string(std::string_view text);

    bool operator==(const ParseFlag&) const = default;
};

struct AggregationTranscript {
    std::string agreed;
    std::string conflicted;
    std::string resolved;
    std::string uniques;
    std::string merged_facts;
    std::string combined_answer;
    Selection best_choice = Selection::combined();
    std::string explanation;
    std::string final_answer;
    std::vector<ParseFlag> flags;

    [[nodiscard]] bool has_flag(const ParseFlag& flag) const;
    void add_flag(const ParseFlag& flag);
};

/// Which sections a transcript is expected to carry. The naive-aggregation
/// prompt only asks for the combined answer and the selection block.
enum class TranscriptLayout { SevenStep, Naive };

/// Parses the brace-enclosed role -> description mapping following the last
/// "Answer:" marker. Accepts single or double quotes and trailing commas.
std::vector<ExpertSpec> parse_expert_list(std::string_view text, int n);

/// Recovers the aggregation sections by their labelled lines. When the final
/// answer section is absent or empty, the combined answer stands in and the
/// FallbackUsed flag is set.
AggregationTranscript parse_aggregation_transcript(std::string_view text, int n,
                                                   TranscriptLayout layout = TranscriptLayout::SevenStep);

/// Case-insensitive; the earliest of "combined" or "answer <k>" wins.
Selection parse_selection(std::string_view fragment, int n);

/// Reads the last "Evaluation:" line.
Verdict parse_judge_verdict(std::string_view text);

}  // namespace mep::transcript
