#include "mep/transcript.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

namespace mep::transcript {

namespace {

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::string to_lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(), lower);
    return out;
}

std::string_view trim(std::string_view text) {
    while (!text.empty() && is_space(text.front())) text.remove_prefix(1);
    while (!text.empty() && is_space(text.back())) text.remove_suffix(1);
    return text;
}

bool istarts_with(std::string_view text, std::string_view prefix) {
    if (text.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (lower(text[i]) != lower(prefix[i])) return false;
    }
    return true;
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        if (line.ends_with('\r')) line.remove_suffix(1);
        lines.push_back(line);
        pos = end + 1;
    }
    return lines;
}

// ---------------------------------------------------------------------------
// Section anchors

struct LabelAlias {
    Section section;
    std::string_view prefix;
};

// Longer aliases first so that e.g. "best answer choice" beats nothing shorter.
constexpr std::array kAliases = {
    LabelAlias{Section::Agreed, "facts that more than half of the answers have"},
    LabelAlias{Section::Agreed, "agreed facts"},
    LabelAlias{Section::Conflicted, "conflicted facts among the answers"},
    LabelAlias{Section::Conflicted, "conficted facts among the answers"},
    LabelAlias{Section::Conflicted, "conflicted facts"},
    LabelAlias{Section::Resolved, "resolved facts from step 2"},
    LabelAlias{Section::Resolved, "resolved facts"},
    LabelAlias{Section::Uniques, "facts that are excluded from step 2 and 1 and only one of the answers have"},
    LabelAlias{Section::Uniques, "facts that are excluded from step 1 and 2 and only one of the answers have"},
    LabelAlias{Section::Uniques, "facts that are excluded from step 2 and 1"},
    LabelAlias{Section::Uniques, "unique facts"},
    LabelAlias{Section::MergedFacts, "facts from step 1, 3, 4"},
    LabelAlias{Section::MergedFacts, "facts from steps 1, 3, 4"},
    LabelAlias{Section::MergedFacts, "facts from step 1, 3 and 4"},
    LabelAlias{Section::CombinedAnswer, "combined answer"},
    LabelAlias{Section::BestChoice, "best answer choice"},
    LabelAlias{Section::Explanation, "explanation"},
    LabelAlias{Section::FinalAnswer, "final answer"},
};

/// Drops leading whitespace and markdown emphasis/heading/list markers.
std::string_view strip_decoration(std::string_view line) {
    while (!line.empty() && (is_space(line.front()) || line.front() == '*' || line.front() == '#' ||
                             line.front() == '_' || line.front() == '>')) {
        line.remove_prefix(1);
    }
    if (line.starts_with("- ")) line.remove_prefix(2);
    return line;
}

struct Anchor {
    std::size_t line;
    Section section;
    std::string_view inline_content;
};

/// A labelled line is an alias followed, after optional emphasis and a
/// parenthesised note, by a colon.
std::optional<Anchor> match_anchor(std::string_view raw, std::size_t index) {
    const std::string_view line = strip_decoration(raw);
    for (const auto& alias : kAliases) {
        if (!istarts_with(line, alias.prefix)) continue;
        std::string_view rest = line.substr(alias.prefix.size());
        while (!rest.empty() && (rest.front() == ' ' || rest.front() == '*' || rest.front() == '_')) rest.remove_prefix(1);
        if (!rest.empty() && rest.front() == '(') {
            const auto close = rest.find(')');
            if (close == std::string_view::npos) continue;
            rest.remove_prefix(close + 1);
            while (!rest.empty() && (rest.front() == ' ' || rest.front() == '*')) rest.remove_prefix(1);
        }
        if (rest.empty() || rest.front() != ':') continue;
        rest.remove_prefix(1);
        while (!rest.empty() && (is_space(rest.front()) || rest.front() == '*' || rest.front() == '_')) {
            rest.remove_prefix(1);
        }
        return Anchor{index, alias.section, rest};
    }
    return std::nullopt;
}

bool is_step_heading(std::string_view raw) {
    std::string_view line = strip_decoration(raw);
    if (!istarts_with(line, "step")) return false;
    line.remove_prefix(4);
    while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
    if (line.empty() || !is_digit(line.front())) return false;
    while (!line.empty() && is_digit(line.front())) line.remove_prefix(1);
    return !line.empty() && (line.front() == ':' || line.front() == '.' || line.front() == ')');
}

std::string strip_trailing_emphasis(std::string_view text) {
    text = trim(text);
    while (text.ends_with("**")) text = trim(text.substr(0, text.size() - 2));
    return std::string(text);
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(ParseErrc code) {
    switch (code) {
        case ParseErrc::NoAnswerMarker: return "NoAnswerMarker";
        case ParseErrc::MalformedMapping: return "MalformedMapping";
        case ParseErrc::CountMismatch: return "CountMismatch";
        case ParseErrc::NoCombinedAnswer: return "NoCombinedAnswer";
        case ParseErrc::NoChoice: return "NoChoice";
        case ParseErrc::OutOfRange: return "OutOfRange";
        case ParseErrc::NoMatch: return "NoMatch";
        case ParseErrc::NoVerdict: return "NoVerdict";
    }
    return "Unknown";
}

CountMismatchError::CountMismatchError(std::size_t found, std::size_t expected, std::vector<ExpertSpec> partial)
    : ParseError(ParseErrc::CountMismatch, "expected " + std::to_string(expected) + " experts, found " +
                                               std::to_string(found)),
      found_(found), expected_(expected), partial_(std::move(partial)) {}

OutOfRangeError::OutOfRangeError(long long index, int n)
    : ParseError(ParseErrc::OutOfRange,
                 "answer index " + std::to_string(index) + " outside 1.." + std::to_string(n)),
      index_(index) {}

Selection Selection::expert(int ordinal) {
    if (ordinal < 1) throw Error("expert selection ordinal must be at least 1");
    return Selection(ordinal);
}

std::string Selection::label() const { return is_combined() ? "Combined answer" : "Answer " + std::to_string(ordinal_); }

std::string_view to_string(Verdict verdict) {
    switch (verdict) {
        case Verdict::WinA: return "WinA";
        case Verdict::WinB: return "WinB";
        case Verdict::Draw: return "Draw";
    }
    return "Unknown";
}

std::optional<Verdict> parse_verdict_name(std::string_view name) {
    if (name == "WinA") return Verdict::WinA;
    if (name == "WinB") return Verdict::WinB;
    if (name == "Draw") return Verdict::Draw;
    return std::nullopt;
}

std::string_view to_string(Section section) {
    switch (section) {
        case Section::Agreed: return "Agreed";
        case Section::Conflicted: return "Conflicted";
        case Section::Resolved: return "Resolved";
        case Section::Uniques: return "Uniques";
        case Section::MergedFacts: return "MergedFacts";
        case Section::CombinedAnswer: return "CombinedAnswer";
        case Section::BestChoice: return "BestChoice";
        case Section::Explanation: return "Explanation";
        case Section::FinalAnswer: return "FinalAnswer";
    }
    return "Unknown";
}

std::string_view canonical_label(Section section) {
    switch (section) {
        case Section::Agreed: return "Facts that more than half of the answers have (Agreed Facts):";
        case Section::Conflicted: return "Conflicted facts among the answers (Conficted Facts):";
        case Section::Resolved: return "Resolved facts from Step 2:";
        case Section::Uniques: return "Facts that are excluded from Step 2 and 1 and only one of the answers have:";
        case Section::MergedFacts: return "Facts from Step 1, 3, 4:";
        case Section::CombinedAnswer: return "Combined answer:";
        case Section::BestChoice: return "Best answer choice:";
        case Section::Explanation: return "Explanation:";
        case Section::FinalAnswer: return "Final answer:";
    }
    return "";
}

std::string ParseFlag::str() const {
    switch (kind) {
        case Kind::MissingSection:
            return "MissingSection(" + std::string(to_string(section.value_or(Section::FinalAnswer))) + ")";
        case Kind::FallbackUsed: return "FallbackUsed";
        case Kind::FinalAnswerDivergence: return "FinalAnswerDivergence";
    }
    return "Unknown";
}

std::optional<ParseFlag> ParseFlag::from_string(std::string_view text) {
    if (text == "FallbackUsed") return fallback();
    if (text == "FinalAnswerDivergence") return divergence();
    constexpr std::string_view prefix = "MissingSection(";
    if (text.starts_with(prefix) && text.ends_with(')')) {
        const auto name = text.substr(prefix.size(), text.size() - prefix.size() - 1);
        for (int s = 0; s <= static_cast<int>(Section::FinalAnswer); ++s) {
            if (to_string(static_cast<Section>(s)) == name) return missing(static_cast<Section>(s));
        }
    }
    return std::nullopt;
}

bool AggregationTranscript::has_flag(const ParseFlag& flag) const {
    return std::find(flags.begin(), flags.end(), flag) != flags.end();
}

void AggregationTranscript::add_flag(const ParseFlag& flag) {
    if (!has_flag(flag)) flags.push_back(flag);
}

// ---------------------------------------------------------------------------
// Expert mapping

namespace {

class MappingParser {
public:
    explicit MappingParser(std::string_view text) : text_(text) {}

    std::vector<std::pair<std::string, std::string>> parse() {
        expect('{');
        std::vector<std::pair<std::string, std::string>> entries;
        skip_space();
        while (peek() != '}') {
            std::string key = quoted();
            skip_space();
            expect(':');
            skip_space();
            std::string value = quoted();
            entries.emplace_back(std::move(key), std::move(value));
            skip_space();
            if (peek() == ',') {
                ++pos_;
                skip_space();
            } else if (peek() != '}') {
                fail("expected ',' or '}'");
            }
        }
        return entries;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError(ParseErrc::MalformedMapping, "expert mapping: " + what + " at offset " + std::to_string(pos_));
    }

    char peek() const {
        if (pos_ >= text_.size()) fail("unexpected end of text");
        return text_[pos_];
    }

    void expect(char c) {
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    void skip_space() {
        while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
    }

    std::string quoted() {
        const char quote = peek();
        if (quote != '"' && quote != '\'') fail("expected a quoted string");
        ++pos_;
        std::string out;
        while (true) {
            const char c = peek();
            ++pos_;
            if (c == quote) break;
            if (c == '\\') {
                const char escaped = peek();
                ++pos_;
                switch (escaped) {
                    case 'n': out.push_back('\n'); break;
                    case 't': out.push_back('\t'); break;
                    default: out.push_back(escaped); break;
                }
                continue;
            }
            out.push_back(c);
        }
        return out;
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<ExpertSpec> parse_expert_list(std::string_view text, int n) {
    if (n < 1) throw Error("expected expert count must be at least 1");

    const std::string folded = to_lower(text);
    constexpr std::string_view marker = "answer:";
    std::optional<std::size_t> last_marker;
    std::optional<std::size_t> mapping_start;
    for (auto pos = folded.find(marker); pos != std::string::npos; pos = folded.find(marker, pos + 1)) {
        last_marker = pos;
        auto cursor = pos + marker.size();
        while (cursor < text.size() && is_space(text[cursor])) ++cursor;
        if (cursor < text.size() && text[cursor] == '{') mapping_start = cursor;
    }
    if (!last_marker) throw ParseError(ParseErrc::NoAnswerMarker, "no \"Answer:\" marker in expert list");
    if (!mapping_start) throw ParseError(ParseErrc::MalformedMapping, "\"Answer:\" marker not followed by a mapping");

    const auto entries = MappingParser(text.substr(*mapping_start)).parse();
    std::vector<ExpertSpec> experts;
    std::set<std::string> seen;
    for (const auto& [raw_role, raw_description] : entries) {
        std::string role(trim(raw_role));
        std::string description(trim(raw_description));
        if (role.empty() || description.empty()) {
            throw ParseError(ParseErrc::MalformedMapping, "expert mapping has an empty role or description");
        }
        if (!seen.insert(to_lower(role)).second) {
            throw ParseError(ParseErrc::MalformedMapping, "duplicate expert role \"" + role + "\"");
        }
        experts.push_back(ExpertSpec{std::move(role), std::move(description), static_cast<int>(experts.size()) + 1});
    }
    if (experts.size() != static_cast<std::size_t>(n)) {
        const auto found = experts.size();
        throw CountMismatchError(found, static_cast<std::size_t>(n), std::move(experts));
    }
    return experts;
}

// ---------------------------------------------------------------------------
// Selection and verdicts

Selection parse_selection(std::string_view fragment, int n) {
    if (n < 1) throw Error("answer count must be at least 1");
    const std::string folded = to_lower(fragment);
    for (std::size_t i = 0; i < folded.size(); ++i) {
        const std::string_view rest(folded.data() + i, folded.size() - i);
        if (rest.starts_with("combined")) return Selection::combined();
        if (!rest.starts_with("answer")) continue;
        std::size_t j = i + 6;
        while (j < folded.size() && (folded[j] == ' ' || folded[j] == '#')) ++j;
        if (j >= folded.size() || !is_digit(folded[j])) continue;
        long long k = 0;
        while (j < folded.size() && is_digit(folded[j])) {
            k = std::min<long long>(k * 10 + (folded[j] - '0'), 1'000'000'000LL);
            ++j;
        }
        if (k < 1 || k > n) throw OutOfRangeError(k, n);
        return Selection::expert(static_cast<int>(k));
    }
    throw ParseError(ParseErrc::NoMatch, "no answer selection in \"" + std::string(fragment.substr(0, 80)) + "\"");
}

Verdict parse_judge_verdict(std::string_view text) {
    const auto lines = split_lines(text);
    std::optional<std::string> verdict_text;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string folded = to_lower(lines[i]);
        const auto pos = folded.find("evaluation:");
        if (pos == std::string::npos) continue;
        std::string_view rest = strip_decoration(std::string_view(lines[i]).substr(pos + 11));
        if (trim(rest).empty()) {
            for (std::size_t j = i + 1; j < lines.size(); ++j) {
                if (!trim(strip_decoration(lines[j])).empty()) {
                    rest = strip_decoration(lines[j]);
                    break;
                }
            }
        }
        verdict_text = to_lower(rest);
    }
    if (!verdict_text) throw ParseError(ParseErrc::NoVerdict, "no \"Evaluation:\" line in judge output");

    auto classify = [](const std::string& s, std::string_view a, std::string_view b,
                       std::string_view draw) -> std::optional<Verdict> {
        const bool has_a = s.find(a) != std::string::npos;
        const bool has_b = s.find(b) != std::string::npos;
        const bool has_draw = s.find(draw) != std::string::npos;
        if (has_a + has_b + has_draw != 1) return std::nullopt;
        return has_a ? Verdict::WinA : has_b ? Verdict::WinB : Verdict::Draw;
    };
    if (auto v = classify(*verdict_text, "answer 1 is better", "answer 2 is better", "draw")) return *v;
    if (auto v = classify(*verdict_text, "answer 1", "answer 2", "tie")) return *v;
    throw ParseError(ParseErrc::NoVerdict, "unrecognised verdict \"" + verdict_text->substr(0, 80) + "\"");
}

// ---------------------------------------------------------------------------
// Aggregation transcript

AggregationTranscript parse_aggregation_transcript(std::string_view text, int n, TranscriptLayout layout) {
    if (n < 1) throw Error("answer count must be at least 1");

    const auto lines = split_lines(text);
    std::vector<Anchor> anchors;
    std::vector<bool> boundary(lines.size(), false);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (auto anchor = match_anchor(lines[i], i)) {
            anchors.push_back(*anchor);
            boundary[i] = true;
        } else if (is_step_heading(lines[i])) {
            boundary[i] = true;
        }
    }

    auto last_of = [&](Section s, std::size_t before) -> const Anchor* {
        const Anchor* found = nullptr;
        for (const auto& a : anchors) {
            if (a.section == s && a.line < before) found = &a;
        }
        return found;
    };
    auto first_after = [&](Section s, std::size_t after) -> const Anchor* {
        for (const auto& a : anchors) {
            if (a.section == s && a.line > after) return &a;
        }
        return nullptr;
    };
    auto content_of = [&](const Anchor& anchor, bool to_end) {
        std::string out(anchor.inline_content);
        for (std::size_t i = anchor.line + 1; i < lines.size(); ++i) {
            if (!to_end && boundary[i]) break;
            out += '\n';
            out += lines[i];
        }
        return strip_trailing_emphasis(out);
    };

    const Anchor* choice = last_of(Section::BestChoice, lines.size());
    const std::size_t choice_line = choice ? choice->line : lines.size();

    // Sections preceding the selection: prefer the last occurrence before the
    // choice line (restated scaffolds come first), else any occurrence.
    auto locate_body = [&](Section s) {
        const Anchor* a = last_of(s, choice_line);
        return a ? a : last_of(s, lines.size());
    };

    AggregationTranscript result;
    const Anchor* combined = locate_body(Section::CombinedAnswer);
    if (!combined || content_of(*combined, false).empty()) {
        throw ParseError(ParseErrc::NoCombinedAnswer, "aggregation output has no combined answer");
    }
    result.combined_answer = content_of(*combined, false);

    if (!choice) throw ParseError(ParseErrc::NoChoice, "aggregation output has no best answer choice");
    result.best_choice = parse_selection(content_of(*choice, false), n);

    if (layout == TranscriptLayout::SevenStep) {
        const std::array<std::pair<Section, std::string*>, 5> body = {{
            {Section::Agreed, &result.agreed},
            {Section::Conflicted, &result.conflicted},
            {Section::Resolved, &result.resolved},
            {Section::Uniques, &result.uniques},
            {Section::MergedFacts, &result.merged_facts},
        }};
        for (const auto& [section, field] : body) {
            if (const Anchor* a = locate_body(section)) {
                *field = content_of(*a, false);
            } else {
                result.add_flag(ParseFlag::missing(section));
            }
        }
    }

    const Anchor* explanation = first_after(Section::Explanation, choice_line);
    if (!explanation) explanation = last_of(Section::Explanation, lines.size());
    if (explanation) {
        result.explanation = content_of(*explanation, false);
    } else {
        result.add_flag(ParseFlag::missing(Section::Explanation));
    }

    const Anchor* final_anchor = first_after(Section::FinalAnswer, choice_line);
    const bool final_after_choice = final_anchor != nullptr;
    if (!final_anchor) final_anchor = last_of(Section::FinalAnswer, lines.size());
    if (final_anchor) result.final_answer = content_of(*final_anchor, final_after_choice);

    if (result.final_answer.empty()) {
        if (!final_anchor) result.add_flag(ParseFlag::missing(Section::FinalAnswer));
        result.add_flag(ParseFlag::fallback());
        result.final_answer = result.combined_answer;
    }
    return result;
}

}  // namespace mep::transcript
