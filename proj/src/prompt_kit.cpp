#include "mep/prompt_kit.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "builtin_templates.hpp"
#include "mep/hashing.hpp"

namespace mep::prompts {

namespace {

using ValueMap = std::map<std::string, std::string, std::less<>>;

bool is_blank(std::string_view text) {
    return std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

bool is_identifier_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0 || c == '_'; }
bool is_identifier_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

std::string strip_final_newline(std::string_view text) {
    if (text.ends_with("\r\n")) text.remove_suffix(2);
    else if (text.ends_with('\n')) text.remove_suffix(1);
    return std::string(text);
}

std::string_view builtin_source(PromptKind kind) {
    const auto name = resource_name(kind);
    for (const auto& [file, text] : builtin::kTemplates) {
        if (file == name) return text;
    }
    throw PromptError(PromptErrc::TemplateUnreadable, "no compiled-in template " + std::string(name));
}

std::string number_phrase(std::size_t n, std::string_view singular, std::string_view plural) {
    static constexpr std::array<std::string_view, 11> kWords = {"zero", "one", "two",   "three", "four", "five",
                                                                "six",  "seven", "eight", "nine",  "ten"};
    std::string out = n < kWords.size() ? std::string(kWords[n]) : std::to_string(n);
    out += ' ';
    out += n == 1 ? singular : plural;
    return out;
}

void require_text(std::string_view value, std::string_view field) {
    if (is_blank(value)) {
        throw PromptError(PromptErrc::EmptyField, std::string(field) + " must be nonempty");
    }
}

void require_instruction(std::string_view instruction) {
    if (is_blank(instruction)) {
        throw PromptError(PromptErrc::EmptyInstruction, "instruction must be nonempty");
    }
}

}  // namespace

std::string_view to_string(PromptKind kind) {
    switch (kind) {
        case PromptKind::ExpertGeneration: return "ExpertGeneration";
        case PromptKind::ExpertCasting: return "ExpertCasting";
        case PromptKind::Aggregation: return "Aggregation";
        case PromptKind::ZeroShot: return "ZeroShot";
        case PromptKind::ZeroShotCoT: return "ZeroShotCoT";
        case PromptKind::SelfRefineFeedback: return "SelfRefineFeedback";
        case PromptKind::SelfRefineRevise: return "SelfRefineRevise";
        case PromptKind::ExpertPromptingIdentity: return "ExpertPromptingIdentity";
        case PromptKind::ExpertPromptingAnswer: return "ExpertPromptingAnswer";
        case PromptKind::NaiveAggregation: return "NaiveAggregation";
        case PromptKind::JudgeInformativeness: return "JudgeInformativeness";
        case PromptKind::JudgeUsefulness: return "JudgeUsefulness";
    }
    return "Unknown";
}

std::string_view resource_name(PromptKind kind) {
    switch (kind) {
        case PromptKind::ExpertGeneration: return "expert_generation.txt";
        case PromptKind::ExpertCasting: return "expert_casting.txt";
        case PromptKind::Aggregation: return "aggregation.txt";
        case PromptKind::ZeroShot: return "zero_shot.txt";
        case PromptKind::ZeroShotCoT: return "zero_shot_cot.txt";
        case PromptKind::SelfRefineFeedback: return "self_refine_feedback.txt";
        case PromptKind::SelfRefineRevise: return "self_refine_revise.txt";
        case PromptKind::ExpertPromptingIdentity: return "expert_prompting_identity.txt";
        case PromptKind::ExpertPromptingAnswer: return "expert_prompting_answer.txt";
        case PromptKind::NaiveAggregation: return "naive_aggregation.txt";
        case PromptKind::JudgeInformativeness: return "judge_informativeness.txt";
        case PromptKind::JudgeUsefulness: return "judge_usefulness.txt";
    }
    return "";
}

std::string_view to_string(JudgeMetric metric) {
    return metric == JudgeMetric::Informativeness ? "informativeness" : "usefulness";
}

std::optional<JudgeMetric> parse_judge_metric(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "informativeness") return JudgeMetric::Informativeness;
    if (lower == "usefulness") return JudgeMetric::Usefulness;
    return std::nullopt;
}

// ---------------------------------------------------------------------------

Template::Template(std::string_view source) {
    std::string literal;
    std::size_t i = 0;
    while (i < source.size()) {
        if (source[i] == '{' && i + 1 < source.size() && is_identifier_start(source[i + 1])) {
            std::size_t j = i + 1;
            while (j < source.size() && is_identifier_char(source[j])) ++j;
            if (j < source.size() && source[j] == '}') {
                if (!literal.empty()) segments_.push_back({false, std::move(literal)});
                literal.clear();
                segments_.push_back({true, std::string(source.substr(i + 1, j - i - 1))});
                i = j + 1;
                continue;
            }
        }
        literal.push_back(source[i]);
        ++i;
    }
    if (!literal.empty()) segments_.push_back({false, std::move(literal)});
}

std::string Template::render(const ValueMap& values) const {
    std::string out;
    for (const auto& segment : segments_) {
        if (!segment.is_placeholder) {
            out += segment.text;
            continue;
        }
        auto it = values.find(segment.text);
        if (it == values.end()) {
            throw PromptError(PromptErrc::UnfilledPlaceholder, "no value for placeholder {" + segment.text + "}");
        }
        out += it->second;
    }
    return out;
}

std::vector<std::string> Template::placeholders() const {
    std::vector<std::string> names;
    for (const auto& segment : segments_) {
        if (segment.is_placeholder && std::find(names.begin(), names.end(), segment.text) == names.end()) {
            names.push_back(segment.text);
        }
    }
    return names;
}

std::size_t Template::occurrences(std::string_view name) const {
    return static_cast<std::size_t>(std::count_if(segments_.begin(), segments_.end(), [&](const Segment& s) {
        return s.is_placeholder && s.text == name;
    }));
}

// ---------------------------------------------------------------------------

const PromptKit& PromptKit::builtin() {
    static const PromptKit kit = [] {
        PromptKit k;
        for (auto kind : kAllPromptKinds) k.templates_.emplace(kind, Template(strip_final_newline(builtin_source(kind))));
        return k;
    }();
    return kit;
}

PromptKit PromptKit::from_directory(const std::filesystem::path& directory) {
    if (!std::filesystem::is_directory(directory)) {
        throw PromptError(PromptErrc::TemplateUnreadable, "not a directory: " + directory.string());
    }
    PromptKit kit = builtin();
    for (auto kind : kAllPromptKinds) {
        const auto path = directory / resource_name(kind);
        if (!std::filesystem::exists(path)) continue;
        std::ifstream in(path, std::ios::binary);
        if (!in) throw PromptError(PromptErrc::TemplateUnreadable, "cannot read " + path.string());
        std::ostringstream buffer;
        buffer << in.rdbuf();
        kit.templates_[kind] = Template(strip_final_newline(buffer.str()));
    }
    return kit;
}

const Template& PromptKit::template_for(PromptKind kind) const { return templates_.at(kind); }

RenderedPrompt PromptKit::render(PromptKind kind, const ValueMap& values) const {
    const Template& tpl = template_for(kind);
    RenderedPrompt prompt{kind, tpl.render(values), {}};
    for (const auto& name : tpl.placeholders()) {
        prompt.placeholders_filled.emplace_back(name, short_digest(values.find(name)->second));
    }
    return prompt;
}

RenderedPrompt PromptKit::render_expert_generation(std::string_view instruction, int n) const {
    require_instruction(instruction);
    if (n < 1) throw PromptError(PromptErrc::InvalidCount, "expert count must be at least 1");
    return render(PromptKind::ExpertGeneration, {{"question", std::string(instruction)},
                                                 {"n", std::to_string(n)},
                                                 {"answer_scaffold", expert_answer_scaffold(n)}});
}

RenderedPrompt PromptKit::render_expert_casting(std::string_view instruction, const ExpertIdentity& expert) const {
    require_text(instruction, "instruction");
    require_text(expert.role, "expert role");
    require_text(expert.description, "expert description");
    return render(PromptKind::ExpertCasting,
                  {{"question", std::string(instruction)}, {"role", expert.role}, {"description", expert.description}});
}

RenderedPrompt PromptKit::render_answer_set(PromptKind kind, std::string_view instruction,
                                            const std::vector<std::string>& answers) const {
    require_instruction(instruction);
    if (answers.empty()) throw PromptError(PromptErrc::EmptyAnswerList, "at least one answer is required");
    for (std::size_t i = 0; i < answers.size(); ++i) require_text(answers[i], "answer " + std::to_string(i + 1));

    std::string answer_list;
    std::string choice_options;
    for (std::size_t i = 1; i <= answers.size(); ++i) {
        if (i > 1) {
            answer_list += ", ";
            choice_options += '/';
        }
        answer_list += "answer " + std::to_string(i);
        choice_options += "Answer " + std::to_string(i);
    }
    return render(kind, {{"question", std::string(instruction)},
                         {"answer_count", number_phrase(answers.size(), "answer", "answers")},
                         {"expert_count", number_phrase(answers.size(), "expert", "experts")},
                         {"answer_blocks", format_answer_blocks(answers)},
                         {"answer_list", answer_list},
                         {"choice_options", choice_options}});
}

RenderedPrompt PromptKit::render_aggregation(std::string_view instruction,
                                             const std::vector<std::string>& answers) const {
    return render_answer_set(PromptKind::Aggregation, instruction, answers);
}

RenderedPrompt PromptKit::render_baseline(PromptKind kind, std::string_view instruction,
                                          const BaselineContext& context) const {
    require_instruction(instruction);
    const std::string question(instruction);
    auto missing = [&](std::string_view what) {
        return PromptError(PromptErrc::MissingContext,
                           std::string(to_string(kind)) + " requires " + std::string(what));
    };
    auto no_context = [&] {
        if (!context.empty()) {
            throw PromptError(PromptErrc::UnexpectedContext, std::string(to_string(kind)) + " takes no context");
        }
    };

    switch (kind) {
        case PromptKind::ZeroShot:
        case PromptKind::ZeroShotCoT:
        case PromptKind::ExpertPromptingIdentity:
            no_context();
            return render(kind, {{"question", question}});
        case PromptKind::SelfRefineFeedback:
            if (!context.answer) throw missing("a prior answer");
            require_text(*context.answer, "answer");
            return render(kind, {{"question", question}, {"answer", *context.answer}});
        case PromptKind::SelfRefineRevise:
            if (!context.answer) throw missing("a prior answer");
            if (!context.feedback) throw missing("feedback");
            require_text(*context.answer, "answer");
            require_text(*context.feedback, "feedback");
            return render(kind, {{"question", question}, {"answer", *context.answer}, {"feedback", *context.feedback}});
        case PromptKind::ExpertPromptingAnswer:
            if (!context.expert_identity) throw missing("an expert identity");
            require_text(*context.expert_identity, "expert identity");
            return render(kind, {{"question", question}, {"expert_identity", *context.expert_identity}});
        case PromptKind::NaiveAggregation:
            if (context.answers.empty()) throw missing("expert answers");
            return render_answer_set(kind, instruction, context.answers);
        default:
            throw PromptError(PromptErrc::WrongKind, std::string(to_string(kind)) + " is not a baseline prompt");
    }
}

RenderedPrompt PromptKit::render_judge(JudgeMetric metric, std::string_view question, std::string_view answer_a,
                                       std::string_view answer_b) const {
    require_text(question, "question");
    require_text(answer_a, "answer 1");
    require_text(answer_b, "answer 2");
    const auto kind =
        metric == JudgeMetric::Informativeness ? PromptKind::JudgeInformativeness : PromptKind::JudgeUsefulness;
    return render(kind, {{"question", std::string(question)},
                         {"response1", std::string(answer_a)},
                         {"response2", std::string(answer_b)}});
}

// ---------------------------------------------------------------------------

std::string expert_answer_scaffold(int n) {
    std::string out = "{";
    for (int i = 1; i <= n; ++i) {
        if (i > 1) out += ", ";
        out += "\"[role " + std::to_string(i) + "]\": \"[description " + std::to_string(i) + "]\"";
    }
    out += "}";
    return out;
}

std::string format_answer_blocks(const std::vector<std::string>& answers) {
    std::string out(kAnswerDelimiter);
    out += '\n';
    for (const auto& answer : answers) {
        std::istringstream lines(answer);
        std::string line;
        while (std::getline(lines, line)) {
            if (!is_blank(line)) {
                out += kAnswerIndent;
                out += line;
            }
            out += '\n';
        }
        out += kAnswerDelimiter;
        out += '\n';
    }
    out.pop_back();
    return out;
}

std::vector<std::string> extract_answer_blocks(std::string_view prompt) {
    std::vector<std::string> blocks;
    std::optional<std::string> current;
    std::size_t pos = 0;
    while (pos <= prompt.size()) {
        auto end = prompt.find('\n', pos);
        if (end == std::string_view::npos) end = prompt.size();
        std::string_view line = prompt.substr(pos, end - pos);
        if (line.ends_with('\r')) line.remove_suffix(1);
        if (line == kAnswerDelimiter) {
            if (current) {
                if (!current->empty() && current->back() == '\n') current->pop_back();
                blocks.push_back(std::move(*current));
            }
            current.emplace();
        } else if (current) {
            if (line.starts_with(kAnswerIndent)) line.remove_prefix(kAnswerIndent.size());
            current->append(line);
            current->push_back('\n');
        }
        pos = end + 1;
    }
    // Text after the final delimiter is not an answer block.
    return blocks;
}

std::string dump_prompts(const PromptKit& kit) {
    const std::string question = "What are the health effects of drinking coffee every day?";
    const std::vector<std::string> answers = {
        "Moderate coffee intake is linked to lower risk of type 2 diabetes.",
        "Coffee raises alertness; excess intake can disturb sleep.",
        "Caffeine tolerance varies by genetics and habit.",
    };
    BaselineContext with_answer;
    with_answer.answer = answers[0];
    BaselineContext with_feedback = with_answer;
    with_feedback.feedback = "The answer should mention sleep effects.";
    BaselineContext with_identity;
    with_identity.expert_identity = "You are a nutrition scientist who studies dietary stimulants.";
    BaselineContext with_answers;
    with_answers.answers = answers;

    std::vector<RenderedPrompt> rendered = {
        kit.render_expert_generation(question, 3),
        kit.render_expert_casting(question, {"Nutritionist", "an expert in diet and its effects on health"}),
        kit.render_aggregation(question, answers),
        kit.render_baseline(PromptKind::ZeroShot, question),
        kit.render_baseline(PromptKind::ZeroShotCoT, question),
        kit.render_baseline(PromptKind::SelfRefineFeedback, question, with_answer),
        kit.render_baseline(PromptKind::SelfRefineRevise, question, with_feedback),
        kit.render_baseline(PromptKind::ExpertPromptingIdentity, question),
        kit.render_baseline(PromptKind::ExpertPromptingAnswer, question, with_identity),
        kit.render_baseline(PromptKind::NaiveAggregation, question, with_answers),
        kit.render_judge(JudgeMetric::Informativeness, question, answers[0], answers[1]),
        kit.render_judge(JudgeMetric::Usefulness, question, answers[0], answers[1]),
    };
    std::string out;
    for (const auto& prompt : rendered) {
        out += "===== ";
        out += to_string(prompt.kind);
        out += " =====\n";
        out += prompt.text;
        out += "\n\n";
    }
    return out;
}

}  // namespace mep::prompts
