#include "mep/oracle_backend.hpp"

#include <algorithm>
#include <set>

#include "mep/prompt_kit.hpp"

namespace mep::oracle {

namespace {

constexpr std::string_view kExpertGenerationMarker = "best roles that could complete the information";
constexpr std::string_view kCastingMarker = "From now on, you are an excellent ";
constexpr std::string_view kAggregationMarker = "Your task is to aggregate the experts' answers";
constexpr std::string_view kNaiveMarker = "Please combine responses into a final one";
constexpr std::string_view kJudgeMarker = "Your task is to evaluate which answer is better";
constexpr std::string_view kFeedbackMarker = "provide some feedback of the answer";
constexpr std::string_view kReviseMarker = "Based on the feedback, refine your answer";
constexpr std::string_view kIdentityMarker = "[Agent Description]:";
constexpr std::string_view kExpertAnswerMarker = "Now given the above identity background";
constexpr std::string_view kCotMarker = "Let's think step by step.";

bool contains(std::string_view text, std::string_view needle) { return text.find(needle) != std::string_view::npos; }

std::string json_quote(std::string_view s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

/// Text between `start` and the first following `stop`, or the rest.
std::string_view between(std::string_view text, std::string_view start, std::string_view stop) {
    auto begin = text.find(start);
    if (begin == std::string_view::npos) return {};
    begin += start.size();
    auto end = text.find(stop, begin);
    return text.substr(begin, end == std::string_view::npos ? std::string_view::npos : end - begin);
}

// Empty viewsets travel as "None" since prompt answers must be nonempty.
std::optional<std::vector<ViewSet>> decode_blocks(std::string_view prompt) {
    const auto blocks = prompts::extract_answer_blocks(prompt);
    if (blocks.empty()) return std::nullopt;
    std::vector<ViewSet> viewsets;
    try {
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            ViewSet v{static_cast<int>(i) + 1, decode_keypoint_section(blocks[i])};
            v.validate();
            viewsets.push_back(std::move(v));
        }
    } catch (const OracleError&) {
        return std::nullopt;
    }
    return viewsets;
}

int answer_weight(std::string_view answer) {
    try {
        const auto kps = decode_keypoint_section(answer);
        return static_cast<int>(kps.size());
    } catch (const OracleError&) {
        return gateway::approx_token_count(answer);
    }
}

std::string naive_transcript(const std::vector<ViewSet>& viewsets) {
    std::vector<Keypoint> merged;
    std::set<KeypointId> seen;
    for (const auto& v : viewsets) {
        for (const auto& kp : v.keypoints) {
            if (seen.insert(kp.id()).second) merged.push_back(kp);
        }
    }
    KeypointSet final_set;
    std::vector<KeypointSet> candidates;
    for (const auto& kp : merged) final_set.insert(kp);
    for (const auto& v : viewsets) candidates.push_back(v.as_set());
    candidates.push_back(final_set);
    const auto selection = select_best(candidates, final_set);

    const std::string body = encode_keypoint_section(merged);
    std::string final_body = body;
    if (!selection.is_combined()) {
        final_body = encode_keypoint_section(viewsets.at(static_cast<std::size_t>(selection.ordinal() - 1)).keypoints);
    }
    return "Combined answer:\n" + body + "\n\nBest answer choice: " + selection.label() +
           "\nExplanation: The combined response keeps every distinct keypoint.\nFinal answer:\n" + final_body + "\n";
}

}  // namespace

OracleResponder::OracleResponder(OracleFixture fixture) : fixture_(std::move(fixture)) {
    if (fixture_.experts.empty()) throw OracleError(OracleErrc::EmptyInput, "oracle fixture has no experts");
}

const FixtureExpert& OracleResponder::expert_for_replicate(int replicate) const {
    const auto size = static_cast<int>(fixture_.experts.size());
    return fixture_.experts[static_cast<std::size_t>(((replicate % size) + size) % size)];
}

std::optional<std::string> OracleResponder::operator()(const gateway::ChatRequest& request) const {
    const std::string_view prompt = request.prompt;

    if (contains(prompt, kExpertGenerationMarker)) {
        std::string mapping = "{";
        for (std::size_t i = 0; i < fixture_.experts.size(); ++i) {
            if (i) mapping += ", ";
            mapping += json_quote(fixture_.experts[i].role) + ": " + json_quote(fixture_.experts[i].description);
        }
        mapping += "}";
        return "Answer: " + mapping;
    }

    if (contains(prompt, kCastingMarker)) {
        for (const auto& expert : fixture_.experts) {
            const std::string identity = std::string(kCastingMarker) + expert.role + " described as ";
            if (contains(prompt, identity)) return encode_keypoint_section(expert.view.keypoints);
        }
        return std::nullopt;
    }

    if (contains(prompt, kAggregationMarker)) {
        const auto viewsets = decode_blocks(prompt);
        if (!viewsets) return std::string("The expert answers could not be read, so no aggregation is possible.");
        const auto question = between(prompt, "Given the following question: ", ", you have obtained");
        return render_oracle_transcript(question, *viewsets);
    }

    if (contains(prompt, kNaiveMarker)) {
        const auto viewsets = decode_blocks(prompt);
        if (!viewsets) return std::string("The expert answers could not be read.");
        return naive_transcript(*viewsets);
    }

    if (contains(prompt, kJudgeMarker)) {
        const auto first = between(prompt, "\nAnswer 1: ", "\nAnswer 2: ");
        const auto second = between(prompt, "\nAnswer 2: ", "\n\nFulfill your task");
        const int a = answer_weight(first);
        const int b = answer_weight(second);
        const std::string verdict = a > b ? "Answer 1 is better." : b > a ? "Answer 2 is better." : "There is a draw.";
        return "Evaluation: " + verdict + "\nExplanation: Compared by the number of distinct keypoints.";
    }

    if (contains(prompt, kFeedbackMarker)) {
        return std::string("The answer is consistent with the question; no changes are needed.");
    }

    if (contains(prompt, kReviseMarker)) {
        return std::string(between(prompt, "\nAnswer: ", "\nFeedback: "));
    }

    if (contains(prompt, kIdentityMarker) && prompt.ends_with(kIdentityMarker)) {
        const auto& expert = fixture_.experts.front();
        return "You are an excellent " + expert.role + ", " + expert.description + ".";
    }

    if (contains(prompt, kExpertAnswerMarker)) {
        return encode_keypoint_section(expert_for_replicate(request.replicate).view.keypoints);
    }

    if (contains(prompt, kCotMarker)) {
        return "Explanation: Recalling the relevant keypoints.\nFinal answer:\n" +
               encode_keypoint_section(expert_for_replicate(request.replicate).view.keypoints);
    }

    return encode_keypoint_section(expert_for_replicate(request.replicate).view.keypoints);
}

std::shared_ptr<gateway::MockBackend> make_oracle_backend(OracleFixture fixture) {
    auto backend = std::make_shared<gateway::MockBackend>("oracle");
    backend->set_handler(OracleResponder(std::move(fixture)));
    return backend;
}

}  // namespace mep::oracle
