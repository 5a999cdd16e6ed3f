#include "mep/record_io.hpp"

#include <charconv>
#include <fstream>

namespace mep::record_io {

using nlohmann::json;
using nlohmann::ordered_json;
using pipelines::PipelineRecord;
using transcript::Selection;

namespace {

[[noreturn]] void malformed(const std::string& why) {
    throw RecordError(RecordErrc::MalformedRecordLine, why);
}

Selection selection_from_label(const std::string& label) {
    if (label == "Combined answer") return Selection::combined();
    constexpr std::string_view prefix = "Answer ";
    if (label.starts_with(prefix)) {
        int k = 0;
        const char* first = label.data() + prefix.size();
        const char* last = label.data() + label.size();
        auto [ptr, ec] = std::from_chars(first, last, k);
        if (ec == std::errc{} && ptr == last && k >= 1) return Selection::expert(k);
    }
    malformed("unknown selection label '" + label + "'");
}

template <typename T>
T field(const json& j, const char* key) {
    if (!j.contains(key)) malformed(std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        malformed(std::string("field '") + key + "' has the wrong type");
    }
}

template <typename T>
T optional_field(const json& j, const char* key, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        malformed(std::string("field '") + key + "' has the wrong type");
    }
}

}  // namespace

ordered_json to_json(const PipelineRecord& r) {
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["sample_id"] = r.sample_id;
    j["instruction"] = r.instruction;
    j["dataset"] = std::string(to_string(r.dataset));
    j["category"] = r.category;
    j["strategy"] = std::string(pipelines::to_string(r.strategy));
    j["model_id"] = r.model_id;

    ordered_json experts = ordered_json::array();
    for (const auto& e : r.experts) {
        experts.push_back({{"ordinal", e.ordinal}, {"role", e.role}, {"description", e.description}});
    }
    j["experts"] = std::move(experts);
    j["expert_identity"] = r.expert_identity ? ordered_json(*r.expert_identity) : ordered_json(nullptr);
    j["expert_answers"] = r.expert_answers;

    if (r.transcript) {
        const auto& t = *r.transcript;
        j["transcript"] = {
            {"agreed", t.agreed},
            {"conflicted", t.conflicted},
            {"resolved", t.resolved},
            {"uniques", t.uniques},
            {"merged_facts", t.merged_facts},
            {"combined_answer", t.combined_answer},
            {"best_choice", t.best_choice.label()},
            {"explanation", t.explanation},
            {"final_answer", t.final_answer},
        };
    } else {
        j["transcript"] = nullptr;
    }
    j["selection"] = r.selection ? ordered_json(r.selection->label()) : ordered_json(nullptr);
    j["final_answer"] = r.final_answer;
    j["call_count"] = r.call_count;
    j["retry_calls"] = r.retry_calls;
    j["temperatures"] = r.temperatures;
    j["tokens"] = {
        {"calls", r.usage.calls},
        {"prompt", r.usage.prompt_tokens},
        {"completion", r.usage.completion_tokens},
        {"total", r.usage.prompt_tokens + r.usage.completion_tokens},
    };
    j["cost"] = r.usage.cost;
    j["flags"] = r.flags;
    j["wall_time_s"] = r.wall_time_s;
    if (r.error) {
        j["error"] = {{"kind", r.error->kind}, {"message", r.error->message}};
    } else {
        j["error"] = nullptr;
    }
    return j;
}

PipelineRecord from_json(const json& j) {
    if (!j.is_object()) malformed("record is not a JSON object");
    const int version = field<int>(j, "schema_version");
    if (version != kSchemaVersion) malformed("unsupported schema_version " + std::to_string(version));

    PipelineRecord r;
    r.sample_id = field<std::string>(j, "sample_id");
    if (r.sample_id.empty()) malformed("empty sample_id");
    r.instruction = field<std::string>(j, "instruction");
    const auto dataset = parse_dataset(optional_field<std::string>(j, "dataset", "adhoc"));
    if (!dataset) malformed("unknown dataset");
    r.dataset = *dataset;
    r.category = optional_field<std::string>(j, "category", "");
    const auto strategy = pipelines::parse_strategy(field<std::string>(j, "strategy"));
    if (!strategy) malformed("unknown strategy");
    r.strategy = *strategy;
    r.model_id = optional_field<std::string>(j, "model_id", "");

    const json experts = optional_field<json>(j, "experts", json::array());
    if (!experts.is_array()) malformed("field 'experts' has the wrong type");
    for (const auto& e : experts) {
        if (!e.is_object()) malformed("expert entry is not an object");
        r.experts.push_back({field<std::string>(e, "role"), field<std::string>(e, "description"),
                             field<int>(e, "ordinal")});
    }
    if (j.contains("expert_identity") && !j.at("expert_identity").is_null()) {
        r.expert_identity = field<std::string>(j, "expert_identity");
    }
    r.expert_answers = optional_field<std::vector<std::string>>(j, "expert_answers", {});

    if (j.contains("transcript") && !j.at("transcript").is_null()) {
        const json& t = j.at("transcript");
        if (!t.is_object()) malformed("field 'transcript' has the wrong type");
        transcript::AggregationTranscript tr;
        tr.agreed = field<std::string>(t, "agreed");
        tr.conflicted = field<std::string>(t, "conflicted");
        tr.resolved = field<std::string>(t, "resolved");
        tr.uniques = field<std::string>(t, "uniques");
        tr.merged_facts = field<std::string>(t, "merged_facts");
        tr.combined_answer = field<std::string>(t, "combined_answer");
        tr.best_choice = selection_from_label(field<std::string>(t, "best_choice"));
        tr.explanation = field<std::string>(t, "explanation");
        tr.final_answer = field<std::string>(t, "final_answer");
        r.transcript = std::move(tr);
    }
    if (j.contains("selection") && !j.at("selection").is_null()) {
        r.selection = selection_from_label(field<std::string>(j, "selection"));
    }
    r.final_answer = field<std::string>(j, "final_answer");
    r.call_count = field<int>(j, "call_count");
    r.retry_calls = optional_field<int>(j, "retry_calls", 0);
    r.temperatures = optional_field<std::vector<double>>(j, "temperatures", {});

    const json tokens = field<json>(j, "tokens");
    if (!tokens.is_object()) malformed("field 'tokens' has the wrong type");
    r.usage.calls = optional_field<int>(tokens, "calls", 0);
    r.usage.prompt_tokens = field<long long>(tokens, "prompt");
    r.usage.completion_tokens = field<long long>(tokens, "completion");
    r.usage.cost = optional_field<double>(j, "cost", 0.0);

    r.flags = optional_field<std::vector<std::string>>(j, "flags", {});
    for (const auto& f : r.flags) {
        if (!transcript::ParseFlag::from_string(f)) malformed("unknown flag '" + f + "'");
    }
    if (r.transcript) {
        for (const auto& f : r.flags) {
            const auto flag = transcript::ParseFlag::from_string(f);
            r.transcript->flags.push_back(*flag);
        }
    }
    r.wall_time_s = optional_field<double>(j, "wall_time_s", 0.0);
    if (!j.contains("error")) malformed("missing field 'error'");
    if (!j.at("error").is_null()) {
        const json& e = j.at("error");
        if (!e.is_object()) malformed("field 'error' has the wrong type");
        r.error = pipelines::ErrorInfo{field<std::string>(e, "kind"), field<std::string>(e, "message")};
    }
    return r;
}

std::string to_json_line(const PipelineRecord& record) {
    return to_json(record).dump(-1, ' ', false, json::error_handler_t::replace);
}

PipelineRecord from_json_line(std::string_view line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) malformed("invalid JSON");
    return from_json(j);
}

std::vector<PipelineRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RecordError(RecordErrc::Unreadable, "cannot read " + path.string());
    std::vector<PipelineRecord> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(from_json_line(line));
        } catch (const RecordError& e) {
            throw RecordError(RecordErrc::MalformedRecordLine,
                              path.string() + ":" + std::to_string(number) + ": " + e.what(), number);
        }
    }
    return out;
}

std::vector<std::string> read_sample_ids(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RecordError(RecordErrc::Unreadable, "cannot read " + path.string());
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) continue;
        auto it = j.find("sample_id");
        if (it != j.end() && it->is_string()) ids.push_back(it->get<std::string>());
    }
    return ids;
}

}  // namespace mep::record_io
