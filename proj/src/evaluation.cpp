#include "mep/evaluation.hpp"

#include <httplib.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

namespace mep::evaluation {

using nlohmann::json;
using transcript::Verdict;

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

[[noreturn]] void schema(const std::filesystem::path& path, std::size_t line, const std::string& why) {
    std::string where = path.string();
    if (line) where += ":" + std::to_string(line);
    throw EvalError(EvalErrc::SchemaMismatch, where + ": " + why);
}

void require_file(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        throw EvalError(EvalErrc::SourceMissing, "dataset source not found: " + path.string());
    }
}

/// Nonblank lines of a JSONL file as (line number, object).
std::vector<std::pair<std::size_t, json>> read_jsonl(const std::filesystem::path& path) {
    require_file(path);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw EvalError(EvalErrc::SourceMissing, "cannot read " + path.string());
    std::vector<std::pair<std::size_t, json>> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (trim(line).empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) schema(path, number, "not a JSON object");
        out.emplace_back(number, std::move(j));
    }
    return out;
}

std::string string_field(const std::filesystem::path& path, std::size_t line, const json& j,
                         std::initializer_list<const char*> keys) {
    for (const char* key : keys) {
        auto it = j.find(key);
        if (it != j.end() && it->is_string()) return it->get<std::string>();
    }
    schema(path, line, std::string("missing string field '") + *keys.begin() + "'");
}

/// Indices of a `k`-subset of [0, size), ascending. All indices when size <= k.
std::vector<std::size_t> sample_indices(std::size_t size, std::size_t k, std::uint64_t seed) {
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (size <= k) return idx;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

Task make_task(Dataset dataset, std::size_t index, std::string prompt, std::string category,
               const std::filesystem::path& path, std::size_t line) {
    if (trim(prompt).empty()) schema(path, line, "empty prompt");
    return Task{make_sample_id(dataset, index), std::move(prompt), std::move(category), dataset};
}

std::vector<Task> load_expertqa(const std::filesystem::path& path) {
    std::vector<Task> tasks;
    std::size_t index = 0;
    for (const auto& [line, j] : read_jsonl(path)) {
        const std::size_t source_index = index++;
        const json* meta = j.contains("metadata") && j["metadata"].is_object() ? &j["metadata"] : nullptr;
        const json* qtype = nullptr;
        if (j.contains("question_type")) qtype = &j["question_type"];
        else if (meta && meta->contains("question_type")) qtype = &(*meta)["question_type"];
        if (qtype && qtype->is_string() && lower(qtype->get<std::string>()).find("open") == std::string::npos) {
            continue;
        }
        std::string field;
        if (j.contains("field") && j["field"].is_string()) field = j["field"];
        else if (meta && meta->contains("field") && (*meta)["field"].is_string()) field = (*meta)["field"];
        else schema(path, line, "missing string field 'field'");
        tasks.push_back(make_task(Dataset::ExpertQA, source_index, string_field(path, line, j, {"question"}),
                                  std::move(field), path, line));
    }
    return tasks;
}

std::vector<Task> load_truthfulqa(const std::filesystem::path& path) {
    std::vector<Task> tasks;
    std::size_t index = 0;
    for (const auto& [line, j] : read_jsonl(path)) {
        tasks.push_back(make_task(Dataset::TruthfulQA, index++, string_field(path, line, j, {"question", "Question"}),
                                  string_field(path, line, j, {"category", "Category"}), path, line));
    }
    return tasks;
}

std::vector<Task> load_factualityprompt(Dataset kind, const std::filesystem::path& source, std::uint64_t seed) {
    const bool factual = kind == Dataset::FactualityPromptFactual;
    std::filesystem::path path = source;
    std::error_code ec;
    if (std::filesystem::is_directory(source, ec)) {
        path = source / (factual ? "fever_factual_final.jsonl" : "fever_nonfactual_final.jsonl");
    }
    const auto rows = read_jsonl(path);
    std::vector<Task> tasks;
    for (std::size_t i : sample_indices(rows.size(), kFactualityPromptSample, seed)) {
        const auto& [line, j] = rows[i];
        tasks.push_back(make_task(kind, i, string_field(path, line, j, {"prompt"}),
                                  factual ? "factual" : "nonfactual", path, line));
    }
    return tasks;
}

std::vector<Task> load_bold(const std::filesystem::path& path, std::uint64_t seed) {
    require_file(path);
    std::ifstream in(path, std::ios::binary);
    const nlohmann::ordered_json doc = nlohmann::ordered_json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) schema(path, 0, "not a JSON object");

    std::vector<Task> tasks;
    std::size_t index = 0;
    constexpr const char* kGroups[] = {"American_actors", "American_actresses"};
    for (std::uint64_t g = 0; g < 2; ++g) {
        const char* group = kGroups[g];
        auto it = doc.find(group);
        if (it == doc.end() || !it->is_object()) schema(path, 0, std::string("missing group '") + group + "'");
        std::vector<std::pair<std::size_t, std::string>> firsts;
        for (const auto& [name, prompts] : it->items()) {
            const std::size_t source_index = index++;
            if (!prompts.is_array() || prompts.empty() || !prompts.front().is_string()) {
                schema(path, 0, "entry '" + name + "' has no prompts");
            }
            firsts.emplace_back(source_index, prompts.front().get<std::string>());
        }
        for (std::size_t i : sample_indices(firsts.size(), kBoldPerCategory, seed + g)) {
            tasks.push_back(make_task(Dataset::BOLD, firsts[i].first, firsts[i].second, group, path, 0));
        }
    }
    return tasks;
}

std::vector<Task> load_honest(const std::filesystem::path& path) {
    std::vector<Task> tasks;
    std::size_t index = 0;
    for (const auto& [line, j] : read_jsonl(path)) {
        std::string text = string_field(path, line, j, {"template_masked", "masked_template"});
        for (auto pos = text.find("[M]"); pos != std::string::npos; pos = text.find("[M]", pos)) text.erase(pos, 3);
        std::string category;
        for (const char* key : {"category", "identity"}) {
            if (j.contains(key) && j[key].is_string()) {
                category = j[key];
                break;
            }
        }
        tasks.push_back(make_task(Dataset::HONEST, index++, std::move(text), std::move(category), path, line));
    }
    return tasks;
}

Verdict flip(Verdict v) {
    switch (v) {
        case Verdict::WinA: return Verdict::WinB;
        case Verdict::WinB: return Verdict::WinA;
        case Verdict::Draw: return Verdict::Draw;
    }
    return v;
}

Verdict judge_once(std::string_view question, std::string_view first, std::string_view second,
                   prompts::JudgeMetric metric, gateway::Gateway& gw, const JudgeOptions& options,
                   const prompts::PromptKit& kit, int ordering) {
    const auto prompt = kit.render_judge(metric, question, first, second);
    std::string last_error;
    for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
        gateway::ChatRequest req;
        req.model_id = options.model_id;
        req.prompt = prompt.text;
        req.temperature = options.temperature;
        req.replicate = attempt;
        req.tags = {"judge:" + std::string(prompts::to_string(metric)), "ordering:" + std::to_string(ordering)};
        if (!options.sample_id.empty()) req.tags.push_back(std::string(gateway::kSampleTagPrefix) + options.sample_id);
        if (attempt > 0) req.tags.emplace_back("retry");
        const auto reply = gw.complete(req);
        try {
            return transcript::parse_judge_verdict(reply.text);
        } catch (const transcript::ParseError& e) {
            last_error = e.what();
        }
    }
    throw EvalError(EvalErrc::NoVerdict, last_error);
}

std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw EvalError(EvalErrc::ScorerUnavailable, "scorer URL lacks a scheme: " + url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
    return {url.substr(0, path_start), path};
}

std::optional<double> read_score(const std::string& body) {
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    auto it = j.find("score");
    if (it == j.end() || !it->is_number()) return std::nullopt;
    const double s = it->get<double>();
    if (!std::isfinite(s)) return std::nullopt;
    return s;
}

std::string request_line(const ScoreRequest& r) {
    return json{{"sample_id", r.sample_id}, {"prompt", r.prompt}, {"answer", r.answer}}.dump(
        -1, ' ', false, json::error_handler_t::replace);
}

}  // namespace

std::vector<Task> load_dataset(Dataset kind, const std::filesystem::path& source, std::uint64_t seed) {
    std::error_code ec;
    if (!std::filesystem::exists(source, ec)) {
        throw EvalError(EvalErrc::SourceMissing, "dataset source not found: " + source.string());
    }
    switch (kind) {
        case Dataset::ExpertQA: return load_expertqa(source);
        case Dataset::TruthfulQA: return load_truthfulqa(source);
        case Dataset::FactualityPromptFactual:
        case Dataset::FactualityPromptNonfactual: return load_factualityprompt(kind, source, seed);
        case Dataset::BOLD: return load_bold(source, seed);
        case Dataset::HONEST: return load_honest(source);
        case Dataset::Adhoc: break;
    }
    throw EvalError(EvalErrc::SchemaMismatch, "ad-hoc tasks have no dataset loader");
}

std::optional<double> ScoreReport::value(std::string_view name) const {
    for (const auto& [k, v] : values) {
        if (k == name) return v;
    }
    return std::nullopt;
}

double toxicity_ratio(std::span<const double> scores, double threshold) {
    if (scores.empty()) throw EvalError(EvalErrc::EmptyScores, "no toxicity scores");
    std::size_t toxic = 0;
    for (double s : scores) {
        if (!(s >= 0.0 && s <= 1.0)) throw EvalError(EvalErrc::OutOfRangeScore, "score outside [0, 1]");
        if (s >= threshold) ++toxic;
    }
    return static_cast<double>(toxic) / static_cast<double>(scores.size());
}

Verdict judge_pair(std::string_view question, std::string_view answer_a, std::string_view answer_b,
                   prompts::JudgeMetric metric, gateway::Gateway& gw, bool swap_mode, const JudgeOptions& options,
                   const prompts::PromptKit& kit) {
    const Verdict forward = judge_once(question, answer_a, answer_b, metric, gw, options, kit, 1);
    if (!swap_mode) return forward;
    const Verdict backward = flip(judge_once(question, answer_b, answer_a, metric, gw, options, kit, 2));
    return forward == backward ? forward : Verdict::Draw;
}

ScoreReport win_report(std::span<const Verdict> verdicts, std::size_t excluded) {
    if (verdicts.empty()) throw EvalError(EvalErrc::EmptyInput, "no verdicts");
    std::array<std::size_t, 3> counts{};
    for (Verdict v : verdicts) {
        counts[v == Verdict::WinA ? 0 : v == Verdict::Draw ? 1 : 2]++;
    }
    // Largest-remainder rounding in tenths of a percent.
    const std::size_t total = verdicts.size();
    std::array<std::size_t, 3> tenths{};
    std::array<std::size_t, 3> remainder{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        tenths[i] = counts[i] * 1000 / total;
        remainder[i] = counts[i] * 1000 % total;
        assigned += tenths[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < 1000; ++k, ++assigned) ++tenths[order[k % 3]];

    ScoreReport report;
    report.metric = "win/draw/lose";
    report.values = {{"win", tenths[0] / 10.0}, {"draw", tenths[1] / 10.0}, {"lose", tenths[2] / 10.0}};
    report.samples = total;
    report.excluded = excluded;
    return report;
}

SelectionStats selection_ratio(std::span<const pipelines::PipelineRecord> records) {
    SelectionStats stats;
    const std::string fallback = transcript::ParseFlag::fallback().str();
    for (const auto& r : records) {
        if (!pipelines::aggregates(r.strategy)) continue;
        const bool used_fallback = std::find(r.flags.begin(), r.flags.end(), fallback) != r.flags.end();
        if (!r.ok() || !r.selection || used_fallback) {
            ++stats.excluded;
            continue;
        }
        ++stats.eligible;
        if (r.selection->is_combined()) ++stats.combined;
    }
    if (stats.eligible == 0) throw EvalError(EvalErrc::NoEligibleRecords, "no eligible aggregating records");
    stats.ratio = static_cast<double>(stats.combined) / static_cast<double>(stats.eligible);
    return stats;
}

// ---------------------------------------------------------------------------

HttpScorer::HttpScorer(std::string url) { std::tie(scheme_host_, path_) = split_url(url); }

std::optional<double> HttpScorer::score(const ScoreRequest& request) {
    httplib::Client client(scheme_host_);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(std::chrono::seconds(60));
    auto result = client.Post(path_, request_line(request), "application/json");
    if (!result) {
        throw EvalError(EvalErrc::ScorerUnavailable,
                        "scorer at " + scheme_host_ + " unreachable: " + httplib::to_string(result.error()));
    }
    if (result->status != 200) return std::nullopt;
    return read_score(result->body);
}

SubprocessScorer::SubprocessScorer(std::string command) : command_(std::move(command)) { start(); }

SubprocessScorer::~SubprocessScorer() { stop(); }

void SubprocessScorer::start() {
    int in_pipe[2];
    int out_pipe[2];
    if (pipe(in_pipe) != 0) throw EvalError(EvalErrc::ScorerUnavailable, "pipe() failed");
    if (pipe(out_pipe) != 0) {
        close(in_pipe[0]);
        close(in_pipe[1]);
        throw EvalError(EvalErrc::ScorerUnavailable, "pipe() failed");
    }
    const pid_t pid = fork();
    if (pid < 0) throw EvalError(EvalErrc::ScorerUnavailable, "fork() failed");
    if (pid == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    signal(SIGPIPE, SIG_IGN);
}

void SubprocessScorer::stop() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
        int status = 0;
        waitpid(pid_, &status, 0);
        pid_ = -1;
    }
}

std::optional<double> SubprocessScorer::score(const ScoreRequest& request) {
    if (to_child_ < 0) throw EvalError(EvalErrc::ScorerUnavailable, "scorer process is not running");
    const std::string line = request_line(request) + "\n";
    std::size_t written = 0;
    while (written < line.size()) {
        const ssize_t n = write(to_child_, line.data() + written, line.size() - written);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) throw EvalError(EvalErrc::ScorerUnavailable, "scorer process closed its input");
        written += static_cast<std::size_t>(n);
    }
    for (;;) {
        const auto nl = buffer_.find('\n');
        if (nl != std::string::npos) {
            const std::string reply = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return read_score(reply);
        }
        char chunk[4096];
        const ssize_t n = read(from_child_, chunk, sizeof chunk);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) throw EvalError(EvalErrc::ScorerUnavailable, "scorer process exited");
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

ScoreReport external_score(std::span<const pipelines::PipelineRecord> records, Scorer* scorer, std::string metric) {
    if (!scorer) throw EvalError(EvalErrc::ScorerUnavailable, "no scorer registered");
    ScoreReport report;
    report.metric = std::move(metric);
    double sum = 0.0;
    std::set<std::string> strategies;
    for (const auto& r : records) {
        strategies.insert(std::string(pipelines::to_string(r.strategy)));
        if (!r.ok()) {
            ++report.excluded;
            continue;
        }
        const auto s = scorer->score({r.sample_id, r.instruction, r.final_answer});
        if (!s) {
            ++report.excluded;
            continue;
        }
        sum += *s;
        ++report.samples;
    }
    for (const auto& s : strategies) report.strategy += (report.strategy.empty() ? "" : ",") + s;
    if (!records.empty()) report.dataset = std::string(to_string(records.front().dataset));
    report.values = {{"score", report.samples ? 100.0 * sum / static_cast<double>(report.samples) : 0.0}};
    return report;
}

RecordSummary summarize_records(std::span<const pipelines::PipelineRecord> records) {
    RecordSummary s;
    s.records = records.size();
    for (const auto& r : records) {
        if (!r.ok()) {
            ++s.failed;
            ++s.error_counts[r.error->kind];
        }
        s.calls += static_cast<std::size_t>(r.usage.calls);
        s.prompt_tokens += r.usage.prompt_tokens;
        s.completion_tokens += r.usage.completion_tokens;
        s.cost += r.usage.cost;
        for (const auto& f : r.flags) ++s.flag_counts[f];
    }
    if (!records.empty()) {
        s.avg_tokens_per_sample =
            static_cast<double>(s.prompt_tokens + s.completion_tokens) / static_cast<double>(records.size());
    }
    try {
        s.selection = selection_ratio(records);
    } catch (const EvalError&) {
    }
    return s;
}

}  // namespace mep::evaluation
