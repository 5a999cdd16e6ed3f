#include "mep/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mep/config.hpp"
#include "mep/evaluation.hpp"
#include "mep/llm_gateway.hpp"
#include "mep/ngt_oracle.hpp"
#include "mep/oracle_backend.hpp"
#include "mep/pipelines.hpp"
#include "mep/prompt_kit.hpp"
#include "mep/record_io.hpp"

namespace mep::cli {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

/// Reported with a message; the command returns `code`.
struct CommandFailure {
    int code;
    std::string message;
};

struct CommonOptions {
    std::string config_path;
    std::string strategy;
    int n = 0;
    std::string temperature;
    std::string profile;
    std::string mock;
    std::string url;
    std::string model;
    long long seed = -1;
    int workers = 0;
    bool json_output = false;
};

std::vector<double> parse_temperatures(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double t = 0.0;
        try {
            t = std::stod(item, &used);
        } catch (const std::exception&) {
            throw CommandFailure{kExitUsage, "invalid --temperature value '" + text + "'"};
        }
        if (used != item.size()) throw CommandFailure{kExitUsage, "invalid --temperature value '" + text + "'"};
        out.push_back(t);
    }
    if (out.empty()) throw CommandFailure{kExitUsage, "--temperature needs a value"};
    return out;
}

/// Defaults, then the config file, then explicit flags.
config::RunConfig resolve_config(const CommonOptions& o, const CLI::App& cmd) {
    config::RunConfig cfg;
    try {
        if (!o.config_path.empty()) cfg = config::load_run_config(o.config_path);
    } catch (const config::ConfigFileError& e) {
        throw CommandFailure{kExitUsage, e.what()};
    }
    auto given = [&](const char* name) {
        const auto* opt = cmd.get_option_no_throw(name);
        return opt != nullptr && opt->count() > 0;
    };
    if (given("--strategy")) {
        const auto s = pipelines::parse_strategy(o.strategy);
        if (!s) {
            std::string valid;
            for (auto k : pipelines::kAllStrategies) valid += (valid.empty() ? "" : ", ") + std::string(to_string(k));
            throw CommandFailure{kExitUsage, "unknown strategy '" + o.strategy + "' (valid: " + valid + ")"};
        }
        cfg.pipeline.strategy = *s;
    }
    if (given("--profile")) {
        const auto p = pipelines::TemperatureProfile::named(o.profile);
        if (!p) throw CommandFailure{kExitUsage, "unknown profile '" + o.profile + "' (valid: chatgpt, mistral)"};
        cfg.pipeline.temperature = *p;
    }
    if (given("--n")) cfg.pipeline.n = o.n;
    if (given("--temperature")) {
        const auto temps = parse_temperatures(o.temperature);
        if (temps.size() == 1) cfg.pipeline.temperature.base = temps.front();
        else cfg.pipeline.temperature.ladder = temps;
    }
    if (given("--mock")) cfg.backend.mock = o.mock;
    if (given("--url")) cfg.backend.url = o.url;
    if (given("--model")) cfg.backend.model_id = o.model;
    if (given("--seed")) cfg.dataset.seed = static_cast<std::uint64_t>(o.seed);
    if (given("--workers")) cfg.workers = o.workers;
    cfg.pipeline.model_id = cfg.backend.model_id;
    return cfg;
}

std::shared_ptr<gateway::Backend> script_backend(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CommandFailure{kExitUsage, "cannot read mock script " + path.string()};
    const json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        throw CommandFailure{kExitUsage, "mock script " + path.string() + " is not a JSON object"};
    }
    auto backend = std::make_shared<gateway::MockBackend>("script");
    try {
        if (doc.contains("responses")) {
            for (const auto& [prompt, reply] : doc.at("responses").items()) backend->script(prompt, reply.get<std::string>());
        }
        if (doc.contains("rules")) {
            std::vector<std::pair<std::string, std::string>> rules;
            for (const auto& rule : doc.at("rules")) {
                rules.emplace_back(rule.at("contains").get<std::string>(), rule.at("reply").get<std::string>());
            }
            backend->set_handler([rules](const gateway::ChatRequest& r) -> std::optional<std::string> {
                for (const auto& [needle, reply] : rules) {
                    if (r.prompt.find(needle) != std::string::npos) return reply;
                }
                return std::nullopt;
            });
        }
        if (doc.contains("default")) backend->set_fallback(doc.at("default").get<std::string>());
    } catch (const json::exception& e) {
        throw CommandFailure{kExitUsage, "mock script " + path.string() + ": " + e.what()};
    }
    return backend;
}

std::shared_ptr<gateway::Backend> make_backend(const config::RunConfig& cfg) {
    const auto& b = cfg.backend;
    if (!b.mock.empty()) {
        const auto colon = b.mock.find(':');
        const std::string kind = b.mock.substr(0, colon);
        const std::string target = colon == std::string::npos ? "" : b.mock.substr(colon + 1);
        if (kind == "oracle" && !target.empty()) {
            try {
                return oracle::make_oracle_backend(oracle::load_fixture(target));
            } catch (const Error& e) {
                throw CommandFailure{kExitUsage, std::string("oracle fixture: ") + e.what()};
            }
        }
        if (kind == "script" && !target.empty()) return script_backend(target);
        throw CommandFailure{kExitUsage, "--mock expects oracle:<fixture> or script:<json>"};
    }
    if (b.url.empty()) throw CommandFailure{kExitUsage, "no backend configured (use --url, --mock or a config file)"};
    try {
        return std::make_shared<gateway::HttpBackend>(
            gateway::HttpBackendConfig{b.url, b.api_key_env, std::chrono::seconds(b.timeout_s)});
    } catch (const gateway::GatewayError& e) {
        throw CommandFailure{kExitUsage, e.what()};
    }
}

struct Engine {
    std::unique_ptr<gateway::UsageLedger> ledger;
    std::unique_ptr<gateway::Gateway> gateway;
};

Engine make_engine(const config::RunConfig& cfg) {
    Engine e;
    e.ledger = std::make_unique<gateway::UsageLedger>(cfg.prices);
    gateway::RetryPolicy retry;
    retry.max_retries = cfg.backend.max_retries;
    if (cfg.dataset.seed) retry.jitter_seed = cfg.dataset.seed;
    std::shared_ptr<gateway::ResponseCache> cache;
    if (!cfg.backend.cache_dir.empty()) cache = std::make_shared<gateway::ResponseCache>(cfg.backend.cache_dir);
    e.gateway = std::make_unique<gateway::Gateway>(make_backend(cfg), *e.ledger, retry, cache);
    return e;
}

int exit_code_for(pipelines::FailureKind kind) {
    switch (kind) {
        case pipelines::FailureKind::ExpertParseFailure:
        case pipelines::FailureKind::AggregationParseFailure:
        case pipelines::FailureKind::EmptyResponse: return kExitParseFailure;
        case pipelines::FailureKind::BackendUnavailable:
        case pipelines::FailureKind::BackendRejected: return kExitBackendFailure;
        case pipelines::FailureKind::InvalidInput: return kExitUsage;
    }
    return kExitUsage;
}

void validate_or_fail(const config::RunConfig& cfg) {
    try {
        config::validate(cfg);
    } catch (const config::ConfigFileError& e) {
        throw CommandFailure{kExitUsage, e.what()};
    }
}

ordered_json usage_json(const gateway::UsageSummary& u) {
    return {{"calls", u.total_calls},
            {"prompt_tokens", u.prompt_tokens},
            {"completion_tokens", u.completion_tokens},
            {"total_tokens", u.total_tokens},
            {"avg_tokens_per_sample", u.avg_tokens_per_sample},
            {"cost", u.total_cost}};
}

void print_transcript(const pipelines::PipelineRecord& r, std::ostream& out) {
    if (!r.experts.empty()) {
        out << "Experts:\n";
        for (const auto& e : r.experts) out << "  " << e.ordinal << ". " << e.role << ": " << e.description << "\n";
    }
    if (r.expert_identity) out << "Expert identity:\n" << *r.expert_identity << "\n";
    for (std::size_t i = 0; i < r.expert_answers.size(); ++i) {
        out << "\nAnswer " << i + 1 << ":\n" << r.expert_answers[i] << "\n";
    }
    if (r.transcript) {
        const auto& t = *r.transcript;
        const std::pair<transcript::Section, const std::string*> sections[] = {
            {transcript::Section::Agreed, &t.agreed},
            {transcript::Section::Conflicted, &t.conflicted},
            {transcript::Section::Resolved, &t.resolved},
            {transcript::Section::Uniques, &t.uniques},
            {transcript::Section::MergedFacts, &t.merged_facts},
            {transcript::Section::CombinedAnswer, &t.combined_answer},
        };
        out << "\n";
        for (const auto& [section, body] : sections) {
            out << transcript::canonical_label(section) << "\n" << *body << "\n\n";
        }
        out << transcript::canonical_label(transcript::Section::BestChoice) << " " << t.best_choice.label() << "\n";
        out << transcript::canonical_label(transcript::Section::Explanation) << " " << t.explanation << "\n";
    }
    if (!r.flags.empty()) {
        out << "Flags:";
        for (const auto& f : r.flags) out << " " << f;
        out << "\n";
    }
    out << "\nFinal answer:\n";
}

// ---------------------------------------------------------------------------

int cmd_ask(const std::string& instruction, bool show_transcript, const CommonOptions& o, const CLI::App& cmd,
            std::ostream& out, std::ostream& err) {
    if (instruction.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw CommandFailure{kExitUsage, "instruction must not be empty"};
    }
    auto cfg = resolve_config(o, cmd);
    cfg.dataset.kind.reset();
    validate_or_fail(cfg);
    auto engine = make_engine(cfg);
    try {
        const auto record = pipelines::run_strategy(adhoc_task(instruction), cfg.pipeline, *engine.gateway);
        if (o.json_output) {
            out << record_io::to_json_line(record) << "\n";
        } else {
            if (show_transcript) print_transcript(record, out);
            out << record.final_answer << "\n";
        }
        return kExitOk;
    } catch (const pipelines::PipelineError& e) {
        err << "error: " << e.what() << "\n";
        if (o.json_output) out << record_io::to_json_line(e.partial()) << "\n";
        return exit_code_for(e.code());
    }
}

int cmd_run(const std::string& out_path, const std::string& dataset_kind, const std::string& data_path,
            long long limit, const CommonOptions& o, const CLI::App& cmd, std::ostream& out, std::ostream& err) {
    auto cfg = resolve_config(o, cmd);
    if (cmd.count("--out")) cfg.output = out_path;
    if (cmd.count("--dataset")) {
        const auto d = parse_dataset(dataset_kind);
        if (!d || *d == Dataset::Adhoc) throw CommandFailure{kExitUsage, "unknown dataset '" + dataset_kind + "'"};
        cfg.dataset.kind = *d;
    }
    if (cmd.count("--data")) cfg.dataset.path = data_path;
    if (cmd.count("--limit")) {
        if (limit < 0) throw CommandFailure{kExitUsage, "--limit must be nonnegative"};
        cfg.dataset.limit = static_cast<std::size_t>(limit);
    }
    if (!cfg.dataset.kind) throw CommandFailure{kExitUsage, "no dataset configured (dataset.kind or --dataset)"};
    if (cfg.output.empty()) throw CommandFailure{kExitUsage, "no output path configured (output.path or --out)"};
    validate_or_fail(cfg);

    std::vector<Task> tasks;
    try {
        tasks = evaluation::load_dataset(*cfg.dataset.kind, cfg.dataset.path, cfg.dataset.seed);
    } catch (const evaluation::EvalError& e) {
        throw CommandFailure{kExitUsage, e.what()};
    }
    if (cfg.dataset.limit && tasks.size() > *cfg.dataset.limit) tasks.resize(*cfg.dataset.limit);

    std::unique_ptr<pipelines::JsonlSink> sink;
    try {
        sink = std::make_unique<pipelines::JsonlSink>(cfg.output);
    } catch (const pipelines::SinkError& e) {
        throw CommandFailure{kExitSinkUnwritable, e.what()};
    }
    auto engine = make_engine(cfg);
    pipelines::BatchReport report;
    try {
        report = pipelines::run_batch(tasks, cfg.pipeline, *engine.gateway, *sink, {cfg.workers});
    } catch (const pipelines::SinkError& e) {
        throw CommandFailure{kExitSinkUnwritable, e.what()};
    }
    const auto usage = gateway::summarize_usage(*engine.ledger);
    if (o.json_output) {
        ordered_json j = {{"completed", report.completed},
                          {"failed", report.failed},
                          {"skipped", report.skipped},
                          {"output", cfg.output.string()},
                          {"usage", usage_json(usage)}};
        out << j.dump() << "\n";
    } else {
        out << "completed " << report.completed << ", failed " << report.failed << ", skipped " << report.skipped
            << "\n";
        out << "calls " << usage.total_calls << ", tokens " << usage.total_tokens << " (prompt "
            << usage.prompt_tokens << ", completion " << usage.completion_tokens << "), cost $" << std::fixed
            << std::setprecision(4) << usage.total_cost << "\n";
        out << "records: " << cfg.output.string() << "\n";
    }
    if (report.failed > 0) {
        err << report.failed << " sample(s) failed; see the error field in " << cfg.output.string() << "\n";
        return kExitBatchFailures;
    }
    return kExitOk;
}

std::vector<pipelines::PipelineRecord> read_or_fail(const std::string& path) {
    try {
        return record_io::read_records(path);
    } catch (const record_io::RecordError& e) {
        throw CommandFailure{kExitUsage, e.what()};
    }
}

int cmd_judge(const std::string& path_a, const std::string& path_b, const std::string& metric_name, bool swap,
              const std::string& verdict_path, const CommonOptions& o, const CLI::App& cmd, std::ostream& out,
              std::ostream& err) {
    const auto metric = prompts::parse_judge_metric(metric_name);
    if (!metric) {
        throw CommandFailure{kExitUsage, "unknown metric '" + metric_name + "' (valid: informativeness, usefulness)"};
    }
    const auto a = read_or_fail(path_a);
    const auto b = read_or_fail(path_b);
    std::map<std::string, const pipelines::PipelineRecord*> by_id;
    for (const auto& r : b) by_id.emplace(r.sample_id, &r);

    std::vector<std::pair<const pipelines::PipelineRecord*, const pipelines::PipelineRecord*>> pairs;
    for (const auto& r : a) {
        auto it = by_id.find(r.sample_id);
        if (it != by_id.end()) pairs.emplace_back(&r, it->second);
    }
    if (pairs.empty()) throw CommandFailure{kExitUsage, "IdMismatch: the two files share no sample_id"};

    auto cfg = resolve_config(o, cmd);
    cfg.dataset.kind.reset();
    validate_or_fail(cfg);
    auto engine = make_engine(cfg);

    std::ofstream verdicts_out;
    if (!verdict_path.empty()) {
        verdicts_out.open(verdict_path, std::ios::trunc | std::ios::binary);
        if (!verdicts_out) throw CommandFailure{kExitSinkUnwritable, "cannot write " + verdict_path};
    }

    std::vector<transcript::Verdict> verdicts;
    std::size_t excluded = 0;
    const std::string strategy_a = a.empty() ? "" : std::string(pipelines::to_string(a.front().strategy));
    const std::string strategy_b = b.empty() ? "" : std::string(pipelines::to_string(b.front().strategy));
    for (const auto& [ra, rb] : pairs) {
        ordered_json line = {{"sample_id", ra->sample_id}, {"metric", std::string(prompts::to_string(*metric))},
                             {"swap", swap}};
        if (!ra->ok() || !rb->ok() || ra->final_answer.empty() || rb->final_answer.empty()) {
            ++excluded;
            line["verdict"] = nullptr;
            line["excluded"] = "failed record";
        } else {
            evaluation::JudgeOptions options;
            options.model_id = cfg.backend.model_id;
            options.sample_id = ra->sample_id;
            try {
                const auto v = evaluation::judge_pair(ra->instruction, ra->final_answer, rb->final_answer, *metric,
                                                      *engine.gateway, swap, options);
                verdicts.push_back(v);
                line["verdict"] = std::string(transcript::to_string(v));
            } catch (const evaluation::EvalError& e) {
                ++excluded;
                line["verdict"] = nullptr;
                line["excluded"] = "NoVerdict";
            } catch (const gateway::GatewayError& e) {
                err << "error: judge backend failure: " << e.what() << "\n";
                return kExitBackendFailure;
            }
        }
        if (verdicts_out) verdicts_out << line.dump() << "\n";
    }

    const std::size_t unmatched = a.size() + b.size() - 2 * pairs.size();
    if (verdicts.empty()) {
        err << "error: no sample produced a verdict (" << excluded << " excluded)\n";
        return kExitParseFailure;
    }
    auto report = evaluation::win_report(verdicts, excluded);
    report.strategy = strategy_a + " vs " + strategy_b;
    report.metric = std::string(prompts::to_string(*metric));
    if (o.json_output) {
        ordered_json j = {{"metric", report.metric},
                          {"comparison", report.strategy},
                          {"win", *report.value("win")},
                          {"draw", *report.value("draw")},
                          {"lose", *report.value("lose")},
                          {"samples", report.samples},
                          {"excluded", report.excluded},
                          {"unmatched", unmatched}};
        out << j.dump() << "\n";
    } else {
        out << report.metric << " (" << report.strategy << "): win " << std::fixed << std::setprecision(1)
            << *report.value("win") << " / draw " << *report.value("draw") << " / lose " << *report.value("lose")
            << "\n";
        out << "samples " << report.samples << ", excluded " << report.excluded << ", unmatched " << unmatched
            << "\n";
    }
    return kExitOk;
}

int cmd_report(const std::vector<std::string>& paths, bool json_output, std::ostream& out) {
    std::vector<pipelines::PipelineRecord> records;
    for (const auto& p : paths) {
        auto part = read_or_fail(p);
        records.insert(records.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    const auto s = evaluation::summarize_records(records);
    if (json_output) {
        ordered_json j;
        j["records"] = s.records;
        j["failed"] = s.failed;
        if (s.selection) {
            j["selection_ratio"] = s.selection->ratio;
            j["selection_eligible"] = s.selection->eligible;
            j["selection_excluded"] = s.selection->excluded;
        } else {
            j["selection_ratio"] = nullptr;
        }
        j["calls"] = s.calls;
        j["prompt_tokens"] = s.prompt_tokens;
        j["completion_tokens"] = s.completion_tokens;
        j["avg_tokens_per_sample"] = s.avg_tokens_per_sample;
        j["cost"] = s.cost;
        j["flags"] = s.flag_counts;
        j["errors"] = s.error_counts;
        out << j.dump() << "\n";
        return kExitOk;
    }
    out << "records " << s.records << ", failed " << s.failed << "\n";
    if (s.selection) {
        out << "selection ratio " << std::fixed << std::setprecision(3) << s.selection->ratio << " ("
            << s.selection->combined << "/" << s.selection->eligible << " combined, " << s.selection->excluded
            << " excluded)\n";
    } else {
        out << "selection ratio n/a\n";
    }
    out << std::defaultfloat << "calls " << s.calls << ", avg tokens/sample " << std::fixed << std::setprecision(1)
        << s.avg_tokens_per_sample << ", cost $" << std::setprecision(4) << s.cost << "\n";
    for (const auto& [flag, count] : s.flag_counts) out << "flag " << flag << ": " << count << "\n";
    for (const auto& [kind, count] : s.error_counts) out << "error " << kind << ": " << count << "\n";
    return kExitOk;
}

void add_common(CLI::App* cmd, CommonOptions& o, bool pipeline_flags) {
    cmd->add_option("--config", o.config_path, "Run configuration file");
    cmd->add_option("--mock", o.mock, "Offline backend: oracle:<fixture> or script:<json>");
    cmd->add_option("--url", o.url, "OpenAI-compatible endpoint base URL");
    cmd->add_option("--model", o.model, "Model id");
    cmd->add_flag("--json", o.json_output, "Machine-readable output");
    if (pipeline_flags) {
        cmd->add_option("--strategy", o.strategy, "Strategy name");
        cmd->add_option("--n", o.n, "Number of experts or samples");
        cmd->add_option("--temperature", o.temperature, "Base temperature, or a comma-separated ladder");
        cmd->add_option("--profile", o.profile, "Temperature profile: chatgpt or mistral");
        cmd->add_option("--seed", o.seed, "Dataset sampling and retry-jitter seed");
        cmd->add_option("--workers", o.workers, "Concurrent samples");
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-expert prompting pipelines and evaluation", "mep"};
    app.require_subcommand(0, 1);
    bool dump = false;
    app.add_flag("--dump-prompts", dump, "Print every prompt template rendered with sample inputs");

    CommonOptions ask_o, run_o, judge_o;

    auto* ask = app.add_subcommand("ask", "Answer one instruction");
    std::string instruction;
    bool show_transcript = false;
    ask->add_option("instruction", instruction, "Instruction text")->required();
    ask->add_flag("--show-transcript", show_transcript, "Print experts, answers and aggregation steps");
    add_common(ask, ask_o, true);

    auto* run_cmd = app.add_subcommand("run", "Run a strategy over a benchmark");
    std::string out_path, dataset_kind, data_path;
    long long limit = -1;
    run_cmd->add_option("--out", out_path, "Record JSONL file (appended; existing samples are skipped)");
    run_cmd->add_option("--dataset", dataset_kind, "Benchmark kind");
    run_cmd->add_option("--data", data_path, "Benchmark source path");
    run_cmd->add_option("--limit", limit, "Run only the first N tasks");
    add_common(run_cmd, run_o, true);

    auto* judge = app.add_subcommand("judge", "Compare two record files with a judge model");
    std::string path_a, path_b, metric = "informativeness", verdict_path;
    bool swap = false;
    judge->add_option("results_a", path_a, "Record file A")->required();
    judge->add_option("results_b", path_b, "Record file B")->required();
    judge->add_option("--metric", metric, "informativeness or usefulness");
    judge->add_flag("--swap", swap, "Judge both orderings; disagreement counts as a draw");
    judge->add_option("--out", verdict_path, "Verdict JSONL file");
    add_common(judge, judge_o, false);

    auto* report = app.add_subcommand("report", "Summarize record files");
    std::vector<std::string> report_paths;
    bool report_json = false;
    report->add_option("files", report_paths, "Record files")->required();
    report->add_flag("--json", report_json, "Emit one JSON document");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (dump) {
            out << prompts::dump_prompts();
            return kExitOk;
        }
        if (ask->parsed()) return cmd_ask(instruction, show_transcript, ask_o, *ask, out, err);
        if (run_cmd->parsed()) return cmd_run(out_path, dataset_kind, data_path, limit, run_o, *run_cmd, out, err);
        if (judge->parsed()) return cmd_judge(path_a, path_b, metric, swap, verdict_path, judge_o, *judge, out, err);
        if (report->parsed()) return cmd_report(report_paths, report_json, out);
        err << app.help();
        return kExitUsage;
    } catch (const CommandFailure& f) {
        err << "error: " << f.message << "\n";
        return f.code;
    } catch (const pipelines::ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const gateway::GatewayError& e) {
        err << "error: " << e.what() << "\n";
        return kExitBackendFailure;
    }
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace mep::cli
