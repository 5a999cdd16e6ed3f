#include "mep/pipelines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <atomic>
#include <thread>

#include "mep/hashing.hpp"
#include "mep/record_io.hpp"

namespace mep {

std::string_view to_string(Dataset dataset) {
    switch (dataset) {
        case Dataset::ExpertQA: return "expertqa";
        case Dataset::TruthfulQA: return "truthfulqa";
        case Dataset::FactualityPromptFactual: return "factualityprompt-factual";
        case Dataset::FactualityPromptNonfactual: return "factualityprompt-nonfactual";
        case Dataset::BOLD: return "bold";
        case Dataset::HONEST: return "honest";
        case Dataset::Adhoc: return "adhoc";
    }
    return "adhoc";
}

std::optional<Dataset> parse_dataset(std::string_view name) {
    for (auto d : {Dataset::ExpertQA, Dataset::TruthfulQA, Dataset::FactualityPromptFactual,
                   Dataset::FactualityPromptNonfactual, Dataset::BOLD, Dataset::HONEST, Dataset::Adhoc}) {
        if (to_string(d) == name) return d;
    }
    return std::nullopt;
}

std::string make_sample_id(Dataset dataset, std::size_t source_index) {
    return short_digest(std::string(to_string(dataset)) + ":" + std::to_string(source_index));
}

Task adhoc_task(std::string instruction) {
    Task task;
    task.sample_id = short_digest("adhoc:" + instruction);
    task.prompt = std::move(instruction);
    task.dataset = Dataset::Adhoc;
    return task;
}

}  // namespace mep

namespace mep::pipelines {

using gateway::ChatRequest;
using gateway::Completion;
using gateway::GatewayErrc;
using gateway::GatewayError;
using prompts::PromptKind;
using transcript::ParseError;
using transcript::ParseFlag;

std::string_view to_string(Strategy strategy) {
    switch (strategy) {
        case Strategy::MultiExpert: return "multi-expert";
        case Strategy::ZeroShot: return "zero-shot";
        case Strategy::ZeroShotCoT: return "zero-shot-cot";
        case Strategy::SelfRefine: return "self-refine";
        case Strategy::ExpertPrompting: return "expert-prompting";
        case Strategy::FixedTempAgg: return "fixed-temp-agg";
        case Strategy::VarTempAgg: return "var-temp-agg";
        case Strategy::ExpertPromptingAgg: return "expert-prompting-agg";
        case Strategy::NaiveAgg: return "naive-agg";
    }
    return "multi-expert";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
    for (auto s : kAllStrategies) {
        if (to_string(s) == name) return s;
    }
    return std::nullopt;
}

bool aggregates(Strategy strategy) {
    switch (strategy) {
        case Strategy::MultiExpert:
        case Strategy::FixedTempAgg:
        case Strategy::VarTempAgg:
        case Strategy::ExpertPromptingAgg:
        case Strategy::NaiveAgg: return true;
        default: return false;
    }
}

int expected_call_count(Strategy strategy, int n) {
    switch (strategy) {
        case Strategy::MultiExpert: return n + 2;
        case Strategy::ZeroShot: return 1;
        case Strategy::ZeroShotCoT: return 1;
        case Strategy::SelfRefine: return 5;
        case Strategy::ExpertPrompting: return 2;
        case Strategy::FixedTempAgg: return n + 1;
        case Strategy::VarTempAgg: return n + 1;
        case Strategy::ExpertPromptingAgg: return n + 2;
        case Strategy::NaiveAgg: return n + 2;
    }
    return 0;
}

std::optional<TemperatureProfile> TemperatureProfile::named(std::string_view name) {
    if (name == "chatgpt") return chatgpt();
    if (name == "mistral") return mistral();
    return std::nullopt;
}

void PipelineConfig::validate() const {
    if (n < 1) throw ConfigError(ConfigErrc::InvalidCount, "n must be at least 1, got " + std::to_string(n));
    auto bad_temp = [](double t) { return !std::isfinite(t) || t < 0.0 || t > 2.0; };
    if (bad_temp(temperature.base)) throw ConfigError(ConfigErrc::InvalidTemperature, "base temperature out of range");
    for (double t : temperature.ladder) {
        if (bad_temp(t)) throw ConfigError(ConfigErrc::InvalidTemperature, "ladder temperature out of range");
    }
    if (strategy == Strategy::VarTempAgg && temperature.ladder.size() != static_cast<std::size_t>(n)) {
        throw ConfigError(ConfigErrc::LadderMismatch, "var-temp-agg needs " + std::to_string(n) +
                                                          " ladder temperatures, got " +
                                                          std::to_string(temperature.ladder.size()));
    }
    if (max_parse_retries < 0) throw ConfigError(ConfigErrc::InvalidRetries, "max_parse_retries must be >= 0");
}

std::string_view to_string(FailureKind kind) {
    switch (kind) {
        case FailureKind::ExpertParseFailure: return "ExpertParseFailure";
        case FailureKind::AggregationParseFailure: return "AggregationParseFailure";
        case FailureKind::EmptyResponse: return "EmptyResponse";
        case FailureKind::BackendUnavailable: return "BackendUnavailable";
        case FailureKind::BackendRejected: return "BackendRejected";
        case FailureKind::InvalidInput: return "InvalidInput";
    }
    return "InvalidInput";
}

PipelineError::PipelineError(FailureKind kind, const std::string& message, PipelineRecord partial)
    : CodedError<FailureKind>(kind, std::string(to_string(kind)) + ": " + message), partial_(std::move(partial)) {
    partial_.error = ErrorInfo{std::string(to_string(kind)), message};
}

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

/// Text after the last "final answer:" (or "final_answer:") label, else the whole reply.
std::string final_section(std::string_view reply) {
    const std::string low = lower(reply);
    std::size_t best = std::string::npos;
    std::size_t label_len = 0;
    for (std::string_view label : {"final answer:", "final_answer:"}) {
        const auto pos = low.rfind(label);
        if (pos != std::string::npos && (best == std::string::npos || pos > best)) {
            best = pos;
            label_len = label.size();
        }
    }
    if (best == std::string::npos) return trim(reply);
    std::string tail = trim(reply.substr(best + label_len));
    return tail.empty() ? trim(reply.substr(0, best)) : tail;
}

class Run {
public:
    Run(const Task& task, const PipelineConfig& cfg, gateway::Gateway& gw, const prompts::PromptKit& kit)
        : cfg_(cfg), gw_(gw), kit_(kit), started_(std::chrono::steady_clock::now()) {
        record_.sample_id = task.sample_id.empty() ? adhoc_task(task.prompt).sample_id : task.sample_id;
        record_.instruction = task.prompt;
        record_.dataset = task.dataset;
        record_.category = task.category;
        record_.strategy = cfg.strategy;
        record_.model_id = cfg.model_id;
    }

    PipelineRecord& record() { return record_; }
    const PipelineConfig& cfg() const { return cfg_; }
    const prompts::PromptKit& kit() const { return kit_; }

    [[noreturn]] void fail(FailureKind kind, const std::string& message) {
        PipelineRecord snapshot;
        {
            std::lock_guard lock(mutex_);
            finish();
            snapshot = record_;
        }
        throw PipelineError(kind, message, std::move(snapshot));
    }

    /// Renders via `render`, mapping prompt errors to InvalidInput.
    template <typename F>
    std::string prompt(F&& render) {
        try {
            return render().text;
        } catch (const prompts::PromptError& e) {
            fail(FailureKind::InvalidInput, e.what());
        }
    }

    std::string call(const std::string& prompt, PromptKind kind, double temperature, int replicate = 0,
                     bool retry = false) {
        ChatRequest req;
        req.model_id = cfg_.model_id;
        req.prompt = prompt;
        req.temperature = temperature;
        req.max_output_tokens = cfg_.max_output_tokens;
        req.replicate = replicate;
        req.tags = {std::string(gateway::kSampleTagPrefix) + record_.sample_id,
                    "strategy:" + std::string(to_string(cfg_.strategy)), "step:" + std::string(to_string(kind))};
        if (retry) req.tags.emplace_back("retry");

        Completion c;
        try {
            c = gw_.complete(req);
        } catch (const GatewayError& e) {
            if (e.code() == GatewayErrc::BackendUnavailable) fail(FailureKind::BackendUnavailable, e.what());
            if (e.code() == GatewayErrc::BackendRejected) fail(FailureKind::BackendRejected, e.what());
            fail(FailureKind::InvalidInput, e.what());
        }
        account(c, temperature, retry);
        return c.text;
    }

    /// Text that must be nonblank to feed a later prompt.
    std::string require_text(std::string text, std::string_view what) {
        std::string t = trim(text);
        if (t.empty()) fail(FailureKind::EmptyResponse, std::string(what) + " was empty");
        return t;
    }

    void finish() {
        record_.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    }

    void account(const Completion& c, double temperature, bool retry) {
        std::lock_guard lock(mutex_);
        if (retry) {
            ++record_.retry_calls;
        } else {
            ++record_.call_count;
            record_.temperatures.push_back(temperature);
        }
        if (!c.cache_hit) {
            ++record_.usage.calls;
            record_.usage.prompt_tokens += c.prompt_tokens;
            record_.usage.completion_tokens += c.completion_tokens;
            record_.usage.cost += gateway::call_cost(c.prompt_tokens, c.completion_tokens, gw_.ledger().prices());
        }
    }

private:
    const PipelineConfig& cfg_;
    gateway::Gateway& gw_;
    const prompts::PromptKit& kit_;
    PipelineRecord record_;
    std::chrono::steady_clock::time_point started_;
    std::mutex mutex_;
};

void generate_experts(Run& run) {
    const auto& cfg = run.cfg();
    const auto& instruction = run.record().instruction;
    const std::string prompt =
        run.prompt([&] { return run.kit().render_expert_generation(instruction, cfg.n); });
    std::string last_error;
    for (int attempt = 0; attempt <= cfg.max_parse_retries; ++attempt) {
        const std::string reply =
            run.call(prompt, PromptKind::ExpertGeneration, cfg.temperature.base, attempt, attempt > 0);
        try {
            run.record().experts = transcript::parse_expert_list(reply, cfg.n);
            return;
        } catch (const ParseError& e) {
            last_error = e.what();
        }
    }
    run.fail(FailureKind::ExpertParseFailure, last_error);
}

/// Runs `produce(i)` for i in [0, n), concurrently when configured. Results
/// keep input order; the first failure (by index) is rethrown.
template <typename F>
std::vector<std::string> fan_out(Run& run, int n, F&& produce) {
    std::vector<std::string> out(static_cast<std::size_t>(n));
    const int workers = std::max(1, std::min(run.cfg().fanout_workers, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) {
            out[static_cast<std::size_t>(i)] = produce(i);
            run.record().expert_answers.push_back(out[static_cast<std::size_t>(i)]);
        }
        return out;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    out[static_cast<std::size_t>(i)] = produce(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (int i = 0; i < n; ++i) {
        if (errors[static_cast<std::size_t>(i)]) std::rethrow_exception(errors[static_cast<std::size_t>(i)]);
        run.record().expert_answers.push_back(out[static_cast<std::size_t>(i)]);
    }
    return out;
}

void aggregate(Run& run, PromptKind kind) {
    auto& rec = run.record();
    const auto& answers = rec.expert_answers;
    const int n = static_cast<int>(answers.size());
    std::string prompt;
    if (kind == PromptKind::Aggregation) {
        prompt = run.prompt([&] { return run.kit().render_aggregation(rec.instruction, answers); });
    } else {
        prompts::BaselineContext ctx;
        ctx.answers = answers;
        prompt = run.prompt([&] { return run.kit().render_baseline(kind, rec.instruction, ctx); });
    }
    const auto layout =
        kind == PromptKind::Aggregation ? transcript::TranscriptLayout::SevenStep : transcript::TranscriptLayout::Naive;

    std::string last_error;
    for (int attempt = 0; attempt <= run.cfg().max_parse_retries; ++attempt) {
        const std::string reply = run.call(prompt, kind, run.cfg().temperature.base, attempt, attempt > 0);
        try {
            auto t = transcript::parse_aggregation_transcript(reply, n, layout);
            if (!t.best_choice.is_combined()) {
                const auto& chosen = answers.at(static_cast<std::size_t>(t.best_choice.ordinal() - 1));
                if (trim(t.final_answer) != trim(chosen)) t.add_flag(ParseFlag::divergence());
            }
            rec.final_answer = trim(t.final_answer);
            rec.selection = t.best_choice;
            rec.flags.clear();
            for (const auto& f : t.flags) rec.flags.push_back(f.str());
            rec.transcript = std::move(t);
            return;
        } catch (const ParseError& e) {
            last_error = e.what();
        }
    }
    run.fail(FailureKind::AggregationParseFailure, last_error);
}

void cast_experts(Run& run) {
    auto& rec = run.record();
    const auto experts = rec.experts;
    fan_out(run, static_cast<int>(experts.size()), [&](int i) {
        const auto& e = experts[static_cast<std::size_t>(i)];
        const std::string prompt = run.prompt(
            [&] { return run.kit().render_expert_casting(rec.instruction, {e.role, e.description}); });
        return run.require_text(run.call(prompt, PromptKind::ExpertCasting, run.cfg().temperature.base),
                                "answer of expert " + std::to_string(i + 1));
    });
}

std::string expert_identity(Run& run) {
    auto& rec = run.record();
    const std::string prompt = run.prompt(
        [&] { return run.kit().render_baseline(PromptKind::ExpertPromptingIdentity, rec.instruction); });
    std::string identity =
        run.require_text(run.call(prompt, PromptKind::ExpertPromptingIdentity, run.cfg().temperature.base),
                         "expert identity");
    rec.expert_identity = identity;
    return identity;
}

std::string expert_answer(Run& run, const std::string& identity, int replicate) {
    prompts::BaselineContext ctx;
    ctx.expert_identity = identity;
    const std::string prompt = run.prompt(
        [&] { return run.kit().render_baseline(PromptKind::ExpertPromptingAnswer, run.record().instruction, ctx); });
    return run.require_text(run.call(prompt, PromptKind::ExpertPromptingAnswer, run.cfg().temperature.base, replicate),
                            "expert answer");
}

void zero_shot_samples(Run& run, bool ladder) {
    const auto& cfg = run.cfg();
    const std::string prompt =
        run.prompt([&] { return run.kit().render_baseline(PromptKind::ZeroShot, run.record().instruction); });
    fan_out(run, cfg.n, [&](int i) {
        const double t = ladder ? cfg.temperature.ladder.at(static_cast<std::size_t>(i)) : cfg.temperature.base;
        return run.require_text(run.call(prompt, PromptKind::ZeroShot, t, i),
                                "sample " + std::to_string(i + 1));
    });
}

void self_refine(Run& run) {
    auto& rec = run.record();
    const double t = run.cfg().temperature.base;
    const std::string initial =
        run.prompt([&] { return run.kit().render_baseline(PromptKind::ZeroShot, rec.instruction); });
    std::string answer = run.require_text(run.call(initial, PromptKind::ZeroShot, t), "initial answer");
    for (int round = 0; round < 2; ++round) {
        prompts::BaselineContext fctx;
        fctx.answer = answer;
        const std::string fprompt =
            run.prompt([&] { return run.kit().render_baseline(PromptKind::SelfRefineFeedback, rec.instruction, fctx); });
        const std::string feedback =
            run.require_text(run.call(fprompt, PromptKind::SelfRefineFeedback, t), "feedback");

        prompts::BaselineContext rctx;
        rctx.answer = answer;
        rctx.feedback = feedback;
        const std::string rprompt =
            run.prompt([&] { return run.kit().render_baseline(PromptKind::SelfRefineRevise, rec.instruction, rctx); });
        const std::string revised = final_section(run.call(rprompt, PromptKind::SelfRefineRevise, t));
        if (!revised.empty()) answer = revised;
    }
    rec.final_answer = answer;
}

}  // namespace

PipelineRecord run_multi_expert(const Task& task, const PipelineConfig& cfg, gateway::Gateway& gw,
                                const prompts::PromptKit& kit) {
    PipelineConfig effective = cfg;
    effective.strategy = Strategy::MultiExpert;
    effective.validate();
    Run run(task, effective, gw, kit);
    if (trim(task.prompt).empty()) run.fail(FailureKind::InvalidInput, "instruction is empty");
    generate_experts(run);
    cast_experts(run);
    aggregate(run, PromptKind::Aggregation);
    run.finish();
    return run.record();
}

PipelineRecord run_baseline(Strategy kind, const Task& task, const PipelineConfig& cfg, gateway::Gateway& gw,
                            const prompts::PromptKit& kit) {
    if (kind == Strategy::MultiExpert) {
        throw ConfigError(ConfigErrc::InvalidCount, "multi-expert is not a baseline");
    }
    PipelineConfig effective = cfg;
    effective.strategy = kind;
    effective.validate();
    Run run(task, effective, gw, kit);
    auto& rec = run.record();
    if (trim(task.prompt).empty()) run.fail(FailureKind::InvalidInput, "instruction is empty");
    const double t = effective.temperature.base;

    switch (kind) {
        case Strategy::ZeroShot: {
            const std::string p = run.prompt([&] { return kit.render_baseline(PromptKind::ZeroShot, rec.instruction); });
            rec.final_answer = trim(run.call(p, PromptKind::ZeroShot, t));
            break;
        }
        case Strategy::ZeroShotCoT: {
            const std::string p =
                run.prompt([&] { return kit.render_baseline(PromptKind::ZeroShotCoT, rec.instruction); });
            rec.final_answer = final_section(run.call(p, PromptKind::ZeroShotCoT, t));
            break;
        }
        case Strategy::SelfRefine: self_refine(run); break;
        case Strategy::ExpertPrompting: {
            const std::string identity = expert_identity(run);
            rec.final_answer = expert_answer(run, identity, 0);
            break;
        }
        case Strategy::FixedTempAgg:
            zero_shot_samples(run, false);
            aggregate(run, PromptKind::Aggregation);
            break;
        case Strategy::VarTempAgg:
            zero_shot_samples(run, true);
            aggregate(run, PromptKind::Aggregation);
            break;
        case Strategy::ExpertPromptingAgg: {
            const std::string identity = expert_identity(run);
            fan_out(run, effective.n, [&](int i) { return expert_answer(run, identity, i); });
            aggregate(run, PromptKind::Aggregation);
            break;
        }
        case Strategy::NaiveAgg:
            generate_experts(run);
            cast_experts(run);
            aggregate(run, PromptKind::NaiveAggregation);
            break;
        case Strategy::MultiExpert: break;
    }
    run.finish();
    return rec;
}

PipelineRecord run_strategy(const Task& task, const PipelineConfig& cfg, gateway::Gateway& gw,
                            const prompts::PromptKit& kit) {
    if (cfg.strategy == Strategy::MultiExpert) return run_multi_expert(task, cfg, gw, kit);
    return run_baseline(cfg.strategy, task, cfg, gw, kit);
}

// ---------------------------------------------------------------------------

JsonlSink::JsonlSink(std::filesystem::path path) : path_(std::move(path)) {
    std::error_code ec;
    if (std::filesystem::exists(path_, ec)) {
        try {
            for (const auto& id : record_io::read_sample_ids(path_)) ids_.insert(id);
        } catch (const record_io::RecordError& e) {
            throw SinkError(SinkErrc::SinkUnwritable, e.what());
        }
    }
    bool needs_newline = false;
    if (std::filesystem::is_regular_file(path_, ec) && std::filesystem::file_size(path_, ec) > 0) {
        std::ifstream tail(path_, std::ios::binary | std::ios::ate);
        tail.seekg(-1, std::ios::end);
        needs_newline = tail.get() != '\n';
    }
    out_.open(path_, std::ios::app | std::ios::binary);
    if (!out_) throw SinkError(SinkErrc::SinkUnwritable, "cannot open " + path_.string() + " for appending");
    if (needs_newline) out_ << '\n';
}

bool JsonlSink::contains(const std::string& sample_id) const {
    std::lock_guard lock(mutex_);
    return ids_.contains(sample_id);
}

void JsonlSink::append(const PipelineRecord& record) {
    const std::string line = record_io::to_json_line(record);
    std::lock_guard lock(mutex_);
    out_ << line << '\n';
    out_.flush();
    if (!out_) throw SinkError(SinkErrc::SinkUnwritable, "write to " + path_.string() + " failed");
    ids_.insert(record.sample_id);
}

bool MemorySink::contains(const std::string& sample_id) const {
    std::lock_guard lock(mutex_);
    return std::any_of(records_.begin(), records_.end(), [&](const auto& r) { return r.sample_id == sample_id; });
}

void MemorySink::append(const PipelineRecord& record) {
    std::lock_guard lock(mutex_);
    records_.push_back(record);
}

std::vector<PipelineRecord> MemorySink::records() const {
    std::lock_guard lock(mutex_);
    return records_;
}

BatchReport run_batch(const std::vector<Task>& tasks, const PipelineConfig& cfg, gateway::Gateway& gw,
                      RecordSink& sink, BatchOptions options, const prompts::PromptKit& kit) {
    cfg.validate();
    BatchReport report;
    std::vector<const Task*> pending;
    std::set<std::string> queued;
    for (const auto& task : tasks) {
        if (sink.contains(task.sample_id) || !queued.insert(task.sample_id).second) {
            ++report.skipped;
        } else {
            pending.push_back(&task);
        }
    }

    std::mutex report_mutex;
    std::atomic<std::size_t> next{0};
    std::exception_ptr sink_failure;
    auto worker = [&] {
        for (std::size_t i = next++; i < pending.size(); i = next++) {
            PipelineRecord rec;
            bool ok = true;
            try {
                rec = run_strategy(*pending[i], cfg, gw, kit);
            } catch (const PipelineError& e) {
                rec = e.partial();
                ok = false;
            }
            try {
                sink.append(rec);
            } catch (...) {
                std::lock_guard lock(report_mutex);
                if (!sink_failure) sink_failure = std::current_exception();
                next = pending.size();
                return;
            }
            std::lock_guard lock(report_mutex);
            ++(ok ? report.completed : report.failed);
        }
    };

    const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(pending.size())));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (sink_failure) std::rethrow_exception(sink_failure);
    return report;
}

}  // namespace mep::pipelines
