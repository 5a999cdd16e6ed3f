#include <doctest.h>

#include <atomic>
#include <functional>
#include <map>

#include "../support/fixtures.hpp"
#include "mep/oracle_backend.hpp"
#include "mep/pipelines.hpp"
#include "mep/record_io.hpp"

using namespace mep;
using namespace mep::pipelines;
using mep::gateway::ChatRequest;
using mep::testing::OracleRig;
using mep::testing::Rig;
using mep::testing::TempDir;

namespace {

/// Oracle answers unless the hook intercepts the request (by returning text or throwing).
class HookedOracle : public gateway::Backend {
public:
    using Hook = std::function<std::optional<std::string>(const ChatRequest&)>;

    HookedOracle(oracle::OracleFixture fixture, Hook hook) : oracle_(std::move(fixture)), hook_(std::move(hook)) {}

    std::string id() const override { return "hooked"; }
    gateway::BackendReply generate(const ChatRequest& r) override {
        ++calls;
        std::optional<std::string> text = hook_ ? hook_(r) : std::nullopt;
        if (!text) text = oracle_(r);
        if (!text) throw gateway::GatewayError(gateway::GatewayErrc::BackendRejected, "no reply");
        return {*text, gateway::approx_token_count(r.prompt), gateway::approx_token_count(*text)};
    }

    std::atomic<int> calls{0};

private:
    oracle::OracleResponder oracle_;
    Hook hook_;
};

bool has(std::string_view hay, std::string_view needle) { return hay.find(needle) != std::string_view::npos; }

bool is_step(const ChatRequest& r, std::string_view step) {
    for (const auto& t : r.tags) {
        if (t == "step:" + std::string(step)) return true;
    }
    return false;
}

PipelineConfig config(Strategy s, int n = 3) {
    PipelineConfig cfg;
    cfg.strategy = s;
    cfg.n = n;
    if (s == Strategy::VarTempAgg && n != 3) {
        cfg.temperature.ladder.assign(static_cast<std::size_t>(n), 0.5);
    }
    return cfg;
}

template <typename F>
FailureKind failure_of(F&& f, PipelineRecord* partial = nullptr) {
    try {
        f();
    } catch (const PipelineError& e) {
        if (partial) *partial = e.partial();
        return e.code();
    }
    FAIL("expected PipelineError");
    return FailureKind::InvalidInput;
}

const Task kTask{"sample-1", "Why did the Roman Empire fall?", "history", Dataset::Adhoc};

}  // namespace

TEST_CASE("call count table") {
    const std::map<Strategy, int> at3 = {
        {Strategy::MultiExpert, 5},  {Strategy::ZeroShot, 1},     {Strategy::ZeroShotCoT, 1},
        {Strategy::SelfRefine, 5},   {Strategy::ExpertPrompting, 2}, {Strategy::FixedTempAgg, 4},
        {Strategy::VarTempAgg, 4},   {Strategy::ExpertPromptingAgg, 5}, {Strategy::NaiveAgg, 5},
    };
    for (auto s : kAllStrategies) CHECK(expected_call_count(s, 3) == at3.at(s));
    CHECK(expected_call_count(Strategy::MultiExpert, 1) == 3);
    CHECK(expected_call_count(Strategy::MultiExpert, 7) == 9);
    CHECK(expected_call_count(Strategy::FixedTempAgg, 7) == 8);
}

TEST_CASE("strategy names round-trip") {
    for (auto s : kAllStrategies) CHECK(parse_strategy(to_string(s)) == s);
    CHECK(to_string(Strategy::MultiExpert) == "multi-expert");
    CHECK(to_string(Strategy::ExpertPromptingAgg) == "expert-prompting-agg");
    CHECK_FALSE(parse_strategy("multi_expert"));
    CHECK(aggregates(Strategy::MultiExpert));
    CHECK(aggregates(Strategy::NaiveAgg));
    CHECK_FALSE(aggregates(Strategy::SelfRefine));
    CHECK_FALSE(aggregates(Strategy::ZeroShot));
}

TEST_CASE("temperature profiles") {
    CHECK(TemperatureProfile::named("chatgpt")->ladder == std::vector<double>{0.0, 0.4, 0.8});
    CHECK(TemperatureProfile::named("mistral")->base == doctest::Approx(0.1));
    CHECK_FALSE(TemperatureProfile::named("llama"));
}

TEST_CASE("configuration validation") {
    auto code_of = [](const PipelineConfig& cfg) {
        try {
            cfg.validate();
        } catch (const ConfigError& e) {
            return std::optional<ConfigErrc>(e.code());
        }
        return std::optional<ConfigErrc>();
    };
    PipelineConfig ok;
    CHECK_FALSE(code_of(ok));
    auto c = ok;
    c.n = 0;
    CHECK(code_of(c) == ConfigErrc::InvalidCount);
    c = ok;
    c.temperature.base = 2.5;
    CHECK(code_of(c) == ConfigErrc::InvalidTemperature);
    c = ok;
    c.max_parse_retries = -1;
    CHECK(code_of(c) == ConfigErrc::InvalidRetries);
    c = config(Strategy::VarTempAgg);
    c.n = 4;
    CHECK(code_of(c) == ConfigErrc::LadderMismatch);
    c.temperature.ladder = {0.0, 0.3, 0.6, 0.9};
    CHECK_FALSE(code_of(c));
    c.temperature.ladder = {0.0, 0.3, 0.6, -0.1};
    CHECK(code_of(c) == ConfigErrc::InvalidTemperature);
}

TEST_CASE("every strategy makes exactly its call count") {
    for (int n : {1, 2, 3, 5}) {
        for (auto s : kAllStrategies) {
            std::mt19937_64 rng(static_cast<std::uint64_t>(n));
            auto fixture = mep::testing::random_fixture(rng, n, 5);
            OracleRig rig(fixture);
            const auto rec = run_strategy(kTask, config(s, n), rig.gw);
            INFO(to_string(s), " n=", n);
            CHECK(rec.ok());
            CHECK(rec.call_count == expected_call_count(s, n));
            CHECK(rec.retry_calls == 0);
            CHECK(rig.ledger.size() == static_cast<std::size_t>(rec.call_count));
            CHECK(rec.usage.calls == rec.call_count);
            CHECK(rec.temperatures.size() == static_cast<std::size_t>(rec.call_count));
            CHECK(rec.transcript.has_value() == aggregates(s));
            CHECK(rec.selection.has_value() == aggregates(s));
            CHECK_FALSE(rec.final_answer.empty());
            CHECK(rec.strategy == s);
            CHECK(rec.sample_id == "sample-1");
        }
    }
}

TEST_CASE("multi-expert on the reference fixture") {
    const auto fixture = mep::testing::reference_fixture();
    OracleRig rig(fixture);
    const auto rec = run_multi_expert(kTask, config(Strategy::MultiExpert), rig.gw);
    REQUIRE(rec.experts.size() == 3);
    CHECK(rec.experts[0].role == "Historian");
    CHECK(rec.experts[2].ordinal == 3);
    REQUIRE(rec.expert_answers.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(oracle::decode_viewset(rec.expert_answers[i]).keypoints == fixture.experts[i].view.keypoints);
    }
    CHECK(rec.final_answer == "KP t1 + alpha\nKP t2 + beta\nKP t4 + delta");
    CHECK(rec.selection == transcript::Selection::combined());
    CHECK(rec.flags.empty());
    CHECK(rec.temperatures == std::vector<double>{0.0, 0.0, 0.0, 0.0, 0.0});

    // Step order and tags.
    const auto seen = rig.mock->requests_seen();
    REQUIRE(seen.size() == 5);
    CHECK(is_step(seen[0], "ExpertGeneration"));
    for (int i = 1; i <= 3; ++i) CHECK(is_step(seen[static_cast<std::size_t>(i)], "ExpertCasting"));
    CHECK(is_step(seen[4], "Aggregation"));
    for (const auto& entry : rig.ledger.entries()) {
        CHECK(entry.sample_tag() == "sample-1");
        CHECK(entry.has_tag("strategy:multi-expert"));
        CHECK_FALSE(entry.has_tag("retry"));
    }
    CHECK(has(seen[1].prompt, "an excellent Historian described as studies past events"));
}

TEST_CASE("n = 1 still aggregates") {
    oracle::OracleFixture one;
    one.experts.push_back({"Solo", "works alone", {1, {{"t1", oracle::Polarity::Positive, "only"}}}});
    OracleRig rig(one);
    const auto rec = run_multi_expert(kTask, config(Strategy::MultiExpert, 1), rig.gw);
    CHECK(rec.call_count == 3);
    CHECK(rig.ledger.size() == 3);
    CHECK(rec.final_answer == "KP t1 + only");
}

TEST_CASE("temperatures per strategy") {
    const auto fixture = mep::testing::reference_fixture();
    SUBCASE("var-temp-agg walks the ladder, aggregation uses the base") {
        for (const auto& profile : {TemperatureProfile::chatgpt(), TemperatureProfile::mistral()}) {
            OracleRig rig(fixture);
            auto cfg = config(Strategy::VarTempAgg);
            cfg.temperature = profile;
            const auto rec = run_strategy(kTask, cfg, rig.gw);
            std::vector<double> expected = profile.ladder;
            expected.push_back(profile.base);
            CHECK(rec.temperatures == expected);
            const auto seen = rig.mock->requests_seen();
            REQUIRE(seen.size() == 4);
            for (std::size_t i = 0; i < 4; ++i) CHECK(seen[i].temperature == expected[i]);
            for (int i = 0; i < 3; ++i) CHECK(seen[static_cast<std::size_t>(i)].replicate == i);
        }
    }
    SUBCASE("fixed-temp-agg samples distinct replicates at the base") {
        OracleRig rig(fixture);
        auto cfg = config(Strategy::FixedTempAgg);
        cfg.temperature = TemperatureProfile::mistral();
        const auto rec = run_strategy(kTask, cfg, rig.gw);
        CHECK(rec.temperatures == std::vector<double>(4, 0.1));
        // Distinct replicates reach the responder, which answers with different viewsets.
        CHECK(rec.expert_answers[0] != rec.expert_answers[1]);
        CHECK(rec.expert_answers[1] != rec.expert_answers[2]);
    }
}

TEST_CASE("baseline strategies") {
    const auto fixture = mep::testing::reference_fixture();
    SUBCASE("zero-shot sends the bare question") {
        OracleRig rig(fixture);
        const auto rec = run_baseline(Strategy::ZeroShot, kTask, config(Strategy::ZeroShot), rig.gw);
        CHECK(rig.mock->requests_seen().at(0).prompt == kTask.prompt);
        CHECK(rec.final_answer == oracle::encode_viewset(fixture.experts[0].view));
    }
    SUBCASE("zero-shot-cot keeps the final-answer section") {
        auto mock = std::make_shared<gateway::MockBackend>();
        mock->set_fallback("Explanation: reasons here.\nFinal answer: It split in two.");
        Rig rig(mock);
        const auto rec = run_baseline(Strategy::ZeroShotCoT, kTask, config(Strategy::ZeroShotCoT), rig.gw);
        CHECK(rec.final_answer == "It split in two.");
    }
    SUBCASE("self-refine revises twice") {
        int revisions = 0;
        auto backend = std::make_shared<HookedOracle>(fixture, [&](const ChatRequest& r) -> std::optional<std::string> {
            if (is_step(r, "SelfRefineRevise")) return "Final answer: revision " + std::to_string(++revisions);
            return std::nullopt;
        });
        Rig rig(backend);
        const auto rec = run_baseline(Strategy::SelfRefine, kTask, config(Strategy::SelfRefine), rig.gw);
        CHECK(rec.call_count == 5);
        CHECK(rec.final_answer == "revision 2");
    }
    SUBCASE("expert prompting keeps the identity") {
        OracleRig rig(fixture);
        const auto rec = run_baseline(Strategy::ExpertPrompting, kTask, config(Strategy::ExpertPrompting), rig.gw);
        REQUIRE(rec.expert_identity.has_value());
        CHECK_FALSE(rec.expert_identity->empty());
        CHECK(rig.mock->requests_seen().at(1).prompt.starts_with(*rec.expert_identity));
    }
    SUBCASE("multi-expert is not a baseline") {
        OracleRig rig(fixture);
        CHECK_THROWS_AS(run_baseline(Strategy::MultiExpert, kTask, config(Strategy::MultiExpert), rig.gw),
                        ConfigError);
    }
}

TEST_CASE("expert list parse retry") {
    const auto fixture = mep::testing::reference_fixture();
    SUBCASE("second attempt succeeds") {
        auto backend = std::make_shared<HookedOracle>(fixture, [](const ChatRequest& r) -> std::optional<std::string> {
            if (is_step(r, "ExpertGeneration") && r.replicate == 0) return "I would pick a historian and others.";
            return std::nullopt;
        });
        Rig rig(backend);
        const auto rec = run_multi_expert(kTask, config(Strategy::MultiExpert), rig.gw);
        CHECK(rec.call_count == 5);
        CHECK(rec.retry_calls == 1);
        CHECK(rec.usage.calls == 6);
        CHECK(rig.ledger.size() == 6);
        std::size_t retries = 0;
        for (const auto& e : rig.ledger.entries()) retries += e.has_tag("retry");
        CHECK(retries == 1);
        CHECK(rec.temperatures.size() == 5);
    }
    SUBCASE("retries exhausted") {
        auto backend = std::make_shared<HookedOracle>(fixture, [](const ChatRequest& r) -> std::optional<std::string> {
            if (is_step(r, "ExpertGeneration")) return "Answer: {\"Only one\": \"expert\"}";
            return std::nullopt;
        });
        Rig rig(backend);
        auto cfg = config(Strategy::MultiExpert);
        cfg.max_parse_retries = 2;
        PipelineRecord partial;
        CHECK(failure_of([&] { run_multi_expert(kTask, cfg, rig.gw); }, &partial) == FailureKind::ExpertParseFailure);
        CHECK(backend->calls == 3);
        CHECK(partial.call_count == 1);
        CHECK(partial.retry_calls == 2);
        REQUIRE(partial.error.has_value());
        CHECK(partial.error->kind == "ExpertParseFailure");
        CHECK(has(partial.error->message, "expected 3 experts, found 1"));
    }
}

TEST_CASE("aggregation parse failure keeps the expert answers") {
    auto backend = std::make_shared<HookedOracle>(mep::testing::reference_fixture(),
                                                  [](const ChatRequest& r) -> std::optional<std::string> {
                                                      if (is_step(r, "Aggregation")) return "I cannot decide.";
                                                      return std::nullopt;
                                                  });
    Rig rig(backend);
    PipelineRecord partial;
    CHECK(failure_of([&] { run_multi_expert(kTask, config(Strategy::MultiExpert), rig.gw); }, &partial) ==
          FailureKind::AggregationParseFailure);
    CHECK(partial.expert_answers.size() == 3);
    CHECK(partial.retry_calls == 1);
    CHECK_FALSE(partial.transcript.has_value());
}

TEST_CASE("backend outage during casting") {
    auto backend = std::make_shared<HookedOracle>(mep::testing::reference_fixture(),
                                                  [](const ChatRequest& r) -> std::optional<std::string> {
                                                      if (has(r.prompt, "an excellent Economist")) {
                                                          throw gateway::TransientBackendError("timeout");
                                                      }
                                                      return std::nullopt;
                                                  });
    Rig rig(backend, {}, 2);
    PipelineRecord partial;
    CHECK(failure_of([&] { run_multi_expert(kTask, config(Strategy::MultiExpert), rig.gw); }, &partial) ==
          FailureKind::BackendUnavailable);
    CHECK(partial.expert_answers.size() == 1);
    CHECK(partial.experts.size() == 3);
    CHECK(backend->calls == 1 + 1 + 3);  // generation, first casting, three attempts at the second
    CHECK(rig.ledger.size() == 2);
}

TEST_CASE("rejection and empty replies") {
    const auto fixture = mep::testing::reference_fixture();
    auto rejecting = std::make_shared<HookedOracle>(fixture, [](const ChatRequest&) -> std::optional<std::string> {
        throw gateway::GatewayError(gateway::GatewayErrc::BackendRejected, "401");
    });
    Rig r1(rejecting);
    CHECK(failure_of([&] { run_multi_expert(kTask, config(Strategy::MultiExpert), r1.gw); }) ==
          FailureKind::BackendRejected);
    CHECK(rejecting->calls == 1);

    auto empty = std::make_shared<HookedOracle>(fixture, [](const ChatRequest& r) -> std::optional<std::string> {
        if (is_step(r, "ExpertCasting")) return "   ";
        return std::nullopt;
    });
    Rig r2(empty);
    CHECK(failure_of([&] { run_multi_expert(kTask, config(Strategy::MultiExpert), r2.gw); }) ==
          FailureKind::EmptyResponse);

    OracleRig r3(fixture);
    CHECK(failure_of([&] { run_multi_expert({"x", "  ", "", Dataset::Adhoc}, config(Strategy::MultiExpert), r3.gw); }) ==
          FailureKind::InvalidInput);
    CHECK(r3.ledger.size() == 0);
}

TEST_CASE("selection flags") {
    const auto fixture = mep::testing::reference_fixture();
    SUBCASE("fallback") {
        auto backend = std::make_shared<HookedOracle>(fixture, [](const ChatRequest& r) -> std::optional<std::string> {
            if (is_step(r, "Aggregation")) {
                return "Combined answer: merged text\nBest answer choice: Combined answer\nExplanation: fine\n";
            }
            return std::nullopt;
        });
        Rig rig(backend);
        const auto rec = run_multi_expert(kTask, config(Strategy::MultiExpert), rig.gw);
        CHECK(rec.final_answer == "merged text");
        CHECK(std::find(rec.flags.begin(), rec.flags.end(), "FallbackUsed") != rec.flags.end());
        CHECK(std::find(rec.flags.begin(), rec.flags.end(), "MissingSection(FinalAnswer)") != rec.flags.end());
    }
    SUBCASE("divergence") {
        auto backend = std::make_shared<HookedOracle>(fixture, [](const ChatRequest& r) -> std::optional<std::string> {
            if (is_step(r, "Aggregation")) {
                return "Combined answer: merged\nBest answer choice: Answer 2\nExplanation: e\nFinal answer: "
                       "something else\n";
            }
            return std::nullopt;
        });
        Rig rig(backend);
        const auto rec = run_multi_expert(kTask, config(Strategy::MultiExpert), rig.gw);
        CHECK(rec.selection == transcript::Selection::expert(2));
        CHECK(rec.flags == std::vector<std::string>{"MissingSection(Agreed)", "MissingSection(Conflicted)",
                                                    "MissingSection(Resolved)", "MissingSection(Uniques)",
                                                    "MissingSection(MergedFacts)", "FinalAnswerDivergence"});
    }
}

TEST_CASE("concurrent casting matches sequential casting") {
    std::mt19937_64 rng(41);
    const auto fixture = mep::testing::random_fixture(rng, 5, 6);
    OracleRig seq(fixture);
    OracleRig par(fixture);
    auto cfg = config(Strategy::MultiExpert, 5);
    const auto a = run_multi_expert(kTask, cfg, seq.gw);
    cfg.fanout_workers = 4;
    const auto b = run_multi_expert(kTask, cfg, par.gw);
    CHECK(a.expert_answers == b.expert_answers);
    CHECK(a.final_answer == b.final_answer);
    CHECK(a.selection == b.selection);
    CHECK(par.ledger.size() == 7);
}

TEST_CASE("reruns are deterministic and a warm cache makes no calls") {
    const auto fixture = mep::testing::reference_fixture();
    auto strip = [](PipelineRecord r) {
        r.wall_time_s = 0;
        return record_io::to_json_line(r);
    };
    auto cache = std::make_shared<gateway::ResponseCache>();
    Rig rig(oracle::make_oracle_backend(fixture), {}, 3, cache);
    const auto first = run_multi_expert(kTask, config(Strategy::MultiExpert), rig.gw);
    const auto second = run_multi_expert(kTask, config(Strategy::MultiExpert), rig.gw);
    CHECK(rig.ledger.size() == 5);
    CHECK(second.call_count == 5);
    CHECK(second.usage.calls == 0);
    auto first_no_usage = first;
    first_no_usage.usage = {};
    CHECK(strip(first_no_usage) == strip(second));

    OracleRig fresh(fixture);
    CHECK(strip(run_multi_expert(kTask, config(Strategy::MultiExpert), fresh.gw)) == strip(first));
}

TEST_CASE("record usage matches the ledger") {
    OracleRig rig(mep::testing::reference_fixture(), {0.0015, 0.002});
    const auto rec = run_multi_expert(kTask, config(Strategy::MultiExpert), rig.gw);
    const auto summary = gateway::summarize_usage(rig.ledger);
    CHECK(rec.usage.prompt_tokens == summary.prompt_tokens);
    CHECK(rec.usage.completion_tokens == summary.completion_tokens);
    CHECK(rec.usage.cost == doctest::Approx(summary.total_cost));
    CHECK(rec.usage.cost > 0);
}

// ---------------------------------------------------------------------------
// Batches

namespace {

std::vector<Task> batch_tasks(std::size_t count) {
    std::vector<Task> tasks;
    for (std::size_t i = 0; i < count; ++i) {
        tasks.push_back({make_sample_id(Dataset::TruthfulQA, i), "Question number " + std::to_string(i) + "?",
                         "Misconceptions", Dataset::TruthfulQA});
    }
    return tasks;
}

std::shared_ptr<HookedOracle> failing_on(const std::set<std::string>& questions) {
    return std::make_shared<HookedOracle>(mep::testing::reference_fixture(),
                                          [questions](const ChatRequest& r) -> std::optional<std::string> {
                                              for (const auto& q : questions) {
                                                  if (has(r.prompt, q) && is_step(r, "Aggregation")) {
                                                      return "unparseable";
                                                  }
                                              }
                                              return std::nullopt;
                                          });
}

}  // namespace

TEST_CASE("batch with failures, then resume") {
    for (int workers : {1, 4}) {
        TempDir dir("batch");
        const auto out = dir / "records.jsonl";
        const auto tasks = batch_tasks(10);
        {
            Rig rig(failing_on({"Question number 3?", "Question number 7?"}));
            JsonlSink sink(out);
            const auto report = run_batch(tasks, config(Strategy::MultiExpert), rig.gw, sink, {workers});
            CHECK(report.completed == 8);
            CHECK(report.failed == 2);
            CHECK(report.skipped == 0);
        }
        const auto records = record_io::read_records(out);
        REQUIRE(records.size() == 10);
        std::set<std::string> failed;
        for (const auto& r : records) {
            if (!r.ok()) {
                failed.insert(r.instruction);
                CHECK(r.error->kind == "AggregationParseFailure");
            }
        }
        CHECK(failed == std::set<std::string>{"Question number 3?", "Question number 7?"});

        auto backend = failing_on({});
        Rig rig(backend);
        JsonlSink sink(out);
        const auto again = run_batch(tasks, config(Strategy::MultiExpert), rig.gw, sink, {workers});
        CHECK(again.skipped == 10);
        CHECK(again.completed == 0);
        CHECK(backend->calls == 0);
        CHECK(record_io::read_records(out).size() == 10);
    }
}

TEST_CASE("batch resumes after a partial file") {
    TempDir dir("resume");
    const auto out = dir / "records.jsonl";
    const auto tasks = batch_tasks(6);
    {
        OracleRig rig(mep::testing::reference_fixture());
        JsonlSink sink(out);
        const std::vector<Task> head(tasks.begin(), tasks.begin() + 4);
        CHECK(run_batch(head, config(Strategy::MultiExpert), rig.gw, sink).completed == 4);
    }
    // Simulate a crash mid-write: an unterminated trailing fragment.
    {
        std::ofstream f(out, std::ios::app | std::ios::binary);
        f << R"({"schema_version":1,"sample_id":"trunc)";
    }
    OracleRig rig(mep::testing::reference_fixture());
    JsonlSink sink(out);
    const auto report = run_batch(tasks, config(Strategy::MultiExpert), rig.gw, sink);
    CHECK(report.skipped == 4);
    CHECK(report.completed == 2);
    CHECK(rig.ledger.size() == 10);
    const auto lines = mep::testing::read_lines(out);
    CHECK(lines.size() == 7);
    CHECK(record_io::read_sample_ids(out).size() == 6);
}

TEST_CASE("duplicate sample ids in one batch run once") {
    auto tasks = batch_tasks(3);
    tasks.push_back(tasks[1]);
    OracleRig rig(mep::testing::reference_fixture());
    MemorySink sink;
    const auto report = run_batch(tasks, config(Strategy::MultiExpert), rig.gw, sink, {3});
    CHECK(report.completed == 3);
    CHECK(report.skipped == 1);
    CHECK(sink.records().size() == 3);
}

TEST_CASE("unwritable sink") {
    TempDir dir("sink");
    CHECK_THROWS_AS(JsonlSink(dir.path()), SinkError);
    CHECK_THROWS_AS(JsonlSink(dir / "missing" / "deeper" / "out.jsonl"), SinkError);
}

TEST_CASE("sample ids") {
    CHECK(make_sample_id(Dataset::TruthfulQA, 3) == make_sample_id(Dataset::TruthfulQA, 3));
    CHECK(make_sample_id(Dataset::TruthfulQA, 3) != make_sample_id(Dataset::TruthfulQA, 4));
    CHECK(make_sample_id(Dataset::TruthfulQA, 3) != make_sample_id(Dataset::ExpertQA, 3));
    CHECK(adhoc_task("Q").sample_id == adhoc_task("Q").sample_id);
    CHECK(adhoc_task("Q").dataset == Dataset::Adhoc);
    for (auto d : {Dataset::ExpertQA, Dataset::TruthfulQA, Dataset::FactualityPromptFactual,
                   Dataset::FactualityPromptNonfactual, Dataset::BOLD, Dataset::HONEST, Dataset::Adhoc}) {
        CHECK(parse_dataset(to_string(d)) == d);
    }
}
