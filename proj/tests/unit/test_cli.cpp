#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "../support/fixtures.hpp"
#include "mep/cli.hpp"
#include "mep/record_io.hpp"

using namespace mep;
using mep::testing::TempDir;
using mep::testing::write_file;
using nlohmann::json;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

bool has(const std::string& text, std::string_view needle) { return text.find(needle) != std::string::npos; }

struct Workspace {
    TempDir dir{"cli"};
    std::string fixture;
    std::string data;

    Workspace() {
        fixture = (dir / "fixture.txt").string();
        write_file(fixture, oracle::render_fixture(mep::testing::reference_fixture()));
        data = (dir / "tqa.jsonl").string();
        mep::testing::write_truthfulqa(data, 4);
    }

    [[nodiscard]] std::string mock() const { return "oracle:" + fixture; }
    [[nodiscard]] std::string path(std::string_view name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("ask prints the final answer") {
    Workspace ws;
    const auto r = invoke({"ask", "Which keypoints hold?", "--mock", ws.mock()});
    CHECK(r.code == cli::kExitOk);
    CHECK(has(r.out, "KP t1 + alpha"));
    CHECK(has(r.out, "KP t4 + delta"));
    CHECK_FALSE(has(r.out, "Step 1"));

    const auto shown = invoke({"ask", "Which keypoints hold?", "--mock", ws.mock(), "--show-transcript"});
    CHECK(shown.code == cli::kExitOk);
    CHECK(has(shown.out, "Experts:"));
    CHECK(has(shown.out, "Historian"));
    CHECK(has(shown.out, "Answer 3:"));
    CHECK(has(shown.out, "\nFinal answer:\n"));
}

TEST_CASE("ask --json emits one record") {
    Workspace ws;
    const auto r = invoke({"ask", "Which keypoints hold?", "--mock", ws.mock(), "--json", "--n", "3"});
    REQUIRE(r.code == cli::kExitOk);
    const auto record = record_io::from_json_line(r.out.substr(0, r.out.find('\n')));
    CHECK(record.strategy == pipelines::Strategy::MultiExpert);
    CHECK(record.call_count == 5);
    CHECK(record.experts.size() == 3);
    CHECK(record.selection == transcript::Selection::combined());
}

TEST_CASE("ask usage errors") {
    Workspace ws;
    CHECK(invoke({"ask", "   ", "--mock", ws.mock()}).code == cli::kExitUsage);
    CHECK(invoke({"ask", "question"}).code == cli::kExitUsage);
    CHECK(invoke({"ask", "question", "--mock", "replay:x"}).code == cli::kExitUsage);
    CHECK(invoke({"ask", "question", "--mock", ws.mock(), "--strategy", "tree"}).code == cli::kExitUsage);
    CHECK(invoke({"ask", "question", "--mock", ws.mock(), "--profile", "llama"}).code == cli::kExitUsage);
    CHECK(invoke({"ask", "question", "--mock", ws.mock(), "--temperature", "hot"}).code == cli::kExitUsage);
    CHECK(invoke({"ask", "question", "--mock", ws.mock(), "--n", "0"}).code == cli::kExitUsage);
    CHECK(invoke({"ask", "--bogus-flag"}).code == cli::kExitUsage);
    CHECK(invoke({}).code == cli::kExitUsage);
    CHECK(invoke({"--help"}).code == cli::kExitOk);

    const auto r = invoke({"ask", "question", "--mock", ws.mock(), "--strategy", "tree"});
    CHECK(has(r.err, "multi-expert"));
}

TEST_CASE("baseline strategies through ask") {
    Workspace ws;
    for (const char* s : {"zero-shot", "zero-shot-cot", "self-refine", "expert-prompting", "fixed-temp-agg",
                          "var-temp-agg", "expert-prompting-agg", "naive-agg"}) {
        const auto r = invoke({"ask", "Which keypoints hold?", "--mock", ws.mock(), "--strategy", s, "--json"});
        CHECK_MESSAGE(r.code == cli::kExitOk, s << ": " << r.err);
    }
}

TEST_CASE("script mock and failure exit codes") {
    Workspace ws;
    const auto script = ws.path("script.json");
    write_file(script, R"({"default": "Forty-two."})");
    const auto ok = invoke({"ask", "What is the answer?", "--mock", "script:" + script, "--strategy", "zero-shot"});
    CHECK(ok.code == cli::kExitOk);
    CHECK(ok.out == "Forty-two.\n");

    // Experts cannot be read from free text.
    const auto parse = invoke({"ask", "What is the answer?", "--mock", "script:" + script, "--json"});
    CHECK(parse.code == cli::kExitParseFailure);
    CHECK(has(parse.out, "ExpertParseFailure"));

    const auto silent = ws.path("silent.json");
    write_file(silent, "{}");
    CHECK(invoke({"ask", "What?", "--mock", "script:" + silent}).code == cli::kExitBackendFailure);

    write_file(ws.path("broken.json"), "[1, 2");
    CHECK(invoke({"ask", "What?", "--mock", "script:" + ws.path("broken.json")}).code == cli::kExitUsage);

    const auto rules = ws.path("rules.json");
    write_file(rules, R"({"rules": [{"contains": "apples", "reply": "Red."}], "default": "Unknown."})");
    CHECK(invoke({"ask", "Colour of apples?", "--mock", "script:" + rules, "--strategy", "zero-shot"}).out ==
          "Red.\n");
    CHECK(invoke({"ask", "Colour of pears?", "--mock", "script:" + rules, "--strategy", "zero-shot"}).out ==
          "Unknown.\n");
}

TEST_CASE("run writes records and resumes") {
    Workspace ws;
    const auto out = ws.path("records.jsonl");
    const auto first =
        invoke({"run", "--dataset", "truthfulqa", "--data", ws.data, "--out", out, "--mock", ws.mock()});
    CHECK(first.code == cli::kExitOk);
    CHECK(has(first.out, "completed 4, failed 0, skipped 0"));
    CHECK(has(first.out, "calls 20"));
    CHECK(record_io::read_records(out).size() == 4);

    const auto again = invoke(
        {"run", "--dataset", "truthfulqa", "--data", ws.data, "--out", out, "--mock", ws.mock(), "--json"});
    CHECK(again.code == cli::kExitOk);
    const auto j = json::parse(again.out);
    CHECK(j["completed"] == 0);
    CHECK(j["skipped"] == 4);
    CHECK(j["usage"]["calls"] == 0);
    CHECK(record_io::read_records(out).size() == 4);

    const auto limited = ws.path("limited.jsonl");
    CHECK(invoke({"run", "--dataset", "truthfulqa", "--data", ws.data, "--out", limited, "--mock", ws.mock(),
                  "--limit", "2", "--workers", "2"})
              .code == cli::kExitOk);
    CHECK(record_io::read_records(limited).size() == 2);
}

TEST_CASE("run reports failed samples") {
    Workspace ws;
    const auto script = ws.path("script.json");
    write_file(script, R"({"rules": [{"contains": "claim 1 ", "reply": ""}], "default": "Fine."})");
    const auto out = ws.path("records.jsonl");
    const auto r = invoke({"run", "--dataset", "truthfulqa", "--data", ws.data, "--out", out, "--mock",
                           "script:" + script, "--strategy", "self-refine"});
    CHECK(r.code == cli::kExitBatchFailures);
    CHECK(has(r.out, "completed 3, failed 1"));
    const auto records = record_io::read_records(out);
    REQUIRE(records.size() == 4);
    std::size_t failed = 0;
    for (const auto& rec : records) {
        if (!rec.ok()) {
            ++failed;
            CHECK(rec.error->kind == "EmptyResponse");
            CHECK(has(rec.instruction, "claim 1 "));
        }
    }
    CHECK(failed == 1);
}

TEST_CASE("run usage and sink errors") {
    Workspace ws;
    write_file(ws.path("blocker"), "a file, not a directory");
    const auto r = invoke({"run", "--dataset", "truthfulqa", "--data", ws.data, "--out",
                           ws.path("blocker") + "/records.jsonl", "--mock", ws.mock()});
    CHECK(r.code == cli::kExitSinkUnwritable);

    CHECK(invoke({"run", "--data", ws.data, "--out", ws.path("x.jsonl"), "--mock", ws.mock()}).code ==
          cli::kExitUsage);
    CHECK(invoke({"run", "--dataset", "truthfulqa", "--data", ws.data, "--mock", ws.mock()}).code ==
          cli::kExitUsage);
    CHECK(invoke({"run", "--dataset", "mmlu", "--data", ws.data, "--out", ws.path("x.jsonl"), "--mock", ws.mock()})
              .code == cli::kExitUsage);
    CHECK(invoke({"run", "--dataset", "truthfulqa", "--data", ws.path("absent.jsonl"), "--out", ws.path("x.jsonl"),
                  "--mock", ws.mock()})
              .code == cli::kExitUsage);
    CHECK(invoke({"run", "--dataset", "truthfulqa", "--data", ws.data, "--out", ws.path("x.jsonl"), "--mock",
                  ws.mock(), "--limit", "-3"})
              .code == cli::kExitUsage);
}

TEST_CASE("run from a config file") {
    Workspace ws;
    write_file(ws.path("run.toml"), "[backend]\nmock = \"oracle:fixture.txt\"\n\n[strategy]\nname = \"naive-agg\"\n"
                                    "\n[dataset]\nkind = \"truthfulqa\"\npath = \"tqa.jsonl\"\n\n[output]\n"
                                    "path = \"out.jsonl\"\n");
    const auto r = invoke({"run", "--config", ws.path("run.toml")});
    CHECK_MESSAGE(r.code == cli::kExitOk, r.err);
    const auto records = record_io::read_records(ws.path("out.jsonl"));
    REQUIRE(records.size() == 4);
    CHECK(records.front().strategy == pipelines::Strategy::NaiveAgg);

    write_file(ws.path("bad.toml"), "[strategy]\nn = \"three\"\n");
    const auto bad = invoke({"run", "--config", ws.path("bad.toml")});
    CHECK(bad.code == cli::kExitUsage);
    CHECK(has(bad.err, "strategy.n"));
}

TEST_CASE("judge compares two record files") {
    Workspace ws;
    const auto multi = ws.path("multi.jsonl");
    const auto zero = ws.path("zero.jsonl");
    REQUIRE(invoke({"run", "--dataset", "truthfulqa", "--data", ws.data, "--out", multi, "--mock", ws.mock()}).code ==
            0);
    REQUIRE(invoke({"run", "--dataset", "truthfulqa", "--data", ws.data, "--out", zero, "--mock", ws.mock(),
                    "--strategy", "zero-shot"})
                .code == 0);

    const auto verdicts = ws.path("verdicts.jsonl");
    const auto r = invoke({"judge", multi, zero, "--mock", ws.mock(), "--out", verdicts});
    CHECK_MESSAGE(r.code == cli::kExitOk, r.err);
    CHECK(has(r.out, "informativeness (multi-expert vs zero-shot): win 100.0 / draw 0.0 / lose 0.0"));
    CHECK(has(r.out, "samples 4, excluded 0, unmatched 0"));
    CHECK(mep::testing::read_lines(verdicts).size() == 4);

    const auto swapped = invoke({"judge", multi, zero, "--mock", ws.mock(), "--swap", "--metric", "usefulness",
                                 "--json"});
    REQUIRE(swapped.code == cli::kExitOk);
    const auto j = json::parse(swapped.out);
    CHECK(j["metric"] == "usefulness");
    CHECK(j["win"] == 100.0);

    const auto reverse = invoke({"judge", zero, multi, "--mock", ws.mock(), "--json"});
    CHECK(json::parse(reverse.out)["lose"] == 100.0);

    CHECK(invoke({"judge", multi, zero, "--mock", ws.mock(), "--metric", "beauty"}).code == cli::kExitUsage);
}

TEST_CASE("judge rejects disjoint or malformed files") {
    Workspace ws;
    const auto a = ws.path("a.jsonl");
    const auto b = ws.path("b.jsonl");
    write_file(a, record_io::to_json_line(mep::testing::make_record("one", pipelines::Strategy::MultiExpert, {})) +
                      "\n");
    write_file(b, record_io::to_json_line(mep::testing::make_record("two", pipelines::Strategy::ZeroShot, {})) +
                      "\n");
    const auto r = invoke({"judge", a, b, "--mock", ws.mock()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(has(r.err, "IdMismatch"));

    write_file(ws.path("bad.jsonl"), "{not json\n");
    CHECK(invoke({"judge", a, ws.path("bad.jsonl"), "--mock", ws.mock()}).code == cli::kExitUsage);
}

TEST_CASE("report summarizes records") {
    Workspace ws;
    const auto path = ws.path("records.jsonl");
    using transcript::Selection;
    std::string text;
    text += record_io::to_json_line(mep::testing::make_record("a", pipelines::Strategy::MultiExpert,
                                                              Selection::combined())) + "\n";
    text += record_io::to_json_line(mep::testing::make_record("b", pipelines::Strategy::MultiExpert,
                                                              Selection::combined())) + "\n";
    text += record_io::to_json_line(mep::testing::make_record("c", pipelines::Strategy::MultiExpert,
                                                              Selection::expert(2))) + "\n";
    text += record_io::to_json_line(mep::testing::make_record("d", pipelines::Strategy::MultiExpert,
                                                              Selection::combined(), {"FallbackUsed"})) + "\n";
    write_file(path, text);

    const auto r = invoke({"report", path});
    CHECK(r.code == cli::kExitOk);
    CHECK(has(r.out, "records 4, failed 0"));
    CHECK(has(r.out, "selection ratio 0.667 (2/3 combined, 1 excluded)"));
    CHECK(has(r.out, "flag FallbackUsed: 1"));

    const auto j = json::parse(invoke({"report", path, "--json"}).out);
    CHECK(j["selection_ratio"].get<double>() == doctest::Approx(2.0 / 3.0));
    CHECK(j["flags"]["FallbackUsed"] == 1);

    write_file(ws.path("broken.jsonl"), text + "{\"truncated\n");
    const auto broken = invoke({"report", ws.path("broken.jsonl")});
    CHECK(broken.code == cli::kExitUsage);
    CHECK(has(broken.err, "broken.jsonl:5"));
}

TEST_CASE("dump prompts") {
    const auto r = invoke({"--dump-prompts"});
    CHECK(r.code == cli::kExitOk);
    CHECK(has(r.out, "Step 1:"));
    CHECK(has(r.out, "Your task is to evaluate which answer is better"));
}
