#include "fixtures.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "mep/oracle_backend.hpp"

namespace mep::testing {

using nlohmann::json;
using nlohmann::ordered_json;

TempDir::TempDir(std::string_view tag) {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (std::string(tag) + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" +
             std::to_string(rd()));
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

void write_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

namespace {

gateway::RetryPolicy no_delay(int max_retries) {
    gateway::RetryPolicy p;
    p.max_retries = max_retries;
    p.base_delay = std::chrono::milliseconds{0};
    return p;
}

}  // namespace

Rig::Rig(std::shared_ptr<gateway::Backend> b, gateway::PriceTable prices, int max_retries,
         std::shared_ptr<gateway::ResponseCache> cache)
    : backend(b), ledger(prices), gw(std::move(b), ledger, no_delay(max_retries), std::move(cache)) {}

OracleRig::OracleRig(const oracle::OracleFixture& fixture, gateway::PriceTable prices)
    : Rig(oracle::make_oracle_backend(fixture), prices) {
    mock = std::static_pointer_cast<gateway::MockBackend>(backend);
}

oracle::OracleFixture random_fixture(std::mt19937_64& rng, int n, int topics) {
    std::bernoulli_distribution coin(0.5);
    oracle::OracleFixture fixture;
    for (int i = 1; i <= n; ++i) {
        oracle::FixtureExpert e;
        e.role = "Specialist " + std::to_string(i);
        e.description = "covers viewpoint number " + std::to_string(i);
        e.view.owner = i;
        for (int t = 1; t <= topics; ++t) {
            if (!coin(rng)) continue;
            const auto pol = coin(rng) ? oracle::Polarity::Positive : oracle::Polarity::Negative;
            const std::string topic = "t" + std::to_string(t);
            const std::string text = std::string(pol == oracle::Polarity::Positive ? "supports " : "disputes ") +
                                     "claim " + topic;
            e.view.keypoints.push_back({topic, pol, text});
        }
        fixture.experts.push_back(std::move(e));
    }
    return fixture;
}

oracle::OracleFixture reference_fixture() {
    using oracle::Polarity;
    oracle::OracleFixture f;
    f.experts.push_back({"Historian", "studies past events",
                         {1, {{"t1", Polarity::Positive, "alpha"}, {"t2", Polarity::Positive, "beta"}}}});
    f.experts.push_back({"Economist", "analyzes markets",
                         {2, {{"t1", Polarity::Positive, "alpha"}, {"t3", Polarity::Positive, "gamma holds"}}}});
    f.experts.push_back({"Nutritionist", "advises on diet",
                         {3,
                          {{"t1", Polarity::Positive, "alpha"},
                           {"t3", Polarity::Negative, "gamma fails"},
                           {"t4", Polarity::Positive, "delta"}}}});
    return f;
}

std::vector<oracle::Keypoint> keypoints_of(std::string_view kp_section) {
    return oracle::decode_keypoint_section(kp_section);
}

void write_expertqa(const std::filesystem::path& path, std::size_t open, std::size_t topics, std::size_t closed) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    const std::size_t total = open + closed;
    std::size_t written_open = 0;
    std::size_t written_closed = 0;
    for (std::size_t i = 0; i < total; ++i) {
        const bool is_closed = written_closed < closed && (i % 13 == 5 || written_open == open);
        json row;
        row["question"] = "Question " + std::to_string(i) + " about field " + std::to_string(i % topics) + "?";
        row["metadata"] = {{"field", "Field " + std::to_string(i % topics)},
                           {"question_type", is_closed ? "Directed question that has a single unambiguous answer"
                                                       : "Open-ended question that is potentially ambiguous"}};
        row["answers"] = json::object();
        out << row.dump() << '\n';
        (is_closed ? written_closed : written_open)++;
    }
}

void write_truthfulqa(const std::filesystem::path& path, std::size_t count) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    for (std::size_t i = 0; i < count; ++i) {
        out << json{{"question", "Is claim " + std::to_string(i) + " true?"}, {"category", "Misconceptions"}}.dump()
            << '\n';
    }
}

void write_factualityprompt(const std::filesystem::path& dir, std::size_t factual, std::size_t nonfactual) {
    std::filesystem::create_directories(dir);
    std::ofstream f(dir / "fever_factual_final.jsonl", std::ios::binary | std::ios::trunc);
    for (std::size_t i = 0; i < factual; ++i) {
        f << json{{"id", i}, {"prompt", "Factual prompt number " + std::to_string(i)}, {"label", "SUPPORTS"}}.dump()
          << '\n';
    }
    std::ofstream nf(dir / "fever_nonfactual_final.jsonl", std::ios::binary | std::ios::trunc);
    for (std::size_t i = 0; i < nonfactual; ++i) {
        nf << json{{"id", i}, {"prompt", "Nonfactual prompt number " + std::to_string(i)}, {"label", "REFUTES"}}
                  .dump()
           << '\n';
    }
}

void write_bold(const std::filesystem::path& path, std::size_t actors, std::size_t actresses,
                std::size_t prompts_per_name) {
    ordered_json doc;
    auto group = [&](const std::string& name, std::size_t count) {
        ordered_json g = ordered_json::object();
        for (std::size_t i = 0; i < count; ++i) {
            const std::string person = name + "_" + std::to_string(i);
            ordered_json prompts = ordered_json::array();
            for (std::size_t k = 0; k < prompts_per_name; ++k) {
                prompts.push_back(person + " prompt " + std::to_string(k) + " is known for");
            }
            g[person] = prompts;
        }
        return g;
    };
    doc["American_actors"] = group("Actor", actors);
    doc["American_actresses"] = group("Actress", actresses);
    write_file(path, doc.dump());
}

void write_honest(const std::filesystem::path& path, std::size_t count) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    const char* identities[] = {"the woman", "the lesbian", "the girl", "the boy", "the man"};
    const char* frames[] = {" is a [M].", " should work as a [M].", " dreams of being a [M].", " is known as a [M]."};
    for (std::size_t i = 0; i < count; ++i) {
        const std::string identity = identities[i % 5];
        out << json{{"template_masked", identity + frames[i % 4]}, {"category", identity}, {"type", "occupation"}}
                   .dump()
            << '\n';
    }
}

pipelines::PipelineRecord make_record(std::string sample_id, pipelines::Strategy strategy,
                                      std::optional<transcript::Selection> selection, std::vector<std::string> flags) {
    pipelines::PipelineRecord r;
    r.sample_id = std::move(sample_id);
    r.instruction = "Question for " + r.sample_id + "?";
    r.strategy = strategy;
    r.model_id = "mock-model";
    r.selection = selection;
    r.final_answer = "answer for " + r.sample_id;
    r.call_count = pipelines::expected_call_count(strategy, 3);
    r.flags = std::move(flags);
    r.usage.calls = r.call_count;
    r.usage.prompt_tokens = 100;
    r.usage.completion_tokens = 50;
    return r;
}

}  // namespace mep::testing
