#pragma once

#include <memory>
#include <optional>
#include <string>

#include "mep/llm_gateway.hpp"
#include "mep/ngt_oracle.hpp"

namespace mep::oracle {

/// Answers every prompt the pipelines send as if a well-behaved model held the
/// fixture's viewpoints:
///   expert generation  -> the fixture's roles as an "Answer: {...}" mapping
///   expert casting     -> the named expert's viewset, KP-encoded
///   aggregation        -> render_oracle_transcript over the decoded answers
///   naive aggregation  -> union of all keypoints, selection block only
///   judge              -> the answer with more keypoints (or words) wins
///   self-refine        -> neutral feedback; revision echoes the answer
///   zero-shot variants -> viewset number `replicate` (mod fixture size)
/// Prompts are recognised by phrases of the compiled-in templates.
class OracleResponder {
public:
    explicit OracleResponder(OracleFixture fixture);

    std::optional<std::string> operator()(const gateway::ChatRequest& request) const;

    [[nodiscard]] const OracleFixture& fixture() const { return fixture_; }

private:
    [[nodiscard]] const FixtureExpert& expert_for_replicate(int replicate) const;

    OracleFixture fixture_;
};

/// MockBackend with id "oracle" whose handler is an OracleResponder.
std::shared_ptr<gateway::MockBackend> make_oracle_backend(OracleFixture fixture);

}  // namespace mep::oracle
