#pragma once

// Deterministic reference implementation of the seven aggregation subtasks
// over structured viewpoints. Expert answers are modelled as sets of
// keypoints (topic, polarity, text); (topic, polarity) is the identity used
// for every set operation and texts are carried from their first occurrence.

#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mep/error.hpp"
#include "mep/transcript.hpp"

namespace mep::oracle {

enum class OracleErrc { EmptyInput, OverlapViolation, DecodeError, InvalidViewSet };

using OracleError = CodedError<OracleErrc>;

enum class Polarity { Positive, Negative };

char polarity_symbol(Polarity p);

struct KeypointId {
    std::string topic;
    Polarity polarity = Polarity::Positive;

    auto operator<=>(const KeypointId&) const = default;
};

struct Keypoint {
    std::string topic;
    Polarity polarity = Polarity::Positive;
    std::string text;

    [[nodiscard]] KeypointId id() const { return {topic, polarity}; }
    bool operator==(const Keypoint&) const = default;
};

/// Set of keypoints keyed by (topic, polarity). Insertion of an id already
/// present keeps the existing text.
class KeypointSet {
public:
    KeypointSet() = default;
    KeypointSet(std::initializer_list<Keypoint> keypoints);

    bool insert(const Keypoint& keypoint);
    [[nodiscard]] bool contains(const KeypointId& id) const { return items_.count(id) != 0; }
    [[nodiscard]] std::size_t size() const { return items_.size(); }
    [[nodiscard]] bool empty() const { return items_.empty(); }
    [[nodiscard]] std::set<std::string> topics() const;
    [[nodiscard]] std::set<KeypointId> ids() const;
    [[nodiscard]] std::vector<Keypoint> items() const;

    /// Identity comparison; texts are ignored.
    bool operator==(const KeypointSet& other) const { return ids() == other.ids(); }

private:
    std::map<KeypointId, Keypoint> items_;
};

struct ViewSet {
    int owner = 0;  // expert ordinal
    std::vector<Keypoint> keypoints;

    /// Throws OracleError(InvalidViewSet) when a topic repeats, a topic is not
    /// a single token, or a text spans lines.
    void validate() const;
    [[nodiscard]] KeypointSet as_set() const;
    bool operator==(const ViewSet&) const = default;
};

struct ResolveResult {
    KeypointSet resolved;
    std::set<std::string> unresolved_ties;
};

struct OracleAggregation {
    KeypointSet agreed;
    std::set<std::string> conflict_topics;
    KeypointSet resolved;
    std::set<std::string> unresolved_ties;
    KeypointSet uniques;
    std::vector<Keypoint> combined;
    transcript::Selection selection = transcript::Selection::combined();
};

/// Step 1: keypoints asserted by strictly more than half of the viewsets.
KeypointSet agreed(const std::vector<ViewSet>& viewsets);

/// Step 2: topics asserted with both polarities, excluding topics that already
/// carry a strict-majority keypoint.
std::set<std::string> conflicts(const std::vector<ViewSet>& viewsets);

/// Step 3: strict-majority polarity per conflicted topic; exact ties are left
/// unresolved and excluded.
ResolveResult resolve(const std::vector<ViewSet>& viewsets, const std::set<std::string>& conflict_topics);

/// Step 4: keypoints whose topic occurs in exactly one viewset and is neither
/// agreed nor conflicted.
KeypointSet uniques(const std::vector<ViewSet>& viewsets, const KeypointSet& agreed_set,
                    const std::set<std::string>& conflict_topics);

/// Steps 5 and 6: agreed, then resolved, then uniques; within a class by first
/// occurrence across viewsets in owner order.
std::vector<Keypoint> combine(const KeypointSet& agreed_set, const KeypointSet& resolved_set,
                              const KeypointSet& unique_set, const std::vector<ViewSet>& viewsets);

/// Step 7: `candidates` holds the expert sets in ordinal order followed by the
/// combined set. Scores are coverage of `final` first, then fewest extras;
/// ties go to the combined answer, then the lowest ordinal.
transcript::Selection select_best(const std::vector<KeypointSet>& candidates, const KeypointSet& final_set);

/// Steps 1 to 7 in sequence.
OracleAggregation aggregate(const std::vector<ViewSet>& viewsets);

// ---------------------------------------------------------------------------
// "KP <topic> <+|-> <text>" line codec

std::string encode_keypoint(const Keypoint& keypoint);
std::string encode_viewset(const ViewSet& viewset);
ViewSet decode_viewset(std::string_view text, int owner = 0);

/// Section body for a keypoint list: encoded lines, or "None" when empty.
std::string encode_keypoint_section(const std::vector<Keypoint>& keypoints);
/// Inverse of encode_keypoint_section.
std::vector<Keypoint> decode_keypoint_section(std::string_view text);

/// Full aggregation transcript in the labelled seven-step format, with the
/// oracle's computed content and selection.
std::string render_oracle_transcript(std::string_view instruction, const std::vector<ViewSet>& viewsets);

// ---------------------------------------------------------------------------
// Fixture files

struct FixtureExpert {
    std::string role;
    std::string description;
    ViewSet view;
};

/// A collection of viewsets with the expert identities that hold them.
///
///     # comment
///     expert Historian | studies past events
///     KP t1 + alpha
///     expert Economist | analyzes markets
///     KP t1 + alpha
struct OracleFixture {
    std::vector<FixtureExpert> experts;

    [[nodiscard]] std::vector<ViewSet> viewsets() const;
};

OracleFixture parse_fixture(std::string_view text);
OracleFixture load_fixture(const std::filesystem::path& path);
std::string render_fixture(const OracleFixture& fixture);

}  // namespace mep::oracle
