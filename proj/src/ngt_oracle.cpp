#include "mep/ngt_oracle.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mep::oracle {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view text) {
    while (!text.empty() && is_space(text.front())) text.remove_prefix(1);
    while (!text.empty() && is_space(text.back())) text.remove_suffix(1);
    return text;
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        lines.push_back(text.substr(pos, end - pos));
        pos = end + 1;
    }
    return lines;
}

void require_nonempty(const std::vector<ViewSet>& viewsets) {
    if (viewsets.empty()) throw OracleError(OracleErrc::EmptyInput, "at least one viewset is required");
}

/// Viewsets in owner order; list order breaks ties.
std::vector<const ViewSet*> by_owner(const std::vector<ViewSet>& viewsets) {
    std::vector<const ViewSet*> ordered;
    ordered.reserve(viewsets.size());
    for (const auto& v : viewsets) ordered.push_back(&v);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const ViewSet* a, const ViewSet* b) { return a->owner < b->owner; });
    return ordered;
}

struct Tally {
    std::map<KeypointId, int> votes;
    std::map<KeypointId, std::string> first_text;
    std::map<std::string, int> topic_viewsets;
};

Tally tally(const std::vector<ViewSet>& viewsets) {
    Tally t;
    for (const ViewSet* v : by_owner(viewsets)) {
        v->validate();
        for (const auto& kp : v->keypoints) {
            ++t.votes[kp.id()];
            t.first_text.emplace(kp.id(), kp.text);
            ++t.topic_viewsets[kp.topic];
        }
    }
    return t;
}

bool is_topic_token(std::string_view topic) {
    return !topic.empty() && std::none_of(topic.begin(), topic.end(), is_space);
}

}  // namespace

char polarity_symbol(Polarity p) { return p == Polarity::Positive ? '+' : '-'; }

// ---------------------------------------------------------------------------

KeypointSet::KeypointSet(std::initializer_list<Keypoint> keypoints) {
    for (const auto& kp : keypoints) insert(kp);
}

bool KeypointSet::insert(const Keypoint& keypoint) { return items_.emplace(keypoint.id(), keypoint).second; }

std::set<std::string> KeypointSet::topics() const {
    std::set<std::string> out;
    for (const auto& [id, kp] : items_) out.insert(id.topic);
    return out;
}

std::set<KeypointId> KeypointSet::ids() const {
    std::set<KeypointId> out;
    for (const auto& [id, kp] : items_) out.insert(id);
    return out;
}

std::vector<Keypoint> KeypointSet::items() const {
    std::vector<Keypoint> out;
    out.reserve(items_.size());
    for (const auto& [id, kp] : items_) out.push_back(kp);
    return out;
}

void ViewSet::validate() const {
    std::set<std::string> seen;
    for (const auto& kp : keypoints) {
        if (!is_topic_token(kp.topic)) {
            throw OracleError(OracleErrc::InvalidViewSet, "keypoint topic must be a nonempty token");
        }
        if (kp.text.find('\n') != std::string::npos || kp.text.find('\r') != std::string::npos) {
            throw OracleError(OracleErrc::InvalidViewSet, "keypoint text must be a single line");
        }
        if (!seen.insert(kp.topic).second) {
            throw OracleError(OracleErrc::InvalidViewSet,
                              "viewset " + std::to_string(owner) + " repeats topic " + kp.topic);
        }
    }
}

KeypointSet ViewSet::as_set() const {
    KeypointSet out;
    for (const auto& kp : keypoints) out.insert(kp);
    return out;
}

// ---------------------------------------------------------------------------

KeypointSet agreed(const std::vector<ViewSet>& viewsets) {
    require_nonempty(viewsets);
    const Tally t = tally(viewsets);
    const auto n = static_cast<int>(viewsets.size());
    KeypointSet out;
    for (const auto& [id, count] : t.votes) {
        if (2 * count > n) out.insert(Keypoint{id.topic, id.polarity, t.first_text.at(id)});
    }
    return out;
}

std::set<std::string> conflicts(const std::vector<ViewSet>& viewsets) {
    require_nonempty(viewsets);
    const Tally t = tally(viewsets);
    const auto n = static_cast<int>(viewsets.size());
    std::set<std::string> out;
    for (const auto& [id, count] : t.votes) {
        if (id.polarity != Polarity::Positive) continue;
        const KeypointId opposite{id.topic, Polarity::Negative};
        auto neg = t.votes.find(opposite);
        if (neg == t.votes.end()) continue;
        if (2 * count > n || 2 * neg->second > n) continue;  // settled by majority
        out.insert(id.topic);
    }
    return out;
}

ResolveResult resolve(const std::vector<ViewSet>& viewsets, const std::set<std::string>& conflict_topics) {
    const Tally t = tally(viewsets);
    ResolveResult out;
    for (const auto& topic : conflict_topics) {
        const KeypointId pos{topic, Polarity::Positive};
        const KeypointId neg{topic, Polarity::Negative};
        const int yes = t.votes.count(pos) ? t.votes.at(pos) : 0;
        const int no = t.votes.count(neg) ? t.votes.at(neg) : 0;
        if (yes == no) {
            out.unresolved_ties.insert(topic);
            continue;
        }
        const KeypointId& winner = yes > no ? pos : neg;
        out.resolved.insert(Keypoint{winner.topic, winner.polarity, t.first_text.at(winner)});
    }
    return out;
}

KeypointSet uniques(const std::vector<ViewSet>& viewsets, const KeypointSet& agreed_set,
                    const std::set<std::string>& conflict_topics) {
    const Tally t = tally(viewsets);
    const auto agreed_topics = agreed_set.topics();
    KeypointSet out;
    for (const auto& [id, count] : t.votes) {
        if (t.topic_viewsets.at(id.topic) != 1) continue;
        if (agreed_topics.count(id.topic) || conflict_topics.count(id.topic)) continue;
        out.insert(Keypoint{id.topic, id.polarity, t.first_text.at(id)});
    }
    return out;
}

std::vector<Keypoint> combine(const KeypointSet& agreed_set, const KeypointSet& resolved_set,
                              const KeypointSet& unique_set, const std::vector<ViewSet>& viewsets) {
    const auto a = agreed_set.topics();
    const auto r = resolved_set.topics();
    const auto u = unique_set.topics();
    auto overlaps = [](const std::set<std::string>& x, const std::set<std::string>& y) {
        return std::any_of(x.begin(), x.end(), [&](const std::string& t) { return y.count(t) != 0; });
    };
    if (overlaps(a, r) || overlaps(a, u) || overlaps(r, u)) {
        throw OracleError(OracleErrc::OverlapViolation, "agreed, resolved and unique keypoints share a topic");
    }

    const auto ordered = by_owner(viewsets);
    std::vector<Keypoint> out;
    for (const KeypointSet* cls : {&agreed_set, &resolved_set, &unique_set}) {
        std::set<KeypointId> emitted;
        const auto members = cls->items();
        auto text_of = [&](const KeypointId& id) {
            return std::find_if(members.begin(), members.end(), [&](const Keypoint& k) { return k.id() == id; })->text;
        };
        for (const ViewSet* v : ordered) {
            for (const auto& kp : v->keypoints) {
                if (cls->contains(kp.id()) && emitted.insert(kp.id()).second) {
                    out.push_back(Keypoint{kp.topic, kp.polarity, text_of(kp.id())});
                }
            }
        }
        // Members not present in any viewset still belong to the answer.
        for (const auto& kp : members) {
            if (emitted.insert(kp.id()).second) out.push_back(kp);
        }
    }
    return out;
}

transcript::Selection select_best(const std::vector<KeypointSet>& candidates, const KeypointSet& final_set) {
    if (candidates.empty()) throw OracleError(OracleErrc::EmptyInput, "no candidates to select from");
    const auto final_ids = final_set.ids();
    auto score = [&](const KeypointSet& c) {
        int covered = 0;
        int excess = 0;
        for (const auto& id : c.ids()) {
            if (final_ids.count(id)) ++covered;
            else ++excess;
        }
        return std::pair{covered, -excess};
    };

    const std::size_t combined_index = candidates.size() - 1;
    std::size_t best = combined_index;
    auto best_score = score(candidates[combined_index]);
    for (std::size_t i = 0; i < combined_index; ++i) {
        const auto s = score(candidates[i]);
        if (s > best_score) {  // strict: ties keep the combined answer or the lower ordinal
            best = i;
            best_score = s;
        }
    }
    return best == combined_index ? transcript::Selection::combined()
                                   : transcript::Selection::expert(static_cast<int>(best) + 1);
}

OracleAggregation aggregate(const std::vector<ViewSet>& viewsets) {
    require_nonempty(viewsets);
    OracleAggregation out;
    out.agreed = agreed(viewsets);
    out.conflict_topics = conflicts(viewsets);
    auto resolution = resolve(viewsets, out.conflict_topics);
    out.resolved = std::move(resolution.resolved);
    out.unresolved_ties = std::move(resolution.unresolved_ties);
    out.uniques = uniques(viewsets, out.agreed, out.conflict_topics);
    out.combined = combine(out.agreed, out.resolved, out.uniques, viewsets);

    KeypointSet final_set;
    for (const auto& kp : out.combined) final_set.insert(kp);
    std::vector<KeypointSet> candidates;
    for (const ViewSet* v : by_owner(viewsets)) candidates.push_back(v->as_set());
    candidates.push_back(final_set);
    out.selection = select_best(candidates, final_set);
    return out;
}

// ---------------------------------------------------------------------------

std::string encode_keypoint(const Keypoint& keypoint) {
    std::string line = "KP " + keypoint.topic + ' ' + polarity_symbol(keypoint.polarity);
    if (!keypoint.text.empty()) {
        line += ' ';
        line += keypoint.text;
    }
    return line;
}

std::string encode_viewset(const ViewSet& viewset) {
    viewset.validate();
    std::string out;
    for (const auto& kp : viewset.keypoints) {
        if (!out.empty()) out += '\n';
        out += encode_keypoint(kp);
    }
    return out;
}

namespace {

Keypoint decode_line(std::string_view line, std::size_t number) {
    auto fail = [&](const std::string& why) {
        return OracleError(OracleErrc::DecodeError, "line " + std::to_string(number) + ": " + why);
    };
    if (!line.starts_with("KP ")) throw fail("expected \"KP <topic> <+|-> <text>\"");
    line.remove_prefix(3);
    while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
    const auto topic_end = line.find(' ');
    if (topic_end == std::string_view::npos || topic_end == 0) throw fail("missing polarity");
    Keypoint kp;
    kp.topic = std::string(line.substr(0, topic_end));
    line.remove_prefix(topic_end);
    while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
    if (line.empty()) throw fail("missing polarity");
    if (line.front() == '+') kp.polarity = Polarity::Positive;
    else if (line.front() == '-') kp.polarity = Polarity::Negative;
    else throw fail(std::string("bad polarity '") + line.front() + "'");
    line.remove_prefix(1);
    if (!line.empty() && line.front() != ' ') throw fail("polarity must be a single '+' or '-'");
    kp.text = std::string(trim(line));
    return kp;
}

}  // namespace

ViewSet decode_viewset(std::string_view text, int owner) {
    ViewSet out;
    out.owner = owner;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto line = trim(lines[i]);
        if (line.empty()) continue;
        out.keypoints.push_back(decode_line(line, i + 1));
    }
    try {
        out.validate();
    } catch (const OracleError& e) {
        throw OracleError(OracleErrc::DecodeError, e.what());
    }
    return out;
}

std::string encode_keypoint_section(const std::vector<Keypoint>& keypoints) {
    if (keypoints.empty()) return "None";
    std::string out;
    for (const auto& kp : keypoints) {
        if (!out.empty()) out += '\n';
        out += encode_keypoint(kp);
    }
    return out;
}

std::vector<Keypoint> decode_keypoint_section(std::string_view text) {
    if (trim(text) == "None") return {};
    std::vector<Keypoint> out;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto line = trim(lines[i]);
        if (!line.empty()) out.push_back(decode_line(line, i + 1));
    }
    return out;
}

std::string render_oracle_transcript(std::string_view instruction, const std::vector<ViewSet>& viewsets) {
    using transcript::Section;
    using transcript::canonical_label;

    const OracleAggregation agg = aggregate(viewsets);
    const auto ordered = by_owner(viewsets);

    std::vector<Keypoint> conflicted;
    for (const ViewSet* v : ordered) {
        for (const auto& kp : v->keypoints) {
            if (!agg.conflict_topics.count(kp.topic)) continue;
            if (std::none_of(conflicted.begin(), conflicted.end(), [&](const Keypoint& k) { return k.id() == kp.id(); })) {
                conflicted.push_back(kp);
            }
        }
    }
    auto in_order = [&](const KeypointSet& set) {
        std::vector<Keypoint> out;
        for (const auto& kp : agg.combined) {
            if (set.contains(kp.id())) out.push_back(kp);
        }
        return out;
    };

    std::string question(instruction);
    std::replace(question.begin(), question.end(), '\n', ' ');
    std::replace(question.begin(), question.end(), '\r', ' ');

    std::string answer_list;
    for (std::size_t i = 1; i <= viewsets.size(); ++i) answer_list += "answer " + std::to_string(i) + ", ";

    std::ostringstream out;
    auto section = [&](std::string_view heading, Section s, const std::string& body) {
        out << heading << '\n' << canonical_label(s) << '\n' << body << "\n\n";
    };
    section("Step 1: Which are the facts that more than half of the answers have?", Section::Agreed,
            encode_keypoint_section(in_order(agg.agreed)));
    section("Step 2: Which are the facts of the answers above that conflict?", Section::Conflicted,
            encode_keypoint_section(conflicted));
    section("Step 3: Now you need to resolve the conflicted facts from Step 2. The facts that more people agree "
            "are likely to be true.",
            Section::Resolved, encode_keypoint_section(in_order(agg.resolved)));
    section("Step 4: Which are the facts that are not from Step 2 and 1, and only one of the answers have?",
            Section::Uniques, encode_keypoint_section(in_order(agg.uniques)));
    section("Step 5: Combine facts from Step 1, 3, 4, to obtain the facts that will appear in the final solution.",
            Section::MergedFacts, encode_keypoint_section(agg.combined));
    section("Step 6: Generate a final answer consisting of facts in Step 5, in a newline.", Section::CombinedAnswer,
            encode_keypoint_section(agg.combined));

    out << "Step 7: Given the " << answer_list << "and combined answer, which answer among them do you think is "
        << "more informative, useful, truthful, factually-correct, and honest for complete this information: "
        << question << "?\n";
    out << canonical_label(Section::BestChoice) << ' ' << agg.selection.label() << '\n';
    out << canonical_label(Section::Explanation) << " The selected answer covers " << agg.combined.size()
        << " merged keypoint(s) with no unsupported additions.";
    if (!agg.unresolved_ties.empty()) {
        out << " Unresolved ties were dropped:";
        for (const auto& topic : agg.unresolved_ties) out << ' ' << topic;
        out << '.';
    }
    out << '\n';

    std::string final_body;
    if (agg.selection.is_combined()) {
        final_body = encode_keypoint_section(agg.combined);
    } else {
        const ViewSet& chosen = *ordered.at(static_cast<std::size_t>(agg.selection.ordinal() - 1));
        final_body = chosen.keypoints.empty() ? "None" : encode_viewset(chosen);
    }
    out << canonical_label(Section::FinalAnswer) << '\n' << final_body << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------

std::vector<ViewSet> OracleFixture::viewsets() const {
    std::vector<ViewSet> out;
    out.reserve(experts.size());
    for (const auto& e : experts) out.push_back(e.view);
    return out;
}

OracleFixture parse_fixture(std::string_view text) {
    OracleFixture fixture;
    const auto lines = split_lines(text);
    std::string pending;
    auto flush = [&] {
        if (fixture.experts.empty()) return;
        auto& current = fixture.experts.back();
        try {
            current.view = decode_viewset(pending, current.view.owner);
        } catch (const OracleError& e) {
            throw OracleError(OracleErrc::DecodeError,
                              "fixture expert \"" + current.role + "\": " + std::string(e.what()));
        }
        pending.clear();
    };
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto line = trim(lines[i]);
        if (line.empty() || line.starts_with('#')) continue;
        if (line.starts_with("expert ")) {
            flush();
            const auto body = line.substr(7);
            const auto bar = body.find('|');
            if (bar == std::string_view::npos) {
                throw OracleError(OracleErrc::DecodeError,
                                  "fixture line " + std::to_string(i + 1) + ": expected \"expert <role> | <description>\"");
            }
            FixtureExpert expert;
            expert.role = std::string(trim(body.substr(0, bar)));
            expert.description = std::string(trim(body.substr(bar + 1)));
            if (expert.role.empty() || expert.description.empty()) {
                throw OracleError(OracleErrc::DecodeError,
                                  "fixture line " + std::to_string(i + 1) + ": empty role or description");
            }
            expert.view.owner = static_cast<int>(fixture.experts.size()) + 1;
            fixture.experts.push_back(std::move(expert));
            continue;
        }
        if (fixture.experts.empty()) {
            throw OracleError(OracleErrc::DecodeError,
                              "fixture line " + std::to_string(i + 1) + ": keypoint before any expert header");
        }
        pending.append(line);
        pending.push_back('\n');
    }
    flush();
    if (fixture.experts.empty()) throw OracleError(OracleErrc::EmptyInput, "fixture declares no experts");
    return fixture;
}

OracleFixture load_fixture(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw OracleError(OracleErrc::EmptyInput, "cannot read fixture " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_fixture(buffer.str());
}

std::string render_fixture(const OracleFixture& fixture) {
    std::string out;
    for (const auto& e : fixture.experts) {
        out += "expert " + e.role + " | " + e.description + '\n';
        const auto body = encode_viewset(e.view);
        if (!body.empty()) out += body + '\n';
    }
    return out;
}

}  // namespace mep::oracle
