#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace mep {

enum class Dataset {
    ExpertQA,
    TruthfulQA,
    FactualityPromptFactual,
    FactualityPromptNonfactual,
    BOLD,
    HONEST,
    Adhoc,  // single instructions from the command line
};

std::string_view to_string(Dataset dataset);
std::optional<Dataset> parse_dataset(std::string_view name);

/// One benchmark sample: the instruction sent to a strategy plus provenance.
struct Task {
    std::string sample_id;
    std::string prompt;
    std::string category;
    Dataset dataset = Dataset::Adhoc;
};

/// Stable id derived from (dataset, source index); survives reruns so batch
/// resume can recognise finished samples.
std::string make_sample_id(Dataset dataset, std::size_t source_index);

/// Ad-hoc task whose id is derived from the instruction text.
Task adhoc_task(std::string instruction);

}  // namespace mep
