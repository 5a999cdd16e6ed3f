#pragma once

// Run configuration files: a TOML subset with [section] headers and
// `key = value` lines, where a value is a quoted string, a number, true/false,
// or a flat [array]. `#` starts a comment outside strings.
//
//   [backend]   url, model_id, api_key_env, timeout_s, max_retries, cache_dir, mock
//   [strategy]  name, n, profile, temperature, ladder, max_parse_retries, fanout_workers
//   [dataset]   kind, path, seed, limit
//   [output]    path, workers
//   [prices]    prompt_per_1k, completion_per_1k

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mep/error.hpp"
#include "mep/llm_gateway.hpp"
#include "mep/pipelines.hpp"
#include "mep/task.hpp"

namespace mep::config {

enum class ConfigErrc { Syntax, UnknownKey, WrongType, Invalid, MissingPath, Unreadable };

using ConfigFileError = CodedError<ConfigErrc>;

struct Value {
    enum class Type { String, Number, Bool, Array };

    Type type = Type::String;
    std::string text;
    double number = 0.0;
    bool flag = false;
    std::vector<Value> items;
    std::size_t line = 0;
};

/// section -> key -> value; keys before any header live in section "".
using Document = std::map<std::string, std::map<std::string, Value>>;

/// Throws ConfigFileError(Syntax) naming the line.
Document parse_document(std::string_view text);

struct BackendSettings {
    std::string url;
    std::string model_id = "gpt-3.5-turbo-0613";
    std::string api_key_env = "OPENAI_API_KEY";
    int timeout_s = 60;
    int max_retries = 3;
    std::string cache_dir;
    std::string mock;  // "oracle:<fixture>" or "script:<json>"
};

struct DatasetSettings {
    std::optional<Dataset> kind;
    std::filesystem::path path;
    std::uint64_t seed = 0;
    std::optional<std::size_t> limit;
};

struct RunConfig {
    BackendSettings backend;
    pipelines::PipelineConfig pipeline;
    DatasetSettings dataset;
    std::filesystem::path output;
    int workers = 1;
    gateway::PriceTable prices;
};

/// Applies a document over `base`. Relative paths are resolved against
/// `base_dir`. Throws ConfigFileError(UnknownKey | WrongType | Invalid).
RunConfig apply_document(const Document& doc, RunConfig base = {},
                         const std::filesystem::path& base_dir = {});

/// Reads and applies a file over the defaults.
RunConfig load_run_config(const std::filesystem::path& path);

/// Checks cross-field invariants and that referenced input paths exist.
/// Throws ConfigFileError(Invalid | MissingPath).
void validate(const RunConfig& config);

}  // namespace mep::config
