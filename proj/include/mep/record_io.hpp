#pragma once

// JSONL serialization of PipelineRecord: one JSON object per line carrying a
// schema_version field.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mep/error.hpp"
#include "mep/pipelines.hpp"

namespace mep::record_io {

inline constexpr int kSchemaVersion = 1;

enum class RecordErrc { MalformedRecordLine, Unreadable };

class RecordError : public CodedError<RecordErrc> {
public:
    RecordError(RecordErrc code, const std::string& message, std::size_t line = 0)
        : CodedError<RecordErrc>(code, message), line_(line) {}

    /// 1-based line number for MalformedRecordLine, else 0.
    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

nlohmann::ordered_json to_json(const pipelines::PipelineRecord& record);
/// Throws RecordError(MalformedRecordLine) with line 0; readers fill in the number.
pipelines::PipelineRecord from_json(const nlohmann::json& object);

std::string to_json_line(const pipelines::PipelineRecord& record);
pipelines::PipelineRecord from_json_line(std::string_view line);

/// Every record of a JSONL file; blank lines are ignored.
std::vector<pipelines::PipelineRecord> read_records(const std::filesystem::path& path);
/// Sample ids of a JSONL file, tolerating a truncated final line.
std::vector<std::string> read_sample_ids(const std::filesystem::path& path);

}  // namespace mep::record_io
