#include "mep/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mep::config {

namespace {

class LineParser {
public:
    LineParser(std::string_view line, std::size_t number) : s_(line), line_(number) {}

    [[noreturn]] void fail(const std::string& why) const {
        throw ConfigFileError(ConfigErrc::Syntax, "line " + std::to_string(line_) + ": " + why);
    }

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }

    bool at_end_or_comment() {
        skip_ws();
        return pos_ >= s_.size() || s_[pos_] == '#';
    }

    std::string key() {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == '"') return quoted();
        const auto start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' ||
                                    s_[pos_] == '-' || s_[pos_] == '.')) {
            ++pos_;
        }
        if (start == pos_) fail("expected a key");
        return std::string(s_.substr(start, pos_ - start));
    }

    void expect(char c) {
        skip_ws();
        if (pos_ >= s_.size() || s_[pos_] != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    Value value() {
        skip_ws();
        Value v;
        v.line = line_;
        if (pos_ >= s_.size()) fail("missing value");
        const char c = s_[pos_];
        if (c == '"' || c == '\'') {
            v.type = Value::Type::String;
            v.text = c == '"' ? quoted() : literal();
        } else if (c == '[') {
            ++pos_;
            v.type = Value::Type::Array;
            skip_ws();
            while (pos_ < s_.size() && s_[pos_] != ']') {
                Value item = value();
                if (item.type == Value::Type::Array) fail("nested arrays are not supported");
                v.items.push_back(std::move(item));
                skip_ws();
                if (pos_ < s_.size() && s_[pos_] == ',') {
                    ++pos_;
                    skip_ws();
                }
            }
            expect(']');
        } else if (s_.substr(pos_).starts_with("true")) {
            pos_ += 4;
            v.type = Value::Type::Bool;
            v.flag = true;
        } else if (s_.substr(pos_).starts_with("false")) {
            pos_ += 5;
            v.type = Value::Type::Bool;
        } else {
            const auto start = pos_;
            while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.' ||
                                        s_[pos_] == '-' || s_[pos_] == '+' || s_[pos_] == '_')) {
                ++pos_;
            }
            std::string digits(s_.substr(start, pos_ - start));
            std::erase(digits, '_');
            const char* first = digits.data();
            const char* last = digits.data() + digits.size();
            if (!digits.empty() && digits.front() == '+') ++first;
            auto [ptr, ec] = std::from_chars(first, last, v.number);
            if (digits.empty() || ec != std::errc{} || ptr != last || !std::isfinite(v.number)) {
                fail("unrecognised value '" + std::string(s_.substr(start, pos_ - start)) + "'");
            }
            v.type = Value::Type::Number;
        }
        return v;
    }

    std::string section_header() {
        expect('[');
        std::string name = key();
        expect(']');
        return name;
    }

private:
    std::string quoted() {
        ++pos_;
        std::string out;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            char c = s_[pos_++];
            if (c == '\\') {
                if (pos_ >= s_.size()) fail("unterminated escape");
                const char e = s_[pos_++];
                switch (e) {
                    case 'n': c = '\n'; break;
                    case 't': c = '\t'; break;
                    case '"': c = '"'; break;
                    case '\\': c = '\\'; break;
                    default: fail(std::string("unknown escape \\") + e);
                }
            }
            out.push_back(c);
        }
        if (pos_ >= s_.size()) fail("unterminated string");
        ++pos_;
        return out;
    }

    std::string literal() {
        ++pos_;
        const auto end = s_.find('\'', pos_);
        if (end == std::string_view::npos) fail("unterminated string");
        std::string out(s_.substr(pos_, end - pos_));
        pos_ = end + 1;
        return out;
    }

    std::string_view s_;
    std::size_t line_;
    std::size_t pos_ = 0;
};

[[noreturn]] void wrong_type(const std::string& where, const Value& v, const char* expected) {
    throw ConfigFileError(ConfigErrc::WrongType,
                          "line " + std::to_string(v.line) + ": " + where + " must be " + expected);
}

std::string as_string(const std::string& where, const Value& v) {
    if (v.type != Value::Type::String) wrong_type(where, v, "a string");
    return v.text;
}

double as_number(const std::string& where, const Value& v) {
    if (v.type != Value::Type::Number) wrong_type(where, v, "a number");
    return v.number;
}

long long as_integer(const std::string& where, const Value& v) {
    const double d = as_number(where, v);
    if (d != std::floor(d) || std::fabs(d) > 9.0e15) wrong_type(where, v, "an integer");
    return static_cast<long long>(d);
}

std::vector<double> as_numbers(const std::string& where, const Value& v) {
    if (v.type != Value::Type::Array) wrong_type(where, v, "an array of numbers");
    std::vector<double> out;
    for (const auto& item : v.items) out.push_back(as_number(where, item));
    return out;
}

std::filesystem::path resolve(const std::filesystem::path& base_dir, const std::string& p) {
    std::filesystem::path path(p);
    if (path.empty() || path.is_absolute() || base_dir.empty()) return path;
    return base_dir / path;
}

[[noreturn]] void invalid(const std::string& why) { throw ConfigFileError(ConfigErrc::Invalid, why); }

}  // namespace

Document parse_document(std::string_view text) {
    Document doc;
    std::string section;
    doc[section];
    std::size_t number = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++number;
        start = end + 1;

        LineParser p(line, number);
        if (p.at_end_or_comment()) continue;
        if (line.find_first_not_of(" \t") != std::string_view::npos && line[line.find_first_not_of(" \t")] == '[') {
            section = p.section_header();
            if (!p.at_end_or_comment()) p.fail("unexpected text after section header");
            doc[section];
            continue;
        }
        std::string key = p.key();
        p.expect('=');
        Value v = p.value();
        if (!p.at_end_or_comment()) p.fail("unexpected text after value");
        auto [it, inserted] = doc[section].emplace(key, std::move(v));
        if (!inserted) p.fail("duplicate key '" + key + "'");
        if (end == text.size()) break;
    }
    return doc;
}

RunConfig apply_document(const Document& doc, RunConfig cfg, const std::filesystem::path& base_dir) {
    for (const auto& [section, entries] : doc) {
        // A profile sets both temperatures; explicit keys refine it.
        std::vector<std::pair<std::string, const Value*>> ordered;
        for (const auto& [key, v] : entries) {
            if (section == "strategy" && key == "profile") ordered.insert(ordered.begin(), {key, &v});
            else ordered.emplace_back(key, &v);
        }
        for (const auto& [key, vp] : ordered) {
            const Value& v = *vp;
            const std::string where = (section.empty() ? "" : section + ".") + key;
            if (section == "backend") {
                if (key == "url") cfg.backend.url = as_string(where, v);
                else if (key == "model_id") cfg.backend.model_id = as_string(where, v);
                else if (key == "api_key_env") cfg.backend.api_key_env = as_string(where, v);
                else if (key == "timeout_s") cfg.backend.timeout_s = static_cast<int>(as_integer(where, v));
                else if (key == "max_retries") cfg.backend.max_retries = static_cast<int>(as_integer(where, v));
                else if (key == "cache_dir") cfg.backend.cache_dir = resolve(base_dir, as_string(where, v)).string();
                else if (key == "mock") {
                    std::string mock = as_string(where, v);
                    const auto colon = mock.find(':');
                    if (colon != std::string::npos) {
                        mock = mock.substr(0, colon + 1) + resolve(base_dir, mock.substr(colon + 1)).string();
                    }
                    cfg.backend.mock = mock;
                } else {
                    throw ConfigFileError(ConfigErrc::UnknownKey, "unknown key " + where);
                }
            } else if (section == "strategy") {
                if (key == "name") {
                    const auto s = pipelines::parse_strategy(as_string(where, v));
                    if (!s) invalid("unknown strategy '" + v.text + "'");
                    cfg.pipeline.strategy = *s;
                } else if (key == "n") {
                    cfg.pipeline.n = static_cast<int>(as_integer(where, v));
                } else if (key == "profile") {
                    const auto p = pipelines::TemperatureProfile::named(as_string(where, v));
                    if (!p) invalid("unknown temperature profile '" + v.text + "'");
                    cfg.pipeline.temperature = *p;
                } else if (key == "temperature") {
                    cfg.pipeline.temperature.base = as_number(where, v);
                } else if (key == "ladder") {
                    cfg.pipeline.temperature.ladder = as_numbers(where, v);
                } else if (key == "max_parse_retries") {
                    cfg.pipeline.max_parse_retries = static_cast<int>(as_integer(where, v));
                } else if (key == "fanout_workers") {
                    cfg.pipeline.fanout_workers = static_cast<int>(as_integer(where, v));
                } else {
                    throw ConfigFileError(ConfigErrc::UnknownKey, "unknown key " + where);
                }
            } else if (section == "dataset") {
                if (key == "kind") {
                    const auto d = parse_dataset(as_string(where, v));
                    if (!d || *d == Dataset::Adhoc) invalid("unknown dataset kind '" + v.text + "'");
                    cfg.dataset.kind = *d;
                } else if (key == "path") {
                    cfg.dataset.path = resolve(base_dir, as_string(where, v));
                } else if (key == "seed") {
                    const auto seed = as_integer(where, v);
                    if (seed < 0) invalid("dataset.seed must be nonnegative");
                    cfg.dataset.seed = static_cast<std::uint64_t>(seed);
                } else if (key == "limit") {
                    const auto limit = as_integer(where, v);
                    if (limit < 0) invalid("dataset.limit must be nonnegative");
                    cfg.dataset.limit = static_cast<std::size_t>(limit);
                } else {
                    throw ConfigFileError(ConfigErrc::UnknownKey, "unknown key " + where);
                }
            } else if (section == "output") {
                if (key == "path") cfg.output = resolve(base_dir, as_string(where, v));
                else if (key == "workers") cfg.workers = static_cast<int>(as_integer(where, v));
                else throw ConfigFileError(ConfigErrc::UnknownKey, "unknown key " + where);
            } else if (section == "prices") {
                if (key == "prompt_per_1k") cfg.prices.prompt_per_1k = as_number(where, v);
                else if (key == "completion_per_1k") cfg.prices.completion_per_1k = as_number(where, v);
                else throw ConfigFileError(ConfigErrc::UnknownKey, "unknown key " + where);
            } else {
                throw ConfigFileError(ConfigErrc::UnknownKey,
                                      section.empty() ? "key " + key + " outside a section" : "unknown section [" + section + "]");
            }
        }
    }
    cfg.pipeline.model_id = cfg.backend.model_id;
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigFileError(ConfigErrc::Unreadable, "cannot read config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return apply_document(parse_document(buf.str()), {}, path.parent_path());
    } catch (const ConfigFileError& e) {
        throw ConfigFileError(e.code(), path.string() + ": " + e.what());
    }
}

void validate(const RunConfig& c) {
    try {
        c.pipeline.validate();
    } catch (const pipelines::ConfigError& e) {
        invalid(e.what());
    }
    if (c.workers < 1) invalid("output.workers must be at least 1");
    if (c.pipeline.fanout_workers < 1) invalid("strategy.fanout_workers must be at least 1");
    if (c.backend.timeout_s < 1) invalid("backend.timeout_s must be at least 1");
    if (c.backend.max_retries < 0) invalid("backend.max_retries must be nonnegative");
    if (c.prices.prompt_per_1k < 0 || c.prices.completion_per_1k < 0) invalid("prices must be nonnegative");
    if (c.backend.model_id.empty()) invalid("backend.model_id is empty");
    if (c.backend.mock.empty() && c.backend.url.empty()) invalid("either backend.url or backend.mock is required");
    if (c.dataset.kind) {
        std::error_code ec;
        if (c.dataset.path.empty()) throw ConfigFileError(ConfigErrc::MissingPath, "dataset.path is not set");
        if (!std::filesystem::exists(c.dataset.path, ec)) {
            throw ConfigFileError(ConfigErrc::MissingPath, "dataset path not found: " + c.dataset.path.string());
        }
    }
    if (!c.backend.mock.empty()) {
        const auto colon = c.backend.mock.find(':');
        if (colon == std::string::npos) invalid("backend.mock must be oracle:<fixture> or script:<json>");
        const std::string kind = c.backend.mock.substr(0, colon);
        if (kind != "oracle" && kind != "script") invalid("unknown mock kind '" + kind + "'");
        std::error_code ec;
        const std::filesystem::path file = c.backend.mock.substr(colon + 1);
        if (!std::filesystem::is_regular_file(file, ec)) {
            throw ConfigFileError(ConfigErrc::MissingPath, "mock file not found: " + file.string());
        }
    }
}

}  // namespace mep::config
