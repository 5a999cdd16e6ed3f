#pragma once

// Uniform access to chat-completion backends: request validation, retries with
// jittered exponential backoff, a content-addressed response cache, and usage
// accounting. Backends are either a live OpenAI-compatible HTTP endpoint or an
// in-process mock.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mep/error.hpp"

namespace mep::gateway {

enum class GatewayErrc { InvalidRequest, BackendUnavailable, BackendRejected };

using GatewayError = CodedError<GatewayErrc>;

/// Thrown by a Backend for failures worth retrying (timeouts, 429, 5xx).
class TransientBackendError : public Error {
public:
    using Error::Error;
};

inline constexpr int kDefaultMaxOutputTokens = 1024;

/// Tag prefix used to group ledger entries by sample.
inline constexpr std::string_view kSampleTagPrefix = "sample:";

struct ChatRequest {
    std::string model_id;
    std::string prompt;
    double temperature = 0.0;
    int max_output_tokens = kDefaultMaxOutputTokens;
    // Distinguishes repeated draws of an identical prompt (fixed-temperature
    // sampling, parse retries) so they are not collapsed by the cache.
    int replicate = 0;
    std::vector<std::string> tags;

    /// Throws GatewayError(InvalidRequest) when an invariant is broken.
    void validate() const;

    /// Hex digest of (model_id, prompt, temperature, replicate).
    [[nodiscard]] std::string cache_key() const;
};

struct BackendReply {
    std::string text;
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

class Backend {
public:
    virtual ~Backend() = default;

    [[nodiscard]] virtual std::string id() const = 0;

    /// Performs one attempt. Throws TransientBackendError for retryable
    /// failures and GatewayError(BackendRejected) for protocol errors.
    virtual BackendReply generate(const ChatRequest& request) = 0;
};

struct Completion {
    std::string text;
    int prompt_tokens = 0;
    int completion_tokens = 0;
    int attempts = 1;
    bool cache_hit = false;
    std::string backend_id;
};

// ---------------------------------------------------------------------------
// Usage accounting

struct PriceTable {
    double prompt_per_1k = 0.0;
    double completion_per_1k = 0.0;
};

struct UsageEntry {
    std::vector<std::string> tags;
    int prompt_tokens = 0;
    int completion_tokens = 0;
    std::chrono::duration<double> wall_time{0.0};

    [[nodiscard]] long long total_tokens() const { return static_cast<long long>(prompt_tokens) + completion_tokens; }
    [[nodiscard]] bool has_tag(std::string_view tag) const;
    /// Value of the first "sample:<id>" tag, if any.
    [[nodiscard]] std::optional<std::string> sample_tag() const;
};

struct UsageSummary {
    std::size_t total_calls = 0;
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
    long long total_tokens = 0;
    double avg_tokens_per_sample = 0.0;
    double total_cost = 0.0;
};

/// Append-only, thread-safe record of every non-cached model call.
class UsageLedger {
public:
    explicit UsageLedger(PriceTable prices = {}) : prices_(prices) {}

    UsageLedger(const UsageLedger&) = delete;
    UsageLedger& operator=(const UsageLedger&) = delete;

    void append(UsageEntry entry);

    [[nodiscard]] std::vector<UsageEntry> entries() const;
    [[nodiscard]] std::size_t size() const;
    [[nodiscard]] PriceTable prices() const { return prices_; }

private:
    mutable std::mutex mutex_;
    std::vector<UsageEntry> entries_;
    PriceTable prices_;
};

/// Totals over the ledger. The per-sample average groups entries by their
/// "sample:" tag; an untagged entry counts as a sample of its own.
UsageSummary summarize_usage(const UsageLedger& ledger);
UsageSummary summarize_usage(std::span<const UsageEntry> entries, PriceTable prices);

double call_cost(long long prompt_tokens, long long completion_tokens, PriceTable prices);

// ---------------------------------------------------------------------------
// Response cache

struct CachedResponse {
    std::string text;
    int prompt_tokens = 0;
    int completion_tokens = 0;
    int attempts = 1;
    std::string backend_id;
};

/// Request-hash -> response store. Always memory-backed; when a directory is
/// given, entries are also persisted there as `<hash>.json`.
class ResponseCache {
public:
    ResponseCache() = default;
    explicit ResponseCache(std::filesystem::path directory);

    [[nodiscard]] std::optional<CachedResponse> lookup(const std::string& key) const;
    void store(const std::string& key, const ChatRequest& request, const CachedResponse& response);
    [[nodiscard]] std::size_t size() const;

private:
    mutable std::mutex mutex_;
    mutable std::unordered_map<std::string, CachedResponse> memory_;
    std::optional<std::filesystem::path> directory_;
};

// ---------------------------------------------------------------------------

struct RetryPolicy {
    int max_retries = 3;  // additional attempts after the first
    std::chrono::milliseconds base_delay{250};
    std::chrono::milliseconds max_delay{8000};
    std::uint64_t jitter_seed = 0x6d6570;
};

class Gateway {
public:
    Gateway(std::shared_ptr<Backend> backend, UsageLedger& ledger, RetryPolicy retry = {},
            std::shared_ptr<ResponseCache> cache = nullptr);

    /// Validates, consults the cache, and otherwise calls the backend with
    /// retries. Exactly one ledger entry is appended per non-cached success.
    Completion complete(const ChatRequest& request);

    [[nodiscard]] UsageLedger& ledger() const { return ledger_; }
    [[nodiscard]] const Backend& backend() const { return *backend_; }

private:
    std::chrono::milliseconds backoff_delay(int failed_attempts);

    std::shared_ptr<Backend> backend_;
    UsageLedger& ledger_;
    RetryPolicy retry_;
    std::shared_ptr<ResponseCache> cache_;
    std::mutex rng_mutex_;
    std::mt19937_64 rng_;
};

/// Whitespace-delimited word count; the token estimate used by mock backends.
int approx_token_count(std::string_view text);

// ---------------------------------------------------------------------------
// Mock backend

/// Deterministic backend keyed by exact prompt text. Unscripted prompts go to
/// the programmable handler, then to the fallback text; with neither, the
/// call is rejected.
class MockBackend : public Backend {
public:
    using Handler = std::function<std::optional<std::string>(const ChatRequest&)>;

    explicit MockBackend(std::string id = "mock") : id_(std::move(id)) {}

    void script(std::string prompt, std::string response);
    void set_handler(Handler handler);
    void set_fallback(std::string text);

    [[nodiscard]] std::string id() const override { return id_; }
    BackendReply generate(const ChatRequest& request) override;

    /// Number of generate() attempts seen, including failed ones.
    [[nodiscard]] std::size_t attempts_seen() const;
    [[nodiscard]] std::vector<ChatRequest> requests_seen() const;

private:
    std::string id_;
    mutable std::mutex mutex_;
    std::map<std::string, std::string, std::less<>> scripted_;
    Handler handler_;
    std::optional<std::string> fallback_;
    std::vector<ChatRequest> seen_;
};

// ---------------------------------------------------------------------------
// Live backend

struct HttpBackendConfig {
    std::string base_url;                       // e.g. https://api.openai.com/v1
    std::string api_key_env = "OPENAI_API_KEY";  // name of the variable, never the secret
    std::chrono::seconds timeout{60};
};

/// OpenAI-compatible /chat/completions client sending a single user message.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config);

    [[nodiscard]] std::string id() const override;
    BackendReply generate(const ChatRequest& request) override;

    /// Request body sent for `request`; exposed for wire-format tests.
    [[nodiscard]] static std::string request_body(const ChatRequest& request);
    /// Parses a chat-completions response body. Throws
    /// GatewayError(BackendRejected) when the shape is wrong.
    [[nodiscard]] static BackendReply parse_response(std::string_view body);

private:
    HttpBackendConfig config_;
    std::string scheme_host_;
    std::string path_;
};

}  // namespace mep::gateway
