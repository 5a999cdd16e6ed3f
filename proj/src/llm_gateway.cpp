#include "mep/llm_gateway.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <random>
#include <thread>

#include <json.hpp>

#include "mep/hashing.hpp"

namespace mep::gateway {

using nlohmann::json;

namespace {

bool is_blank(std::string_view text) {
    return std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string format_temperature(double t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", t);
    return buf;
}

}  // namespace

void ChatRequest::validate() const {
    if (is_blank(prompt)) {
        throw GatewayError(GatewayErrc::InvalidRequest, "request prompt is empty");
    }
    if (!(temperature >= 0.0 && temperature <= 2.0)) {
        throw GatewayError(GatewayErrc::InvalidRequest,
                           "temperature " + format_temperature(temperature) + " outside [0.0, 2.0]");
    }
    if (max_output_tokens < 1) {
        throw GatewayError(GatewayErrc::InvalidRequest, "max_output_tokens must be at least 1");
    }
    if (replicate < 0) {
        throw GatewayError(GatewayErrc::InvalidRequest, "replicate index must be nonnegative");
    }
}

std::string ChatRequest::cache_key() const {
    std::string material;
    material.reserve(model_id.size() + prompt.size() + 32);
    material.append(model_id).push_back('\x1f');
    material.append(prompt).push_back('\x1f');
    material.append(format_temperature(temperature)).push_back('\x1f');
    material.append(std::to_string(replicate));
    return sha256_hex(material);
}

// ---------------------------------------------------------------------------

bool UsageEntry::has_tag(std::string_view tag) const {
    return std::find(tags.begin(), tags.end(), tag) != tags.end();
}

std::optional<std::string> UsageEntry::sample_tag() const {
    for (const auto& tag : tags) {
        if (tag.starts_with(kSampleTagPrefix)) return tag.substr(kSampleTagPrefix.size());
    }
    return std::nullopt;
}

void UsageLedger::append(UsageEntry entry) {
    std::lock_guard lock(mutex_);
    entries_.push_back(std::move(entry));
}

std::vector<UsageEntry> UsageLedger::entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
}

std::size_t UsageLedger::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

double call_cost(long long prompt_tokens, long long completion_tokens, PriceTable prices) {
    return static_cast<double>(prompt_tokens) * prices.prompt_per_1k / 1000.0 +
           static_cast<double>(completion_tokens) * prices.completion_per_1k / 1000.0;
}

UsageSummary summarize_usage(std::span<const UsageEntry> entries, PriceTable prices) {
    UsageSummary summary;
    std::set<std::string> samples;
    std::size_t untagged = 0;
    for (const auto& entry : entries) {
        ++summary.total_calls;
        summary.prompt_tokens += entry.prompt_tokens;
        summary.completion_tokens += entry.completion_tokens;
        if (auto id = entry.sample_tag()) {
            samples.insert(*id);
        } else {
            ++untagged;
        }
    }
    summary.total_tokens = summary.prompt_tokens + summary.completion_tokens;
    // Summed per component so that scaling token counts scales cost exactly.
    summary.total_cost = call_cost(summary.prompt_tokens, summary.completion_tokens, prices);
    const std::size_t sample_count = samples.size() + untagged;
    if (sample_count > 0) {
        summary.avg_tokens_per_sample = static_cast<double>(summary.total_tokens) / static_cast<double>(sample_count);
    }
    return summary;
}

UsageSummary summarize_usage(const UsageLedger& ledger) {
    const auto entries = ledger.entries();
    return summarize_usage(entries, ledger.prices());
}

// ---------------------------------------------------------------------------

ResponseCache::ResponseCache(std::filesystem::path directory) : directory_(std::move(directory)) {
    std::filesystem::create_directories(*directory_);
}

std::optional<CachedResponse> ResponseCache::lookup(const std::string& key) const {
    std::lock_guard lock(mutex_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
    if (!directory_) return std::nullopt;

    std::ifstream in(*directory_ / (key + ".json"));
    if (!in) return std::nullopt;
    try {
        const json doc = json::parse(in);
        CachedResponse response;
        response.text = doc.at("text").get<std::string>();
        response.prompt_tokens = doc.value("prompt_tokens", 0);
        response.completion_tokens = doc.value("completion_tokens", 0);
        response.attempts = doc.value("attempts", 1);
        response.backend_id = doc.value("backend_id", std::string{});
        memory_.emplace(key, response);
        return response;
    } catch (const json::exception&) {
        // Unreadable entries are treated as misses and overwritten later.
        return std::nullopt;
    }
}

void ResponseCache::store(const std::string& key, const ChatRequest& request, const CachedResponse& response) {
    std::lock_guard lock(mutex_);
    memory_[key] = response;
    if (!directory_) return;

    const json doc = {
        {"key", key},
        {"model_id", request.model_id},
        {"prompt", request.prompt},
        {"temperature", request.temperature},
        {"replicate", request.replicate},
        {"text", response.text},
        {"prompt_tokens", response.prompt_tokens},
        {"completion_tokens", response.completion_tokens},
        {"attempts", response.attempts},
        {"backend_id", response.backend_id},
    };
    const auto final_path = *directory_ / (key + ".json");
    auto temp_path = final_path;
    temp_path += ".tmp";
    {
        std::ofstream out(temp_path, std::ios::trunc);
        out << doc.dump() << '\n';
    }
    std::error_code ec;
    std::filesystem::rename(temp_path, final_path, ec);
}

std::size_t ResponseCache::size() const {
    std::lock_guard lock(mutex_);
    return memory_.size();
}

// ---------------------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<Backend> backend, UsageLedger& ledger, RetryPolicy retry,
                 std::shared_ptr<ResponseCache> cache)
    : backend_(std::move(backend)), ledger_(ledger), retry_(retry), cache_(std::move(cache)),
      rng_(retry.jitter_seed) {
    if (!backend_) throw Error("gateway requires a backend");
}

std::chrono::milliseconds Gateway::backoff_delay(int failed_attempts) {
    if (retry_.base_delay.count() <= 0) return std::chrono::milliseconds{0};
    double jitter = 1.0;
    {
        std::lock_guard lock(rng_mutex_);
        jitter = std::uniform_real_distribution<double>(0.5, 1.0)(rng_);
    }
    const double exp = std::ldexp(static_cast<double>(retry_.base_delay.count()), failed_attempts - 1);
    const double capped = std::min(exp, static_cast<double>(retry_.max_delay.count()));
    return std::chrono::milliseconds{static_cast<long long>(capped * jitter)};
}

Completion Gateway::complete(const ChatRequest& request) {
    request.validate();
    const std::string key = request.cache_key();

    if (cache_) {
        if (auto hit = cache_->lookup(key)) {
            return Completion{hit->text, hit->prompt_tokens, hit->completion_tokens, hit->attempts, true,
                              hit->backend_id};
        }
    }

    const int max_attempts = std::max(0, retry_.max_retries) + 1;
    const auto started = std::chrono::steady_clock::now();
    std::string last_failure;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        try {
            BackendReply reply = backend_->generate(request);
            const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
            ledger_.append(UsageEntry{request.tags, reply.prompt_tokens, reply.completion_tokens, elapsed});

            Completion completion{std::move(reply.text), reply.prompt_tokens, reply.completion_tokens, attempt,
                                  false, backend_->id()};
            if (cache_) {
                cache_->store(key, request,
                              CachedResponse{completion.text, completion.prompt_tokens, completion.completion_tokens,
                                             completion.attempts, completion.backend_id});
            }
            return completion;
        } catch (const TransientBackendError& e) {
            last_failure = e.what();
            if (attempt < max_attempts) std::this_thread::sleep_for(backoff_delay(attempt));
        }
    }
    throw GatewayError(GatewayErrc::BackendUnavailable, "backend " + backend_->id() + " unavailable after " +
                                                            std::to_string(max_attempts) +
                                                            " attempts: " + last_failure);
}

int approx_token_count(std::string_view text) {
    int count = 0;
    bool in_word = false;
    for (unsigned char c : text) {
        const bool space = std::isspace(c) != 0;
        if (!space && !in_word) ++count;
        in_word = !space;
    }
    return count;
}

// ---------------------------------------------------------------------------

void MockBackend::script(std::string prompt, std::string response) {
    std::lock_guard lock(mutex_);
    scripted_[std::move(prompt)] = std::move(response);
}

void MockBackend::set_handler(Handler handler) {
    std::lock_guard lock(mutex_);
    handler_ = std::move(handler);
}

void MockBackend::set_fallback(std::string text) {
    std::lock_guard lock(mutex_);
    fallback_ = std::move(text);
}

BackendReply MockBackend::generate(const ChatRequest& request) {
    Handler handler;
    std::optional<std::string> text;
    {
        std::lock_guard lock(mutex_);
        seen_.push_back(request);
        if (auto it = scripted_.find(request.prompt); it != scripted_.end()) text = it->second;
        handler = handler_;
    }
    if (!text && handler) text = handler(request);
    if (!text) {
        std::lock_guard lock(mutex_);
        text = fallback_;
    }
    if (!text) {
        throw GatewayError(GatewayErrc::BackendRejected, "mock backend has no response for prompt");
    }
    return BackendReply{*text, approx_token_count(request.prompt), approx_token_count(*text)};
}

std::size_t MockBackend::attempts_seen() const {
    std::lock_guard lock(mutex_);
    return seen_.size();
}

std::vector<ChatRequest> MockBackend::requests_seen() const {
    std::lock_guard lock(mutex_);
    return seen_;
}

// ---------------------------------------------------------------------------

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    const std::string& url = config_.base_url;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw GatewayError(GatewayErrc::InvalidRequest, "endpoint URL lacks a scheme: " + url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    scheme_host_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? std::string{} : url.substr(path_start);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    if (!path_.ends_with("/chat/completions")) path_ += "/chat/completions";
}

std::string HttpBackend::id() const { return "http:" + scheme_host_; }

std::string HttpBackend::request_body(const ChatRequest& request) {
    const json body = {
        {"model", request.model_id},
        {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})},
        {"temperature", request.temperature},
        {"max_tokens", request.max_output_tokens},
    };
    return body.dump();
}

BackendReply HttpBackend::parse_response(std::string_view body) {
    try {
        const json doc = json::parse(body);
        BackendReply reply;
        const auto& content = doc.at("choices").at(0).at("message").at("content");
        reply.text = content.is_null() ? std::string{} : content.get<std::string>();
        if (auto usage = doc.find("usage"); usage != doc.end() && usage->is_object()) {
            reply.prompt_tokens = usage->value("prompt_tokens", 0);
            reply.completion_tokens = usage->value("completion_tokens", 0);
        }
        return reply;
    } catch (const json::exception& e) {
        throw GatewayError(GatewayErrc::BackendRejected, std::string("malformed chat completion response: ") + e.what());
    }
}

BackendReply HttpBackend::generate(const ChatRequest& request) {
    httplib::Client client(scheme_host_);
    const auto timeout = static_cast<time_t>(config_.timeout.count());
    client.set_connection_timeout(timeout, 0);
    client.set_read_timeout(timeout, 0);
    client.set_write_timeout(timeout, 0);

    httplib::Headers headers;
    if (!config_.api_key_env.empty()) {
        if (const char* secret = std::getenv(config_.api_key_env.c_str()); secret && *secret) {
            headers.emplace("Authorization", std::string("Bearer ") + secret);
        }
    }

    auto result = client.Post(path_, headers, request_body(request), "application/json");
    if (!result) {
        throw TransientBackendError("transport error: " + httplib::to_string(result.error()));
    }
    const int status = result->status;
    if (status == 429 || status >= 500) {
        throw TransientBackendError("HTTP " + std::to_string(status));
    }
    if (status != 200) {
        throw GatewayError(GatewayErrc::BackendRejected, "HTTP " + std::to_string(status) + ": " +
                                                             result->body.substr(0, 200));
    }
    return parse_response(result->body);
}

}  // namespace mep::gateway
