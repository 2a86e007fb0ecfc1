#include "isotropy/http.h"

#include <algorithm>
#include <cstdlib>
#include <random>
#include <thread>
#include <unordered_map>

#include <httplib.h>

namespace isotropy {

ProviderError::ProviderError(int status, std::string body)
    : Error("provider request failed with status " + std::to_string(status) + ": " + body.substr(0, 512)),
      status(status),
      body(std::move(body)) {}

namespace {

class HttplibTransport : public HttpTransport {
public:
    explicit HttplibTransport(std::chrono::milliseconds timeout) : timeout_(timeout) {}

    HttpResponse post(const std::string& url, const std::string& body, const Headers& headers) override {
        // scheme://host[:port]/path
        const auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos) throw TransportError("malformed url: " + url);
        const auto path_start = url.find('/', scheme_end + 3);
        const std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
        const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

        httplib::Client client(origin);
        client.set_connection_timeout(timeout_);
        client.set_read_timeout(timeout_);
        client.set_write_timeout(timeout_);
        httplib::Headers h(headers.begin(), headers.end());
        auto res = client.Post(path, h, body, "application/json");
        if (!res) throw TransportError("request to " + origin + " failed: " + httplib::to_string(res.error()));
        return {res->status, res->body};
    }

private:
    std::chrono::milliseconds timeout_;
};

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt) {
    thread_local std::mt19937_64 rng{std::random_device{}()};
    std::uniform_real_distribution<double> stretch(1.0, 1.0 + policy.jitter);
    const double base = static_cast<double>(policy.base_delay.count()) * static_cast<double>(1LL << std::min(attempt, 20));
    const double capped = std::min(base, static_cast<double>(policy.max_delay.count()));
    return std::chrono::milliseconds(static_cast<long long>(capped * stretch(rng)));
}

}  // namespace

std::shared_ptr<HttpTransport> make_http_transport(std::chrono::milliseconds timeout) {
    return std::make_shared<HttplibTransport>(timeout);
}

bool is_retryable_status(int status) { return status == 429 || (status >= 500 && status <= 599); }

PostOutcome post_with_retry(HttpTransport& transport, const std::string& url, const std::string& body,
                            const Headers& headers, const RetryPolicy& policy) {
    PostOutcome out;
    int last_status = 0;
    std::string last_body;
    for (int attempt = 0; attempt < policy.max_attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(backoff_delay(policy, attempt - 1));
            ++out.retries;
        }
        try {
            HttpResponse res = transport.post(url, body, headers);
            if (res.status >= 200 && res.status < 300) {
                out.response = std::move(res);
                return out;
            }
            if (!is_retryable_status(res.status)) throw ProviderError(res.status, std::move(res.body));
            last_status = res.status;
            last_body = std::move(res.body);
        } catch (const TransportError& e) {
            last_status = 0;
            last_body = e.what();
        }
    }
    throw ProviderError(last_status, last_body);
}

RateLimiter::RateLimiter(double rate_per_second)
    : interval_(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(1.0 / rate_per_second))),
      next_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
    std::chrono::steady_clock::time_point slot;
    {
        std::lock_guard lock(mutex_);
        slot = std::max(next_, std::chrono::steady_clock::now());
        next_ = slot + interval_;
    }
    std::this_thread::sleep_until(slot);
}

RateLimiter& RateLimiter::for_provider(const std::string& name, double rate_per_second) {
    static std::mutex registry_mutex;
    static std::unordered_map<std::string, std::unique_ptr<RateLimiter>> registry;
    std::lock_guard lock(registry_mutex);
    auto& slot = registry[name];
    if (!slot) slot = std::make_unique<RateLimiter>(rate_per_second);
    return *slot;
}

std::string env_or_empty(const std::string& name) {
    const char* v = std::getenv(name.c_str());
    return v ? std::string(v) : std::string();
}

}  // namespace isotropy
