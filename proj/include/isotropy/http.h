#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "isotropy/errors.h"

namespace isotropy {

using Headers = std::multimap<std::string, std::string>;

struct HttpResponse {
    int status = 0;
    std::string body;
};

// Connection-level failure: no HTTP status was received.
class TransportError : public Error {
public:
    using Error::Error;
};

// Non-retryable HTTP failure, or retries exhausted. status is 0 when the
// last attempt failed at the transport level.
class ProviderError : public Error {
public:
    ProviderError(int status, std::string body);
    int status;
    std::string body;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    // Throws TransportError when no response was received.
    virtual HttpResponse post(const std::string& url, const std::string& body, const Headers& headers) = 0;
};

// cpp-httplib backed transport; https requires the OpenSSL build.
std::shared_ptr<HttpTransport> make_http_transport(std::chrono::milliseconds timeout = std::chrono::seconds(120));

struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds base_delay{500};
    std::chrono::milliseconds max_delay{30000};
    // Each delay is stretched by a uniform factor in [1, 1 + jitter].
    double jitter = 0.5;
};

bool is_retryable_status(int status);

struct PostOutcome {
    HttpResponse response;
    int retries = 0;
};

// Retries transport errors, 429 and 5xx with exponential backoff. Returns
// the first 2xx response; throws ProviderError otherwise.
PostOutcome post_with_retry(HttpTransport& transport, const std::string& url, const std::string& body,
                            const Headers& headers, const RetryPolicy& policy);

// Process-wide requests-per-second limiter, shared by every client that
// talks to the same provider name.
class RateLimiter {
public:
    explicit RateLimiter(double rate_per_second);
    void acquire();

    static RateLimiter& for_provider(const std::string& name, double rate_per_second);

private:
    std::mutex mutex_;
    std::chrono::steady_clock::duration interval_;
    std::chrono::steady_clock::time_point next_;
};

// Value of an environment variable, or "" when unset.
std::string env_or_empty(const std::string& name);

}  // namespace isotropy
