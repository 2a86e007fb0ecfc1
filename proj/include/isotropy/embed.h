#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "isotropy/errors.h"
#include "isotropy/http.h"
#include "isotropy/kernel.h"

namespace isotropy {

class DimMismatch : public Error {
public:
    DimMismatch(std::size_t expected, std::size_t got);
    std::size_t expected;
    std::size_t got;
};

class EmptyText : public Error {
public:
    explicit EmptyText(std::size_t index);
    std::size_t index;
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset);
    std::size_t offset;
};

class TruncatedFile : public Error {
public:
    explicit TruncatedFile(std::size_t offset);
    std::size_t offset;
};

enum class Pooling { provider_native, last_token, mean_token };

std::string_view pooling_name(Pooling p);
Pooling parse_pooling(std::string_view name);

enum class ProviderKind {
    remote,        // JSON-over-HTTP embedding API
    hidden_state,  // exported final-layer activations on disk
    stub,          // deterministic hashed bag-of-words vectors, for offline runs
};

// JSON field names of the provider's embedding contract. The defaults match
// {"model", "input"} -> {"data": [{"index", "embedding"}]}.
struct FieldMap {
    std::string model = "model";
    std::string input = "input";
    std::string data = "data";
    std::string index = "index";
    std::string embedding = "embedding";
};

struct ProviderSpec {
    std::string name;
    std::string model;     // sent as the model field; defaults to name
    std::string endpoint;  // URL, HSV1 file path, or "stub://<seed>"
    std::size_t dim = 0;
    Pooling pooling = Pooling::provider_native;
    std::string auth;  // name of the environment variable holding the key
    std::string auth_header = "Authorization";
    std::string auth_prefix = "Bearer ";
    double rate = 10.0;  // requests per second
    std::size_t max_batch = 64;
    FieldMap fields;
    RetryPolicy retry;

    ProviderKind kind() const;
};

// Throws ConfigError on violated invariants.
void validate(const ProviderSpec& spec);
ProviderSpec provider_from_json(const nlohmann::json& j);

struct HiddenStateMatrix {
    std::size_t tokens = 0;
    std::size_t dim = 0;
    std::vector<float> activations;  // tokens x dim, row-major

    float at(std::size_t token, std::size_t d) const { return activations[token * dim + d]; }
};

Embedding pool_last_token(const HiddenStateMatrix& h);
Embedding pool_mean_token(const HiddenStateMatrix& h);
Embedding pool(const HiddenStateMatrix& h, Pooling pooling);

// HSV1 container: "HSV1", u32 count, then per response u32 L, u32 D and
// L*D little-endian f32 values, row-major.
std::vector<HiddenStateMatrix> load_hidden_states(const std::filesystem::path& path);
std::vector<HiddenStateMatrix> parse_hidden_states(std::string_view bytes);
std::string serialize_hidden_states(const std::vector<HiddenStateMatrix>& matrices);

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::string_view bytes);
std::string to_hex(const Digest& d);

struct CacheKey {
    std::string provider_name;
    Digest content_hash{};
    Pooling pooling = Pooling::provider_native;

    // Hex digest identifying the record on disk.
    std::string id() const;
    friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

// Hashes the exact UTF-8 bytes; no normalization.
CacheKey make_cache_key(const ProviderSpec& spec, std::string_view text);

// Content-addressed embedding store:
//   <root>/objects/<id[0:2]>/<id>.f64   u32 dim + dim little-endian f64
//   <root>/index.jsonl                  one line per stored record
// Values round-trip bit-exactly. Safe for concurrent use within a process.
class EmbeddingCache {
public:
    explicit EmbeddingCache(std::filesystem::path root);

    std::optional<Embedding> get(const CacheKey& key) const;
    void put(const CacheKey& key, const Embedding& embedding);
    bool contains(const CacheKey& key) const;
    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path object_path(const std::string& id) const;

    std::filesystem::path root_;
    mutable std::mutex mutex_;
};

struct EmbedStats {
    std::size_t requests = 0;
    std::size_t retries = 0;
    std::size_t cache_hits = 0;
    std::size_t embedded = 0;
};

// embed_text front end for one provider. Safe for concurrent callers:
// requests for a key already in flight wait on the first caller's result.
class EmbeddingClient {
public:
    EmbeddingClient(ProviderSpec spec, std::shared_ptr<EmbeddingCache> cache,
                    std::shared_ptr<HttpTransport> transport = nullptr);

    // One embedding per text, in input order.
    std::vector<Embedding> embed_text(const std::vector<std::string>& texts);

    EmbedStats stats() const;
    const ProviderSpec& spec() const { return spec_; }

private:
    std::vector<Embedding> fetch(const std::vector<std::string>& texts);
    std::vector<Embedding> fetch_remote(const std::vector<std::string>& texts);
    std::vector<Embedding> fetch_hidden_state(const std::vector<std::string>& texts);
    std::vector<Embedding> fetch_stub(const std::vector<std::string>& texts);

    ProviderSpec spec_;
    std::shared_ptr<EmbeddingCache> cache_;
    std::shared_ptr<HttpTransport> transport_;

    std::mutex inflight_mutex_;
    std::unordered_map<std::string, std::shared_future<Embedding>> inflight_;

    std::once_flag hidden_once_;
    std::unordered_map<std::string, HiddenStateMatrix> hidden_by_text_hash_;

    std::atomic<std::size_t> requests_{0};
    std::atomic<std::size_t> retries_{0};
    std::atomic<std::size_t> cache_hits_{0};
    std::atomic<std::size_t> embedded_{0};
};

}  // namespace isotropy
