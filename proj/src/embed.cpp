#include "isotropy/embed.h"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include <openssl/evp.h>

#include "isotropy/fsutil.h"
#include "isotropy/rng.h"

namespace isotropy {

DimMismatch::DimMismatch(std::size_t expected, std::size_t got)
    : Error("embedding dimension " + std::to_string(got) + " does not match expected " + std::to_string(expected)),
      expected(expected),
      got(got) {}

EmptyText::EmptyText(std::size_t index) : Error("text " + std::to_string(index) + " is empty"), index(index) {}

FormatError::FormatError(const std::string& what, std::size_t offset)
    : Error("format error at byte " + std::to_string(offset) + ": " + what), offset(offset) {}

TruncatedFile::TruncatedFile(std::size_t offset)
    : Error("file truncated at byte " + std::to_string(offset)), offset(offset) {}

std::string_view pooling_name(Pooling p) {
    switch (p) {
        case Pooling::provider_native: return "provider-native";
        case Pooling::last_token: return "last-token";
        case Pooling::mean_token: return "mean-token";
    }
    return "unknown";
}

Pooling parse_pooling(std::string_view name) {
    for (Pooling p : {Pooling::provider_native, Pooling::last_token, Pooling::mean_token})
        if (pooling_name(p) == name) return p;
    throw ConfigError("unknown pooling '" + std::string(name) + "'");
}

ProviderKind ProviderSpec::kind() const {
    if (endpoint.starts_with("stub://")) return ProviderKind::stub;
    if (endpoint.starts_with("http://") || endpoint.starts_with("https://")) return ProviderKind::remote;
    return ProviderKind::hidden_state;
}

void validate(const ProviderSpec& spec) {
    if (spec.name.empty()) throw ConfigError("provider name is empty");
    if (spec.dim < 1) throw ConfigError("provider '" + spec.name + "': dim must be >= 1");
    if (!(spec.rate > 0.0)) throw ConfigError("provider '" + spec.name + "': rate must be > 0");
    if (spec.max_batch < 1) throw ConfigError("provider '" + spec.name + "': max_batch must be >= 1");
    const bool native = spec.pooling == Pooling::provider_native;
    switch (spec.kind()) {
        case ProviderKind::remote:
        case ProviderKind::stub:
            if (!native) throw ConfigError("provider '" + spec.name + "': remote providers use provider-native pooling");
            break;
        case ProviderKind::hidden_state:
            if (native) throw ConfigError("provider '" + spec.name + "': hidden-state sources need last-token or mean-token pooling");
            break;
    }
}

ProviderSpec provider_from_json(const nlohmann::json& j) {
    ProviderSpec s;
    s.name = j.at("name").get<std::string>();
    s.model = j.value("model", s.name);
    s.endpoint = j.at("endpoint").get<std::string>();
    s.dim = j.at("dim").get<std::size_t>();
    s.pooling = parse_pooling(j.value("pooling", std::string("provider-native")));
    s.auth = j.value("auth", std::string{});
    s.auth_header = j.value("auth_header", s.auth_header);
    s.auth_prefix = j.value("auth_prefix", s.auth_prefix);
    s.rate = j.value("rate", s.rate);
    s.max_batch = j.value("max_batch", s.max_batch);
    if (j.contains("fields")) {
        const auto& f = j.at("fields");
        s.fields.model = f.value("model", s.fields.model);
        s.fields.input = f.value("input", s.fields.input);
        s.fields.data = f.value("data", s.fields.data);
        s.fields.index = f.value("index", s.fields.index);
        s.fields.embedding = f.value("embedding", s.fields.embedding);
    }
    if (j.contains("retry")) {
        const auto& r = j.at("retry");
        s.retry.max_attempts = r.value("max_attempts", s.retry.max_attempts);
        s.retry.base_delay = std::chrono::milliseconds(r.value("base_delay_ms", s.retry.base_delay.count()));
        s.retry.max_delay = std::chrono::milliseconds(r.value("max_delay_ms", s.retry.max_delay.count()));
    }
    validate(s);
    return s;
}

Embedding pool_last_token(const HiddenStateMatrix& h) {
    if (h.tokens < 1) throw InvalidEmbedding("hidden-state matrix has no tokens");
    const std::size_t last = h.tokens - 1;
    std::vector<double> v(h.dim);
    for (std::size_t d = 0; d < h.dim; ++d) v[d] = h.at(last, d);
    return Embedding(std::move(v));
}

Embedding pool_mean_token(const HiddenStateMatrix& h) {
    if (h.tokens < 1) throw InvalidEmbedding("hidden-state matrix has no tokens");
    std::vector<double> v(h.dim, 0.0);
    for (std::size_t t = 0; t < h.tokens; ++t)
        for (std::size_t d = 0; d < h.dim; ++d) v[d] += h.at(t, d);
    for (double& x : v) x /= static_cast<double>(h.tokens);
    return Embedding(std::move(v));
}

Embedding pool(const HiddenStateMatrix& h, Pooling pooling) {
    switch (pooling) {
        case Pooling::last_token: return pool_last_token(h);
        case Pooling::mean_token: return pool_mean_token(h);
        case Pooling::provider_native: break;
    }
    throw ConfigError("hidden states need last-token or mean-token pooling");
}

namespace {

static_assert(std::endian::native == std::endian::little, "HSV1 and cache codecs assume a little-endian host");

constexpr std::string_view kHiddenMagic = "HSV1";

std::uint32_t read_u32(std::string_view bytes, std::size_t offset) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + offset, 4);
    return v;
}

void append_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n\f\v");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n\f\v");
    return std::string(s.substr(b, e - b + 1));
}

// Bag-of-words hashing: every lowercased alphanumeric word contributes a
// fixed pseudo-random direction, so texts sharing vocabulary land close
// together. Deterministic in (seed, text).
std::vector<double> stub_vector(std::uint64_t seed, std::string_view text, std::size_t dim) {
    std::vector<double> v(dim, 0.0);
    std::string word;
    auto flush = [&] {
        if (word.empty()) return;
        const Digest h = sha256(word);
        std::uint64_t word_id;
        std::memcpy(&word_id, h.data(), 8);
        CounterRng rng(seed, word_id);
        for (auto& x : v) x += rng.normal();
        word.clear();
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        else
            flush();
    }
    flush();
    return v;
}

}  // namespace

std::vector<HiddenStateMatrix> parse_hidden_states(std::string_view bytes) {
    if (bytes.size() < 8) {
        if (bytes.size() >= 4 && bytes.substr(0, 4) != kHiddenMagic) throw FormatError("bad magic", 0);
        throw TruncatedFile(bytes.size());
    }
    if (bytes.substr(0, 4) != kHiddenMagic) throw FormatError("bad magic", 0);
    const std::uint32_t count = read_u32(bytes, 4);

    std::vector<HiddenStateMatrix> out;
    std::size_t offset = 8;
    for (std::uint32_t r = 0; r < count; ++r) {
        if (bytes.size() - offset < 8) throw TruncatedFile(bytes.size());
        const std::size_t header = offset;
        const std::uint64_t tokens = read_u32(bytes, offset);
        const std::uint64_t dim = read_u32(bytes, offset + 4);
        offset += 8;
        if (tokens == 0 || dim == 0) throw FormatError("zero-sized hidden-state matrix", header);
        const std::uint64_t payload = tokens * dim * 4;
        if (payload > bytes.size() - offset) throw FormatError("length header exceeds remaining bytes", header);

        HiddenStateMatrix m;
        m.tokens = tokens;
        m.dim = dim;
        m.activations.resize(tokens * dim);
        std::memcpy(m.activations.data(), bytes.data() + offset, payload);
        for (std::size_t i = 0; i < m.activations.size(); ++i)
            if (!std::isfinite(m.activations[i])) throw FormatError("non-finite activation", offset + 4 * i);
        offset += payload;
        out.push_back(std::move(m));
    }
    if (offset != bytes.size()) throw FormatError("trailing bytes after last record", offset);
    return out;
}

std::vector<HiddenStateMatrix> load_hidden_states(const std::filesystem::path& path) {
    return parse_hidden_states(read_file(path));
}

std::string serialize_hidden_states(const std::vector<HiddenStateMatrix>& matrices) {
    std::string out(kHiddenMagic);
    append_u32(out, static_cast<std::uint32_t>(matrices.size()));
    for (const auto& m : matrices) {
        append_u32(out, static_cast<std::uint32_t>(m.tokens));
        append_u32(out, static_cast<std::uint32_t>(m.dim));
        out.append(reinterpret_cast<const char*>(m.activations.data()), m.activations.size() * 4);
    }
    return out;
}

Digest sha256(std::string_view bytes) {
    Digest d{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), d.data(), &len, EVP_sha256(), nullptr) != 1 || len != d.size())
        throw Error("sha256 failed");
    return d;
}

std::string to_hex(const Digest& d) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (auto b : d) {
        s += digits[b >> 4];
        s += digits[b & 15];
    }
    return s;
}

std::string CacheKey::id() const {
    std::string material = provider_name;
    material += '\0';
    material += pooling_name(pooling);
    material += '\0';
    material.append(reinterpret_cast<const char*>(content_hash.data()), content_hash.size());
    return to_hex(sha256(material));
}

CacheKey make_cache_key(const ProviderSpec& spec, std::string_view text) {
    return {spec.name, sha256(text), spec.pooling};
}

EmbeddingCache::EmbeddingCache(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_ / "objects");
}

std::filesystem::path EmbeddingCache::object_path(const std::string& id) const {
    return root_ / "objects" / id.substr(0, 2) / (id + ".f64");
}

bool EmbeddingCache::contains(const CacheKey& key) const {
    return std::filesystem::exists(object_path(key.id()));
}

std::optional<Embedding> EmbeddingCache::get(const CacheKey& key) const {
    const auto path = object_path(key.id());
    std::lock_guard lock(mutex_);
    if (!std::filesystem::exists(path)) return std::nullopt;
    const std::string bytes = read_file(path);
    if (bytes.size() < 4) throw FormatError("cache record too short", 0);
    const std::uint32_t dim = read_u32(bytes, 0);
    if (bytes.size() != 4 + std::size_t{dim} * 8) throw FormatError("cache record size mismatch", 0);
    std::vector<double> v(dim);
    std::memcpy(v.data(), bytes.data() + 4, std::size_t{dim} * 8);
    return Embedding(std::move(v));
}

void EmbeddingCache::put(const CacheKey& key, const Embedding& embedding) {
    const std::string id = key.id();
    std::string bytes;
    append_u32(bytes, static_cast<std::uint32_t>(embedding.dim()));
    bytes.append(reinterpret_cast<const char*>(embedding.values().data()), embedding.dim() * 8);

    std::lock_guard lock(mutex_);
    const auto path = object_path(id);
    if (std::filesystem::exists(path)) return;
    write_file_atomic(path, bytes);
    nlohmann::json line = {{"id", id},
                           {"provider", key.provider_name},
                           {"pooling", pooling_name(key.pooling)},
                           {"content_sha256", to_hex(key.content_hash)},
                           {"dim", embedding.dim()}};
    std::ofstream index(root_ / "index.jsonl", std::ios::app);
    index << line.dump() << '\n';
}

EmbeddingClient::EmbeddingClient(ProviderSpec spec, std::shared_ptr<EmbeddingCache> cache,
                                 std::shared_ptr<HttpTransport> transport)
    : spec_(std::move(spec)), cache_(std::move(cache)), transport_(std::move(transport)) {
    validate(spec_);
    if (spec_.model.empty()) spec_.model = spec_.name;
    if (spec_.kind() == ProviderKind::remote && !transport_) transport_ = make_http_transport();
}

EmbedStats EmbeddingClient::stats() const {
    return {requests_.load(), retries_.load(), cache_hits_.load(), embedded_.load()};
}

std::vector<Embedding> EmbeddingClient::embed_text(const std::vector<std::string>& texts) {
    if (texts.empty()) throw Error("embed_text: no texts given");
    for (std::size_t i = 0; i < texts.size(); ++i)
        if (trim(texts[i]).empty()) throw EmptyText(i);

    const std::size_t n = texts.size();
    std::vector<std::optional<Embedding>> out(n);
    std::vector<std::shared_future<Embedding>> waits(n);
    std::vector<std::string> owned_ids;
    std::vector<std::string> owned_texts;
    std::unordered_map<std::string, std::promise<Embedding>> promises;

    {
        std::lock_guard lock(inflight_mutex_);
        for (std::size_t i = 0; i < n; ++i) {
            const CacheKey key = make_cache_key(spec_, texts[i]);
            const std::string id = key.id();
            if (auto hit = cache_ ? cache_->get(key) : std::nullopt) {
                out[i] = std::move(*hit);
                ++cache_hits_;
                continue;
            }
            if (auto it = inflight_.find(id); it != inflight_.end()) {
                waits[i] = it->second;
                continue;
            }
            std::promise<Embedding> p;
            waits[i] = p.get_future().share();
            inflight_.emplace(id, waits[i]);
            promises.emplace(id, std::move(p));
            owned_ids.push_back(id);
            owned_texts.push_back(texts[i]);
        }
    }

    std::size_t done = 0;
    try {
        for (; done < owned_texts.size(); done += spec_.max_batch) {
            const std::size_t end = std::min(owned_texts.size(), done + spec_.max_batch);
            std::vector<std::string> batch(owned_texts.begin() + static_cast<std::ptrdiff_t>(done),
                                           owned_texts.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<Embedding> got = fetch(batch);
            std::lock_guard lock(inflight_mutex_);
            for (std::size_t k = 0; k < got.size(); ++k) {
                const std::string& id = owned_ids[done + k];
                if (cache_) cache_->put(make_cache_key(spec_, batch[k]), got[k]);
                promises.at(id).set_value(got[k]);
                inflight_.erase(id);
                ++embedded_;
            }
        }
    } catch (...) {
        std::lock_guard lock(inflight_mutex_);
        for (std::size_t k = done; k < owned_ids.size(); ++k) {
            promises.at(owned_ids[k]).set_exception(std::current_exception());
            inflight_.erase(owned_ids[k]);
        }
        throw;
    }

    std::vector<Embedding> result;
    result.reserve(n);
    for (std::size_t i = 0; i < n; ++i) result.push_back(out[i] ? std::move(*out[i]) : waits[i].get());
    return result;
}

std::vector<Embedding> EmbeddingClient::fetch(const std::vector<std::string>& texts) {
    ++requests_;
    switch (spec_.kind()) {
        case ProviderKind::remote: return fetch_remote(texts);
        case ProviderKind::hidden_state: return fetch_hidden_state(texts);
        case ProviderKind::stub: return fetch_stub(texts);
    }
    throw ConfigError("unknown provider kind");
}

std::vector<Embedding> EmbeddingClient::fetch_remote(const std::vector<std::string>& texts) {
    const FieldMap& f = spec_.fields;
    const nlohmann::json request = {{f.model, spec_.model}, {f.input, texts}};
    Headers headers;
    if (!spec_.auth.empty()) {
        const std::string key = env_or_empty(spec_.auth);
        if (key.empty()) throw ConfigError("environment variable " + spec_.auth + " is not set");
        headers.emplace(spec_.auth_header, spec_.auth_prefix + key);
    }

    RateLimiter::for_provider(spec_.name, spec_.rate).acquire();
    const PostOutcome outcome = post_with_retry(*transport_, spec_.endpoint, request.dump(), headers, spec_.retry);
    retries_ += static_cast<std::size_t>(outcome.retries);

    std::vector<std::optional<Embedding>> slots(texts.size());
    try {
        const auto body = nlohmann::json::parse(outcome.response.body);
        const auto& data = body.at(f.data);
        if (!data.is_array() || data.size() != texts.size())
            throw ProviderError(outcome.response.status, "expected " + std::to_string(texts.size()) + " embeddings");
        for (std::size_t pos = 0; pos < data.size(); ++pos) {
            const auto& item = data[pos];
            const std::size_t idx = item.contains(f.index) ? item.at(f.index).get<std::size_t>() : pos;
            if (idx >= slots.size() || slots[idx]) throw ProviderError(outcome.response.status, "bad embedding index");
            auto values = item.at(f.embedding).get<std::vector<double>>();
            if (values.size() != spec_.dim) throw DimMismatch(spec_.dim, values.size());
            slots[idx] = Embedding(std::move(values));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ProviderError(outcome.response.status, std::string("malformed embedding response: ") + e.what());
    }
    std::vector<Embedding> out;
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

std::vector<Embedding> EmbeddingClient::fetch_hidden_state(const std::vector<std::string>& texts) {
    // The export sits next to a manifest listing the response texts in
    // matrix order, one JSON string per line.
    std::call_once(hidden_once_, [&] {
        const auto matrices = load_hidden_states(spec_.endpoint);
        std::ifstream manifest(spec_.endpoint + ".texts.jsonl");
        if (!manifest) throw ConfigError("missing manifest " + spec_.endpoint + ".texts.jsonl");
        std::string line;
        std::size_t i = 0;
        while (std::getline(manifest, line)) {
            if (line.empty()) continue;
            if (i >= matrices.size()) throw ConfigError("hidden-state manifest has more texts than matrices");
            hidden_by_text_hash_[to_hex(sha256(nlohmann::json::parse(line).get<std::string>()))] = matrices[i++];
        }
        if (i != matrices.size()) throw ConfigError("hidden-state manifest has fewer texts than matrices");
    });
    std::vector<Embedding> out;
    for (const auto& t : texts) {
        auto it = hidden_by_text_hash_.find(to_hex(sha256(t)));
        if (it == hidden_by_text_hash_.end()) throw ConfigError("text not present in hidden-state export " + spec_.endpoint);
        Embedding e = pool(it->second, spec_.pooling);
        if (e.dim() != spec_.dim) throw DimMismatch(spec_.dim, e.dim());
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<Embedding> EmbeddingClient::fetch_stub(const std::vector<std::string>& texts) {
    // stub://<seed>[?dim=<n>]; the dim override simulates a provider that
    // disagrees with the configured dimension.
    const std::string rest = spec_.endpoint.substr(7);
    const auto query = rest.find('?');
    const std::string seed_text = rest.substr(0, query);
    std::size_t dim = spec_.dim;
    if (query != std::string::npos) {
        const std::string q = rest.substr(query + 1);
        if (!q.starts_with("dim=")) throw ConfigError("unsupported stub endpoint option '" + q + "'");
        dim = std::stoull(q.substr(4));
    }
    std::uint64_t seed = 0;
    try {
        if (!seed_text.empty()) seed = std::stoull(seed_text);
    } catch (const std::exception&) {
        throw ConfigError("stub endpoint seed must be an integer: " + spec_.endpoint);
    }
    std::vector<Embedding> out;
    for (const auto& t : texts) {
        std::vector<double> v = stub_vector(seed, t, dim);
        if (v.size() != spec_.dim) throw DimMismatch(spec_.dim, v.size());
        out.emplace_back(std::move(v));
    }
    return out;
}

}  // namespace isotropy
