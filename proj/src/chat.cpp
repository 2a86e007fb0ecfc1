#include "isotropy/chat.h"

#include <algorithm>
#include <cstring>

#include "isotropy/embed.h"
#include "isotropy/fsutil.h"

namespace isotropy {

namespace {

std::uint64_t hash64(std::string_view s) {
    const Digest d = sha256(s);
    std::uint64_t v;
    std::memcpy(&v, d.data(), 8);
    return v;
}

std::pair<std::string, std::string> split_tag(const std::string& tag) {
    const auto pos = tag.find(kTagSeparator);
    if (pos == std::string::npos) return {tag, {}};
    return {tag.substr(0, pos), tag.substr(pos + 1)};
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
        s.replace(pos, from.size(), to);
}

}  // namespace

ChatEndpoint chat_endpoint_from_json(const nlohmann::json& j) {
    ChatEndpoint e;
    e.name = j.at("name").get<std::string>();
    e.url = j.at("url").get<std::string>();
    e.auth = j.value("auth", std::string{});
    e.auth_header = j.value("auth_header", e.auth_header);
    e.auth_prefix = j.value("auth_prefix", e.auth_prefix);
    e.rate = j.value("rate", e.rate);
    if (j.contains("retry")) {
        const auto& r = j.at("retry");
        e.retry.max_attempts = r.value("max_attempts", e.retry.max_attempts);
        e.retry.base_delay = std::chrono::milliseconds(r.value("base_delay_ms", e.retry.base_delay.count()));
        e.retry.max_delay = std::chrono::milliseconds(r.value("max_delay_ms", e.retry.max_delay.count()));
    }
    if (!(e.rate > 0.0)) throw ConfigError("chat endpoint '" + e.name + "': rate must be > 0");
    return e;
}

nlohmann::json chat_request_json(const ChatRequest& request) {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    nlohmann::json j = {{"model", request.model}, {"messages", messages}, {"temperature", request.temperature}};
    if (request.seed) j["seed"] = *request.seed;
    if (request.top_logprobs > 0) {
        j["logprobs"] = true;
        j["top_logprobs"] = request.top_logprobs;
    }
    return j;
}

ChatResponse parse_chat_response(const std::string& body) {
    ChatResponse out;
    const auto j = nlohmann::json::parse(body);
    const auto& choice = j.at("choices").at(0);
    out.content = choice.at("message").at("content").get<std::string>();
    if (choice.contains("logprobs") && choice["logprobs"].is_object() && choice["logprobs"].contains("content") &&
        choice["logprobs"]["content"].is_array()) {
        std::size_t offset = 0;
        for (const auto& tok : choice["logprobs"]["content"]) {
            TokenLogprob t;
            t.token = tok.at("token").get<std::string>();
            t.offset = offset;
            offset += t.token.size();
            if (tok.contains("top_logprobs"))
                for (const auto& alt : tok["top_logprobs"])
                    t.top.emplace_back(alt.at("token").get<std::string>(), alt.at("logprob").get<double>());
            else if (tok.contains("logprob"))
                t.top.emplace_back(t.token, tok["logprob"].get<double>());
            out.logprobs.push_back(std::move(t));
        }
    }
    return out;
}

HttpChatClient::HttpChatClient(ChatEndpoint endpoint, std::shared_ptr<HttpTransport> transport)
    : endpoint_(std::move(endpoint)), transport_(transport ? std::move(transport) : make_http_transport()) {}

ChatResponse HttpChatClient::complete(const ChatRequest& request) {
    Headers headers;
    if (!endpoint_.auth.empty()) {
        const std::string key = env_or_empty(endpoint_.auth);
        if (key.empty()) throw ConfigError("environment variable " + endpoint_.auth + " is not set");
        headers.emplace(endpoint_.auth_header, endpoint_.auth_prefix + key);
    }
    RateLimiter::for_provider(endpoint_.name, endpoint_.rate).acquire();
    const auto outcome =
        post_with_retry(*transport_, endpoint_.url, chat_request_json(request).dump(), headers, endpoint_.retry);
    try {
        return parse_chat_response(outcome.response.body);
    } catch (const nlohmann::json::exception& e) {
        throw ProviderError(outcome.response.status, std::string("malformed chat response: ") + e.what());
    }
}

StubGenerator::StubGenerator(std::vector<std::string> passages) : passages_(std::move(passages)) {
    if (passages_.empty()) throw ConfigError("stub generator has no passages");
}

std::shared_ptr<StubGenerator> StubGenerator::from_file(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    std::vector<std::string> passages;
    std::string current;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        if (line == "---") {
            passages.push_back(current);
            current.clear();
        } else {
            if (!current.empty()) current += '\n';
            current += line;
        }
        pos = nl + 1;
    }
    passages.push_back(current);
    std::erase_if(passages, [](const std::string& p) {
        return p.find_first_not_of(" \t\r\n") == std::string::npos;
    });
    for (auto& p : passages) {
        while (!p.empty() && (p.back() == '\n' || p.back() == '\r')) p.pop_back();
        const auto first = p.find_first_not_of("\r\n");
        p.erase(0, first);
    }
    return std::make_shared<StubGenerator>(std::move(passages));
}

ChatResponse StubGenerator::complete(const ChatRequest& request) {
    const auto [entity, sample] = split_tag(request.tag);
    std::string text = passages_[hash64(entity + kTagSeparator + sample) % passages_.size()];
    replace_all(text, "{entity}", entity);
    return {text, {}};
}

StubOracle::StubOracle(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!std::filesystem::is_directory(dir_)) throw ConfigError("stub oracle directory not found: " + dir_.string());
    for (const auto& e : std::filesystem::directory_iterator(dir_))
        if (e.is_regular_file() && e.path().extension() == ".xml") pool_.push_back(e.path());
    std::sort(pool_.begin(), pool_.end());
    if (pool_.empty()) throw ConfigError("stub oracle directory has no .xml transcripts: " + dir_.string());
}

ChatResponse StubOracle::complete(const ChatRequest& request) {
    const auto [topic_id, response_text] = split_tag(request.tag);
    const auto specific = dir_ / (topic_id + ".xml");
    if (!topic_id.empty() && std::filesystem::exists(specific)) return {read_file(specific), {}};
    return {read_file(pool_[hash64(response_text) % pool_.size()]), {}};
}

}  // namespace isotropy
