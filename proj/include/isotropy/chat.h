#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "isotropy/http.h"

namespace isotropy {

struct ChatMessage {
    std::string role;
    std::string content;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    std::optional<std::int64_t> seed;
    int top_logprobs = 0;  // 0: do not request log-probabilities
    // Caller-side label ("<topic>/<sample>"); never sent over the wire.
    std::string tag;
};

struct TokenLogprob {
    std::string token;
    std::size_t offset = 0;  // byte offset of the token in the content
    std::vector<std::pair<std::string, double>> top;
};

struct ChatResponse {
    std::string content;
    std::vector<TokenLogprob> logprobs;
};

class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
};

struct ChatEndpoint {
    std::string name;
    std::string url;
    std::string auth;  // environment variable holding the key
    std::string auth_header = "Authorization";
    std::string auth_prefix = "Bearer ";
    double rate = 5.0;
    RetryPolicy retry;
};

ChatEndpoint chat_endpoint_from_json(const nlohmann::json& j);

// OpenAI-compatible chat completions:
//   {"model","messages":[{"role","content"}],"temperature"} ->
//   {"choices":[{"message":{"content"}, "logprobs":{"content":[...]}}]}
class HttpChatClient : public ChatClient {
public:
    HttpChatClient(ChatEndpoint endpoint, std::shared_ptr<HttpTransport> transport = nullptr);
    ChatResponse complete(const ChatRequest& request) override;

private:
    ChatEndpoint endpoint_;
    std::shared_ptr<HttpTransport> transport_;
};

nlohmann::json chat_request_json(const ChatRequest& request);
ChatResponse parse_chat_response(const std::string& body);

// Offline generator: texts come from a file of passages separated by lines
// containing only "---". "{entity}" in a passage is replaced with the entity
// named in the request tag "<entity>\x1f<sample_index>". The passage for a
// sample is picked by hashing (entity, sample_index), so it is deterministic.
class StubGenerator : public ChatClient {
public:
    explicit StubGenerator(std::vector<std::string> passages);
    static std::shared_ptr<StubGenerator> from_file(const std::filesystem::path& path);
    ChatResponse complete(const ChatRequest& request) override;

private:
    std::vector<std::string> passages_;
};

// Offline oracle: replies with a canned transcript from a directory.
// "<topic_id>.xml" wins when present; otherwise one of the directory's
// *.xml files is chosen by hashing the response text. The request tag must
// be "<topic_id>\x1f<response_text>".
class StubOracle : public ChatClient {
public:
    explicit StubOracle(std::filesystem::path dir);
    ChatResponse complete(const ChatRequest& request) override;

private:
    std::filesystem::path dir_;
    std::vector<std::filesystem::path> pool_;
};

inline constexpr char kTagSeparator = '\x1f';

}  // namespace isotropy
