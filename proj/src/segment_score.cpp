#include "isotropy/segment_score.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iostream>
#include <limits>

#include "isotropy/workers.h"

namespace isotropy {

MissingPlaceholder::MissingPlaceholder(std::string name)
    : Error("template placeholder '" + name + "' has no value"), name(std::move(name)) {}

EmptyResponse::EmptyResponse() : Error("response text is empty") {}

NoStatementsBlock::NoStatementsBlock() : ParseError("transcript has no <statements> block") {}

UnpairedTags::UnpairedTags(std::size_t position)
    : ParseError("unpaired tag near byte " + std::to_string(position)), position(position) {}

InvalidClass::InvalidClass(std::string value, std::size_t index)
    : ParseError("statement " + std::to_string(index) + " has class '" + value + "', expected 0 or 1"),
      value(std::move(value)),
      index(index) {}

EmptySegmentation::EmptySegmentation() : Error("oracle returned no segments") {}

std::string_view source_name(TopicSource s) {
    switch (s) {
        case TopicSource::fs_bio: return "fs-bio";
        case TopicSource::triviaqa: return "triviaqa";
        case TopicSource::custom: return "custom";
    }
    return "custom";
}

TopicSource parse_source(std::string_view name) {
    for (auto s : {TopicSource::fs_bio, TopicSource::triviaqa, TopicSource::custom})
        if (source_name(s) == name) return s;
    throw InvalidTopic("unknown topic source '" + std::string(name) + "'");
}

namespace {

bool is_identifier(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) || c == '_'; });
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim_view(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::size_t non_space_count(std::string_view s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return !is_space(c); }));
}

constexpr std::string_view kOpenBlock = "<statements>";
constexpr std::string_view kCloseBlock = "</statements>";
constexpr std::string_view kOpenStatement = "<statement>";
constexpr std::string_view kCloseStatement = "</statement>";
constexpr std::string_view kOpenClass = "<class>";
constexpr std::string_view kCloseClass = "</class>";

constexpr std::string_view kCorrective =
    "Your previous reply could not be parsed ({error}). Reply again with only the <statements> block. "
    "Wrap every statement in <statement></statement> tags, follow each with its <class></class> tag, "
    "and use exactly 1 or 0 as the class value.";

ChatResponse call_oracle(ChatClient& oracle, const ChatRequest& request) {
    try {
        return oracle.complete(request);
    } catch (const ProviderError& e) {
        throw OracleError(e.what());
    } catch (const TransportError& e) {
        throw OracleError(e.what());
    } catch (const ConfigError& e) {
        throw OracleError(e.what());
    }
}

// Log-probabilities of the "0" and "1" alternatives at the token holding a
// class value.
std::optional<double> probability_at(const std::vector<TokenLogprob>& tokens, std::size_t offset) {
    for (const auto& tok : tokens) {
        if (offset < tok.offset || offset >= tok.offset + std::max<std::size_t>(tok.token.size(), 1)) continue;
        double lp0 = -std::numeric_limits<double>::infinity();
        double lp1 = lp0;
        for (const auto& [alt, lp] : tok.top) {
            const auto t = trim_view(alt);
            if (t == "0") lp0 = std::max(lp0, lp);
            if (t == "1") lp1 = std::max(lp1, lp);
        }
        return class_probability(lp0, lp1);
    }
    return std::nullopt;
}

}  // namespace

std::string build_prompt(const Topic& topic, std::string_view response_text, const PromptExamples& examples,
                         std::string_view prompt_template) {
    if (topic.entity.empty()) throw InvalidTopic("topic '" + topic.id + "' has an empty entity");
    if (topic.reference_doc.empty()) throw InvalidTopic("topic '" + topic.id + "' has an empty reference document");
    if (response_text.empty()) throw EmptyResponse();

    std::string out;
    out.reserve(prompt_template.size() + topic.reference_doc.size() + response_text.size() + examples.one.size() +
                examples.two.size());
    std::size_t pos = 0;
    while (pos < prompt_template.size()) {
        const std::size_t brace = prompt_template.find('{', pos);
        if (brace == std::string_view::npos) {
            out.append(prompt_template.substr(pos));
            break;
        }
        out.append(prompt_template.substr(pos, brace - pos));
        const bool doubled = prompt_template.substr(brace).starts_with("{{");
        const std::string_view close_token = doubled ? "}}" : "}";
        const std::size_t name_start = brace + (doubled ? 2 : 1);
        const std::size_t close = prompt_template.find(close_token, name_start);
        const std::string_view name =
            close == std::string_view::npos ? std::string_view{} : prompt_template.substr(name_start, close - name_start);
        if (!is_identifier(name)) {
            // Not a placeholder; keep the brace literally.
            out += '{';
            pos = brace + 1;
            continue;
        }
        if (doubled && name == "example_one")
            out += examples.one;
        else if (doubled && name == "example_two")
            out += examples.two;
        else if (!doubled && name == "entity")
            out += topic.entity;
        else if (!doubled && name == "reference_doc")
            out += topic.reference_doc;
        else if (!doubled && name == "response")
            out.append(response_text);
        else
            throw MissingPlaceholder(std::string(name));
        pos = close + close_token.size();
    }
    return out;
}

std::vector<ParsedSegment> parse_transcript_detailed(std::string_view raw) {
    const std::size_t open = raw.find(kOpenBlock);
    if (open == std::string_view::npos) throw NoStatementsBlock();
    const std::size_t close = raw.find(kCloseBlock, open);
    if (close == std::string_view::npos) throw UnpairedTags(open);

    std::vector<ParsedSegment> out;
    std::size_t pos = open + kOpenBlock.size();
    while (pos < close) {
        const std::size_t at = raw.find('<', pos);
        if (at == std::string_view::npos || at >= close) break;
        const std::string_view rest = raw.substr(at, close - at);
        if (rest.starts_with(kCloseStatement) || rest.starts_with(kOpenClass) || rest.starts_with(kCloseClass))
            throw UnpairedTags(at);
        if (!rest.starts_with(kOpenStatement)) {
            pos = at + 1;
            continue;
        }

        const std::size_t text_start = at + kOpenStatement.size();
        const std::size_t text_end = raw.find(kCloseStatement, text_start);
        if (text_end == std::string_view::npos || text_end > close) throw UnpairedTags(at);
        const std::size_t nested = raw.find(kOpenStatement, text_start);
        if (nested < text_end) throw UnpairedTags(nested);

        std::size_t p = text_end + kCloseStatement.size();
        while (p < close && is_space(raw[p])) ++p;
        if (!raw.substr(p).starts_with(kOpenClass)) throw UnpairedTags(p);
        const std::size_t class_start = p + kOpenClass.size();
        const std::size_t class_end = raw.find(kCloseClass, class_start);
        if (class_end == std::string_view::npos || class_end > close) throw UnpairedTags(p);

        const std::size_t index = out.size() + 1;
        const std::string_view value_raw = raw.substr(class_start, class_end - class_start);
        const std::string_view value = trim_view(value_raw);
        if (value != "0" && value != "1") throw InvalidClass(std::string(value), index);
        const std::string_view text = raw.substr(text_start, text_end - text_start);
        if (trim_view(text).empty()) throw ParseError("statement " + std::to_string(index) + " is empty");

        ParsedSegment seg;
        seg.verdict.text = std::string(text);
        seg.verdict.label = value == "1";
        seg.verdict.index = index;
        seg.class_offset = class_start + static_cast<std::size_t>(value.data() - value_raw.data());
        out.push_back(std::move(seg));
        pos = class_end + kCloseClass.size();
    }
    return out;
}

std::vector<SegmentVerdict> parse_transcript(std::string_view raw) {
    std::vector<SegmentVerdict> out;
    for (auto& s : parse_transcript_detailed(raw)) out.push_back(std::move(s.verdict));
    return out;
}

std::string render_transcript(const std::vector<SegmentVerdict>& verdicts) {
    std::string out(kOpenBlock);
    out += '\n';
    for (const auto& v : verdicts) {
        out += kOpenStatement;
        out += v.text;
        out += kCloseStatement;
        out += ' ';
        out += kOpenClass;
        out += v.label ? '1' : '0';
        out += kCloseClass;
        out += '\n';
    }
    out += kCloseBlock;
    return out;
}

double compute_phi(const std::vector<SegmentVerdict>& verdicts) {
    if (verdicts.empty()) throw EmptySegmentation();
    const auto trues = std::count_if(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.label; });
    return static_cast<double>(trues) / static_cast<double>(verdicts.size());
}

std::string normalize_whitespace(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char c : s) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out += ' ';
        pending_space = false;
        out += c;
    }
    return out;
}

double concatenation_fidelity(std::string_view response_text, const std::vector<SegmentVerdict>& verdicts) {
    const std::string original = normalize_whitespace(response_text);
    const std::size_t total = non_space_count(original);
    if (total == 0) return 0.0;
    std::size_t cursor = 0, matched = 0;
    for (const auto& v : verdicts) {
        const std::string seg = normalize_whitespace(v.text);
        if (seg.empty()) continue;
        const std::size_t at = original.find(seg, cursor);
        if (at == std::string::npos) continue;
        matched += non_space_count(seg);
        cursor = at + seg.size();
    }
    return std::min(1.0, static_cast<double>(matched) / static_cast<double>(total));
}

std::optional<double> class_probability(double logprob_zero, double logprob_one) {
    const double inf = std::numeric_limits<double>::infinity();
    if (logprob_zero == -inf && logprob_one == -inf) return std::nullopt;
    if (logprob_zero == -inf) return 1.0;
    if (logprob_one == -inf) return 0.0;
    return 1.0 / (1.0 + std::exp(logprob_zero - logprob_one));
}

ScoredResponse score_response(const Topic& topic, const std::string& response_text, ChatClient& oracle,
                              const OracleConfig& config) {
    if (response_text.empty()) throw EmptyResponse();
    ChatRequest request;
    request.model = config.model;
    request.temperature = config.temperature;
    request.top_logprobs = config.top_logprobs;
    request.messages.push_back({"user", build_prompt(topic, response_text, config.examples)});
    request.tag = topic.id + kTagSeparator + response_text;

    ScoredResponse out;
    out.topic_id = topic.id;
    out.response_text = response_text;
    out.oracle_model = config.model;

    ChatResponse reply = call_oracle(oracle, request);
    std::vector<ParsedSegment> parsed;
    try {
        parsed = parse_transcript_detailed(reply.content);
    } catch (const ParseError& e) {
        std::string corrective(kCorrective);
        corrective.replace(corrective.find("{error}"), 7, e.what());
        request.messages.push_back({"assistant", reply.content});
        request.messages.push_back({"user", corrective});
        out.reprompts = 1;
        reply = call_oracle(oracle, request);
        parsed = parse_transcript_detailed(reply.content);
    }
    if (parsed.empty()) throw EmptySegmentation();

    for (auto& seg : parsed) {
        if (!reply.logprobs.empty()) seg.verdict.prob_true = probability_at(reply.logprobs, seg.class_offset);
        out.segments.push_back(std::move(seg.verdict));
    }
    out.raw_transcript = std::move(reply.content);
    out.phi = compute_phi(out.segments);
    out.fidelity = concatenation_fidelity(response_text, out.segments);
    if (out.fidelity < config.fidelity_warning)
        std::clog << "warning: topic '" << topic.id << "': segment fidelity " << out.fidelity << " is below "
                  << config.fidelity_warning << "\n";
    return out;
}

TopicScoring score_topic_responses(const Topic& topic, const std::vector<std::string>& responses, ChatClient& oracle,
                                   const OracleConfig& config) {
    if (responses.empty()) throw TopicFailed("topic '" + topic.id + "' has no responses");
    std::vector<std::optional<ScoredResponse>> results(responses.size());
    std::vector<std::string> errors(responses.size());
    for_each_index(responses.size(), config.workers, [&](std::size_t i) {
        try {
            results[i] = score_response(topic, responses[i], oracle, config);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });

    TopicScoring out;
    double sum = 0.0;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        if (results[i]) {
            sum += results[i]->phi;
            out.scored_indices.push_back(i);
            out.scored.push_back(std::move(*results[i]));
        } else {
            out.failures.push_back({i, errors[i]});
            std::clog << "warning: topic '" << topic.id << "' response " << i << " failed: " << errors[i] << "\n";
        }
    }
    if (out.scored.size() * 2 < responses.size())
        throw TopicFailed("topic '" + topic.id + "': " + std::to_string(out.failures.size()) + " of " +
                          std::to_string(responses.size()) + " responses failed; first error: " +
                          out.failures.front().error);
    out.mean_phi = sum / static_cast<double>(out.scored.size());
    return out;
}

nlohmann::json to_json(const ScoredResponse& s) {
    nlohmann::json segments = nlohmann::json::array();
    for (const auto& v : s.segments) {
        nlohmann::json seg = {{"index", v.index}, {"text", v.text}, {"label", v.label}};
        if (v.prob_true) seg["prob_true"] = *v.prob_true;
        segments.push_back(std::move(seg));
    }
    return {{"topic_id", s.topic_id},
            {"sample_index", s.sample_index},
            {"length_variant", s.length_variant},
            {"response_text", s.response_text},
            {"segments", segments},
            {"phi", s.phi},
            {"fidelity", s.fidelity},
            {"oracle_model", s.oracle_model},
            {"raw_transcript", s.raw_transcript},
            {"reprompts", s.reprompts}};
}

ScoredResponse scored_response_from_json(const nlohmann::json& j) {
    ScoredResponse s;
    s.topic_id = j.at("topic_id").get<std::string>();
    s.sample_index = j.at("sample_index").get<std::size_t>();
    s.length_variant = j.value("length_variant", std::size_t{0});
    s.response_text = j.at("response_text").get<std::string>();
    for (const auto& seg : j.at("segments")) {
        SegmentVerdict v;
        v.index = seg.at("index").get<std::size_t>();
        v.text = seg.at("text").get<std::string>();
        v.label = seg.at("label").get<bool>();
        if (seg.contains("prob_true")) v.prob_true = seg["prob_true"].get<double>();
        s.segments.push_back(std::move(v));
    }
    s.phi = j.at("phi").get<double>();
    s.fidelity = j.value("fidelity", 0.0);
    s.oracle_model = j.value("oracle_model", std::string{});
    s.raw_transcript = j.value("raw_transcript", std::string{});
    s.reprompts = j.value("reprompts", 0);
    return s;
}

}  // namespace isotropy
