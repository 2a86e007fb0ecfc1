#include "isotropy/genpipe.h"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <ctime>
#include <fstream>
#include <optional>
#include <set>

#include "isotropy/fsutil.h"
#include "isotropy/workers.h"

namespace isotropy {

SchemaError::SchemaError(std::size_t line, const std::string& what)
    : Error("line " + std::to_string(line) + ": " + what), line(line) {}

void validate(const GenerationConfig& cfg) {
    if (!(cfg.temperature > 0.0 && cfg.temperature <= 2.0))
        throw ConfigError("generation temperature must be in (0, 2]");
    if (cfg.n_samples < 1) throw ConfigError("n_samples must be >= 1");
    if (cfg.word_target < 25) throw ConfigError("word_target must be >= 25");
    if (cfg.prompt_template.find("{entity}") == std::string::npos)
        throw ConfigError("generation prompt template has no {entity} placeholder");
}

GenerationConfig generation_config_from_json(const nlohmann::json& j) {
    GenerationConfig c;
    c.generator_model = j.value("generator_model", c.generator_model);
    c.temperature = j.value("temperature", c.temperature);
    c.n_samples = j.value("n_samples", c.n_samples);
    c.word_target = j.value("word_target", c.word_target);
    c.prompt_template = j.value("prompt_template", c.prompt_template);
    c.seed_base = j.value("seed_base", c.seed_base);
    validate(c);
    return c;
}

std::string generation_prompt(const GenerationConfig& cfg, std::string_view entity) {
    std::string out;
    const std::string_view t = cfg.prompt_template;
    std::size_t pos = 0;
    while (pos < t.size()) {
        const auto brace = t.find('{', pos);
        if (brace == std::string_view::npos) {
            out.append(t.substr(pos));
            break;
        }
        out.append(t.substr(pos, brace - pos));
        const auto rest = t.substr(brace);
        if (rest.starts_with("{entity}")) {
            out.append(entity);
            pos = brace + 8;
        } else if (rest.starts_with("{word_target}")) {
            out += std::to_string(cfg.word_target);
            pos = brace + 13;
        } else {
            out += '{';
            pos = brace + 1;
        }
    }
    return out;
}

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::size_t count_words(std::string_view text) {
    std::size_t n = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = is_space(c);
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

std::string rfc3339_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::array<char, 32> buf{};
    std::strftime(buf.data(), buf.size(), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf.data();
}

GenerationResult generate_responses(const Topic& topic, const GenerationConfig& cfg, ChatClient& generator,
                                    const GenerationOptions& options) {
    validate(cfg);
    std::vector<std::size_t> indices = options.sample_indices;
    if (indices.empty())
        for (std::size_t i = 0; i < cfg.n_samples; ++i) indices.push_back(i);

    const std::string prompt = generation_prompt(cfg, topic.entity);
    std::vector<std::optional<ResponseRecord>> slots(indices.size());
    std::vector<std::string> errors(indices.size());

    for_each_index(indices.size(), options.workers, [&](std::size_t k) {
        const std::size_t sample = indices[k];
        ChatRequest request;
        request.model = cfg.generator_model;
        request.temperature = cfg.temperature;
        request.seed = cfg.seed_base + static_cast<std::int64_t>(sample);
        request.messages.push_back({"user", prompt});
        request.tag = topic.entity + kTagSeparator + std::to_string(sample);
        try {
            ChatResponse reply = generator.complete(request);
            if (count_words(reply.content) == 0) throw GeneratorError("generator returned an empty response");
            ResponseRecord r;
            r.topic_id = topic.id;
            r.sample_index = sample;
            r.word_count = count_words(reply.content);
            r.text = std::move(reply.content);
            r.generator_model = cfg.generator_model;
            r.temperature = cfg.temperature;
            r.created_at = options.clock ? options.clock() : rfc3339_now();
            r.length_variant = cfg.word_target;
            slots[k] = std::move(r);
        } catch (const Error& e) {
            errors[k] = "topic '" + topic.id + "' sample " + std::to_string(sample) + ": " + e.what();
        }
    });

    GenerationResult out;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (slots[k])
            out.records.push_back(std::move(*slots[k]));
        else
            out.errors.push_back(std::move(errors[k]));
    }
    out.complete = out.errors.empty();
    std::sort(out.records.begin(), out.records.end(),
              [](const auto& a, const auto& b) { return a.sample_index < b.sample_index; });
    return out;
}

namespace {

bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }

// The token ending at a '.' at position dot, without the dot.
std::string_view token_before(std::string_view text, std::size_t dot) {
    std::size_t start = dot;
    while (start > 0 && !is_space(text[start - 1])) --start;
    std::string_view tok = text.substr(start, dot - start);
    while (!tok.empty() && (tok.front() == '(' || tok.front() == '"' || tok.front() == '\'')) tok.remove_prefix(1);
    return tok;
}

bool is_abbreviation(std::string_view tok) {
    static const std::set<std::string_view> kList = {
        "Mr",   "Mrs",  "Ms",  "Dr",   "Prof", "Sr",  "Jr",   "St",    "Mt",   "Ft",  "vs",  "etc",
        "Inc",  "Ltd",  "Co",  "Corp", "No",   "Gen", "Col",  "Lt",    "Sgt",  "Capt", "Rev", "Hon",
        "Gov",  "Sen",  "Rep", "Jan",  "Feb",  "Mar", "Apr",  "Jun",   "Jul",  "Aug", "Sep", "Sept",
        "Oct",  "Nov",  "Dec", "approx", "ca", "cf",  "al",   "Ph.D",  "a.m",  "p.m", "e.g", "i.e",
        "U.S",  "U.K",  "U.N", "E.U",  "D.C",  "Fig", "Vol",  "Ave",   "Blvd", "Dept", "Est", "Bros"};
    if (kList.contains(tok)) return true;
    // Initials and dotted acronyms: "J", "J.R.R", "U.S.A".
    if (tok.empty()) return false;
    for (std::size_t i = 0; i < tok.size(); ++i) {
        const bool letter_slot = i % 2 == 0;
        if (letter_slot ? !std::isalpha(static_cast<unsigned char>(tok[i])) : tok[i] != '.') return false;
    }
    return tok.size() % 2 == 1;
}

}  // namespace

std::vector<std::size_t> sentence_ends(std::string_view text) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c != '.' && c != '!' && c != '?') continue;
        std::size_t end = i + 1;
        while (end < text.size() && (text[end] == '.' || text[end] == '!' || text[end] == '?')) ++end;
        while (end < text.size() && is_closer(text[end])) ++end;
        std::size_t next = end;
        while (next < text.size() && is_space(text[next])) ++next;
        const bool at_end = next == text.size();
        // An abbreviation still ends the text when nothing follows it.
        if (c == '.' && !at_end && is_abbreviation(token_before(text, i))) continue;
        const bool boundary = at_end || (next > end && is_upper(text[next]));
        if (boundary && (out.empty() || out.back() != end)) out.push_back(end);
        i = end - 1;
    }
    return out;
}

Truncation truncate_to_words(std::string_view text, std::size_t word_target) {
    if (word_target < 1) throw Error("word_target must be >= 1");
    if (count_words(text) <= word_target) return {std::string(text), false};

    std::optional<std::size_t> best_end;
    std::size_t best_distance = 0;
    bool any_within = false;
    std::size_t words = 0, scanned = 0;
    bool in_word = false;
    for (const std::size_t end : sentence_ends(text)) {
        for (; scanned < end; ++scanned) {
            const bool space = is_space(text[scanned]);
            if (!space && !in_word) ++words;
            in_word = !space;
        }
        if (words == 0) continue;
        if (words <= word_target) any_within = true;
        const std::size_t distance = words > word_target ? words - word_target : word_target - words;
        // Ends arrive in increasing word order, so strict < keeps the shorter on ties.
        if (!best_end || distance < best_distance) {
            best_end = end;
            best_distance = distance;
        }
        if (words > word_target) break;
    }
    if (any_within) return {std::string(text.substr(0, *best_end)), false};

    // No sentence end in range: cut right after the word_target-th word.
    std::size_t seen = 0;
    in_word = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const bool space = is_space(text[i]);
        if (!space && !in_word) ++seen;
        if (space && in_word && seen == word_target) return {std::string(text.substr(0, i)), true};
        in_word = !space;
    }
    return {std::string(text), true};
}

std::vector<ResponseRecord> derive_length_variants(const std::vector<ResponseRecord>& records,
                                                   const std::vector<std::size_t>& targets) {
    for (const auto& r : records)
        if (r.topic_id != records.front().topic_id || r.length_variant != records.front().length_variant)
            throw Error("derive_length_variants: records must share topic and length variant");
    std::vector<ResponseRecord> out;
    out.reserve(records.size() * targets.size());
    for (const std::size_t target : targets) {
        for (const auto& r : records) {
            ResponseRecord v = r;
            Truncation t = truncate_to_words(r.text, target);
            v.text = std::move(t.text);
            v.word_count = count_words(v.text);
            v.hard_cut = t.hard_cut;
            v.length_variant = target;
            out.push_back(std::move(v));
        }
    }
    return out;
}

namespace {

std::string required_string(const nlohmann::json& j, const char* key, std::size_t line) {
    if (!j.contains(key) || !j[key].is_string()) throw SchemaError(line, std::string("missing string field '") + key + "'");
    std::string v = j[key].get<std::string>();
    if (v.find_first_not_of(" \t\r\n") == std::string::npos)
        throw SchemaError(line, std::string("field '") + key + "' is empty");
    return v;
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(line_no, std::string("invalid JSON: ") + e.what());
        }
        if (!j.is_object()) throw SchemaError(line_no, "expected a JSON object");
        fn(j, line_no);
    }
}

}  // namespace

TopicIngest ingest_topics(const std::filesystem::path& path, TopicSource default_source) {
    TopicIngest out;
    std::set<std::string> seen;
    for_each_json_line(path, [&](const nlohmann::json& j, std::size_t line) {
        Topic t;
        t.id = required_string(j, "id", line);
        t.entity = required_string(j, "entity", line);
        t.reference_doc = required_string(j, "reference_doc", line);
        t.source = default_source;
        if (j.contains("source")) {
            if (!j["source"].is_string()) throw SchemaError(line, "field 'source' must be a string");
            try {
                t.source = parse_source(j["source"].get<std::string>());
            } catch (const InvalidTopic& e) {
                throw SchemaError(line, e.what());
            }
        }
        for (const char* flag : {"is_date", "title_match"})
            if (j.contains(flag) && !j[flag].is_boolean())
                throw SchemaError(line, std::string("field '") + flag + "' must be a boolean");
        if (t.source == TopicSource::triviaqa &&
            (j.value("is_date", false) || !j.value("title_match", true))) {
            ++out.skipped;
            return;
        }
        if (!seen.insert(t.id).second) throw SchemaError(line, "duplicate topic id '" + t.id + "'");
        out.topics.push_back(std::move(t));
    });
    return out;
}

nlohmann::json to_json(const ResponseRecord& r) {
    nlohmann::json j = {{"topic_id", r.topic_id},
                        {"sample_index", r.sample_index},
                        {"text", r.text},
                        {"word_count", r.word_count},
                        {"generator_model", r.generator_model},
                        {"temperature", r.temperature},
                        {"created_at", r.created_at},
                        {"length_variant", r.length_variant}};
    if (r.hard_cut) j["hard_cut"] = true;
    return j;
}

ResponseRecord response_record_from_json(const nlohmann::json& j) {
    ResponseRecord r;
    r.topic_id = j.at("topic_id").get<std::string>();
    r.sample_index = j.at("sample_index").get<std::size_t>();
    r.text = j.at("text").get<std::string>();
    r.word_count = j.at("word_count").get<std::size_t>();
    r.generator_model = j.at("generator_model").get<std::string>();
    r.temperature = j.at("temperature").get<double>();
    r.created_at = j.at("created_at").get<std::string>();
    r.length_variant = j.at("length_variant").get<std::size_t>();
    r.hard_cut = j.value("hard_cut", false);
    if (r.word_count != count_words(r.text)) throw Error("word_count does not match text");
    return r;
}

std::vector<ResponseRecord> read_responses(const std::filesystem::path& path) {
    std::vector<ResponseRecord> out;
    if (!std::filesystem::exists(path)) return out;
    for_each_json_line(path, [&](const nlohmann::json& j, std::size_t line) {
        try {
            out.push_back(response_record_from_json(j));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(line, e.what());
        } catch (const Error& e) {
            throw SchemaError(line, e.what());
        }
    });
    return out;
}

void write_responses(const std::filesystem::path& path, const std::vector<ResponseRecord>& records) {
    std::string text;
    for (const auto& r : records) {
        text += to_json(r).dump();
        text += '\n';
    }
    write_file_atomic(path, text);
}

}  // namespace isotropy
