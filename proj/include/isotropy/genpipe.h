#pragma once

// Response dataset construction: N sampled generations per topic, shorter
// variants cut at sentence boundaries, JSONL persistence.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "isotropy/chat.h"
#include "isotropy/errors.h"
#include "isotropy/segment_score.h"

namespace isotropy {

class GeneratorError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    SchemaError(std::size_t line, const std::string& what);
    std::size_t line;  // 1-based
};

inline constexpr std::string_view kDefaultGenerationTemplate =
    "Write approximately {word_target} words about {entity}.";

struct GenerationConfig {
    std::string generator_model;
    double temperature = 0.7;
    std::size_t n_samples = 10;
    std::size_t word_target = 500;
    std::string prompt_template = std::string(kDefaultGenerationTemplate);
    std::int64_t seed_base = 0;
};

// Throws ConfigError.
void validate(const GenerationConfig& cfg);
GenerationConfig generation_config_from_json(const nlohmann::json& j);

// {entity} and {word_target} are substituted; other braces are kept.
std::string generation_prompt(const GenerationConfig& cfg, std::string_view entity);

struct ResponseRecord {
    std::string topic_id;
    std::size_t sample_index = 0;
    std::string text;
    std::size_t word_count = 0;
    std::string generator_model;
    double temperature = 0.0;
    std::string created_at;  // RFC 3339, UTC
    std::size_t length_variant = 0;
    bool hard_cut = false;  // truncation found no sentence boundary in range

    friend bool operator==(const ResponseRecord&, const ResponseRecord&) = default;
};

std::size_t count_words(std::string_view text);

// Current UTC time as "YYYY-MM-DDTHH:MM:SSZ".
std::string rfc3339_now();

struct GenerationResult {
    std::vector<ResponseRecord> records;  // ordered by sample_index
    bool complete = true;
    std::vector<std::string> errors;  // one per failed sample
};

struct GenerationOptions {
    // Sample indices to generate; empty means 0..n_samples-1.
    std::vector<std::size_t> sample_indices;
    std::size_t workers = 1;
    std::function<std::string()> clock = rfc3339_now;
};

// One independent chat call per sample at cfg.temperature. Failed samples
// are reported in errors and leave complete = false; they never abort the
// other samples.
GenerationResult generate_responses(const Topic& topic, const GenerationConfig& cfg, ChatClient& generator,
                                    const GenerationOptions& options = {});

// Sentence ends: '.', '!' or '?', optionally followed by closing quotes or
// brackets, then either end of text or whitespace and an uppercase letter.
// Abbreviations such as "Dr." and "U.S." and single-letter initials do not
// end sentences. Returns byte offsets just past each sentence end.
std::vector<std::size_t> sentence_ends(std::string_view text);

struct Truncation {
    std::string text;
    bool hard_cut = false;
};

// Prefix ending at the sentence end whose word count is nearest to
// word_target (ties toward the shorter prefix). Text within the target is
// returned unchanged. When no sentence ends within the target, the text is
// cut after word_target words and hard_cut is set.
Truncation truncate_to_words(std::string_view text, std::size_t word_target);

// One truncated copy of every record per target, target-major.
std::vector<ResponseRecord> derive_length_variants(const std::vector<ResponseRecord>& records,
                                                   const std::vector<std::size_t>& targets);

struct TopicIngest {
    std::vector<Topic> topics;
    std::size_t skipped = 0;  // trivia records failing the entity filters
};

// Topics JSONL. A line's own "source" wins over default_source.
TopicIngest ingest_topics(const std::filesystem::path& path, TopicSource default_source = TopicSource::custom);

nlohmann::json to_json(const ResponseRecord& r);
ResponseRecord response_record_from_json(const nlohmann::json& j);

// Missing file reads as empty. Malformed lines raise SchemaError.
std::vector<ResponseRecord> read_responses(const std::filesystem::path& path);
void write_responses(const std::filesystem::path& path, const std::vector<ResponseRecord>& records);

}  // namespace isotropy
