#pragma once

// Segment-Score: one oracle call segments a response into atomic statements
// and labels each true/false against a reference document; the factuality
// fraction phi is the share labelled true.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "isotropy/chat.h"
#include "isotropy/errors.h"

namespace isotropy {

enum class TopicSource { fs_bio, triviaqa, custom };

std::string_view source_name(TopicSource s);
TopicSource parse_source(std::string_view name);

struct Topic {
    std::string id;
    std::string entity;
    std::string reference_doc;
    TopicSource source = TopicSource::custom;
};

struct SegmentVerdict {
    std::string text;
    bool label = false;
    std::optional<double> prob_true;
    std::size_t index = 0;  // 1-based

    friend bool operator==(const SegmentVerdict&, const SegmentVerdict&) = default;
};

struct ScoredResponse {
    std::string topic_id;
    std::size_t sample_index = 0;
    std::size_t length_variant = 0;
    std::string response_text;
    std::vector<SegmentVerdict> segments;
    double phi = 0.0;
    double fidelity = 0.0;
    std::string oracle_model;
    std::string raw_transcript;
    int reprompts = 0;
};

class MissingPlaceholder : public Error {
public:
    explicit MissingPlaceholder(std::string name);
    std::string name;
};

class InvalidTopic : public Error {
public:
    using Error::Error;
};

class EmptyResponse : public Error {
public:
    EmptyResponse();
};

// Any failure to read the oracle's tagged transcript.
class ParseError : public Error {
public:
    using Error::Error;
};

class NoStatementsBlock : public ParseError {
public:
    NoStatementsBlock();
};

class UnpairedTags : public ParseError {
public:
    explicit UnpairedTags(std::size_t position);
    std::size_t position;
};

class InvalidClass : public ParseError {
public:
    InvalidClass(std::string value, std::size_t index);
    std::string value;
    std::size_t index;
};

class EmptySegmentation : public Error {
public:
    EmptySegmentation();
};

class OracleError : public Error {
public:
    using Error::Error;
};

class TopicFailed : public Error {
public:
    using Error::Error;
};

struct PromptExamples {
    std::string one;
    std::string two;
};

std::string_view segment_score_template();
// The two curated in-context examples shipped with the template.
PromptExamples default_examples();

// Substitutes {entity}, {reference_doc}, {response}, {{example_one}} and
// {{example_two}}; any other {name} raises MissingPlaceholder.
std::string build_prompt(const Topic& topic, std::string_view response_text, const PromptExamples& examples,
                         std::string_view prompt_template = segment_score_template());

struct ParsedSegment {
    SegmentVerdict verdict;
    std::size_t class_offset = 0;  // byte offset of the class value in the transcript
};

std::vector<ParsedSegment> parse_transcript_detailed(std::string_view raw);
std::vector<SegmentVerdict> parse_transcript(std::string_view raw);

// Inverse of parse_transcript for the statement/class tag schema.
std::string render_transcript(const std::vector<SegmentVerdict>& verdicts);

// Fraction labelled true; throws EmptySegmentation for m = 0.
double compute_phi(const std::vector<SegmentVerdict>& verdicts);

// Collapse whitespace runs to one space and trim.
std::string normalize_whitespace(std::string_view s);

// Share of the response's non-space characters recovered by the segments,
// matched in order after whitespace normalization.
double concatenation_fidelity(std::string_view response_text, const std::vector<SegmentVerdict>& verdicts);

// exp(lp1) / (exp(lp0) + exp(lp1)); nullopt when both are -inf.
std::optional<double> class_probability(double logprob_zero, double logprob_one);

struct OracleConfig {
    std::string model;
    double temperature = 0.0;
    int top_logprobs = 5;  // 0 disables log-probability requests
    double fidelity_warning = 0.98;
    PromptExamples examples = default_examples();
    std::size_t workers = 1;
};

ScoredResponse score_response(const Topic& topic, const std::string& response_text, ChatClient& oracle,
                              const OracleConfig& config);

struct ResponseFailure {
    std::size_t index = 0;
    std::string error;
};

struct TopicScoring {
    std::vector<ScoredResponse> scored;  // successes, in input order
    std::vector<std::size_t> scored_indices;
    std::vector<ResponseFailure> failures;
    double mean_phi = 0.0;
};

// Failed responses are excluded from mean_phi as long as at least half of
// the responses succeed; otherwise TopicFailed.
TopicScoring score_topic_responses(const Topic& topic, const std::vector<std::string>& responses, ChatClient& oracle,
                                   const OracleConfig& config);

nlohmann::json to_json(const ScoredResponse& s);
ScoredResponse scored_response_from_json(const nlohmann::json& j);

}  // namespace isotropy
