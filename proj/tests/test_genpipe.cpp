#include <doctest.h>

#include <filesystem>
#include <mutex>
#include <random>
#include <set>

#include "isotropy/fsutil.h"
#include "isotropy/genpipe.h"
#include "support/documents.h"

using namespace isotropy;
using isotropy::testing::Document;
using isotropy::testing::oracle_truncate;
using isotropy::testing::synthetic_document;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "isotropy_test_genpipe";
    fs::create_directories(dir);
    return dir / name;
}

std::string words(std::size_t n, const std::string& first = "Alpha") {
    std::string s = first;
    for (std::size_t i = 1; i < n; ++i) s += " word";
    return s;
}

class EchoGenerator : public ChatClient {
public:
    explicit EchoGenerator(std::string text, std::set<std::size_t> failing = {})
        : text_(std::move(text)), failing_(std::move(failing)) {}
    ChatResponse complete(const ChatRequest& r) override {
        std::lock_guard lock(mutex_);
        requests.push_back(r);
        const std::size_t sample = std::stoul(r.tag.substr(r.tag.find(kTagSeparator) + 1));
        if (failing_.contains(sample)) throw ProviderError(500, "generator down");
        return {text_, {}};
    }
    std::vector<ChatRequest> requests;

private:
    std::string text_;
    std::set<std::size_t> failing_;
    std::mutex mutex_;
};

Topic topic(const std::string& id, const std::string& entity) { return {id, entity, "Reference.", TopicSource::custom}; }

GenerationConfig gen_config() {
    GenerationConfig c;
    c.generator_model = "gen-test";
    c.n_samples = 3;
    c.word_target = 100;
    return c;
}

}  // namespace

TEST_CASE("count_words") {
    CHECK(count_words("") == 0);
    CHECK(count_words("   \n") == 0);
    CHECK(count_words("one") == 1);
    CHECK(count_words("  one two\n\tthree  ") == 3);
}

TEST_CASE("sentence ends") {
    CHECK(sentence_ends("One. Two! Three? four. Five") == std::vector<std::size_t>{4, 9, 22});
    CHECK(sentence_ends("Dr. Who met Mr. Smith in the U.S. Army. Done.") == std::vector<std::size_t>{39, 45});
    CHECK(sentence_ends("He said \"Stop.\" Then left.") == std::vector<std::size_t>{15, 26});
    CHECK(sentence_ends("Wait... What?! No.") == std::vector<std::size_t>{7, 14, 18});
    CHECK(sentence_ends("J. R. R. Tolkien wrote it. Yes").size() == 1);
    CHECK(sentence_ends("Version 2.5 shipped.").size() == 1);
}

TEST_CASE("truncate_to_words examples") {
    const std::string s1 = words(10, "First") + ".";
    const std::string s2 = words(10, "Second") + ".";
    const std::string s3 = words(10, "Third") + ".";
    const std::string text = s1 + " " + s2 + " " + s3;
    REQUIRE(count_words(text) == 30);

    const auto t = truncate_to_words(text, 20);
    CHECK(t.text == s1 + " " + s2);
    CHECK_FALSE(t.hard_cut);

    CHECK(truncate_to_words(text, 30).text == text);
    CHECK(truncate_to_words(text, 500).text == text);
    // 14 is closer to 10; 15 ties and goes to the shorter prefix; 16 goes to 20.
    CHECK(truncate_to_words(text, 14).text == s1);
    CHECK(truncate_to_words(text, 15).text == s1);
    CHECK(truncate_to_words(text, 16).text == s1 + " " + s2);
    // 28 is nearest to the full 30-word text.
    CHECK(truncate_to_words(text, 28).text == text);

    const std::string unbroken = words(100, "Long");
    const auto cut = truncate_to_words(unbroken, 50);
    CHECK(cut.hard_cut);
    CHECK(count_words(cut.text) == 50);
    CHECK(unbroken.starts_with(cut.text));
    CHECK(truncate_to_words(cut.text, 50).text == cut.text);

    // The first sentence is already beyond the limit.
    const auto late = truncate_to_words(words(60, "Late") + ". " + words(5, "End") + ".", 50);
    CHECK(late.hard_cut);
    CHECK(count_words(late.text) == 50);
    CHECK_THROWS_AS(truncate_to_words(text, 0), Error);
}

TEST_CASE("truncation matches the all-prefix oracle on synthetic documents") {
    std::mt19937_64 rng(4242);
    const std::vector<std::size_t> targets = {125, 250, 375, 500, 750};
    for (int doc = 0; doc < 100; ++doc) {
        const Document d = synthetic_document(rng);
        REQUIRE(sentence_ends(d.text) == d.prefix_end);
        for (const std::size_t w : targets) {
            bool oracle_cut = false;
            const std::string expected = oracle_truncate(d, w, oracle_cut);
            const auto got = truncate_to_words(d.text, w);
            CHECK(got.hard_cut == oracle_cut);
            if (!oracle_cut) CHECK(got.text == expected);
            CHECK(d.text.starts_with(got.text));
            CHECK(count_words(got.text) <= count_words(d.text));
            const auto twice = truncate_to_words(got.text, w);
            CHECK(twice.text == got.text);
        }
    }
}

TEST_CASE("derive_length_variants") {
    std::mt19937_64 rng(9);
    std::vector<ResponseRecord> src;
    for (std::size_t i = 0; i < 3; ++i) {
        ResponseRecord r;
        r.topic_id = "t";
        r.sample_index = i;
        r.text = synthetic_document(rng).text;
        r.word_count = count_words(r.text);
        r.generator_model = "g";
        r.temperature = 0.7;
        r.created_at = "2026-01-01T00:00:00Z";
        r.length_variant = 1000;
        src.push_back(r);
    }
    const std::vector<std::size_t> targets = {125, 250, 375, 500, 750};
    const auto out = derive_length_variants(src, targets);
    REQUIRE(out.size() == 15);
    for (std::size_t k = 0; k < targets.size(); ++k) {
        for (std::size_t i = 0; i < 3; ++i) {
            const auto& v = out[k * 3 + i];
            CHECK(v.length_variant == targets[k]);
            CHECK(v.sample_index == i);
            CHECK(v.word_count == count_words(v.text));
            CHECK(src[i].text.starts_with(v.text));
            CHECK(v.text == truncate_to_words(src[i].text, targets[k]).text);
        }
    }
    CHECK(derive_length_variants(src, {}).empty());
    const auto same = derive_length_variants(src, {src[0].word_count});
    CHECK(same[0].text == src[0].text);

    auto mixed = src;
    mixed[1].topic_id = "other";
    CHECK_THROWS_AS(derive_length_variants(mixed, targets), Error);
}

TEST_CASE("generation config validation") {
    GenerationConfig c = gen_config();
    CHECK_NOTHROW(validate(c));
    c.temperature = 0.0;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c.temperature = 2.5;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = gen_config();
    c.n_samples = 0;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = gen_config();
    c.word_target = 24;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = gen_config();
    c.prompt_template = "Write something.";
    CHECK_THROWS_AS(validate(c), ConfigError);

    c = gen_config();
    CHECK(generation_prompt(c, "Marie Curie") == "Write approximately 100 words about Marie Curie.");
    const auto parsed = generation_config_from_json({{"generator_model", "m"}, {"n_samples", 4}});
    CHECK(parsed.temperature == 0.7);
    CHECK(parsed.word_target == 500);
    CHECK(parsed.n_samples == 4);
}

TEST_CASE("generate_responses") {
    const std::string text = "Paris is the capital of France. It sits on the Seine.";
    EchoGenerator gen(text);
    GenerationOptions opts;
    opts.clock = [] { return std::string("2026-10-16T00:00:00Z"); };
    const auto out = generate_responses(topic("paris", "Paris"), gen_config(), gen, opts);
    CHECK(out.complete);
    REQUIRE(out.records.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out.records[i].sample_index == i);
        CHECK(out.records[i].text == text);
        CHECK(out.records[i].word_count == 11);
        CHECK(out.records[i].topic_id == "paris");
        CHECK(out.records[i].length_variant == 100);
        CHECK(out.records[i].created_at == "2026-10-16T00:00:00Z");
    }
    REQUIRE(gen.requests.size() == 3);
    std::set<std::int64_t> seeds;
    for (const auto& r : gen.requests) {
        CHECK(r.temperature == 0.7);
        CHECK(r.model == "gen-test");
        REQUIRE(r.messages.size() == 1);
        CHECK(r.messages[0].content == "Write approximately 100 words about Paris.");
        seeds.insert(*r.seed);
    }
    CHECK(seeds == std::set<std::int64_t>{0, 1, 2});

    const std::string now = rfc3339_now();
    CHECK(now.size() == 20);
    CHECK(now[10] == 'T');
    CHECK(now.back() == 'Z');
}

TEST_CASE("generate_responses keeps partial results") {
    EchoGenerator gen("Some text here.", {1});
    auto cfg = gen_config();
    cfg.n_samples = 4;
    GenerationOptions opts;
    opts.workers = 3;
    const auto out = generate_responses(topic("t", "T"), cfg, gen, opts);
    CHECK_FALSE(out.complete);
    REQUIRE(out.records.size() == 3);
    CHECK(out.records[0].sample_index == 0);
    CHECK(out.records[1].sample_index == 2);
    REQUIRE(out.errors.size() == 1);
    CHECK(out.errors[0].find("sample 1") != std::string::npos);

    opts.sample_indices = {1, 3};
    EchoGenerator healthy("Some text here.");
    const auto resumed = generate_responses(topic("t", "T"), cfg, healthy, opts);
    CHECK(resumed.complete);
    CHECK(healthy.requests.size() == 2);
    CHECK(resumed.records[1].sample_index == 3);

    EchoGenerator empty("   ");
    CHECK_FALSE(generate_responses(topic("t", "T"), cfg, empty).complete);
}

TEST_CASE("stub generator is deterministic per entity and sample") {
    const fs::path path = scratch("passages.txt");
    write_file_atomic(path, "{entity} is a city. It is old.\n---\n{entity} is large.\n---\n\n{entity} is by a river.\n");
    auto gen = StubGenerator::from_file(path);
    auto cfg = gen_config();
    cfg.n_samples = 6;
    const auto a = generate_responses(topic("rome", "Rome"), cfg, *gen);
    const auto b = generate_responses(topic("rome", "Rome"), cfg, *gen);
    std::set<std::string> distinct;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].text == b.records[i].text);
        CHECK(a.records[i].text.starts_with("Rome is"));
        CHECK(a.records[i].word_count == count_words(a.records[i].text));
        distinct.insert(a.records[i].text);
    }
    CHECK(distinct.size() > 1);
}

TEST_CASE("ingest_topics") {
    const fs::path path = scratch("topics.jsonl");
    write_file_atomic(path,
                      R"({"id":"t1","entity":"Paris","reference_doc":"Paris is the capital of France.","source":"fs-bio"})"
                      "\n\n"
                      R"({"id":"t2","entity":"Rome","reference_doc":"Rome is in Italy."})"
                      "\n"
                      R"({"id":"t3","entity":"Oslo","reference_doc":"Oslo is in Norway.","source":"triviaqa","is_date":false,"title_match":true})"
                      "\n");
    const auto in = ingest_topics(path);
    REQUIRE(in.topics.size() == 3);
    CHECK(in.skipped == 0);
    CHECK(in.topics[0].source == TopicSource::fs_bio);
    CHECK(in.topics[1].source == TopicSource::custom);
    CHECK(in.topics[2].source == TopicSource::triviaqa);
    CHECK(in.topics[1].reference_doc == "Rome is in Italy.");
    CHECK(ingest_topics(path, TopicSource::fs_bio).topics[1].source == TopicSource::fs_bio);

    const fs::path trivia = scratch("trivia.jsonl");
    write_file_atomic(trivia,
                      R"({"id":"q1","entity":"1 May 1990","reference_doc":"A date.","is_date":true})"
                      "\n"
                      R"({"id":"q2","entity":"Everest","reference_doc":"A mountain.","title_match":false})"
                      "\n"
                      R"({"id":"q3","entity":"Nile","reference_doc":"A river."})"
                      "\n");
    const auto t = ingest_topics(trivia, TopicSource::triviaqa);
    CHECK(t.skipped == 2);
    REQUIRE(t.topics.size() == 1);
    CHECK(t.topics[0].id == "q3");
    // The filters only apply to trivia topics.
    CHECK(ingest_topics(trivia, TopicSource::custom).topics.size() == 3);

    const fs::path bad = scratch("bad.jsonl");
    write_file_atomic(bad, R"({"id":"a","entity":"A","reference_doc":"x"})"
                           "\n"
                           R"({"id":"b","entity":"B"})"
                           "\n");
    try {
        ingest_topics(bad);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.line == 2);
    }
    write_file_atomic(bad, "{not json\n");
    CHECK_THROWS_AS(ingest_topics(bad), SchemaError);
    write_file_atomic(bad, R"({"id":"a","entity":"A","reference_doc":"x"})"
                           "\n"
                           R"({"id":"a","entity":"A","reference_doc":"x"})"
                           "\n");
    CHECK_THROWS_AS(ingest_topics(bad), SchemaError);
    write_file_atomic(bad, R"({"id":"a","entity":"","reference_doc":"x"})");
    CHECK_THROWS_AS(ingest_topics(bad), SchemaError);
    write_file_atomic(bad, R"({"id":"a","entity":"A","reference_doc":"x","source":"wiki"})");
    CHECK_THROWS_AS(ingest_topics(bad), SchemaError);
}

TEST_CASE("responses JSONL round trip") {
    std::vector<ResponseRecord> records;
    for (std::size_t i = 0; i < 4; ++i) {
        ResponseRecord r;
        r.topic_id = "topic \"" + std::to_string(i) + "\"";
        r.sample_index = i;
        r.text = "Line one.\nLine two with unicode: café — 東京.";
        r.word_count = count_words(r.text);
        r.generator_model = "g";
        r.temperature = 0.7;
        r.created_at = "2026-10-16T12:34:56Z";
        r.length_variant = 500;
        r.hard_cut = i == 2;
        records.push_back(r);
    }
    const fs::path path = scratch("responses.jsonl");
    write_responses(path, records);
    CHECK(read_responses(path) == records);
    CHECK(read_responses(scratch("does-not-exist.jsonl")).empty());

    const auto j = to_json(records[0]);
    for (const char* key :
         {"topic_id", "sample_index", "text", "word_count", "generator_model", "temperature", "created_at", "length_variant"})
        CHECK(j.contains(key));
    CHECK_FALSE(j.contains("hard_cut"));

    write_file_atomic(path, to_json(records[0]).dump() + "\n{\"topic_id\":\"x\"}\n");
    try {
        read_responses(path);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.line == 2);
    }
}
