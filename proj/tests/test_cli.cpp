#include <doctest.h>

#include <cmath>
#include <fstream>
#include <regex>
#include <set>

#include "isotropy/cli.h"
#include "isotropy/eval.h"
#include "isotropy/svg.h"
#include "support/oracles.h"
#include "support/stub_server.h"
#include "support/workspace.h"

using namespace isotropy;
using isotropy::testing::StubServer;
using isotropy::testing::Workspace;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kPassages = {
    "{entity} is a large city with a long history. It has many museums and galleries. The river runs through it "
    "from west to east. People like it and visit often.",
    "{entity} was founded long ago by traders. Its history is varied and full of conflict. Many rulers lived there "
    "over time. The old walls still stand in places.",
    "The weather in {entity} is mild for most of the year. Rain falls often in winter months. Summers are warm and "
    "pleasant there. Parks are busy on sunny days.",
    "{entity} has a famous football club with a loyal following. The stadium is very large and modern. Fans travel "
    "from far away to attend matches. Local bars show every game.",
};

void prepare(Workspace& ws, std::size_t topics) {
    ws.write_topics(topics);
    ws.write_passages(kPassages);
    ws.write_transcript("t1", {{"It is a city.", 1}, {"It has museums.", 0}});
}

std::vector<nlohmann::json> jsonl(const std::string& text) {
    std::vector<nlohmann::json> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(nlohmann::json::parse(line));
    return out;
}

std::vector<nlohmann::json> without_timestamps(std::vector<nlohmann::json> rows) {
    for (auto& r : rows) r.erase("created_at");
    return rows;
}

// Remote provider whose embedding is a one-hot by request order, so every
// text gets its own orthogonal direction unless a fixed vector is forced.
StubServer one_hot_server(std::size_t dim, std::size_t reply_dim) {
    auto counter = std::make_shared<std::size_t>(0);
    return StubServer([=](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        nlohmann::json data = nlohmann::json::array();
        for (std::size_t i = 0; i < body["input"].size(); ++i) {
            std::vector<double> v(reply_dim, 0.0);
            v[(*counter)++ % dim] = 1.0;
            data.push_back({{"index", i}, {"embedding", v}});
        }
        res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
}

void write_records(const Workspace& ws, const std::vector<std::pair<std::string, std::string>>& topic_texts) {
    std::vector<ResponseRecord> records;
    std::map<std::string, std::size_t> next;
    for (const auto& [topic, text] : topic_texts) {
        ResponseRecord r;
        r.topic_id = topic;
        r.sample_index = next[topic]++;
        r.text = text;
        r.word_count = count_words(text);
        r.generator_model = "fixture";
        r.created_at = "2026-01-01T00:00:00Z";
        r.length_variant = 30;
        records.push_back(r);
    }
    write_responses(ws.path("out/responses.jsonl"), records);
}

std::vector<TopicObservation> observations(const Workspace& ws, std::size_t length = 30) {
    return read_observations_csv(ws.path("out/scores/observations_len" + std::to_string(length) + ".csv"));
}

double x_of(const std::vector<TopicObservation>& rows, const std::string& topic, const std::string& measure) {
    for (const auto& r : rows)
        if (r.topic_id == topic && r.measure_name == measure) return r.x;
    FAIL("no observation for " << topic << "/" << measure);
    return 0;
}

}  // namespace

TEST_CASE("config loading") {
    Workspace ws("config");
    prepare(ws, 2);
    ws.write("config.json", ws.config().dump());
    const RunConfig c = load_run_config(ws.path("config.json"));
    CHECK(c.paths.responses == ws.path("out/responses.jsonl"));
    CHECK(c.measures.size() == 4);
    CHECK(c.n_boot == 200);
    CHECK(c.provider("").name == "stub");
    CHECK_THROWS_AS(c.provider("other"), ConfigError);

    auto bad = ws.config();
    bad["providers"][0]["api_key"] = "sk-inline";
    CHECK_THROWS_AS(run_config_from_json(bad, ws.root()), ConfigError);
    bad = ws.config();
    bad["unexpected"] = 1;
    CHECK_THROWS_AS(run_config_from_json(bad, ws.root()), ConfigError);
    bad = ws.config();
    bad["measures"] = nlohmann::json::array();
    CHECK_THROWS_AS(run_config_from_json(bad, ws.root()), ConfigError);
    bad = ws.config();
    bad["measures"] = {"entropy"};
    CHECK_THROWS_AS(run_config_from_json(bad, ws.root()), ConfigError);
    bad = ws.config();
    bad["paths"].erase("scores");
    CHECK_THROWS_AS(run_config_from_json(bad, ws.root()), ConfigError);
    CHECK_THROWS_AS(load_run_config(ws.path("missing.json")), ConfigError);
}

TEST_CASE("usage and config errors exit 2 with a JSON summary") {
    Workspace ws("usage");
    prepare(ws, 2);
    std::ostringstream out, err;
    CHECK(run_cli(std::vector<std::string>{"generate"}, out, err) == kExitUsage);
    CHECK(ws.run({}).code == kExitUsage);
    CHECK(ws.run({"sweep"}).code == kExitUsage);
    CHECK(ws.run({"sweep", "--n-values", "5..2"}).code == kExitUsage);

    ws.config()["providers"][0]["token"] = "secret";
    const auto r = ws.run({"embed"});
    CHECK(r.code == kExitUsage);
    const auto summary = nlohmann::json::parse(r.err.substr(r.err.rfind("{\"command\"")));
    CHECK(summary["status"] == "failed");
    CHECK(summary["command"] == "embed");
    CHECK(summary["failures"][0]["item"] == "config");
}

TEST_CASE("generate writes N records per topic and resumes to the same file") {
    Workspace ws("generate");
    prepare(ws, 2);
    REQUIRE(ws.run({"generate"}).code == kExitOk);
    const std::string first = ws.read("out/responses.jsonl");
    const auto rows = jsonl(first);
    REQUIRE(rows.size() == 6);
    std::set<std::pair<std::string, std::size_t>> keys;
    for (const auto& r : rows) {
        keys.emplace(r["topic_id"], r["sample_index"]);
        CHECK(r["length_variant"] == 30);
        CHECK(r["generator_model"] == "stub-gen");
        CHECK(r["text"].get<std::string>().find("{entity}") == std::string::npos);
    }
    CHECK(keys.size() == 6);

    // Rerun: nothing to do, file unchanged.
    const auto again = ws.run({"generate"});
    CHECK(again.code == kExitOk);
    CHECK(again.out.find("0 generated") != std::string::npos);
    CHECK(ws.read("out/responses.jsonl") == first);

    // Interrupt after two records: the resumed file matches a clean run.
    std::istringstream in(first);
    std::string l1, l2;
    std::getline(in, l1);
    std::getline(in, l2);
    ws.write("out/responses.jsonl", l1 + "\n" + l2 + "\n");
    const auto resumed = ws.run({"generate"});
    CHECK(resumed.code == kExitOk);
    CHECK(resumed.out.find("4 generated") != std::string::npos);
    CHECK(without_timestamps(jsonl(ws.read("out/responses.jsonl"))) == without_timestamps(rows));
}

TEST_CASE("generate derives length variants from complete topics") {
    Workspace ws("variants");
    prepare(ws, 2);
    const auto r = ws.run({"generate", "--lengths", "12,20,30"});
    REQUIRE(r.code == kExitOk);
    const auto rows = jsonl(ws.read("out/responses.jsonl"));
    CHECK(rows.size() == 18);
    for (const auto& row : rows) {
        const std::size_t len = row["length_variant"];
        if (len == 30) continue;
        const std::string text = row["text"];
        // Either a hard cut at exactly the target or a whole-sentence prefix.
        if (row.value("hard_cut", false))
            CHECK(count_words(text) == len);
        else
            CHECK(std::string(".!?").find(text.back()) != std::string::npos);
    }
}

TEST_CASE("generate reports failed samples and exits 1") {
    Workspace ws("genfail");
    prepare(ws, 2);
    StubServer server([](const httplib::Request&, httplib::Response& res) {
        res.status = 400;
        res.set_content("{\"error\":\"bad request\"}", "application/json");
    });
    ws.config()["generator_endpoint"] = {{"name", "gen"}, {"url", server.url("/v1/chat/completions")}, {"rate", 1000}};
    ws.use_stubs(false);
    const auto r = ws.run({"generate"});
    CHECK(r.code == kExitFailures);
    const auto summary = nlohmann::json::parse(r.err.substr(r.err.rfind("{\"command\"")));
    CHECK(summary["failures"].size() == 6);
    CHECK(server.hits() == 6);
    CHECK((!fs::exists(ws.path("out/responses.jsonl")) || jsonl(ws.read("out/responses.jsonl")).empty()));
}

TEST_CASE("embed batches unique texts and reuses the cache") {
    Workspace ws("embed");
    prepare(ws, 2);
    std::vector<std::pair<std::string, std::string>> texts;
    for (int i = 0; i < 20; ++i) texts.push_back({i < 10 ? "t1" : "t2", "Distinct response number " + std::to_string(i) + "."});
    write_records(ws, texts);

    auto server = one_hot_server(32, 32);
    ws.config()["providers"] = {{{"name", "remote"}, {"endpoint", server.url()}, {"dim", 32}, {"max_batch", 8}, {"rate", 1000}}};
    const auto r = ws.run({"embed"});
    REQUIRE(r.code == kExitOk);
    CHECK(server.hits() == 3);
    CHECK(r.out.find("20 embedded") != std::string::npos);

    const auto again = ws.run({"embed"});
    CHECK(again.code == kExitOk);
    CHECK(server.hits() == 3);
    CHECK(again.out.find("20 cache hits") != std::string::npos);
}

TEST_CASE("embed fails on a dimension mismatch") {
    Workspace ws("dim");
    prepare(ws, 1);
    write_records(ws, {{"t1", "One."}, {"t1", "Two."}});
    auto server = one_hot_server(16, 16);
    ws.config()["providers"] = {{{"name", "remote"}, {"endpoint", server.url()}, {"dim", 32}, {"rate", 1000}}};
    const auto r = ws.run({"embed"});
    CHECK(r.code == kExitFailures);
    CHECK(r.err.find("dimension") != std::string::npos);
    CHECK((!fs::exists(ws.path("out/cache/objects")) || fs::is_empty(ws.path("out/cache/objects"))));
}

TEST_CASE("score: identical responses give zero, orthogonal responses give one") {
    Workspace ws("score");
    prepare(ws, 2);
    write_records(ws, {{"t1", "Same words."}, {"t1", "Same words."}, {"t1", "Same words."},
                       {"t2", "First."}, {"t2", "Second."}, {"t2", "Third."}});
    auto server = one_hot_server(8, 8);
    ws.config()["providers"] = {{{"name", "remote"}, {"endpoint", server.url()}, {"dim", 8}, {"rate", 1000}}};
    REQUIRE(ws.run({"embed"}).code == kExitOk);
    REQUIRE(ws.run({"score"}).code == kExitOk);
    const auto rows = observations(ws);
    CHECK(rows.size() == 8);
    CHECK(x_of(rows, "t1", "vne") == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(x_of(rows, "t2", "vne") == doctest::Approx(1.0).epsilon(1e-9));
    // Orthogonal responses: the raw kernel is I, ||I||_F = sqrt(3).
    CHECK(x_of(rows, "t2", "frobenius") == doctest::Approx(std::sqrt(3.0)));
    for (const auto& r : rows) CHECK(std::isnan(r.y));
}

TEST_CASE("score: hidden-state export with cosine 0.5 matches the closed form") {
    Workspace ws("hidden");
    prepare(ws, 1);
    write_records(ws, {{"t1", "Alpha."}, {"t1", "Beta."}});
    // Two responses, last-token vectors (1,0) and (1/2, sqrt(3)/2).
    HiddenStateMatrix a{2, 2, {0.3f, 0.9f, 1.0f, 0.0f}};
    HiddenStateMatrix b{1, 2, {0.5f, static_cast<float>(std::sqrt(3.0) / 2.0)}};
    write_file_atomic(ws.path("states.hsv"), serialize_hidden_states({a, b}));
    ws.write("states.hsv.texts.jsonl", "\"Alpha.\"\n\"Beta.\"\n");
    ws.config()["providers"] = {
        {{"name", "hs"}, {"endpoint", ws.path("states.hsv").string()}, {"dim", 2}, {"pooling", "last-token"}}};
    REQUIRE(ws.run({"embed"}).code == kExitOk);
    REQUIRE(ws.run({"score", "--measures", "vne"}).code == kExitOk);

    const double cosine = 0.5 * 1.0 + static_cast<double>(static_cast<float>(std::sqrt(3.0) / 2.0)) * 0.0;
    Matrix k(2, 2);
    k(0, 0) = k(1, 1) = 0.5;
    k(0, 1) = k(1, 0) = cosine / 2.0;
    const auto eig = isotropy::testing::eig2_closed_form(k);
    const double expected = isotropy::testing::entropy_nats({eig[0], eig[1]}) / std::log(2.0);
    const auto rows = observations(ws);
    REQUIRE(rows.size() == 1);
    CHECK(x_of(rows, "t1", "vne") == doctest::Approx(expected).epsilon(1e-7));
    CHECK(x_of(rows, "t1", "vne") == doctest::Approx(0.811278).epsilon(1e-6));
}

TEST_CASE("score skips topics with fewer than two samples and flags missing embeddings") {
    Workspace ws("scoreskip");
    prepare(ws, 3);
    write_records(ws, {{"t1", "A one."}, {"t1", "A two."}, {"t2", "Lonely."}});
    REQUIRE(ws.run({"embed"}).code == kExitOk);
    const auto r = ws.run({"score"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("1 skipped") != std::string::npos);
    CHECK(observations(ws).size() == 4);

    write_records(ws, {{"t1", "A one."}, {"t1", "A two."}, {"t3", "Never embedded."}, {"t3", "Also not."}});
    const auto missing = ws.run({"score"});
    CHECK(missing.code == kExitFailures);
    CHECK(missing.err.find("t3") != std::string::npos);
    CHECK(observations(ws).size() == 4);
}

TEST_CASE("segment-score: topic means from canned transcripts") {
    Workspace ws("segment");
    prepare(ws, 3);
    const std::string london = read_file(fs::path(ISOTROPY_FIXTURE_DIR) / "london_transcript.xml");
    ws.write("oracle/t1.xml", london);
    ws.write_transcript("t2", {{"A.", 1}, {"B.", 1}, {"C.", 1}});
    ws.write_transcript("t3", {{"A.", 1}, {"B.", 0}});
    REQUIRE(ws.run({"generate"}).code == kExitOk);
    REQUIRE(ws.run({"embed"}).code == kExitOk);
    REQUIRE(ws.run({"score"}).code == kExitOk);
    const auto r = ws.run({"segment-score"});
    REQUIRE(r.code == kExitOk);

    const auto phi = nlohmann::json::parse(ws.read("out/scores/phi_len30.json"));
    CHECK(phi["topics"]["t1"]["mean_phi"].get<double>() == 9.0 / 11.0);
    CHECK(phi["topics"]["t2"]["mean_phi"].get<double>() == 1.0);
    CHECK(phi["topics"]["t3"]["mean_phi"].get<double>() == 0.5);
    CHECK(jsonl(ws.read("out/scores/scored_len30.jsonl")).size() == 9);
    for (const auto& o : observations(ws)) CHECK(!std::isnan(o.y));

    // Rerun reuses every stored score.
    const auto again = ws.run({"segment-score"});
    CHECK(again.code == kExitOk);
    CHECK(again.out.find("0 scored, 9 reused") != std::string::npos);
}

TEST_CASE("segment-score fails a topic when most responses fail") {
    Workspace ws("segfail");
    prepare(ws, 2);
    ws.write("oracle/t2.xml", "no statements here");
    REQUIRE(ws.run({"generate"}).code == kExitOk);
    const auto r = ws.run({"segment-score"});
    CHECK(r.code == kExitFailures);
    const auto phi = nlohmann::json::parse(ws.read("out/scores/phi_len30.json"));
    CHECK(phi["topics"].contains("t1"));
    CHECK(!phi["topics"].contains("t2"));
    CHECK(r.err.find("\"item\":\"t2 (length 30)\"") != std::string::npos);
}

TEST_CASE("evaluate: a perfect linear relation gives R2 one with no spread") {
    Workspace ws("perfect");
    prepare(ws, 1);
    std::vector<TopicObservation> rows;
    for (int i = 0; i < 12; ++i) {
        const double x = 0.1 * i;
        rows.push_back({"t" + std::to_string(i), x, 0.25 + 0.5 * x, "vne", 10});
        rows.push_back({"t" + std::to_string(i), std::sin(3.0 * i), 0.25 + 0.5 * x, "baseline", 10});
    }
    write_observations_csv(ws.path("obs.csv"), rows);
    const auto r = ws.run({"evaluate", "--observations", ws.path("obs.csv").string()});
    REQUIRE(r.code == kExitOk);

    const auto eval = nlohmann::json::parse(ws.read("out/reports/eval.json"));
    CHECK(eval["observations"] == "obs.csv");
    REQUIRE(eval["results"].size() == 2);
    CHECK(eval["results"][0]["measure_name"] == "vne");
    CHECK(eval["results"][0]["r2"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(eval["results"][0]["boot_mean"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(eval["results"][0]["boot_sd"].get<double>() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(eval["deltas"][0]["a"] == "vne");

    const std::string csv = ws.read("out/reports/eval_bars.csv");
    CHECK(csv.rfind("measure,r2,boot_mean,boot_sd,n_topics\nvne,", 0) == 0);

    // The vne whisker collapses to a point.
    const std::string svg = ws.read("out/reports/eval_bars.svg");
    const std::regex whisker(R"re(<g class="whisker"[^>]*><line x1="[^"]+" y1="([^"]+)" x2="[^"]+" y2="([^"]+)"/>)re");
    std::smatch m;
    REQUIRE(std::regex_search(svg, m, whisker));
    CHECK(m[1].str() == m[2].str());

    // Filtering by measure and byte-identical reruns.
    const std::string before = ws.read("out/reports/eval.json");
    REQUIRE(ws.run({"evaluate", "--observations", ws.path("obs.csv").string()}).code == kExitOk);
    CHECK(ws.read("out/reports/eval.json") == before);
    CHECK(ws.read("out/reports/eval_bars.svg") == svg);
    REQUIRE(ws.run({"evaluate", "--observations", ws.path("obs.csv").string(), "--measures", "baseline"}).code ==
            kExitOk);
    CHECK(nlohmann::json::parse(ws.read("out/reports/eval.json"))["results"].size() == 1);
}

TEST_CASE("evaluate refuses observations without factuality") {
    Workspace ws("noy");
    prepare(ws, 1);
    std::vector<TopicObservation> rows;
    for (int i = 0; i < 5; ++i) rows.push_back({"t" + std::to_string(i), 0.1 * i, std::nan(""), "vne", 3});
    write_observations_csv(ws.path("obs.csv"), rows);
    const auto r = ws.run({"evaluate", "--observations", ws.path("obs.csv").string()});
    CHECK(r.code == kExitFailures);
    CHECK(r.err.find("segment-score") != std::string::npos);
}

TEST_CASE("full stub pipeline, sweep with a missing length, report") {
    Workspace ws("e2e");
    ws.write_topics(6);
    ws.write_passages(kPassages);
    for (int t = 1; t <= 6; ++t) {
        std::vector<std::pair<std::string, int>> segs;
        for (int s = 0; s < 6; ++s) segs.push_back({"Claim " + std::to_string(s) + ".", s < t ? 1 : 0});
        ws.write_transcript("t" + std::to_string(t), segs);
    }
    ws.config()["generator"]["n_samples"] = 4;
    ws.config()["lengths"] = {15, 20};
    for (const std::string cmd : {"generate", "embed", "score", "segment-score", "evaluate"}) {
        const auto r = ws.run({cmd});
        INFO(cmd << ": " << r.err);
        REQUIRE(r.code == kExitOk);
    }
    const auto sweep = ws.run({"sweep", "--n-values", "2..4", "--lengths", "15,20,30,45"});
    REQUIRE(sweep.code == kExitOk);
    const std::string lengths = ws.read("out/reports/sweep_lengths.csv");
    CHECK(lengths.find("length,45,vne,missing,,,,,no observations for this length") != std::string::npos);
    CHECK(lengths.find("length,15,vne,ok,") != std::string::npos);
    const std::string samples = ws.read("out/reports/sweep_samples.csv");
    CHECK(samples.find("n_samples,4,log_det,ok,") != std::string::npos);
    const std::string svg = ws.read("out/reports/sweep_lengths.svg");
    std::size_t markers = 0;
    for (auto p = svg.find("class=\"missing\""); p != std::string::npos; p = svg.find("class=\"missing\"", p + 1)) ++markers;
    CHECK(markers == 4);

    // Asking for more samples than exist marks the cell missing.
    REQUIRE(ws.run({"sweep", "--n-values", "4,5"}).code == kExitOk);
    CHECK(ws.read("out/reports/sweep_samples.csv").find("n_samples,5,vne,missing") != std::string::npos);

    REQUIRE(ws.run({"report"}).code == kExitOk);
    const std::string md = ws.read("out/reports/report.md");
    CHECK(md.find("| vne |") != std::string::npos);
    CHECK(md.find("Performance by response length") != std::string::npos);
}

TEST_CASE("svg writers") {
    CHECK(xml_escape("a<b & \"c\">") == "a&lt;b &amp; &quot;c&quot;&gt;");
    const std::vector<Bar> bars = {{"vne", 0.4, 0.05}, {"a<b", 0.2, 0.0}};
    const std::string svg = bar_chart_svg("T & U", "R2", bars);
    CHECK(svg == bar_chart_svg("T & U", "R2", bars));
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("T &amp; U") != std::string::npos);
    CHECK(svg.find("a&lt;b") != std::string::npos);
    std::size_t rects = 0;
    for (auto p = svg.find("class=\"bar\""); p != std::string::npos; p = svg.find("class=\"bar\"", p + 1)) ++rects;
    CHECK(rects == 2);

    Series s{"vne", {{2, 0.1, 0.01}, {3, std::nullopt, 0}, {4, 0.3, 0.02}, {5, 0.35, 0.02}}};
    const std::string line = line_chart_svg("sweep", "n", "R2", {s});
    std::size_t polylines = 0;
    for (auto p = line.find("<polyline"); p != std::string::npos; p = line.find("<polyline", p + 1)) ++polylines;
    CHECK(polylines == 2);  // the gap splits the line
    CHECK(line.find("class=\"missing\"") != std::string::npos);
    CHECK(line_chart_svg("empty", "x", "y", {}).find("</svg>") != std::string::npos);
}
