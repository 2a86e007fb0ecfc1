#include "isotropy/cli.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include <CLI11.hpp>

#include "isotropy/eval.h"
#include "isotropy/fsutil.h"
#include "isotropy/rng.h"
#include "isotropy/segment_score.h"
#include "isotropy/svg.h"
#include "isotropy/workers.h"

namespace isotropy {

namespace fs = std::filesystem;

const ProviderSpec& RunConfig::provider(const std::string& name) const {
    if (providers.empty()) throw ConfigError("no embedding providers configured");
    if (name.empty()) return providers.front();
    for (const auto& p : providers)
        if (p.name == name) return p;
    throw ConfigError("unknown provider '" + name + "'");
}

namespace {

// Keys that would put a credential into the config file.
void reject_inline_secrets(const nlohmann::json& j, const std::string& where) {
    static const std::set<std::string> kSecretKeys = {"api_key", "apikey", "key", "token", "secret", "password"};
    for (const auto& [k, v] : j.items())
        if (kSecretKeys.contains(k))
            throw ConfigError(where + ": '" + k + "' looks like an inline secret; name an environment variable in 'auth'");
}

fs::path resolve(const nlohmann::json& paths, const char* key, const fs::path& base) {
    if (!paths.contains(key) || !paths[key].is_string() || paths[key].get<std::string>().empty())
        throw ConfigError(std::string("paths.") + key + " is required");
    fs::path p = paths[key].get<std::string>();
    return p.is_absolute() ? p : base / p;
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
    static const std::set<std::string> kKnown = {"providers", "generator", "generator_endpoint", "oracle_model",
                                                 "oracle_endpoint", "oracle", "measures", "eval", "paths",
                                                 "topic_source", "lengths", "workers"};
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (!kKnown.contains(k)) throw ConfigError("unknown config key '" + k + "'");

    RunConfig c;
    try {
        for (const auto& p : j.value("providers", nlohmann::json::array())) {
            reject_inline_secrets(p, "provider");
            c.providers.push_back(provider_from_json(p));
        }
        if (j.contains("generator")) c.generator = generation_config_from_json(j["generator"]);
        if (j.contains("generator_endpoint")) {
            reject_inline_secrets(j["generator_endpoint"], "generator_endpoint");
            c.generator_endpoint = chat_endpoint_from_json(j["generator_endpoint"]);
        }
        c.oracle_model = j.value("oracle_model", std::string("oracle"));
        if (j.contains("oracle_endpoint")) {
            reject_inline_secrets(j["oracle_endpoint"], "oracle_endpoint");
            c.oracle_endpoint = chat_endpoint_from_json(j["oracle_endpoint"]);
        }
        if (j.contains("oracle")) {
            c.oracle_top_logprobs = j["oracle"].value("top_logprobs", c.oracle_top_logprobs);
            c.fidelity_warning = j["oracle"].value("fidelity_warning", c.fidelity_warning);
        }
        if (!j.contains("measures") || !j["measures"].is_array() || j["measures"].empty())
            throw ConfigError("at least one measure must be named in 'measures'");
        for (const auto& m : j["measures"]) c.measures.push_back(parse_measure(m.get<std::string>()));
        if (j.contains("eval")) {
            c.n_boot = j["eval"].value("n_boot", c.n_boot);
            c.seed = j["eval"].value("seed", c.seed);
        }
        if (!j.contains("paths")) throw ConfigError("'paths' is required");
        const auto& p = j["paths"];
        c.paths.topics = resolve(p, "topics", base_dir);
        c.paths.responses = resolve(p, "responses", base_dir);
        c.paths.embeddings_cache = resolve(p, "embeddings_cache", base_dir);
        c.paths.scores = resolve(p, "scores", base_dir);
        c.paths.reports = resolve(p, "reports", base_dir);
        if (j.contains("topic_source")) c.topic_source = parse_source(j["topic_source"].get<std::string>());
        c.lengths = j.value("lengths", c.lengths);
        c.workers = j.value("workers", c.workers);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const UnknownMeasure& e) {
        throw ConfigError(e.what());
    } catch (const InvalidTopic& e) {
        throw ConfigError(e.what());
    }
    if (c.n_boot < 1) throw ConfigError("eval.n_boot must be >= 1");
    if (c.workers < 1) throw ConfigError("workers must be >= 1");
    std::set<std::string> names;
    for (const auto& p : c.providers)
        if (!names.insert(p.name).second) throw ConfigError("duplicate provider name '" + p.name + "'");
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j, fs::absolute(path).parent_path());
}

fs::path observations_path(const RunPaths& p, std::size_t length) {
    return p.scores / ("observations_len" + std::to_string(length) + ".csv");
}
fs::path phi_path(const RunPaths& p, std::size_t length) {
    return p.scores / ("phi_len" + std::to_string(length) + ".json");
}
fs::path scored_path(const RunPaths& p, std::size_t length) {
    return p.scores / ("scored_len" + std::to_string(length) + ".jsonl");
}

namespace {

class UsageError : public Error {
public:
    using Error::Error;
};

struct Options {
    std::string config;
    std::string provider;
    std::string measures;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n_boot;
    std::optional<std::size_t> workers;
    std::string stub_oracle;
    std::string stub_generator;
    std::string observations;
    std::string n_values;
    std::string lengths;
};

struct Failure {
    std::string item;
    std::string error;
};

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) {
        const auto b = cur.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        out.push_back(cur.substr(b, cur.find_last_not_of(" \t") - b + 1));
    }
    return out;
}

// "2,4,8" or "2..10" or a mix.
std::vector<std::size_t> parse_sizes(const std::string& s, const char* flag) {
    std::vector<std::size_t> out;
    try {
        for (const auto& part : split(s, ',')) {
            const auto dots = part.find("..");
            if (dots == std::string::npos) {
                out.push_back(std::stoull(part));
                continue;
            }
            const std::size_t lo = std::stoull(part.substr(0, dots)), hi = std::stoull(part.substr(dots + 2));
            if (hi < lo) throw UsageError("");
            for (std::size_t v = lo; v <= hi; ++v) out.push_back(v);
        }
    } catch (const std::exception&) {
        throw UsageError(std::string("invalid value for ") + flag + ": '" + s + "'");
    }
    if (out.empty()) throw UsageError(std::string(flag) + " needs at least one value");
    return out;
}

struct Context {
    std::string command;
    Options opt;
    RunConfig cfg;
    std::ostream& out;
    std::ostream& err;
    std::vector<Failure> failures;
    std::mutex mutex;

    Context(std::string command, Options opt, std::ostream& out, std::ostream& err)
        : command(std::move(command)), opt(std::move(opt)), out(out), err(err) {}

    void fail(std::string item, std::string error) {
        std::lock_guard lock(mutex);
        failures.push_back({std::move(item), std::move(error)});
    }
    void warn(const std::string& msg) {
        std::lock_guard lock(mutex);
        err << "warning: " << msg << "\n";
    }

    std::size_t workers() const { return opt.workers.value_or(cfg.workers); }
    std::size_t base_length() const { return cfg.generator.word_target; }

    BootstrapConfig bootstrap() const {
        BootstrapConfig b;
        b.n_boot = opt.n_boot.value_or(cfg.n_boot);
        b.seed = opt.seed.value_or(cfg.seed);
        return b;
    }

    std::vector<Measure> measures() const {
        if (opt.measures.empty()) return cfg.measures;
        std::vector<Measure> out;
        for (const auto& m : split(opt.measures, ',')) out.push_back(parse_measure(m));
        if (out.empty()) throw UsageError("--measures is empty");
        return out;
    }

    std::vector<std::size_t> lengths() const {
        return opt.lengths.empty() ? cfg.lengths : parse_sizes(opt.lengths, "--lengths");
    }
};

using Grouped = std::map<std::size_t, std::map<std::string, std::vector<ResponseRecord>>>;

// length_variant -> topic -> records in sample order.
Grouped group_records(std::vector<ResponseRecord> records) {
    Grouped g;
    for (auto& r : records) g[r.length_variant][r.topic_id].push_back(std::move(r));
    for (auto& [len, topics] : g)
        for (auto& [id, rs] : topics)
            std::sort(rs.begin(), rs.end(), [](const auto& a, const auto& b) { return a.sample_index < b.sample_index; });
    return g;
}

std::vector<ResponseRecord> require_responses(Context& ctx) {
    auto records = read_responses(ctx.cfg.paths.responses);
    if (records.empty()) throw Error("no responses in " + ctx.cfg.paths.responses.string() + "; run generate first");
    return records;
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

// ---------------------------------------------------------------- generate

std::shared_ptr<ChatClient> make_generator(Context& ctx) {
    if (!ctx.opt.stub_generator.empty()) return StubGenerator::from_file(ctx.opt.stub_generator);
    if (ctx.cfg.generator_endpoint) return std::make_shared<HttpChatClient>(*ctx.cfg.generator_endpoint);
    throw ConfigError("no generator: set generator_endpoint in the config or pass --stub-generator");
}

void sort_records(std::vector<ResponseRecord>& records, const std::vector<Topic>& topics) {
    std::map<std::string, std::size_t> order;
    for (std::size_t i = 0; i < topics.size(); ++i) order.emplace(topics[i].id, i);
    auto rank = [&](const ResponseRecord& r) {
        auto it = order.find(r.topic_id);
        return std::make_tuple(it == order.end() ? topics.size() : it->second, r.topic_id, r.length_variant,
                               r.sample_index);
    };
    std::stable_sort(records.begin(), records.end(), [&](const auto& a, const auto& b) { return rank(a) < rank(b); });
}

int cmd_generate(Context& ctx) {
    const auto ingest = ingest_topics(ctx.cfg.paths.topics, ctx.cfg.topic_source);
    if (ingest.skipped) ctx.out << "generate: skipped " << ingest.skipped << " topics failing the entity filters\n";
    auto generator = make_generator(ctx);
    const GenerationConfig& gc = ctx.cfg.generator;
    const std::size_t base = gc.word_target;
    std::vector<std::size_t> targets;
    for (std::size_t t : ctx.lengths())
        if (t != base) targets.push_back(t);

    std::vector<ResponseRecord> records = read_responses(ctx.cfg.paths.responses);
    std::set<std::tuple<std::string, std::size_t, std::size_t>> have;
    for (const auto& r : records) have.emplace(r.topic_id, r.sample_index, r.length_variant);
    const std::size_t existing = records.size();
    std::size_t generated = 0, derived = 0;
    std::mutex records_mutex;

    auto checkpoint = [&] {
        auto snapshot = records;
        sort_records(snapshot, ingest.topics);
        write_responses(ctx.cfg.paths.responses, snapshot);
    };

    for_each_index(ingest.topics.size(), ctx.workers(), [&](std::size_t i) {
        const Topic& topic = ingest.topics[i];
        GenerationOptions go;
        {
            std::lock_guard lock(records_mutex);
            for (std::size_t s = 0; s < gc.n_samples; ++s)
                if (!have.contains({topic.id, s, base})) go.sample_indices.push_back(s);
        }
        if (!go.sample_indices.empty()) {
            const auto res = generate_responses(topic, gc, *generator, go);
            std::lock_guard lock(records_mutex);
            for (const auto& r : res.records) {
                have.emplace(r.topic_id, r.sample_index, r.length_variant);
                records.push_back(r);
            }
            generated += res.records.size();
            for (const auto& e : res.errors) ctx.fail(topic.id, e);
            checkpoint();
        }
        if (targets.empty()) return;

        std::lock_guard lock(records_mutex);
        std::vector<ResponseRecord> source;
        for (const auto& r : records)
            if (r.topic_id == topic.id && r.length_variant == base) source.push_back(r);
        if (source.size() < gc.n_samples) return;  // incomplete topics are already reported
        std::sort(source.begin(), source.end(), [](const auto& a, const auto& b) { return a.sample_index < b.sample_index; });
        bool added = false;
        for (auto& v : derive_length_variants(source, targets)) {
            if (have.contains({v.topic_id, v.sample_index, v.length_variant})) continue;
            if (v.hard_cut)
                ctx.warn("topic '" + v.topic_id + "' sample " + std::to_string(v.sample_index) +
                         ": no sentence boundary within " + std::to_string(v.length_variant) + " words; hard cut");
            have.emplace(v.topic_id, v.sample_index, v.length_variant);
            records.push_back(std::move(v));
            ++derived;
            added = true;
        }
        if (added) checkpoint();
    });
    checkpoint();
    ctx.out << "generate: " << generated << " generated, " << derived << " derived, " << existing
            << " already present, " << ctx.failures.size() << " failed -> " << ctx.cfg.paths.responses.string() << "\n";
    return ctx.failures.empty() ? kExitOk : kExitFailures;
}

// ------------------------------------------------------------------- embed

int cmd_embed(Context& ctx) {
    const ProviderSpec& spec = ctx.cfg.provider(ctx.opt.provider);
    const auto records = require_responses(ctx);
    std::vector<std::string> texts;
    std::set<std::string> seen;
    for (const auto& r : records)
        if (seen.insert(r.text).second) texts.push_back(r.text);

    auto cache = std::make_shared<EmbeddingCache>(ctx.cfg.paths.embeddings_cache);
    EmbeddingClient client(spec, cache);
    const std::size_t chunk = spec.max_batch;
    const std::size_t chunks = (texts.size() + chunk - 1) / chunk;
    std::size_t failed_texts = 0;
    for_each_index(chunks, ctx.workers(), [&](std::size_t c) {
        const std::size_t lo = c * chunk, hi = std::min(texts.size(), lo + chunk);
        try {
            client.embed_text({texts.begin() + static_cast<std::ptrdiff_t>(lo), texts.begin() + static_cast<std::ptrdiff_t>(hi)});
        } catch (const Error& e) {
            ctx.fail("texts " + std::to_string(lo) + ".." + std::to_string(hi - 1), e.what());
            std::lock_guard lock(ctx.mutex);
            failed_texts += hi - lo;
        }
    });
    const auto s = client.stats();
    ctx.out << "embed: provider " << spec.name << ": " << texts.size() << " texts, " << s.embedded << " embedded, "
            << s.cache_hits << " cache hits, " << s.requests << " requests, " << s.retries << " retries, "
            << failed_texts << " failures\n";
    return ctx.failures.empty() ? kExitOk : kExitFailures;
}

// Cached embeddings for one topic's records, in order; nullopt if any is missing.
std::optional<EmbeddingSet> cached_set(const EmbeddingCache& cache, const ProviderSpec& spec,
                                       const std::vector<ResponseRecord>& records) {
    std::vector<Embedding> rows;
    for (const auto& r : records) {
        auto e = cache.get(make_cache_key(spec, r.text));
        if (!e) return std::nullopt;
        rows.push_back(std::move(*e));
    }
    return EmbeddingSet(std::move(rows));
}

std::map<std::string, double> read_phis(const fs::path& path) {
    std::map<std::string, double> out;
    if (!fs::exists(path)) return out;
    const auto j = nlohmann::json::parse(read_file(path));
    for (const auto& [id, v] : j.at("topics").items()) out[id] = v.at("mean_phi").get<double>();
    return out;
}

void attach_phis(const fs::path& obs_path, const std::map<std::string, double>& phis) {
    if (!fs::exists(obs_path)) return;
    auto rows = read_observations_csv(obs_path);
    for (auto& r : rows) {
        auto it = phis.find(r.topic_id);
        r.y = it == phis.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
    }
    write_observations_csv(obs_path, rows);
}

// ------------------------------------------------------------------- score

int cmd_score(Context& ctx) {
    const ProviderSpec& spec = ctx.cfg.provider(ctx.opt.provider);
    const auto measures = ctx.measures();
    const auto grouped = group_records(require_responses(ctx));
    const EmbeddingCache cache(ctx.cfg.paths.embeddings_cache);

    for (const auto& [length, topics] : grouped) {
        std::vector<std::string> ids;
        std::vector<EmbeddingSet> sets;
        std::size_t too_few = 0;
        for (const auto& [id, records] : topics) {
            if (records.size() < 2) {
                ++too_few;
                continue;
            }
            auto set = cached_set(cache, spec, records);
            if (!set) {
                ctx.fail(id + " (length " + std::to_string(length) + ")",
                         "responses without cached embeddings for provider '" + spec.name + "'; run embed");
                continue;
            }
            ids.push_back(id);
            sets.push_back(std::move(*set));
        }
        const auto scores = score_topics(sets, measures);
        const auto phis = read_phis(phi_path(ctx.cfg.paths, length));
        std::vector<TopicObservation> rows;
        for (std::size_t t = 0; t < ids.size(); ++t) {
            if (!scores[t].report) {
                ctx.fail(ids[t], scores[t].error);
                continue;
            }
            const auto it = phis.find(ids[t]);
            const double y = it == phis.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
            for (Measure m : measures)
                rows.push_back({ids[t], scores[t].report->value(m), y, std::string(measure_name(m)), sets[t].size()});
        }
        const auto path = observations_path(ctx.cfg.paths, length);
        write_observations_csv(path, rows);
        ctx.out << "score: length " << length << ": " << ids.size() << " topics scored, " << too_few
                << " skipped with fewer than 2 samples -> " << path.string() << "\n";
    }
    return ctx.failures.empty() ? kExitOk : kExitFailures;
}

// ----------------------------------------------------------- segment-score

std::shared_ptr<ChatClient> make_oracle(Context& ctx) {
    if (!ctx.opt.stub_oracle.empty()) return std::make_shared<StubOracle>(ctx.opt.stub_oracle);
    if (ctx.cfg.oracle_endpoint) return std::make_shared<HttpChatClient>(*ctx.cfg.oracle_endpoint);
    throw ConfigError("no oracle: set oracle_endpoint in the config or pass --stub-oracle");
}

std::vector<ScoredResponse> read_scored(const fs::path& path) {
    std::vector<ScoredResponse> out;
    if (!fs::exists(path)) return out;
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(scored_response_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(n, e.what());
        }
    }
    return out;
}

int cmd_segment_score(Context& ctx) {
    const auto ingest = ingest_topics(ctx.cfg.paths.topics, ctx.cfg.topic_source);
    std::map<std::string, Topic> topics;
    for (const auto& t : ingest.topics) topics.emplace(t.id, t);
    const auto grouped = group_records(require_responses(ctx));
    auto oracle = make_oracle(ctx);

    OracleConfig oc;
    oc.model = ctx.cfg.oracle_model;
    oc.top_logprobs = ctx.cfg.oracle_top_logprobs;
    oc.fidelity_warning = ctx.cfg.fidelity_warning;

    for (const auto& [length, by_topic] : grouped) {
        // (topic, sample) -> score, reused when the response text is unchanged.
        std::map<std::pair<std::string, std::size_t>, ScoredResponse> done;
        for (auto& s : read_scored(scored_path(ctx.cfg.paths, length))) {
            auto key = std::make_pair(s.topic_id, s.sample_index);
            done.emplace(std::move(key), std::move(s));
        }

        std::vector<std::pair<std::string, const std::vector<ResponseRecord>*>> work;
        for (const auto& [id, records] : by_topic) work.emplace_back(id, &records);
        std::map<std::string, double> phis;
        std::size_t reused = 0, scored = 0;

        for_each_index(work.size(), ctx.workers(), [&](std::size_t w) {
            const auto& [id, records] = work[w];
            const std::string item = id + " (length " + std::to_string(length) + ")";
            auto topic_it = topics.find(id);
            if (topic_it == topics.end()) {
                ctx.fail(item, "topic not found in " + ctx.cfg.paths.topics.string());
                return;
            }
            std::vector<ScoredResponse> results;
            std::vector<std::string> errors;
            for (const auto& r : *records) {
                {
                    std::lock_guard lock(ctx.mutex);
                    auto it = done.find({id, r.sample_index});
                    if (it != done.end() && it->second.response_text == r.text) {
                        results.push_back(it->second);
                        ++reused;
                        continue;
                    }
                }
                try {
                    ScoredResponse s = score_response(topic_it->second, r.text, *oracle, oc);
                    s.sample_index = r.sample_index;
                    s.length_variant = length;
                    results.push_back(std::move(s));
                    std::lock_guard lock(ctx.mutex);
                    ++scored;
                } catch (const Error& e) {
                    errors.push_back("sample " + std::to_string(r.sample_index) + ": " + e.what());
                    ctx.warn("topic '" + id + "' sample " + std::to_string(r.sample_index) + ": " + e.what());
                }
            }
            std::lock_guard lock(ctx.mutex);
            for (auto& s : results) done[{id, s.sample_index}] = s;
            if (results.size() * 2 < records->size()) {
                ctx.failures.push_back({item, std::to_string(errors.size()) + " of " + std::to_string(records->size()) +
                                                  " responses failed; first: " + errors.front()});
                return;
            }
            double sum = 0;
            for (const auto& s : results) sum += s.phi;
            phis[id] = sum / static_cast<double>(results.size());
        });

        std::string jsonl;
        for (const auto& [key, s] : done) jsonl += to_json(s).dump() + "\n";
        write_file_atomic(scored_path(ctx.cfg.paths, length), jsonl);

        nlohmann::json pj = {{"length_variant", length}, {"oracle_model", oc.model}, {"topics", nlohmann::json::object()}};
        for (const auto& [id, phi] : phis) pj["topics"][id] = {{"mean_phi", phi}};
        write_file_atomic(phi_path(ctx.cfg.paths, length), pj.dump(2) + "\n");
        attach_phis(observations_path(ctx.cfg.paths, length), phis);

        double mean = 0;
        for (const auto& [id, phi] : phis) mean += phi;
        ctx.out << "segment-score: length " << length << ": " << phis.size() << " topics, " << scored << " scored, "
                << reused << " reused";
        if (!phis.empty()) ctx.out << ", mean factuality " << fmt(mean / static_cast<double>(phis.size()));
        ctx.out << "\n";
    }
    return ctx.failures.empty() ? kExitOk : kExitFailures;
}

// ---------------------------------------------------------------- evaluate

nlohmann::json delta_json(const MeasureDelta& d) {
    return {{"a", d.a}, {"b", d.b}, {"delta", d.delta}, {"combined_sd", d.combined_sd}};
}

int cmd_evaluate(Context& ctx) {
    const fs::path path =
        ctx.opt.observations.empty() ? observations_path(ctx.cfg.paths, ctx.base_length()) : fs::path(ctx.opt.observations);
    if (!fs::exists(path)) throw Error("observations not found: " + path.string() + "; run score first");
    const auto rows = read_observations_csv(path);

    std::vector<std::string> wanted;
    if (!ctx.opt.measures.empty()) {
        wanted = split(ctx.opt.measures, ',');
    } else {
        for (const auto& r : rows)
            if (std::find(wanted.begin(), wanted.end(), r.measure_name) == wanted.end()) wanted.push_back(r.measure_name);
    }
    std::map<std::string, std::vector<TopicObservation>> by_measure;
    for (const auto& r : rows)
        if (std::find(wanted.begin(), wanted.end(), r.measure_name) != wanted.end()) by_measure[r.measure_name].push_back(r);
    for (const auto& m : wanted) {
        if (!by_measure.contains(m)) throw Error("measure '" + m + "' has no observations in " + path.string());
        for (const auto& o : by_measure[m])
            if (std::isnan(o.y)) throw Error("observations lack factuality for topic '" + o.topic_id + "'; run segment-score");
    }

    const BootstrapConfig bc = ctx.bootstrap();
    const auto cmp = compare_measures(by_measure, bc);

    nlohmann::json report = {{"observations", path.filename().string()},
                             {"n_boot", bc.n_boot},
                             {"seed", bc.seed},
                             {"rng_family", std::string(CounterRng::kFamily)},
                             {"results", nlohmann::json::array()},
                             {"deltas", nlohmann::json::array()}};
    std::string csv = "measure,r2,boot_mean,boot_sd,n_topics\n";
    std::vector<Bar> bars;
    for (const auto& r : cmp.ranked) {
        report["results"].push_back(to_json(r));
        std::ostringstream line;
        line << std::setprecision(17) << r.measure_name << ',' << r.r2 << ',' << r.boot_mean << ',' << r.boot_sd << ','
             << r.n_topics << '\n';
        csv += line.str();
        bars.push_back({r.measure_name, r.boot_mean, r.boot_sd});
    }
    for (const auto& d : cmp.deltas) report["deltas"].push_back(delta_json(d));

    const fs::path dir = ctx.cfg.paths.reports;
    write_file_atomic(dir / "eval.json", report.dump(2) + "\n");
    write_file_atomic(dir / "eval_bars.csv", csv);
    write_file_atomic(dir / "eval_bars.svg",
                      bar_chart_svg("Explained variance of factuality (" + std::to_string(bc.n_boot) + " bootstraps)",
                                    "R\xC2\xB2 (bootstrap mean, 1 SD)", bars));

    ctx.out << "evaluate: " << cmp.ranked.size() << " measures over " << (cmp.ranked.empty() ? 0 : cmp.ranked[0].n_topics)
            << " topics\n";
    for (const auto& r : cmp.ranked)
        ctx.out << "  " << std::left << std::setw(16) << r.measure_name << " R2 " << fmt(r.r2) << "  bootstrap "
                << fmt(r.boot_mean) << " +- " << fmt(r.boot_sd) << "\n";
    ctx.out << "  -> " << (dir / "eval.json").string() << "\n";
    return kExitOk;
}

// ------------------------------------------------------------------- sweep

struct Cell {
    std::string axis;
    std::size_t value = 0;
    std::string measure;
    std::optional<EvalResult> result;
    std::string note;
};

void write_sweep(Context& ctx, const std::string& stem, const std::string& title, const std::string& x_label,
                 const std::vector<Cell>& cells) {
    std::string csv = "axis,value,measure,status,r2,boot_mean,boot_sd,n_topics,note\n";
    std::map<std::string, Series> series;
    std::vector<std::string> order;
    for (const auto& c : cells) {
        std::ostringstream line;
        line << std::setprecision(17) << c.axis << ',' << c.value << ',' << c.measure << ',';
        if (c.result)
            line << "ok," << c.result->r2 << ',' << c.result->boot_mean << ',' << c.result->boot_sd << ','
                 << c.result->n_topics << ',';
        else
            line << "missing,,,,,";
        std::string note = c.note;
        std::replace(note.begin(), note.end(), ',', ';');
        std::replace(note.begin(), note.end(), '\n', ' ');
        line << note << '\n';
        csv += line.str();
        if (!series.contains(c.measure)) {
            order.push_back(c.measure);
            series[c.measure].name = c.measure;
        }
        SeriesPoint p;
        p.x = static_cast<double>(c.value);
        if (c.result) {
            p.y = c.result->boot_mean;
            p.sd = c.result->boot_sd;
        }
        series[c.measure].points.push_back(p);
    }
    std::vector<Series> ordered;
    for (const auto& m : order) ordered.push_back(series[m]);
    const fs::path dir = ctx.cfg.paths.reports;
    write_file_atomic(dir / (stem + ".csv"), csv);
    write_file_atomic(dir / (stem + ".svg"), line_chart_svg(title, x_label, "R\xC2\xB2 (bootstrap mean, 1 SD)", ordered));
    std::size_t missing = 0;
    for (const auto& c : cells) missing += c.result ? 0 : 1;
    ctx.out << "sweep: " << cells.size() << " cells, " << missing << " missing -> " << (dir / (stem + ".csv")).string()
            << "\n";
}

std::vector<Cell> sweep_samples(Context& ctx, const std::vector<std::size_t>& n_values) {
    const ProviderSpec& spec = ctx.cfg.provider(ctx.opt.provider);
    const auto measures = ctx.measures();
    const std::size_t length = ctx.base_length();
    const auto grouped = group_records(require_responses(ctx));
    const auto phis = read_phis(phi_path(ctx.cfg.paths, length));
    const EmbeddingCache cache(ctx.cfg.paths.embeddings_cache);

    std::map<std::string, EmbeddingSet> sets;
    std::map<std::string, double> used_phis;
    if (auto it = grouped.find(length); it != grouped.end()) {
        for (const auto& [id, records] : it->second) {
            auto phi = phis.find(id);
            if (phi == phis.end()) continue;
            auto set = cached_set(cache, spec, records);
            if (!set) {
                ctx.warn("topic '" + id + "' has no cached embeddings; left out of the sweep");
                continue;
            }
            sets.emplace(id, std::move(*set));
            used_phis.emplace(id, phi->second);
        }
    }

    std::vector<Cell> cells;
    const BootstrapConfig bc = ctx.bootstrap();
    for (Measure m : measures) {
        for (std::size_t n : n_values) {
            Cell c{"n_samples", n, std::string(measure_name(m)), std::nullopt, {}};
            if (sets.empty()) {
                c.note = "no topics with both embeddings and factuality";
            } else {
                try {
                    c.result = sweep_sample_count(sets, used_phis, {n}, m, bc).front();
                } catch (const Error& e) {
                    c.note = e.what();
                }
            }
            cells.push_back(std::move(c));
        }
    }
    return cells;
}

std::vector<Cell> sweep_lengths(Context& ctx, const std::vector<std::size_t>& lengths) {
    const auto measures = ctx.measures();
    const BootstrapConfig bc = ctx.bootstrap();
    std::vector<Cell> cells;
    for (Measure m : measures) {
        for (std::size_t len : lengths) {
            Cell c{"length", len, std::string(measure_name(m)), std::nullopt, {}};
            const auto path = observations_path(ctx.cfg.paths, len);
            if (!fs::exists(path)) {
                c.note = "no observations for this length";
                cells.push_back(std::move(c));
                continue;
            }
            std::vector<TopicObservation> obs;
            bool missing_y = false;
            for (const auto& r : read_observations_csv(path))
                if (r.measure_name == c.measure) {
                    missing_y = missing_y || std::isnan(r.y);
                    obs.push_back(r);
                }
            if (obs.empty()) {
                c.note = "measure not scored at this length";
            } else if (missing_y) {
                c.note = "factuality missing at this length";
            } else {
                try {
                    c.result = bootstrap_r2(obs, bc);
                } catch (const Error& e) {
                    c.note = e.what();
                }
            }
            cells.push_back(std::move(c));
        }
    }
    return cells;
}

int cmd_sweep(Context& ctx) {
    if (ctx.opt.n_values.empty() && ctx.opt.lengths.empty()) throw UsageError("sweep needs --n-values and/or --lengths");
    if (!ctx.opt.n_values.empty())
        write_sweep(ctx, "sweep_samples", "Performance by number of samples", "samples per topic",
                    sweep_samples(ctx, parse_sizes(ctx.opt.n_values, "--n-values")));
    if (!ctx.opt.lengths.empty())
        write_sweep(ctx, "sweep_lengths", "Performance by response length", "word target",
                    sweep_lengths(ctx, parse_sizes(ctx.opt.lengths, "--lengths")));
    return ctx.failures.empty() ? kExitOk : kExitFailures;
}

// ------------------------------------------------------------------ report

std::string sweep_table(const fs::path& csv_path) {
    std::istringstream in(read_file(csv_path));
    std::string line, out = "| axis | value | measure | R2 (bootstrap) | status |\n|---|---|---|---|---|\n";
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::string cur;
        std::istringstream ls(line);
        while (std::getline(ls, cur, ',')) f.push_back(cur);
        f.resize(9);
        const std::string value = f[3] == "ok" ? fmt(std::stod(f[5]), 3) + " +- " + fmt(std::stod(f[6]), 3) : "-";
        out += "| " + f[0] + " | " + f[1] + " | " + f[2] + " | " + value + " | " + f[3] + (f[8].empty() ? "" : ": " + f[8]) +
               " |\n";
    }
    return out;
}

int cmd_report(Context& ctx) {
    const fs::path dir = ctx.cfg.paths.reports;
    if (!fs::exists(dir / "eval.json")) throw Error("no evaluation in " + dir.string() + "; run evaluate first");
    const auto eval = nlohmann::json::parse(read_file(dir / "eval.json"));

    std::string md = "# Isotropy evaluation report\n\n";
    md += "Observations: `" + eval.at("observations").get<std::string>() + "`, " +
          std::to_string(eval.at("n_boot").get<std::size_t>()) + " bootstrap resamples, seed " +
          std::to_string(eval.at("seed").get<std::uint64_t>()) + " (" + eval.at("rng_family").get<std::string>() + ").\n\n";
    md += "## Explained variance of factuality by measure\n\n";
    md += "| measure | R2 | bootstrap mean +- 1 SD | slope | topics | skipped resamples |\n|---|---|---|---|---|---|\n";
    for (const auto& r : eval.at("results")) {
        md += "| " + r.at("measure_name").get<std::string>() + " | " + fmt(r.at("r2").get<double>(), 3) + " | " +
              fmt(r.at("boot_mean").get<double>(), 3) + " +- " + fmt(r.at("boot_sd").get<double>(), 3) + " | " +
              fmt(r.at("slope").get<double>(), 3) + " | " + std::to_string(r.at("n_topics").get<std::size_t>()) + " | " +
              std::to_string(r.at("skipped_resamples").get<std::size_t>()) + " |\n";
    }
    if (!eval.at("deltas").empty()) {
        md += "\n## Pairwise differences of bootstrap means\n\n| a | b | delta | combined SD |\n|---|---|---|---|\n";
        for (const auto& d : eval.at("deltas"))
            md += "| " + d.at("a").get<std::string>() + " | " + d.at("b").get<std::string>() + " | " +
                  fmt(d.at("delta").get<double>(), 3) + " | " + fmt(d.at("combined_sd").get<double>(), 3) + " |\n";
    }
    md += "\n![R2 by measure](eval_bars.svg)\n";
    for (const auto& [stem, title] : {std::pair{"sweep_samples", "Performance by number of samples"},
                                      std::pair{"sweep_lengths", "Performance by response length"}}) {
        const fs::path csv = dir / (std::string(stem) + ".csv");
        if (!fs::exists(csv)) continue;
        md += std::string("\n## ") + title + "\n\n" + sweep_table(csv) + "\n![" + title + "](" + stem + ".svg)\n";
    }
    write_file_atomic(dir / "report.md", md);
    ctx.out << "report: -> " << (dir / "report.md").string() << "\n";
    return kExitOk;
}

void print_failure_summary(std::ostream& err, const std::string& command, const std::vector<Failure>& failures,
                           int code) {
    nlohmann::json j = {{"status", "failed"}, {"command", command}, {"exit_code", code},
                        {"failures", nlohmann::json::array()}};
    for (const auto& f : failures) j["failures"].push_back({{"item", f.item}, {"error", f.error}});
    err << j.dump() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Semantic isotropy toolkit: sample responses, embed them, score their dispersion and "
                 "evaluate it against oracle factuality."};
    app.require_subcommand(1);
    app.fallthrough();
    Options opt;
    app.add_option("--config", opt.config, "Run configuration (JSON)")->required();
    app.add_option("--provider", opt.provider, "Embedding provider name (default: first configured)");
    app.add_option("--measures", opt.measures, "Comma-separated measures (vne,frobenius,log_det,trace_inverse)");
    app.add_option("--seed", opt.seed, "Bootstrap seed (overrides config)");
    app.add_option("--n-boot", opt.n_boot, "Bootstrap resamples (overrides config)")->check(CLI::PositiveNumber);
    app.add_option("--workers", opt.workers, "Concurrent provider calls")->check(CLI::PositiveNumber);
    app.add_option("--stub-oracle", opt.stub_oracle, "Directory of canned oracle transcripts (*.xml)");
    app.add_option("--stub-generator", opt.stub_generator, "File of canned passages separated by '---' lines");

    app.add_subcommand("generate", "Sample responses per topic and derive length variants")
        ->add_option("--lengths", opt.lengths, "Word targets of derived variants, e.g. 125,250,375");
    app.add_subcommand("embed", "Embed every response into the cache");
    app.add_subcommand("score", "Isotropy measures per topic -> observations CSV");
    app.add_subcommand("segment-score", "Oracle factuality per response -> scored JSONL and per-topic mean");
    app.add_subcommand("evaluate", "Bootstrap R2 per measure -> JSON, CSV and SVG")
        ->add_option("--observations", opt.observations, "Observations CSV (default: base length)");
    auto* sweep = app.add_subcommand("sweep", "R2 across sample counts and/or response lengths");
    sweep->add_option("--n-values", opt.n_values, "Sample counts, e.g. 2..10");
    sweep->add_option("--lengths", opt.lengths, "Length variants, e.g. 125,250,500");
    app.add_subcommand("report", "Collate evaluation outputs into report.md");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    Context ctx(command, opt, out, err);
    try {
        ctx.cfg = load_run_config(opt.config);
        int code = kExitUsage;
        if (command == "generate") code = cmd_generate(ctx);
        else if (command == "embed") code = cmd_embed(ctx);
        else if (command == "score") code = cmd_score(ctx);
        else if (command == "segment-score") code = cmd_segment_score(ctx);
        else if (command == "evaluate") code = cmd_evaluate(ctx);
        else if (command == "sweep") code = cmd_sweep(ctx);
        else if (command == "report") code = cmd_report(ctx);
        if (code != kExitOk) print_failure_summary(err, command, ctx.failures, code);
        return code;
    } catch (const ConfigError& e) {
        ctx.failures.push_back({"config", e.what()});
        print_failure_summary(err, command, ctx.failures, kExitUsage);
        return kExitUsage;
    } catch (const UsageError& e) {
        ctx.failures.push_back({"usage", e.what()});
        print_failure_summary(err, command, ctx.failures, kExitUsage);
        return kExitUsage;
    } catch (const std::exception& e) {
        ctx.failures.push_back({command, e.what()});
        print_failure_summary(err, command, ctx.failures, kExitFailures);
        return kExitFailures;
    }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv;
    argv.push_back("isotropy");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace isotropy
