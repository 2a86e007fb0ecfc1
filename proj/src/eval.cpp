#include "isotropy/eval.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "isotropy/fsutil.h"
#include "isotropy/rng.h"

namespace isotropy {

InsufficientSamples::InsufficientSamples(std::string topic_id, std::size_t n)
    : Error("topic '" + topic_id + "' has fewer than " + std::to_string(n) + " samples"),
      topic_id(std::move(topic_id)),
      n(n) {}

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
    std::string s;
    for (const auto& id : ids) s += (s.empty() ? "" : ", ") + id;
    return s;
}

// Regression over x[idx[k]], y[idx[k]]. Returns false when var(x) or var(y)
// is zero, leaving fit untouched.
template <typename Index>
bool fit_indexed(std::span<const double> x, std::span<const double> y, const Index& idx, std::size_t m,
                 OlsFit& fit) {
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        mx += x[idx(k)];
        my += y[idx(k)];
    }
    mx /= static_cast<double>(m);
    my /= static_cast<double>(m);

    bool x_varies = false, y_varies = false;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    const double x0 = x[idx(0)], y0 = y[idx(0)];
    for (std::size_t k = 0; k < m; ++k) {
        const double xi = x[idx(k)], yi = y[idx(k)];
        x_varies |= xi != x0;
        y_varies |= yi != y0;
        const double dx = xi - mx, dy = yi - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (!x_varies || !y_varies || sxx <= 0.0 || syy <= 0.0) return false;

    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        const double r = y[idx(k)] - (fit.intercept + fit.slope * x[idx(k)]);
        ss_res += r * r;
    }
    fit.r2 = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
    fit.degenerate_response = false;
    return true;
}

struct Columns {
    std::vector<double> x;
    std::vector<double> y;
};

Columns columns_of(std::span<const TopicObservation> obs) {
    Columns c;
    c.x.reserve(obs.size());
    c.y.reserve(obs.size());
    for (const auto& o : obs) {
        if (!std::isfinite(o.x) || !std::isfinite(o.y))
            throw InsufficientObservations("observation for topic '" + o.topic_id + "' is not finite");
        c.x.push_back(o.x);
        c.y.push_back(o.y);
    }
    return c;
}

// r2 of one bootstrap iteration, or NaN if every attempt was degenerate.
double resample_r2(const Columns& cols, const BootstrapConfig& config, std::size_t iteration,
                   std::vector<std::size_t>& scratch, std::size_t& redraws) {
    const std::size_t m = cols.x.size();
    CounterRng rng(config.seed, iteration);
    scratch.resize(m);
    for (int attempt = 0; attempt < config.max_redraws; ++attempt) {
        if (attempt > 0) ++redraws;
        for (auto& s : scratch) s = static_cast<std::size_t>(rng.below(m));
        OlsFit fit;
        if (fit_indexed(cols.x, cols.y, [&](std::size_t k) { return scratch[k]; }, m, fit)) return fit.r2;
    }
    return std::numeric_limits<double>::quiet_NaN();
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

std::string format_double(double v) {
    if (std::isnan(v)) return "";
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !field.empty()) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            row.clear();
            field.clear();
            any = false;
        } else {
            field += c;
            any = true;
        }
    }
    if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

TopicSetMismatch::TopicSetMismatch(std::vector<std::string> missing)
    : Error("measures do not share a topic set; missing: " + join_ids(missing)),
      missing_topic_ids(std::move(missing)) {}

OlsFit ols_r2(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw InsufficientObservations("x and y differ in length");
    if (x.size() < 3) throw InsufficientObservations("regression needs at least 3 observations");
    const bool x_varies = std::any_of(x.begin(), x.end(), [&](double v) { return v != x[0]; });
    if (!x_varies) throw DegenerateRegressor("regressor has zero variance");

    OlsFit fit;
    if (!fit_indexed(x, y, [](std::size_t k) { return k; }, x.size(), fit)) {
        // var(y) == 0: the line is flat and explains nothing.
        fit.slope = 0.0;
        fit.intercept = y[0];
        fit.r2 = 0.0;
        fit.degenerate_response = true;
    }
    return fit;
}

OlsFit ols_r2(std::span<const TopicObservation> observations) {
    const Columns c = columns_of(observations);
    return ols_r2(c.x, c.y);
}

EvalResult bootstrap_r2(std::span<const TopicObservation> observations, const BootstrapConfig& config) {
    if (observations.size() < 3) throw InsufficientObservations("bootstrap needs at least 3 observations");
    const Columns cols = columns_of(observations);
    const OlsFit point = ols_r2(cols.x, cols.y);

    EvalResult result;
    result.measure_name = observations.front().measure_name;
    result.r2 = point.r2;
    result.slope = point.slope;
    result.intercept = point.intercept;
    result.degenerate_response = point.degenerate_response;
    result.n_topics = observations.size();
    result.n_boot = config.n_boot;
    result.seed = config.seed;
    result.n_samples_used = observations.front().n_samples_used;
    result.rng_family = std::string(CounterRng::kFamily);

    std::vector<double> r2s(config.n_boot);
    std::vector<std::size_t> redraws(config.n_boot, 0);
    if (config.exec == Exec::parallel) {
        const auto count = static_cast<std::ptrdiff_t>(config.n_boot);
#pragma omp parallel
        {
            std::vector<std::size_t> scratch;
#pragma omp for schedule(static)
            for (std::ptrdiff_t b = 0; b < count; ++b) {
                const auto i = static_cast<std::size_t>(b);
                r2s[i] = resample_r2(cols, config, i, scratch, redraws[i]);
            }
        }
    } else {
        std::vector<std::size_t> scratch;
        for (std::size_t b = 0; b < config.n_boot; ++b) r2s[b] = resample_r2(cols, config, b, scratch, redraws[b]);
    }

    // Serial, index-ordered reduction keeps the result independent of
    // thread scheduling.
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t b = 0; b < config.n_boot; ++b) {
        result.redraws += redraws[b];
        if (std::isnan(r2s[b])) {
            ++result.skipped_resamples;
            continue;
        }
        sum += r2s[b];
        ++used;
    }
    if (used > 0) result.boot_mean = sum / static_cast<double>(used);
    if (used > 1) {
        double ss = 0.0;
        for (double v : r2s)
            if (!std::isnan(v)) ss += (v - result.boot_mean) * (v - result.boot_mean);
        result.boot_sd = std::sqrt(ss / static_cast<double>(used - 1));
    }
    return result;
}

std::vector<EvalResult> sweep_sample_count(const std::map<std::string, EmbeddingSet>& per_topic_embeddings,
                                           const std::map<std::string, double>& phis,
                                           const std::vector<std::size_t>& n_values, Measure measure,
                                           const BootstrapConfig& config) {
    std::vector<std::string> topics;
    for (const auto& [id, set] : per_topic_embeddings) {
        if (!phis.contains(id)) throw TopicSetMismatch({id});
        for (std::size_t n : n_values)
            if (set.size() < n) throw InsufficientSamples(id, n);
        topics.push_back(id);
    }

    std::vector<EvalResult> results;
    for (std::size_t n : n_values) {
        std::vector<EmbeddingSet> subsets;
        subsets.reserve(topics.size());
        for (const auto& id : topics) subsets.push_back(per_topic_embeddings.at(id).first(n));
        const auto scores = score_topics(subsets, {measure}, {}, config.exec);

        std::vector<TopicObservation> obs;
        for (std::size_t t = 0; t < topics.size(); ++t) {
            if (!scores[t].report) throw Error("topic '" + topics[t] + "': " + scores[t].error);
            obs.push_back({topics[t], scores[t].report->value(measure), phis.at(topics[t]),
                           std::string(measure_name(measure)), n});
        }
        results.push_back(bootstrap_r2(obs, config));
    }
    return results;
}

MeasureComparison compare_measures(const std::map<std::string, std::vector<TopicObservation>>& by_measure,
                                   const BootstrapConfig& config) {
    std::set<std::string> all_ids;
    for (const auto& [name, obs] : by_measure)
        for (const auto& o : obs) all_ids.insert(o.topic_id);

    std::vector<std::string> missing;
    for (const auto& [name, obs] : by_measure) {
        std::set<std::string> ids;
        for (const auto& o : obs) ids.insert(o.topic_id);
        for (const auto& id : all_ids)
            if (!ids.contains(id)) missing.push_back(name + ":" + id);
    }
    if (!missing.empty()) throw TopicSetMismatch(std::move(missing));

    MeasureComparison out;
    for (const auto& [name, obs] : by_measure) {
        // Align every measure on the same topic order so resample b picks
        // the same topics for every measure.
        std::vector<TopicObservation> sorted = obs;
        std::sort(sorted.begin(), sorted.end(),
                  [](const auto& a, const auto& b) { return a.topic_id < b.topic_id; });
        EvalResult r = bootstrap_r2(sorted, config);
        r.measure_name = name;
        out.ranked.push_back(std::move(r));
    }
    std::stable_sort(out.ranked.begin(), out.ranked.end(),
                     [](const auto& a, const auto& b) { return a.boot_mean > b.boot_mean; });
    for (std::size_t i = 0; i < out.ranked.size(); ++i)
        for (std::size_t j = i + 1; j < out.ranked.size(); ++j) {
            const auto& a = out.ranked[i];
            const auto& b = out.ranked[j];
            out.deltas.push_back({a.measure_name, b.measure_name, a.boot_mean - b.boot_mean,
                                  std::sqrt(a.boot_sd * a.boot_sd + b.boot_sd * b.boot_sd)});
        }
    return out;
}

std::string observations_to_csv(std::span<const TopicObservation> rows) {
    std::string out = "topic_id,measure,x,y,n_samples_used\n";
    for (const auto& r : rows) {
        out += csv_field(r.topic_id) + "," + csv_field(r.measure_name) + "," + format_double(r.x) + "," +
               format_double(r.y) + "," + std::to_string(r.n_samples_used) + "\n";
    }
    return out;
}

std::vector<TopicObservation> observations_from_csv(const std::string& text) {
    const auto rows = parse_csv(text);
    if (rows.empty()) throw Error("observations CSV is empty");
    const std::vector<std::string> expected{"topic_id", "measure", "x", "y", "n_samples_used"};
    if (rows.front() != expected) throw Error("observations CSV has an unexpected header");
    std::vector<TopicObservation> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.size() != 5) throw Error("observations CSV line " + std::to_string(i + 1) + " has wrong field count");
        TopicObservation o;
        o.topic_id = r[0];
        o.measure_name = r[1];
        try {
            o.x = r[2].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(r[2]);
            o.y = r[3].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(r[3]);
            o.n_samples_used = static_cast<std::size_t>(std::stoull(r[4]));
        } catch (const std::logic_error&) {
            throw Error("observations CSV line " + std::to_string(i + 1) + " has a malformed number");
        }
        out.push_back(std::move(o));
    }
    return out;
}

void write_observations_csv(const std::filesystem::path& path, std::span<const TopicObservation> rows) {
    write_file_atomic(path, observations_to_csv(rows));
}

std::vector<TopicObservation> read_observations_csv(const std::filesystem::path& path) {
    return observations_from_csv(read_file(path));
}

nlohmann::json to_json(const EvalResult& r) {
    return {{"measure_name", r.measure_name},
            {"r2", r.r2},
            {"slope", r.slope},
            {"intercept", r.intercept},
            {"boot_mean", r.boot_mean},
            {"boot_sd", r.boot_sd},
            {"n_topics", r.n_topics},
            {"n_boot", r.n_boot},
            {"seed", r.seed},
            {"n_samples_used", r.n_samples_used},
            {"skipped_resamples", r.skipped_resamples},
            {"redraws", r.redraws},
            {"degenerate_response", r.degenerate_response},
            {"rng_family", r.rng_family}};
}

EvalResult eval_result_from_json(const nlohmann::json& j) {
    EvalResult r;
    r.measure_name = j.at("measure_name").get<std::string>();
    r.r2 = j.at("r2").get<double>();
    r.slope = j.at("slope").get<double>();
    r.intercept = j.at("intercept").get<double>();
    r.boot_mean = j.at("boot_mean").get<double>();
    r.boot_sd = j.at("boot_sd").get<double>();
    r.n_topics = j.at("n_topics").get<std::size_t>();
    r.n_boot = j.at("n_boot").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.n_samples_used = j.value("n_samples_used", std::size_t{0});
    r.skipped_resamples = j.value("skipped_resamples", std::size_t{0});
    r.redraws = j.value("redraws", std::size_t{0});
    r.degenerate_response = j.value("degenerate_response", false);
    r.rng_family = j.value("rng_family", std::string{});
    return r;
}

}  // namespace isotropy
