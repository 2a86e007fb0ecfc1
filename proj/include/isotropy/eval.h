#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "isotropy/errors.h"
#include "isotropy/kernel.h"

namespace isotropy {

class DegenerateRegressor : public Error {
public:
    using Error::Error;
};

class InsufficientObservations : public Error {
public:
    using Error::Error;
};

class InsufficientSamples : public Error {
public:
    InsufficientSamples(std::string topic_id, std::size_t n);
    std::string topic_id;
    std::size_t n;
};

class TopicSetMismatch : public Error {
public:
    explicit TopicSetMismatch(std::vector<std::string> missing);
    std::vector<std::string> missing_topic_ids;
};

// One per-topic point of the factuality-vs-measure regression.
// y is NaN until factuality has been attached.
struct TopicObservation {
    std::string topic_id;
    double x = 0.0;
    double y = 0.0;
    std::string measure_name;
    std::size_t n_samples_used = 0;
};

struct OlsFit {
    double r2 = 0.0;
    double slope = 0.0;
    double intercept = 0.0;
    // var(y) == 0: r2 is reported as 0 rather than thrown.
    bool degenerate_response = false;
};

// Least squares of y on x. Requires >= 3 points; throws DegenerateRegressor
// when every x is equal.
OlsFit ols_r2(std::span<const double> x, std::span<const double> y);
OlsFit ols_r2(std::span<const TopicObservation> observations);

struct BootstrapConfig {
    std::size_t n_boot = 1500;
    std::uint64_t seed = 0;
    int max_redraws = 10;
    Exec exec = Exec::parallel;
};

struct EvalResult {
    std::string measure_name;
    double r2 = 0.0;
    double slope = 0.0;
    double intercept = 0.0;
    double boot_mean = 0.0;
    double boot_sd = 0.0;
    std::size_t n_topics = 0;
    std::size_t n_boot = 0;
    std::uint64_t seed = 0;
    std::size_t n_samples_used = 0;
    // Resamples that were degenerate on every attempt and therefore skipped.
    std::size_t skipped_resamples = 0;
    // Total redraws performed across all resamples.
    std::size_t redraws = 0;
    bool degenerate_response = false;
    std::string rng_family;

    friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

// Resamples topics with replacement. Iteration b draws from
// CounterRng(seed, b), so the result depends only on (observations,
// n_boot, seed) and not on the execution policy.
EvalResult bootstrap_r2(std::span<const TopicObservation> observations, const BootstrapConfig& config);

// Scores the first n responses of every topic for each n and bootstraps the
// resulting regression. Topics are visited in key order.
std::vector<EvalResult> sweep_sample_count(const std::map<std::string, EmbeddingSet>& per_topic_embeddings,
                                           const std::map<std::string, double>& phis,
                                           const std::vector<std::size_t>& n_values, Measure measure,
                                           const BootstrapConfig& config);

struct MeasureDelta {
    std::string a;
    std::string b;
    double delta = 0.0;        // boot_mean(a) - boot_mean(b)
    double combined_sd = 0.0;  // sqrt(sd_a^2 + sd_b^2)
};

struct MeasureComparison {
    std::vector<EvalResult> ranked;  // by boot_mean, best first
    std::vector<MeasureDelta> deltas;
};

// Every measure (isotropy or precomputed baseline) must cover the same
// topic ids; throws TopicSetMismatch otherwise.
MeasureComparison compare_measures(const std::map<std::string, std::vector<TopicObservation>>& by_measure,
                                   const BootstrapConfig& config);

// Observations CSV: topic_id,measure,x,y,n_samples_used. A missing y is
// written as an empty field and read back as NaN.
void write_observations_csv(const std::filesystem::path& path, std::span<const TopicObservation> rows);
std::vector<TopicObservation> read_observations_csv(const std::filesystem::path& path);
std::string observations_to_csv(std::span<const TopicObservation> rows);
std::vector<TopicObservation> observations_from_csv(const std::string& text);

nlohmann::json to_json(const EvalResult& r);
EvalResult eval_result_from_json(const nlohmann::json& j);

}  // namespace isotropy
