#pragma once

// Command-line front end: generate, embed, score, segment-score, evaluate,
// sweep and report over one JSON run configuration.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "isotropy/chat.h"
#include "isotropy/embed.h"
#include "isotropy/genpipe.h"
#include "isotropy/kernel.h"

namespace isotropy {

struct RunPaths {
    std::filesystem::path topics;
    std::filesystem::path responses;
    std::filesystem::path embeddings_cache;
    std::filesystem::path scores;   // observations, factuality, scored transcripts
    std::filesystem::path reports;  // JSON / CSV / SVG outputs
};

struct RunConfig {
    std::vector<ProviderSpec> providers;
    GenerationConfig generator;
    std::optional<ChatEndpoint> generator_endpoint;
    std::string oracle_model;
    std::optional<ChatEndpoint> oracle_endpoint;
    int oracle_top_logprobs = 5;
    double fidelity_warning = 0.98;
    std::vector<Measure> measures;
    std::size_t n_boot = 1500;
    std::uint64_t seed = 0;
    RunPaths paths;
    TopicSource topic_source = TopicSource::custom;
    std::vector<std::size_t> lengths;  // derived length variants
    std::size_t workers = 1;

    const ProviderSpec& provider(const std::string& name) const;  // "" = first
};

// Relative paths are resolved against the config file's directory.
// Throws ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

// Output file names under RunPaths.
std::filesystem::path observations_path(const RunPaths& p, std::size_t length);
std::filesystem::path phi_path(const RunPaths& p, std::size_t length);
std::filesystem::path scored_path(const RunPaths& p, std::size_t length);

enum ExitCode : int { kExitOk = 0, kExitFailures = 1, kExitUsage = 2 };

// Parses argv and runs one subcommand. Progress goes to out; warnings and
// the JSON failure summary go to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace isotropy
