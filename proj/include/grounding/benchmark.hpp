#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "grounding/estimator.hpp"
#include "grounding/fitted.hpp"
#include "grounding/llm_parser.hpp"
#include "grounding/parser.hpp"
#include "grounding/pipeline.hpp"
#include "grounding/scene_graph.hpp"

namespace grounding {

struct IntRange {
    int min = 1;
    int max = 1;

    friend bool operator==(const IntRange&, const IntRange&) = default;
};

struct TaskConfig {
    IntRange objects{2, 7};
    IntRange relations{1, 6};
    GridSpec workspace{0.0, 1.0, 0.0, 1.0, 128};
    double margin = 0.02;     // directional slack, workspace units
    double close_max = 2.0;   // in box diagonals
    double far_min = 4.0;     // in box diagonals
    double box_min = 0.05;    // box side range
    double box_max = 0.15;
    /// Chance that a new object reuses the name of one already placed.
    double duplicate_probability = 0.0;
    int max_rejections = 1000;
    std::uint64_t seed = 7;

    /// 1-3 relations, unique names.
    static TaskConfig training(std::uint64_t seed);
    /// 1-6 relations, occasional duplicate names.
    static TaskConfig testing(std::uint64_t seed);

    void validate() const;
};

/// The ten predicates check_relation understands.
const std::vector<std::string>& benchmark_predicates();
const std::vector<std::string>& object_colors();
const std::vector<std::string>& object_shapes();

/// Throws DomainError for predicates outside benchmark_predicates().
bool check_relation(Point x, const ObjectNode& node, std::string_view predicate, const TaskConfig& config);

struct Episode {
    SceneGraph scene;
    std::string instruction;
    ParsedInstruction truth;
    std::vector<int> referenced;  // node id per relation
    Point x_des;
};

/// Draws one episode from rng. Throws GenerationError after
/// config.max_rejections failed attempts.
Episode generate_episode(const TaskConfig& config, std::mt19937_64& rng);

/// Seed of episode index under base seed.
std::uint64_t episode_seed(std::uint64_t base, std::size_t index);
std::vector<Episode> generate_episodes(const TaskConfig& config, std::size_t count);

/// Fraction of the episode's relations satisfied at x.
double score_grounding(Point x, const Episode& episode, const TaskConfig& config);

nlohmann::json episode_to_json(const Episode& episode);
Episode episode_from_json(const nlohmann::json& j);
void write_episodes(const std::vector<Episode>& episodes, const std::string& path);
std::vector<Episode> read_episodes(const std::string& path);

/// x_des for every relation, w_des one-hot on the referenced node.
TrainingSample episode_to_sample(const Episode& episode);
std::vector<TrainingSample> episodes_to_samples(std::span<const Episode> episodes);
/// Goal locations relative to each referenced node, for fit_predicate_table.
std::vector<PredicateObservation> episode_observations(std::span<const Episode> episodes);

enum class ParserKind { Grammar, Llm, Oracle };
std::string to_string(ParserKind kind);
ParserKind parse_parser_kind(std::string_view text);

/// Replay records answering every episode instruction with its truth.
nlohmann::json replay_transcript(std::span<const Episode> episodes, const LlmClientConfig& llm);

struct BenchmarkOptions {
    ParserKind parser = ParserKind::Grammar;
    int grid_resolution = 128;
    bool timing = false;
    LlmClientConfig llm;
    ChatTransport* transport = nullptr;  // LLM parser; made from llm when null
};

struct EpisodeResult {
    int relations = 0;
    double score = 0.0;
    Point location;
    double seconds = 0.0;
};

struct CountRow {
    int relations = 0;
    int episodes = 0;
    double mean_score = 0.0;
    double success_rate = 0.0;
};

struct BenchmarkReport {
    std::vector<EpisodeResult> results;
    double mean_score = 0.0;
    double success_rate = 0.0;
    std::vector<CountRow> by_relation_count;  // rows for 1..6 relations
    double mean_seconds = 0.0;

    /// Success rate over episodes with relation counts in [lo, hi].
    double success_between(int lo, int hi) const;
};

/// Parse, estimate, combine and score each episode. Any episode failure
/// aborts with an error naming the episode.
BenchmarkReport evaluate_episodes(std::span<const Episode> episodes, const SpatialEstimator& estimator,
                                  const TaskConfig& config, const BenchmarkOptions& options);

BenchmarkReport run_benchmark(std::size_t episodes, const SpatialEstimator& estimator, const TaskConfig& config,
                              const BenchmarkOptions& options);

nlohmann::json report_to_json(const BenchmarkReport& report, const SpatialEstimator& estimator,
                              const TaskConfig& config, const BenchmarkOptions& options);

nlohmann::json task_config_to_json(const TaskConfig& config);

}  // namespace grounding
