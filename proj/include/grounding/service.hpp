#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "grounding/llm_parser.hpp"
#include "grounding/pipeline.hpp"

namespace httplib {
class Server;
}

namespace grounding {

inline constexpr int kMinFieldResolution = 16;
inline constexpr int kMaxFieldResolution = 512;

/// Incremental grounding state for one scene.
struct Session {
    std::string id;
    SceneGraph scene;
    EstimatorMode mode = EstimatorMode::Fitted;
    GridSpec grid;
    std::vector<std::string> expressions;
    std::vector<RelationTuple> tuples;
    std::vector<SpatialMixture> mixtures;  // one per tuple
    std::vector<ScoreField> fields;        // one per tuple, at grid
    ScoreField running;                    // product of fields
    ArgmaxResult argmax;
    EstimatorState state;                  // learned mode only
};

/// Uniform field: the product of no fields.
ScoreField uniform_field(const GridSpec& grid);

Session make_session(std::string id, SceneGraph scene, EstimatorMode mode, const SpatialEstimator& estimator,
                     const GridSpec& grid);

struct StepOutcome {
    ParsedInstruction parsed;
    std::size_t first_tuple = 0;  // index of the first tuple this step added
};

/// Parses the expression and folds each of its relations into the running
/// field. The session is left untouched when any part fails.
/// llm_fallback, when set, is tried after a grammar parse error.
StepOutcome session_step(Session& session, std::string_view expression, const SpatialEstimator& estimator,
                         const std::function<ParsedInstruction(std::string_view)>& llm_fallback = {});

/// Running field re-rendered at another resolution.
ScoreField session_field(const Session& session, int resolution);

nlohmann::json grid_to_json(const GridSpec& grid);
nlohmann::json field_to_json(const ScoreField& field);
nlohmann::json error_to_json(std::string_view kind, std::string_view message, std::string_view detail);
/// HTTP status for an error kind.
int http_status(std::string_view kind);

struct ServiceConfig {
    std::shared_ptr<const EstimatorModel> model;  // enables learned mode
    PredicateTable table = PredicateTable::canonical();
    int resolution = 128;
    std::string journal_path;  // empty: no journal
    std::optional<LlmClientConfig> llm;  // grammar fallback
};

/// Thread-safe session registry. Calls on one session are serialized;
/// calls on different sessions run concurrently.
class SessionManager {
public:
    explicit SessionManager(ServiceConfig config);

    /// body: {"scene": {...}, "mode"?: "fitted" | "learned"}
    nlohmann::json create(const nlohmann::json& body);
    /// body: {"text": "...", "mode"?: ...}
    nlohmann::json add_expression(const std::string& id, const nlohmann::json& body);
    /// resolution defaults to the session grid.
    nlohmann::json field(const std::string& id, std::optional<int> resolution = std::nullopt);
    nlohmann::json argmax(const std::string& id);
    void remove(const std::string& id);

    /// Re-applies a journal written by an earlier run, keeping session ids.
    /// Returns the number of records applied.
    std::size_t replay_journal(const std::string& path);

    /// Copy of the session state, for inspection.
    Session snapshot(const std::string& id);
    std::size_t size();

private:
    struct Entry {
        std::mutex mutex;
        Session session;
        bool deleted = false;
    };

    std::shared_ptr<Entry> find(const std::string& id);
    const SpatialEstimator& estimator_for(EstimatorMode mode) const;
    std::string new_id();
    void journal(const nlohmann::json& record);
    std::string create_with_id(std::string id, const nlohmann::json& body);
    nlohmann::json step(Entry& entry, const nlohmann::json& body);

    ServiceConfig config_;
    SpatialEstimator fitted_;
    std::optional<SpatialEstimator> learned_;
    std::mutex registry_mutex_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
    std::uint64_t id_state_;
    std::mutex journal_mutex_;
    std::ofstream journal_;
    bool replaying_ = false;
};

/// Installs the HTTP routes for manager on server.
void register_routes(httplib::Server& server, SessionManager& manager);

}  // namespace grounding
