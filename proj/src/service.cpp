#include "grounding/service.hpp"

#include <cmath>
#include <random>

#include "httplib.h"

#include "grounding/errors.hpp"

namespace grounding {

using nlohmann::json;

ScoreField uniform_field(const GridSpec& grid) {
    grid.validate();
    const auto cells = static_cast<std::size_t>(grid.resolution) * static_cast<std::size_t>(grid.resolution);
    return {grid, std::vector<double>(cells, 1.0), std::vector<double>(cells, 0.0)};
}

Session make_session(std::string id, SceneGraph scene, EstimatorMode mode, const SpatialEstimator& estimator,
                     const GridSpec& grid) {
    if (scene.size() == 0) {
        throw SchemaError("scene has no nodes");
    }
    Session s;
    s.id = std::move(id);
    s.mode = mode;
    s.grid = grid;
    s.running = uniform_field(grid);
    s.argmax = grid_argmax(s.running);
    s.state = estimator.initial_state(scene);
    s.scene = std::move(scene);
    return s;
}

StepOutcome session_step(Session& session, std::string_view expression, const SpatialEstimator& estimator,
                         const std::function<ParsedInstruction(std::string_view)>& llm_fallback) {
    if (estimator.mode() != session.mode) {
        throw DomainError("session " + session.id + " runs in " + to_string(session.mode) + " mode");
    }
    StepOutcome out;
    try {
        out.parsed = parse_expression(expression);
    } catch (const ParseError&) {
        if (!llm_fallback) {
            throw;
        }
        out.parsed = llm_fallback(expression);
    }
    const auto tuples = to_relation_tuples(out.parsed);

    EstimatorState state = session.state;
    ScoreField running = session.running;
    std::vector<SpatialMixture> mixtures;
    std::vector<ScoreField> fields;
    for (const auto& tuple : tuples) {
        mixtures.push_back(estimator.step(session.scene, tuple, state));
        fields.push_back(score_field(mixtures.back(), session.grid));
        if (session.fields.empty() && fields.size() == 1) {
            running = fields.back();
        } else {
            const ScoreField pair[] = {running, fields.back()};
            running = combine_score_fields(pair);
        }
    }
    const ArgmaxResult best = grid_argmax(running);

    out.first_tuple = session.tuples.size();
    session.expressions.emplace_back(expression);
    session.tuples.insert(session.tuples.end(), tuples.begin(), tuples.end());
    session.mixtures.insert(session.mixtures.end(), mixtures.begin(), mixtures.end());
    session.fields.insert(session.fields.end(), fields.begin(), fields.end());
    session.running = std::move(running);
    session.argmax = best;
    session.state = std::move(state);
    return out;
}

ScoreField session_field(const Session& session, int resolution) {
    if (resolution < kMinFieldResolution || resolution > kMaxFieldResolution) {
        throw DomainError("resolution must lie in [" + std::to_string(kMinFieldResolution) + ", " +
                          std::to_string(kMaxFieldResolution) + "]");
    }
    if (resolution == session.grid.resolution) {
        return session.running;
    }
    GridSpec grid = session.grid;
    grid.resolution = resolution;
    if (session.mixtures.empty()) {
        return uniform_field(grid);
    }
    std::vector<ScoreField> fields;
    for (const auto& m : session.mixtures) {
        fields.push_back(score_field(m, grid));
    }
    if (fields.size() == 1) {
        return fields.front();
    }
    return combine_score_fields(fields);
}

json grid_to_json(const GridSpec& g) {
    return {{"x_min", g.x_min}, {"x_max", g.x_max}, {"y_min", g.y_min}, {"y_max", g.y_max},
            {"resolution", g.resolution}};
}

json field_to_json(const ScoreField& f) {
    return {{"grid", grid_to_json(f.grid)}, {"values", f.values}};
}

json error_to_json(std::string_view kind, std::string_view message, std::string_view detail) {
    return {{"kind", kind}, {"message", message}, {"detail", detail}};
}

int http_status(std::string_view kind) {
    if (kind == "not_found") return 404;
    if (kind == "contradiction") return 409;
    if (kind == "parse" || kind == "schema" || kind == "domain" || kind == "shape") return 400;
    if (kind == "transport") return 502;
    return 500;
}

namespace {

json components_json(const Session& s, std::size_t first) {
    json out = json::array();
    for (std::size_t i = first; i < s.mixtures.size(); ++i) {
        const auto& mix = s.mixtures[i];
        const auto w = mix.normalized_weights();
        for (std::size_t j = 0; j < mix.components.size(); ++j) {
            const auto& c = mix.components[j];
            out.push_back({{"step", i},
                           {"node_id", c.node_id},
                           {"name", s.scene.node(c.node_id).name},
                           {"weight", w[j]},
                           {"mu_d", c.params.mu_d},
                           {"var_d", c.params.var_d},
                           {"mu_phi", c.params.mu_phi},
                           {"kappa_phi", c.params.kappa_phi}});
        }
    }
    return out;
}

json parsed_json(const ParsedInstruction& p) {
    json targets = json::array();
    for (const auto& t : p.targets) {
        targets.push_back({t.referent, t.predicate});
    }
    return {{"action", p.action}, {"source", p.source}, {"target", targets}};
}

json argmax_json(const Session& s) {
    return {{"argmax", {s.argmax.location.x, s.argmax.location.y}},
            {"score", s.argmax.score},
            {"row", s.argmax.row},
            {"col", s.argmax.col},
            {"expressions", s.expressions.size()}};
}

std::string mode_field(const json& body) {
    if (!body.contains("mode")) {
        return {};
    }
    if (!body["mode"].is_string()) {
        throw SchemaError("'mode' must be a string");
    }
    return body["mode"].get<std::string>();
}

}  // namespace

SessionManager::SessionManager(ServiceConfig config)
    : config_(std::move(config)), fitted_(SpatialEstimator::fitted(config_.table)) {
    if (config_.model) {
        learned_ = SpatialEstimator::learned(config_.model);
    }
    if (config_.resolution < kMinFieldResolution || config_.resolution > kMaxFieldResolution) {
        throw DomainError("service resolution must lie in [16, 512]");
    }
    std::random_device rd;
    id_state_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    if (!config_.journal_path.empty()) {
        journal_.open(config_.journal_path, std::ios::app);
        if (!journal_) {
            throw IoError("cannot open journal " + config_.journal_path);
        }
    }
}

const SpatialEstimator& SessionManager::estimator_for(EstimatorMode mode) const {
    if (mode == EstimatorMode::Fitted) {
        return fitted_;
    }
    if (!learned_) {
        throw DomainError("learned mode needs the service to be started with a model");
    }
    return *learned_;
}

std::string SessionManager::new_id() {
    std::lock_guard lock(registry_mutex_);
    for (;;) {
        id_state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = id_state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        z ^= z >> 31;
        static const char* hex = "0123456789abcdef";
        std::string id = "s";
        for (int i = 15; i >= 0; --i) {
            id += hex[(z >> (4 * i)) & 0xf];
        }
        if (!sessions_.contains(id)) {
            return id;
        }
    }
}

void SessionManager::journal(const json& record) {
    if (replaying_ || !journal_.is_open()) {
        return;
    }
    std::lock_guard lock(journal_mutex_);
    journal_ << record.dump() << '\n';
    journal_.flush();
    if (!journal_) {
        throw IoError("journal write failed");
    }
}

std::shared_ptr<SessionManager::Entry> SessionManager::find(const std::string& id) {
    std::lock_guard lock(registry_mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) {
        throw NotFoundError("unknown session '" + id + "'");
    }
    return it->second;
}

std::string SessionManager::create_with_id(std::string id, const json& body) {
    if (!body.is_object() || !body.contains("scene")) {
        throw SchemaError("request body must be an object with a 'scene'");
    }
    const std::string mode_text = mode_field(body);
    const EstimatorMode mode = mode_text.empty() ? EstimatorMode::Fitted : parse_mode(mode_text);
    GridSpec grid{0.0, 1.0, 0.0, 1.0, config_.resolution};
    if (config_.model) {
        grid = config_.model->config().workspace;
        grid.resolution = config_.resolution;
    }
    auto entry = std::make_shared<Entry>();
    entry->session = make_session(id, scene_from_json(body["scene"]), mode, estimator_for(mode), grid);
    {
        std::lock_guard lock(registry_mutex_);
        if (sessions_.contains(id)) {
            throw SchemaError("duplicate session id '" + id + "'");
        }
        sessions_.emplace(id, entry);
    }
    journal({{"op", "create"}, {"id", id}, {"mode", to_string(mode)}, {"scene", body["scene"]}});
    return id;
}

json SessionManager::create(const json& body) {
    return {{"id", create_with_id(new_id(), body)}};
}

json SessionManager::step(Entry& entry, const json& body) {
    if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
        throw SchemaError("request body must be an object with a string 'text'");
    }
    const std::string text = body["text"].get<std::string>();
    Session& s = entry.session;
    const std::string mode_text = mode_field(body);
    if (!mode_text.empty() && parse_mode(mode_text) != s.mode) {
        throw DomainError("session " + s.id + " runs in " + to_string(s.mode) + " mode");
    }
    std::function<ParsedInstruction(std::string_view)> fallback;
    if (config_.llm) {
        fallback = [this](std::string_view t) { return parse_llm(t, *config_.llm); };
    }
    const StepOutcome outcome = session_step(s, text, estimator_for(s.mode), fallback);
    journal({{"op", "expression"}, {"id", s.id}, {"text", text}});
    json out = argmax_json(s);
    out["field"] = field_to_json(s.running);
    out["components"] = components_json(s, outcome.first_tuple);
    out["parsed"] = parsed_json(outcome.parsed);
    return out;
}

json SessionManager::add_expression(const std::string& id, const json& body) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    if (entry->deleted) {
        throw NotFoundError("unknown session '" + id + "'");
    }
    return step(*entry, body);
}

json SessionManager::field(const std::string& id, std::optional<int> resolution) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    if (entry->deleted) {
        throw NotFoundError("unknown session '" + id + "'");
    }
    return field_to_json(session_field(entry->session, resolution.value_or(entry->session.grid.resolution)));
}

json SessionManager::argmax(const std::string& id) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    if (entry->deleted) {
        throw NotFoundError("unknown session '" + id + "'");
    }
    return argmax_json(entry->session);
}

void SessionManager::remove(const std::string& id) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    {
        std::lock_guard reg(registry_mutex_);
        sessions_.erase(id);
    }
    entry->deleted = true;
    journal({{"op", "delete"}, {"id", id}});
}

Session SessionManager::snapshot(const std::string& id) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    return entry->session;
}

std::size_t SessionManager::size() {
    std::lock_guard lock(registry_mutex_);
    return sessions_.size();
}

std::size_t SessionManager::replay_journal(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        return 0;
    }
    replaying_ = true;
    std::size_t applied = 0;
    std::string line;
    int line_no = 0;
    try {
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            json r;
            try {
                r = json::parse(line);
            } catch (const json::parse_error& e) {
                throw SchemaError("journal " + path + " line " + std::to_string(line_no) + ": invalid JSON",
                                  e.what());
            }
            const std::string op = r.value("op", "");
            const std::string id = r.value("id", "");
            if (op == "create") {
                create_with_id(id, r);
            } else if (op == "expression") {
                add_expression(id, r);
            } else if (op == "delete") {
                remove(id);
            } else {
                throw SchemaError("journal " + path + " line " + std::to_string(line_no) + ": unknown op '" + op +
                                  "'");
            }
            ++applied;
        }
    } catch (...) {
        replaying_ = false;
        throw;
    }
    replaying_ = false;
    return applied;
}

void register_routes(httplib::Server& server, SessionManager& manager) {
    auto send_json = [](httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    };
    auto guarded = [send_json](auto handler) {
        return [handler, send_json](const httplib::Request& req, httplib::Response& res) {
            try {
                handler(req, res);
            } catch (const Error& e) {
                send_json(res, http_status(e.kind()), error_to_json(e.kind(), e.what(), e.detail()));
            } catch (const std::exception& e) {
                send_json(res, 500, error_to_json("internal", e.what(), ""));
            }
        };
    };
    auto body_of = [](const httplib::Request& req) {
        try {
            return json::parse(req.body);
        } catch (const json::parse_error& e) {
            throw SchemaError("request body is not valid JSON", e.what());
        }
    };

    server.Post("/sessions", guarded([&manager, send_json, body_of](const httplib::Request& req,
                                                                     httplib::Response& res) {
                    send_json(res, 201, manager.create(body_of(req)));
                }));
    server.Post(R"(/sessions/([^/]+)/expressions)",
                guarded([&manager, send_json, body_of](const httplib::Request& req, httplib::Response& res) {
                    send_json(res, 200, manager.add_expression(req.matches[1], body_of(req)));
                }));
    server.Get(R"(/sessions/([^/]+)/field)",
               guarded([&manager, send_json](const httplib::Request& req, httplib::Response& res) {
                   std::optional<int> resolution;
                   if (req.has_param("resolution")) {
                       const std::string text = req.get_param_value("resolution");
                       std::size_t used = 0;
                       try {
                           resolution = std::stoi(text, &used);
                       } catch (const std::exception&) {
                           used = 0;
                       }
                       if (used != text.size() || text.empty()) {
                           throw DomainError("resolution must be an integer (got '" + text + "')");
                       }
                   }
                   send_json(res, 200, manager.field(req.matches[1], resolution));
               }));
    server.Get(R"(/sessions/([^/]+)/argmax)",
               guarded([&manager, send_json](const httplib::Request& req, httplib::Response& res) {
                   send_json(res, 200, manager.argmax(req.matches[1]));
               }));
    server.Delete(R"(/sessions/([^/]+))", guarded([&manager](const httplib::Request& req, httplib::Response& res) {
                      manager.remove(req.matches[1]);
                      res.status = 204;
                  }));
}

}  // namespace grounding
