#include "grounding/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "grounding/errors.hpp"

namespace grounding {

using nlohmann::json;

TaskConfig TaskConfig::training(std::uint64_t seed) {
    TaskConfig c;
    c.relations = {1, 3};
    c.seed = seed;
    return c;
}

TaskConfig TaskConfig::testing(std::uint64_t seed) {
    TaskConfig c;
    c.relations = {1, 6};
    c.duplicate_probability = 0.05;
    c.seed = seed;
    return c;
}

void TaskConfig::validate() const {
    if (objects.min < 1 || objects.max < objects.min) {
        throw DomainError("task config: object range must be nonempty and positive");
    }
    if (relations.min < 1 || relations.max < relations.min) {
        throw DomainError("task config: relation range must be nonempty with at least one relation");
    }
    if (!(margin >= 0.0) || !(close_max > 0.0) || !(far_min > close_max)) {
        throw DomainError("task config: need margin >= 0 and 0 < close_max < far_min");
    }
    if (!(box_min > 0.0) || box_max < box_min) {
        throw DomainError("task config: box side range must be positive and nonempty");
    }
    if (!(duplicate_probability >= 0.0 && duplicate_probability <= 1.0)) {
        throw DomainError("task config: duplicate probability must lie in [0, 1]");
    }
    if (max_rejections < 1) {
        throw DomainError("task config: max_rejections must be positive");
    }
    workspace.validate();
    if (box_max >= workspace.x_max - workspace.x_min || box_max >= workspace.y_max - workspace.y_min) {
        throw DomainError("task config: boxes do not fit in the workspace");
    }
}

const std::vector<std::string>& benchmark_predicates() {
    static const std::vector<std::string> p = {"left",       "right",       "above",      "below",       "left above",
                                               "right above", "left below", "right below", "close",       "far"};
    return p;
}

const std::vector<std::string>& object_colors() {
    static const std::vector<std::string> c = {"red", "green", "blue", "yellow", "white", "black", "purple", "orange"};
    return c;
}

const std::vector<std::string>& object_shapes() {
    static const std::vector<std::string> s = {"cube", "bowl", "box", "ring", "cup", "block"};
    return s;
}

bool check_relation(Point x, const ObjectNode& node, std::string_view predicate, const TaskConfig& config) {
    const double dx = x.x - node.coord.x;
    const double dy = x.y - node.coord.y;
    const double m = config.margin;
    const bool left = dx < -m;
    const bool right = dx > m;
    const bool above = dy > m;
    const bool below = dy < -m;
    if (predicate == "left") return left;
    if (predicate == "right") return right;
    if (predicate == "above") return above;
    if (predicate == "below") return below;
    if (predicate == "left above") return left && above;
    if (predicate == "right above") return right && above;
    if (predicate == "left below") return left && below;
    if (predicate == "right below") return right && below;
    const double dist = std::hypot(dx, dy);
    const double diag = node.box.diagonal();
    if (predicate == "close") return dist <= config.close_max * diag;
    if (predicate == "far") return dist >= config.far_min * diag;
    throw DomainError("unknown predicate '" + std::string(predicate) + "'");
}

namespace {

template <class T>
const T& pick(const std::vector<T>& items, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> u(0, items.size() - 1);
    return items[u(rng)];
}

int draw(IntRange r, std::mt19937_64& rng) {
    return std::uniform_int_distribution<int>(r.min, r.max)(rng);
}

double uniform(double lo, double hi, std::mt19937_64& rng) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool overlaps(const Box& a, const Box& b) {
    return std::abs(a.cx - b.cx) < (a.w + b.w) / 2 && std::abs(a.cy - b.cy) < (a.h + b.h) / 2;
}

std::optional<std::vector<ObjectNode>> place_objects(const TaskConfig& cfg, int n, std::mt19937_64& rng) {
    constexpr int kPlacementTries = 200;
    const GridSpec& ws = cfg.workspace;
    std::vector<ObjectNode> objects;
    std::vector<std::string> unused;
    for (const auto& c : object_colors()) {
        for (const auto& s : object_shapes()) {
            unused.push_back(c + " " + s);
        }
    }
    for (int i = 0; i < n; ++i) {
        std::optional<Box> placed;
        for (int t = 0; t < kPlacementTries && !placed; ++t) {
            Box b;
            b.w = uniform(cfg.box_min, cfg.box_max, rng);
            b.h = uniform(cfg.box_min, cfg.box_max, rng);
            b.cx = uniform(ws.x_min + b.w / 2, ws.x_max - b.w / 2, rng);
            b.cy = uniform(ws.y_min + b.h / 2, ws.y_max - b.h / 2, rng);
            if (std::none_of(objects.begin(), objects.end(), [&](const ObjectNode& o) { return overlaps(o.box, b); })) {
                placed = b;
            }
        }
        if (!placed) {
            return std::nullopt;
        }
        ObjectNode node;
        node.id = i;
        node.box = *placed;
        node.coord = {placed->cx, placed->cy};
        if (i > 0 && uniform(0.0, 1.0, rng) < cfg.duplicate_probability) {
            node.name = pick(objects, rng).name;
        } else {
            std::uniform_int_distribution<std::size_t> u(0, unused.size() - 1);
            const std::size_t k = u(rng);
            node.name = unused[k];
            unused.erase(unused.begin() + static_cast<std::ptrdiff_t>(k));
        }
        objects.push_back(std::move(node));
    }
    return objects;
}

std::string relation_phrase(const std::string& predicate, const std::string& referent, std::mt19937_64& rng) {
    std::vector<std::string> forms;
    if (predicate == "left" || predicate == "right") {
        forms = {"to the " + predicate + " of", predicate + " of"};
    } else if (predicate == "above" || predicate == "below") {
        forms = {predicate};
    } else if (predicate == "close") {
        forms = {"close to", "near", "near to"};
    } else if (predicate == "far") {
        forms = {"far from"};
    } else {
        forms = {predicate, "to the " + predicate + " of"};
    }
    return pick(forms, rng) + " the " + referent;
}

std::string compose_instruction(const ParsedInstruction& truth, std::mt19937_64& rng) {
    std::string s = truth.action;
    if (truth.source != kSelfSource) {
        s += " the " + truth.source;
    }
    const std::size_t k = truth.targets.size();
    const bool serial_comma = uniform(0.0, 1.0, rng) < 0.5;
    for (std::size_t i = 0; i < k; ++i) {
        if (i > 0) {
            if (i + 1 < k) {
                s += ",";
            } else if (k == 2) {
                s += uniform(0.0, 1.0, rng) < 0.5 ? " and" : ",";
            } else {
                s += serial_comma ? ", and" : " and";
            }
        }
        s += " " + relation_phrase(truth.targets[i].predicate, truth.targets[i].referent, rng);
    }
    return s;
}

}  // namespace

Episode generate_episode(const TaskConfig& config, std::mt19937_64& rng) {
    config.validate();
    static const std::vector<std::string> object_verbs = {"place", "put", "move", "set"};
    static const std::vector<std::string> self_verbs = {"go", "move", "navigate"};
    const GridSpec grid = config.workspace;
    // Drawn once so rejections do not skew the relation count.
    const int k = draw(config.relations, rng);

    for (int attempt = 0; attempt < config.max_rejections; ++attempt) {
        const int n = draw(config.objects, rng);
        auto objects = place_objects(config, n, rng);
        if (!objects) {
            continue;
        }
        if (static_cast<std::size_t>(n) * benchmark_predicates().size() < static_cast<std::size_t>(k)) {
            continue;
        }
        std::vector<std::pair<int, std::string>> relations;
        while (relations.size() < static_cast<std::size_t>(k)) {
            std::pair<int, std::string> r{std::uniform_int_distribution<int>(0, n - 1)(rng),
                                          pick(benchmark_predicates(), rng)};
            if (std::find(relations.begin(), relations.end(), r) == relations.end()) {
                relations.push_back(std::move(r));
            }
        }

        std::vector<Point> feasible;
        for (int row = 0; row < grid.resolution; ++row) {
            for (int col = 0; col < grid.resolution; ++col) {
                const Point p = grid.cell_center(row, col);
                if (std::all_of(relations.begin(), relations.end(), [&](const auto& r) {
                        return check_relation(p, (*objects)[static_cast<std::size_t>(r.first)], r.second, config);
                    })) {
                    feasible.push_back(p);
                }
            }
        }
        if (feasible.empty()) {
            continue;
        }

        Episode ep;
        ep.x_des = pick(feasible, rng);
        const bool self = uniform(0.0, 1.0, rng) < 0.5;
        ep.truth.action = pick(self ? self_verbs : object_verbs, rng);
        ep.truth.source = self ? kSelfSource : pick(object_colors(), rng) + " " + pick(object_shapes(), rng);
        for (const auto& [node, predicate] : relations) {
            ep.truth.targets.push_back({(*objects)[static_cast<std::size_t>(node)].name, predicate});
            ep.referenced.push_back(node);
        }
        ep.instruction = compose_instruction(ep.truth, rng);
        ep.scene = build_scene_graph(std::move(*objects));
        return ep;
    }
    throw GenerationError("no feasible episode after " + std::to_string(config.max_rejections) +
                          " attempts; the task config is too tight");
}

std::uint64_t episode_seed(std::uint64_t base, std::size_t index) {
    // splitmix64 of the base, then the index mixed in.
    std::uint64_t z = base + 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z ^ static_cast<std::uint64_t>(index);
}

std::vector<Episode> generate_episodes(const TaskConfig& config, std::size_t count) {
    std::vector<Episode> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::mt19937_64 rng(episode_seed(config.seed, i));
        out.push_back(generate_episode(config, rng));
    }
    return out;
}

double score_grounding(Point x, const Episode& episode, const TaskConfig& config) {
    if (episode.truth.targets.empty()) {
        return 0.0;
    }
    int satisfied = 0;
    for (std::size_t i = 0; i < episode.truth.targets.size(); ++i) {
        if (check_relation(x, episode.scene.node(episode.referenced[i]), episode.truth.targets[i].predicate, config)) {
            ++satisfied;
        }
    }
    return static_cast<double>(satisfied) / static_cast<double>(episode.truth.targets.size());
}

json episode_to_json(const Episode& ep) {
    json targets = json::array();
    for (const auto& t : ep.truth.targets) {
        targets.push_back({t.referent, t.predicate});
    }
    return {{"scene", scene_to_json(ep.scene)},
            {"instruction", ep.instruction},
            {"truth", {{"action", ep.truth.action}, {"source", ep.truth.source}, {"target", targets}}},
            {"referenced", ep.referenced},
            {"x_des", {ep.x_des.x, ep.x_des.y}}};
}

Episode episode_from_json(const json& j) {
    Episode ep;
    if (!j.is_object() || !j.contains("scene")) {
        throw SchemaError("episode must be an object with a 'scene'");
    }
    ep.scene = scene_from_json(j["scene"]);
    try {
        ep.instruction = j.at("instruction").get<std::string>();
        ep.truth = parse_llm_reply(j.at("truth").dump());
        ep.referenced = j.at("referenced").get<std::vector<int>>();
        const auto& x = j.at("x_des");
        ep.x_des = {x.at(0).get<double>(), x.at(1).get<double>()};
    } catch (const json::exception& e) {
        throw SchemaError("episode needs instruction, truth, referenced and x_des", e.what());
    }
    if (ep.referenced.size() != ep.truth.targets.size()) {
        throw SchemaError("episode: 'referenced' must have one node id per target");
    }
    for (int id : ep.referenced) {
        if (!ep.scene.nodes.contains(id)) {
            throw SchemaError("episode: referenced node " + std::to_string(id) + " is not in the scene");
        }
    }
    return ep;
}

void write_episodes(const std::vector<Episode>& episodes, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    for (const auto& ep : episodes) {
        out << episode_to_json(ep).dump() << '\n';
    }
}

std::vector<Episode> read_episodes(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read episode file " + path);
    }
    std::vector<Episode> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            out.push_back(episode_from_json(json::parse(line)));
        } catch (const json::parse_error& e) {
            throw SchemaError(path + " line " + std::to_string(line_no) + ": invalid JSON", e.what());
        } catch (const SchemaError& e) {
            throw SchemaError(path + " line " + std::to_string(line_no) + ": " + e.what(), e.detail());
        }
    }
    return out;
}

TrainingSample episode_to_sample(const Episode& ep) {
    TrainingSample s;
    s.scene = ep.scene;
    s.tuples = to_relation_tuples(ep.truth);
    for (int id : ep.referenced) {
        s.x_des.push_back(ep.x_des);
        std::vector<double> w(ep.scene.size(), 0.0);
        w[static_cast<std::size_t>(ep.scene.index_of(id))] = 1.0;
        s.w_des.push_back(std::move(w));
    }
    return s;
}

std::vector<TrainingSample> episodes_to_samples(std::span<const Episode> episodes) {
    std::vector<TrainingSample> out;
    out.reserve(episodes.size());
    for (const auto& ep : episodes) {
        out.push_back(episode_to_sample(ep));
    }
    return out;
}

std::vector<PredicateObservation> episode_observations(std::span<const Episode> episodes) {
    std::vector<PredicateObservation> out;
    for (const auto& ep : episodes) {
        for (std::size_t i = 0; i < ep.referenced.size(); ++i) {
            const ObjectNode& node = ep.scene.node(ep.referenced[i]);
            const auto [d, phi] = to_polar(ep.x_des, node.coord);
            out.push_back({ep.truth.targets[i].predicate, d / node.box.diagonal(), phi});
        }
    }
    return out;
}

std::string to_string(ParserKind kind) {
    switch (kind) {
        case ParserKind::Grammar:
            return "grammar";
        case ParserKind::Llm:
            return "llm";
        case ParserKind::Oracle:
            return "oracle";
    }
    return "grammar";
}

ParserKind parse_parser_kind(std::string_view text) {
    if (text == "grammar") return ParserKind::Grammar;
    if (text == "llm") return ParserKind::Llm;
    if (text == "oracle") return ParserKind::Oracle;
    throw DomainError("parser must be 'grammar', 'llm' or 'oracle' (got '" + std::string(text) + "')");
}

json replay_transcript(std::span<const Episode> episodes, const LlmClientConfig& llm) {
    json records = json::array();
    for (const auto& ep : episodes) {
        records.push_back({{"request_hash", request_hash(build_llm_request(ep.instruction, llm))},
                           {"reply", format_llm_reply(ep.truth)}});
    }
    return records;
}

double BenchmarkReport::success_between(int lo, int hi) const {
    int n = 0;
    int ok = 0;
    for (const auto& r : results) {
        if (r.relations >= lo && r.relations <= hi) {
            ++n;
            ok += r.score == 1.0 ? 1 : 0;
        }
    }
    return n == 0 ? 0.0 : static_cast<double>(ok) / n;
}

BenchmarkReport evaluate_episodes(std::span<const Episode> episodes, const SpatialEstimator& estimator,
                                  const TaskConfig& config, const BenchmarkOptions& options) {
    GridSpec grid = config.workspace;
    grid.resolution = options.grid_resolution;
    grid.validate();

    std::unique_ptr<ChatTransport> owned;
    ChatTransport* transport = options.transport;
    if (options.parser == ParserKind::Llm && transport == nullptr) {
        owned = make_transport(options.llm);
        transport = owned.get();
    }

    BenchmarkReport report;
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        const Episode& ep = episodes[i];
        const auto start = std::chrono::steady_clock::now();
        EpisodeResult r;
        r.relations = static_cast<int>(ep.truth.targets.size());
        try {
            ParsedInstruction parsed;
            switch (options.parser) {
                case ParserKind::Grammar:
                    parsed = parse_grammar(ep.instruction);
                    break;
                case ParserKind::Llm:
                    parsed = parse_llm(ep.instruction, options.llm, *transport);
                    break;
                case ParserKind::Oracle:
                    parsed = ep.truth;
                    break;
            }
            const auto tuples = to_relation_tuples(parsed);
            const auto g = ground_tuples(ep.scene, tuples, estimator, grid);
            r.location = g.argmax.location;
            r.score = score_grounding(r.location, ep, config);
        } catch (const Error& e) {
            throw Error(e.kind(), "episode " + std::to_string(i) + " (\"" + ep.instruction + "\"): " + e.what(),
                        e.detail());
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        report.results.push_back(r);
    }

    int max_count = 6;
    for (const auto& r : report.results) {
        max_count = std::max(max_count, r.relations);
    }
    for (int c = 1; c <= max_count; ++c) {
        report.by_relation_count.push_back({c, 0, 0.0, 0.0});
    }
    double total_seconds = 0.0;
    for (const auto& r : report.results) {
        auto& row = report.by_relation_count[static_cast<std::size_t>(r.relations - 1)];
        ++row.episodes;
        row.mean_score += r.score;
        row.success_rate += r.score == 1.0 ? 1.0 : 0.0;
        report.mean_score += r.score;
        report.success_rate += r.score == 1.0 ? 1.0 : 0.0;
        total_seconds += r.seconds;
    }
    for (auto& row : report.by_relation_count) {
        if (row.episodes > 0) {
            row.mean_score /= row.episodes;
            row.success_rate /= row.episodes;
        }
    }
    if (!report.results.empty()) {
        const auto n = static_cast<double>(report.results.size());
        report.mean_score /= n;
        report.success_rate /= n;
        report.mean_seconds = total_seconds / n;
    }
    return report;
}

BenchmarkReport run_benchmark(std::size_t episodes, const SpatialEstimator& estimator, const TaskConfig& config,
                              const BenchmarkOptions& options) {
    if (episodes == 0) {
        throw DomainError("benchmark needs at least one episode");
    }
    const auto eps = generate_episodes(config, episodes);
    return evaluate_episodes(eps, estimator, config, options);
}

json task_config_to_json(const TaskConfig& c) {
    return {{"objects", {c.objects.min, c.objects.max}},
            {"relations", {c.relations.min, c.relations.max}},
            {"workspace", {c.workspace.x_min, c.workspace.x_max, c.workspace.y_min, c.workspace.y_max}},
            {"margin", c.margin},
            {"close_max", c.close_max},
            {"far_min", c.far_min},
            {"box_side", {c.box_min, c.box_max}},
            {"duplicate_probability", c.duplicate_probability},
            {"max_rejections", c.max_rejections},
            {"seed", c.seed}};
}

json report_to_json(const BenchmarkReport& report, const SpatialEstimator& estimator, const TaskConfig& config,
                    const BenchmarkOptions& options) {
    json rows = json::array();
    for (const auto& row : report.by_relation_count) {
        json r = {{"relations", row.relations}, {"episodes", row.episodes}};
        r["mean_score"] = row.episodes > 0 ? json(row.mean_score) : json(nullptr);
        r["success_rate"] = row.episodes > 0 ? json(row.success_rate) : json(nullptr);
        rows.push_back(std::move(r));
    }
    json out = {{"format", "grounding-benchmark-report"},
                {"mode", to_string(estimator.mode())},
                {"parser", to_string(options.parser)},
                {"grid", options.grid_resolution},
                {"task", task_config_to_json(config)},
                {"episodes", report.results.size()},
                {"mean_score", report.mean_score},
                {"success_rate", report.success_rate},
                {"by_relation_count", std::move(rows)}};
    if (options.timing) {
        out["mean_seconds_per_episode"] = report.mean_seconds;
    }
    return out;
}

}  // namespace grounding
