#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "grounding/benchmark.hpp"
#include "grounding/errors.hpp"
#include "grounding/fitted.hpp"
#include "grounding/llm_parser.hpp"
#include "grounding/model_io.hpp"
#include "grounding/pipeline.hpp"
#include "grounding/service.hpp"

// After Eigen: <resolv.h> defines _res as a macro.
#include "httplib.h"

using namespace grounding;
using nlohmann::json;

namespace {

enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kIoFailure = 3,
    kParseFailure = 4,
    kEstimationFailure = 5,
    kTransportFailure = 6,
};

int exit_code_for(const std::string& kind) {
    if (kind == "io") return kIoFailure;
    if (kind == "parse" || kind == "schema") return kParseFailure;
    if (kind == "transport") return kTransportFailure;
    return kEstimationFailure;
}

int report_error(const std::string& kind, const std::string& message, const std::string& detail, int code) {
    std::cout << json{{"error", error_to_json(kind, message, detail)}}.dump() << '\n';
    return code;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path);
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(path + " is not valid JSON", e.what());
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << text;
    if (!out) {
        throw IoError("write to " + path + " failed");
    }
}

// A model file is either a trained estimator or a fitted predicate table.
SpatialEstimator make_estimator(EstimatorMode mode, const std::string& model_path) {
    if (model_path.empty()) {
        if (mode == EstimatorMode::Learned) {
            throw DomainError("learned mode needs --model");
        }
        return SpatialEstimator::fitted();
    }
    const json j = read_json_file(model_path);
    const std::string format = j.is_object() ? j.value("format", "") : "";
    if (mode == EstimatorMode::Learned) {
        return SpatialEstimator::learned(std::make_shared<const EstimatorModel>(model_from_json(j)));
    }
    if (format == "grounding-estimator") {
        throw DomainError("--model holds a trained estimator; use --mode learned");
    }
    return SpatialEstimator::fitted(table_from_json(j));
}

json mixture_json(const SpatialMixture& mix, const SceneGraph& scene) {
    json out = json::array();
    const auto w = mix.normalized_weights();
    for (std::size_t j = 0; j < mix.components.size(); ++j) {
        const auto& c = mix.components[j];
        out.push_back({{"node_id", c.node_id},
                       {"name", scene.node(c.node_id).name},
                       {"weight", w[j]},
                       {"mu_d", c.params.mu_d},
                       {"var_d", c.params.var_d},
                       {"mu_phi", c.params.mu_phi},
                       {"kappa_phi", c.params.kappa_phi}});
    }
    return out;
}

struct GroundArgs {
    std::string scene;
    std::string instruction;
    std::string mode = "fitted";
    std::string parser = "grammar";
    std::string model;
    int grid = 128;
};

int run_ground(const GroundArgs& a) {
    const SceneGraph scene = load_scene_file(a.scene);
    const auto estimator = make_estimator(parse_mode(a.mode), a.model);
    ParsedInstruction parsed;
    if (a.parser == "grammar") {
        parsed = parse_grammar(a.instruction);
    } else if (a.parser == "llm") {
        parsed = parse_llm(a.instruction, LlmClientConfig::from_env());
    } else {
        throw DomainError("--parser must be 'grammar' or 'llm'");
    }
    const auto tuples = to_relation_tuples(parsed);
    GridSpec grid;
    if (estimator.model() != nullptr) {
        grid = estimator.model()->config().workspace;
    }
    grid.resolution = a.grid;
    const auto g = ground_tuples(scene, tuples, estimator, grid);

    const TaskConfig checker;
    json per_relation = json::array();
    json mixtures = json::array();
    for (std::size_t i = 0; i < tuples.size(); ++i) {
        const auto& mix = g.mixtures[i];
        const auto w = mix.normalized_weights();
        const std::size_t top = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
        const ObjectNode& node = scene.node(mix.components[top].node_id);
        const auto peak = grid_argmax(g.fields[i]);
        json rel = {{"referent", tuples[i].ref_text},
                    {"predicate", tuples[i].pred_text},
                    {"node_id", node.id},
                    {"node_weight", w[top]},
                    {"field_argmax", {peak.location.x, peak.location.y}}};
        const auto& preds = benchmark_predicates();
        if (std::find(preds.begin(), preds.end(), tuples[i].pred_text) != preds.end()) {
            rel["satisfied"] = check_relation(g.argmax.location, node, tuples[i].pred_text, checker);
        }
        per_relation.push_back(std::move(rel));
        mixtures.push_back(mixture_json(mix, scene));
    }
    json targets = json::array();
    for (const auto& t : parsed.targets) {
        targets.push_back({t.referent, t.predicate});
    }
    const json out = {{"location", {g.argmax.location.x, g.argmax.location.y}},
                      {"score", g.argmax.score},
                      {"parsed", {{"action", parsed.action}, {"source", parsed.source}, {"target", targets}}},
                      {"per_relation", per_relation},
                      {"mixtures", mixtures}};
    std::cout << out.dump(2) << '\n';
    return kOk;
}

struct BenchArgs {
    std::size_t episodes = 300;
    std::string mode = "fitted";
    std::string parser = "grammar";
    std::string model;
    std::string out;
    std::string episodes_file;
    std::uint64_t seed = 7;
    int grid = 128;
    int relations_min = 1;
    int relations_max = 6;
    double duplicates = 0.05;
    bool timing = false;
};

int run_bench(const BenchArgs& a) {
    const auto estimator = make_estimator(parse_mode(a.mode), a.model);
    TaskConfig task = TaskConfig::testing(a.seed);
    task.relations = {a.relations_min, a.relations_max};
    task.duplicate_probability = a.duplicates;
    task.validate();
    BenchmarkOptions options;
    options.parser = parse_parser_kind(a.parser);
    options.grid_resolution = a.grid;
    options.timing = a.timing;
    options.llm = LlmClientConfig::from_env();

    BenchmarkReport report;
    if (!a.episodes_file.empty()) {
        const auto eps = read_episodes(a.episodes_file);
        report = evaluate_episodes(eps, estimator, task, options);
    } else {
        report = run_benchmark(a.episodes, estimator, task, options);
    }
    const std::string text = report_to_json(report, estimator, task, options).dump(2) + "\n";
    if (a.out.empty()) {
        std::cout << text;
    } else {
        write_text(a.out, text);
        std::cout << "episodes " << report.results.size() << "  success " << report.success_rate << "  mean score "
                  << report.mean_score << '\n';
    }
    return kOk;
}

struct GenerateArgs {
    std::size_t episodes = 200;
    std::uint64_t seed = 1;
    std::string split = "train";
    std::string out;
};

int run_generate(const GenerateArgs& a) {
    TaskConfig task;
    if (a.split == "train") {
        task = TaskConfig::training(a.seed);
    } else if (a.split == "test") {
        task = TaskConfig::testing(a.seed);
    } else {
        throw DomainError("--split must be 'train' or 'test'");
    }
    write_episodes(generate_episodes(task, a.episodes), a.out);
    return kOk;
}

struct TrainArgs {
    std::string data;
    std::string out;
    EstimatorConfig config;
    bool quiet = false;
};

int run_train(TrainArgs a) {
    const auto episodes = read_episodes(a.data);
    if (episodes.empty()) {
        throw DomainError(a.data + " holds no episodes");
    }
    const auto samples = episodes_to_samples(episodes);
    TrainProgress progress;
    if (!a.quiet) {
        progress = [&](int epoch, double loss) {
            std::cerr << "epoch " << (epoch + 1) << "/" << a.config.epochs << "  loss " << loss << '\n';
        };
    }
    const auto result = train(samples, a.config, progress);
    save_model(result.model, a.out);
    const double first = result.epoch_losses.empty() ? 0.0 : result.epoch_losses.front();
    const double last = result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back();
    std::cout << json{{"samples", samples.size()},
                      {"parameters", result.model.parameter_count()},
                      {"first_epoch_loss", first},
                      {"final_epoch_loss", last},
                      {"out", a.out}}
                     .dump()
              << '\n';
    return kOk;
}

int run_fit(const std::string& samples_path, const std::string& out) {
    const auto episodes = read_episodes(samples_path);
    const auto observations = episode_observations(episodes);
    const PredicateTable table = fit_predicate_table(observations);
    save_table(table, out);
    std::cout << json{{"observations", observations.size()}, {"out", out}}.dump() << '\n';
    return kOk;
}

struct ServeArgs {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string model;
    std::string journal;
    int grid = 128;
    bool llm_fallback = false;
};

int run_serve(const ServeArgs& a) {
    ServiceConfig config;
    config.resolution = a.grid;
    config.journal_path = a.journal;
    if (!a.model.empty()) {
        const json j = read_json_file(a.model);
        if (j.is_object() && j.value("format", "") == "grounding-estimator") {
            config.model = std::make_shared<const EstimatorModel>(model_from_json(j));
        } else {
            config.table = table_from_json(j);
        }
    }
    if (a.llm_fallback) {
        config.llm = LlmClientConfig::from_env();
    }
    SessionManager live(config);
    const std::size_t replayed = a.journal.empty() ? 0 : live.replay_journal(a.journal);

    httplib::Server server;
    register_routes(server, live);
    int port = a.port;
    if (port == 0) {
        port = server.bind_to_any_port(a.host);
    } else if (!server.bind_to_port(a.host, port)) {
        throw IoError("cannot bind " + a.host + ":" + std::to_string(port));
    }
    std::cout << json{{"listening", a.host + ":" + std::to_string(port)}, {"replayed", replayed}}.dump()
              << std::endl;
    server.listen_after_bind();
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Grounds spatial referring expressions to 2-D target locations."};
    app.require_subcommand(1);

    GroundArgs ground;
    auto* g = app.add_subcommand("ground", "Ground one instruction in a scene and print the result as JSON");
    g->add_option("--scene", ground.scene, "Scene JSON file")->required();
    g->add_option("--instruction", ground.instruction, "Instruction text")->required();
    g->add_option("--mode", ground.mode, "fitted or learned")->check(CLI::IsMember({"fitted", "learned"}));
    g->add_option("--parser", ground.parser, "grammar or llm")->check(CLI::IsMember({"grammar", "llm"}));
    g->add_option("--model", ground.model, "Trained model (learned) or predicate table (fitted)");
    g->add_option("--grid", ground.grid, "Grid cells per axis")->check(CLI::Range(2, 4096));
    std::uint64_t unused_seed = 0;
    g->add_option("--seed", unused_seed, "Accepted for symmetry with bench; grounding draws no random numbers");

    BenchArgs bench;
    auto* b = app.add_subcommand("bench", "Run the synthetic composite-instruction benchmark");
    b->add_option("--episodes", bench.episodes, "Number of generated episodes")->check(CLI::PositiveNumber);
    b->add_option("--mode", bench.mode, "fitted or learned")->check(CLI::IsMember({"fitted", "learned"}));
    b->add_option("--parser", bench.parser, "grammar, llm or oracle")
        ->check(CLI::IsMember({"grammar", "llm", "oracle"}));
    b->add_option("--model", bench.model, "Trained model (learned) or predicate table (fitted)");
    b->add_option("--seed", bench.seed, "Base seed");
    b->add_option("--out", bench.out, "Report file (stdout when omitted)");
    b->add_option("--episodes-file", bench.episodes_file, "Evaluate these episodes instead of generating");
    b->add_option("--grid", bench.grid, "Grid cells per axis")->check(CLI::Range(2, 4096));
    b->add_option("--relations-min", bench.relations_min, "Fewest relations per episode");
    b->add_option("--relations-max", bench.relations_max, "Most relations per episode");
    b->add_option("--duplicates", bench.duplicates, "Chance an object reuses an earlier name")
        ->check(CLI::Range(0.0, 1.0));
    b->add_flag("--timing", bench.timing, "Add mean wall time per episode to the report");

    GenerateArgs gen;
    auto* gn = app.add_subcommand("generate", "Write synthetic episodes as JSON lines");
    gn->add_option("--episodes", gen.episodes, "Number of episodes")->check(CLI::PositiveNumber);
    gn->add_option("--seed", gen.seed, "Base seed");
    gn->add_option("--split", gen.split, "train (1-3 relations) or test (1-6)")
        ->check(CLI::IsMember({"train", "test"}));
    gn->add_option("--out", gen.out, "Output file")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train the learned estimator on episode files");
    t->add_option("--data", tr.data, "Episodes (JSON lines)")->required();
    t->add_option("--out", tr.out, "Model file to write")->required();
    t->add_option("--epochs", tr.config.epochs, "Passes over the data")->check(CLI::NonNegativeNumber);
    t->add_option("--lambda", tr.config.lambda, "Loss mix")->check(CLI::Range(0.0, 1.0));
    t->add_option("--seed", tr.config.seed, "Initialization and shuffle seed");
    t->add_option("--hidden", tr.config.hidden, "Projected feature width D_H")->check(CLI::PositiveNumber);
    t->add_option("--layers", tr.config.layers, "GPS layers")->check(CLI::PositiveNumber);
    t->add_option("--frequencies", tr.config.max_frequency, "Positional encoding frequencies K")
        ->check(CLI::PositiveNumber);
    t->add_option("--heads", tr.config.attention_heads, "Attention heads")->check(CLI::PositiveNumber);
    t->add_option("--lr", tr.config.learning_rate, "Adam step size")->check(CLI::PositiveNumber);
    t->add_flag("--quiet", tr.quiet, "No per-epoch progress");

    std::string fit_samples;
    std::string fit_out;
    auto* f = app.add_subcommand("fit", "Fit per-predicate polar parameters from episodes");
    f->add_option("--samples", fit_samples, "Episodes (JSON lines)")->required();
    f->add_option("--out", fit_out, "Predicate table to write")->required();

    ServeArgs serve;
    auto* s = app.add_subcommand("serve", "Run the HTTP session service");
    s->add_option("--port", serve.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
    s->add_option("--host", serve.host, "Bind address");
    s->add_option("--model", serve.model, "Trained model or predicate table");
    s->add_option("--journal", serve.journal, "Append-only session journal; replayed at startup");
    s->add_option("--grid", serve.grid, "Default field resolution")->check(CLI::Range(16, 512));
    s->add_flag("--llm-fallback", serve.llm_fallback, "Ask the LLM backend when the grammar rejects an expression");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*g) return run_ground(ground);
        if (*b) return run_bench(bench);
        if (*gn) return run_generate(gen);
        if (*t) return run_train(tr);
        if (*f) return run_fit(fit_samples, fit_out);
        if (*s) return run_serve(serve);
    } catch (const Error& e) {
        return report_error(e.kind(), e.what(), e.detail(), exit_code_for(e.kind()));
    } catch (const std::exception& e) {
        return report_error("internal", e.what(), "", kInternal);
    }
    return kUsage;
}
