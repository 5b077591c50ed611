#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"

#include "grounding/benchmark.hpp"
#include "grounding/errors.hpp"

using namespace grounding;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ObjectNode object(int id, const std::string& name, double x, double y, double w = 0.1, double h = 0.1) {
    return {id, name, {x, y}, {x, y, w, h}, {}};
}

fs::path scratch_file(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "grounding_tests";
    fs::create_directories(dir);
    return dir / name;
}

// Straight from the checker definitions, written independently.
bool oracle(Point x, const ObjectNode& n, const std::string& pred, const TaskConfig& c) {
    const double dx = x.x - n.coord.x, dy = x.y - n.coord.y;
    const double diag = std::sqrt(n.box.w * n.box.w + n.box.h * n.box.h);
    const double dist = std::sqrt(dx * dx + dy * dy);
    std::set<std::string> holds;
    if (dx < -c.margin) holds.insert("left");
    if (dx > c.margin) holds.insert("right");
    if (dy > c.margin) holds.insert("above");
    if (dy < -c.margin) holds.insert("below");
    for (const char* h : {"left", "right"}) {
        for (const char* v : {"above", "below"}) {
            if (holds.contains(h) && holds.contains(v)) holds.insert(std::string(h) + " " + v);
        }
    }
    if (dist <= c.close_max * diag) holds.insert("close");
    if (dist >= c.far_min * diag) holds.insert("far");
    return holds.contains(pred);
}

Episode three_relation_episode() {
    Episode ep;
    ep.scene = build_scene_graph({object(0, "red cube", 0.5, 0.5), object(1, "blue bowl", 0.2, 0.8)});
    ep.truth = {"put", "green cup", {{"red cube", "left"}, {"red cube", "below"}, {"blue bowl", "right"}}};
    ep.referenced = {0, 0, 1};
    ep.instruction = "put the green cup left of the red cube, below the red cube and right of the blue bowl";
    ep.x_des = {0.4, 0.4};
    return ep;
}

}  // namespace

TEST_CASE("check_relation examples") {
    TaskConfig c;
    c.margin = 0.05;
    const auto n = object(0, "box", 0.5, 0.5);
    CHECK(check_relation({0.2, 0.5}, n, "left", c));
    CHECK_FALSE(check_relation({0.2, 0.5}, n, "right", c));
    CHECK(check_relation({0.7, 0.7}, n, "right above", c));

    // Square box with diagonal 0.14.
    const double side = 0.14 / std::sqrt(2.0);
    const auto m = object(0, "box", 0.5, 0.5, side, side);
    const TaskConfig d;
    CHECK(m.box.diagonal() == doctest::Approx(0.14));
    CHECK(check_relation({0.77, 0.5}, m, "close", d));
    CHECK_FALSE(check_relation({0.77, 0.5}, m, "far", d));
    CHECK_FALSE(check_relation({0.5 + 0.29, 0.5}, m, "close", d));
    CHECK(check_relation({0.5 + 0.57, 0.5}, m, "far", d));
}

TEST_CASE("check_relation rejects unknown predicates") {
    const TaskConfig c;
    const auto n = object(0, "box", 0.5, 0.5);
    CHECK_THROWS_AS(check_relation({0, 0}, n, "inside", c), DomainError);
    CHECK_THROWS_AS(check_relation({0, 0}, n, "front", c), DomainError);
    CHECK_THROWS_AS(check_relation({0, 0}, n, "Left", c), DomainError);
}

TEST_CASE("check_relation matches the oracle on random points") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_real_distribution<double> side(0.05, 0.15);
    TaskConfig c;
    for (int i = 0; i < 3000; ++i) {
        c.margin = i % 3 == 0 ? 0.0 : 0.02;
        const auto n = object(0, "box", u(rng), u(rng), side(rng), side(rng));
        const Point x{u(rng), u(rng)};
        for (const auto& p : benchmark_predicates()) {
            REQUIRE_MESSAGE(check_relation(x, n, p, c) == oracle(x, n, p, c), p);
        }
    }
}

TEST_CASE("axis tests are mutually exclusive") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    const TaskConfig c;
    const auto n = object(0, "box", 0.0, 0.0);
    for (int i = 0; i < 5000; ++i) {
        const Point x{u(rng), u(rng)};
        CHECK_FALSE((check_relation(x, n, "left", c) && check_relation(x, n, "right", c)));
        CHECK_FALSE((check_relation(x, n, "above", c) && check_relation(x, n, "below", c)));
    }
    // Inside the margin band nothing directional holds.
    for (const auto& p : {"left", "right", "above", "below", "left above", "right below"}) {
        CHECK_FALSE(check_relation({0.02, -0.02}, n, p, c));
    }
}

TEST_CASE("task config validation") {
    CHECK_NOTHROW(TaskConfig{}.validate());
    CHECK(TaskConfig::training(1).relations == IntRange{1, 3});
    CHECK(TaskConfig::testing(1).relations == IntRange{1, 6});
    CHECK(TaskConfig::training(1).duplicate_probability == 0.0);

    auto bad = [](auto mutate) {
        TaskConfig c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), DomainError);
    };
    bad([](TaskConfig& c) { c.relations = {0, 3}; });
    bad([](TaskConfig& c) { c.relations = {3, 2}; });
    bad([](TaskConfig& c) { c.objects = {0, 2}; });
    bad([](TaskConfig& c) { c.close_max = 5.0; });
    bad([](TaskConfig& c) { c.close_max = 0.0; });
    bad([](TaskConfig& c) { c.margin = -0.1; });
    bad([](TaskConfig& c) { c.box_max = 1.5; });
    bad([](TaskConfig& c) { c.duplicate_probability = 1.5; });
    bad([](TaskConfig& c) { c.max_rejections = 0; });
}

TEST_CASE("single left relation puts x_des strictly left") {
    TaskConfig c;
    c.relations = {1, 1};
    int seen = 0;
    for (std::uint64_t s = 0; s < 400 && seen < 10; ++s) {
        std::mt19937_64 rng(s);
        const auto ep = generate_episode(c, rng);
        REQUIRE(ep.truth.targets.size() == 1);
        if (ep.truth.targets[0].predicate != "left") continue;
        ++seen;
        const auto& ref = ep.scene.node(ep.referenced[0]);
        CHECK(ep.x_des.x < ref.coord.x - c.margin);
    }
    CHECK(seen == 10);
}

TEST_CASE("300 test episodes at seed 7 are self-consistent") {
    const auto c = TaskConfig::testing(7);
    const auto eps = generate_episodes(c, 300);
    REQUIRE(eps.size() == 300);
    std::set<int> counts;
    bool duplicate_names = false;
    for (const auto& ep : eps) {
        const int k = static_cast<int>(ep.truth.targets.size());
        counts.insert(k);
        CHECK(k >= 1);
        CHECK(k <= 6);
        CHECK(ep.scene.size() >= 2);
        CHECK(ep.scene.size() <= 7);
        CHECK(score_grounding(ep.x_des, ep, c) == 1.0);
        for (std::size_t i = 0; i < ep.referenced.size(); ++i) {
            const auto& n = ep.scene.node(ep.referenced[i]);
            CHECK(oracle(ep.x_des, n, ep.truth.targets[i].predicate, c));
            CHECK(n.name == ep.truth.targets[i].referent);
        }
        // Distinct (node, predicate) pairs, so no pair repeats.
        std::set<std::pair<int, std::string>> pairs;
        for (std::size_t i = 0; i < ep.referenced.size(); ++i) {
            pairs.insert({ep.referenced[i], ep.truth.targets[i].predicate});
        }
        CHECK(pairs.size() == ep.referenced.size());
        // Contradictory pairs on one node never survive rejection.
        for (const auto& [node, pred] : pairs) {
            if (pred == "left") CHECK_FALSE(pairs.contains({node, "right"}));
            if (pred == "above") CHECK_FALSE(pairs.contains({node, "below"}));
            if (pred == "close") CHECK_FALSE(pairs.contains({node, "far"}));
        }
        // Boxes do not overlap and stay inside the workspace.
        const auto nodes = ep.scene.ordered_nodes();
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const Box& a = nodes[i]->box;
            CHECK(a.cx - a.w / 2 >= 0.0);
            CHECK(a.cx + a.w / 2 <= 1.0);
            CHECK(a.cy - a.h / 2 >= 0.0);
            CHECK(a.cy + a.h / 2 <= 1.0);
            for (std::size_t j = i + 1; j < nodes.size(); ++j) {
                const Box& b = nodes[j]->box;
                CHECK_FALSE((std::abs(a.cx - b.cx) < (a.w + b.w) / 2 && std::abs(a.cy - b.cy) < (a.h + b.h) / 2));
                duplicate_names = duplicate_names || nodes[i]->name == nodes[j]->name;
            }
        }
        // The generator only emits what the grammar parser reads back.
        CHECK(parse_grammar(ep.instruction) == ep.truth);
    }
    CHECK(counts == std::set<int>{1, 2, 3, 4, 5, 6});
    CHECK(duplicate_names);
}

TEST_CASE("training episodes use unique names and 1-3 relations") {
    const auto c = TaskConfig::training(2);
    for (const auto& ep : generate_episodes(c, 150)) {
        CHECK(ep.truth.targets.size() <= 3);
        std::set<std::string> names;
        for (const auto* n : ep.scene.ordered_nodes()) names.insert(n->name);
        CHECK(names.size() == ep.scene.size());
    }
}

TEST_CASE("relation counts are uniform over the configured range") {
    const auto eps = generate_episodes(TaskConfig::testing(13), 1200);
    std::vector<int> hist(7, 0);
    for (const auto& ep : eps) ++hist[ep.truth.targets.size()];
    for (int k = 1; k <= 6; ++k) {
        // 200 expected; binomial sd about 13.
        CHECK_MESSAGE(std::abs(hist[static_cast<std::size_t>(k)] - 200) < 60, "k = " << k);
    }
}

TEST_CASE("generation is deterministic per seed and index") {
    const auto c = TaskConfig::testing(9);
    const auto a = generate_episodes(c, 20);
    const auto b = generate_episodes(c, 40);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(episode_to_json(a[i]) == episode_to_json(b[i]));
    }
    CHECK(episode_seed(9, 0) != episode_seed(9, 1));
    CHECK(episode_seed(9, 0) != episode_seed(10, 0));
    CHECK(episode_seed(9, 3) == episode_seed(9, 3));
    CHECK(episode_to_json(generate_episodes(TaskConfig::testing(10), 1)[0]) != episode_to_json(a[0]));
}

TEST_CASE("a too-tight config raises a generation error") {
    TaskConfig c;
    c.objects = {7, 7};
    c.box_min = 0.4;
    c.box_max = 0.45;
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(generate_episode(c, rng), GenerationError);

    TaskConfig d;
    d.objects = {1, 1};
    d.relations = {11, 11};  // one node offers only ten predicates
    d.max_rejections = 20;
    CHECK_THROWS_AS(generate_episode(d, rng), GenerationError);
}

TEST_CASE("score_grounding examples") {
    const TaskConfig c;
    const auto ep = three_relation_episode();
    CHECK(score_grounding(ep.x_des, ep, c) == 1.0);
    // Left and below the cube but left of the bowl too.
    CHECK(score_grounding({0.1, 0.4}, ep, c) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(score_grounding({0.1, 0.4}, ep, c) == doctest::Approx(0.6667).epsilon(1e-4));
    CHECK(score_grounding({0.9, 0.9}, ep, c) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("episode JSON lines round trip") {
    const auto eps = generate_episodes(TaskConfig::testing(4), 25);
    const auto path = scratch_file("episodes.jsonl").string();
    write_episodes(eps, path);
    const auto back = read_episodes(path);
    REQUIRE(back.size() == eps.size());
    for (std::size_t i = 0; i < eps.size(); ++i) {
        CHECK(back[i].scene == eps[i].scene);
        CHECK(back[i].instruction == eps[i].instruction);
        CHECK(back[i].truth == eps[i].truth);
        CHECK(back[i].referenced == eps[i].referenced);
        CHECK(back[i].x_des == eps[i].x_des);
    }
}

TEST_CASE("episode file errors name the line") {
    const auto path = scratch_file("bad_episodes.jsonl").string();
    {
        std::ofstream out(path);
        out << episode_to_json(three_relation_episode()).dump() << "\n\n{not json\n";
    }
    try {
        read_episodes(path);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }

    auto j = episode_to_json(three_relation_episode());
    j["referenced"] = {0, 0};
    CHECK_THROWS_AS(episode_from_json(j), SchemaError);
    j["referenced"] = {0, 0, 9};
    CHECK_THROWS_AS(episode_from_json(j), SchemaError);
    j.erase("x_des");
    CHECK_THROWS_AS(episode_from_json(j), SchemaError);
    CHECK_THROWS_AS(episode_from_json(json::array()), SchemaError);
    CHECK_THROWS_AS(read_episodes(scratch_file("missing.jsonl").string()), IoError);
}

TEST_CASE("episodes become training samples and observations") {
    const auto ep = three_relation_episode();
    const auto s = episode_to_sample(ep);
    REQUIRE(s.tuples.size() == 3);
    REQUIRE(s.w_des.size() == 3);
    CHECK(s.w_des[0] == std::vector<double>{1.0, 0.0});
    CHECK(s.w_des[2] == std::vector<double>{0.0, 1.0});
    for (const auto& x : s.x_des) CHECK(x == ep.x_des);

    const std::vector<Episode> eps{ep};
    const auto obs = episode_observations(eps);
    REQUIRE(obs.size() == 3);
    CHECK(obs[0].predicate == "left");
    const double diag = std::sqrt(0.02);
    CHECK(obs[0].d_over_diag == doctest::Approx(std::hypot(0.1, 0.1) / diag));
    CHECK(obs[0].phi == doctest::Approx(-3 * M_PI / 4));
    CHECK(obs[2].d_over_diag == doctest::Approx(std::hypot(0.2, 0.4) / diag));
    CHECK(obs[2].phi == doctest::Approx(std::atan2(-0.4, 0.2)));
}

TEST_CASE("parser kinds") {
    CHECK(parse_parser_kind("grammar") == ParserKind::Grammar);
    CHECK(parse_parser_kind("llm") == ParserKind::Llm);
    CHECK(parse_parser_kind("oracle") == ParserKind::Oracle);
    CHECK_THROWS_AS(parse_parser_kind("gpt"), DomainError);
    for (auto k : {ParserKind::Grammar, ParserKind::Llm, ParserKind::Oracle}) {
        CHECK(parse_parser_kind(to_string(k)) == k);
    }
}

TEST_CASE("benchmark reports are deterministic and have rows 1 to 6") {
    const auto c = TaskConfig::training(3);
    const auto est = SpatialEstimator::fitted();
    BenchmarkOptions opt;
    opt.grid_resolution = 48;
    const auto a = run_benchmark(30, est, c, opt);
    const auto b = run_benchmark(30, est, c, opt);
    const auto ja = report_to_json(a, est, c, opt).dump();
    CHECK(ja == report_to_json(b, est, c, opt).dump());
    CHECK(ja.find("mean_seconds") == std::string::npos);

    REQUIRE(a.by_relation_count.size() == 6);
    int total = 0;
    for (int k = 1; k <= 6; ++k) {
        const auto& row = a.by_relation_count[static_cast<std::size_t>(k - 1)];
        CHECK(row.relations == k);
        total += row.episodes;
        if (k > 3) CHECK(row.episodes == 0);
    }
    CHECK(total == 30);
    const auto j = json::parse(ja);
    CHECK(j["by_relation_count"][5]["success_rate"].is_null());
    CHECK(j["episodes"] == 30);
    CHECK(j["mode"] == "fitted");
    CHECK(j["task"]["seed"] == 3);

    double mean = 0.0;
    int ok = 0;
    for (const auto& r : a.results) {
        mean += r.score;
        ok += r.score == 1.0;
        CHECK(r.score >= 0.0);
        CHECK(r.score <= 1.0);
    }
    CHECK(a.mean_score == doctest::Approx(mean / 30));
    CHECK(a.success_rate == doctest::Approx(ok / 30.0));
    CHECK(a.success_between(1, 6) == doctest::Approx(a.success_rate));

    opt.timing = true;
    const auto timed = report_to_json(a, est, c, opt);
    CHECK(timed.contains("mean_seconds_per_episode"));
    CHECK_THROWS_AS(run_benchmark(0, est, c, opt), DomainError);
}

TEST_CASE("grammar, oracle and replayed LLM parsing agree") {
    const auto c = TaskConfig::testing(21);
    const auto eps = generate_episodes(c, 20);
    const auto est = SpatialEstimator::fitted();
    BenchmarkOptions opt;
    opt.grid_resolution = 48;
    const auto grammar = evaluate_episodes(eps, est, c, opt);
    opt.parser = ParserKind::Oracle;
    const auto oracle_report = evaluate_episodes(eps, est, c, opt);

    LlmClientConfig llm;
    ReplayTransport replay(replay_transcript(eps, llm));
    opt.parser = ParserKind::Llm;
    opt.llm = llm;
    opt.transport = &replay;
    const auto replayed = evaluate_episodes(eps, est, c, opt);
    for (std::size_t i = 0; i < eps.size(); ++i) {
        CHECK(grammar.results[i].location == oracle_report.results[i].location);
        CHECK(replayed.results[i].location == oracle_report.results[i].location);
    }
}

TEST_CASE("episode failures abort with context") {
    auto ep = three_relation_episode();
    ep.instruction = "put the cup over the moon";
    const std::vector<Episode> eps{three_relation_episode(), ep};
    const TaskConfig c;
    BenchmarkOptions opt;
    opt.grid_resolution = 32;
    try {
        evaluate_episodes(eps, SpatialEstimator::fitted(), c, opt);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("episode 1") != std::string::npos);
        CHECK(std::string(e.kind()) == "parse");
    }
}
