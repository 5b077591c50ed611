#include <cmath>
#include <random>
#include <set>

#include "doctest.h"

#include "grounding/errors.hpp"
#include "grounding/scene_graph.hpp"

using namespace grounding;
using nlohmann::json;

namespace {

ObjectNode object(int id, const std::string& name, double cx, double cy, double w, double h) {
    return {id, name, {cx, cy}, {cx, cy, w, h}, {}};
}

const Edge* find_edge(const SceneGraph& g, int s, int o) {
    for (const auto& e : g.edges) {
        if (e.subject_id == s && e.object_id == o) {
            return &e;
        }
    }
    return nullptr;
}

SceneGraph random_scene(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ObjectNode> objs;
    for (int i = 0; i < n; ++i) {
        const double cx = u(rng);
        const double cy = u(rng);
        objs.push_back(object(3 * i + 1, "obj " + std::to_string(i), cx, cy, 0.01 + 0.3 * u(rng), 0.01 + 0.3 * u(rng)));
    }
    return build_scene_graph(objs);
}

}  // namespace

TEST_CASE("derive_predicate examples") {
    const auto small = object(0, "a", 0.0, 0.0, 0.1, 0.1);
    const auto big = object(1, "b", 0.0, 0.0, 1.0, 1.0);
    CHECK(derive_predicate(small, big, 1.5) == std::optional<std::string>("in"));

    const auto p = object(0, "a", 0.0, 0.0, 1e-3, 1e-3);
    const auto q = object(1, "b", 10.0, 0.0, 1e-3, 1e-3);
    CHECK_FALSE(derive_predicate(p, q, 1.0).has_value());

    // Mean diagonal of two 0.1 x 0.1 boxes is sqrt(0.02) ~ 0.1414 > 0.14.
    const auto r = object(0, "a", 0.0, 0.0, 0.1, 0.1);
    const auto s = object(1, "b", 0.14, 0.0, 0.1, 0.1);
    CHECK(derive_predicate(r, s, 1.0) == std::optional<std::string>("near"));
    const auto t = object(1, "b", 0.142, 0.0, 0.1, 0.1);
    CHECK_FALSE(derive_predicate(r, t, 1.0).has_value());
}

TEST_CASE("derive_predicate counts the exact threshold as near") {
    // 3-4-5 boxes have diagonal 5 exactly; centers 5 apart on the x axis.
    const auto a = object(0, "a", 0.0, 0.0, 3.0, 4.0);
    const auto b = object(1, "b", 5.0, 0.0, 3.0, 4.0);
    CHECK(derive_predicate(a, b, 1.0) == std::optional<std::string>("near"));
    CHECK_FALSE(derive_predicate(a, b, 0.999).has_value());
}

TEST_CASE("containment is asymmetric") {
    const auto small = object(0, "a", 0.2, 0.1, 0.1, 0.1);
    const auto big = object(1, "b", 0.0, 0.0, 1.0, 1.0);
    CHECK(derive_predicate(small, big, 1.5) == std::optional<std::string>("in"));
    CHECK(derive_predicate(big, small, 1.5) == std::optional<std::string>("near"));
    CHECK(derive_predicate(big, small, 0.01) != std::optional<std::string>("in"));
}

TEST_CASE("build_scene_graph examples") {
    const auto one = build_scene_graph({object(4, "cup", 0.5, 0.5, 0.1, 0.1)});
    CHECK(one.size() == 1);
    CHECK(one.edges.empty());

    const auto two = build_scene_graph({object(0, "small", 0.0, 0.0, 0.1, 0.1), object(1, "big", 0.0, 0.0, 1.0, 1.0)});
    REQUIRE(two.edges.size() == 2);
    REQUIRE(find_edge(two, 0, 1) != nullptr);
    REQUIRE(find_edge(two, 1, 0) != nullptr);
    CHECK(find_edge(two, 0, 1)->predicate == "in");
    CHECK(find_edge(two, 1, 0)->predicate == "near");
    CHECK(find_edge(two, 0, 1)->feature == embed_text("in"));
    CHECK(adjacency(two) == std::vector<std::vector<int>>{{0, 1}, {1, 0}});

    std::vector<ObjectNode> far;
    for (int i = 0; i < 5; ++i) {
        far.push_back(object(i, "o", 10.0 * i, 0.0, 0.1, 0.1));
    }
    const auto g = build_scene_graph(far);
    CHECK(g.edges.empty());
    for (const auto& row : adjacency(g)) {
        for (int v : row) {
            CHECK(v == 0);
        }
    }
}

TEST_CASE("build_scene_graph fills viz from the name") {
    const auto g = build_scene_graph({object(2, "red bowl", 0.1, 0.1, 0.1, 0.1)});
    CHECK(g.node(2).viz == embed_text("red bowl"));
}

TEST_CASE("build_scene_graph rejects invalid objects") {
    CHECK_THROWS_AS(build_scene_graph({object(0, "a", 0, 0, 0.1, 0.1), object(0, "b", 1, 1, 0.1, 0.1)}), SchemaError);
    CHECK_THROWS_AS(build_scene_graph({object(0, "a", 0, 0, 0.0, 0.1)}), SchemaError);
    CHECK_THROWS_AS(build_scene_graph({object(0, "a", 0, 0, 0.1, -1.0)}), SchemaError);
    auto bad = object(0, "a", 0, 0, 0.1, 0.1);
    bad.viz = {1.0, 2.0};
    CHECK_THROWS_AS(build_scene_graph({bad}), SchemaError);
}

TEST_CASE("adjacency examples") {
    SceneGraph g;
    g.nodes[0] = object(0, "a", 0, 0, 1, 1);
    g.nodes[1] = object(1, "b", 5, 5, 1, 1);
    CHECK(adjacency(g) == std::vector<std::vector<int>>{{0, 0}, {0, 0}});
    g.edges.push_back({0, 1, "near", embed_text("near")});
    CHECK(adjacency(g) == std::vector<std::vector<int>>{{0, 1}, {0, 0}});
}

TEST_CASE("adjacency follows ascending id order") {
    SceneGraph g;
    g.nodes[7] = object(7, "a", 0, 0, 1, 1);
    g.nodes[2] = object(2, "b", 5, 5, 1, 1);
    g.edges.push_back({7, 2, "near", embed_text("near")});
    CHECK(g.index_of(2) == 0);
    CHECK(g.index_of(7) == 1);
    CHECK(adjacency(g) == std::vector<std::vector<int>>{{0, 0}, {1, 0}});
    CHECK_THROWS_AS(g.index_of(3), NotFoundError);
}

TEST_CASE("generated graphs satisfy the edge invariants") {
    std::mt19937_64 rng(31);
    for (int t = 0; t < 50; ++t) {
        const auto g = random_scene(rng, 2 + t % 9);
        const auto a = adjacency(g);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i][i] == 0);
        }
        std::set<std::pair<int, int>> pairs;
        for (const auto& e : g.edges) {
            CHECK(e.subject_id != e.object_id);
            CHECK(g.nodes.count(e.subject_id) == 1);
            CHECK(g.nodes.count(e.object_id) == 1);
            CHECK((e.predicate == "near" || e.predicate == "in"));
            CHECK(e.feature == embed_text(e.predicate));
            CHECK(pairs.insert({e.subject_id, e.object_id}).second);
            CHECK(a[static_cast<std::size_t>(g.index_of(e.subject_id))][static_cast<std::size_t>(g.index_of(e.object_id))] == 1);
            const auto expect = derive_predicate(g.node(e.subject_id), g.node(e.object_id), kDefaultNearFactor);
            CHECK(expect == std::optional<std::string>(e.predicate));
        }
    }
}

TEST_CASE("roundtrip_serialize examples") {
    CHECK(roundtrip_serialize(SceneGraph{}) == SceneGraph{});
    std::mt19937_64 rng(1);
    const auto g = random_scene(rng, 3);
    CHECK(roundtrip_serialize(g) == g);
}

TEST_CASE("roundtrip_serialize is the identity on random scenes") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    for (int t = 0; t < 40; ++t) {
        auto g = random_scene(rng, 1 + t % 8);
        // Awkward reals to exercise the decimal round trip.
        for (auto& [id, n] : g.nodes) {
            n.coord = {u(rng) / 3.0, std::nextafter(u(rng), 0.0)};
            n.viz[0] = 1.0 / 3.0;
        }
        CHECK(roundtrip_serialize(g) == g);
        CHECK(parse_scene(scene_to_json(g).dump()) == g);
    }
}

TEST_CASE("scene JSON schema") {
    const std::string text = R"({"nodes": {"0": {"name": "red box", "coord": [0.1, 0.2], "box": [0.1, 0.2, 0.1, 0.1]},
                                         "1": {"name": "tree", "coord": [0.15, 0.2], "box": [0.15, 0.2, 0.1, 0.1]}}})";
    const auto g = parse_scene(text);
    CHECK(g.size() == 2);
    CHECK(g.node(0).name == "red box");
    CHECK(g.node(0).viz == embed_text("red box"));
    REQUIRE(g.edges.size() == 2);

    const auto j = scene_to_json(g);
    CHECK(j["nodes"]["1"]["box"] == json::array({0.15, 0.2, 0.1, 0.1}));
    CHECK(j["edges"][0] == json::array({0, "near", 1}));

    // Explicit empty edges are kept as given.
    auto no_edges = json::parse(text);
    no_edges["edges"] = json::array();
    CHECK(scene_from_json(no_edges).edges.empty());
}

TEST_CASE("scene parse errors are diagnostic") {
    const std::string missing = R"({"nodes": {"0": {"name": "a", "coord": [0, 0], "box": [0, 0, 1, 1]}},
                                    "edges": [[0, "near", 5]]})";
    try {
        parse_scene(missing);
        FAIL("expected a schema error");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("5") != std::string::npos);
        CHECK(e.detail() == "edges[0]");
    }
    try {
        parse_scene("{\"nodes\": {\n  \"0\": [1, 2,\n}");
        FAIL("expected a schema error");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_scene(R"({"nodes": {"x": {}}})"), SchemaError);
    CHECK_THROWS_AS(parse_scene(R"({"nodes": {"0": {"name": "a", "coord": [0], "box": [0, 0, 1, 1]}}})"), SchemaError);
    CHECK_THROWS_AS(parse_scene(R"({"nodes": {"0": {"name": "a", "coord": [0, 0], "box": [0, 0, 1, 1]},
                                               "1": {"name": "b", "coord": [0, 0], "box": [0, 0, 1, 1]}},
                                    "edges": [[0, "on", 1]]})"),
                    SchemaError);
    CHECK_THROWS_AS(load_scene_file("/nonexistent/scene.json"), IoError);
}

TEST_CASE("describe_offset reports line and column") {
    CHECK(describe_offset("ab\ncd", 4) == "line 2, column 2");
    CHECK(describe_offset("abc", 0) == "line 1, column 1");
}

TEST_CASE("Box geometry") {
    const Box b{0.0, 0.0, 3.0, 4.0};
    CHECK(b.diagonal() == doctest::Approx(5.0));
    CHECK(b.contains({0.5, 0.5, 1.0, 1.0}));
    CHECK_FALSE(b.contains({1.4, 0.0, 1.0, 1.0}));
    CHECK(b.contains(b));
    // Identical boxes are not "in" each other.
    const ObjectNode u{0, "a", {0, 0}, b, {}};
    const ObjectNode v{1, "b", {0, 0}, b, {}};
    CHECK(derive_predicate(u, v, 1.5) == std::optional<std::string>("near"));
}
