#include "grounding/scene_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "grounding/errors.hpp"

namespace grounding {

using nlohmann::json;

double Box::diagonal() const {
    return std::hypot(w, h);
}

bool Box::contains(const Box& inner) const {
    return inner.cx - 0.5 * inner.w >= cx - 0.5 * w && inner.cx + 0.5 * inner.w <= cx + 0.5 * w &&
           inner.cy - 0.5 * inner.h >= cy - 0.5 * h && inner.cy + 0.5 * inner.h <= cy + 0.5 * h;
}

std::vector<const ObjectNode*> SceneGraph::ordered_nodes() const {
    std::vector<const ObjectNode*> out;
    out.reserve(nodes.size());
    for (const auto& [id, n] : nodes) {
        out.push_back(&n);
    }
    return out;
}

int SceneGraph::index_of(int id) const {
    auto it = nodes.find(id);
    if (it == nodes.end()) {
        throw NotFoundError("scene has no node with id " + std::to_string(id));
    }
    return static_cast<int>(std::distance(nodes.begin(), it));
}

const ObjectNode& SceneGraph::node(int id) const {
    auto it = nodes.find(id);
    if (it == nodes.end()) {
        throw NotFoundError("scene has no node with id " + std::to_string(id));
    }
    return it->second;
}

std::optional<std::string> derive_predicate(const ObjectNode& u, const ObjectNode& v, double near_factor) {
    if (u.box.w * u.box.h < v.box.w * v.box.h && v.box.contains(u.box)) {
        return "in";
    }
    const double dist = std::hypot(u.box.cx - v.box.cx, u.box.cy - v.box.cy);
    const double threshold = near_factor * 0.5 * (u.box.diagonal() + v.box.diagonal());
    if (dist <= threshold) {
        return "near";
    }
    return std::nullopt;
}

namespace {

void validate_node(ObjectNode& n) {
    if (!(n.box.w > 0.0) || !(n.box.h > 0.0)) {
        throw SchemaError("node " + std::to_string(n.id) + ": box width and height must be positive");
    }
    if (!std::isfinite(n.coord.x) || !std::isfinite(n.coord.y) || !std::isfinite(n.box.cx) ||
        !std::isfinite(n.box.cy)) {
        throw SchemaError("node " + std::to_string(n.id) + ": coordinates must be finite");
    }
    if (n.viz.empty()) {
        n.viz = embed_text(n.name);
    } else if (n.viz.size() != static_cast<std::size_t>(kTextDim)) {
        throw SchemaError("node " + std::to_string(n.id) + ": viz must have " + std::to_string(kTextDim) +
                          " entries");
    }
}

bool valid_edge_predicate(const std::string& p) {
    return p == "near" || p == "in";
}

}  // namespace

SceneGraph build_scene_graph(std::vector<ObjectNode> objects, double near_factor) {
    SceneGraph g;
    for (auto& n : objects) {
        validate_node(n);
        const int id = n.id;
        if (id < 0) {
            throw SchemaError("node ids must be non-negative");
        }
        if (!g.nodes.emplace(id, std::move(n)).second) {
            throw SchemaError("duplicate node id " + std::to_string(id));
        }
    }
    for (const auto& [uid, u] : g.nodes) {
        for (const auto& [vid, v] : g.nodes) {
            if (uid == vid) {
                continue;
            }
            if (auto pred = derive_predicate(u, v, near_factor)) {
                g.edges.push_back({uid, vid, *pred, embed_text(*pred)});
            }
        }
    }
    return g;
}

std::vector<std::vector<int>> adjacency(const SceneGraph& graph) {
    const std::size_t n = graph.size();
    std::vector<std::vector<int>> a(n, std::vector<int>(n, 0));
    for (const auto& e : graph.edges) {
        a[graph.index_of(e.subject_id)][graph.index_of(e.object_id)] = 1;
    }
    return a;
}

json scene_to_json(const SceneGraph& graph) {
    json nodes = json::object();
    for (const auto& [id, n] : graph.nodes) {
        nodes[std::to_string(id)] = {
            {"name", n.name},
            {"coord", {n.coord.x, n.coord.y}},
            {"box", {n.box.cx, n.box.cy, n.box.w, n.box.h}},
            {"viz", n.viz},
        };
    }
    json edges = json::array();
    for (const auto& e : graph.edges) {
        edges.push_back({e.subject_id, e.predicate, e.object_id});
    }
    return {{"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

namespace {

std::vector<double> read_numbers(const json& j, const std::string& field, std::size_t expected) {
    if (!j.is_array() || (expected != 0 && j.size() != expected)) {
        throw SchemaError(field + ": expected an array of " + std::to_string(expected) + " numbers", field);
    }
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& v : j) {
        if (!v.is_number()) {
            throw SchemaError(field + ": expected numbers", field);
        }
        out.push_back(v.get<double>());
    }
    return out;
}

int parse_id(const std::string& key) {
    std::size_t used = 0;
    int id = -1;
    try {
        id = std::stoi(key, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != key.size() || id < 0 || key.empty()) {
        throw SchemaError("nodes: key '" + key + "' is not a non-negative integer id", "nodes." + key);
    }
    return id;
}

}  // namespace

SceneGraph scene_from_json(const json& j, double near_factor) {
    if (!j.is_object() || !j.contains("nodes") || !j["nodes"].is_object()) {
        throw SchemaError("scene: expected an object with a \"nodes\" map", "nodes");
    }
    std::vector<ObjectNode> objects;
    for (const auto& [key, value] : j["nodes"].items()) {
        const std::string field = "nodes." + key;
        ObjectNode n;
        n.id = parse_id(key);
        if (!value.is_object()) {
            throw SchemaError(field + ": expected an object", field);
        }
        if (!value.contains("name") || !value["name"].is_string()) {
            throw SchemaError(field + ".name: expected a string", field + ".name");
        }
        n.name = value["name"].get<std::string>();
        if (!value.contains("box")) {
            throw SchemaError(field + ".box: missing", field + ".box");
        }
        const auto box = read_numbers(value["box"], field + ".box", 4);
        n.box = {box[0], box[1], box[2], box[3]};
        if (value.contains("coord")) {
            const auto c = read_numbers(value["coord"], field + ".coord", 2);
            n.coord = {c[0], c[1]};
        } else {
            n.coord = {n.box.cx, n.box.cy};
        }
        if (value.contains("viz") && !value["viz"].is_null()) {
            n.viz = read_numbers(value["viz"], field + ".viz", kTextDim);
        }
        objects.push_back(std::move(n));
    }

    if (!j.contains("edges")) {
        return build_scene_graph(std::move(objects), near_factor);
    }

    SceneGraph g;
    for (auto& n : objects) {
        validate_node(n);
        const int id = n.id;
        if (!g.nodes.emplace(id, std::move(n)).second) {
            throw SchemaError("duplicate node id " + std::to_string(id), "nodes");
        }
    }
    const auto& edges = j["edges"];
    if (!edges.is_array()) {
        throw SchemaError("edges: expected an array of [subject, predicate, object] triplets", "edges");
    }
    std::set<std::pair<int, int>> seen;
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const std::string field = "edges[" + std::to_string(i) + "]";
        const auto& e = edges[i];
        if (!e.is_array() || e.size() != 3 || !e[0].is_number_integer() || !e[1].is_string() ||
            !e[2].is_number_integer()) {
            throw SchemaError(field + ": expected [subject_id, predicate, object_id]", field);
        }
        Edge edge;
        edge.subject_id = e[0].get<int>();
        edge.predicate = e[1].get<std::string>();
        edge.object_id = e[2].get<int>();
        for (int id : {edge.subject_id, edge.object_id}) {
            if (!g.nodes.contains(id)) {
                throw SchemaError(field + ": references missing node id " + std::to_string(id), field);
            }
        }
        if (edge.subject_id == edge.object_id) {
            throw SchemaError(field + ": self-loop on node " + std::to_string(edge.subject_id), field);
        }
        if (!valid_edge_predicate(edge.predicate)) {
            throw SchemaError(field + ": unknown edge predicate '" + edge.predicate + "'", field);
        }
        if (!seen.emplace(edge.subject_id, edge.object_id).second) {
            throw SchemaError(field + ": more than one edge for the same ordered pair", field);
        }
        edge.feature = embed_text(edge.predicate);
        g.edges.push_back(std::move(edge));
    }
    return g;
}

std::string describe_offset(std::string_view text, std::size_t byte) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

SceneGraph parse_scene(std::string_view text, double near_factor) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError("scene: malformed JSON at " + describe_offset(text, e.byte == 0 ? 0 : e.byte - 1),
                          e.what());
    }
    return scene_from_json(j, near_factor);
}

SceneGraph load_scene_file(const std::string& path, double near_factor) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read scene file " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scene(ss.str(), near_factor);
}

SceneGraph roundtrip_serialize(const SceneGraph& graph) {
    return parse_scene(scene_to_json(graph).dump());
}

}  // namespace grounding
