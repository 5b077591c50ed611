#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "grounding/polar.hpp"
#include "grounding/text_embed.hpp"

namespace grounding {

inline constexpr double kDefaultNearFactor = 1.5;

/// Axis-aligned box given by its center and extent.
struct Box {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    double diagonal() const;
    bool contains(const Box& inner) const;

    friend bool operator==(const Box&, const Box&) = default;
};

struct ObjectNode {
    int id = 0;
    std::string name;
    Point coord;
    Box box;
    Embedding viz;

    friend bool operator==(const ObjectNode&, const ObjectNode&) = default;
};

struct Edge {
    int subject_id = 0;
    int object_id = 0;
    std::string predicate;
    Embedding feature;

    friend bool operator==(const Edge&, const Edge&) = default;
};

struct SceneGraph {
    std::map<int, ObjectNode> nodes;
    std::vector<Edge> edges;

    std::size_t size() const { return nodes.size(); }
    /// Nodes in ascending id order; this is the node order everywhere else.
    std::vector<const ObjectNode*> ordered_nodes() const;
    /// Position of id in ascending-id order; throws NotFoundError.
    int index_of(int id) const;
    const ObjectNode& node(int id) const;

    friend bool operator==(const SceneGraph&, const SceneGraph&) = default;
};

/// "in" when u's box lies inside v's (and is smaller); otherwise "near" when
/// the center distance is at most near_factor times the mean box diagonal.
std::optional<std::string> derive_predicate(const ObjectNode& u, const ObjectNode& v, double near_factor);

/// Validates the objects (unique ids, positive extents, viz width), fills
/// missing viz features from the object names, and derives all edges.
SceneGraph build_scene_graph(std::vector<ObjectNode> objects, double near_factor = kDefaultNearFactor);

/// Row/column order is ascending node id.
std::vector<std::vector<int>> adjacency(const SceneGraph& graph);

nlohmann::json scene_to_json(const SceneGraph& graph);
/// Parses the scene schema. When "edges" is absent they are derived with
/// near_factor. Throws SchemaError naming the offending field.
SceneGraph scene_from_json(const nlohmann::json& j, double near_factor = kDefaultNearFactor);
/// Like scene_from_json but from text; syntax errors report line and column.
SceneGraph parse_scene(std::string_view text, double near_factor = kDefaultNearFactor);
SceneGraph load_scene_file(const std::string& path, double near_factor = kDefaultNearFactor);

SceneGraph roundtrip_serialize(const SceneGraph& graph);

/// Line/column of a byte offset, for diagnostics.
std::string describe_offset(std::string_view text, std::size_t byte);

}  // namespace grounding
