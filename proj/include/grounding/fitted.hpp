#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>

#include "json.hpp"

#include "grounding/parser.hpp"
#include "grounding/polar.hpp"
#include "grounding/scene_graph.hpp"

namespace grounding {

inline constexpr double kReferentTemperature = 0.1;

/// Per-predicate polar parameters for a node whose box diagonal is 1.
/// Distances scale linearly with the diagonal, variances quadratically.
class PredicateTable {
public:
    /// Default parameters; each mode lies inside its checker region.
    static PredicateTable canonical();

    PolarParams params_for(std::string_view predicate, double diag) const;
    const std::map<std::string, PolarParams, std::less<>>& entries() const { return unit_; }
    void set(const std::string& predicate, const PolarParams& unit_params);

    friend bool operator==(const PredicateTable&, const PredicateTable&) = default;

private:
    std::map<std::string, PolarParams, std::less<>> unit_;
};

/// canonical().params_for(predicate, diag).
PolarParams canonical_params(std::string_view predicate, double diag);

/// Softmax over nodes of cosine(f_ref, viz_j) / temperature.
std::vector<double> referent_weights(const SceneGraph& scene, std::span<const double> f_ref,
                                     double temperature = kReferentTemperature);

SpatialMixture fitted_mixture(const SceneGraph& scene, const RelationTuple& tuple,
                              const PredicateTable& table = PredicateTable::canonical(),
                              double temperature = kReferentTemperature);

/// One observed goal location relative to its referenced node, with the
/// distance already divided by the node's box diagonal.
struct PredicateObservation {
    std::string predicate;
    double d_over_diag = 0.0;
    double phi = 0.0;
};

/// MLE fit per predicate; predicates with fewer than two observations keep
/// their canonical parameters.
PredicateTable fit_predicate_table(std::span<const PredicateObservation> observations);

nlohmann::json table_to_json(const PredicateTable& table);
PredicateTable table_from_json(const nlohmann::json& j);
void save_table(const PredicateTable& table, const std::string& path);
PredicateTable load_table(const std::string& path);

}  // namespace grounding
