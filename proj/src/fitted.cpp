#include "grounding/fitted.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "grounding/errors.hpp"

namespace grounding {

using nlohmann::json;

PredicateTable PredicateTable::canonical() {
    // Units of the referent's box diagonal. Tuned against the benchmark
    // checkers on training-split episodes.
    PredicateTable t;
    auto axis = [&](const char* name, double angle) { t.unit_[name] = {4.3, 3.6 * 3.6, angle, 1.1}; };
    auto diagonal = [&](const char* name, double angle) { t.unit_[name] = {3.8, 3.0 * 3.0, angle, 2.3}; };
    axis("left", kPi);
    axis("right", 0.0);
    axis("above", kPi / 2);
    axis("below", -kPi / 2);
    diagonal("left above", 3 * kPi / 4);
    diagonal("right above", kPi / 4);
    diagonal("left below", -3 * kPi / 4);
    diagonal("right below", -kPi / 4);
    // front reads as below and behind as above in the top-down frame.
    axis("front", -kPi / 2);
    axis("behind", kPi / 2);
    t.unit_["close"] = {0.9, 1.15 * 1.15, 0.0, 0.0};
    t.unit_["far"] = {8.25, 2.6 * 2.6, 0.0, 0.0};
    return t;
}

PolarParams PredicateTable::params_for(std::string_view predicate, double diag) const {
    if (!(diag > 0.0) || !std::isfinite(diag)) {
        throw DomainError("box diagonal must be positive and finite");
    }
    const auto it = unit_.find(predicate);
    if (it == unit_.end()) {
        throw DomainError("no polar parameters for predicate '" + std::string(predicate) + "'");
    }
    const PolarParams& u = it->second;
    return PolarParams{u.mu_d * diag, u.var_d * diag * diag, u.mu_phi, u.kappa_phi}.sanitized();
}

void PredicateTable::set(const std::string& predicate, const PolarParams& unit_params) {
    unit_[predicate] = unit_params.sanitized();
}

PolarParams canonical_params(std::string_view predicate, double diag) {
    static const PredicateTable table = PredicateTable::canonical();
    return table.params_for(predicate, diag);
}

std::vector<double> referent_weights(const SceneGraph& scene, std::span<const double> f_ref, double temperature) {
    if (!(temperature > 0.0)) {
        throw DomainError("referent temperature must be positive");
    }
    if (scene.size() == 0) {
        throw ShapeError("scene has no nodes");
    }
    std::vector<double> logits;
    for (const ObjectNode* node : scene.ordered_nodes()) {
        logits.push_back(cosine(f_ref, node->viz) / temperature);
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double& l : logits) {
        l = std::exp(l - peak);
        total += l;
    }
    for (double& l : logits) {
        l /= total;
    }
    return logits;
}

SpatialMixture fitted_mixture(const SceneGraph& scene, const RelationTuple& tuple, const PredicateTable& table,
                              double temperature) {
    const auto weights = referent_weights(scene, tuple.f_ref, temperature);
    SpatialMixture mix;
    std::size_t j = 0;
    for (const ObjectNode* node : scene.ordered_nodes()) {
        mix.components.push_back(
            {weights[j++], table.params_for(tuple.pred_text, node->box.diagonal()), node->coord, node->id});
    }
    return mix;
}

PredicateTable fit_predicate_table(std::span<const PredicateObservation> observations) {
    std::map<std::string, std::vector<PolarSample>, std::less<>> grouped;
    for (const auto& o : observations) {
        if (normalize_predicate(o.predicate) != o.predicate) {
            throw DomainError("unknown predicate '" + o.predicate + "' in fit samples");
        }
        grouped[o.predicate].push_back({o.d_over_diag, o.phi});
    }
    PredicateTable table = PredicateTable::canonical();
    for (const auto& [predicate, samples] : grouped) {
        if (samples.size() >= 2) {
            table.set(predicate, fit_polar_mle(samples));
        }
    }
    return table;
}

json table_to_json(const PredicateTable& table) {
    json predicates = json::object();
    for (const auto& [name, p] : table.entries()) {
        predicates[name] = {{"mu_d", p.mu_d}, {"var_d", p.var_d}, {"mu_phi", p.mu_phi}, {"kappa_phi", p.kappa_phi}};
    }
    return {{"format", "grounding-predicate-table"}, {"version", 1}, {"predicates", std::move(predicates)}};
}

PredicateTable table_from_json(const json& j) {
    if (!j.is_object() || j.value("format", "") != "grounding-predicate-table") {
        throw SchemaError("not a predicate table (format must be \"grounding-predicate-table\")");
    }
    if (j.value("version", 0) != 1) {
        throw SchemaError("unsupported predicate table version");
    }
    if (!j.contains("predicates") || !j["predicates"].is_object()) {
        throw SchemaError("predicate table: 'predicates' must be an object");
    }
    PredicateTable table = PredicateTable::canonical();
    for (const auto& [name, p] : j["predicates"].items()) {
        if (normalize_predicate(name) != name) {
            throw SchemaError("predicate table: unknown predicate '" + name + "'");
        }
        PolarParams params;
        try {
            params = {p.at("mu_d").get<double>(), p.at("var_d").get<double>(), p.at("mu_phi").get<double>(),
                      p.at("kappa_phi").get<double>()};
        } catch (const json::exception& e) {
            throw SchemaError("predicate table: entry '" + name + "' needs numeric mu_d, var_d, mu_phi, kappa_phi",
                              e.what());
        }
        if (!(params.mu_d >= 0.0) || !(params.var_d > 0.0) || !(params.kappa_phi >= 0.0) ||
            !std::isfinite(params.mu_phi)) {
            throw SchemaError("predicate table: entry '" + name + "' is out of range");
        }
        table.set(name, params);
    }
    return table;
}

void save_table(const PredicateTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << table_to_json(table).dump(2) << '\n';
}

PredicateTable load_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path);
    }
    try {
        return table_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw SchemaError(path + " is not valid JSON", e.what());
    }
}

}  // namespace grounding
