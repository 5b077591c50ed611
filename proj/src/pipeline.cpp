#include "grounding/pipeline.hpp"

#include "grounding/errors.hpp"

namespace grounding {

std::string to_string(EstimatorMode mode) {
    return mode == EstimatorMode::Fitted ? "fitted" : "learned";
}

EstimatorMode parse_mode(std::string_view text) {
    if (text == "fitted") {
        return EstimatorMode::Fitted;
    }
    if (text == "learned") {
        return EstimatorMode::Learned;
    }
    throw DomainError("mode must be 'fitted' or 'learned' (got '" + std::string(text) + "')");
}

SpatialEstimator SpatialEstimator::fitted(PredicateTable table) {
    SpatialEstimator e;
    e.mode_ = EstimatorMode::Fitted;
    e.table_ = std::move(table);
    return e;
}

SpatialEstimator SpatialEstimator::learned(std::shared_ptr<const EstimatorModel> model) {
    if (!model) {
        throw DomainError("learned mode needs a trained model");
    }
    SpatialEstimator e;
    e.mode_ = EstimatorMode::Learned;
    e.model_ = std::move(model);
    return e;
}

std::vector<SpatialMixture> SpatialEstimator::estimate(const SceneGraph& scene,
                                                       std::span<const RelationTuple> tuples) const {
    if (tuples.empty()) {
        throw DomainError("no relation tuples to estimate");
    }
    std::vector<SpatialMixture> out;
    if (mode_ == EstimatorMode::Fitted) {
        for (const auto& t : tuples) {
            out.push_back(fitted_mixture(scene, t, table_));
        }
        return out;
    }
    for (auto& step : estimate_sequence(scene, tuples, *model_)) {
        out.push_back(std::move(step.mixture));
    }
    return out;
}

EstimatorState SpatialEstimator::initial_state(const SceneGraph& scene) const {
    if (mode_ == EstimatorMode::Fitted) {
        return {};
    }
    return EstimatorState::zero(static_cast<int>(scene.size()), model_->config().node_width());
}

SpatialMixture SpatialEstimator::step(const SceneGraph& scene, const RelationTuple& tuple,
                                      EstimatorState& state) const {
    if (mode_ == EstimatorMode::Fitted) {
        return fitted_mixture(scene, tuple, table_);
    }
    auto next = estimate_step(scene, tuple, state, *model_);
    state = std::move(next.state);
    return std::move(next.mixture);
}

Grounding ground_tuples(const SceneGraph& scene, std::span<const RelationTuple> tuples,
                        const SpatialEstimator& estimator, const GridSpec& grid) {
    Grounding g;
    g.mixtures = estimator.estimate(scene, tuples);
    for (const auto& mix : g.mixtures) {
        g.fields.push_back(score_field(mix, grid));
    }
    g.combined = combine_score_fields(g.fields);
    g.argmax = grid_argmax(g.combined);
    return g;
}

}  // namespace grounding
