#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grounding/estimator.hpp"
#include "grounding/fitted.hpp"

namespace grounding {

enum class EstimatorMode { Fitted, Learned };

std::string to_string(EstimatorMode mode);
/// "fitted" or "learned"; throws DomainError otherwise.
EstimatorMode parse_mode(std::string_view text);

/// Either the fitted predicate table or a trained model, behind one
/// interface. Copies share the (immutable) model.
class SpatialEstimator {
public:
    static SpatialEstimator fitted(PredicateTable table = PredicateTable::canonical());
    static SpatialEstimator learned(std::shared_ptr<const EstimatorModel> model);

    EstimatorMode mode() const { return mode_; }
    const EstimatorModel* model() const { return model_.get(); }
    const PredicateTable& table() const { return table_; }

    std::vector<SpatialMixture> estimate(const SceneGraph& scene, std::span<const RelationTuple> tuples) const;

    /// Next mixture given the state left by earlier tuples. state is
    /// updated in learned mode and ignored in fitted mode.
    SpatialMixture step(const SceneGraph& scene, const RelationTuple& tuple, EstimatorState& state) const;
    EstimatorState initial_state(const SceneGraph& scene) const;

private:
    EstimatorMode mode_ = EstimatorMode::Fitted;
    PredicateTable table_;
    std::shared_ptr<const EstimatorModel> model_;
};

struct Grounding {
    std::vector<SpatialMixture> mixtures;
    std::vector<ScoreField> fields;
    ScoreField combined;
    ArgmaxResult argmax;
};

/// Estimate, render one field per tuple, multiply, pick the argmax.
Grounding ground_tuples(const SceneGraph& scene, std::span<const RelationTuple> tuples,
                        const SpatialEstimator& estimator, const GridSpec& grid);

}  // namespace grounding
