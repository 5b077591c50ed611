#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "grounding/autodiff.hpp"
#include "grounding/parser.hpp"
#include "grounding/polar.hpp"
#include "grounding/scene_graph.hpp"

namespace grounding {

struct EstimatorConfig {
    int max_frequency = 4;  // K
    int hidden = 32;        // D_H
    int layers = 2;         // L
    int attention_heads = 2;
    double lambda = 0.5;
    std::uint64_t seed = 0;

    // Training schedule.
    int epochs = 60;
    double learning_rate = 1e-3;
    double clip_norm = 5.0;

    /// Coordinates are mapped from these bounds onto [-1, 1] before encoding.
    GridSpec workspace{0.0, 1.0, 0.0, 1.0, 128};

    /// D_H' = 4 D_H + 2 (2K + 1)
    int node_width() const { return 4 * hidden + 2 * (2 * max_frequency + 1); }
    int encoding_width() const { return 2 * (2 * max_frequency + 1); }
    void validate() const;
};

struct LinearRef {
    int weight = -1;
    int bias = -1;  // -1 when the map has no bias
};

struct MlpRef {
    LinearRef first;
    LinearRef second;
};

struct GpsLayerRef {
    int eps = -1;
    LinearRef edge;  // D_H' x D_txt, no bias
    MlpRef mpnn;
    LinearRef query, key, value, out;
    int norm1_gain = -1, norm1_bias = -1;
    MlpRef feed_forward;
    int norm2_gain = -1, norm2_bias = -1;
};

enum class Head { Weight = 0, MeanDistance, Variance, InverseConcentration, Angle };
inline constexpr int kHeadCount = 5;

/// All learnable parameters, stored flat in a fixed documented order; the
/// *Ref structs index into params.
class EstimatorModel {
public:
    explicit EstimatorModel(EstimatorConfig config);

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases from
    /// config.seed; layer-norm gains 1, offsets 0, eps 0.
    static EstimatorModel initialized(const EstimatorConfig& config);

    const EstimatorConfig& config() const { return config_; }
    EstimatorConfig& mutable_config() { return config_; }

    std::vector<ad::Parameter>& params() { return params_; }
    const std::vector<ad::Parameter>& params() const { return params_; }
    const ad::Parameter& param(int index) const { return params_[static_cast<std::size_t>(index)]; }
    /// Total number of scalar parameters.
    std::size_t parameter_count() const;
    bool all_finite() const;

    LinearRef proj_viz, proj_ref, proj_pred;
    LinearRef state_compress;
    std::vector<GpsLayerRef> layers;
    MlpRef heads[kHeadCount];

private:
    int add(const std::string& name, int rows, int cols);
    LinearRef add_linear(const std::string& name, int out, int in, bool bias);
    MlpRef add_mlp(const std::string& name, int in, int hidden, int out);

    EstimatorConfig config_;
    std::vector<ad::Parameter> params_;
};

/// Per-node hidden vectors of the last layer (N x D_H'); all zeros before
/// the first expression.
struct EstimatorState {
    ad::Matrix nodes;

    static EstimatorState zero(int n, int width) { return {ad::Matrix::Zero(n, width)}; }
};

/// [c, sin(2^0 pi c), cos(2^0 pi c), ..., sin(2^(K-1) pi c), cos(2^(K-1) pi c)]
/// for each of the two coordinates.
std::vector<double> positional_encode(Point coord, int max_frequency);
/// Maps workspace coordinates onto [-1, 1].
Point normalize_coord(Point p, const GridSpec& workspace);

/// Directed edge list in node-index space plus raw edge text features.
struct GraphTopology {
    int nodes = 0;
    std::vector<int> source;
    std::vector<int> target;
    ad::Matrix edge_features;  // edges x D_txt
};

GraphTopology topology_of(const SceneGraph& scene);

struct Features {
    ad::Var nodes;  // X0, N x D_H'
    ad::Var edges;  // E0, raw edge features (projected inside each layer)
};

Features assemble_features(ad::Tape& tape, const SceneGraph& scene, const GraphTopology& topo,
                           const RelationTuple& tuple, ad::Var prev_state, const EstimatorModel& model);

struct LayerOutput {
    ad::Var nodes;
    ad::Var edges;
};

LayerOutput gps_layer_forward(ad::Tape& tape, ad::Var nodes, ad::Var edges, const GraphTopology& topo,
                              const GpsLayerRef& layer, const EstimatorModel& model);

/// Each field is N x 1.
struct HeadOutputs {
    ad::Var weight;
    ad::Var mu_d;
    ad::Var var_d;
    ad::Var mu_phi;
    ad::Var kappa;
};

HeadOutputs predict_heads(ad::Tape& tape, ad::Var nodes, const EstimatorModel& model);

struct StepTrace {
    HeadOutputs heads;
    ad::Var state;
};

/// One expression: features from prev_state, L GPS layers, heads.
StepTrace forward_step(ad::Tape& tape, const SceneGraph& scene, const GraphTopology& topo, const RelationTuple& tuple,
                       ad::Var prev_state, const EstimatorModel& model);

/// Runs the estimator over all tuples on one tape, chaining the state.
std::vector<StepTrace> forward_sequence(ad::Tape& tape, const SceneGraph& scene, std::span<const RelationTuple> tuples,
                                        const EstimatorModel& model);

SpatialMixture heads_to_mixture(const HeadOutputs& heads, const SceneGraph& scene);

struct EstimateStep {
    SpatialMixture mixture;
    EstimatorState state;
};

std::vector<EstimateStep> estimate_sequence(const SceneGraph& scene, std::span<const RelationTuple> tuples,
                                            const EstimatorModel& model);

/// Continues a sequence from a stored state; chaining estimate_step over
/// the tuples reproduces estimate_sequence exactly.
EstimateStep estimate_step(const SceneGraph& scene, const RelationTuple& tuple, const EstimatorState& prev,
                           const EstimatorModel& model);

struct LossParts {
    double total = 0.0;
    double nll = 0.0;           // L1
    double cross_entropy = 0.0;  // L2
};

/// L = lambda L1 + (1 - lambda) L2 evaluated on a mixture.
LossParts loss_total(const SpatialMixture& theta, Point x_des, std::span<const double> w_des, double lambda);

struct LossVars {
    ad::Var total;
    ad::Var nll;
    ad::Var cross_entropy;
};

/// The same loss recorded on a tape against the head outputs.
LossVars loss_on_tape(ad::Tape& tape, const HeadOutputs& heads, const SceneGraph& scene, Point x_des,
                      std::span<const double> w_des, double lambda);

struct TrainingSample {
    SceneGraph scene;
    std::vector<RelationTuple> tuples;
    std::vector<Point> x_des;                 // one per tuple
    std::vector<std::vector<double>> w_des;  // one-hot over nodes, one per tuple
};

/// Sum of per-relation losses for one sample.
ad::Var sample_loss(ad::Tape& tape, const TrainingSample& sample, const EstimatorModel& model);

struct TrainResult {
    EstimatorModel model;
    std::vector<double> step_losses;   // loss of each sample before its update
    std::vector<double> epoch_losses;  // mean over the epoch
};

using TrainProgress = std::function<void(int epoch, double mean_loss)>;

TrainResult train(std::span<const TrainingSample> data, const EstimatorConfig& config,
                  const TrainProgress& progress = {});

/// Mean loss over data with the model fixed.
double evaluate_loss(std::span<const TrainingSample> data, const EstimatorModel& model);

}  // namespace grounding
