#include "grounding/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "grounding/errors.hpp"

namespace grounding {

using ad::Matrix;
using ad::Tape;
using ad::Var;

void EstimatorConfig::validate() const {
    if (max_frequency < 1 || hidden < 1 || layers < 1 || attention_heads < 1) {
        throw DomainError("estimator config: K, D_H, L and head count must be positive");
    }
    if (node_width() % attention_heads != 0) {
        throw DomainError("estimator config: D_H' = " + std::to_string(node_width()) +
                          " is not divisible by the attention head count");
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw DomainError("estimator config: lambda must lie in [0, 1]");
    }
    if (epochs < 0 || !(learning_rate > 0.0) || !(clip_norm > 0.0)) {
        throw DomainError("estimator config: epochs >= 0, learning rate > 0 and clip norm > 0 required");
    }
    workspace.validate();
}

EstimatorModel::EstimatorModel(EstimatorConfig config) : config_(std::move(config)) {
    config_.validate();
    const int dh = config_.hidden;
    const int width = config_.node_width();

    proj_viz = add_linear("proj.viz", dh, kTextDim, false);
    proj_ref = add_linear("proj.ref", dh, kTextDim, false);
    proj_pred = add_linear("proj.pred", dh, kTextDim, false);
    state_compress = add_linear("state", dh, width, true);

    for (int l = 0; l < config_.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        GpsLayerRef layer;
        layer.eps = add(p + "eps", 1, 1);
        layer.edge = add_linear(p + "edge", width, kTextDim, false);
        layer.mpnn = add_mlp(p + "mpnn", width, width, width);
        layer.query = add_linear(p + "attn.query", width, width, true);
        layer.key = add_linear(p + "attn.key", width, width, true);
        layer.value = add_linear(p + "attn.value", width, width, true);
        layer.out = add_linear(p + "attn.out", width, width, true);
        layer.norm1_gain = add(p + "norm1.gain", 1, width);
        layer.norm1_bias = add(p + "norm1.bias", 1, width);
        layer.feed_forward = add_mlp(p + "ffn", width, width, width);
        layer.norm2_gain = add(p + "norm2.gain", 1, width);
        layer.norm2_bias = add(p + "norm2.bias", 1, width);
        layers.push_back(layer);
    }

    static const char* head_names[kHeadCount] = {"weight", "mean_distance", "variance", "inverse_concentration",
                                                 "angle"};
    for (int h = 0; h < kHeadCount; ++h) {
        const int out = h == static_cast<int>(Head::Angle) ? 2 : 1;
        heads[h] = add_mlp(std::string("head.") + head_names[h], width, width, out);
    }
}

int EstimatorModel::add(const std::string& name, int rows, int cols) {
    params_.push_back({name, Matrix::Zero(rows, cols)});
    return static_cast<int>(params_.size()) - 1;
}

LinearRef EstimatorModel::add_linear(const std::string& name, int out, int in, bool bias) {
    LinearRef r;
    r.weight = add(name + ".weight", out, in);
    if (bias) {
        r.bias = add(name + ".bias", 1, out);
    }
    return r;
}

MlpRef EstimatorModel::add_mlp(const std::string& name, int in, int hidden, int out) {
    return {add_linear(name + ".0", hidden, in, true), add_linear(name + ".1", out, hidden, true)};
}

EstimatorModel EstimatorModel::initialized(const EstimatorConfig& config) {
    EstimatorModel m(config);
    std::mt19937_64 rng(config.seed);
    auto fill_linear = [&](const LinearRef& r) {
        auto& w = m.params_[static_cast<std::size_t>(r.weight)].value;
        const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                w(i, j) = u(rng);
            }
        }
        if (r.bias >= 0) {
            auto& b = m.params_[static_cast<std::size_t>(r.bias)].value;
            for (Eigen::Index j = 0; j < b.cols(); ++j) {
                b(0, j) = u(rng);
            }
        }
    };
    auto fill_mlp = [&](const MlpRef& r) {
        fill_linear(r.first);
        fill_linear(r.second);
    };
    fill_linear(m.proj_viz);
    fill_linear(m.proj_ref);
    fill_linear(m.proj_pred);
    fill_linear(m.state_compress);
    for (const auto& layer : m.layers) {
        fill_linear(layer.edge);
        fill_mlp(layer.mpnn);
        fill_linear(layer.query);
        fill_linear(layer.key);
        fill_linear(layer.value);
        fill_linear(layer.out);
        m.params_[static_cast<std::size_t>(layer.norm1_gain)].value.setOnes();
        fill_mlp(layer.feed_forward);
        m.params_[static_cast<std::size_t>(layer.norm2_gain)].value.setOnes();
    }
    for (const auto& h : m.heads) {
        fill_mlp(h);
    }
    return m;
}

std::size_t EstimatorModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += static_cast<std::size_t>(p.value.size());
    }
    return n;
}

bool EstimatorModel::all_finite() const {
    return std::all_of(params_.begin(), params_.end(), [](const ad::Parameter& p) { return p.value.allFinite(); });
}

Point normalize_coord(Point p, const GridSpec& workspace) {
    return {2.0 * (p.x - workspace.x_min) / (workspace.x_max - workspace.x_min) - 1.0,
            2.0 * (p.y - workspace.y_min) / (workspace.y_max - workspace.y_min) - 1.0};
}

std::vector<double> positional_encode(Point coord, int max_frequency) {
    if (max_frequency < 1) {
        throw DomainError("positional_encode: K must be positive");
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(2 * (2 * max_frequency + 1)));
    for (double c : {coord.x, coord.y}) {
        out.push_back(c);
        double freq = kPi;
        for (int k = 0; k < max_frequency; ++k) {
            out.push_back(std::sin(freq * c));
            out.push_back(std::cos(freq * c));
            freq *= 2.0;
        }
    }
    return out;
}

GraphTopology topology_of(const SceneGraph& scene) {
    GraphTopology t;
    t.nodes = static_cast<int>(scene.size());
    t.edge_features = Matrix(static_cast<Eigen::Index>(scene.edges.size()), kTextDim);
    for (std::size_t e = 0; e < scene.edges.size(); ++e) {
        const auto& edge = scene.edges[e];
        if (edge.feature.size() != static_cast<std::size_t>(kTextDim)) {
            throw ShapeError("edge feature has the wrong width");
        }
        t.source.push_back(scene.index_of(edge.subject_id));
        t.target.push_back(scene.index_of(edge.object_id));
        for (int k = 0; k < kTextDim; ++k) {
            t.edge_features(static_cast<Eigen::Index>(e), k) = edge.feature[static_cast<std::size_t>(k)];
        }
    }
    return t;
}

namespace {

Var linear(Tape& tape, Var x, const LinearRef& r, const EstimatorModel& m) {
    Var y = ad::matmul_nt(x, tape.param(m.param(r.weight)));
    if (r.bias >= 0) {
        y = ad::add_row(y, tape.param(m.param(r.bias)));
    }
    return y;
}

Var mlp(Tape& tape, Var x, const MlpRef& r, const EstimatorModel& m) {
    return linear(tape, ad::relu(linear(tape, x, r.first, m)), r.second, m);
}

Matrix row_of(const Embedding& e, const char* what) {
    if (e.size() != static_cast<std::size_t>(kTextDim)) {
        throw ShapeError(std::string(what) + " must have " + std::to_string(kTextDim) + " entries");
    }
    Matrix r(1, kTextDim);
    for (int k = 0; k < kTextDim; ++k) {
        r(0, k) = e[static_cast<std::size_t>(k)];
    }
    return r;
}

}  // namespace

Features assemble_features(Tape& tape, const SceneGraph& scene, const GraphTopology& topo, const RelationTuple& tuple,
                           Var prev_state, const EstimatorModel& model) {
    const auto& cfg = model.config();
    const auto n = static_cast<Eigen::Index>(scene.size());
    if (n == 0) {
        throw ShapeError("assemble_features: scene has no nodes");
    }
    if (prev_state.rows() != n || prev_state.cols() != cfg.node_width()) {
        throw ShapeError("assemble_features: previous state must be " + std::to_string(n) + "x" +
                         std::to_string(cfg.node_width()));
    }
    const int enc = cfg.encoding_width();
    Matrix coords(n, enc);
    Matrix viz(n, kTextDim);
    Eigen::Index row = 0;
    for (const ObjectNode* node : scene.ordered_nodes()) {
        const auto pe = positional_encode(normalize_coord(node->coord, cfg.workspace), cfg.max_frequency);
        for (int k = 0; k < enc; ++k) {
            coords(row, k) = pe[static_cast<std::size_t>(k)];
        }
        viz.row(row) = row_of(node->viz, "node viz feature");
        ++row;
    }

    Var f_coord = tape.constant(std::move(coords));
    Var f_viz = ad::matmul_nt(tape.constant(std::move(viz)), tape.param(model.param(model.proj_viz.weight)));
    Var f_ref = ad::repeat_rows(
        ad::matmul_nt(tape.constant(row_of(tuple.f_ref, "f_ref")), tape.param(model.param(model.proj_ref.weight))), n);
    Var f_pred = ad::repeat_rows(
        ad::matmul_nt(tape.constant(row_of(tuple.f_pred, "f_pred")), tape.param(model.param(model.proj_pred.weight))),
        n);
    Var f_state = ad::repeat_rows(linear(tape, ad::colwise_max(prev_state), model.state_compress, model), n);

    const Var parts[] = {f_coord, f_viz, f_ref, f_pred, f_state};
    Features out;
    out.nodes = ad::concat_cols(parts);
    out.edges = tape.constant(topo.edge_features);
    return out;
}

LayerOutput gps_layer_forward(Tape& tape, Var nodes, Var edges, const GraphTopology& topo, const GpsLayerRef& layer,
                              const EstimatorModel& model) {
    const int width = model.config().node_width();
    const auto n = nodes.rows();
    if (nodes.cols() != width || n != topo.nodes) {
        throw ShapeError("gps_layer_forward: node matrix must be " + std::to_string(topo.nodes) + "x" +
                         std::to_string(width));
    }
    if (edges.rows() != static_cast<Eigen::Index>(topo.source.size()) || edges.cols() != kTextDim) {
        throw ShapeError("gps_layer_forward: edge matrix does not match the topology");
    }

    // Local branch: m_u = MLP((1 + eps) x_u + sum_{v -> u} relu(x_v + W_e e_vu)).
    Var one_plus_eps = ad::add_scalar(tape.param(model.param(layer.eps)), 1.0);
    Var local_in = ad::mul_scalar(nodes, one_plus_eps);
    if (!topo.source.empty()) {
        Var edge_proj = ad::matmul_nt(edges, tape.param(model.param(layer.edge.weight)));
        Var messages = ad::relu(ad::gather_rows(nodes, topo.source) + edge_proj);
        local_in = local_in + ad::scatter_add_rows(messages, topo.target, n);
    }
    Var local = mlp(tape, local_in, layer.mpnn, model);

    // Global branch: dense multi-head self-attention over all nodes.
    const int heads = model.config().attention_heads;
    const int head_width = width / heads;
    Var q = linear(tape, nodes, layer.query, model);
    Var k = linear(tape, nodes, layer.key, model);
    Var v = linear(tape, nodes, layer.value, model);
    std::vector<Var> head_out;
    head_out.reserve(static_cast<std::size_t>(heads));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_width));
    for (int h = 0; h < heads; ++h) {
        Var qh = ad::slice_cols(q, h * head_width, head_width);
        Var kh = ad::slice_cols(k, h * head_width, head_width);
        Var vh = ad::slice_cols(v, h * head_width, head_width);
        Var attn = ad::row_softmax(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
        head_out.push_back(ad::matmul(attn, vh));
    }
    Var global = linear(tape, ad::concat_cols(head_out), layer.out, model);

    Var mixed = ad::layer_norm_rows(nodes + local + global);
    mixed = ad::add_row(ad::mul_row(mixed, tape.param(model.param(layer.norm1_gain))),
                        tape.param(model.param(layer.norm1_bias)));
    Var ff = mlp(tape, mixed, layer.feed_forward, model);
    Var out = ad::layer_norm_rows(mixed + ff);
    out = ad::add_row(ad::mul_row(out, tape.param(model.param(layer.norm2_gain))),
                      tape.param(model.param(layer.norm2_bias)));
    return {out, edges};
}

HeadOutputs predict_heads(Tape& tape, Var nodes, const EstimatorModel& model) {
    if (nodes.cols() != model.config().node_width()) {
        throw ShapeError("predict_heads: rows must have D_H' entries");
    }
    auto head = [&](Head h) { return mlp(tape, nodes, model.heads[static_cast<int>(h)], model); };
    HeadOutputs out;
    out.weight = ad::softplus(head(Head::Weight));
    out.mu_d = ad::softplus(head(Head::MeanDistance));
    out.var_d = ad::max_const(ad::softplus(head(Head::Variance)), kVarMin);
    // The head predicts 1/kappa; flooring it at 1/kKappaMax caps kappa.
    out.kappa = ad::reciprocal(ad::max_const(ad::softplus(head(Head::InverseConcentration)), 1.0 / kKappaMax));
    Var angle = head(Head::Angle);
    out.mu_phi = ad::atan2(ad::slice_cols(angle, 1, 1), ad::slice_cols(angle, 0, 1));
    return out;
}

StepTrace forward_step(Tape& tape, const SceneGraph& scene, const GraphTopology& topo, const RelationTuple& tuple,
                       Var prev_state, const EstimatorModel& model) {
    Features f = assemble_features(tape, scene, topo, tuple, prev_state, model);
    Var x = f.nodes;
    Var e = f.edges;
    for (const auto& layer : model.layers) {
        auto next = gps_layer_forward(tape, x, e, topo, layer, model);
        x = next.nodes;
        e = next.edges;
    }
    return {predict_heads(tape, x, model), x};
}

std::vector<StepTrace> forward_sequence(Tape& tape, const SceneGraph& scene, std::span<const RelationTuple> tuples,
                                        const EstimatorModel& model) {
    if (tuples.empty()) {
        throw DomainError("estimate_sequence: no relation tuples");
    }
    const GraphTopology topo = topology_of(scene);
    const int width = model.config().node_width();
    Var state = tape.constant(Matrix::Zero(static_cast<Eigen::Index>(scene.size()), width));
    std::vector<StepTrace> out;
    out.reserve(tuples.size());
    for (const auto& tuple : tuples) {
        out.push_back(forward_step(tape, scene, topo, tuple, state, model));
        state = out.back().state;
    }
    return out;
}

SpatialMixture heads_to_mixture(const HeadOutputs& heads, const SceneGraph& scene) {
    SpatialMixture mix;
    Eigen::Index j = 0;
    for (const ObjectNode* node : scene.ordered_nodes()) {
        MixtureComponent c;
        c.weight = heads.weight.value()(j, 0);
        c.params = {heads.mu_d.value()(j, 0), heads.var_d.value()(j, 0), heads.mu_phi.value()(j, 0),
                    heads.kappa.value()(j, 0)};
        c.anchor = node->coord;
        c.node_id = node->id;
        mix.components.push_back(c);
        ++j;
    }
    return mix;
}

std::vector<EstimateStep> estimate_sequence(const SceneGraph& scene, std::span<const RelationTuple> tuples,
                                            const EstimatorModel& model) {
    Tape tape(false);
    const auto trace = forward_sequence(tape, scene, tuples, model);
    std::vector<EstimateStep> out;
    out.reserve(trace.size());
    for (const auto& step : trace) {
        out.push_back({heads_to_mixture(step.heads, scene), EstimatorState{step.state.value()}});
    }
    return out;
}

EstimateStep estimate_step(const SceneGraph& scene, const RelationTuple& tuple, const EstimatorState& prev,
                           const EstimatorModel& model) {
    Tape tape(false);
    const auto trace = forward_step(tape, scene, topology_of(scene), tuple, tape.constant(prev.nodes), model);
    return {heads_to_mixture(trace.heads, scene), EstimatorState{trace.state.value()}};
}

namespace {

void check_loss_inputs(std::size_t n, std::span<const double> w_des, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw DomainError("loss: lambda must lie in [0, 1]");
    }
    if (w_des.size() != n) {
        throw ShapeError("loss: w_des must have one entry per node");
    }
    if (std::none_of(w_des.begin(), w_des.end(), [](double w) { return w > 0.0; })) {
        throw DomainError("loss: w_des has no positive entry");
    }
}

constexpr double kWeightFloor = 1e-12;

}  // namespace

LossParts loss_total(const SpatialMixture& theta, Point x_des, std::span<const double> w_des, double lambda) {
    const std::size_t n = theta.components.size();
    check_loss_inputs(n, w_des, lambda);
    const auto w = theta.normalized_weights();

    std::vector<double> terms;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
        if (w_des[j] > 0.0) {
            terms.push_back(std::log(w_des[j]) + polar_log_score(x_des, theta.components[j]));
            peak = std::max(peak, terms.back());
        }
    }
    double acc = 0.0;
    for (double t : terms) {
        acc += std::exp(t - peak);
    }
    LossParts out;
    out.nll = -(peak + std::log(acc));

    double ce = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        ce += w_des[j] * std::log(std::max(w[j], kWeightFloor));
    }
    out.cross_entropy = -ce / static_cast<double>(n);
    out.total = lambda * out.nll + (1.0 - lambda) * out.cross_entropy;
    return out;
}

LossVars loss_on_tape(Tape& tape, const HeadOutputs& heads, const SceneGraph& scene, Point x_des,
                      std::span<const double> w_des, double lambda) {
    const std::size_t n = scene.size();
    check_loss_inputs(n, w_des, lambda);

    Matrix dist(static_cast<Eigen::Index>(n), 1);
    Matrix angle(static_cast<Eigen::Index>(n), 1);
    Eigen::Index j = 0;
    for (const ObjectNode* node : scene.ordered_nodes()) {
        const auto [d, phi] = to_polar(x_des, node->coord);
        dist(j, 0) = d;
        angle(j, 0) = phi;
        ++j;
    }

    Var diff = tape.constant(std::move(dist)) - heads.mu_d;
    Var quad = ad::mul(ad::square(diff), ad::reciprocal(heads.var_d));
    Var cos_term = ad::cos(tape.constant(std::move(angle)) - heads.mu_phi);
    Var log_p = ad::scale(ad::log(heads.var_d), -0.5) - ad::scale(quad, 0.5) + ad::mul(heads.kappa, cos_term) -
                ad::log_bessel_i0(heads.kappa);
    log_p = ad::add_scalar(log_p, -0.5 * std::log(2.0 * kPi) - std::log(2.0 * kPi));

    // L1 = -log sum_{j: w_des > 0} w_des_j P_j, shifted by the largest term.
    std::vector<int> hot;
    Matrix hot_w(0, 1);
    for (std::size_t k = 0; k < n; ++k) {
        if (w_des[k] > 0.0) {
            hot.push_back(static_cast<int>(k));
        }
    }
    hot_w.resize(static_cast<Eigen::Index>(hot.size()), 1);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < hot.size(); ++k) {
        hot_w(static_cast<Eigen::Index>(k), 0) = w_des[static_cast<std::size_t>(hot[k])];
        peak = std::max(peak, log_p.value()(hot[k], 0));
    }
    Var hot_terms = ad::exp(ad::add_scalar(ad::gather_rows(log_p, hot), -peak));
    Var nll = ad::scale(ad::add_scalar(ad::log(ad::sum(ad::mul(tape.constant(std::move(hot_w)), hot_terms))), peak),
                        -1.0);

    // L2 = -(1/N) sum_j w_des_j log w_hat_j with w_hat on the simplex.
    Var w_hat = ad::max_const(ad::mul_scalar(heads.weight, ad::reciprocal(ad::sum(heads.weight))), kWeightFloor);
    Matrix target(static_cast<Eigen::Index>(n), 1);
    for (std::size_t k = 0; k < n; ++k) {
        target(static_cast<Eigen::Index>(k), 0) = w_des[k];
    }
    Var ce = ad::scale(ad::sum(ad::mul(tape.constant(std::move(target)), ad::log(w_hat))),
                       -1.0 / static_cast<double>(n));

    LossVars out;
    out.nll = nll;
    out.cross_entropy = ce;
    out.total = ad::scale(nll, lambda) + ad::scale(ce, 1.0 - lambda);
    return out;
}

Var sample_loss(Tape& tape, const TrainingSample& sample, const EstimatorModel& model) {
    if (sample.x_des.size() != sample.tuples.size() || sample.w_des.size() != sample.tuples.size()) {
        throw ShapeError("training sample needs one x_des and one w_des per tuple");
    }
    const auto trace = forward_sequence(tape, sample.scene, sample.tuples, model);
    Var total = tape.constant(Matrix::Zero(1, 1));
    for (std::size_t i = 0; i < trace.size(); ++i) {
        total = total + loss_on_tape(tape, trace[i].heads, sample.scene, sample.x_des[i], sample.w_des[i],
                                     model.config().lambda)
                            .total;
    }
    return total;
}

namespace {

struct AdamState {
    std::vector<Matrix> first;
    std::vector<Matrix> second;
    long long step = 0;
};

}  // namespace

TrainResult train(std::span<const TrainingSample> data, const EstimatorConfig& config, const TrainProgress& progress) {
    if (data.empty()) {
        throw DomainError("train: no training data");
    }
    config.validate();
    TrainResult result{EstimatorModel::initialized(config), {}, {}};
    EstimatorModel& model = result.model;
    auto& params = model.params();

    AdamState adam;
    for (const auto& p : params) {
        adam.first.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        adam.second.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double adam_eps = 1e-8;

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(config.seed ^ 0x5eedf00dull);
    std::vector<Matrix> grads(params.size());

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_total = 0.0;
        for (std::size_t idx : order) {
            Tape tape;
            Var loss = sample_loss(tape, data[idx], model);
            const double value = loss.scalar();
            if (!std::isfinite(value)) {
                throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch));
            }
            result.step_losses.push_back(value);
            epoch_total += value;
            tape.backward(loss);

            double norm2 = 0.0;
            for (std::size_t k = 0; k < params.size(); ++k) {
                const Matrix* g = tape.param_grad(params[k]);
                if (g != nullptr) {
                    grads[k] = *g;
                } else {
                    grads[k] = Matrix::Zero(params[k].value.rows(), params[k].value.cols());
                }
                norm2 += grads[k].squaredNorm();
            }
            const double norm = std::sqrt(norm2);
            if (!std::isfinite(norm)) {
                throw DivergenceError("gradient became non-finite at epoch " + std::to_string(epoch));
            }
            const double clip = norm > config.clip_norm ? config.clip_norm / norm : 1.0;

            ++adam.step;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam.step));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam.step));
            for (std::size_t k = 0; k < params.size(); ++k) {
                const Matrix g = grads[k] * clip;
                adam.first[k] = beta1 * adam.first[k] + (1.0 - beta1) * g;
                adam.second[k] = beta2 * adam.second[k] + (1.0 - beta2) * g.cwiseProduct(g);
                params[k].value.array() -= config.learning_rate * (adam.first[k].array() / bc1) /
                                           ((adam.second[k].array() / bc2).sqrt() + adam_eps);
            }
        }
        const double mean = epoch_total / static_cast<double>(data.size());
        result.epoch_losses.push_back(mean);
        if (progress) {
            progress(epoch, mean);
        }
    }
    if (!model.all_finite()) {
        throw DivergenceError("training produced non-finite parameters");
    }
    return result;
}

double evaluate_loss(std::span<const TrainingSample> data, const EstimatorModel& model) {
    if (data.empty()) {
        throw DomainError("evaluate_loss: no data");
    }
    double total = 0.0;
    for (const auto& s : data) {
        Tape tape(false);
        total += sample_loss(tape, s, model).scalar();
    }
    return total / static_cast<double>(data.size());
}

}  // namespace grounding
