#pragma once

// Minimal reverse-mode differentiation over dense matrices. A Tape records
// every operation in evaluation order; backward() walks it in reverse and
// accumulates adjoints. Parameters are bound once per tape; their gradients
// are read back with param_grad().

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace grounding::ad {

using Matrix = Eigen::MatrixXd;

struct Parameter {
    std::string name;
    Matrix value;
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    /// Value of a 1x1 variable.
    double scalar() const;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

    /// With track_params false, bound parameters are plain constants and no
    /// backward closures are kept (inference).
    explicit Tape(bool track_params = true) : track_params_(track_params) {}

    Var constant(Matrix value);
    /// A differentiable input whose gradient can be read after backward().
    Var input(Matrix value);
    /// Binds a parameter; repeated calls return the same node.
    Var param(const Parameter& p);
    /// Gradient of the last backward() root w.r.t. p, or nullptr when p was
    /// not reached.
    const Matrix* param_grad(const Parameter& p) const;

    Var record(Matrix value, std::span<const Var> parents, Backward backward);
    Var record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
        return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
    }

    /// Seeds d(root)/d(root) = 1 and propagates; root must be 1x1.
    void backward(Var root);

    const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Matrix& grad(Var v) const;
    bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
    /// Adds g into the adjoint of v (no-op when v needs no gradient).
    void accumulate(Var v, const Matrix& g);
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        Backward backward;
    };
    std::vector<Node> nodes_;
    std::vector<std::pair<int, const Parameter*>> bound_;
    bool track_params_ = true;
    std::uint64_t kink_signature_ = 0xcbf29ce484222325ull;

public:
    /// Hash of every branch taken by non-smooth operations (relu masks,
    /// clamps, max-pool winners). Two evaluations with equal signatures lie
    /// on the same smooth piece.
    std::uint64_t kink_signature() const { return kink_signature_; }
    void mix_signature(std::uint64_t bits);
};

// Linear algebra
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// a * s for a 1x1 variable s.
Var mul_scalar(Var a, Var s);
/// Adds the 1xC row to every row of a.
Var add_row(Var a, Var row);
/// Multiplies every row of a elementwise by the 1xC row.
Var mul_row(Var a, Var row);
/// Repeats a 1xC row n times.
Var repeat_rows(Var row, Eigen::Index n);

// Elementwise nonlinearities
Var relu(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var cos(Var a);
Var square(Var a);
Var reciprocal(Var a);
/// max(a, floor) elementwise for a constant floor.
Var max_const(Var a, double floor);
Var atan2(Var y, Var x);
/// log I_0(a), a >= 0.
Var log_bessel_i0(Var a);

// Structure
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var a, std::span<const int> rows);
/// out[rows[k]] += a[k]; out has n rows.
Var scatter_add_rows(Var a, std::span<const int> rows, Eigen::Index n);
/// Column-wise max over rows (1xC); gradient flows to the first maximal row.
Var colwise_max(Var a);
Var sum(Var a);
Var row_softmax(Var a);
/// Per-row standardization (x - mean) / sqrt(var + eps), no affine part.
Var layer_norm_rows(Var a, double eps = 1e-5);
Var element(Var a, Eigen::Index r, Eigen::Index c);

}  // namespace grounding::ad
