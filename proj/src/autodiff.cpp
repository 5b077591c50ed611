#include "grounding/autodiff.hpp"

#include <cmath>

#include "grounding/errors.hpp"
#include "grounding/polar.hpp"

namespace grounding::ad {

const Matrix& Var::value() const {
    return tape->value(id);
}

double Var::scalar() const {
    const auto& v = value();
    if (v.rows() != 1 || v.cols() != 1) {
        throw ShapeError("scalar() on a non-1x1 variable");
    }
    return v(0, 0);
}

Var Tape::constant(Matrix value) {
    nodes_.push_back({std::move(value), Matrix(), false, nullptr});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Matrix value) {
    nodes_.push_back({std::move(value), Matrix(), true, nullptr});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(const Parameter& p) {
    for (const auto& [id, bound] : bound_) {
        if (bound == &p) {
            return {this, id};
        }
    }
    Var v = track_params_ ? input(p.value) : constant(p.value);
    bound_.emplace_back(v.id, &p);
    return v;
}

const Matrix* Tape::param_grad(const Parameter& p) const {
    for (const auto& [id, bound] : bound_) {
        if (bound == &p) {
            const auto& g = nodes_[static_cast<std::size_t>(id)].grad;
            return g.size() == 0 ? nullptr : &g;
        }
    }
    return nullptr;
}

void Tape::mix_signature(std::uint64_t bits) {
    kink_signature_ ^= bits + 0x9e3779b97f4a7c15ull + (kink_signature_ << 6) + (kink_signature_ >> 2);
}

Var Tape::record(Matrix value, std::span<const Var> parents, Backward backward) {
    bool needs = false;
    for (const Var& p : parents) {
        needs = needs || nodes_[static_cast<std::size_t>(p.id)].needs_grad;
    }
    nodes_.push_back({std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
    auto& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.needs_grad) {
        return;
    }
    if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
        throw ShapeError("gradient shape mismatch in backward pass");
    }
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

const Matrix& Tape::grad(Var v) const {
    return nodes_[static_cast<std::size_t>(v.id)].grad;
}

void Tape::backward(Var root) {
    auto& r = nodes_[static_cast<std::size_t>(root.id)];
    if (r.value.rows() != 1 || r.value.cols() != 1) {
        throw ShapeError("backward() needs a 1x1 root");
    }
    if (!r.needs_grad) {
        return;
    }
    r.grad = Matrix::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (n.backward && n.grad.size() != 0) {
            n.backward(*this, n.grad);
        }
    }
}

namespace {

void require_same_shape(Var a, Var b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
    }
}

}  // namespace

Var matmul(Var a, Var b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ");
    }
    Tape& t = *a.tape;
    return t.record(a.value() * b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        if (tp.needs_grad(a)) {
            tp.accumulate(a, g * b.value().transpose());
        }
        if (tp.needs_grad(b)) {
            tp.accumulate(b, a.value().transpose() * g);
        }
    });
}

Var matmul_nt(Var a, Var b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()) + ")");
    }
    Tape& t = *a.tape;
    return t.record(a.value() * b.value().transpose(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        if (tp.needs_grad(a)) {
            tp.accumulate(a, g * b.value());
        }
        if (tp.needs_grad(b)) {
            tp.accumulate(b, g.transpose() * a.value());
        }
    });
}

Var operator+(Var a, Var b) {
    require_same_shape(a, b, "add");
    return a.tape->record(a.value() + b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, g);
    });
}

Var operator-(Var a, Var b) {
    require_same_shape(a, b, "sub");
    return a.tape->record(a.value() - b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        if (tp.needs_grad(b)) {
            tp.accumulate(b, -g);
        }
    });
}

Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    return a.tape->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        if (tp.needs_grad(a)) {
            tp.accumulate(a, g.cwiseProduct(b.value()));
        }
        if (tp.needs_grad(b)) {
            tp.accumulate(b, g.cwiseProduct(a.value()));
        }
    });
}

Var scale(Var a, double s) {
    return a.tape->record(a.value() * s, {a}, [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a, g * s); });
}

Var add_scalar(Var a, double s) {
    return a.tape->record(a.value().array() + s, {a}, [a](Tape& tp, const Matrix& g) { tp.accumulate(a, g); });
}

Var mul_scalar(Var a, Var s) {
    if (s.rows() != 1 || s.cols() != 1) {
        throw ShapeError("mul_scalar: scale must be 1x1");
    }
    return a.tape->record(a.value() * s.scalar(), {a, s}, [a, s](Tape& tp, const Matrix& g) {
        if (tp.needs_grad(a)) {
            tp.accumulate(a, g * s.scalar());
        }
        if (tp.needs_grad(s)) {
            Matrix gs(1, 1);
            gs(0, 0) = g.cwiseProduct(a.value()).sum();
            tp.accumulate(s, gs);
        }
    });
}

Var add_row(Var a, Var row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ShapeError("add_row: row must be 1x" + std::to_string(a.cols()));
    }
    Matrix v = a.value();
    v.rowwise() += row.value().row(0);
    return a.tape->record(std::move(v), {a, row}, [a, row](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        if (tp.needs_grad(row)) {
            tp.accumulate(row, g.colwise().sum());
        }
    });
}

Var mul_row(Var a, Var row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ShapeError("mul_row: row must be 1x" + std::to_string(a.cols()));
    }
    Matrix v = a.value().array().rowwise() * row.value().row(0).array();
    return a.tape->record(std::move(v), {a, row}, [a, row](Tape& tp, const Matrix& g) {
        if (tp.needs_grad(a)) {
            Matrix ga = g.array().rowwise() * row.value().row(0).array();
            tp.accumulate(a, ga);
        }
        if (tp.needs_grad(row)) {
            tp.accumulate(row, g.cwiseProduct(a.value()).colwise().sum());
        }
    });
}

Var repeat_rows(Var row, Eigen::Index n) {
    if (row.rows() != 1) {
        throw ShapeError("repeat_rows: input must be a single row");
    }
    Matrix v = row.value().replicate(n, 1);
    return row.tape->record(std::move(v), {row}, [row](Tape& tp, const Matrix& g) {
        tp.accumulate(row, g.colwise().sum());
    });
}

namespace {

void sign_mask(Tape& t, const Matrix& m, double threshold) {
    std::uint64_t bits = 0;
    int n = 0;
    for (Eigen::Index k = 0; k < m.size(); ++k) {
        bits = (bits << 1) | (m.data()[k] > threshold ? 1u : 0u);
        if (++n == 64) {
            t.mix_signature(bits);
            bits = 0;
            n = 0;
        }
    }
    t.mix_signature(bits ^ static_cast<std::uint64_t>(n));
}

}  // namespace

Var relu(Var a) {
    sign_mask(*a.tape, a.value(), 0.0);
    Matrix v = a.value().cwiseMax(0.0);
    return a.tape->record(std::move(v), {a}, [a](Tape& tp, const Matrix& g) {
        tp.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
    });
}

namespace {

double softplus_scalar(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Var softplus(Var a) {
    Matrix v = a.value().unaryExpr(&softplus_scalar);
    return a.tape->record(std::move(v), {a}, [a](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g.cwiseProduct(a.value().unaryExpr(&sigmoid_scalar)));
    });
}

Var exp(Var a) {
    Matrix v = a.value().array().exp();
    Tape& t = *a.tape;
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(v), {a}, [a, out_id](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g.cwiseProduct(tp.value(out_id)));
    });
}

Var log(Var a) {
    Matrix v = a.value().array().log();
    return a.tape->record(std::move(v), {a}, [a](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g.cwiseQuotient(a.value()));
    });
}

Var cos(Var a) {
    Matrix v = a.value().array().cos();
    return a.tape->record(std::move(v), {a}, [a](Tape& tp, const Matrix& g) {
        tp.accumulate(a, -g.cwiseProduct(Matrix(a.value().array().sin())));
    });
}

Var square(Var a) {
    Matrix v = a.value().array().square();
    return a.tape->record(std::move(v), {a}, [a](Tape& tp, const Matrix& g) {
        tp.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
    });
}

Var reciprocal(Var a) {
    Matrix v = a.value().array().inverse();
    return a.tape->record(std::move(v), {a}, [a](Tape& tp, const Matrix& g) {
        tp.accumulate(a, -g.cwiseQuotient(Matrix(a.value().array().square())));
    });
}

Var max_const(Var a, double floor) {
    sign_mask(*a.tape, a.value(), floor);
    Matrix v = a.value().cwiseMax(floor);
    return a.tape->record(std::move(v), {a}, [a, floor](Tape& tp, const Matrix& g) {
        tp.accumulate(a, (a.value().array() > floor).select(g, 0.0));
    });
}

Var atan2(Var y, Var x) {
    require_same_shape(y, x, "atan2");
    Matrix v = y.value().binaryExpr(x.value(), [](double yy, double xx) { return std::atan2(yy, xx); });
    return y.tape->record(std::move(v), {y, x}, [y, x](Tape& tp, const Matrix& g) {
        const Matrix r2 = (x.value().array().square() + y.value().array().square()).matrix();
        if (tp.needs_grad(y)) {
            tp.accumulate(y, g.cwiseProduct(x.value()).cwiseQuotient(r2));
        }
        if (tp.needs_grad(x)) {
            tp.accumulate(x, -g.cwiseProduct(y.value()).cwiseQuotient(r2));
        }
    });
}

Var log_bessel_i0(Var a) {
    Matrix v = a.value().unaryExpr([](double k) { return grounding::log_bessel_i0(k); });
    return a.tape->record(std::move(v), {a}, [a](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g.cwiseProduct(a.value().unaryExpr([](double k) { return bessel_ratio(k); })));
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ShapeError("concat_cols: no inputs");
    }
    const Eigen::Index rows = parts[0].rows();
    Eigen::Index cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != rows) {
            throw ShapeError("concat_cols: row counts differ");
        }
        cols += p.cols();
    }
    Matrix v(rows, cols);
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        v.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    std::vector<Var> saved(parts.begin(), parts.end());
    return parts[0].tape->record(std::move(v), parts, [saved](Tape& tp, const Matrix& g) {
        Eigen::Index off = 0;
        for (const Var& p : saved) {
            if (tp.needs_grad(p)) {
                tp.accumulate(p, g.middleCols(off, p.cols()));
            }
            off += p.cols();
        }
    });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) {
        throw ShapeError("slice_cols: range out of bounds");
    }
    Matrix v = a.value().middleCols(start, count);
    return a.tape->record(std::move(v), {a}, [a, start, count](Tape& tp, const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        full.middleCols(start, count) = g;
        tp.accumulate(a, full);
    });
}

Var gather_rows(Var a, std::span<const int> rows) {
    Matrix v(static_cast<Eigen::Index>(rows.size()), a.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] < 0 || rows[k] >= a.rows()) {
            throw ShapeError("gather_rows: index out of range");
        }
        v.row(static_cast<Eigen::Index>(k)) = a.value().row(rows[k]);
    }
    std::vector<int> idx(rows.begin(), rows.end());
    return a.tape->record(std::move(v), {a}, [a, idx](Tape& tp, const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            full.row(idx[k]) += g.row(static_cast<Eigen::Index>(k));
        }
        tp.accumulate(a, full);
    });
}

Var scatter_add_rows(Var a, std::span<const int> rows, Eigen::Index n) {
    if (static_cast<Eigen::Index>(rows.size()) != a.rows()) {
        throw ShapeError("scatter_add_rows: one target row per input row required");
    }
    Matrix v = Matrix::Zero(n, a.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] < 0 || rows[k] >= n) {
            throw ShapeError("scatter_add_rows: index out of range");
        }
        v.row(rows[k]) += a.value().row(static_cast<Eigen::Index>(k));
    }
    std::vector<int> idx(rows.begin(), rows.end());
    return a.tape->record(std::move(v), {a}, [a, idx](Tape& tp, const Matrix& g) {
        Matrix ga(a.rows(), a.cols());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            ga.row(static_cast<Eigen::Index>(k)) = g.row(idx[k]);
        }
        tp.accumulate(a, ga);
    });
}

Var colwise_max(Var a) {
    if (a.rows() == 0) {
        throw ShapeError("colwise_max: no rows");
    }
    std::vector<int> arg(static_cast<std::size_t>(a.cols()), 0);
    Matrix v(1, a.cols());
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < a.rows(); ++r) {
            if (a.value()(r, c) > a.value()(best, c)) {
                best = r;
            }
        }
        arg[static_cast<std::size_t>(c)] = static_cast<int>(best);
        a.tape->mix_signature(static_cast<std::uint64_t>(best));
        v(0, c) = a.value()(best, c);
    }
    return a.tape->record(std::move(v), {a}, [a, arg](Tape& tp, const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        for (Eigen::Index c = 0; c < a.cols(); ++c) {
            full(arg[static_cast<std::size_t>(c)], c) = g(0, c);
        }
        tp.accumulate(a, full);
    });
}

Var sum(Var a) {
    Matrix v(1, 1);
    v(0, 0) = a.value().sum();
    return a.tape->record(std::move(v), {a}, [a](Tape& tp, const Matrix& g) {
        tp.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
    });
}

Var row_softmax(Var a) {
    Matrix v = a.value();
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
        const double m = v.row(r).maxCoeff();
        v.row(r) = (v.row(r).array() - m).exp();
        v.row(r) /= v.row(r).sum();
    }
    Tape& t = *a.tape;
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(v), {a}, [a, out_id](Tape& tp, const Matrix& g) {
        const Matrix& y = tp.value(out_id);
        const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
        Matrix ga = y.cwiseProduct(Matrix(g.colwise() - dots));
        tp.accumulate(a, ga);
    });
}

Var layer_norm_rows(Var a, double eps) {
    const Eigen::Index cols = a.cols();
    Matrix v(a.rows(), cols);
    Eigen::VectorXd inv_std(a.rows());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const double mean = a.value().row(r).mean();
        const Eigen::RowVectorXd centered = a.value().row(r).array() - mean;
        const double var = centered.squaredNorm() / static_cast<double>(cols);
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        v.row(r) = centered * inv_std(r);
    }
    Tape& t = *a.tape;
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(v), {a}, [a, out_id, inv_std, cols](Tape& tp, const Matrix& g) {
        const Matrix& y = tp.value(out_id);
        Matrix ga(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            const double mean_g = g.row(r).mean();
            const double mean_gy = g.row(r).dot(y.row(r)) / static_cast<double>(cols);
            ga.row(r) = inv_std(r) * (g.row(r).array() - mean_g - y.row(r).array() * mean_gy);
        }
        tp.accumulate(a, ga);
    });
}

Var element(Var a, Eigen::Index r, Eigen::Index c) {
    Matrix v(1, 1);
    v(0, 0) = a.value()(r, c);
    return a.tape->record(std::move(v), {a}, [a, r, c](Tape& tp, const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        full(r, c) = g(0, 0);
        tp.accumulate(a, full);
    });
}

}  // namespace grounding::ad
