#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"

#include "grounding/autodiff.hpp"

namespace gradcheck {

using grounding::ad::Matrix;
using grounding::ad::Tape;
using grounding::ad::Var;

using Fn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct Report {
    int checked = 0;
    int skipped = 0;  // entries where every step crossed a kink
    double worst = 0.0;
};

inline double evaluate(const Fn& f, const std::vector<Matrix>& inputs, std::uint64_t* signature) {
    Tape tape(false);
    std::vector<Var> vars;
    for (const auto& m : inputs) {
        vars.push_back(tape.constant(m));
    }
    const double v = f(tape, vars).scalar();
    if (signature) {
        *signature = tape.kink_signature();
    }
    return v;
}

/// Central differences against the tape gradient of every input entry.
/// Steps that change the kink signature are retried with a smaller h.
inline Report check(const Fn& f, const std::vector<Matrix>& inputs, double tol = 1e-4, double floor = 1e-6) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& m : inputs) {
        vars.push_back(tape.input(m));
    }
    const Var out = f(tape, vars);
    REQUIRE(out.rows() == 1);
    REQUIRE(out.cols() == 1);
    tape.backward(out);
    const std::uint64_t base_sig = tape.kink_signature();

    Report report;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Matrix& analytic = tape.grad(vars[k]);
        for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
            bool done = false;
            for (double h : {1e-5, 1e-6, 1e-7}) {
                auto plus = inputs;
                auto minus = inputs;
                plus[k](i) += h;
                minus[k](i) -= h;
                std::uint64_t sp = 0;
                std::uint64_t sm = 0;
                const double fp = evaluate(f, plus, &sp);
                const double fm = evaluate(f, minus, &sm);
                if (sp != base_sig || sm != base_sig) {
                    continue;
                }
                const double numeric = (fp - fm) / (2.0 * h);
                const double a = analytic(i);
                const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor / tol});
                report.worst = std::max(report.worst, err);
                CHECK_MESSAGE(err <= tol, "input " << k << " entry " << i << ": analytic " << a << " numeric " << numeric);
                ++report.checked;
                done = true;
                break;
            }
            if (!done) {
                ++report.skipped;
            }
        }
    }
    return report;
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m(i) = u(rng);
    }
    return m;
}

}  // namespace gradcheck
