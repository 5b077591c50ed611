#include "grounding/polar.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "grounding/errors.hpp"

namespace grounding {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kSeriesCutoff = 15.0;
constexpr double kBesselArgMax = 700.0;

void check_bessel_args(int order, double x) {
    if (order != 0 && order != 1) {
        throw DomainError("bessel_i: order must be 0 or 1, got " + std::to_string(order));
    }
    if (!(x >= 0.0)) {
        throw DomainError("bessel_i: argument must be non-negative");
    }
}

// Sum_k (x/2)^(2k+order) / (k! (k+order)!)
double bessel_series(int order, double x) {
    const double half = 0.5 * x;
    const double q = half * half;
    double term = order == 0 ? 1.0 : half;
    double sum = term;
    for (int k = 0; k < 200; ++k) {
        term *= q / ((k + 1.0) * (k + 1.0 + order));
        sum += term;
        if (term < 1e-17 * sum) {
            break;
        }
    }
    return sum;
}

// exp(-x) I_order(x) ~ (2 pi x)^(-1/2) Sum_k (-1)^k a_k(order) / x^k
double bessel_asymptotic_scaled(int order, double x) {
    const double mu = 4.0 * order * order;
    double term = 1.0;
    double sum = 1.0;
    double prev_abs = 1.0;
    for (int k = 1; k < 60; ++k) {
        const double odd = 2.0 * k - 1.0;
        term *= -(mu - odd * odd) / (k * 8.0 * x);
        const double a = std::fabs(term);
        if (a > prev_abs) {
            break;  // past the smallest term of the divergent tail
        }
        sum += term;
        prev_abs = a;
        if (a < 1e-17 * std::fabs(sum)) {
            break;
        }
    }
    return sum / std::sqrt(2.0 * kPi * x);
}

}  // namespace

double wrap_angle(double phi) {
    if (phi >= -kPi && phi <= kPi) {
        return phi;
    }
    double r = std::remainder(phi, 2.0 * kPi);
    if (r < -kPi) {
        r += 2.0 * kPi;
    } else if (r > kPi) {
        r -= 2.0 * kPi;
    }
    return r;
}

PolarParams PolarParams::sanitized() const {
    PolarParams p = *this;
    p.mu_d = std::max(0.0, p.mu_d);
    p.var_d = std::max(kVarMin, p.var_d);
    p.mu_phi = wrap_angle(p.mu_phi);
    p.kappa_phi = std::clamp(p.kappa_phi, 0.0, kKappaMax);
    return p;
}

std::vector<double> SpatialMixture::normalized_weights() const {
    if (components.empty()) {
        throw DomainError("mixture has no components");
    }
    double total = 0.0;
    for (const auto& c : components) {
        if (!(c.weight >= 0.0) || !std::isfinite(c.weight)) {
            throw DomainError("mixture weights must be finite and non-negative");
        }
        total += c.weight;
    }
    if (total <= 0.0) {
        throw DomainError("mixture weights are all zero");
    }
    std::vector<double> w;
    w.reserve(components.size());
    for (const auto& c : components) {
        w.push_back(c.weight / total);
    }
    return w;
}

void GridSpec::validate() const {
    if (!std::isfinite(x_min) || !std::isfinite(x_max) || !std::isfinite(y_min) || !std::isfinite(y_max)) {
        throw DomainError("grid bounds must be finite");
    }
    if (!(x_max > x_min) || !(y_max > y_min)) {
        throw DomainError("grid bounds must satisfy max > min");
    }
    if (resolution < 2) {
        throw DomainError("grid resolution must be at least 2");
    }
}

Point GridSpec::cell_center(int row, int col) const {
    return {x_min + (col + 0.5) * cell_width(), y_min + (row + 0.5) * cell_height()};
}

std::pair<int, int> GridSpec::cell_of(Point p) const {
    const int col = std::clamp(static_cast<int>(std::floor((p.x - x_min) / cell_width())), 0, resolution - 1);
    const int row = std::clamp(static_cast<int>(std::floor((p.y - y_min) / cell_height())), 0, resolution - 1);
    return {row, col};
}

double bessel_i_scaled(int order, double x) {
    check_bessel_args(order, x);
    if (x < kSeriesCutoff) {
        return bessel_series(order, x) * std::exp(-x);
    }
    return bessel_asymptotic_scaled(order, x);
}

double bessel_i(int order, double x) {
    check_bessel_args(order, x);
    if (x > kBesselArgMax) {
        throw DomainError("bessel_i: argument above 700 overflows");
    }
    if (x < kSeriesCutoff) {
        return bessel_series(order, x);
    }
    return bessel_asymptotic_scaled(order, x) * std::exp(x);
}

double log_bessel_i0(double x) {
    return std::log(bessel_i_scaled(0, x)) + x;
}

double bessel_ratio(double x) {
    if (x == 0.0) {
        return 0.0;
    }
    return bessel_i_scaled(1, x) / bessel_i_scaled(0, x);
}

double log_gaussian_pdf(double d, double mu_d, double var_d) {
    if (!(var_d > 0.0)) {
        throw DomainError("gaussian_pdf: variance must be positive");
    }
    const double diff = d - mu_d;
    return -0.5 * std::log(2.0 * kPi * var_d) - diff * diff / (2.0 * var_d);
}

double gaussian_pdf(double d, double mu_d, double var_d) {
    return std::exp(log_gaussian_pdf(d, mu_d, var_d));
}

double log_von_mises_pdf(double phi, double mu_phi, double kappa_phi) {
    if (!(kappa_phi >= 0.0)) {
        throw DomainError("von_mises_pdf: concentration must be non-negative");
    }
    return kappa_phi * (std::cos(phi - mu_phi) - 1.0) - std::log(2.0 * kPi * bessel_i_scaled(0, kappa_phi));
}

double von_mises_pdf(double phi, double mu_phi, double kappa_phi) {
    return std::exp(log_von_mises_pdf(phi, mu_phi, kappa_phi));
}

std::pair<double, double> to_polar(Point x, Point anchor) {
    const double dx = x.x - anchor.x;
    const double dy = x.y - anchor.y;
    const double d = std::hypot(dx, dy);
    if (d == 0.0) {
        return {0.0, 0.0};
    }
    return {d, std::atan2(dy, dx)};
}

double polar_log_score(Point x, const MixtureComponent& comp) {
    const auto [d, phi] = to_polar(x, comp.anchor);
    const auto& p = comp.params;
    return log_gaussian_pdf(d, p.mu_d, p.var_d) + log_von_mises_pdf(phi, p.mu_phi, p.kappa_phi);
}

double mixture_score(Point x, const SpatialMixture& mix) {
    const auto w = mix.normalized_weights();
    double total = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (w[j] > 0.0) {
            total += w[j] * std::exp(polar_log_score(x, mix.components[j]));
        }
    }
    return total;
}

double mixture_log_score(Point x, const SpatialMixture& mix) {
    const auto w = mix.normalized_weights();
    std::vector<double> terms;
    terms.reserve(w.size());
    double peak = kNegInf;
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (w[j] > 0.0) {
            terms.push_back(std::log(w[j]) + polar_log_score(x, mix.components[j]));
            peak = std::max(peak, terms.back());
        }
    }
    double acc = 0.0;
    for (double t : terms) {
        acc += std::exp(t - peak);
    }
    return peak + std::log(acc);
}

PolarParams fit_polar_mle(std::span<const PolarSample> samples) {
    if (samples.size() < 2) {
        throw DomainError("fit_polar_mle: need at least 2 samples");
    }
    const double n = static_cast<double>(samples.size());
    double sum_d = 0.0;
    double sum_c = 0.0;
    double sum_s = 0.0;
    for (const auto& s : samples) {
        if (!(s.d >= 0.0) || !std::isfinite(s.d) || !std::isfinite(s.phi)) {
            throw DomainError("fit_polar_mle: distances must be finite and non-negative");
        }
        sum_d += s.d;
        sum_c += std::cos(s.phi);
        sum_s += std::sin(s.phi);
    }
    PolarParams out;
    out.mu_d = sum_d / n;
    double ss = 0.0;
    for (const auto& s : samples) {
        ss += (s.d - out.mu_d) * (s.d - out.mu_d);
    }
    out.var_d = std::max(kVarMin, ss / (n - 1.0));

    const double c = sum_c / n;
    const double s = sum_s / n;
    const double r = std::hypot(c, s);
    out.mu_phi = std::atan2(s, c);

    if (r < 1e-12) {
        out.kappa_phi = 0.0;
    } else if (r >= 1.0 - 1e-12) {
        out.kappa_phi = kKappaMax;
    } else {
        // Banerjee et al. starting point, then Newton on A(kappa) = r.
        double kappa = r * (2.0 - r * r) / (1.0 - r * r);
        for (int it = 0; it < 20; ++it) {
            if (kappa >= kKappaMax) {
                break;
            }
            const double a = bessel_ratio(kappa);
            const double slope = 1.0 - a / kappa - a * a;
            if (!(slope > 0.0)) {
                break;
            }
            double next = kappa - (a - r) / slope;
            if (next <= 0.0) {
                next = 0.5 * kappa;
            }
            const double step = std::fabs(next - kappa);
            kappa = next;
            if (step < 1e-12 * kappa) {
                break;
            }
        }
        out.kappa_phi = std::clamp(kappa, 0.0, kKappaMax);
    }
    return out;
}

std::vector<PolarSample> sample_polar(const PolarParams& params, int n, std::uint64_t seed) {
    if (n < 1) {
        throw DomainError("sample_polar: n must be positive");
    }
    // kappa is not clamped here; only the fitted side is bounded.
    PolarParams p = params;
    p.var_d = std::max(p.var_d, kVarMin);
    p.kappa_phi = std::max(p.kappa_phi, 0.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist_d(p.mu_d, std::sqrt(p.var_d));
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // Best & Fisher (1979) envelope constants.
    const double kappa = p.kappa_phi;
    const bool uniform_angle = kappa < 1e-8;
    double r = 0.0;
    if (!uniform_angle) {
        const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
        const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
        r = (1.0 + rho * rho) / (2.0 * rho);
    }

    std::vector<PolarSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double d = dist_d(rng);
        while (d < 0.0) {
            d = dist_d(rng);
        }
        double phi = 0.0;
        if (uniform_angle) {
            phi = (2.0 * unif(rng) - 1.0) * kPi;
        } else {
            double f = 0.0;
            while (true) {
                const double u1 = unif(rng);
                const double u2 = unif(rng);
                const double z = std::cos(kPi * u1);
                f = (1.0 + r * z) / (r + z);
                const double c = kappa * (r - f);
                if (c * (2.0 - c) - u2 > 0.0 || std::log(c / u2) + 1.0 - c >= 0.0) {
                    break;
                }
            }
            const double u3 = unif(rng);
            const double offset = std::acos(std::clamp(f, -1.0, 1.0));
            phi = wrap_angle(p.mu_phi + (u3 > 0.5 ? offset : -offset));
        }
        out.push_back({d, phi});
    }
    return out;
}

ScoreField score_field(const SpatialMixture& mix, const GridSpec& grid) {
    grid.validate();
    const auto w = mix.normalized_weights();

    struct Prepared {
        double log_w;
        double ax, ay;
        double mu_d, inv_two_var, log_norm;
        double kappa, cos_mu, sin_mu;
    };
    std::vector<Prepared> comps;
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (w[j] <= 0.0) {
            continue;
        }
        const auto& c = mix.components[j];
        const auto& p = c.params;
        if (!(p.var_d > 0.0)) {
            throw DomainError("score_field: variance must be positive");
        }
        if (!(p.kappa_phi >= 0.0)) {
            throw DomainError("score_field: concentration must be non-negative");
        }
        const double log_norm = -0.5 * std::log(2.0 * kPi * p.var_d) - std::log(2.0 * kPi) - log_bessel_i0(p.kappa_phi);
        comps.push_back({std::log(w[j]), c.anchor.x, c.anchor.y, p.mu_d, 0.5 / p.var_d, log_norm, p.kappa_phi,
                         std::cos(p.mu_phi), std::sin(p.mu_phi)});
    }

    ScoreField field;
    field.grid = grid;
    const std::size_t cells = static_cast<std::size_t>(grid.resolution) * grid.resolution;
    field.values.resize(cells);
    field.log_values.resize(cells);
    std::vector<double> terms(comps.size());
    for (int row = 0; row < grid.resolution; ++row) {
        for (int col = 0; col < grid.resolution; ++col) {
            const Point x = grid.cell_center(row, col);
            double peak = kNegInf;
            for (std::size_t j = 0; j < comps.size(); ++j) {
                const auto& c = comps[j];
                const double dx = x.x - c.ax;
                const double dy = x.y - c.ay;
                const double d = std::hypot(dx, dy);
                // cos(phi - mu) without atan2; phi := 0 at the anchor.
                const double cos_delta = d > 0.0 ? (dx * c.cos_mu + dy * c.sin_mu) / d : c.cos_mu;
                const double diff = d - c.mu_d;
                terms[j] = c.log_w + c.log_norm - diff * diff * c.inv_two_var + c.kappa * cos_delta;
                peak = std::max(peak, terms[j]);
            }
            double acc = 0.0;
            for (double t : terms) {
                acc += std::exp(t - peak);
            }
            const std::size_t k = static_cast<std::size_t>(row) * grid.resolution + col;
            field.log_values[k] = peak + std::log(acc);
            field.values[k] = std::exp(field.log_values[k]);
        }
    }
    return field;
}

namespace {

std::vector<double> logs_of(const ScoreField& f) {
    if (!f.log_values.empty()) {
        return f.log_values;
    }
    std::vector<double> out(f.values.size());
    for (std::size_t k = 0; k < f.values.size(); ++k) {
        if (!(f.values[k] >= 0.0) || !std::isfinite(f.values[k])) {
            throw DomainError("score field values must be finite and non-negative");
        }
        out[k] = f.values[k] > 0.0 ? std::log(f.values[k]) : kNegInf;
    }
    return out;
}

}  // namespace

ScoreField combine_score_fields(std::span<const ScoreField> fields) {
    if (fields.empty()) {
        throw DomainError("combine_score_fields: no fields given");
    }
    const GridSpec grid = fields.front().grid;
    grid.validate();
    const std::size_t cells = static_cast<std::size_t>(grid.resolution) * grid.resolution;

    std::vector<double> total(cells, 0.0);
    for (const auto& f : fields) {
        if (!(f.grid == grid)) {
            throw ShapeError("combine_score_fields: grid mismatch");
        }
        if (f.values.size() != cells && f.log_values.size() != cells) {
            throw DomainError("combine_score_fields: field size does not match its grid");
        }
        const auto logs = logs_of(f);
        const double peak = *std::max_element(logs.begin(), logs.end());
        if (peak == kNegInf) {
            throw ContradictionError("combine_score_fields: an input field is zero everywhere");
        }
        for (std::size_t k = 0; k < cells; ++k) {
            total[k] += logs[k] - peak;
        }
    }

    const double peak = *std::max_element(total.begin(), total.end());
    // The product of max-normalized fields underflows double precision
    // everywhere: the expressions cannot be satisfied together.
    if (!(peak >= std::log(DBL_MIN))) {
        throw ContradictionError("combined field is zero everywhere; expressions are contradictory");
    }
    ScoreField out;
    out.grid = grid;
    out.values.resize(cells);
    out.log_values.resize(cells);
    for (std::size_t k = 0; k < cells; ++k) {
        out.log_values[k] = total[k] - peak;
        out.values[k] = std::exp(out.log_values[k]);
    }
    return out;
}

ArgmaxResult grid_argmax(const ScoreField& field) {
    field.grid.validate();
    const std::size_t cells = static_cast<std::size_t>(field.grid.resolution) * field.grid.resolution;
    const bool use_logs = field.log_values.size() == cells;
    const auto& src = use_logs ? field.log_values : field.values;
    if (src.size() != cells) {
        throw DomainError("grid_argmax: field size does not match its grid");
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < cells; ++k) {
        if (src[k] > src[best]) {
            best = k;
        }
    }
    const bool zero = use_logs ? !(src[best] > kNegInf) : !(src[best] > 0.0);
    if (zero) {
        throw DomainError("grid_argmax: field is zero everywhere");
    }
    ArgmaxResult r;
    r.row = static_cast<int>(best / field.grid.resolution);
    r.col = static_cast<int>(best % field.grid.resolution);
    r.location = field.grid.cell_center(r.row, r.col);
    r.score = field.values.size() == cells ? field.values[best] : std::exp(field.log_values[best]);
    return r;
}

}  // namespace grounding
