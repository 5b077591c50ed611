#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace grounding {

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kKappaMax = 500.0;
inline constexpr double kVarMin = 1e-6;

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

/// Wraps an angle into [-pi, pi].
double wrap_angle(double phi);

/// Distance/angle model around one anchor: Gaussian in distance, von Mises
/// in angle.
struct PolarParams {
    double mu_d = 0.0;
    double var_d = 1.0;
    double mu_phi = 0.0;
    double kappa_phi = 0.0;

    /// Returns a copy with the invariants enforced: var_d floored at
    /// kVarMin, kappa clamped to [0, kKappaMax], mu_phi wrapped.
    PolarParams sanitized() const;

    friend bool operator==(const PolarParams&, const PolarParams&) = default;
};

struct MixtureComponent {
    double weight = 0.0;
    PolarParams params;
    Point anchor;
    int node_id = 0;
};

struct SpatialMixture {
    std::vector<MixtureComponent> components;

    /// Weights rescaled to sum to one. Throws DomainError when all are zero.
    std::vector<double> normalized_weights() const;
};

struct GridSpec {
    double x_min = 0.0;
    double x_max = 1.0;
    double y_min = 0.0;
    double y_max = 1.0;
    int resolution = 128;

    void validate() const;
    double cell_width() const { return (x_max - x_min) / resolution; }
    double cell_height() const { return (y_max - y_min) / resolution; }
    Point cell_center(int row, int col) const;
    /// Row and column of the cell containing p (clamped to the grid).
    std::pair<int, int> cell_of(Point p) const;

    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Row-major grid of non-negative location scores. Row i spans y, column j
/// spans x. The natural log of every cell is kept alongside the value so
/// that products of many fields never lose cells to underflow.
struct ScoreField {
    GridSpec grid;
    std::vector<double> values;
    std::vector<double> log_values;

    double at(int row, int col) const { return values[static_cast<std::size_t>(row) * grid.resolution + col]; }
};

/// Modified Bessel function of the first kind, order 0 or 1, for 0 <= x <= 700.
double bessel_i(int order, double x);
/// exp(-x) * I_order(x); finite for all x >= 0.
double bessel_i_scaled(int order, double x);
/// log I_0(x), stable for large x.
double log_bessel_i0(double x);
/// I_1(x) / I_0(x), the mean resultant length of a von Mises(kappa = x).
double bessel_ratio(double x);

double gaussian_pdf(double d, double mu_d, double var_d);
double von_mises_pdf(double phi, double mu_phi, double kappa_phi);
double log_gaussian_pdf(double d, double mu_d, double var_d);
double log_von_mises_pdf(double phi, double mu_phi, double kappa_phi);

/// Distance and angle of x relative to anchor. At the anchor itself the
/// angle is 0.
std::pair<double, double> to_polar(Point x, Point anchor);

double polar_log_score(Point x, const MixtureComponent& comp);
double mixture_score(Point x, const SpatialMixture& mix);
/// log of mixture_score, computed with log-sum-exp.
double mixture_log_score(Point x, const SpatialMixture& mix);

struct PolarSample {
    double d = 0.0;
    double phi = 0.0;
};

PolarParams fit_polar_mle(std::span<const PolarSample> samples);
std::vector<PolarSample> sample_polar(const PolarParams& params, int n, std::uint64_t seed);

ScoreField score_field(const SpatialMixture& mix, const GridSpec& grid);
/// Pointwise product of the fields, max-normalized to a peak of 1. Throws
/// ContradictionError when the product underflows to zero everywhere.
ScoreField combine_score_fields(std::span<const ScoreField> fields);

struct ArgmaxResult {
    Point location;
    double score = 0.0;
    int row = 0;
    int col = 0;
};

ArgmaxResult grid_argmax(const ScoreField& field);

}  // namespace grounding
