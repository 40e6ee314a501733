// Copyright (c) 2026 the gradnorm authors
// Licensed under the Apache License 2.0.

#ifndef GRADNORM_NORMFIT_HPP
#define GRADNORM_NORMFIT_HPP

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gradnorm/errors.hpp"
#include "gradnorm/gradient.hpp"
#include "gradnorm/parallel.hpp"
#include "gradnorm/pyramid.hpp"

namespace gradnorm {

/// One (image, scale) observation: the gradient expectation of the
/// resampled image next to the expectation of its reference.
struct ScaleSample {
    std::string image_id;
    double scale = 0.0;
    double e_phi_scaled = 0.0;  ///< E[phi] of the resampled image
    double e_phi_ref = 0.0;     ///< E[phi] of the reference image
};

/// Samples with a zero reference expectation carry no ratio information
/// and are excluded from every fit.
inline bool sample_usable(const ScaleSample& s) { return s.e_phi_ref > 0.0; }

/// Ratio-space quantities additionally need a nonzero scaled expectation.
inline bool sample_has_ratio(const ScaleSample& s) {
    return s.e_phi_ref > 0.0 && s.e_phi_scaled > 0.0;
}

/// Piecewise normalization function fitted to scale samples:
/// g(s) = a1*s + b1 for s > 1 and g(s) = a2*s^2 + b2*s + c2 for s <= 1,
/// with g(1) = 1 enforced on both branches, which also makes them agree at
/// the reference scale.
struct NormalizationModel {
    double a1 = 0.0, b1 = 1.0;            ///< up branch (s > 1)
    double a2 = 0.0, b2 = 0.0, c2 = 1.0;  ///< down branch (s <= 1)
    double lambda_up = 0.0, lambda_down = 0.0;  ///< Lagrange multipliers, diagnostic
    double rmse_up = 0.0, rmse_down = 0.0, rmse_total = 0.0;  ///< residual-space
    double c_used = 0.5;  ///< corpus constant the fit corresponds to

    /// Evaluate g at a scale. The reference scale returns exactly 1.0: the
    /// constraint pins g(1) = 1, and applying it directly keeps reference
    /// images bit-identical under normalization.
    double evaluate(double s) const {
        if (!(s > 0.0)) throw std::invalid_argument("NormalizationModel: s must be > 0");
        if (s == 1.0) return 1.0;
        if (s > 1.0) return a1 * s + b1;
        return (a2 * s + b2) * s + c2;
    }
};

/// Power-law baseline g_pl(s) = amp * s^exponent, fitted in log-log space.
struct PowerLawModel {
    double amp = 1.0;
    double exponent = 0.0;
    double rmse = 0.0;  ///< residual-space, same definition as the polynomial fit

    double evaluate(double s) const {
        if (!(s > 0.0)) throw std::invalid_argument("PowerLawModel: s must be > 0");
        return amp * std::pow(s, exponent);
    }
};

/// Resample every corpus image at every scale and record the gradient
/// expectations. One sample per (image, scale); the reference expectation
/// is computed once per image. Degenerate samples (zero reference
/// expectation) are kept in the output so callers can count them, but are
/// skipped by the fitting routines.
inline std::vector<ScaleSample> collect_samples(
    const std::vector<std::pair<std::string, Image>>& corpus, const ScaleSet& scales,
    unsigned jobs = 1) {
    if (corpus.empty()) throw numeric_error("collect_samples: empty corpus");

    std::vector<GradientStats> ref_stats(corpus.size());
    parallel_for(corpus.size(), jobs,
                 [&](std::size_t i) { ref_stats[i] = image_gradient_stats(corpus[i].second); });

    const std::size_t n_scales = scales.size();
    std::vector<ScaleSample> samples(corpus.size() * n_scales);
    parallel_for(samples.size(), jobs, [&](std::size_t t) {
        const std::size_t i = t / n_scales;
        const double s = scales.scales()[t % n_scales];
        ScaleSample& out = samples[t];
        out.image_id = corpus[i].first;
        out.scale = s;
        out.e_phi_ref = ref_stats[i].e_phi;
        out.e_phi_scaled = s == 1.0
                               ? ref_stats[i].e_phi
                               : image_gradient_stats(resample_bilinear(corpus[i].second, s)).e_phi;
    });

    if (std::none_of(samples.begin(), samples.end(), sample_usable))
        throw numeric_error("collect_samples: all samples degenerate");
    return samples;
}

namespace detail {

/// Solve the symmetric bordered stationarity system of the equality-
/// constrained least-squares problem  min ||X b - y||^2  s.t.  C b = 1:
///
///   [ 2 X^T X   C^T ] [ beta   ]   [ 2 X^T y ]
///   [   C        0  ] [ lambda ] = [    1    ]
///
/// Dense partial-pivot LU; the systems are 3x3 and 4x4. Returns
/// (beta, lambda). Throws numeric_error on (near-)singularity.
inline std::pair<Eigen::VectorXd, double> solve_constrained_lsq(const Eigen::MatrixXd& X,
                                                                const Eigen::VectorXd& y,
                                                                const Eigen::RowVectorXd& C,
                                                                const char* branch_name) {
    const Eigen::Index p = X.cols();
    Eigen::MatrixXd K(p + 1, p + 1);
    K.topLeftCorner(p, p) = 2.0 * X.transpose() * X;
    K.topRightCorner(p, 1) = C.transpose();
    K.bottomLeftCorner(1, p) = C;
    K(p, p) = 0.0;

    Eigen::VectorXd rhs(p + 1);
    rhs.head(p) = 2.0 * X.transpose() * y;
    rhs(p) = 1.0;

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);
    Eigen::VectorXd sol = lu.solve(rhs);
    const double scale = std::max(1.0, rhs.lpNorm<Eigen::Infinity>());
    if (!sol.allFinite() || (K * sol - rhs).lpNorm<Eigen::Infinity>() > 1e-8 * scale)
        throw numeric_error(std::string("fit_constrained: rank-deficient system on the ") +
                            branch_name + " branch");
    return {sol.head(p), sol(p)};
}

/// Weighted design matrix rows for one branch: each sample contributes
/// e_phi_scaled * (vandermonde of its scale), target e_phi_ref.
inline void branch_design(const std::vector<const ScaleSample*>& rows, bool quadratic,
                          Eigen::MatrixXd& X, Eigen::VectorXd& y) {
    const Eigen::Index p = quadratic ? 3 : 2;
    X.resize(static_cast<Eigen::Index>(rows.size()), p);
    y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double w = rows[i]->e_phi_scaled;
        const double s = rows[i]->scale;
        if (quadratic)
            X.row(static_cast<Eigen::Index>(i)) << w * s * s, w * s, w;
        else
            X.row(static_cast<Eigen::Index>(i)) << w * s, w;
        y(static_cast<Eigen::Index>(i)) = rows[i]->e_phi_ref;
    }
}

inline std::size_t count_distinct_scales(const std::vector<const ScaleSample*>& rows) {
    std::set<double> distinct;
    for (const ScaleSample* s : rows) distinct.insert(s->scale);
    return distinct.size();
}

inline double branch_rmse(const NormalizationModel& m, const std::vector<const ScaleSample*>& rows,
                          bool down_branch) {
    if (rows.empty()) return 0.0;
    double ss = 0.0;
    for (const ScaleSample* s : rows) {
        const double g = down_branch ? (m.a2 * s->scale + m.b2) * s->scale + m.c2
                                     : m.a1 * s->scale + m.b1;
        const double r = s->e_phi_scaled * g - s->e_phi_ref;
        ss += r * r;
    }
    return std::sqrt(ss / static_cast<double>(rows.size()));
}

}  // namespace detail

/// Fit the piecewise normalization function by equality-constrained least
/// squares. Each branch minimizes
///
///   sum over its samples of ( e_phi_scaled * g(s) - e_phi_ref )^2
///
/// subject to g(1) = 1, solved through the bordered stationarity system of
/// the Lagrangian. Reference-scale samples participate in both branch fits
/// (the constraint zeroes their residuals anyway). Requires at least 2
/// distinct scales above 1 and 3 distinct scales at or below 1 among the
/// usable samples.
inline NormalizationModel fit_constrained(const std::vector<ScaleSample>& samples) {
    std::vector<const ScaleSample*> up, down;
    for (const ScaleSample& s : samples) {
        if (!sample_usable(s)) continue;
        if (s.scale >= 1.0) up.push_back(&s);
        if (s.scale <= 1.0) down.push_back(&s);
    }

    std::size_t above = 0;
    {
        std::set<double> d;
        for (const ScaleSample* s : up)
            if (s->scale > 1.0) d.insert(s->scale);
        above = d.size();
    }
    const std::size_t below = detail::count_distinct_scales(down);
    if (above < 2 || below < 3) {
        throw numeric_error(
            "fit_constrained: insufficient scale coverage (need >=2 distinct scales > 1, have " +
            std::to_string(above) + "; need >=3 distinct scales <= 1, have " +
            std::to_string(below) + ")");
    }

    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    NormalizationModel m;

    detail::branch_design(up, /*quadratic=*/false, X, y);
    Eigen::RowVectorXd c_up(2);
    c_up << 1.0, 1.0;
    auto [beta_up, lam_up] = detail::solve_constrained_lsq(X, y, c_up, "up");
    m.a1 = beta_up(0);
    m.b1 = beta_up(1);
    m.lambda_up = lam_up;

    detail::branch_design(down, /*quadratic=*/true, X, y);
    Eigen::RowVectorXd c_down(3);
    c_down << 1.0, 1.0, 1.0;
    auto [beta_down, lam_down] = detail::solve_constrained_lsq(X, y, c_down, "down");
    m.a2 = beta_down(0);
    m.b2 = beta_down(1);
    m.c2 = beta_down(2);
    m.lambda_down = lam_down;

    m.rmse_up = detail::branch_rmse(m, up, false);
    m.rmse_down = detail::branch_rmse(m, down, true);
    {
        // each sample once, branch keyed on its scale
        double ss = 0.0;
        std::size_t n = 0;
        for (const ScaleSample& s : samples) {
            if (!sample_usable(s)) continue;
            const double g = s.scale > 1.0 ? m.a1 * s.scale + m.b1
                                           : (m.a2 * s.scale + m.b2) * s.scale + m.c2;
            const double r = s.e_phi_scaled * g - s.e_phi_ref;
            ss += r * r;
            ++n;
        }
        m.rmse_total = std::sqrt(ss / static_cast<double>(n));
    }
    // implied corpus constant: the down branch's exact form is
    // (1-2c) s^2 + 2cs, so b2 ~ 2c
    m.c_used = 0.5 * m.b2;

    // validate g > 0 over the fitted scale range: branch endpoints, plus
    // the down-branch vertex when it falls inside the range
    {
        auto positive_at = [&m](double s) {
            if (!(m.evaluate(s) > 0.0))
                throw numeric_error("fit_constrained: fitted g(" + std::to_string(s) +
                                    ") is not positive");
        };
        double lo = down.front()->scale, hi = down.front()->scale;
        for (const ScaleSample* s : down) {
            lo = std::min(lo, s->scale);
            hi = std::max(hi, s->scale);
        }
        positive_at(lo);
        positive_at(hi);
        if (m.a2 != 0.0) {
            const double vertex = -m.b2 / (2.0 * m.a2);
            if (vertex > lo && vertex < hi) positive_at(vertex);
        }
        double up_hi = up.front()->scale;
        for (const ScaleSample* s : up) up_hi = std::max(up_hi, s->scale);
        positive_at(up_hi);  // linear branch: g(1) = 1, so only the far end can dip
    }
    return m;
}

/// Least-squares line in log-log space through the per-sample target
/// ratios y = e_phi_ref / e_phi_scaled against s. The reported rmse uses
/// the same residual definition as fit_constrained for comparability.
inline PowerLawModel fit_power_law(const std::vector<ScaleSample>& samples) {
    std::vector<const ScaleSample*> rows;
    for (const ScaleSample& s : samples)
        if (sample_has_ratio(s)) rows.push_back(&s);
    if (detail::count_distinct_scales(rows) < 2)
        throw numeric_error("fit_power_law: need samples at >=2 distinct scales with positive expectations");

    double mx = 0.0, my = 0.0;
    for (const ScaleSample* s : rows) {
        mx += std::log(s->scale);
        my += std::log(s->e_phi_ref / s->e_phi_scaled);
    }
    mx /= static_cast<double>(rows.size());
    my /= static_cast<double>(rows.size());
    double sxx = 0.0, sxy = 0.0;
    for (const ScaleSample* s : rows) {
        const double dx = std::log(s->scale) - mx;
        sxx += dx * dx;
        sxy += dx * (std::log(s->e_phi_ref / s->e_phi_scaled) - my);
    }
    if (!(sxx > 0.0)) throw numeric_error("fit_power_law: scales are not distinct in log space");

    PowerLawModel pl;
    pl.exponent = sxy / sxx;
    pl.amp = std::exp(my - pl.exponent * mx);

    double ss = 0.0;
    std::size_t n = 0;
    for (const ScaleSample& s : samples) {
        if (!sample_usable(s)) continue;
        const double r = s.e_phi_scaled * pl.evaluate(s.scale) - s.e_phi_ref;
        ss += r * r;
        ++n;
    }
    pl.rmse = std::sqrt(ss / static_cast<double>(n));
    return pl;
}

/// Ratio-space RMSE: sqrt(mean (g(s) - e_phi_ref/e_phi_scaled)^2) over the
/// samples where the ratio exists. This is the plotted-curve error, as
/// opposed to the residual-space objective the fits minimize.
template <typename Model>
inline double evaluate_rmse(const Model& model, const std::vector<ScaleSample>& samples) {
    double ss = 0.0;
    std::size_t n = 0;
    for (const ScaleSample& s : samples) {
        if (!sample_has_ratio(s)) continue;
        const double d = model.evaluate(s.scale) - s.e_phi_ref / s.e_phi_scaled;
        ss += d * d;
        ++n;
    }
    if (n == 0) throw numeric_error("evaluate_rmse: no samples with a defined ratio");
    return std::sqrt(ss / static_cast<double>(n));
}

/// The residual-space objective the constrained fit minimizes (both
/// branches; reference-scale samples contribute to both, as in the fit).
inline double residual_objective(const NormalizationModel& m,
                                 const std::vector<ScaleSample>& samples) {
    double obj = 0.0;
    for (const ScaleSample& s : samples) {
        if (!sample_usable(s)) continue;
        if (s.scale >= 1.0) {
            const double r = s.e_phi_scaled * (m.a1 * s.scale + m.b1) - s.e_phi_ref;
            obj += r * r;
        }
        if (s.scale <= 1.0) {
            const double r =
                s.e_phi_scaled * ((m.a2 * s.scale + m.b2) * s.scale + m.c2) - s.e_phi_ref;
            obj += r * r;
        }
    }
    return obj;
}

/// First-order optimality check: the norm of the residual gradient
/// projected onto the constraint null space, relative to the data scale.
/// Zero at the exact constrained minimizer.
inline double kkt_residual(const NormalizationModel& m, const std::vector<ScaleSample>& samples) {
    std::vector<const ScaleSample*> up, down;
    for (const ScaleSample& s : samples) {
        if (!sample_usable(s)) continue;
        if (s.scale >= 1.0) up.push_back(&s);
        if (s.scale <= 1.0) down.push_back(&s);
    }
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    double worst = 0.0;

    detail::branch_design(up, false, X, y);
    {
        Eigen::Vector2d beta(m.a1, m.b1);
        Eigen::VectorXd grad = 2.0 * X.transpose() * (X * beta - y);
        // null(C) for C = (1, 1)
        Eigen::Vector2d n(1.0, -1.0);
        n.normalize();
        const double scale = std::max(1.0, (2.0 * X.transpose() * y).lpNorm<Eigen::Infinity>());
        worst = std::max(worst, std::fabs(n.dot(grad)) / scale);
    }

    detail::branch_design(down, true, X, y);
    {
        Eigen::Vector3d beta(m.a2, m.b2, m.c2);
        Eigen::VectorXd grad = 2.0 * X.transpose() * (X * beta - y);
        Eigen::Vector3d c(1.0, 1.0, 1.0);
        Eigen::Vector3d proj = grad - c * (c.dot(grad) / c.squaredNorm());
        const double scale = std::max(1.0, (2.0 * X.transpose() * y).lpNorm<Eigen::Infinity>());
        worst = std::max(worst, proj.norm() / scale);
    }
    return worst;
}

}  // namespace gradnorm

#endif  // GRADNORM_NORMFIT_HPP
