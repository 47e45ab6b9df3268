#pragma once

/**
 * @file ensemble_math.hpp
 * @brief Optimization over residual covariance matrices.
 *
 * The ensemble estimator sum_i a_i f_i with sum_i a_i = 1 has training second
 * moment a^T A a, where A is the (uncentered) covariance of the agents'
 * residuals. This header holds everything that works on A directly:
 *
 *  - estimating A from residuals, optionally with off-diagonal entries taken
 *    over a subsample (compressed transmission);
 *  - the closed-form optimal weights a = A^{-1}1 / 1^T A^{-1} 1 and the
 *    resulting eta = 1 / 1^T A^{-1} 1;
 *  - the gradient of 1^T A^{-1} 1 with respect to each agent's prediction
 *    vector;
 *  - the robust (minimax) weights when every off-diagonal entry of A is only
 *    known to within +/- delta, together with the delta policy and the
 *    resulting test-error bound.
 *
 * All functions are pure.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace icoa {

/// Raised when a covariance matrix cannot be inverted even after jitter.
class SingularCovarianceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CovarianceEstimate {
    Eigen::MatrixXd matrix;
    std::size_t n_samples_used = 0;  ///< smallest sample behind any entry
    bool is_subsampled = false;

    Eigen::Index dim() const { return matrix.rows(); }
};

/// Uniform off-diagonal uncertainty radius; diagonal entries are exact.
struct UncertaintyBox {
    double delta = 0.0;

    explicit UncertaintyBox(double d = 0.0) : delta(d) {
        if (!(d >= 0.0) || !std::isfinite(d)) throw std::invalid_argument("UncertaintyBox: delta must be >= 0");
    }
};

/// Combination coefficients constrained to sum to one.
class WeightVector {
public:
    static constexpr double kSumTolerance = 1e-10;

    WeightVector() = default;
    explicit WeightVector(Eigen::VectorXd a) : a_(std::move(a)) {
        if (a_.size() == 0) throw std::invalid_argument("WeightVector: empty");
        if (!a_.allFinite()) throw std::invalid_argument("WeightVector: non-finite entry");
        if (std::abs(a_.sum() - 1.0) > kSumTolerance)
            throw std::invalid_argument("WeightVector: entries must sum to 1");
    }

    static WeightVector uniform(Eigen::Index d) {
        return WeightVector(Eigen::VectorXd::Constant(d, 1.0 / static_cast<double>(d)));
    }

    const Eigen::VectorXd& values() const { return a_; }
    Eigen::Index size() const { return a_.size(); }
    double operator[](Eigen::Index i) const { return a_[i]; }

private:
    Eigen::VectorXd a_;
};

/// Confidence-interval based choice of delta.
struct DeltaPolicy {
    double sigma_max_sq = 1.0;  ///< largest locally estimated residual variance
    double z = 1.96;

    void validate() const {
        if (!(sigma_max_sq > 0.0)) throw std::invalid_argument("DeltaPolicy: sigma_max_sq must be > 0");
        if (!(z > 0.0)) throw std::invalid_argument("DeltaPolicy: z must be > 0");
    }
};

/// Index subsets behind the off-diagonal entries: either one shared sample for
/// every pair, or one sample per unordered pair (i < j, row-major).
struct PairSampling {
    std::vector<std::vector<std::size_t>> samples;

    static PairSampling shared(std::vector<std::size_t> idx) {
        PairSampling p;
        p.samples.push_back(std::move(idx));
        return p;
    }
};

inline std::size_t pair_slot(std::size_t i, std::size_t j, std::size_t d) {
    if (i > j) std::swap(i, j);
    // Number of pairs in rows before i, then offset within row i.
    return i * d - i * (i + 1) / 2 + (j - i - 1);
}

/// A_ij = (1/N') r_i^T r_j. Diagonals always use every row; off-diagonals use
/// the pair's sample when `sampling` is given. With `center`, column means over
/// the same rows are subtracted first.
inline CovarianceEstimate estimate_covariance(const Eigen::MatrixXd& residuals,
                                              const PairSampling* sampling = nullptr,
                                              bool center = false) {
    const Eigen::Index n = residuals.rows();
    const Eigen::Index d = residuals.cols();
    if (d == 0) throw std::invalid_argument("estimate_covariance: no residual columns");
    if (n < 2) throw std::invalid_argument("estimate_covariance: need at least 2 instances");
    if (!residuals.allFinite()) throw std::invalid_argument("estimate_covariance: non-finite residuals");

    CovarianceEstimate est;
    est.n_samples_used = static_cast<std::size_t>(n);
    Eigen::MatrixXd r = residuals;
    if (center) r.rowwise() -= r.colwise().mean();

    if (sampling == nullptr) {
        est.matrix = (r.transpose() * r) / static_cast<double>(n);
        est.matrix = 0.5 * (est.matrix + est.matrix.transpose()).eval();
        return est;
    }

    const auto npairs = static_cast<std::size_t>(d * (d - 1) / 2);
    if (sampling->samples.size() != 1 && sampling->samples.size() != npairs)
        throw std::invalid_argument("estimate_covariance: expected 1 shared sample or one per pair");

    est.is_subsampled = true;
    est.matrix.resize(d, d);
    for (Eigen::Index i = 0; i < d; ++i) est.matrix(i, i) = r.col(i).squaredNorm() / static_cast<double>(n);

    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = i + 1; j < d; ++j) {
            const auto& idx = sampling->samples.size() == 1
                                  ? sampling->samples.front()
                                  : sampling->samples[pair_slot(static_cast<std::size_t>(i),
                                                                static_cast<std::size_t>(j),
                                                                static_cast<std::size_t>(d))];
            if (idx.empty()) throw std::invalid_argument("estimate_covariance: empty subsample");
            if (idx.size() < 2) throw std::invalid_argument("estimate_covariance: subsample needs >= 2 rows");
            double mi = 0.0, mj = 0.0;
            if (center) {
                for (auto k : idx) {
                    mi += residuals(static_cast<Eigen::Index>(k), i);
                    mj += residuals(static_cast<Eigen::Index>(k), j);
                }
                mi /= static_cast<double>(idx.size());
                mj /= static_cast<double>(idx.size());
            }
            double acc = 0.0;
            for (auto k : idx) {
                const auto row = static_cast<Eigen::Index>(k);
                if (row >= n) throw std::out_of_range("estimate_covariance: sample index out of range");
                acc += (residuals(row, i) - mi) * (residuals(row, j) - mj);
            }
            est.matrix(i, j) = est.matrix(j, i) = acc / static_cast<double>(idx.size());
            est.n_samples_used = std::min(est.n_samples_used, idx.size());
        }
    }
    return est;
}

inline CovarianceEstimate estimate_covariance(const Eigen::MatrixXd& residuals,
                                              const PairSampling& sampling, bool center = false) {
    return estimate_covariance(residuals, &sampling, center);
}

// ---------------------------------------------------------------------------
// Linear solves with the jitter policy
// ---------------------------------------------------------------------------

inline constexpr double kMaxConditionNumber = 1e12;

struct JitteredSolve {
    Eigen::VectorXd x;
    double jitter = 0.0;
};

/// Solves A x = b. If A is singular or its condition number reaches 1e12, A is
/// replaced by A + lambda I with lambda = 1e-9 trace(A)/D, then 10 lambda;
/// beyond that a SingularCovarianceError is thrown.
inline JitteredSolve solve_jittered(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
    const Eigen::Index d = a.rows();
    if (a.cols() != d || b.size() != d) throw std::invalid_argument("solve_jittered: shape mismatch");
    if (!a.allFinite()) throw SingularCovarianceError("covariance matrix has non-finite entries");
    const double base = 1e-9 * std::abs(a.trace()) / static_cast<double>(d);
    for (double jitter : {0.0, base, 10.0 * base}) {
        const Eigen::MatrixXd m = a + jitter * Eigen::MatrixXd::Identity(d, d);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
        const Eigen::VectorXd ev = es.eigenvalues().cwiseAbs();
        const double lo = ev.minCoeff();
        const double hi = ev.maxCoeff();
        if (!(lo > 0.0) || hi / lo >= kMaxConditionNumber) continue;
        JitteredSolve out;
        out.x = m.fullPivLu().solve(b);
        out.jitter = jitter;
        if (out.x.allFinite()) return out;
    }
    throw SingularCovarianceError("covariance matrix is singular (condition number >= 1e12 after jitter)");
}

// ---------------------------------------------------------------------------
// Closed-form weights
// ---------------------------------------------------------------------------

struct OptimalWeights {
    WeightVector weights;
    double eta = 0.0;        ///< 1 / (1^T A^{-1} 1) = a^T A a at the optimum
    double inv_sum = 0.0;    ///< 1^T A^{-1} 1, the quantity ICOA ascends
    double jitter = 0.0;
};

inline OptimalWeights optimal_weights(const Eigen::MatrixXd& a) {
    const Eigen::Index d = a.rows();
    if (d == 0 || a.cols() != d) throw std::invalid_argument("optimal_weights: A must be square and nonempty");
    const JitteredSolve g = solve_jittered(a, Eigen::VectorXd::Ones(d));
    const double s = g.x.sum();
    if (!(std::abs(s) > 0.0) || !std::isfinite(s))
        throw SingularCovarianceError("optimal_weights: 1^T A^{-1} 1 is zero or non-finite");
    Eigen::VectorXd w = g.x / s;
    // Remove the rounding drift so the sum constraint holds to machine precision.
    w.array() += (1.0 - w.sum()) / static_cast<double>(d);
    OptimalWeights out{WeightVector(std::move(w)), 1.0 / s, s, g.jitter};
    return out;
}

inline OptimalWeights optimal_weights(const CovarianceEstimate& a) { return optimal_weights(a.matrix); }

/// Quadratic form a^T M a with a fixed (row-major) summation order.
inline double quadratic_form(const Eigen::MatrixXd& m, const Eigen::VectorXd& a) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) acc += a[i] * m(i, j) * a[j];
    return acc;
}

// ---------------------------------------------------------------------------
// Gradient of 1^T A^{-1} 1
// ---------------------------------------------------------------------------

/// Columns (2 g_i / N) R g: the gradient of 1^T A^{-1} 1 when g = A^{-1} 1.
inline Eigen::MatrixXd gradient_along(const Eigen::MatrixXd& residuals, const Eigen::VectorXd& g) {
    const Eigen::Index n = residuals.rows();
    if (g.size() != residuals.cols()) throw std::invalid_argument("gradient_along: shape mismatch");
    const Eigen::VectorXd rg = residuals * g;
    Eigen::MatrixXd grad(n, g.size());
    for (Eigen::Index i = 0; i < g.size(); ++i) grad.col(i) = (2.0 * g[i] / static_cast<double>(n)) * rg;
    return grad;
}

/// d(1^T A^{-1} 1)/d f_i for every agent i, as the columns of an N x D matrix.
///
/// With g = A^{-1} 1 and A = R^T R / N (R = y 1^T - F), column i is
/// (2 g_i / N) R g. Only the residuals enter.
inline Eigen::MatrixXd eta_gradient(const Eigen::MatrixXd& residuals, const Eigen::MatrixXd& a) {
    const Eigen::Index n = residuals.rows();
    const Eigen::Index d = residuals.cols();
    if (a.rows() != d || a.cols() != d) throw std::invalid_argument("eta_gradient: A does not match residuals");
    if (n == 0) throw std::invalid_argument("eta_gradient: no instances");
    if (residuals.isZero(0.0)) return Eigen::MatrixXd::Zero(n, d);
    return gradient_along(residuals, solve_jittered(a, Eigen::VectorXd::Ones(d)).x);
}

inline Eigen::MatrixXd eta_gradient(const Eigen::MatrixXd& residuals, const CovarianceEstimate& a) {
    return eta_gradient(residuals, a.matrix);
}

// ---------------------------------------------------------------------------
// Minimax weighting over the uncertainty box
// ---------------------------------------------------------------------------

struct WorstCase {
    Eigen::MatrixXd matrix;
    double zeta = 0.0;  ///< a^T A_worst a
};

/// Inner maximization: each off-diagonal entry moves by +/-delta in the
/// direction of sgn(a_i a_j), with sgn(0) taken as +1.
inline WorstCase worst_case_covariance(const Eigen::MatrixXd& a0, const UncertaintyBox& box,
                                       const Eigen::VectorXd& a) {
    const Eigen::Index d = a0.rows();
    if (a0.cols() != d || a.size() != d) throw std::invalid_argument("worst_case_covariance: shape mismatch");
    WorstCase out{a0, 0.0};
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            if (i != j) out.matrix(i, j) = a0(i, j) + (a[i] * a[j] >= 0.0 ? box.delta : -box.delta);
    out.zeta = quadratic_form(out.matrix, a);
    return out;
}

inline WorstCase worst_case_covariance(const Eigen::MatrixXd& a0, const UncertaintyBox& box,
                                       const WeightVector& a) {
    return worst_case_covariance(a0, box, a.values());
}

/// a^T A0 a + 2 delta sum_{i<j} |a_i||a_j|  =  a^T (A0 - delta I) a + delta (sum |a_i|)^2.
inline double minimax_objective(const Eigen::MatrixXd& a0, double delta, const Eigen::VectorXd& a) {
    const double l1 = a.cwiseAbs().sum();
    return a.dot(a0 * a) + delta * (l1 * l1 - a.squaredNorm());
}

struct MinimaxResult {
    WeightVector weights;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
    bool bounded = true;  ///< false when descent ran off to infinity and `init` was returned
};

struct MinimaxOptions {
    int max_iterations = 10000;
    double relative_tolerance = 1e-9;
    double armijo = 1e-4;
    int max_halvings = 60;
    bool search_all_faces = false;  ///< global minimum for D <= 8 instead of the local descent result
};

namespace detail {

inline Eigen::VectorXd minimax_subgradient(const Eigen::MatrixXd& a0, double delta, const Eigen::VectorXd& a) {
    const double l1 = a.cwiseAbs().sum();
    Eigen::VectorXd sgn = a.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    return 2.0 * (a0 * a) + 2.0 * delta * (l1 * sgn - a);
}

/// Exact minimizer of the objective restricted to the current sign pattern
/// and support; returned only if it keeps the pattern and lowers the value.
inline bool polish_in_orthant(const Eigen::MatrixXd& a0, double delta, Eigen::VectorXd& a, double& f) {
    const Eigen::Index d = a.size();
    const double amax = a.cwiseAbs().maxCoeff();
    std::vector<Eigen::Index> support;
    for (Eigen::Index i = 0; i < d; ++i)
        if (std::abs(a[i]) > 1e-12 * amax) support.push_back(i);
    const auto k = static_cast<Eigen::Index>(support.size());
    if (k == 0) return false;
    Eigen::MatrixXd q(k, k);
    Eigen::VectorXd s(k);
    for (Eigen::Index p = 0; p < k; ++p) s[p] = a[support[static_cast<std::size_t>(p)]] > 0.0 ? 1.0 : -1.0;
    for (Eigen::Index p = 0; p < k; ++p)
        for (Eigen::Index r = 0; r < k; ++r)
            q(p, r) = a0(support[static_cast<std::size_t>(p)], support[static_cast<std::size_t>(r)]) +
                      delta * (s[p] * s[r] - (p == r ? 1.0 : 0.0));
    Eigen::VectorXd sol = q.fullPivLu().solve(Eigen::VectorXd::Ones(k));
    const double tot = sol.sum();
    if (!sol.allFinite() || !(std::abs(tot) > 0.0)) return false;
    sol /= tot;
    Eigen::VectorXd cand = Eigen::VectorXd::Zero(d);
    for (Eigen::Index p = 0; p < k; ++p) {
        if (sol[p] * s[p] <= 0.0) return false;
        cand[support[static_cast<std::size_t>(p)]] = sol[p];
    }
    const double fc = minimax_objective(a0, delta, cand);
    if (!(fc < f)) return false;
    a = std::move(cand);
    f = fc;
    return true;
}

/// Largest dimension for which every face is searched.
inline constexpr Eigen::Index kMaxFaceSearchDim = 8;

/// Exhaustive search over faces (support and sign pattern): on each face the
/// objective is the quadratic a_S^T (A0_S + delta (s s^T - I)) a_S, whose
/// stationary point under sum a = 1 is a candidate when it keeps the signs.
/// A bounded minimum is attained at one of these points. Replaces `a` when a
/// candidate is lower.
inline bool search_faces(const Eigen::MatrixXd& a0, double delta, Eigen::VectorXd& a, double& f) {
    const Eigen::Index d = a.size();
    if (d > kMaxFaceSearchDim) return false;
    std::size_t patterns = 1;
    for (Eigen::Index i = 0; i < d; ++i) patterns *= 3;
    std::vector<Eigen::Index> support;
    std::vector<double> sign;
    Eigen::VectorXd best;
    double fbest = f;
    for (std::size_t code = 1; code < patterns; ++code) {
        support.clear();
        sign.clear();
        std::size_t c = code;
        for (Eigen::Index i = 0; i < d; ++i, c /= 3) {
            if (c % 3 == 0) continue;
            support.push_back(i);
            sign.push_back(c % 3 == 1 ? 1.0 : -1.0);
        }
        const auto k = static_cast<Eigen::Index>(support.size());
        Eigen::MatrixXd q(k, k);
        for (Eigen::Index p = 0; p < k; ++p)
            for (Eigen::Index r = 0; r < k; ++r)
                q(p, r) = a0(support[static_cast<std::size_t>(p)], support[static_cast<std::size_t>(r)]) +
                          delta * (sign[static_cast<std::size_t>(p)] * sign[static_cast<std::size_t>(r)] -
                                   (p == r ? 1.0 : 0.0));
        Eigen::FullPivLU<Eigen::MatrixXd> lu(q);
        if (!lu.isInvertible()) continue;
        Eigen::VectorXd x = lu.solve(Eigen::VectorXd::Ones(k));
        const double tot = x.sum();
        if (!x.allFinite() || !(std::abs(tot) > 0.0)) continue;
        x /= tot;
        bool keeps = true;
        for (Eigen::Index p = 0; p < k && keeps; ++p) keeps = x[p] * sign[static_cast<std::size_t>(p)] > 0.0;
        if (!keeps) continue;
        Eigen::VectorXd cand = Eigen::VectorXd::Zero(d);
        for (Eigen::Index p = 0; p < k; ++p) cand[support[static_cast<std::size_t>(p)]] = x[p];
        const double fc = minimax_objective(a0, delta, cand);
        if (fc < fbest) {
            fbest = fc;
            best = std::move(cand);
        }
    }
    if (best.size() == 0) return false;
    a = std::move(best);
    f = fbest;
    return true;
}

}  // namespace detail

/// Minimizes a^T A0 a + 2 delta sum_{i<j} |a_i||a_j| over sum a = 1.
///
/// Projected subgradient descent from `init` with Armijo backtracking (step
/// 1.0 halved until sufficient decrease, in units where the objective is
/// scaled to O(1)), stopped at relative change < 1e-9 or 1e4 iterations, then
/// an exact solve on the final sign pattern. The result is a local minimum
/// once delta > lambda_min(A0); `search_all_faces` makes it global for D <= 8.
/// The returned value never exceeds the objective at `init`. With delta = 0 and positive definite A0 the
/// closed form is returned directly.
inline MinimaxResult minimax_weights(const Eigen::MatrixXd& a0, const UncertaintyBox& box,
                                     const WeightVector& init, const MinimaxOptions& opt = {}) {
    const Eigen::Index d = a0.rows();
    if (a0.cols() != d || init.size() != d) throw std::invalid_argument("minimax_weights: shape mismatch");
    const double delta = box.delta;

    if (delta == 0.0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a0, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() > 0.0) {
            try {
                OptimalWeights ow = optimal_weights(a0);
                const double v = minimax_objective(a0, 0.0, ow.weights.values());
                if (v <= minimax_objective(a0, 0.0, init.values()))
                    return {std::move(ow.weights), v, 0, true};
            } catch (const SingularCovarianceError&) {
            }
        }
    }

    const double scale_ref = std::max({a0.diagonal().cwiseAbs().mean(), delta, 1e-300});
    const double scale = 1.0 / scale_ref;
    const Eigen::MatrixXd a0s = a0 * scale;
    const double ds = delta * scale;

    Eigen::VectorXd a = init.values();
    double f = minimax_objective(a0s, ds, a);
    MinimaxResult out;
    bool converged = false;
    int it = 0;
    for (int round = 0; round < 4 && !converged; ++round) {
        for (; it < opt.max_iterations; ++it) {
            Eigen::VectorXd p = detail::minimax_subgradient(a0s, ds, a);
            p.array() -= p.mean();
            const double pp = p.squaredNorm();
            if (!(pp > 0.0)) {
                converged = true;
                break;
            }
            double t = 1.0;
            bool accepted = false;
            Eigen::VectorXd next;
            double fn = f;
            for (int h = 0; h < opt.max_halvings; ++h, t *= 0.5) {
                next = a - t * p;
                fn = minimax_objective(a0s, ds, next);
                if (fn <= f - opt.armijo * t * pp) {
                    accepted = true;
                    break;
                }
            }
            if (!accepted) {
                converged = true;
                break;
            }
            const double rel = std::abs(f - fn) / std::max(std::abs(f), 1e-300);
            a = std::move(next);
            f = fn;
            if (!std::isfinite(f)) break;
            if (rel < opt.relative_tolerance) {
                converged = true;
                ++it;
                break;
            }
        }
        if (!std::isfinite(f)) break;
        // A successful orthant solve may expose further descent; re-enter the loop.
        if (detail::polish_in_orthant(a0s, ds, a, f)) converged = false;
        else break;
    }
    // Descent can stop in a local minimum once delta exceeds lambda_min(A0).
    if (opt.search_all_faces && std::isfinite(f)) detail::search_faces(a0s, ds, a, f);
    a.array() += (1.0 - a.sum()) / static_cast<double>(d);
    out.iterations = it;
    out.converged = converged && std::isfinite(f);
    out.value = minimax_objective(a0, delta, a);
    // Unbounded descent (indefinite A0) ends with weights too large to renormalize.
    if (!a.allFinite() || std::abs(a.sum() - 1.0) > WeightVector::kSumTolerance) {
        out.weights = init;
        out.value = minimax_objective(a0, delta, init.values());
        out.converged = false;
        out.bounded = false;
        return out;
    }
    out.weights = WeightVector(std::move(a));
    return out;
}

inline MinimaxResult minimax_weights(const CovarianceEstimate& a0, const UncertaintyBox& box,
                                     const WeightVector& init, const MinimaxOptions& opt = {}) {
    return minimax_weights(a0.matrix, box, init, opt);
}

/// True iff delta <= lambda_min(A0) (tolerance 1e-10), i.e. the penalized
/// minimax objective is convex.
inline bool convexity_check(const Eigen::MatrixXd& a0, double delta) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a0, Eigen::EigenvaluesOnly);
    return delta <= es.eigenvalues().minCoeff() + 1e-10;
}

/// min{ z sigma^2_max / sqrt(N/alpha), 2 sigma^2_max }.
inline double delta_opt(const DeltaPolicy& policy, std::size_t n, double alpha) {
    policy.validate();
    if (!(alpha >= 1.0)) throw std::invalid_argument("delta_opt: alpha must be >= 1");
    const double n_eff = static_cast<double>(n) / alpha;
    if (!(n_eff >= 1.0)) throw std::invalid_argument("delta_opt: N/alpha must be >= 1");
    return std::min(policy.z * policy.sigma_max_sq / std::sqrt(n_eff), 2.0 * policy.sigma_max_sq);
}

/// High-probability bound on the ensemble test error: the minimax value at
/// the pre-training covariance A_ini, started from its closed-form weights.
inline double upper_bound(const Eigen::MatrixXd& a_ini, double delta) {
    WeightVector init = WeightVector::uniform(a_ini.rows());
    try {
        init = optimal_weights(a_ini).weights;
    } catch (const SingularCovarianceError&) {
    }
    return minimax_weights(a_ini, UncertaintyBox(delta), init).value;
}

inline double upper_bound(const CovarianceEstimate& a_ini, double delta) {
    return upper_bound(a_ini.matrix, delta);
}

}  // namespace icoa
