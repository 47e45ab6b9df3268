#pragma once

// Agent orchestration: non-cooperative initialization, the iterative
// covariance optimization loop (optionally with minimax protection over a
// subsampled covariance), the residual-refitting and averaging baselines,
// ensemble prediction, and exact accounting of transmitted residual scalars.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "icoa/datagen.hpp"
#include "icoa/ensemble_math.hpp"
#include "icoa/learners.hpp"
#include "icoa/rng.hpp"

namespace icoa {

using AttributeSet = std::vector<std::size_t>;
using Partition = std::vector<AttributeSet>;

/// One agent per covariate: {{0}, {1}, ..., {m-1}}.
inline Partition singleton_partition(std::size_t m) {
    Partition p(m);
    for (std::size_t j = 0; j < m; ++j) p[j] = {j};
    return p;
}

inline Eigen::MatrixXd select_columns(const Eigen::MatrixXd& x, const AttributeSet& cols) {
    Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
        if (static_cast<Eigen::Index>(cols[c]) >= x.cols())
            throw std::invalid_argument("attribute index " + std::to_string(cols[c]) + " out of range");
        out.col(static_cast<Eigen::Index>(c)) = x.col(static_cast<Eigen::Index>(cols[c]));
    }
    return out;
}

struct AgentState {
    AttributeSet attribute_set;
    LearnerSpec learner_spec;
    FittedModel model;
    Eigen::VectorXd train_predictions;  ///< f_i on the training inputs
    Eigen::VectorXd residual;           ///< y - f_i
    Eigen::MatrixXd train_inputs;       ///< training covariates restricted to attribute_set

    /// Refit on `target` and refresh predictions and residual against `y`.
    void refit(const Eigen::VectorXd& target, const Eigen::VectorXd& y) {
        model = fit(learner_spec, train_inputs, target);
        train_predictions = model.predict(train_inputs);
        residual = y - train_predictions;
    }
};

/// Fits every agent on the outcome, independently of the others.
inline std::vector<AgentState> init_agents(const Dataset& train, const Partition& partition,
                                           const LearnerSpec& spec) {
    if (partition.empty()) throw std::invalid_argument("init_agents: empty partition");
    spec.validate();
    std::vector<AgentState> agents;
    agents.reserve(partition.size());
    for (const auto& attrs : partition) {
        if (attrs.empty()) throw std::invalid_argument("init_agents: agent with no attributes");
        AgentState a;
        a.attribute_set = attrs;
        a.learner_spec = spec;
        a.train_inputs = select_columns(train.covariates, attrs);
        a.refit(train.outcomes, train.outcomes);
        agents.push_back(std::move(a));
    }
    return agents;
}

inline Eigen::MatrixXd residual_matrix(const std::vector<AgentState>& agents) {
    Eigen::MatrixXd r(agents.front().residual.size(), static_cast<Eigen::Index>(agents.size()));
    for (std::size_t i = 0; i < agents.size(); ++i) r.col(static_cast<Eigen::Index>(i)) = agents[i].residual;
    return r;
}

inline Eigen::MatrixXd prediction_matrix(const std::vector<AgentState>& agents, const Eigen::MatrixXd& covariates) {
    Eigen::MatrixXd p(covariates.rows(), static_cast<Eigen::Index>(agents.size()));
    for (std::size_t i = 0; i < agents.size(); ++i)
        p.col(static_cast<Eigen::Index>(i)) =
            agents[i].model.predict(select_columns(covariates, agents[i].attribute_set));
    return p;
}

/// sum_i a_i f_i(x restricted to F_i).
inline Eigen::VectorXd ensemble_predict(const std::vector<AgentState>& agents, const Eigen::VectorXd& weights,
                                        const Eigen::MatrixXd& covariates) {
    if (static_cast<std::size_t>(weights.size()) != agents.size())
        throw std::invalid_argument("ensemble_predict: weight count differs from agent count");
    return prediction_matrix(agents, covariates) * weights;
}

// ---------------------------------------------------------------------------
// Configuration and results
// ---------------------------------------------------------------------------

struct BacksearchConfig {
    double initial_step = 1.0;
    double shrink = 0.5;
    int max_halvings = 30;
};

enum class GradientMode {
    Analytic,      ///< closed-form gradient of 1^T A^{-1} 1
    Perturbation,  ///< central differences of the weight objective (slow reference)
};

/// How a fixed `delta` is turned into a covariance radius. The radius is fixed
/// once per run, from the covariance right after initialization.
enum class DeltaUnits {
    Absolute,     ///< radius = delta
    MaxVariance,  ///< radius = delta * sigma^2_max, the largest initial residual variance
};

struct TrainerConfig {
    double epsilon = 1e-6;
    int max_sweeps = 200;
    BacksearchConfig backsearch;
    double alpha = 1.0;
    std::optional<double> delta = 0.0;  ///< nullopt selects delta_opt
    DeltaUnits delta_units = DeltaUnits::MaxVariance;
    double z = 1.96;
    bool minimax_enabled = false;
    std::uint64_t seed = 0;
    bool random_order = false;
    bool per_pair_samples = false;
    bool center_covariance = false;
    GradientMode gradient_mode = GradientMode::Analytic;
    bool robust_backsearch = true;  ///< with protection, back-search on the minimax value, not 1^T A^{-1} 1
    double divergence_factor = 10.0;

    void validate() const {
        if (!(epsilon > 0.0)) throw std::invalid_argument("TrainerConfig: epsilon must be > 0");
        if (max_sweeps < 1) throw std::invalid_argument("TrainerConfig: max_sweeps must be >= 1");
        if (!(alpha >= 1.0)) throw std::invalid_argument("TrainerConfig: alpha must be >= 1");
        if (delta && !(*delta >= 0.0)) throw std::invalid_argument("TrainerConfig: delta must be >= 0");
        if (!(backsearch.initial_step > 0.0) || !(backsearch.shrink > 0.0 && backsearch.shrink < 1.0) ||
            backsearch.max_halvings < 0)
            throw std::invalid_argument("TrainerConfig: invalid back-search settings");
        if (!(z > 0.0)) throw std::invalid_argument("TrainerConfig: z must be > 0");
    }
};

struct SweepRecord {
    int sweep = 0;
    double eta = 0.0;
    double train_mse = 0.0;
    double test_mse = 0.0;
    double delta = 0.0;  ///< covariance radius in effect (0 without protection)
    Eigen::VectorXd weights;
    std::uint64_t scalars_transmitted = 0;
};

struct TrainResult {
    std::string method;
    std::vector<SweepRecord> trace;
    Eigen::VectorXd final_weights;
    bool converged = false;
    bool diverged = false;
    std::uint64_t scalars_transmitted = 0;
    Eigen::MatrixXd a_ini;  ///< full-sample residual covariance after initialization

    const SweepRecord& last() const { return trace.back(); }
    double final_test_mse() const { return trace.back().test_mse; }
    double best_test_mse() const {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& r : trace)
            if (std::isfinite(r.test_mse)) best = std::min(best, r.test_mse);
        return best;
    }
};

inline std::size_t subsample_size(std::size_t n, double alpha) {
    return std::max<std::size_t>(
        2, static_cast<std::size_t>(std::ceil(static_cast<double>(n) / alpha - 1e-12)));
}

// ---------------------------------------------------------------------------
// The ICOA sweep
// ---------------------------------------------------------------------------

/// Weight objective the agents improve, and the weights it implies.
struct WeightSolve {
    double eta = 0.0;      ///< ensemble objective value (1/s, or the minimax value)
    double merit = 0.0;    ///< quantity the back-search must strictly increase
    Eigen::VectorXd weights;
};

/// Solves the inner weight problem on `a`. Without protection (`radius` = 0)
/// this is the closed form and the merit is 1^T A^{-1} 1; with protection it is
/// the minimax problem and the merit is the negated minimax value.
inline WeightSolve solve_weights(const Eigen::MatrixXd& a, double radius, const Eigen::VectorXd* warm = nullptr) {
    const Eigen::Index d = a.rows();
    if (a.isZero(0.0)) {
        WeightSolve w{0.0, std::numeric_limits<double>::infinity(), WeightVector::uniform(d).values()};
        return w;
    }
    if (radius == 0.0) {
        OptimalWeights ow = optimal_weights(a);
        return {ow.eta, ow.inv_sum, ow.weights.values()};
    }
    WeightVector init = WeightVector::uniform(d);
    try {
        init = optimal_weights(a).weights;
    } catch (const SingularCovarianceError&) {
        if (warm) init = WeightVector(*warm);
    }
    MinimaxResult mm = minimax_weights(a, UncertaintyBox(radius), init);
    if (warm) {
        MinimaxResult alt = minimax_weights(a, UncertaintyBox(radius), WeightVector(*warm));
        if (alt.bounded && (!mm.bounded || alt.value < mm.value)) mm = std::move(alt);
    }
    if (!mm.bounded) {
        // Every covariance in the box is negative along the descent ray, so the
        // estimate is unusable: keep the old weights and lose to any bounded trial.
        const Eigen::VectorXd w = warm ? *warm : init.values();
        return {minimax_objective(a, radius, w), -std::numeric_limits<double>::infinity(), w};
    }
    return {mm.value, -mm.value, mm.weights.values()};
}

/// Mutable state carried between sweeps of one ICOA run.
struct IcoaState {
    Eigen::VectorXd y;
    CovarianceEstimate a;
    double radius = 0.0;
    Eigen::VectorXd weights;
    double eta = 0.0;
    double eta_start = 0.0;  ///< objective on this sweep's covariance before any update
    std::uint64_t scalars_transmitted = 0;
    std::size_t accepted_updates = 0;
};

namespace detail {

inline PairSampling draw_sampling(std::size_t n, std::size_t d, const TrainerConfig& cfg, Rng& rng) {
    const std::size_t m = subsample_size(n, cfg.alpha);
    if (!cfg.per_pair_samples) return PairSampling::shared(rng.sample_without_replacement(n, m));
    PairSampling p;
    for (std::size_t k = 0; k < d * (d - 1) / 2; ++k) p.samples.push_back(rng.sample_without_replacement(n, m));
    return p;
}

inline double covariance_radius(const TrainerConfig& cfg, const Eigen::MatrixXd& a_ini, std::size_t n) {
    if (!cfg.minimax_enabled) return 0.0;
    const double sigma_max_sq = a_ini.diagonal().maxCoeff();
    if (!cfg.delta) {
        if (!(sigma_max_sq > 0.0)) return 0.0;
        return delta_opt(DeltaPolicy{sigma_max_sq, cfg.z}, n, cfg.alpha);
    }
    return cfg.delta_units == DeltaUnits::MaxVariance ? *cfg.delta * sigma_max_sq : *cfg.delta;
}

/// Central-difference estimate of d merit / d f_i (entries of f_i perturbed one at a time).
inline Eigen::VectorXd perturbation_direction(const Eigen::MatrixXd& r, std::size_t agent, const PairSampling* sampling,
                                              bool center, double radius, const Eigen::VectorXd& warm) {
    const Eigen::Index n = r.rows();
    const auto i = static_cast<Eigen::Index>(agent);
    const double scale = std::max(r.col(i).cwiseAbs().maxCoeff(), 1e-3);
    const double h = 1e-5 * scale;
    Eigen::VectorXd dir(n);
    Eigen::MatrixXd work = r;
    for (Eigen::Index k = 0; k < n; ++k) {
        const double keep = work(k, i);
        work(k, i) = keep - h;  // f + h
        const double up = solve_weights(estimate_covariance(work, sampling, center).matrix, radius, &warm).merit;
        work(k, i) = keep + h;  // f - h
        const double down = solve_weights(estimate_covariance(work, sampling, center).matrix, radius, &warm).merit;
        work(k, i) = keep;
        dir[k] = (up - down) / (2.0 * h);
    }
    return dir;
}

}  // namespace detail

/// One pass over the agents. For each agent (ascending index unless
/// `random_order`): take the gradient of 1^T A^{-1} 1 for f_i, back-search the
/// step by halving until a refit on f_i + step * direction strictly improves
/// the merit (skip the agent after max_halvings), then re-estimate A. The
/// merit is 1^T A^{-1} 1, or the negated minimax value when protection is on
/// and `robust_backsearch` is set.
///
/// Every agent update costs (D-1) * ceil(N/alpha) transmitted scalars.
/// With alpha > 1 a fresh row sample is drawn for the sweep; off-diagonal
/// covariances use it, diagonals use all rows.
inline void icoa_sweep(std::vector<AgentState>& agents, IcoaState& st, const TrainerConfig& cfg, Rng& rng) {
    const std::size_t d = agents.size();
    const auto n = static_cast<std::size_t>(st.y.size());
    std::optional<PairSampling> sampling;
    if (cfg.alpha > 1.0) sampling = detail::draw_sampling(n, d, cfg, rng);
    const PairSampling* sp = sampling ? &*sampling : nullptr;
    const std::uint64_t per_update = static_cast<std::uint64_t>(d - 1) * (sp ? subsample_size(n, cfg.alpha) : n);

    Eigen::MatrixXd r = residual_matrix(agents);
    st.a = estimate_covariance(r, sp, cfg.center_covariance);

    std::vector<std::size_t> order(d);
    for (std::size_t i = 0; i < d; ++i) order[i] = i;
    if (cfg.random_order) rng.shuffle(order);

    st.eta_start = solve_weights(st.a.matrix, st.radius, &st.weights).eta;

    const double search_radius = cfg.robust_backsearch ? st.radius : 0.0;
    st.accepted_updates = 0;
    for (std::size_t i : order) {
        const auto col = static_cast<Eigen::Index>(i);
        WeightSolve cur = solve_weights(st.a.matrix, search_radius, &st.weights);
        Eigen::VectorXd direction;
        if (cfg.gradient_mode == GradientMode::Perturbation)
            direction = detail::perturbation_direction(r, i, sp, cfg.center_covariance, search_radius, cur.weights);
        else
            direction = eta_gradient(r, st.a.matrix).col(col);

        if (direction.allFinite() && direction.squaredNorm() > 0.0) {
            double step = cfg.backsearch.initial_step;
            for (int h = 0; h <= cfg.backsearch.max_halvings; ++h, step *= cfg.backsearch.shrink) {
                const Eigen::VectorXd target = agents[i].train_predictions + step * direction;
                FittedModel model = fit(agents[i].learner_spec, agents[i].train_inputs, target);
                Eigen::VectorXd pred = model.predict(agents[i].train_inputs);
                Eigen::MatrixXd trial = r;
                trial.col(col) = st.y - pred;
                if (!trial.allFinite()) continue;
                CovarianceEstimate a_trial = estimate_covariance(trial, sp, cfg.center_covariance);
                double merit = -std::numeric_limits<double>::infinity();
                try {
                    merit = solve_weights(a_trial.matrix, search_radius, &cur.weights).merit;
                } catch (const SingularCovarianceError&) {
                    continue;
                }
                if (merit > cur.merit) {
                    agents[i].model = std::move(model);
                    agents[i].train_predictions = std::move(pred);
                    agents[i].residual = trial.col(col);
                    r.col(col) = agents[i].residual;
                    st.a = std::move(a_trial);
                    ++st.accepted_updates;
                    break;
                }
            }
        }
        st.scalars_transmitted += per_update;
    }
    WeightSolve end = solve_weights(st.a.matrix, st.radius, &st.weights);
    st.weights = end.weights;
    st.eta = end.eta;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

namespace detail {

inline double mse(const Eigen::VectorXd& truth, const Eigen::VectorXd& pred) {
    return (truth - pred).squaredNorm() / static_cast<double>(truth.size());
}

inline SweepRecord record(int sweep, double eta, const std::vector<AgentState>& agents, const Eigen::VectorXd& w,
                          const Dataset& train, const Dataset& test, double radius, std::uint64_t scalars) {
    SweepRecord rec;
    rec.sweep = sweep;
    rec.eta = eta;
    Eigen::MatrixXd ftrain(train.size(), static_cast<Eigen::Index>(agents.size()));
    for (std::size_t i = 0; i < agents.size(); ++i)
        ftrain.col(static_cast<Eigen::Index>(i)) = agents[i].train_predictions;
    rec.train_mse = mse(train.outcomes, ftrain * w);
    rec.test_mse = test.size() ? mse(test.outcomes, ensemble_predict(agents, w, test.covariates))
                               : std::numeric_limits<double>::quiet_NaN();
    rec.delta = radius;
    rec.weights = w;
    rec.scalars_transmitted = scalars;
    return rec;
}

inline bool finite_record(const SweepRecord& r) {
    return std::isfinite(r.eta) && std::isfinite(r.train_mse) && (std::isnan(r.test_mse) || std::isfinite(r.test_mse)) &&
           r.weights.allFinite();
}

}  // namespace detail

/// Iterative covariance optimization. Row 0 of the trace is the
/// non-cooperative starting point (closed-form weights on the full-sample
/// covariance); row s is the state after s sweeps.
inline TrainResult run_icoa(const Dataset& train, const Dataset& test, const Partition& partition,
                            const LearnerSpec& spec, const TrainerConfig& cfg) {
    cfg.validate();
    TrainResult res;
    res.method = "icoa";
    Rng rng(derive_seed(cfg.seed, 0x1C0A));
    std::vector<AgentState> agents = init_agents(train, partition, spec);

    IcoaState st;
    st.y = train.outcomes;
    const Eigen::MatrixXd r0 = residual_matrix(agents);
    res.a_ini = estimate_covariance(r0, nullptr, cfg.center_covariance).matrix;
    try {
        WeightSolve w0 = solve_weights(res.a_ini, 0.0);
        st.weights = w0.weights;
        st.eta = w0.eta;
    } catch (const SingularCovarianceError&) {
        st.weights = WeightVector::uniform(static_cast<Eigen::Index>(agents.size())).values();
        st.eta = quadratic_form(res.a_ini, st.weights);
    }
    st.radius = detail::covariance_radius(cfg, res.a_ini, train.size());
    res.trace.push_back(detail::record(0, st.eta, agents, st.weights, train, test, 0.0, 0));
    const double initial_train = res.trace.front().train_mse;

    for (int s = 1; s <= cfg.max_sweeps; ++s) {
        try {
            icoa_sweep(agents, st, cfg, rng);
        } catch (const SingularCovarianceError&) {
            res.diverged = true;
            break;
        } catch (const std::invalid_argument&) {
            // Non-finite residuals reached the covariance estimate.
            res.diverged = true;
            break;
        }
        res.trace.push_back(
            detail::record(s, st.eta, agents, st.weights, train, test, st.radius, st.scalars_transmitted));
        const SweepRecord& rec = res.trace.back();
        if (!detail::finite_record(rec) || rec.train_mse > cfg.divergence_factor * initial_train) {
            res.diverged = true;
            break;
        }
        // Both values come from this sweep's covariance; with alpha = 1 eta_start
        // is the previous sweep's eta.
        if (std::abs(st.eta - st.eta_start) <= cfg.epsilon) {
            res.converged = true;
            break;
        }
    }
    res.scalars_transmitted = st.scalars_transmitted;
    res.final_weights = st.weights;
    if (res.trace.back().scalars_transmitted != st.scalars_transmitted) {
        // A sweep aborted mid-way; the counter still reflects what was sent.
        SweepRecord rec = res.trace.back();
        rec.sweep = static_cast<int>(res.trace.size());
        rec.eta = std::numeric_limits<double>::quiet_NaN();
        rec.train_mse = std::numeric_limits<double>::quiet_NaN();
        rec.test_mse = std::numeric_limits<double>::quiet_NaN();
        rec.scalars_transmitted = st.scalars_transmitted;
        res.trace.push_back(rec);
    }
    return res;
}

/// Backfitting baseline: starting from f = 0, agent i refits on
/// y - sum_{j != i} f_j in round-robin; the ensemble is the unweighted sum.
/// Each sweep transmits D residual vectors of length N.
///
/// With `monotone`, an agent keeps the better of the fresh fit and its current
/// tree partition with refreshed leaf means, and keeps its current model if
/// neither improves on the target, so training MSE never rises.
inline TrainResult run_residual_refit(const Dataset& train, const Dataset& test, const Partition& partition,
                                      const LearnerSpec& spec, int max_sweeps, bool monotone = false) {
    if (max_sweeps < 1) throw std::invalid_argument("run_residual_refit: max_sweeps must be >= 1");
    if (partition.empty()) throw std::invalid_argument("run_residual_refit: empty partition");
    spec.validate();
    TrainResult res;
    res.method = "refit";
    const std::size_t d = partition.size();
    const Eigen::VectorXd& y = train.outcomes;
    const auto n = static_cast<Eigen::Index>(train.size());

    std::vector<AgentState> agents;
    for (const auto& attrs : partition) {
        if (attrs.empty()) throw std::invalid_argument("run_residual_refit: agent with no attributes");
        AgentState a;
        a.attribute_set = attrs;
        a.learner_spec = spec;
        a.train_inputs = select_columns(train.covariates, attrs);
        a.model = FittedModel::constant(0.0, attrs.size());
        a.train_predictions = Eigen::VectorXd::Zero(n);
        a.residual = y;
        agents.push_back(std::move(a));
    }
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d));
    std::uint64_t scalars = 0;
    auto push = [&](int s) {
        SweepRecord rec = detail::record(s, 0.0, agents, ones, train, test, 0.0, scalars);
        rec.eta = rec.train_mse;
        res.trace.push_back(std::move(rec));
    };
    push(0);
    for (int s = 1; s <= max_sweeps; ++s) {
        for (std::size_t i = 0; i < d; ++i) {
            AgentState& agent = agents[i];
            Eigen::VectorXd target = y;
            for (std::size_t j = 0; j < d; ++j)
                if (j != i) target -= agents[j].train_predictions;
            FittedModel model = fit(agent.learner_spec, agent.train_inputs, target);
            Eigen::VectorXd pred = model.predict(agent.train_inputs);
            if (monotone) {
                if (const RegressionTree* tree = agent.model.tree()) {
                    FittedModel releaf(tree->refit_leaves(agent.train_inputs, target));
                    Eigen::VectorXd alt = releaf.predict(agent.train_inputs);
                    if ((target - alt).squaredNorm() < (target - pred).squaredNorm()) {
                        model = std::move(releaf);
                        pred = std::move(alt);
                    }
                }
                if ((target - pred).squaredNorm() > (target - agent.train_predictions).squaredNorm()) {
                    scalars += static_cast<std::uint64_t>(n);
                    continue;
                }
            }
            agent.model = std::move(model);
            agent.train_predictions = std::move(pred);
            agent.residual = y - agent.train_predictions;
            scalars += static_cast<std::uint64_t>(n);
        }
        push(s);
    }
    res.a_ini.resize(0, 0);
    res.final_weights = ones;
    res.scalars_transmitted = scalars;
    res.converged = true;
    return res;
}

/// Non-cooperative baseline: independent fits combined with weights 1/D.
inline TrainResult run_averaging(const Dataset& train, const Dataset& test, const Partition& partition,
                                 const LearnerSpec& spec) {
    TrainResult res;
    res.method = "averaging";
    std::vector<AgentState> agents = init_agents(train, partition, spec);
    const Eigen::VectorXd w = WeightVector::uniform(static_cast<Eigen::Index>(agents.size())).values();
    res.a_ini = estimate_covariance(residual_matrix(agents)).matrix;
    res.trace.push_back(detail::record(0, quadratic_form(res.a_ini, w), agents, w, train, test, 0.0, 0));
    res.final_weights = w;
    res.converged = true;
    return res;
}

}  // namespace icoa
