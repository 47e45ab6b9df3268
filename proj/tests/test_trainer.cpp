#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "icoa/trainer.hpp"
#include "test_util.hpp"

using namespace icoa;

namespace {

struct Fixture {
    Dataset train;
    Dataset test;
};

Fixture friedman(std::size_t n, std::uint64_t seed) {
    ProblemSpec s;
    s.n_instances = n;
    s.seed = seed;
    SplitResult sp = split(generate(s), 0.8, seed);
    return {std::move(sp.train), std::move(sp.test)};
}

LearnerSpec small_tree() {
    LearnerSpec s;
    s.tree_max_depth = 4;
    s.tree_min_leaf = 5;
    return s;
}

LearnerSpec poly(int degree = 4) {
    LearnerSpec s;
    s.kind = LearnerKind::Polynomial;
    s.poly_degree = degree;
    return s;
}

}  // namespace

TEST(Agents, ResidualPlusPredictionIsOutcome) {
    const Fixture f = friedman(300, 1);
    for (const AgentState& a : init_agents(f.train, singleton_partition(5), small_tree()))
        EXPECT_LE((a.residual + a.train_predictions - f.train.outcomes).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(init_agents(f.train, {}, small_tree()), std::invalid_argument);
    EXPECT_THROW(init_agents(f.train, {{0}, {}}, small_tree()), std::invalid_argument);
}

TEST(Agents, SingleAgentEnsembleIsTheLearner) {
    const Fixture f = friedman(300, 2);
    const Partition all{{0, 1, 2, 3, 4}};
    TrainerConfig cfg;
    cfg.max_sweeps = 1;
    const TrainResult r = run_icoa(f.train, f.test, all, poly(2), cfg);
    ASSERT_EQ(r.final_weights.size(), 1);
    EXPECT_NEAR(r.final_weights[0], 1.0, 1e-12);
    const auto agents = init_agents(f.train, all, poly(2));
    const Eigen::VectorXd direct = agents[0].model.predict(f.test.covariates);
    const double mse0 = (f.test.outcomes - direct).squaredNorm() / static_cast<double>(f.test.size());
    EXPECT_NEAR(r.trace.front().test_mse, mse0, 1e-12);
}

TEST(Agents, DuplicatedAgentsExerciseJitter) {
    const Fixture f = friedman(300, 3);
    const auto agents = init_agents(f.train, {{3}, {3}}, small_tree());
    const Eigen::MatrixXd a = estimate_covariance(residual_matrix(agents)).matrix;
    EXPECT_NEAR(a.determinant(), 0.0, 1e-14);
    EXPECT_GT(optimal_weights(a).jitter, 0.0);
    TrainerConfig cfg;
    cfg.max_sweeps = 2;
    EXPECT_NO_THROW(run_icoa(f.train, f.test, {{3}, {3}}, small_tree(), cfg));
}

TEST(Icoa, OneSweepTransmitsDTimesDMinusOneN) {
    const Fixture f = friedman(500, 4);
    TrainerConfig cfg;
    cfg.max_sweeps = 1;
    const TrainResult r = run_icoa(f.train, f.test, singleton_partition(5), small_tree(), cfg);
    EXPECT_EQ(r.trace.front().scalars_transmitted, 0u);
    EXPECT_EQ(r.scalars_transmitted, 20u * f.train.size());
}

TEST(Icoa, SubsampledTransmissionCount) {
    const Fixture f = friedman(500, 5);
    TrainerConfig cfg;
    cfg.max_sweeps = 3;
    cfg.epsilon = 1e-300;
    cfg.alpha = 7;
    cfg.minimax_enabled = true;
    cfg.delta = 1.0;
    const TrainResult r = run_icoa(f.train, f.test, singleton_partition(5), poly(), cfg);
    ASSERT_FALSE(r.diverged);
    const std::uint64_t m = (f.train.size() + 6) / 7;
    for (const SweepRecord& rec : r.trace)
        EXPECT_EQ(rec.scalars_transmitted, static_cast<std::uint64_t>(rec.sweep) * 20u * m);
}

TEST(Icoa, InverseSumNondecreasingAtFullSample) {
    const Fixture f = friedman(600, 6);
    TrainerConfig cfg;
    cfg.max_sweeps = 15;
    const TrainResult r = run_icoa(f.train, f.test, singleton_partition(5), small_tree(), cfg);
    ASSERT_FALSE(r.diverged);
    ASSERT_GT(r.trace.size(), 2u);
    for (std::size_t s = 1; s < r.trace.size(); ++s)
        EXPECT_GE(1.0 / r.trace[s].eta, 1.0 / r.trace[s - 1].eta * (1 - 1e-12)) << "sweep " << s;
    EXPECT_LT(r.trace.back().eta, r.trace.front().eta);
}

TEST(Icoa, ScalarsNondecreasingAndWeightsSumToOne) {
    const Fixture f = friedman(400, 7);
    TrainerConfig cfg;
    cfg.max_sweeps = 5;
    cfg.alpha = 4;
    cfg.minimax_enabled = true;
    cfg.delta = 0.5;
    const TrainResult r = run_icoa(f.train, f.test, singleton_partition(5), poly(), cfg);
    for (std::size_t s = 1; s < r.trace.size(); ++s) {
        EXPECT_GE(r.trace[s].scalars_transmitted, r.trace[s - 1].scalars_transmitted);
        if (r.trace[s].weights.allFinite()) {
            EXPECT_NEAR(r.trace[s].weights.sum(), 1.0, 1e-10);
        }
    }
}

TEST(Icoa, PerfectEnsembleIsFixedPoint) {
    Rng rng(8);
    Dataset d = make_dataset(test::random_matrix(rng, 50, 2).cwiseAbs(), Eigen::VectorXd::Constant(50, 3.0));
    auto agents = init_agents(d, singleton_partition(2), small_tree());
    IcoaState st;
    st.y = d.outcomes;
    st.a = estimate_covariance(residual_matrix(agents));
    st.weights = Eigen::Vector2d(0.5, 0.5);
    TrainerConfig cfg;
    icoa_sweep(agents, st, cfg, rng);
    EXPECT_EQ(st.accepted_updates, 0u);
    EXPECT_EQ(st.eta, 0.0);
    EXPECT_TRUE(residual_matrix(agents).isZero(0.0));
}

TEST(Icoa, RunsAreDeterministic) {
    const Fixture f = friedman(400, 9);
    TrainerConfig cfg;
    cfg.max_sweeps = 4;
    cfg.alpha = 5;
    cfg.minimax_enabled = true;
    cfg.delta = 0.75;
    cfg.seed = 77;
    const TrainResult a = run_icoa(f.train, f.test, singleton_partition(5), poly(), cfg);
    const TrainResult b = run_icoa(f.train, f.test, singleton_partition(5), poly(), cfg);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t s = 0; s < a.trace.size(); ++s) {
        EXPECT_EQ(a.trace[s].eta, b.trace[s].eta);
        EXPECT_EQ(a.trace[s].test_mse, b.trace[s].test_mse);
    }
}

TEST(Icoa, AutoDeltaUsesDeltaOpt) {
    const Fixture f = friedman(400, 10);
    TrainerConfig cfg;
    cfg.max_sweeps = 1;
    cfg.alpha = 10;
    cfg.minimax_enabled = true;
    cfg.delta = std::nullopt;
    const TrainResult r = run_icoa(f.train, f.test, singleton_partition(5), poly(), cfg);
    const double expect = delta_opt(DeltaPolicy{r.a_ini.diagonal().maxCoeff(), 1.96}, f.train.size(), 10);
    EXPECT_DOUBLE_EQ(r.trace.back().delta, expect);
}

TEST(Icoa, PerturbationDirectionMatchesAnalytic) {
    Rng rng(11);
    const Eigen::MatrixXd r = test::random_matrix(rng, 20, 3);
    const Eigen::MatrixXd a = estimate_covariance(r).matrix;
    const Eigen::MatrixXd g = eta_gradient(r, a);
    const Eigen::VectorXd w = optimal_weights(a).weights.values();
    for (std::size_t i = 0; i < 3; ++i) {
        const Eigen::VectorXd p = detail::perturbation_direction(r, i, nullptr, false, 0.0, w);
        const auto col = static_cast<Eigen::Index>(i);
        EXPECT_LE((p - g.col(col)).cwiseAbs().maxCoeff(), 1e-5 * g.col(col).cwiseAbs().maxCoeff());
    }
}

TEST(Icoa, UnboundedMinimaxKeepsWarmWeights) {
    Eigen::Matrix2d a;
    a << 1.0, 5.0, 5.0, 2.0;
    EXPECT_FALSE(minimax_weights(a, UncertaintyBox(0.1), WeightVector::uniform(2)).bounded);
    const Eigen::VectorXd warm = Eigen::Vector2d(0.3, 0.7);
    const WeightSolve w = solve_weights(a, 0.1, &warm);
    EXPECT_EQ(w.merit, -std::numeric_limits<double>::infinity());
    EXPECT_TRUE(w.weights == warm);
}

TEST(Icoa, RejectsInvalidConfig) {
    const Fixture f = friedman(100, 12);
    TrainerConfig cfg;
    cfg.alpha = 0.5;
    EXPECT_THROW(run_icoa(f.train, f.test, singleton_partition(5), small_tree(), cfg), std::invalid_argument);
    cfg = {};
    cfg.epsilon = 0;
    EXPECT_THROW(run_icoa(f.train, f.test, singleton_partition(5), small_tree(), cfg), std::invalid_argument);
}

TEST(Refit, TransmitsDNPerSweep) {
    const Fixture f = friedman(300, 13);
    const TrainResult r = run_residual_refit(f.train, f.test, singleton_partition(5), small_tree(), 3);
    ASSERT_EQ(r.trace.size(), 4u);
    for (const SweepRecord& rec : r.trace)
        EXPECT_EQ(rec.scalars_transmitted, static_cast<std::uint64_t>(rec.sweep) * 5u * f.train.size());
    EXPECT_TRUE(r.final_weights.isOnes());
}

TEST(Refit, SingleAgentTrainingErrorNonincreasing) {
    const Fixture f = friedman(300, 14);
    const TrainResult r = run_residual_refit(f.train, f.test, {{0, 1, 2, 3, 4}}, small_tree(), 5);
    for (std::size_t s = 1; s < r.trace.size(); ++s) EXPECT_LE(r.trace[s].train_mse, r.trace[s - 1].train_mse + 1e-15);
}

TEST(Refit, MonotoneVariantNeverRaisesTrainingError) {
    const Fixture f = friedman(400, 15);
    const TrainResult r = run_residual_refit(f.train, f.test, singleton_partition(5), small_tree(), 10, true);
    for (std::size_t s = 1; s < r.trace.size(); ++s) EXPECT_LE(r.trace[s].train_mse, r.trace[s - 1].train_mse + 1e-15);
}

TEST(Averaging, UniformWeightsNoTransmission) {
    const Fixture f = friedman(300, 16);
    const TrainResult r = run_averaging(f.train, f.test, singleton_partition(5), small_tree());
    EXPECT_EQ(r.scalars_transmitted, 0u);
    ASSERT_EQ(r.trace.size(), 1u);
    EXPECT_TRUE(r.final_weights.isApprox(Eigen::VectorXd::Constant(5, 0.2)));
}
