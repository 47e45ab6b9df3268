// Acceptance suite: one PASS/FAIL line per criterion.
//
//   icoa_acceptance [--criterion N] [--cli PATH] [--expected-fail LIST]
//
// Exit status is 0 when every selected criterion passes and 1 otherwise. A
// failing criterion named in --expected-fail exits with 77 instead, which ctest
// reports as skipped rather than passed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "icoa/icoa.hpp"
#include "test_util.hpp"

using namespace icoa;

namespace {

constexpr std::uint64_t kRootSeed = 1;
constexpr int kExpectedFailCode = 77;

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

ExperimentConfig base_config(LearnerKind kind) {
    ExperimentConfig c;
    c.problem.rule = Rule::Friedman1;
    c.problem.n_instances = 5000;
    c.problem.noise_std = 0.0;
    c.problem.seed = kRootSeed;
    c.split_fraction = 0.8;
    c.learner.kind = kind;
    c.replications = 5;
    return c;
}

// ---------------------------------------------------------------------------

Verdict closed_form() {
    Rng rng(derive_seed(kRootSeed, 1));
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const Eigen::Index d = 2 + t % 4;
        const Eigen::MatrixXd a = test::random_spd(rng, d);
        const Eigen::VectorXd ref = test::kkt_weights(a);
        const Eigen::VectorXd got = optimal_weights(a).weights.values();
        worst = std::max(worst, (got - ref).cwiseAbs().maxCoeff() / ref.cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-8, "100 SPD matrices D=2..5, max rel err vs KKT solve " + fmt(worst, 3) + " (<= 1e-8)"};
}

Verdict gradient_check() {
    Rng rng(derive_seed(kRootSeed, 2));
    const double h = 1e-5;
    auto inv_sum = [](const Eigen::MatrixXd& r) {
        const Eigen::MatrixXd a = r.transpose() * r / static_cast<double>(r.rows());
        const Eigen::VectorXd ones = Eigen::VectorXd::Ones(a.rows());
        return ones.dot(a.ldlt().solve(ones));
    };
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        const Eigen::Index d = 1 + t % 5;
        const Eigen::Index n = 5 + static_cast<Eigen::Index>(rng.below(46));
        const Eigen::MatrixXd r = test::random_matrix(rng, n, d);
        const Eigen::MatrixXd g = eta_gradient(r, estimate_covariance(r).matrix);
        for (Eigen::Index i = 0; i < d; ++i) {
            const double scale = std::max(g.col(i).cwiseAbs().maxCoeff(), 1e-12);
            for (Eigen::Index k = 0; k < n; ++k) {
                Eigen::MatrixXd up = r, down = r;
                up(k, i) -= h;
                down(k, i) += h;
                const double fd = (inv_sum(up) - inv_sum(down)) / (2 * h);
                worst = std::max(worst, std::abs(fd - g(k, i)) / scale);
            }
        }
    }
    return {worst <= 1e-5, "50 instances N<=50 D<=5, max rel err vs central differences " + fmt(worst, 3) + " (<= 1e-5)"};
}

Verdict inner_max() {
    Rng rng(derive_seed(kRootSeed, 3));
    int mismatches = 0;
    for (int t = 0; t < 100; ++t) {
        const Eigen::Index d = 2 + t % 3;
        const Eigen::MatrixXd a0 = test::random_spd(rng, d);
        const double delta = rng.uniform(0.0, 0.5);
        const Eigen::VectorXd a = test::random_feasible(rng, d);
        std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = i + 1; j < d; ++j) pairs.emplace_back(i, j);
        double best = -std::numeric_limits<double>::infinity();
        for (unsigned mask = 0; mask < (1u << pairs.size()); ++mask) {
            Eigen::MatrixXd m = a0;
            for (std::size_t p = 0; p < pairs.size(); ++p) {
                const double s = (mask >> p) & 1u ? -delta : delta;
                m(pairs[p].first, pairs[p].second) += s;
                m(pairs[p].second, pairs[p].first) += s;
            }
            best = std::max(best, quadratic_form(m, a));
        }
        if (worst_case_covariance(a0, UncertaintyBox(delta), a).zeta != best) ++mismatches;
    }
    return {mismatches == 0, "100 instances D<=4, zeta != sign enumeration in " + std::to_string(mismatches) + " cases"};
}

Verdict tree_accuracy() {
    ExperimentConfig avg = base_config(LearnerKind::Tree);
    avg.method = Method::Averaging;
    ExperimentConfig ic = base_config(LearnerKind::Tree);
    ic.method = Method::Icoa;
    double sa = 0.0, si = 0.0;
    for (int k = 0; k < 5; ++k) {
        sa += run_once(avg, 0, static_cast<std::uint64_t>(k)).result.final_test_mse();
        si += run_once(ic, 0, static_cast<std::uint64_t>(k)).result.final_test_mse();
    }
    const double ma = sa / 5, mi = si / 5;
    const bool ok = ma >= 0.015 && ma <= 0.05 && mi <= 0.010 && mi <= ma / 2.5;
    return {ok, "averaging " + fmt(ma) + " (in [0.015,0.05]), ICOA " + fmt(mi) + " (<= 0.010 and <= " +
                    fmt(ma / 2.5) + ")"};
}

Verdict overtraining() {
    ExperimentConfig cfg = base_config(LearnerKind::Tree);
    cfg.method = Method::Refit;
    cfg.trainer.max_sweeps = 100;
    const TrainResult refit = run_once(cfg, 0, 0).result;
    int rises = 0;
    double worst_rise = 0.0;
    for (std::size_t s = 1; s < refit.trace.size(); ++s) {
        const double prev = refit.trace[s - 1].train_mse, cur = refit.trace[s].train_mse;
        if (cur > prev) {
            ++rises;
            worst_rise = std::max(worst_rise, cur / prev - 1.0);
        }
    }
    double min_test = std::numeric_limits<double>::infinity();
    for (const auto& r : refit.trace) min_test = std::min(min_test, r.test_mse);
    const double ratio = refit.final_test_mse() / min_test;

    cfg.method = Method::Icoa;
    cfg.trainer.max_sweeps = 200;
    const TrainResult ic = run_once(cfg, 0, 0).result;
    const double icoa_ratio = ic.final_test_mse() / ic.best_test_mse();

    const bool ok = rises == 0 && ratio >= 1.10 && icoa_ratio <= 1.05;
    return {ok, "refit train MSE rises in " + std::to_string(rises) + "/100 sweeps (max +" + fmt(100 * worst_rise, 3) +
                    "%), refit final/min test " + fmt(ratio) + " (>= 1.10), ICOA final/min test " + fmt(icoa_ratio) +
                    " (<= 1.05)"};
}

double last_window_cv(const TrainResult& r, std::size_t window) {
    std::vector<double> v;
    for (std::size_t s = r.trace.size() > window ? r.trace.size() - window : 0; s < r.trace.size(); ++s)
        if (std::isfinite(r.trace[s].test_mse)) v.push_back(r.trace[s].test_mse);
    if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    double m = 0.0, q = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) q += (x - m) * (x - m);
    return std::sqrt(q / static_cast<double>(v.size() - 1)) / m;
}

Verdict dichotomy() {
    ExperimentConfig cfg = base_config(LearnerKind::Polynomial);
    cfg.trainer.alpha = 100;
    cfg.trainer.minimax_enabled = true;
    cfg.trainer.delta = 0.0;
    const TrainResult raw = run_once(cfg, 0, 0).result;
    cfg.trainer.delta = 0.8;
    const TrainResult prot = run_once(cfg, 1, 0).result;
    const double cv = last_window_cv(raw, 20);
    const bool first = raw.diverged || cv > 0.5;
    const bool second = prot.converged && !prot.diverged && prot.final_test_mse() <= 0.03;
    return {first && second, std::string("delta=0: diverged=") + (raw.diverged ? "true" : "false") + " cv=" + fmt(cv, 3) +
                                 "; delta=0.8: converged=" + (prot.converged ? "true" : "false") + " after " +
                                 std::to_string(prot.last().sweep) + " sweeps, test MSE " +
                                 fmt(prot.final_test_mse()) + " (<= 0.03)"};
}

Verdict protection_grid() {
    const ExperimentConfig cfg = base_config(LearnerKind::Polynomial);
    const std::vector<double> alphas{1, 800};
    const std::vector<double> deltas{0, 0.05, 0.5, 0.75, 1, 2};
    const SweepResult r = run_sweep(cfg, alphas, deltas);

    bool monotone = true;
    std::string row;
    for (std::size_t di = 0; di < deltas.size(); ++di) {
        const SweepCell& c = r.at(di, 0);
        row += (di ? "," : "") + fmt(c.mean_test_mse);
        if (c.diverged > 0) monotone = false;
        if (di > 0 && !(c.mean_test_mse >= r.at(di - 1, 0).mean_test_mse)) monotone = false;
    }
    const double base = r.at(0, 0).mean_test_mse;
    const SweepCell& hi = r.at(4, 1);
    const bool hi_ok = hi.converged == hi.replications && hi.mean_test_mse <= 3 * base;
    bool lo_ok = true;
    std::string lo;
    for (std::size_t di = 0; di < 4; ++di) {
        const SweepCell& c = r.at(di, 1);
        lo += (di ? "," : "") + std::to_string(c.diverged);
        if (c.diverged < 3) lo_ok = false;
    }
    const bool ok = monotone && base <= 0.008 && hi_ok && lo_ok;
    return {ok, "alpha=1 row [" + row + "] nondecreasing=" + (monotone ? "yes" : "no") + ", delta=0 " + fmt(base) +
                    " (<= 0.008); alpha=800 delta=1: " + std::to_string(hi.converged) + "/5 converged, mean " +
                    fmt(hi.mean_test_mse) + " (<= " + fmt(3 * base) + "); alpha=800 delta<=0.75 diverged [" + lo +
                    "]/5 (each >= 3)"};
}

Verdict upper_bound_check() {
    ExperimentConfig cfg = base_config(LearnerKind::Polynomial);
    const BoundResult r = run_bound(cfg, {1, 10, 50, 200, 800});
    int within = 0, diverged = 0, above = 0;
    for (const BoundRun& b : r.runs) {
        if (b.within_bound()) ++within;
        else if (b.diverged || !b.converged) ++diverged;
        else ++above;
    }
    const double frac = static_cast<double>(within) / static_cast<double>(r.runs.size());
    return {frac >= 0.9, std::to_string(within) + "/" + std::to_string(r.runs.size()) + " runs within bound (" +
                             fmt(100 * frac, 3) + "%, >= 90%); misses: " + std::to_string(above) + " above bound, " +
                             std::to_string(diverged) + " not converged"};
}

Verdict accounting() {
    ExperimentConfig cfg = base_config(LearnerKind::Tree);
    cfg.problem.n_instances = 1000;
    cfg.learner.tree_max_depth = 4;
    cfg.trainer.max_sweeps = 3;
    cfg.trainer.epsilon = 1e-300;
    std::vector<std::string> bad;
    const std::uint64_t d = 5;
    for (double alpha : {1.0, 7.0, 100.0}) {
        ExperimentConfig c = cfg;
        c.method = Method::Icoa;
        c.trainer.alpha = alpha;
        c.trainer.minimax_enabled = alpha > 1;
        c.trainer.delta = 1.0;
        const RunOutcome o = run_once(c, 0, 0);
        const auto s = static_cast<std::uint64_t>(o.result.last().sweep);
        const auto m = static_cast<std::uint64_t>(std::ceil(static_cast<double>(o.n_train) / alpha));
        if (s != 3 || o.result.scalars_transmitted != s * d * (d - 1) * m) bad.push_back("icoa alpha=" + fmt(alpha));
    }
    cfg.method = Method::Refit;
    const RunOutcome rf = run_once(cfg, 0, 0);
    if (rf.result.scalars_transmitted != 3 * d * rf.n_train) bad.push_back("refit");
    cfg.method = Method::Averaging;
    if (run_once(cfg, 0, 0).result.scalars_transmitted != 0) bad.push_back("averaging");
    std::string msg = "3-sweep counts for ICOA (alpha 1, 7, 100), refit, averaging: ";
    if (bad.empty()) return {true, msg + "all exact"};
    for (const auto& b : bad) msg += b + " ";
    return {false, msg + "mismatch"};
}

Verdict determinism(const std::string& cli) {
    if (cli.empty()) return {false, "no CLI path given (--cli)"};
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "icoa_acceptance_determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path cfg = root / "cfg.json";
    std::ofstream(cfg) << R"({"n_instances": 1000, "learner": "polynomial", "alpha": 10, "minimax": true,
                             "delta": 1.0, "max_sweeps": 20, "replications": 1, "seed": 42})";
    std::string traces[2];
    for (int k = 0; k < 2; ++k) {
        const fs::path out = root / ("out" + std::to_string(k));
        const std::string cmd = "\"" + cli + "\" run --config \"" + cfg.string() + "\" --out \"" + out.string() +
                                "\" > /dev/null";
        if (std::system(cmd.c_str()) != 0) return {false, "icoa run failed"};
        std::ifstream in(out / "trace.csv", std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        traces[k] = ss.str();
    }
    fs::remove_all(root);
    const bool ok = !traces[0].empty() && traces[0] == traces[1];
    return {ok, "two `icoa run` invocations, trace.csv " + std::to_string(traces[0].size()) + " bytes, " +
                    (ok ? "byte-identical" : "different")};
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ICOA acceptance criteria"};
    int only = 0;
    std::string cli;
    std::string expected_fail;
    app.add_option("--criterion", only, "run a single criterion (1-10); default all");
    app.add_option("--cli", cli, "path to the icoa executable (criterion 10)");
    app.add_option("--expected-fail", expected_fail, "comma-separated criteria known not to pass");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> all{
        {1, "closed-form weights", 10, closed_form},
        {2, "gradient check", 10, gradient_check},
        {3, "inner-max oracle", 10, inner_max},
        {4, "tree ensemble accuracy", 300, tree_accuracy},
        {5, "overtraining property", 600, overtraining},
        {6, "protection dichotomy", 300, dichotomy},
        {7, "alpha x delta grid", 1200, protection_grid},
        {8, "upper bound", 1200, upper_bound_check},
        {9, "communication accounting", 600, accounting},
        {10, "determinism", 600, [&] { return determinism(cli); }},
    };

    bool all_pass = true;
    bool only_expected = true;
    std::set<int> known;
    std::istringstream list(expected_fail);
    for (std::string tok; std::getline(list, tok, ',');)
        if (!tok.empty()) known.insert(std::stoi(tok));
    for (const Criterion& c : all) {
        if (only != 0 && c.id != only) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool pass = v.pass && secs < c.budget_s;
        std::printf("[%s] %2d %s: %s; %.1f s (< %.0f s)\n", pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(),
                    secs, c.budget_s);
        std::fflush(stdout);
        if (!pass) {
            all_pass = false;
            if (!known.count(c.id)) only_expected = false;
        }
    }
    if (all_pass) return 0;
    return only_expected ? kExpectedFailCode : 1;
}
