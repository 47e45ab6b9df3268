#pragma once

// Experiment plumbing: JSON configuration, replication with derived seeds,
// single runs, alpha x delta grids and bound-vs-actual curves, and their
// CSV/JSON artifacts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "icoa/datagen.hpp"
#include "icoa/ensemble_math.hpp"
#include "icoa/learners.hpp"
#include "icoa/trainer.hpp"

namespace icoa {

/// Bad or unreadable configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Method { Icoa, Refit, Averaging };

inline std::string_view to_string(Method m) {
    switch (m) {
        case Method::Icoa: return "icoa";
        case Method::Refit: return "refit";
        case Method::Averaging: return "averaging";
    }
    return "unknown";
}

inline Method parse_method(std::string_view s) {
    if (s == "icoa") return Method::Icoa;
    if (s == "refit") return Method::Refit;
    if (s == "averaging") return Method::Averaging;
    throw ConfigError("unknown method '" + std::string(s) + "'");
}

struct ExperimentConfig {
    ProblemSpec problem;
    double split_fraction = 0.8;
    Partition partition;  ///< empty means one agent per covariate
    LearnerSpec learner;
    TrainerConfig trainer;
    Method method = Method::Icoa;
    int replications = 5;
    std::string output_dir = "out";
    bool monotone_refit = false;

    void validate() const {
        if (replications < 1) throw ConfigError("replications must be >= 1");
        if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split_fraction must lie in (0,1)");
        try {
            problem.validate();
            learner.validate();
            trainer.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        for (const auto& attrs : partition) {
            if (attrs.empty()) throw ConfigError("partition: empty attribute set");
            for (std::size_t j : attrs)
                if (j >= kNumCovariates) throw ConfigError("partition: attribute index out of range");
        }
    }

    Partition effective_partition() const { return partition.empty() ? singleton_partition(kNumCovariates) : partition; }
};

namespace detail {

inline const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "rule", "n_instances", "noise_std", "seed", "split_fraction", "partition",
        "learner", "tree_max_depth", "tree_min_leaf", "poly_degree",
        "method", "epsilon", "max_sweeps", "backsearch_initial_step", "backsearch_max_halvings",
        "alpha", "delta", "delta_units", "z", "minimax", "random_order", "per_pair_samples",
        "center_covariance", "gradient_mode", "robust_backsearch", "divergence_factor", "monotone_refit",
        "replications", "output_dir",
    };
    return keys;
}

template <typename T>
T get_as(const nlohmann::json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

inline std::uint64_t parse_seed_string(const std::string& s, const char* what) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &used, 0);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size() || s.front() == '-') throw ConfigError(std::string(what) + " is not a valid seed");
    return static_cast<std::uint64_t>(v);
}

}  // namespace detail

/// Builds a config from a flat JSON object. Unknown keys are rejected.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    const auto& keys = detail::config_keys();
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
            throw ConfigError("unknown config key '" + it.key() + "'");
    using detail::get_as;
    ExperimentConfig c;
    try {
        if (j.contains("rule")) c.problem.rule = parse_rule(get_as<std::string>(j, "rule"));
        if (j.contains("learner")) c.learner.kind = parse_learner_kind(get_as<std::string>(j, "learner"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (j.contains("n_instances")) {
        const auto& n = j.at("n_instances");
        if (!n.is_number_integer() || n.get<long long>() < 1)
            throw ConfigError("config key 'n_instances' must be a positive integer");
        c.problem.n_instances = n.get<std::size_t>();
    }
    if (j.contains("noise_std")) c.problem.noise_std = get_as<double>(j, "noise_std");
    if (j.contains("seed")) {
        const auto& s = j.at("seed");
        if (s.is_number_unsigned() || (s.is_number_integer() && s.get<long long>() >= 0))
            c.problem.seed = s.get<std::uint64_t>();
        else if (s.is_string())
            c.problem.seed = detail::parse_seed_string(s.get<std::string>(), "seed");
        else
            throw ConfigError("config key 'seed' must be a nonnegative integer");
    }
    if (j.contains("split_fraction")) c.split_fraction = get_as<double>(j, "split_fraction");
    if (j.contains("partition")) {
        const auto& p = j.at("partition");
        if (p.is_string()) {
            if (p.get<std::string>() != "singleton") throw ConfigError("partition must be \"singleton\" or a list of lists");
        } else {
            c.partition = get_as<Partition>(j, "partition");
        }
    }
    if (j.contains("tree_max_depth")) c.learner.tree_max_depth = get_as<int>(j, "tree_max_depth");
    if (j.contains("tree_min_leaf")) c.learner.tree_min_leaf = get_as<int>(j, "tree_min_leaf");
    if (j.contains("poly_degree")) c.learner.poly_degree = get_as<int>(j, "poly_degree");
    if (j.contains("method")) c.method = parse_method(get_as<std::string>(j, "method"));

    TrainerConfig& t = c.trainer;
    if (j.contains("epsilon")) t.epsilon = get_as<double>(j, "epsilon");
    if (j.contains("max_sweeps")) t.max_sweeps = get_as<int>(j, "max_sweeps");
    if (j.contains("backsearch_initial_step")) t.backsearch.initial_step = get_as<double>(j, "backsearch_initial_step");
    if (j.contains("backsearch_max_halvings")) t.backsearch.max_halvings = get_as<int>(j, "backsearch_max_halvings");
    if (j.contains("alpha")) t.alpha = get_as<double>(j, "alpha");
    if (j.contains("delta")) {
        const auto& d = j.at("delta");
        if (d.is_string()) {
            if (d.get<std::string>() != "auto") throw ConfigError("delta must be a number or \"auto\"");
            t.delta = std::nullopt;
        } else {
            t.delta = get_as<double>(j, "delta");
        }
    }
    if (j.contains("delta_units")) {
        const auto u = get_as<std::string>(j, "delta_units");
        if (u == "max_variance") t.delta_units = DeltaUnits::MaxVariance;
        else if (u == "absolute") t.delta_units = DeltaUnits::Absolute;
        else throw ConfigError("delta_units must be \"max_variance\" or \"absolute\"");
    }
    if (j.contains("z")) t.z = get_as<double>(j, "z");
    if (j.contains("minimax")) t.minimax_enabled = get_as<bool>(j, "minimax");
    if (j.contains("random_order")) t.random_order = get_as<bool>(j, "random_order");
    if (j.contains("per_pair_samples")) t.per_pair_samples = get_as<bool>(j, "per_pair_samples");
    if (j.contains("center_covariance")) t.center_covariance = get_as<bool>(j, "center_covariance");
    if (j.contains("robust_backsearch")) t.robust_backsearch = get_as<bool>(j, "robust_backsearch");
    if (j.contains("divergence_factor")) t.divergence_factor = get_as<double>(j, "divergence_factor");
    if (j.contains("gradient_mode")) {
        const auto g = get_as<std::string>(j, "gradient_mode");
        if (g == "analytic") t.gradient_mode = GradientMode::Analytic;
        else if (g == "perturbation") t.gradient_mode = GradientMode::Perturbation;
        else throw ConfigError("gradient_mode must be \"analytic\" or \"perturbation\"");
    }
    if (j.contains("monotone_refit")) c.monotone_refit = get_as<bool>(j, "monotone_refit");
    if (j.contains("replications")) c.replications = get_as<int>(j, "replications");
    if (j.contains("output_dir")) c.output_dir = get_as<std::string>(j, "output_dir");
    c.validate();
    return c;
}

/// Reads a config file; ICOA_SEED in the environment overrides the root seed.
inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c = parse_config(j);
    if (const char* env = std::getenv("ICOA_SEED"); env && *env)
        c.problem.seed = detail::parse_seed_string(env, "ICOA_SEED");
    return c;
}

// ---------------------------------------------------------------------------
// Seeds and single runs
// ---------------------------------------------------------------------------

/// Data depend on (root, replication) only, so every grid cell sees the same
/// datasets; the trainer stream also depends on the cell.
struct RunSeeds {
    std::uint64_t data = 0;
    std::uint64_t split = 0;
    std::uint64_t trainer = 0;
};

inline RunSeeds derive_run_seeds(std::uint64_t root, std::uint64_t cell, std::uint64_t replication) {
    return {derive_seed(root, 0xD0, replication), derive_seed(root, 0x5B, replication),
            derive_seed(derive_seed(root, 0x7A, cell), 0x7A, replication)};
}

struct RunOutcome {
    RunSeeds seeds;
    std::size_t n_train = 0;
    TrainResult result;
};

inline SplitResult make_split(const ExperimentConfig& cfg, const RunSeeds& seeds) {
    ProblemSpec p = cfg.problem;
    p.seed = seeds.data;
    return split(generate(p), cfg.split_fraction, seeds.split);
}

inline RunOutcome run_once(const ExperimentConfig& cfg, std::uint64_t cell, std::uint64_t replication) {
    RunOutcome out;
    out.seeds = derive_run_seeds(cfg.problem.seed, cell, replication);
    const SplitResult s = make_split(cfg, out.seeds);
    out.n_train = s.train.size();
    const Partition partition = cfg.effective_partition();
    switch (cfg.method) {
        case Method::Icoa: {
            TrainerConfig t = cfg.trainer;
            t.seed = out.seeds.trainer;
            out.result = run_icoa(s.train, s.test, partition, cfg.learner, t);
            break;
        }
        case Method::Refit:
            out.result = run_residual_refit(s.train, s.test, partition, cfg.learner, cfg.trainer.max_sweeps,
                                            cfg.monotone_refit);
            break;
        case Method::Averaging:
            out.result = run_averaging(s.train, s.test, partition, cfg.learner);
            break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Artifact formatting
// ---------------------------------------------------------------------------

/// 17 significant digits, so the text reads back to the same double; non-finite values print as NaN.
inline std::string format_number(double v) {
    if (!std::isfinite(v)) return "NaN";
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline void write_trace_csv(std::ostream& os, const TrainResult& r) {
    os << "sweep,eta,train_mse,test_mse,scalars_transmitted\n";
    for (const auto& rec : r.trace)
        os << rec.sweep << ',' << format_number(rec.eta) << ',' << format_number(rec.train_mse) << ','
           << format_number(rec.test_mse) << ',' << rec.scalars_transmitted << '\n';
}

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

inline nlohmann::json summarize(const RunOutcome& o, std::uint64_t replication) {
    const TrainResult& r = o.result;
    const SweepRecord& last = r.last();
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index i = 0; i < r.final_weights.size(); ++i) w.push_back(number_or_null(r.final_weights[i]));
    return {
        {"replication", replication},
        {"data_seed", o.seeds.data},
        {"split_seed", o.seeds.split},
        {"trainer_seed", o.seeds.trainer},
        {"sweeps", last.sweep},
        {"final_eta", number_or_null(last.eta)},
        {"final_train_mse", number_or_null(last.train_mse)},
        {"final_test_mse", number_or_null(r.final_test_mse())},
        {"best_test_mse", number_or_null(r.best_test_mse())},
        {"radius", last.delta},
        {"weights", w},
        {"converged", r.converged},
        {"diverged", r.diverged},
        {"scalars_transmitted", r.scalars_transmitted},
    };
}

namespace detail {

inline std::filesystem::path prepare_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw std::runtime_error("cannot create output directory '" + dir + "'");
    return dir;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
    return f;
}

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct RunReport {
    std::vector<RunOutcome> runs;
    nlohmann::json summary;
};

/// Runs every replication. Replication 0 goes to trace.csv, replication k > 0
/// to trace_k.csv; summary.json holds per-replication and aggregate figures.
inline RunReport cmd_run(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto dir = detail::prepare_dir(cfg.output_dir);
    RunReport rep;
    nlohmann::json reps = nlohmann::json::array();
    std::vector<double> finals, bests;
    int diverged = 0;
    for (int k = 0; k < cfg.replications; ++k) {
        rep.runs.push_back(run_once(cfg, 0, static_cast<std::uint64_t>(k)));
        const RunOutcome& o = rep.runs.back();
        auto f = detail::open_out(dir / (k == 0 ? std::string("trace.csv") : "trace_" + std::to_string(k) + ".csv"));
        write_trace_csv(f, o.result);
        if (!f) throw std::runtime_error("write failed in '" + dir.string() + "'");
        reps.push_back(summarize(o, static_cast<std::uint64_t>(k)));
        if (o.result.diverged) {
            ++diverged;
        } else {
            finals.push_back(o.result.final_test_mse());
            bests.push_back(o.result.best_test_mse());
        }
    }
    const TrainResult& first = rep.runs.front().result;
    rep.summary = {
        {"method", std::string(to_string(cfg.method))},
        {"root_seed", cfg.problem.seed},
        {"replications", cfg.replications},
        {"final_test_mse", number_or_null(first.final_test_mse())},
        {"best_test_mse", number_or_null(first.best_test_mse())},
        {"converged", first.converged},
        {"diverged", first.diverged},
        {"scalars_transmitted", first.scalars_transmitted},
        {"mean_final_test_mse", number_or_null(detail::mean_of(finals))},
        {"mean_best_test_mse", number_or_null(detail::mean_of(bests))},
        {"diverged_runs", diverged},
        {"runs", reps},
    };
    auto s = detail::open_out(dir / "summary.json");
    s << rep.summary.dump(2) << '\n';
    if (!s) throw std::runtime_error("write failed in '" + dir.string() + "'");
    return rep;
}

struct SweepCell {
    double alpha = 1.0;
    double delta = 0.0;
    int replications = 0;
    int diverged = 0;
    int converged = 0;
    double mean_test_mse = std::numeric_limits<double>::quiet_NaN();  ///< over non-diverged runs
    std::vector<double> test_mse;                                      ///< per replication, NaN when diverged

    /// A cell is reported as diverged when most of its runs diverged.
    bool is_diverged() const { return 2 * diverged > replications; }
};

struct SweepResult {
    std::vector<double> alphas;
    std::vector<double> deltas;
    std::vector<SweepCell> cells;  ///< delta-major: cells[d * alphas.size() + a]

    const SweepCell& at(std::size_t delta_index, std::size_t alpha_index) const {
        return cells.at(delta_index * alphas.size() + alpha_index);
    }
};

/// One ICOA run with minimax protection per (alpha, delta) cell and replication.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const std::vector<double>& alphas,
                             const std::vector<double>& deltas) {
    if (alphas.empty() || deltas.empty()) throw ConfigError("sweep grids must be nonempty");
    cfg.validate();
    SweepResult out{alphas, deltas, {}};
    for (std::size_t di = 0; di < deltas.size(); ++di) {
        for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
            ExperimentConfig c = cfg;
            c.method = Method::Icoa;
            c.trainer.alpha = alphas[ai];
            c.trainer.delta = deltas[di];
            c.trainer.minimax_enabled = true;
            try {
                c.trainer.validate();
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
            SweepCell cell;
            cell.alpha = alphas[ai];
            cell.delta = deltas[di];
            cell.replications = cfg.replications;
            std::vector<double> ok;
            for (int k = 0; k < cfg.replications; ++k) {
                const RunOutcome o = run_once(c, di * alphas.size() + ai, static_cast<std::uint64_t>(k));
                if (o.result.diverged) {
                    ++cell.diverged;
                    cell.test_mse.push_back(std::numeric_limits<double>::quiet_NaN());
                } else {
                    cell.converged += o.result.converged ? 1 : 0;
                    cell.test_mse.push_back(o.result.final_test_mse());
                    ok.push_back(o.result.final_test_mse());
                }
            }
            cell.mean_test_mse = detail::mean_of(ok);
            out.cells.push_back(std::move(cell));
        }
    }
    return out;
}

/// Table layout: one row per delta, one column per alpha, NaN for diverged cells.
inline void write_sweep_table(std::ostream& os, const SweepResult& r) {
    os << "delta";
    for (double a : r.alphas) os << ",alpha=" << format_number(a);
    os << '\n';
    for (std::size_t di = 0; di < r.deltas.size(); ++di) {
        os << format_number(r.deltas[di]);
        for (std::size_t ai = 0; ai < r.alphas.size(); ++ai) {
            const SweepCell& c = r.at(di, ai);
            os << ',' << (c.is_diverged() ? std::string("NaN") : format_number(c.mean_test_mse));
        }
        os << '\n';
    }
}

inline void write_sweep_cells(std::ostream& os, const SweepResult& r) {
    os << "alpha,delta,replications,converged,diverged,mean_test_mse\n";
    for (const auto& c : r.cells)
        os << format_number(c.alpha) << ',' << format_number(c.delta) << ',' << c.replications << ',' << c.converged
           << ',' << c.diverged << ',' << (c.is_diverged() ? std::string("NaN") : format_number(c.mean_test_mse))
           << '\n';
}

inline SweepResult cmd_sweep(const ExperimentConfig& cfg, const std::vector<double>& alphas,
                             const std::vector<double>& deltas) {
    SweepResult r = run_sweep(cfg, alphas, deltas);
    const auto dir = detail::prepare_dir(cfg.output_dir);
    auto t = detail::open_out(dir / "sweep.csv");
    write_sweep_table(t, r);
    auto c = detail::open_out(dir / "sweep_cells.csv");
    write_sweep_cells(c, r);
    if (!t || !c) throw std::runtime_error("write failed in '" + dir.string() + "'");
    return r;
}

struct BoundRun {
    double alpha = 1.0;
    int replication = 0;
    double delta = 0.0;  ///< delta_opt(alpha) for this replication's A_ini
    double bound = 0.0;
    double test_mse = 0.0;
    bool converged = false;
    bool diverged = false;

    bool within_bound() const { return converged && !diverged && test_mse <= bound; }
};

struct BoundRow {
    double alpha = 1.0;
    double delta = 0.0;   ///< mean over replications
    double bound = 0.0;   ///< mean over replications
    double actual = 0.0;  ///< mean converged test MSE, NaN when none converged
};

struct BoundResult {
    std::vector<BoundRun> runs;
    std::vector<BoundRow> rows;
};

/// ICOA with minimax protection at delta = delta_opt(alpha), against
/// upper_bound(A_ini, delta_opt), for each alpha and replication.
inline BoundResult run_bound(const ExperimentConfig& cfg, const std::vector<double>& alphas) {
    if (alphas.empty()) throw ConfigError("alpha list must be nonempty");
    cfg.validate();
    BoundResult out;
    for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
        ExperimentConfig c = cfg;
        c.method = Method::Icoa;
        c.trainer.alpha = alphas[ai];
        c.trainer.delta = std::nullopt;
        c.trainer.minimax_enabled = true;
        try {
            c.trainer.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        std::vector<double> deltas, bounds, actual;
        for (int k = 0; k < cfg.replications; ++k) {
            const RunOutcome o = run_once(c, ai, static_cast<std::uint64_t>(k));
            const Eigen::MatrixXd& a_ini = o.result.a_ini;
            BoundRun b;
            b.alpha = alphas[ai];
            b.replication = k;
            b.delta = delta_opt(DeltaPolicy{a_ini.diagonal().maxCoeff(), c.trainer.z}, o.n_train, alphas[ai]);
            b.bound = upper_bound(a_ini, b.delta);
            b.test_mse = o.result.final_test_mse();
            b.converged = o.result.converged;
            b.diverged = o.result.diverged;
            deltas.push_back(b.delta);
            bounds.push_back(b.bound);
            if (b.converged && !b.diverged) actual.push_back(b.test_mse);
            out.runs.push_back(b);
        }
        out.rows.push_back({alphas[ai], detail::mean_of(deltas), detail::mean_of(bounds), detail::mean_of(actual)});
    }
    return out;
}

inline void write_bound_csv(std::ostream& os, const BoundResult& r) {
    os << "alpha,delta,bound,actual\n";
    for (const auto& row : r.rows)
        os << format_number(row.alpha) << ',' << format_number(row.delta) << ',' << format_number(row.bound) << ','
           << format_number(row.actual) << '\n';
}

inline void write_bound_runs_csv(std::ostream& os, const BoundResult& r) {
    os << "alpha,replication,delta,bound,test_mse,converged,diverged\n";
    for (const auto& b : r.runs)
        os << format_number(b.alpha) << ',' << b.replication << ',' << format_number(b.delta) << ','
           << format_number(b.bound) << ',' << format_number(b.test_mse) << ',' << (b.converged ? 1 : 0) << ','
           << (b.diverged ? 1 : 0) << '\n';
}

inline BoundResult cmd_bound(const ExperimentConfig& cfg, const std::vector<double>& alphas) {
    BoundResult r = run_bound(cfg, alphas);
    const auto dir = detail::prepare_dir(cfg.output_dir);
    auto b = detail::open_out(dir / "bound.csv");
    write_bound_csv(b, r);
    auto runs = detail::open_out(dir / "bound_runs.csv");
    write_bound_runs_csv(runs, r);
    if (!b || !runs) throw std::runtime_error("write failed in '" + dir.string() + "'");
    return r;
}

}  // namespace icoa
