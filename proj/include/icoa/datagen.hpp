#pragma once

// Synthetic attribute-distributed regression data from the three Friedman
// hidden rules, with [0,1] outcome normalization and train/test splitting.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "icoa/rng.hpp"

namespace icoa {

enum class Rule { Friedman1, Friedman2, Friedman3 };

inline constexpr std::size_t kNumCovariates = 5;

inline std::string_view to_string(Rule rule) {
    switch (rule) {
        case Rule::Friedman1: return "friedman1";
        case Rule::Friedman2: return "friedman2";
        case Rule::Friedman3: return "friedman3";
    }
    return "unknown";
}

inline Rule parse_rule(std::string_view name) {
    if (name == "friedman1") return Rule::Friedman1;
    if (name == "friedman2") return Rule::Friedman2;
    if (name == "friedman3") return Rule::Friedman3;
    throw std::invalid_argument("unknown rule '" + std::string(name) + "'");
}

struct ProblemSpec {
    Rule rule = Rule::Friedman1;
    std::size_t n_instances = 5000;
    double noise_std = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_instances < 1) throw std::invalid_argument("ProblemSpec: n_instances must be >= 1");
        if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
            throw std::invalid_argument("ProblemSpec: noise_std must be finite and >= 0");
    }
};

/// N instances of the five covariates plus a normalized outcome.
///
/// `outcomes` = (raw_outcomes - norm_min) / (norm_max - norm_min), or 0 when
/// the range is degenerate. The raw values are kept so that a derived split can
/// be renormalized without round-trip loss.
struct Dataset {
    Eigen::MatrixXd covariates;
    Eigen::VectorXd outcomes;
    Eigen::VectorXd raw_outcomes;
    double norm_min = 0.0;
    double norm_max = 1.0;

    std::size_t size() const { return static_cast<std::size_t>(outcomes.size()); }
    std::size_t num_covariates() const { return static_cast<std::size_t>(covariates.cols()); }
};

struct Interval {
    double lo;
    double hi;
};

/// Sampling support of covariate `j` under `rule`.
inline Interval covariate_support(Rule rule, std::size_t j) {
    if (j >= kNumCovariates) throw std::out_of_range("covariate index out of range");
    if (rule == Rule::Friedman1) return {0.0, 1.0};
    constexpr std::array<Interval, kNumCovariates> friedman23{{
        {1.0, 100.0},
        {40.0 * std::numbers::pi, 560.0 * std::numbers::pi},
        {0.0, 1.0},
        {1.0, 11.0},
        {0.0, 1.0},
    }};
    return friedman23[j];
}

namespace detail {

inline bool within(double v, Interval s) {
    const double slack = 1e-12 * std::max(1.0, std::abs(s.hi));
    return v >= s.lo - slack && v <= s.hi + slack;
}

}  // namespace detail

/// Noise-free value of the hidden rule at `x`. Rejects inputs outside the
/// rule's sampling support.
template <typename Vec>
double eval_rule(Rule rule, const Vec& x) {
    if (static_cast<std::size_t>(x.size()) != kNumCovariates)
        throw std::invalid_argument("eval_rule: expected 5 covariates");
    for (std::size_t j = 0; j < kNumCovariates; ++j) {
        const double v = x[j];
        if (!std::isfinite(v) || !detail::within(v, covariate_support(rule, j)))
            throw std::domain_error("eval_rule: covariate x" + std::to_string(j + 1) +
                                    " outside the rule's support");
    }
    const double x1 = x[0], x2 = x[1], x3 = x[2], x4 = x[3], x5 = x[4];
    using std::numbers::pi;
    switch (rule) {
        case Rule::Friedman1:
            return 10.0 * std::sin(pi * x1 * x2) + 20.0 * (x3 - 0.5) * (x3 - 0.5) + 10.0 * x4 +
                   5.0 * x5;
        case Rule::Friedman2: {
            const double inner = x2 * x3 - 1.0 / (x2 * x4);
            return std::sqrt(x1 * x1 + inner * inner);
        }
        case Rule::Friedman3:
            return std::atan((x2 * x3 - 1.0 / (x2 * x4)) / x1);
    }
    throw std::invalid_argument("eval_rule: unknown rule");
}

inline double eval_rule(Rule rule, std::initializer_list<double> x) {
    return eval_rule(rule, std::vector<double>(x));
}

/// Affine map of `raw` to [0,1] using the given range; a degenerate range maps to 0.
inline Eigen::VectorXd normalize_outcomes(const Eigen::VectorXd& raw, double lo, double hi) {
    if (!(hi > lo)) return Eigen::VectorXd::Zero(raw.size());
    return (raw.array() - lo) / (hi - lo);
}

inline Dataset make_dataset(Eigen::MatrixXd covariates, Eigen::VectorXd raw) {
    Dataset d;
    d.norm_min = raw.size() ? raw.minCoeff() : 0.0;
    d.norm_max = raw.size() ? raw.maxCoeff() : 0.0;
    d.outcomes = normalize_outcomes(raw, d.norm_min, d.norm_max);
    d.raw_outcomes = std::move(raw);
    d.covariates = std::move(covariates);
    return d;
}

/// Draws N instances i.i.d. from the rule's covariate distribution, adds
/// N(0, noise_std^2) noise and normalizes the outcomes to [0,1].
inline Dataset generate(const ProblemSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, 0xDA7A));
    const auto n = static_cast<Eigen::Index>(spec.n_instances);
    Eigen::MatrixXd x(n, static_cast<Eigen::Index>(kNumCovariates));
    Eigen::VectorXd raw(n);
    std::array<double, kNumCovariates> row{};
    for (Eigen::Index i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < kNumCovariates; ++j) {
            const Interval s = covariate_support(spec.rule, j);
            row[j] = std::min(rng.uniform(s.lo, s.hi), s.hi);
            x(i, static_cast<Eigen::Index>(j)) = row[j];
        }
        double y = eval_rule(spec.rule, row);
        if (spec.noise_std > 0.0) y += spec.noise_std * rng.normal();
        raw[i] = y;
    }
    return make_dataset(std::move(x), std::move(raw));
}

namespace detail {

inline Dataset take_rows(const Dataset& d, const std::vector<std::size_t>& idx) {
    const auto k = static_cast<Eigen::Index>(idx.size());
    Dataset out;
    out.covariates.resize(k, d.covariates.cols());
    out.raw_outcomes.resize(k);
    for (Eigen::Index r = 0; r < k; ++r) {
        const auto src = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(r)]);
        out.covariates.row(r) = d.covariates.row(src);
        out.raw_outcomes[r] = d.raw_outcomes[src];
    }
    return out;
}

}  // namespace detail

struct SplitResult {
    Dataset train;
    Dataset test;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;
};

/// Random disjoint train/test partition. The train part is renormalized on its
/// own range; the test part reuses the train range (so it may leave [0,1]).
inline SplitResult split(const Dataset& d, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("split: train_fraction must lie in (0,1)");
    const std::size_t n = d.size();
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    if (n_train == 0 || n_train >= n)
        throw std::invalid_argument("split: fraction yields an empty partition");

    Rng rng(derive_seed(seed, 0x5B117));
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);

    SplitResult s;
    s.train_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    std::sort(s.train_indices.begin(), s.train_indices.end());
    std::sort(s.test_indices.begin(), s.test_indices.end());

    s.train = detail::take_rows(d, s.train_indices);
    s.test = detail::take_rows(d, s.test_indices);
    s.train.norm_min = s.train.raw_outcomes.minCoeff();
    s.train.norm_max = s.train.raw_outcomes.maxCoeff();
    s.train.outcomes = normalize_outcomes(s.train.raw_outcomes, s.train.norm_min, s.train.norm_max);
    s.test.norm_min = s.train.norm_min;
    s.test.norm_max = s.train.norm_max;
    s.test.outcomes = normalize_outcomes(s.test.raw_outcomes, s.test.norm_min, s.test.norm_max);
    return s;
}

// ---------------------------------------------------------------------------
// CSV dump/load: header `x1,...,xM,y`, values with 17 significant digits.
// ---------------------------------------------------------------------------

inline void write_csv(std::ostream& os, const Dataset& d) {
    const Eigen::Index m = d.covariates.cols();
    for (Eigen::Index j = 0; j < m; ++j) os << 'x' << (j + 1) << ',';
    os << "y\n";
    std::ostringstream cell;
    cell << std::setprecision(17);
    auto put = [&](double v) {
        cell.str({});
        cell << v;
        os << cell.str();
    };
    for (Eigen::Index i = 0; i < d.covariates.rows(); ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            put(d.covariates(i, j));
            os << ',';
        }
        put(d.outcomes[i]);
        os << '\n';
    }
}

/// Loads a dataset written by write_csv. Outcomes are taken as already
/// normalized (norm_min = 0, norm_max = 1).
inline Dataset read_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("read_csv: missing header");
    const auto cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (cols < 2 || line.substr(line.rfind(',') + 1).rfind('y', 0) != 0)
        throw std::runtime_error("read_csv: header must be x1,...,xM,y");

    std::vector<double> values;
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r") continue;
        std::size_t got = 0;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t end = line.find(',', pos);
            if (end == std::string::npos) end = line.size();
            std::string field = line.substr(pos, end - pos);
            if (!field.empty() && field.back() == '\r') field.pop_back();
            double v = 0.0;
            try {
                std::size_t used = 0;
                v = std::stod(field, &used);
                if (used != field.size()) throw std::invalid_argument(field);
            } catch (const std::exception&) {
                throw std::runtime_error("read_csv: bad number '" + field + "' on row " +
                                         std::to_string(rows + 1));
            }
            values.push_back(v);
            ++got;
            pos = end + 1;
        }
        if (got != cols)
            throw std::runtime_error("read_csv: row " + std::to_string(rows + 1) +
                                     " has wrong column count");
        ++rows;
    }
    const auto n = static_cast<Eigen::Index>(rows);
    const auto m = static_cast<Eigen::Index>(cols - 1);
    Dataset d;
    d.covariates.resize(n, m);
    d.outcomes.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < m; ++j)
            d.covariates(i, j) = values[static_cast<std::size_t>(i * (m + 1) + j)];
        d.outcomes[i] = values[static_cast<std::size_t>(i * (m + 1) + m)];
    }
    d.raw_outcomes = d.outcomes;
    d.norm_min = 0.0;
    d.norm_max = 1.0;
    return d;
}

}  // namespace icoa
