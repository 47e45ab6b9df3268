#pragma once

// Per-agent base learners: a greedy CART regression tree and a polynomial
// least-squares model. Both fit an arbitrary real target on the agent's
// attribute subset.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace icoa {

enum class LearnerKind { Tree, Polynomial };

inline std::string_view to_string(LearnerKind k) {
    return k == LearnerKind::Tree ? "tree" : "polynomial";
}

inline LearnerKind parse_learner_kind(std::string_view name) {
    if (name == "tree") return LearnerKind::Tree;
    if (name == "polynomial" || name == "poly") return LearnerKind::Polynomial;
    throw std::invalid_argument("unknown learner kind '" + std::string(name) + "'");
}

struct LearnerSpec {
    LearnerKind kind = LearnerKind::Tree;
    int tree_max_depth = 10;
    int tree_min_leaf = 5;
    int poly_degree = 4;

    static constexpr int kMaxPolyDegree = 12;

    void validate() const {
        if (tree_max_depth < 1) throw std::invalid_argument("LearnerSpec: tree_max_depth must be >= 1");
        if (tree_min_leaf < 1) throw std::invalid_argument("LearnerSpec: tree_min_leaf must be >= 1");
        if (poly_degree < 0 || poly_degree > kMaxPolyDegree)
            throw std::invalid_argument("LearnerSpec: poly_degree must lie in [0, 12]");
    }
};

// ---------------------------------------------------------------------------
// Regression tree
// ---------------------------------------------------------------------------

class RegressionTree {
public:
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        double value = 0.0;
        std::size_t count = 0;
    };

    RegressionTree() = default;
    RegressionTree(std::vector<Node> nodes, std::size_t arity)
        : nodes_(std::move(nodes)), arity_(arity) {
        if (nodes_.empty()) throw std::invalid_argument("RegressionTree: empty node list");
    }

    static RegressionTree constant(double value, std::size_t arity) {
        Node leaf;
        leaf.value = value;
        return RegressionTree({leaf}, arity);
    }

    /// Greedy CART: each node takes the (attribute, midpoint threshold) with the
    /// largest SSE reduction, ties to the lowest attribute then lowest threshold.
    static RegressionTree fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& target, int max_depth,
                              int min_leaf);

    /// Index of the leaf reached by row `row` of `x`.
    template <typename Row>
    int leaf_index(const Row& row) const {
        int at = 0;
        while (nodes_[static_cast<std::size_t>(at)].feature >= 0) {
            const Node& nd = nodes_[static_cast<std::size_t>(at)];
            at = row(nd.feature) < nd.threshold ? nd.left : nd.right;
        }
        return at;
    }

    Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
        Eigen::VectorXd out(x.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            out[i] = nodes_[static_cast<std::size_t>(leaf_index(x.row(i)))].value;
        return out;
    }

    /// Same partition, leaf values re-estimated as target means (empty leaves keep theirs).
    RegressionTree refit_leaves(const Eigen::MatrixXd& x, const Eigen::VectorXd& target) const {
        std::vector<double> sum(nodes_.size(), 0.0);
        std::vector<std::size_t> cnt(nodes_.size(), 0);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const auto leaf = static_cast<std::size_t>(leaf_index(x.row(i)));
            sum[leaf] += target[i];
            ++cnt[leaf];
        }
        std::vector<Node> nodes = nodes_;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            if (nodes[k].feature >= 0) continue;
            nodes[k].count = cnt[k];
            if (cnt[k] > 0) nodes[k].value = sum[k] / static_cast<double>(cnt[k]);
        }
        return RegressionTree(std::move(nodes), arity_);
    }

    const std::vector<Node>& nodes() const { return nodes_; }
    std::size_t arity() const { return arity_; }
    std::size_t num_leaves() const {
        return static_cast<std::size_t>(
            std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.feature < 0; }));
    }
    int depth() const { return depth_from(0); }

private:
    int depth_from(int at) const {
        const Node& n = nodes_[static_cast<std::size_t>(at)];
        if (n.feature < 0) return 0;
        return 1 + std::max(depth_from(n.left), depth_from(n.right));
    }

    std::vector<Node> nodes_{Node{}};
    std::size_t arity_ = 0;
};

namespace detail {

struct SplitChoice {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

class TreeBuilder {
public:
    TreeBuilder(const Eigen::MatrixXd& x, const Eigen::VectorXd& t, int max_depth, int min_leaf)
        : x_(x), t_(t), max_depth_(max_depth), min_leaf_(static_cast<std::size_t>(min_leaf)),
          goes_left_(static_cast<std::size_t>(x.rows()), 0) {}

    std::vector<RegressionTree::Node> build() {
        const auto n = static_cast<std::size_t>(x_.rows());
        const auto k = static_cast<std::size_t>(x_.cols());
        // One index list per attribute, kept sorted by that attribute.
        std::vector<std::vector<std::uint32_t>> sorted(k);
        for (std::size_t f = 0; f < k; ++f) {
            auto& s = sorted[f];
            s.resize(n);
            std::iota(s.begin(), s.end(), 0u);
            const auto col = static_cast<Eigen::Index>(f);
            std::stable_sort(s.begin(), s.end(), [&](std::uint32_t a, std::uint32_t b) {
                return x_(a, col) < x_(b, col);
            });
        }
        nodes_.clear();
        grow(std::move(sorted), n, 0);
        return std::move(nodes_);
    }

private:
    int grow(std::vector<std::vector<std::uint32_t>> sorted, std::size_t n, int depth) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();

        // Samples in attribute-0 order; summation order is fixed by that list.
        const auto& members = sorted.front();
        double sum = 0.0, sumsq = 0.0;
        double tmin = t_[members.front()], tmax = tmin;
        for (auto i : members) {
            const double v = t_[i];
            sum += v;
            sumsq += v * v;
            tmin = std::min(tmin, v);
            tmax = std::max(tmax, v);
        }
        nodes_[static_cast<std::size_t>(id)].value = sum / static_cast<double>(n);
        nodes_[static_cast<std::size_t>(id)].count = n;

        if (depth >= max_depth_ || n < 2 * min_leaf_ || tmin == tmax) return id;
        const SplitChoice best = best_split(sorted, n, sum, sumsq);
        if (best.feature < 0) return id;

        const auto col = static_cast<Eigen::Index>(best.feature);
        std::size_t n_left = 0;
        for (auto i : members) {
            goes_left_[i] = x_(i, col) < best.threshold ? 1 : 0;
            n_left += goes_left_[i];
        }
        std::vector<std::vector<std::uint32_t>> left(sorted.size()), right(sorted.size());
        for (std::size_t f = 0; f < sorted.size(); ++f) {
            left[f].reserve(n_left);
            right[f].reserve(n - n_left);
            for (auto i : sorted[f]) (goes_left_[i] ? left[f] : right[f]).push_back(i);
        }
        sorted.clear();
        sorted.shrink_to_fit();

        const int l = grow(std::move(left), n_left, depth + 1);
        const int r = grow(std::move(right), n - n_left, depth + 1);
        auto& node = nodes_[static_cast<std::size_t>(id)];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = l;
        node.right = r;
        return id;
    }

    SplitChoice best_split(const std::vector<std::vector<std::uint32_t>>& sorted, std::size_t n,
                           double sum, double sumsq) const {
        const double parent = sum * sum / static_cast<double>(n);
        const double sse = std::max(sumsq - parent, 0.0);
        const double min_gain = 1e-12 * sse;
        SplitChoice best;
        for (std::size_t f = 0; f < sorted.size(); ++f) {
            const auto col = static_cast<Eigen::Index>(f);
            const auto& s = sorted[f];
            double left_sum = 0.0;
            for (std::size_t p = 0; p + 1 < n; ++p) {
                left_sum += t_[s[p]];
                const std::size_t nl = p + 1;
                const std::size_t nr = n - nl;
                if (nl < min_leaf_) continue;
                if (nr < min_leaf_) break;
                const double a = x_(s[p], col);
                const double b = x_(s[p + 1], col);
                if (!(a < b)) continue;
                const double right_sum = sum - left_sum;
                const double gain = left_sum * left_sum / static_cast<double>(nl) +
                                    right_sum * right_sum / static_cast<double>(nr) - parent;
                if (gain > min_gain && gain > best.gain) {
                    double thr = 0.5 * (a + b);
                    if (!(thr > a)) thr = b;
                    best = {static_cast<int>(f), thr, gain};
                }
            }
        }
        return best;
    }

    const Eigen::MatrixXd& x_;
    const Eigen::VectorXd& t_;
    int max_depth_;
    std::size_t min_leaf_;
    std::vector<std::uint8_t> goes_left_;
    std::vector<RegressionTree::Node> nodes_;
};

}  // namespace detail

inline RegressionTree RegressionTree::fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& target,
                                          int max_depth, int min_leaf) {
    if (x.rows() == 0 || x.cols() == 0) throw std::invalid_argument("RegressionTree::fit: empty input");
    if (x.rows() != target.size())
        throw std::invalid_argument("RegressionTree::fit: row count differs from target length");
    detail::TreeBuilder builder(x, target, max_depth, min_leaf);
    return RegressionTree(builder.build(), static_cast<std::size_t>(x.cols()));
}

// ---------------------------------------------------------------------------
// Polynomial least squares
// ---------------------------------------------------------------------------

/// Exponent tuples of all monomials over `arity` variables with total degree
/// <= `degree`, graded by degree then lexicographically (constant first).
inline std::vector<std::vector<int>> monomial_exponents(std::size_t arity, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> e(arity, 0);
    for (int total = 0; total <= degree; ++total) {
        // Enumerate compositions of `total` into `arity` parts, lexicographically descending.
        auto rec = [&](auto&& self, std::size_t pos, int remaining) -> void {
            if (pos + 1 == arity) {
                e[pos] = remaining;
                out.push_back(e);
                return;
            }
            for (int v = remaining; v >= 0; --v) {
                e[pos] = v;
                self(self, pos + 1, remaining - v);
            }
        };
        if (arity == 0) {
            if (total == 0) out.emplace_back();
            continue;
        }
        rec(rec, 0, total);
    }
    return out;
}

class PolynomialModel {
public:
    PolynomialModel() = default;

    /// Model evaluating sum_k coeff[k] * prod_j ((x_j - shift_j) / scale_j)^e_kj.
    PolynomialModel(int degree, Eigen::VectorXd coefficients, Eigen::VectorXd shift,
                    Eigen::VectorXd scale)
        : degree_(degree),
          exponents_(monomial_exponents(static_cast<std::size_t>(shift.size()), degree)),
          coefficients_(std::move(coefficients)),
          shift_(std::move(shift)),
          scale_(std::move(scale)) {
        if (shift_.size() != scale_.size())
            throw std::invalid_argument("PolynomialModel: shift/scale size mismatch");
        if (static_cast<std::size_t>(coefficients_.size()) != exponents_.size())
            throw std::invalid_argument("PolynomialModel: coefficient count does not match basis");
    }

    /// Raw-coordinate polynomial in one variable: coefficients in ascending power.
    static PolynomialModel univariate(std::vector<double> coefficients) {
        const int degree = static_cast<int>(coefficients.size()) - 1;
        return PolynomialModel(degree, Eigen::Map<Eigen::VectorXd>(coefficients.data(), degree + 1),
                               Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1));
    }

    /// OLS on the standardized monomial basis; rank-deficient systems take the
    /// minimum-norm solution.
    static PolynomialModel fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& target, int degree) {
        if (x.rows() == 0 || x.cols() == 0)
            throw std::invalid_argument("PolynomialModel::fit: empty input");
        if (x.rows() != target.size())
            throw std::invalid_argument("PolynomialModel::fit: row count differs from target length");
        const Eigen::Index k = x.cols();
        Eigen::VectorXd shift = x.colwise().mean().transpose();
        Eigen::VectorXd scale(k);
        for (Eigen::Index j = 0; j < k; ++j) {
            const double sd =
                std::sqrt((x.col(j).array() - shift[j]).square().mean());
            scale[j] = sd > 0.0 ? sd : 1.0;
        }
        PolynomialModel m;
        m.degree_ = degree;
        m.exponents_ = monomial_exponents(static_cast<std::size_t>(k), degree);
        m.shift_ = std::move(shift);
        m.scale_ = std::move(scale);
        const Eigen::MatrixXd basis = m.design(x);
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(basis);
        m.coefficients_ = cod.solve(target);
        return m;
    }

    /// Basis matrix (rows = instances, cols = monomials) at `x`.
    Eigen::MatrixXd design(const Eigen::MatrixXd& x) const {
        const Eigen::Index k = shift_.size();
        const int p = std::max(degree_, 0);
        // powers[j](i, d) = z_ij^d
        std::vector<Eigen::MatrixXd> powers(static_cast<std::size_t>(k));
        for (Eigen::Index j = 0; j < k; ++j) {
            auto& pw = powers[static_cast<std::size_t>(j)];
            pw.resize(x.rows(), p + 1);
            pw.col(0).setOnes();
            const Eigen::VectorXd z = (x.col(j).array() - shift_[j]) / scale_[j];
            for (int d = 1; d <= p; ++d) pw.col(d) = pw.col(d - 1).cwiseProduct(z);
        }
        Eigen::MatrixXd b(x.rows(), static_cast<Eigen::Index>(exponents_.size()));
        for (std::size_t c = 0; c < exponents_.size(); ++c) {
            auto col = b.col(static_cast<Eigen::Index>(c));
            col.setOnes();
            for (Eigen::Index j = 0; j < k; ++j) {
                const int e = exponents_[c][static_cast<std::size_t>(j)];
                if (e > 0) col.array() *= powers[static_cast<std::size_t>(j)].col(e).array();
            }
        }
        return b;
    }

    Eigen::VectorXd predict(const Eigen::MatrixXd& x) const { return design(x) * coefficients_; }

    std::size_t arity() const { return static_cast<std::size_t>(shift_.size()); }
    int degree() const { return degree_; }
    const Eigen::VectorXd& coefficients() const { return coefficients_; }
    const std::vector<std::vector<int>>& exponents() const { return exponents_; }

private:
    int degree_ = 0;
    std::vector<std::vector<int>> exponents_;
    Eigen::VectorXd coefficients_;
    Eigen::VectorXd shift_;
    Eigen::VectorXd scale_;
};

// ---------------------------------------------------------------------------
// Type-erased fitted model
// ---------------------------------------------------------------------------

class FittedModel {
public:
    FittedModel() : impl_(RegressionTree::constant(0.0, 0)) {}
    FittedModel(RegressionTree t) : impl_(std::move(t)) {}
    FittedModel(PolynomialModel p) : impl_(std::move(p)) {}

    static FittedModel constant(double c, std::size_t arity) {
        return FittedModel(RegressionTree::constant(c, arity));
    }

    LearnerKind kind() const {
        return std::holds_alternative<RegressionTree>(impl_) ? LearnerKind::Tree : LearnerKind::Polynomial;
    }

    std::size_t arity() const {
        return std::visit([](const auto& m) { return m.arity(); }, impl_);
    }

    Eigen::VectorXd predict(const Eigen::MatrixXd& x_sub) const {
        if (static_cast<std::size_t>(x_sub.cols()) != arity())
            throw std::invalid_argument("predict: expected " + std::to_string(arity()) +
                                        " columns, got " + std::to_string(x_sub.cols()));
        return std::visit([&](const auto& m) { return m.predict(x_sub); }, impl_);
    }

    const RegressionTree* tree() const { return std::get_if<RegressionTree>(&impl_); }
    const PolynomialModel* polynomial() const { return std::get_if<PolynomialModel>(&impl_); }

private:
    std::variant<RegressionTree, PolynomialModel> impl_;
};

inline FittedModel fit(const LearnerSpec& spec, const Eigen::MatrixXd& x_sub,
                       const Eigen::VectorXd& target) {
    spec.validate();
    if (x_sub.rows() == 0 || x_sub.cols() == 0) throw std::invalid_argument("fit: empty input");
    if (x_sub.rows() != target.size())
        throw std::invalid_argument("fit: covariate rows and target length differ");
    if (!target.allFinite()) throw std::invalid_argument("fit: target contains non-finite values");
    if (spec.kind == LearnerKind::Tree)
        return RegressionTree::fit(x_sub, target, spec.tree_max_depth, spec.tree_min_leaf);
    return PolynomialModel::fit(x_sub, target, spec.poly_degree);
}

inline Eigen::VectorXd predict(const FittedModel& model, const Eigen::MatrixXd& x_sub) {
    return model.predict(x_sub);
}

}  // namespace icoa
