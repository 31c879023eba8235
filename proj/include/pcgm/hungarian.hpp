#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace pcgm {

/// Correspondence between two node sets; rows index graph 1, columns graph 2.
/// Relaxed mode lives in the doubly substochastic polytope (partial
/// permutation hull); discrete mode is a 0/1 partial permutation.
struct CorrespondenceMatrix {
    enum class Mode { Relaxed, Discrete };

    Eigen::MatrixXd values;
    Mode mode = Mode::Relaxed;

    std::size_t rows() const { return values.rows(); }
    std::size_t cols() const { return values.cols(); }

    bool feasible(double tol = 1e-9) const {
        if (values.minCoeff() < -tol || values.maxCoeff() > 1.0 + tol) return false;
        for (Eigen::Index i = 0; i < values.rows(); ++i)
            if (values.row(i).sum() > 1.0 + tol) return false;
        for (Eigen::Index j = 0; j < values.cols(); ++j)
            if (values.col(j).sum() > 1.0 + tol) return false;
        return true;
    }

    /// Row -> column map of a discrete matrix; -1 for unmatched rows.
    std::vector<int> row_to_col() const {
        std::vector<int> map(values.rows(), -1);
        for (Eigen::Index i = 0; i < values.rows(); ++i)
            for (Eigen::Index j = 0; j < values.cols(); ++j)
                if (values(i, j) > 0.5) map[i] = int(j);
        return map;
    }

    std::vector<std::pair<std::size_t, std::size_t>> matched_pairs() const {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        auto map = row_to_col();
        for (std::size_t i = 0; i < map.size(); ++i)
            if (map[i] >= 0) out.emplace_back(i, std::size_t(map[i]));
        return out;
    }

    static CorrespondenceMatrix uniform(std::size_t m, std::size_t n) {
        CorrespondenceMatrix c;
        // row sums min(1, n/m), column sums min(1, m/n): feasible and unbiased
        const double v = 1.0 / double(std::max(m, n));
        c.values = Eigen::MatrixXd::Constant(m, n, v);
        c.mode = Mode::Relaxed;
        return c;
    }
};

namespace detail {

/// Jonker-Volgenant shortest augmenting path assignment on a square matrix.
/// Returns the column assigned to each row.
inline std::vector<int> square_assignment(const Eigen::MatrixXd& cost) {
    const int n = int(cost.rows());
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = std::numeric_limits<double>::infinity();
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j]) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace detail

/// Minimum-cost partial assignment: every unmatched node (row or column)
/// costs `unmatched_cost`. Solved exactly on the padded (m+n) square problem.
inline CorrespondenceMatrix hungarian(const Eigen::MatrixXd& cost, double unmatched_cost) {
    if (!cost.allFinite() || !std::isfinite(unmatched_cost))
        throw std::invalid_argument("assignment costs must be finite");
    const int m = int(cost.rows());
    const int n = int(cost.cols());

    double max_abs = std::abs(unmatched_cost);
    if (m > 0 && n > 0) max_abs = std::max(max_abs, cost.cwiseAbs().maxCoeff());
    const double big = (m + n + 1.0) * (max_abs + 1.0);

    Eigen::MatrixXd padded = Eigen::MatrixXd::Constant(m + n, m + n, big);
    padded.topLeftCorner(m, n) = cost;
    for (int i = 0; i < m; ++i) padded(i, n + i) = unmatched_cost;  // row i unmatched
    for (int j = 0; j < n; ++j) padded(m + j, j) = unmatched_cost;  // column j unmatched
    padded.bottomRightCorner(n, m).setZero();

    auto assignment = detail::square_assignment(padded);

    CorrespondenceMatrix out;
    out.values = Eigen::MatrixXd::Zero(m, n);
    out.mode = CorrespondenceMatrix::Mode::Discrete;
    for (int i = 0; i < m; ++i)
        if (assignment[i] < n) out.values(i, assignment[i]) = 1.0;
    return out;
}

/// Total cost of a discrete correspondence under the partial-assignment rule.
inline double assignment_cost(const CorrespondenceMatrix& c, const Eigen::MatrixXd& cost,
                              double unmatched_cost) {
    double total = 0.0;
    std::size_t matched = 0;
    for (const auto& [i, j] : c.matched_pairs()) {
        total += cost(i, j);
        matched += 2;
    }
    total += unmatched_cost * double(c.rows() + c.cols() - matched);
    return total;
}

}  // namespace pcgm
