#pragma once

// Dense two-phase simplex for the small LPs that appear inside protocols
// (coordinator-local sketched l1 solves) and as exact test oracles.
// Standard form: min c^T x  s.t.  A x = b, x >= 0.  Bland's rule, so no
// cycling; sizes here are at most a few hundred variables.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace commopt::smalllp {

enum class Status { Optimal, Infeasible, Unbounded };

struct Solution {
    Status status = Status::Infeasible;
    Eigen::VectorXd x;
    double value = 0.0;
};

namespace detail {

// simplex on an explicit tableau; basis holds the basic column per row.
// Dantzig pricing; falls back to Bland's rule when the objective stalls.
inline bool pivot_loop(Eigen::MatrixXd& t, std::vector<int>& basis, int ncols) {
    const int m = int(t.rows()) - 1;
    double last_obj = t(m, ncols);
    int stall = 0;
    for (int guard = 0; guard < 200000; ++guard) {
        int enter = -1;
        if (stall < 64) {
            double most = -1e-9;
            for (int j = 0; j < ncols; ++j)
                if (t(m, j) < most) { most = t(m, j); enter = j; }
        } else { // Bland: smallest index, guarantees termination
            for (int j = 0; j < ncols; ++j)
                if (t(m, j) < -1e-9) { enter = j; break; }
        }
        if (enter < 0) return true; // optimal
        int leave = -1;
        double best = 0;
        for (int i = 0; i < m; ++i) {
            if (t(i, enter) > 1e-9) {
                const double ratio = t(i, ncols) / t(i, enter);
                if (leave < 0 || ratio < best - 1e-12 ||
                    (ratio < best + 1e-12 && basis[i] < basis[leave])) {
                    leave = i;
                    best = ratio;
                }
            }
        }
        if (leave < 0) return false; // unbounded
        t.row(leave) /= t(leave, enter);
        for (int i = 0; i <= m; ++i) {
            if (i == leave) continue;
            const double f = t(i, enter);
            if (f != 0.0) t.row(i) -= f * t.row(leave);
        }
        basis[leave] = enter;
        stall = (t(m, ncols) < last_obj - 1e-12) ? 0 : stall + 1;
        last_obj = t(m, ncols);
    }
    throw std::runtime_error("simplex: pivot limit exceeded");
}

} // namespace detail

inline Solution solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                      const Eigen::VectorXd& c) {
    const int m = int(a.rows()), n = int(a.cols());
    if (b.size() != m || c.size() != n)
        throw std::invalid_argument("simplex: shape mismatch");

    // phase 1 with one artificial per row; flip rows so b >= 0
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m + 1, n + m + 1);
    for (int i = 0; i < m; ++i) {
        const double sgn = b[i] < 0 ? -1.0 : 1.0;
        t.block(i, 0, 1, n) = sgn * a.row(i);
        t(i, n + i) = 1.0;
        t(i, n + m) = sgn * b[i];
    }
    std::vector<int> basis(m);
    for (int i = 0; i < m; ++i) basis[i] = n + i;
    // phase-1 objective: sum of artificials
    for (int j = 0; j < n + m; ++j)
        t(m, j) = (j >= n) ? 1.0 : 0.0;
    for (int i = 0; i < m; ++i) t.row(m) -= t.row(i); // price out basics

    detail::pivot_loop(t, basis, n + m);
    if (t(m, n + m) < -1e-7) return Solution{Status::Infeasible, {}, 0};

    // drive lingering artificials out of the basis where possible
    for (int i = 0; i < m; ++i) {
        if (basis[i] >= n) {
            int enter = -1;
            for (int j = 0; j < n; ++j)
                if (std::abs(t(i, j)) > 1e-9) { enter = j; break; }
            if (enter >= 0) {
                t.row(i) /= t(i, enter);
                for (int k = 0; k <= m; ++k) {
                    if (k == i) continue;
                    const double f = t(k, enter);
                    if (f != 0.0) t.row(k) -= f * t.row(i);
                }
                basis[i] = enter;
            }
        }
    }

    // phase 2: original objective over the first n columns only
    Eigen::MatrixXd t2 = Eigen::MatrixXd::Zero(m + 1, n + 1);
    t2.block(0, 0, m, n) = t.block(0, 0, m, n);
    t2.col(n).head(m) = t.col(n + m).head(m);
    for (int j = 0; j < n; ++j) t2(m, j) = c[j];
    for (int i = 0; i < m; ++i)
        if (basis[i] < n) t2.row(m) -= c[basis[i]] * t2.row(i);

    if (!detail::pivot_loop(t2, basis, n))
        return Solution{Status::Unbounded, {}, 0};

    Solution sol;
    sol.status = Status::Optimal;
    sol.x = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < m; ++i)
        if (basis[i] < n) sol.x[basis[i]] = t2(i, n);
    sol.value = c.dot(sol.x);
    return sol;
}

// min ||A x - b||_1 over free x, via u - v splitting
inline Eigen::VectorXd l1_regression(const Eigen::MatrixXd& a,
                                     const Eigen::VectorXd& b) {
    const int m = int(a.rows()), d = int(a.cols());
    Eigen::MatrixXd big(m, 2 * d + 2 * m);
    big << a, -a, Eigen::MatrixXd::Identity(m, m), -Eigen::MatrixXd::Identity(m, m);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(2 * d + 2 * m);
    c.segment(2 * d, 2 * m).setOnes();
    const auto sol = solve(big, b, c);
    if (sol.status != Status::Optimal)
        throw std::runtime_error("l1 regression LP did not solve");
    return sol.x.segment(0, d) - sol.x.segment(d, d);
}

// is there an x with A x <= b?  (free x, slack variables, phase-1 test)
inline bool feasible_inequalities(const Eigen::MatrixXd& a,
                                  const Eigen::VectorXd& b) {
    const int m = int(a.rows()), d = int(a.cols());
    Eigen::MatrixXd big(m, 2 * d + m);
    big << a, -a, Eigen::MatrixXd::Identity(m, m);
    const auto sol = solve(big, b, Eigen::VectorXd::Zero(2 * d + m));
    return sol.status == Status::Optimal;
}

// exact oracle for min c^T x, A^T x = b, x >= 0 (A is n x d row-partitioned
// convention, so constraints are the d columns):  enumerate all bases.
inline Solution enumerate_optimum(const Eigen::MatrixXd& a,
                                  const Eigen::VectorXd& b,
                                  const Eigen::VectorXd& c) {
    const int n = int(a.rows()), d = int(a.cols());
    if (n > 40) throw std::invalid_argument("basis enumeration limited to n <= 40");
    Solution best;
    std::vector<int> pick(static_cast<std::size_t>(d));
    // iterate over all d-subsets of [n]
    for (int i = 0; i < d; ++i) pick[std::size_t(i)] = i;
    auto advance = [&]() {
        int i = d - 1;
        while (i >= 0 && pick[std::size_t(i)] == n - d + i) --i;
        if (i < 0) return false;
        ++pick[std::size_t(i)];
        for (int j = i + 1; j < d; ++j) pick[std::size_t(j)] = pick[std::size_t(j - 1)] + 1;
        return true;
    };
    do {
        Eigen::MatrixXd basis(d, d);
        for (int i = 0; i < d; ++i) basis.col(i) = a.row(pick[std::size_t(i)]).transpose();
        Eigen::FullPivLU<Eigen::MatrixXd> lu(basis);
        if (!lu.isInvertible()) continue;
        const Eigen::VectorXd xb = lu.solve(b);
        if ((xb.array() < -1e-9).any()) continue;
        double val = 0;
        for (int i = 0; i < d; ++i) val += c[pick[std::size_t(i)]] * xb[i];
        if (best.status != Status::Optimal || val < best.value) {
            best.status = Status::Optimal;
            best.value = val;
            best.x = Eigen::VectorXd::Zero(n);
            for (int i = 0; i < d; ++i) best.x[pick[std::size_t(i)]] = std::max(0.0, xb[i]);
        }
    } while (advance());
    return best;
}

} // namespace commopt::smalllp
