#pragma once

// Row-importance machinery: leverage scores and their generalized, ridge
// and block variants, the Sample(u, alpha, c) row sampler, and lp Lewis
// weights via the contractive fixed-point iteration.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "rng.hpp"

namespace commopt::lev {

constexpr double kInf = std::numeric_limits<double>::infinity();

// SVD pseudo-inverse with deterministic rank cutoff 1e-12 * sigma_max
struct Pinv {
    Eigen::MatrixXd inv;         // pseudo-inverse of G
    Eigen::MatrixXd half;        // symmetric square root of inv
    Eigen::MatrixXd range_proj;  // projector onto range(G)
    int rank = 0;

    explicit Pinv(const Eigen::MatrixXd& gram) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
        const auto& w = es.eigenvalues();
        const auto& v = es.eigenvectors();
        const double cutoff = 1e-12 * std::max(w.cwiseAbs().maxCoeff(), 0.0);
        Eigen::VectorXd winv = Eigen::VectorXd::Zero(w.size());
        Eigen::VectorXd winvh = winv, wproj = winv;
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            if (w[i] > cutoff) {
                winv[i] = 1.0 / w[i];
                winvh[i] = 1.0 / std::sqrt(w[i]);
                wproj[i] = 1.0;
                ++rank;
            }
        }
        inv = v * winv.asDiagonal() * v.transpose();
        half = v * winvh.asDiagonal() * v.transpose();
        range_proj = v * wproj.asDiagonal() * v.transpose();
    }
};

inline Eigen::MatrixXd pinv(const Eigen::MatrixXd& gram) { return Pinv(gram).inv; }

// tau_i = a_i^T (A^T A)^+ a_i
inline Eigen::VectorXd leverage_exact(const Eigen::MatrixXd& a) {
    const Pinv p(a.transpose() * a);
    return ((a * p.inv).cwiseProduct(a)).rowwise().sum();
}

// tau_i^B = a_i^T (B^T B)^+ a_i when a_i is orthogonal to ker(B), else inf
inline Eigen::VectorXd generalized_leverage(const Eigen::MatrixXd& a,
                                            const Eigen::MatrixXd& b) {
    const Pinv p(b.transpose() * b);
    Eigen::VectorXd tau = ((a * p.inv).cwiseProduct(a)).rowwise().sum();
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const Eigen::VectorXd r = a.row(i).transpose() -
                                  p.range_proj * a.row(i).transpose();
        const double scale = std::max(1.0, a.row(i).norm());
        if (r.norm() > 1e-9 * scale) tau[i] = kInf;
    }
    return tau;
}

// tau_i^lambda = a_i^T (A^T A + lambda I)^-1 a_i
inline Eigen::VectorXd ridge_leverage(const Eigen::MatrixXd& a, double lambda) {
    if (lambda < 0) throw std::invalid_argument("ridge lambda must be >= 0");
    Eigen::MatrixXd g = a.transpose() * a;
    g.diagonal().array() += lambda;
    const Pinv p(g);
    return ((a * p.inv).cwiseProduct(a)).rowwise().sum();
}

// L_i = Tr(A^(i) (A^T A)^+ A^(i)^T) per block of a disjoint row partition
inline Eigen::VectorXd block_leverage(const Eigen::MatrixXd& a,
                                      const std::vector<Eigen::Index>& partition) {
    Eigen::Index total = 0;
    for (auto p : partition) total += p;
    if (total != a.rows())
        throw std::invalid_argument("partition must cover rows disjointly");
    const Eigen::VectorXd tau = leverage_exact(a);
    Eigen::VectorXd out(Eigen::Index(partition.size()));
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < partition.size(); ++i) {
        out[Eigen::Index(i)] = tau.segment(r, partition[i]).sum();
        r += partition[i];
    }
    return out;
}

// Sample(u, alpha, c): p_i = min(1, alpha c log(d) u_i), S_ii = 1/sqrt(p_i)
// with probability p_i.  Entries are independent.
struct SamplingDiagonal {
    std::vector<Eigen::Index> index; // positions of nonzero entries
    std::vector<double> value;       // 1/sqrt(p_i)
    std::vector<double> prob;        // the generating p_i
    Eigen::Index n = 0;

    std::size_t nnz() const { return index.size(); }
};

inline SamplingDiagonal sample_diag(const Eigen::VectorXd& u, double alpha,
                                    double c, int d, Rng& rng) {
    if ((u.array() < 0).any())
        throw std::invalid_argument("overestimates must be nonnegative");
    SamplingDiagonal s;
    s.n = u.size();
    const double rate = alpha * c * std::log(std::max(double(d), 2.0));
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        const double p = std::min(1.0, rate * u[i]);
        if (p > 0 && rng.uniform() < p) {
            s.index.push_back(i);
            s.value.push_back(1.0 / std::sqrt(p));
            s.prob.push_back(p);
        }
    }
    return s;
}

// -- lp Lewis weights ---------------------------------------------------

struct non_convergence : std::runtime_error {
    explicit non_convergence(const std::string& w) : std::runtime_error(w) {}
};

struct LewisWeightVector {
    Eigen::VectorXd w;
    double p = 2.0;
    double eta = 0.0;
    // max_i |w_i^{2/p} - q_i(w) - eta w_i^{2/p-1} - slack|, where slack is
    // the eta^{2/p}/n^2 adjustment carried by the regularized map
    double residual = 0.0;
    int iterations = 0;
};

// q_i(x) = a_i^T (A^T X^{1-2/p} A)^+ a_i
inline Eigen::VectorXd lewis_quad_scores(const Eigen::MatrixXd& a, double p,
                                         const Eigen::VectorXd& x) {
    const Eigen::VectorXd scale = x.array().pow(1.0 - 2.0 / p);
    const Eigen::MatrixXd g =
        a.transpose() * scale.asDiagonal() * a;
    const Pinv pi(g);
    return ((a * pi.inv).cwiseProduct(a)).rowwise().sum();
}

// sigma_i(W^{1/2-1/p} A): leverage scores of the reweighted matrix
inline Eigen::VectorXd lewis_sigma(const Eigen::MatrixXd& a, double p,
                                   const Eigen::VectorXd& w) {
    return w.array().pow(1.0 - 2.0 / p) * lewis_quad_scores(a, p, w).array();
}

// predicted iteration count (Lewis fixed-point contraction rate), used by
// callers that bound the measured count
inline int lewis_predicted_iters(double p, double eta, double eps, Eigen::Index n) {
    const double eta_eff = std::max(eta, 1.0 / double(n * n));
    const double num = std::log(1.0 / eps) + std::log(1.0 / eta_eff) +
                       std::log(1.0 / std::min(p, 1.0)) + 5.0;
    return int(std::ceil(num / (1.0 - std::abs(p / 2.0 - 1.0)))) + 1;
}

// Fixed point of w_i^{2/p} = q_i(w) + eta w_i^{2/p-1}; for eta > 0 the
// iterate map carries the additive slack eta^{2/p}/n^2.  Starts at eta*1
// (eta > 0) or the all-ones vector (eta = 0).
inline LewisWeightVector lewis_fixed_point(const Eigen::MatrixXd& a, double p,
                                           double eta, double eps,
                                           int max_iters = 200) {
    if (p <= 0 || p >= 4) throw std::invalid_argument("lewis weights need 0 < p < 4");
    if (eta < 0 || eta >= 1) throw std::invalid_argument("eta must be in [0, 1)");
    const Eigen::Index n = a.rows();
    const double slack = eta > 0 ? std::pow(eta, 2.0 / p) / double(n * n) : 0.0;

    Eigen::VectorXd w = eta > 0 ? Eigen::VectorXd::Constant(n, eta)
                                : Eigen::VectorXd::Ones(n);
    LewisWeightVector out;
    out.p = p;
    out.eta = eta;

    auto residual_of = [&](const Eigen::VectorXd& wv) {
        const Eigen::VectorXd q = lewis_quad_scores(a, p, wv);
        double r = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (wv[i] <= 0) return kInf;
            const double lhs = std::pow(wv[i], 2.0 / p);
            const double rhs = q[i] + slack + eta * std::pow(wv[i], 2.0 / p - 1.0);
            r = std::max(r, std::abs(lhs - rhs));
        }
        return r;
    };

    for (int t = 1; t <= max_iters; ++t) {
        const Eigen::VectorXd q = lewis_quad_scores(a, p, w);
        Eigen::VectorXd next(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double qt = q[i] + slack +
                              eta * std::pow(w[i], 2.0 / p - 1.0);
            next[i] = std::pow(qt, p / 2.0);
        }
        w = next;
        out.iterations = t;
        out.residual = residual_of(w);
        if (out.residual <= eps) {
            out.w = w;
            return out;
        }
    }
    throw non_convergence("lewis fixed point: residual " +
                          std::to_string(out.residual) + " after " +
                          std::to_string(max_iters) + " iterations");
}

} // namespace commopt::lev
