#pragma once

// Regression protocols: a spectral preconditioner sampled from leverage
// score overestimates, Richardson iteration that ships only the changed
// middle bits of each iterate, and constant-factor lp regression through
// the subspace-embedding machinery.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "embed.hpp"
#include "instance.hpp"
#include "leverage.hpp"
#include "message.hpp"
#include "network.hpp"
#include "presets.hpp"
#include "refinement.hpp"
#include "smalllp.hpp"

namespace commopt::reg {

struct divergence_guard : std::runtime_error {
    explicit divergence_guard(const std::string& w) : std::runtime_error(w) {}
};

struct Preconditioner {
    Eigen::MatrixXd m_hat;      // (1/1.1) sum of sampled outer products
    double lambda = 1.1 / 0.9;  // certified sandwich factor

    // the Richardson preconditioner: A^T A <= M <= lambda A^T A  (w.h.p.)
    Eigen::MatrixXd richardson_form() const { return lambda * m_hat; }
};

// Sample rows with S = Sample(tau, 100, c) and assemble the preconditioner
// on the coordinator.
inline Preconditioner build_preconditioner(Network& net,
                                           const RowPartitionedMatrix& a,
                                           const refine::OverestimateVector& tau,
                                           double c,
                                           const std::string& tag = "precond") {
    const int d = a.d;
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < a.s(); ++i) {
        Rng rng = net.stream(tag + "/sample", i);
        const auto diag =
            lev::sample_diag(tau.tau_blocks[std::size_t(i)], 100.0, c, d, rng);
        if (diag.nnz() == 0) continue;
        Eigen::MatrixXd rows(Eigen::Index(diag.nnz()), d);
        std::vector<int> row_exps;
        for (std::size_t k = 0; k < diag.nnz(); ++k) {
            rows.row(Eigen::Index(k)) = a.blocks[std::size_t(i)].row(diag.index[k]);
            row_exps.push_back(tau.exponents[std::size_t(i)][std::size_t(diag.index[k])]);
        }
        const auto msg = Message::matrix(tag + "/rows", rows, a.L, a.L);
        net.send_to_coord(i, msg);
        net.send_to_coord(i, Message::exponent_list(tag + "/exps", row_exps));
        // coordinator recomputes 1/sqrt(p) from the exponents it received
        for (std::size_t k = 0; k < diag.nnz(); ++k) {
            const double tau_val = 1.01 * std::ldexp(1.0, row_exps[k]);
            const double p =
                std::min(1.0, 100.0 * c * std::log(std::max(double(d), 2.0)) * tau_val);
            const Eigen::VectorXd row = msg.as_matrix().row(Eigen::Index(k)).transpose();
            acc += (row * row.transpose()) / p;
        }
    }
    net.round_barrier();
    Preconditioner out;
    out.m_hat = acc / 1.1;
    return out;
}

struct RegressionResult {
    Eigen::VectorXd x;
    double residual = 0.0;
    std::uint64_t bits_total = 0;
    std::vector<std::uint64_t> bits_per_iter;
    int iterations = 0;
    std::string mode;
};

struct RichardsonOptions {
    bool middle_bit_truncation = true;
    bool divergence_check = true; // simulator-side oracle on the M-norm error
    std::uint64_t wire_bound_slack_bits = 16;
    bool assert_wire_bound = true;
};

// Richardson iteration with preconditioner M (A^T A <= M <= lambda A^T A).
// Per iteration the coordinator sends only the middle bits of x^{k+1]-x^k:
// high bits repeat the previous iterate, bits below the convergence
// threshold keep their old values.
inline RegressionResult richardson_solve(Network& net, const RowPartitionedMatrix& a,
                                         const RowPartitionedVector& b,
                                         const Eigen::MatrixXd& m, double lambda,
                                         double eps,
                                         const RichardsonOptions& opt = {},
                                         const std::string& tag = "richardson") {
    const int d = a.d, s = a.s();
    const Eigen::Index n = a.rows();
    const double eps_hat = 1.0 / (2.0 * lambda);
    const int iters = std::max(
        1, int(std::ceil(std::log(eps) / std::log(1.0 - 1.0 / (2.0 * lambda)))));

    const Eigen::MatrixXd minv = m.inverse();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> mes(m);
    const double sigma_min = mes.eigenvalues().minCoeff();
    const double kappa_m = mes.eigenvalues().maxCoeff() / sigma_min;

    auto m_norm = [&](const Eigen::VectorXd& v) { return std::sqrt(v.dot(m * v)); };

    // machines send A^(i)T b^(i) once; entries are exact multiples of 2^-2L
    Eigen::VectorXd atb = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < s; ++i) {
        const Eigen::VectorXd part =
            a.blocks[std::size_t(i)].transpose() * b.blocks[std::size_t(i)];
        const auto msg = Message::vector_on_grid(tag + "/Atb", part, -2 * a.L);
        net.send_to_coord(i, msg);
        atb += msg.as_vector();
    }
    net.round_barrier();

    // simulator-side oracle for the divergence guard and contraction tests
    const Eigen::MatrixXd dense = a.stacked();
    const Eigen::VectorXd bs = b.stacked();
    const Eigen::VectorXd xstar =
        lev::Pinv(dense.transpose() * dense).inv * (dense.transpose() * bs);

    RegressionResult res;
    res.mode = "high_accuracy";
    Eigen::VectorXd x = Eigen::VectorXd::Zero(d);       // current iterate, everywhere
    Eigen::VectorXd atax = Eigen::VectorXd::Zero(d);    // A^T A x at the coordinator
    double prev_err = m_norm(x - xstar);

    const std::uint64_t base_bits = net.ledger().total();
    std::uint64_t bits_mark = base_bits;

    for (int k = 0; k < iters; ++k) {
        const Eigen::VectorXd xt = x - minv * (atax - atb); // classic step
        const Eigen::VectorXd delta_t = xt - x;
        const double step_m = m_norm(delta_t);
        if (step_m == 0.0) {
            res.bits_per_iter.push_back(0);
            ++res.iterations;
            break;
        }

        // dyadic threshold: place values below it keep their old bits
        Eigen::VectorXd delta = delta_t;
        const int max_exp = std::ilogb(delta_t.cwiseAbs().maxCoeff()) + 1;
        int pexp = 0;
        if (opt.middle_bit_truncation) {
            const double thresh = eps_hat * step_m /
                                  (lambda * double(n) * d * d *
                                   std::ldexp(1.0, 2 * a.L + 1));
            pexp = int(std::floor(std::log2(thresh)));
        } else {
            pexp = max_exp - 52; // full double precision
        }
        pexp = std::max(pexp, max_exp - 60); // per-coordinate payload cap
        for (int j = 0; j < d; ++j) {
            const double q = std::floor(std::abs(delta[j]) / std::ldexp(1.0, pexp));
            delta[j] = (delta[j] < 0 ? -1.0 : 1.0) * q * std::ldexp(1.0, pexp);
        }

        // broadcast the middle bits: threshold exponent + per-coordinate payload
        const auto dmsg = Message::vector_on_grid(tag + "/dx", delta, pexp);
        net.broadcast(dmsg);
        const Eigen::VectorXd dx = dmsg.as_vector();

        if (opt.assert_wire_bound && opt.middle_bit_truncation) {
            // per-coordinate payload bound from the iterate-size argument
            const double ratio = (1.0 + eps_hat) / (eps_hat * sigma_min) * lambda *
                                 double(n) * d * d * std::ldexp(1.0, 2 * a.L + 3);
            const std::uint64_t cap =
                d * (std::uint64_t(std::ceil(std::log2(ratio))) +
                     opt.wire_bound_slack_bits) +
                2 * opt.wire_bound_slack_bits;
            if (dmsg.bit_size() > cap)
                throw std::logic_error("middle-bit payload exceeded its bound");
        }

        x += dx;

        // machines return their A^(i)T A^(i) dx parts; the product grid is
        // pexp - 2L, capped at a 60-bit mantissa (finer than double anyway)
        Eigen::VectorXd upd = Eigen::VectorXd::Zero(d);
        for (int i = 0; i < s; ++i) {
            const Eigen::VectorXd part =
                a.blocks[std::size_t(i)].transpose() * (a.blocks[std::size_t(i)] * dx);
            const double amax = part.cwiseAbs().maxCoeff();
            const int grid = std::max(pexp - 2 * a.L,
                                      (amax > 0 ? std::ilogb(amax) + 1 : 0) - 60);
            const auto msg = Message::vector_on_grid(tag + "/AtAdx", part, grid);
            net.send_to_coord(i, msg);
            upd += msg.as_vector();
        }
        atax += upd;
        net.round_barrier();

        const double err = m_norm(x - xstar);
        const double fp_floor = 1e-12 * m_norm(xstar) + 1e-300;
        if (opt.divergence_check && prev_err > fp_floor &&
            err > (1.0 - 1.0 / (2.0 * lambda) + 1e-6) * prev_err)
            throw divergence_guard("M-norm error ratio " +
                                   std::to_string(err / prev_err) + " at iteration " +
                                   std::to_string(k));
        prev_err = err;

        res.bits_per_iter.push_back(net.ledger().total() - bits_mark);
        bits_mark = net.ledger().total();
        ++res.iterations;
    }

    res.x = x;
    res.residual = (dense * x - bs).norm();
    res.bits_total = net.ledger().total() - base_bits;
    (void)kappa_m;
    return res;
}

// refinement -> preconditioner -> Richardson, end to end
inline RegressionResult solve_l2_high_accuracy(Network& net,
                                               const RowPartitionedMatrix& a,
                                               const RowPartitionedVector& b,
                                               double eps, double kappa,
                                               const Preset& preset,
                                               const RichardsonOptions& opt = {}) {
    const auto tau = refine::refinement_overestimates(net, a, 3.0, kappa, preset);
    const auto pre = build_preconditioner(net, a, tau, 3.0);
    return richardson_solve(net, a, b, pre.richardson_form(), pre.lambda, eps, opt);
}

// sample count for the block-leverage spectral approximation
inline int block_sample_count(int d, double beta, double eps, const Preset& preset) {
    const double dd = d;
    return int(std::ceil(preset.block_sample_factor * (dd / (beta * eps * eps)) *
                         std::log(dd / (beta * eps)) *
                         std::log(std::max(dd, 3.0))));
}

// Constant-factor lp regression (1 <= p <= 2) by embedding the span of
// [A | b] and solving the sketched problem at the coordinator.  p = 2 goes
// through block leverage scores, p < 2 through Lewis weight sampling.
// `sarlos` (p = 2 only) exploits that a sqrt(eps)-distortion embedding
// already solves regression to (1 + eps) cost.
inline RegressionResult solve_lp_constant(Network& net, const RowPartitionedMatrix& a,
                                          const RowPartitionedVector& b, double p,
                                          double eps, double delta,
                                          const Preset& preset, bool sarlos = false) {
    if (p < 1.0 || p > 2.0)
        throw std::invalid_argument("constant-factor regression needs p in [1,2]");
    const int d = a.d;

    // the augmented instance [A | b] shares A's partition
    RowPartitionedMatrix aug;
    aug.d = d + 1;
    aug.L = a.L;
    for (int i = 0; i < a.s(); ++i) {
        Eigen::MatrixXd blk(a.blocks[std::size_t(i)].rows(), d + 1);
        blk << a.blocks[std::size_t(i)], b.blocks[std::size_t(i)];
        aug.blocks.push_back(std::move(blk));
    }

    // distortion eps' gives cost ratio (1+eps')/(1-eps') = 1 + eps
    const double eps_embed =
        sarlos ? std::min(0.7, std::sqrt(eps) / 2.0) : eps / (2.0 + eps);

    Eigen::MatrixXd skaug;
    if (p == 2.0) {
        const auto est = embed::estimate_block_leverages(net, aug, preset);
        const Eigen::VectorXd probs = est.scores / est.scores.sum();
        const double beta = preset.block_C * (d + 1) / est.scores.sum();
        const int n_samples = block_sample_count(d + 1, beta, eps_embed, preset);
        skaug = embed::block_lev_sample(net, aug, probs, n_samples).rows;
    } else {
        skaug = embed::lewis_embed(net, aug, p, eps_embed, delta, preset);
    }
    const Eigen::MatrixXd sa = skaug.leftCols(d);
    const Eigen::VectorXd sb = skaug.col(d);

    RegressionResult res;
    res.mode = "constant_factor";
    if (p == 2.0) {
        res.x = sa.colPivHouseholderQr().solve(sb);
    } else if (Eigen::Index(sa.rows()) <= 160 && p == 1.0) {
        res.x = smalllp::l1_regression(sa, sb); // exact on small sketches
    } else {
        // IRLS with a shrinking smoothing floor (coordinator-local solve)
        Eigen::VectorXd x = sa.colPivHouseholderQr().solve(sb);
        double floor_sm = 1e-2;
        for (int it = 0; it < 200; ++it) {
            const Eigen::VectorXd r = sa * x - sb;
            Eigen::VectorXd w(r.size());
            for (Eigen::Index i = 0; i < r.size(); ++i)
                w[i] = std::pow(std::max(std::abs(r[i]), floor_sm), p - 2.0);
            const Eigen::MatrixXd g = sa.transpose() * w.asDiagonal() * sa;
            const Eigen::VectorXd rhs = sa.transpose() * (w.asDiagonal() * sb);
            const Eigen::VectorXd xn = lev::Pinv(g).inv * rhs;
            const bool settled = (xn - x).norm() <= 1e-10 * (x.norm() + 1);
            x = xn;
            if (settled) {
                if (floor_sm <= 1e-9) break;
                floor_sm *= 0.1;
            }
        }
        res.x = x;
    }
    res.residual = (a.stacked() * res.x - b.stacked()).lpNorm<1>();
    if (p == 2.0) res.residual = (a.stacked() * res.x - b.stacked()).norm();
    res.bits_total = net.ledger().total();
    res.iterations = 1;
    return res;
}

} // namespace commopt::reg
