#pragma once

// Distributed rank-k approximation: right Rademacher sketch computed
// locally from shared randomness, leverage-score row sampling of A R, a
// small restricted-rank solve at the coordinator, and the projection
// factor onto rowspace(R X).

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "embed.hpp"
#include "instance.hpp"
#include "leverage.hpp"
#include "network.hpp"
#include "presets.hpp"

namespace commopt::lowrank {

struct ProjectionResult {
    Eigen::MatrixXd factor; // d x k' orthonormal, projection = factor factor^T
    double ratio = 0.0;     // ||A P - A||_F / ||A_k - A||_F (0/0 reported as 0)
    double error_fro = 0.0; // ||A P - A||_F
    std::uint64_t bits_total = 0;

    Eigen::MatrixXd projection() const { return factor * factor.transpose(); }
};

inline ProjectionResult low_rank_projection(Network& net,
                                            const RowPartitionedMatrix& a, int k,
                                            double eps, double delta,
                                            const Preset& preset) {
    const int d = a.d;
    if (k > d) throw std::invalid_argument("rank target exceeds column count");
    const std::uint64_t bits0 = net.ledger().total();

    // right sketch: t = O(k/eps) Rademacher columns, known via shared
    // randomness; servers form A^(i) R locally at width L + O(log d)
    const int t = int(std::ceil(double(k) / eps)) + k;
    Rng rrng = net.stream("lowrank/R");
    Eigen::MatrixXd r(d, t);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < t; ++j) r(i, j) = rrng.rademacher();

    RowPartitionedMatrix ar;
    ar.d = t;
    ar.L = std::min(31, a.L + int(std::ceil(std::log2(double(d) + 1))) + 1);
    for (int i = 0; i < a.s(); ++i) ar.blocks.push_back(a.blocks[std::size_t(i)] * r);

    // leverage-sample O(t log t + k/eps) rows of A R
    const Eigen::MatrixXd q = embed::approx_lewis_form(net, ar, 2.0, preset);
    const Eigen::MatrixXd m = lev::Pinv(q).half;
    const int n_samples =
        int(std::ceil(4.0 * (t * std::max(1.0, std::log(double(t))) + k / eps)));
    const auto rs = embed::relative_lewis_sampling(
        net, ar.blocks, m, 2.0, delta, n_samples, 4 * t + 8, ar.L, preset,
        "lowrank/rlw", /*kernel_rows_are_outliers=*/true);

    // assemble S A R (sampled sketched rows) and S A (the original rows,
    // fetched at input precision)
    Eigen::MatrixXd sar(Eigen::Index(rs.items.size()), t);
    Eigen::MatrixXd sa(Eigen::Index(rs.items.size()), d);
    for (std::size_t i = 0; i < rs.items.size(); ++i) {
        const auto& item = rs.items[i];
        sar.row(Eigen::Index(i)) = item.row.transpose() * item.rescale;
        const auto rmsg = Message::vector(
            "lowrank/Arow",
            a.blocks[std::size_t(item.machine)].row(item.local_row).transpose(), a.L);
        net.send_to_coord(item.machine, rmsg);
        sa.row(Eigen::Index(i)) = rmsg.as_vector().transpose() * item.rescale;
    }
    net.round_barrier();

    // restricted-rank least squares: X = B^+ (B B^+ C)_k with B = SAR, C = SA
    const Eigen::MatrixXd binv =
        lev::Pinv(sar.transpose() * sar).inv * sar.transpose();
    const Eigen::MatrixXd proj_c = sar * (binv * sa);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(proj_c,
                                          Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::MatrixXd ck = Eigen::MatrixXd::Zero(proj_c.rows(), proj_c.cols());
    const int kk = std::min<int>(k, int(svd.singularValues().size()));
    for (int i = 0; i < kk; ++i)
        ck += svd.singularValues()[i] * svd.matrixU().col(i) *
              svd.matrixV().col(i).transpose();
    const Eigen::MatrixXd xhat = binv * ck; // t x d, rank <= k

    // projection onto rowspace(R xhat), returned as an orthonormal factor
    const Eigen::MatrixXd rx = r * xhat; // d x d, rank <= k
    Eigen::JacobiSVD<Eigen::MatrixXd> fsvd(rx.transpose(), Eigen::ComputeThinU);
    ProjectionResult out;
    int rank = 0;
    const double cut = 1e-10 * std::max(fsvd.singularValues().maxCoeff(), 1e-300);
    for (Eigen::Index i = 0; i < fsvd.singularValues().size() && rank < k; ++i)
        if (fsvd.singularValues()[i] > cut) ++rank;
    out.factor = fsvd.matrixU().leftCols(rank);

    // reporting metrics from the simulator side (no communication)
    const Eigen::MatrixXd dense = a.stacked();
    out.error_fro = (dense * out.projection() - dense).norm();
    Eigen::JacobiSVD<Eigen::MatrixXd> asvd(dense);
    double tail = 0;
    for (Eigen::Index i = k; i < asvd.singularValues().size(); ++i)
        tail += asvd.singularValues()[i] * asvd.singularValues()[i];
    const double best = std::sqrt(tail);
    out.ratio = best > 1e-12 ? out.error_fro / best : 0.0;
    out.bits_total = net.ledger().total() - bits0;
    return out;
}

} // namespace commopt::lowrank
