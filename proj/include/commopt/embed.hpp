#pragma once

// Distributed subspace-embedding protocols over metered channels:
// block leverage score estimation and sampling, relative Lewis weight
// sampling with outlier handling, and the recursive halving construction
// of an O(1)-approximate Lewis quadratic form.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "instance.hpp"
#include "leverage.hpp"
#include "message.hpp"
#include "network.hpp"
#include "presets.hpp"
#include "sketch.hpp"

namespace commopt::embed {

struct invalid_distribution : std::runtime_error {
    explicit invalid_distribution(const std::string& w) : std::runtime_error(w) {}
};
struct no_mass_error : std::runtime_error {
    no_mass_error() : std::runtime_error("relative Lewis sampling: no mass") {}
};
struct outlier_overflow : std::runtime_error {
    explicit outlier_overflow(const std::string& w) : std::runtime_error(w) {}
};
struct rank_collapse : std::runtime_error {
    rank_collapse() : std::runtime_error("uniform halving lost rank twice") {}
};

// A sampled, rescaled row matrix together with its claimed sandwich factor.
struct SpectralApprox {
    Eigen::MatrixXd rows; // n' x d
    double lambda = 1.0;  // claim: (1/lambda) A^T A <= rows^T rows <= lambda A^T A

    // extreme generalized eigenvalues of (rows^T rows, A^T A) restricted to
    // the range of A^T A
    std::pair<double, double> sandwich(const Eigen::MatrixXd& a) const {
        const lev::Pinv p(a.transpose() * a);
        const Eigen::MatrixXd w = p.half; // (A^T A)^{-1/2} on the range
        const Eigen::MatrixXd mid = w * (rows.transpose() * rows) * w;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mid);
        double lo = lev::kInf, hi = 0;
        // ignore directions outside the range of A^T A
        const Eigen::MatrixXd proj = p.range_proj;
        for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
            const Eigen::VectorXd v = es.eigenvectors().col(i);
            if ((proj * v).norm() < 0.5) continue;
            lo = std::min(lo, es.eigenvalues()[i]);
            hi = std::max(hi, es.eigenvalues()[i]);
        }
        return {lo, hi};
    }
};

// -- block leverage scores -------------------------------------------------

struct BlockScoreList {
    Eigen::VectorXd scores;                    // L[i], one per machine
    std::vector<std::vector<int>> active_sets; // S_r per round, S_0 = all
    int rounds = 0;
};

// Iterative pruning estimator: round r sketches every active block down to
// ~2^r rows; blocks whose estimate stays below C 2^r are finalized.
inline BlockScoreList estimate_block_leverages(Network& net,
                                               const RowPartitionedMatrix& a,
                                               const Preset& preset,
                                               const std::string& tag = "blockest") {
    const int s = a.s(), d = a.d;
    const int last_round = int(std::ceil(std::log2(std::max(d, 2))));
    BlockScoreList out;
    out.scores = Eigen::VectorXd::Constant(s, -1.0);

    std::vector<int> active(static_cast<std::size_t>(s));
    std::iota(active.begin(), active.end(), 0);

    for (int r = 0; r <= last_round; ++r) {
        out.active_sets.push_back(active);
        if (active.empty()) break;
        const int k_r = 1 << r;
        const int m_r = int(std::ceil(preset.block_sketch_rows_per_k * k_r));

        // 1-bit activation notice per active machine
        for (int i : active)
            net.send_to_machine(i, Message::raw_bits(tag + "/active", 1, 1));

        // active machines sketch their blocks and ship them
        std::vector<Eigen::MatrixXd> sketched;
        std::vector<Eigen::Index> part;
        for (int i : active) {
            Rng rng = net.stream(tag + "/sk", i);
            const Eigen::MatrixXd g = sketch::rademacher(m_r, a.blocks[i].rows(), rng);
            const auto msg = Message::matrix_adaptive(tag + "/SA", g * a.blocks[i],
                                                      sketch::kSketchMantissaBits);
            net.send_to_coord(i, msg);
            sketched.push_back(msg.as_matrix());
            part.push_back(m_r);
        }
        net.round_barrier();

        // coordinator stacks and scores the sketched blocks
        Eigen::MatrixXd stack(Eigen::Index(active.size()) * m_r, d);
        for (std::size_t i = 0; i < sketched.size(); ++i)
            stack.middleRows(Eigen::Index(i) * m_r, m_r) = sketched[i];
        const Eigen::VectorXd est = lev::block_leverage(stack, part);

        std::vector<int> next;
        for (std::size_t i = 0; i < active.size(); ++i) {
            if (est[Eigen::Index(i)] >= preset.block_C * k_r)
                next.push_back(active[std::size_t(i)]); // estimate not yet trusted
            else
                out.scores[active[std::size_t(i)]] = est[Eigen::Index(i)];
        }
        // the kept estimates each exceed C k_r and sum to at most d
        if (!next.empty() &&
            double(next.size()) > double(d) / (preset.block_C * k_r) + 1e-9)
            throw std::logic_error("active-set bound violated");
        active = std::move(next);
        out.rounds = r + 1;
    }

    for (int i = 0; i < s; ++i)
        if (out.scores[i] < 0) out.scores[i] = d; // never pruned: fallback d
    return out;
}

// Block leverage score sampling: N rescaled Rademacher combinations
// g^T A^(j) / sqrt(N p_j), servers chosen from the given distribution.
inline SpectralApprox block_lev_sample(Network& net, const RowPartitionedMatrix& a,
                                       const Eigen::VectorXd& probs, int n_samples,
                                       const std::string& tag = "blocksample") {
    if (probs.size() != a.s())
        throw invalid_distribution("probability vector length mismatch");
    if (std::abs(probs.sum() - 1.0) > 1e-9 || (probs.array() < -1e-15).any())
        throw invalid_distribution("probabilities must be nonnegative and sum to 1");

    SpectralApprox out;
    out.rows.resize(n_samples, a.d);
    Rng pick = net.stream(tag + "/server");
    for (int l = 0; l < n_samples; ++l) {
        // shared randomness: server choice costs no communication
        double u = pick.uniform(), acc = 0;
        int j = 0;
        for (; j < a.s() - 1; ++j) {
            acc += probs[j];
            if (u < acc) break;
        }
        Rng g_rng = net.shared().stream(tag + "/g", std::uint64_t(l), std::uint64_t(j));
        Eigen::VectorXd g(a.blocks[j].rows());
        for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = g_rng.rademacher();

        // +-1 combination of L-bit rows: exact at L fraction bits
        const Eigen::VectorXd v = a.blocks[j].transpose() * g;
        const int int_bits =
            a.L + int(std::ceil(std::log2(double(a.blocks[j].rows() + 1)))) + 1;
        const auto msg = Message::vector_wide(tag + "/gA", v, int_bits, a.L);
        net.send_to_coord(j, msg);
        out.rows.row(l) =
            msg.as_vector().transpose() / std::sqrt(double(n_samples) * probs[j]);
    }
    net.round_barrier();
    out.lambda = 1.0;
    return out;
}

// -- relative Lewis weight sampling ----------------------------------------

struct LewisSampleItem {
    int machine;
    Eigen::Index local_row; // index within the machine's active rows
    Eigen::VectorXd row;    // as received
    double rescale;         // (N * per-draw probability)^{-1/p}
    double prob_estimate;   // (1 +- eps) estimate of the per-draw probability
    bool outlier;
};

struct LewisSamples {
    std::vector<LewisSampleItem> items;
    double q = 0.0;    // outlier mixture weight
    int outliers = 0;  // total outlying rows found
};

// Samples rows from the distribution v_i = min(||M a_i||_2^p, 1) normalized,
// over machines holding disjoint row blocks.  `T` upper-bounds the number of
// outlying rows (v_i = 1); exceeding it is an error by the problem contract.
// `kernel_rows_are_outliers` selects the generalized-leverage convention:
// rows with a component in ker(M) count as v = 1 (used when M comes from a
// possibly rank-deficient quadratic form) instead of the literal ||M a||^p.
inline LewisSamples relative_lewis_sampling(
    Network& net, const std::vector<Eigen::MatrixXd>& blocks,
    const Eigen::MatrixXd& m, double p, double delta, int n_samples, int T,
    int row_L, const Preset& preset, const std::string& tag = "rlw",
    bool kernel_rows_are_outliers = false) {
    const int s = int(blocks.size());
    LewisSamples out;

    // active-row bookkeeping: rows get removed as outliers are found
    std::vector<std::vector<Eigen::Index>> active(static_cast<std::size_t>(s));
    for (int j = 0; j < s; ++j) {
        active[std::size_t(j)].resize(std::size_t(blocks[std::size_t(j)].rows()));
        std::iota(active[std::size_t(j)].begin(), active[std::size_t(j)].end(), 0);
    }
    auto active_block = [&](int j) {
        const auto& idx = active[std::size_t(j)];
        Eigen::MatrixXd x(Eigen::Index(idx.size()), m.cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
            x.row(Eigen::Index(i)) = blocks[std::size_t(j)].row(idx[i]);
        return x;
    };

    // constant-factor per-server mass estimates F_j ~ ||A^(j) M||_{p,2}^p
    Eigen::VectorXd f(s);
    auto refresh_f = [&](int j, std::uint64_t round) {
        if (active[std::size_t(j)].empty()) {
            f[j] = 0;
            return;
        }
        const Eigen::MatrixXd x = active_block(j);
        if ((x * m).cwiseAbs().maxCoeff() == 0.0) {
            f[j] = 0;
            return;
        }
        f[j] = sketch::lp2_norm_estimate(net, j, x, m, p, 0.5, 0.25,
                                         tag + "/F" + std::to_string(round));
    };
    for (int j = 0; j < s; ++j) refresh_f(j, 0);
    net.round_barrier();

    Rng pick = net.stream(tag + "/pick");
    auto pick_server = [&]() {
        const double total = f.sum();
        double u = pick.uniform() * total, acc = 0;
        for (int j = 0; j < s; ++j) {
            acc += f[j];
            if (u < acc || j == s - 1) return j;
        }
        return s - 1;
    };

    // outlier scan: rows with ||M a||_2^2 >= 1 are pulled out one by one
    struct Outlier {
        int machine;
        Eigen::Index local_row;
        Eigen::VectorXd row;
    };
    std::vector<Outlier> found;

    // rows with a component in ker(M) have infinite generalized mass and are
    // outliers by convention; the coordinator broadcasts the kernel basis and
    // machines report such rows themselves
    if (kernel_rows_are_outliers) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m * m.transpose());
        const double cut = 1e-10 * std::max(es.eigenvalues().maxCoeff(), 1e-300);
        std::vector<Eigen::Index> kdims;
        for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
            if (es.eigenvalues()[i] <= cut) kdims.push_back(i);
        if (!kdims.empty()) {
            Eigen::MatrixXd kb(m.rows(), Eigen::Index(kdims.size()));
            for (std::size_t i = 0; i < kdims.size(); ++i)
                kb.col(Eigen::Index(i)) = es.eigenvectors().col(kdims[i]);
            const auto kmsg = Message::matrix_adaptive(tag + "/ker", kb,
                                                       sketch::kSketchMantissaBits);
            net.broadcast(kmsg);
            const Eigen::MatrixXd kber = kmsg.as_matrix();
            for (int j = 0; j < s; ++j) {
                auto& idx = active[std::size_t(j)];
                for (std::size_t i = 0; i < idx.size();) {
                    const Eigen::VectorXd row =
                        blocks[std::size_t(j)].row(idx[i]).transpose();
                    if ((kber.transpose() * row).norm() > 1e-6 * (row.norm() + 1e-300)) {
                        if (int(found.size()) >= T)
                            throw outlier_overflow("more than T kernel-side outliers");
                        const auto rmsg = Message::vector(tag + "/kerrow", row, row_L);
                        net.send_to_coord(j, rmsg);
                        found.push_back(Outlier{j, idx[i], rmsg.as_vector()});
                        idx.erase(idx.begin() + Eigen::Index(i));
                    } else {
                        ++i;
                    }
                }
                refresh_f(j, 500);
            }
        }
    }
    const int scans = int(std::ceil(
        preset.outlier_scan_factor * T * std::max(1.0, std::log(double(T))) *
        std::max(1.0, std::log(1.0 / std::min(delta, 0.5)))));
    // a streak of misses rules out remaining outliers: any surviving one is
    // hit per draw with probability at least 1/(T+1)
    const int miss_budget = int(std::ceil(
        (T + 1) * std::max(1.0, std::log(1.0 / std::min(delta, 0.5)))));
    int misses = 0;
    for (int t = 0; t < scans && misses < miss_budget; ++t) {
        if (f.sum() <= 0) break;
        const int l = pick_server();
        const auto bs = sketch::sample_from_block(net, l, active_block(l), m, p, 0.75,
                                                  0.5, row_L,
                                                  tag + "/scan" + std::to_string(t),
                                                  /*estimate_prob=*/false);
        const double u = (m.transpose() * bs.row).squaredNorm();
        if (u >= 1.0) {
            if (int(found.size()) >= T)
                throw outlier_overflow("more than T = " + std::to_string(T) +
                                       " outlying rows");
            const Eigen::Index orig = active[std::size_t(l)][std::size_t(bs.row_index)];
            found.push_back(Outlier{l, orig, bs.row});
            active[std::size_t(l)].erase(active[std::size_t(l)].begin() + bs.row_index);
            refresh_f(l, std::uint64_t(1000 + t));
            misses = 0;
        } else {
            ++misses;
        }
    }
    net.round_barrier();
    out.outliers = int(found.size());

    const double fsum = f.sum();
    if (fsum <= 0 && found.empty()) throw no_mass_error();
    const double nout = double(found.size());
    out.q = nout / (nout + fsum);

    Rng mix = net.stream(tag + "/mix");
    for (int l = 0; l < n_samples; ++l) {
        if (mix.uniform() < out.q) {
            const auto& o = found[std::size_t(mix.below(found.size()))];
            const double prob = out.q / nout; // uniform over the outlier set
            out.items.push_back(LewisSampleItem{
                o.machine, o.local_row, o.row,
                std::pow(double(n_samples) * prob, -1.0 / p), prob, true});
        } else {
            const int srv = pick_server();
            const auto bs = sketch::sample_from_block(
                net, srv, active_block(srv), m, p, 0.5, 0.25, row_L,
                tag + "/draw" + std::to_string(l));
            const double prob = (1.0 - out.q) * (f[srv] / fsum) * bs.prob_estimate;
            const Eigen::Index orig =
                active[std::size_t(srv)][std::size_t(bs.row_index)];
            out.items.push_back(LewisSampleItem{
                srv, orig, bs.row, std::pow(double(n_samples) * prob, -1.0 / p),
                prob, false});
        }
    }
    net.round_barrier();
    return out;
}

// -- recursive Lewis form ----------------------------------------------------

namespace detail {

inline std::vector<std::vector<Eigen::Index>> restrict_blocks(
    const RowPartitionedMatrix& a,
    const std::vector<std::pair<int, Eigen::Index>>& rows) {
    std::vector<std::vector<Eigen::Index>> per(std::size_t(a.s()));
    for (const auto& [machine, local] : rows) per[std::size_t(machine)].push_back(local);
    return per;
}

inline Eigen::MatrixXd lewis_form_of(const Eigen::MatrixXd& rows, double p) {
    // quadratic form A^T W^{1-2/p} A at the Lewis weights of `rows`;
    // all-zero rows carry no weight and are dropped
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        if (rows.row(i).norm() > 0) keep.push_back(i);
    if (keep.empty()) return Eigen::MatrixXd::Zero(rows.cols(), rows.cols());
    Eigen::MatrixXd live(Eigen::Index(keep.size()), rows.cols());
    for (std::size_t i = 0; i < keep.size(); ++i)
        live.row(Eigen::Index(i)) = rows.row(keep[i]);
    const auto lw = lev::lewis_fixed_point(live, p, 0.0, 1e-8, 500);
    const Eigen::VectorXd scale = lw.w.array().pow(1.0 - 2.0 / p);
    return live.transpose() * scale.asDiagonal() * live;
}

} // namespace detail

// Recursive halving: an O(1)-spectral approximation Q of the Lewis quadratic
// form of the active rows of A; every level samples against the form from
// the uniformly halved instance.
inline Eigen::MatrixXd approx_lewis_form(
    Network& net, const RowPartitionedMatrix& a, double p, const Preset& preset,
    std::vector<std::pair<int, Eigen::Index>> rows, int depth = 0) {
    if (p < 1.0 || p > 2.0)
        throw std::invalid_argument("approx_lewis_form needs p in [1,2]");
    const int d = a.d;
    const std::string tag = "alf" + std::to_string(depth);

    if (Eigen::Index(rows.size()) <= d) {
        // base case: the coordinator learns the surviving rows outright
        Eigen::MatrixXd base(Eigen::Index(rows.size()), d);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& [machine, local] = rows[i];
            const auto msg = Message::vector(
                tag + "/base", a.blocks[std::size_t(machine)].row(local).transpose(),
                a.L);
            net.send_to_coord(machine, msg);
            base.row(Eigen::Index(i)) = msg.as_vector().transpose();
        }
        net.round_barrier();
        return detail::lewis_form_of(base, p);
    }

    // uniform halving by parity of a seeded permutation (shared randomness)
    auto halve = [&](std::uint64_t salt) {
        std::vector<std::pair<int, Eigen::Index>> half;
        Rng perm = net.shared().stream(tag + "/halve", salt);
        std::vector<std::size_t> order(rows.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[std::size_t(perm.below(i))]);
        for (std::size_t i = 0; i < order.size(); i += 2) half.push_back(rows[order[i]]);
        return half;
    };

    auto rank_of = [&](const std::vector<std::pair<int, Eigen::Index>>& set) {
        Eigen::MatrixXd m(Eigen::Index(set.size()), d);
        for (std::size_t i = 0; i < set.size(); ++i)
            m.row(Eigen::Index(i)) =
                a.blocks[std::size_t(set[i].first)].row(set[i].second);
        return Eigen::FullPivLU<Eigen::MatrixXd>(m).rank();
    };

    std::vector<std::pair<int, Eigen::Index>> half = halve(0);
    // a half with fewer rows than the rank cannot preserve it; the kernel
    // convention downstream covers that case, so only avoidable loss counts
    const auto need = [&](const std::vector<std::pair<int, Eigen::Index>>& h) {
        return std::min<Eigen::Index>(Eigen::Index(h.size()), rank_of(rows));
    };
    if (rank_of(half) < need(half)) {
        half = halve(1); // resample once
        if (rank_of(half) < need(half)) throw rank_collapse();
    }

    const Eigen::MatrixXd q_half = approx_lewis_form(net, a, p, preset, half, depth + 1);
    const Eigen::MatrixXd m = lev::Pinv(q_half).half;

    // per-machine views of the active rows at this level
    const auto per = detail::restrict_blocks(a, rows);
    std::vector<Eigen::MatrixXd> blocks(std::size_t(a.s()));
    for (int j = 0; j < a.s(); ++j) {
        blocks[std::size_t(j)].resize(Eigen::Index(per[std::size_t(j)].size()), d);
        for (std::size_t i = 0; i < per[std::size_t(j)].size(); ++i)
            blocks[std::size_t(j)].row(Eigen::Index(i)) =
                a.blocks[std::size_t(j)].row(per[std::size_t(j)][i]);
    }

    const int n_samples = int(std::ceil(preset.lewis_rows_factor * d *
                                        std::max(1.0, std::log(double(d)))));
    const int T = 4 * d + 8;
    const auto samples = relative_lewis_sampling(net, blocks, m, p, 0.1, n_samples,
                                                 T, a.L, preset, tag + "/rlw",
                                                 /*kernel_rows_are_outliers=*/true);

    Eigen::MatrixXd sampled(Eigen::Index(samples.items.size()), d);
    for (std::size_t i = 0; i < samples.items.size(); ++i)
        sampled.row(Eigen::Index(i)) =
            samples.items[i].row.transpose() * samples.items[i].rescale;
    return detail::lewis_form_of(sampled, p);
}

inline Eigen::MatrixXd approx_lewis_form(Network& net, const RowPartitionedMatrix& a,
                                         double p, const Preset& preset) {
    std::vector<std::pair<int, Eigen::Index>> rows;
    for (int j = 0; j < a.s(); ++j)
        for (Eigen::Index i = 0; i < a.blocks[std::size_t(j)].rows(); ++i)
            rows.emplace_back(j, i);
    return approx_lewis_form(net, a, p, preset, std::move(rows));
}

// eps-distortion lp sampler: rows S A with ||S A x||_p = (1 +- eps) ||A x||_p
inline Eigen::MatrixXd lewis_embed(Network& net, const RowPartitionedMatrix& a,
                                   double p, double eps, double delta,
                                   const Preset& preset) {
    const Eigen::MatrixXd q = approx_lewis_form(net, a, p, preset);
    const Eigen::MatrixXd m = lev::Pinv(q).half;
    const int d = a.d;
    const int n_samples = int(std::ceil(preset.lewis_rows_factor * d *
                                        std::max(1.0, std::log(double(d))) /
                                        (eps * eps)));
    const auto samples = relative_lewis_sampling(net, a.blocks, m, p, delta,
                                                 n_samples, 4 * d + 8, a.L, preset,
                                                 "embed/rlw",
                                                 /*kernel_rows_are_outliers=*/true);
    Eigen::MatrixXd out(Eigen::Index(samples.items.size()), d);
    for (std::size_t i = 0; i < samples.items.size(); ++i)
        out.row(Eigen::Index(i)) =
            samples.items[i].row.transpose() * samples.items[i].rescale;
    return out;
}

} // namespace commopt::embed
