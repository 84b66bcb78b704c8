#pragma once

// Refinement sampling for leverage score overestimates, with the rounded
// JL sketch of B (B^T B)^{-1} and the modular kernel-membership test on
// integer row data.  Runs entirely over metered channels.

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_int.hpp>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "instance.hpp"
#include "leverage.hpp"
#include "message.hpp"
#include "network.hpp"
#include "presets.hpp"
#include "sketch.hpp"

namespace commopt::refine {

using bigint = boost::multiprecision::cpp_int;

struct kernel_test_inconclusive : std::runtime_error {
    explicit kernel_test_inconclusive(const std::string& w) : std::runtime_error(w) {}
};

// -- integer kernel machinery ---------------------------------------------

using bigrat = boost::multiprecision::cpp_rational;

// Exact integer basis for the kernel of an integer matrix: Bareiss
// fraction-free echelon (entries stay within the Hadamard bound), rational
// back-substitution, then clearing of denominators.
inline std::vector<std::vector<bigint>> integer_kernel_basis(
    const std::vector<std::vector<bigint>>& rows, int d) {
    std::vector<std::vector<bigint>> m = rows;
    std::vector<int> pivot_col;
    bigint prev = 1;
    std::size_t r = 0;
    for (int c = 0; c < d && r < m.size(); ++c) {
        std::size_t sel = r;
        while (sel < m.size() && m[sel][std::size_t(c)] == 0) ++sel;
        if (sel == m.size()) continue;
        std::swap(m[r], m[sel]);
        for (std::size_t i = r + 1; i < m.size(); ++i) {
            for (int j = d - 1; j >= 0; --j)
                m[i][std::size_t(j)] = (m[i][std::size_t(j)] * m[r][std::size_t(c)] -
                                        m[i][std::size_t(c)] * m[r][std::size_t(j)]) /
                                       prev;
        }
        prev = m[r][std::size_t(c)];
        pivot_col.push_back(c);
        ++r;
    }

    std::vector<bool> is_pivot(static_cast<std::size_t>(d), false);
    for (int c : pivot_col) is_pivot[std::size_t(c)] = true;

    std::vector<std::vector<bigint>> basis;
    for (int f = 0; f < d; ++f) {
        if (is_pivot[std::size_t(f)]) continue;
        std::vector<bigrat> v(static_cast<std::size_t>(d), bigrat(0));
        v[std::size_t(f)] = 1;
        for (std::size_t i = pivot_col.size(); i-- > 0;) {
            const int c = pivot_col[i];
            bigrat acc = 0;
            for (int j = c + 1; j < d; ++j)
                if (v[std::size_t(j)] != 0)
                    acc += bigrat(m[i][std::size_t(j)]) * v[std::size_t(j)];
            v[std::size_t(c)] = -acc / bigrat(m[i][std::size_t(c)]);
        }
        // clear denominators and normalize by the gcd
        bigint lcm = 1;
        for (const auto& x : v)
            lcm = boost::multiprecision::lcm(lcm, boost::multiprecision::denominator(x));
        std::vector<bigint> iv(static_cast<std::size_t>(d));
        for (int j = 0; j < d; ++j) {
            const bigrat scaled = v[std::size_t(j)] * bigrat(lcm);
            iv[std::size_t(j)] = boost::multiprecision::numerator(scaled);
        }
        bigint g = 0;
        for (const auto& x : iv) g = boost::multiprecision::gcd(g, x);
        if (g > 1)
            for (auto& x : iv) x /= g;
        basis.push_back(std::move(iv));
    }
    return basis;
}

inline bool is_prime(int n) {
    if (n < 2) return false;
    for (int k = 2; k * k <= n; ++k)
        if (n % k == 0) return false;
    return true;
}

inline std::vector<int> primes_below(int bound) {
    std::vector<int> out;
    for (int k = 2; k < bound; ++k)
        if (is_prime(k)) out.push_back(k);
    return out;
}

// random big integer in [-2^bits, 2^bits]
inline bigint random_bigint(Rng& rng, int bits) {
    bigint v = 0;
    for (int got = 0; got < bits; got += 32)
        v = (v << 32) | bigint(std::uint32_t(rng.next_u64()));
    v >>= std::max(0, ((bits + 31) / 32) * 32 - bits);
    return rng.bernoulli(0.5) ? v : -v;
}

struct KernelProbe {
    std::vector<int> primes;                     // y_1..y_z
    std::vector<std::vector<std::int64_t>> mods; // v mod y_k, one vector per k
    std::vector<bigint> v;                       // exact combination (audit only)
    bool trivial = false;                        // kernel was empty, v = 0
};

// Build the probe: integer kernel basis, one random combination v, residues
// modulo z random primes below (dL)^2.
inline KernelProbe build_kernel_probe(const std::vector<std::vector<bigint>>& rows,
                                      int d, int L, int z, Rng& rng) {
    KernelProbe probe;
    const auto basis = integer_kernel_basis(rows, d);
    probe.v.assign(std::size_t(d), 0);
    if (basis.empty()) {
        probe.trivial = true;
    } else {
        const int coeff_bits = d * L;
        for (const auto& b : basis) {
            const bigint coeff = random_bigint(rng, coeff_bits);
            for (int j = 0; j < d; ++j) probe.v[std::size_t(j)] += coeff * b[std::size_t(j)];
        }
    }
    const int bound = std::max(11, (d * L) * (d * L));
    const auto pool = primes_below(bound);
    for (int k = 0; k < z; ++k) {
        const int y = pool[std::size_t(rng.below(pool.size()))];
        probe.primes.push_back(y);
        std::vector<std::int64_t> residues(static_cast<std::size_t>(d));
        for (int j = 0; j < d; ++j) {
            bigint r = probe.v[std::size_t(j)] % y;
            if (r < 0) r += y;
            residues[std::size_t(j)] = std::int64_t(r);
        }
        probe.mods.push_back(std::move(residues));
    }
    return probe;
}

// machine-side membership test on an integer row: true iff the row looks
// orthogonal to the kernel (a^T v == 0 mod y_k for every k)
inline bool in_kernel_complement(const KernelProbe& probe,
                                 const std::vector<std::int64_t>& row_numerators) {
    for (std::size_t k = 0; k < probe.primes.size(); ++k) {
        const std::int64_t y = probe.primes[k];
        std::int64_t acc = 0;
        for (std::size_t j = 0; j < row_numerators.size(); ++j) {
            const std::int64_t a = ((row_numerators[j] % y) + y) % y;
            acc = (acc + a * probe.mods[k][j]) % y;
        }
        if (acc != 0) return false;
    }
    return true;
}

// exact audit: all primes passed but the true inner product is nonzero
inline bool probe_false_negative(const KernelProbe& probe,
                                 const std::vector<std::int64_t>& row_numerators) {
    if (!in_kernel_complement(probe, row_numerators)) return false;
    bigint acc = 0;
    for (std::size_t j = 0; j < row_numerators.size(); ++j)
        acc += bigint(row_numerators[j]) * probe.v[j];
    return acc != 0;
}

// -- leverage score overestimates ------------------------------------------

struct OverestimateVector {
    std::vector<Eigen::VectorXd> tau_blocks; // final values, 1.01 * 2^exponent
    std::vector<std::vector<int>> exponents;

    Eigen::VectorXd stacked() const {
        Eigen::Index n = 0;
        for (const auto& b : tau_blocks) n += b.size();
        Eigen::VectorXd v(n);
        Eigen::Index at = 0;
        for (const auto& b : tau_blocks) {
            v.segment(at, b.size()) = b;
            at += b.size();
        }
        return v;
    }
    double l1() const { return stacked().sum(); }
};

struct RefinementTrace { // test-mode observability
    std::vector<double> l1_per_iter;
    std::vector<Eigen::Index> sampled_rows_per_iter;
    int kernel_inconclusive = 0;
};

// smallest power of half that is at least x (clamped to 1 when x > 1)
inline double smallest_pow_half_at_least(double x) {
    if (x >= 1.0) return 1.0;
    int e = 0;
    while (std::ldexp(1.0, -(e + 1)) >= x) ++e;
    return std::ldexp(1.0, -e);
}

// smallest power of two that is at least x
inline int smallest_pow2_exponent_at_least(double x) {
    int e = int(std::ceil(std::log2(x)));
    while (std::ldexp(1.0, e) < x) ++e;
    while (e > std::numeric_limits<int>::min() + 1 && std::ldexp(1.0, e - 1) >= x) --e;
    return e;
}

// Protocol for computing leverage score overestimates: tau >= tau(A)
// elementwise and ||tau||_1 <= 9d with high probability.
inline OverestimateVector refinement_overestimates(
    Network& net, const RowPartitionedMatrix& a, double c, double kappa,
    const Preset& preset, RefinementTrace* trace = nullptr,
    bool strict_kernel_audit = true) {
    const int d = a.d, s = a.s(), L = a.L;
    const Eigen::Index n = a.rows();
    if (n < 5) throw std::invalid_argument("refinement needs n >= 5");

    const int T = std::max(1, int(std::ceil(std::log2(double(n) / d))));
    const int r = preset.refinement_jl_rows(n);
    const double lambda = 1.0 / (100.0 * kappa * kappa);
    const double logd = std::log(std::max(double(d), 2.0));

    // tau blocks live on the machines; entries are powers of two (times the
    // trailing 1.01) except in the very first iteration where tau = 1
    std::vector<Eigen::VectorXd> tau(static_cast<std::size_t>(s));
    std::vector<std::vector<int>> exps(static_cast<std::size_t>(s));
    for (int i = 0; i < s; ++i) {
        tau[std::size_t(i)] = Eigen::VectorXd::Ones(a.blocks[std::size_t(i)].rows());
        exps[std::size_t(i)].assign(std::size_t(a.blocks[std::size_t(i)].rows()), 0);
    }

    const int sum_int_bits = int(std::ceil(std::log2(double(n) + 2))) + 2;
    const int sum_frac_bits = 2 * int(std::ceil(std::log2(double(n) + 2))) + 8;

    for (int it = 1; it <= T; ++it) {
        const std::string tag = "refine" + std::to_string(it);

        // machines report their overestimate mass; coordinator returns the total
        double t_total = 0;
        for (int i = 0; i < s; ++i) {
            const auto msg = Message::scalar_wide(tag + "/t", tau[std::size_t(i)].sum(),
                                                  sum_int_bits, sum_frac_bits);
            net.send_to_coord(i, msg);
            t_total += msg.as_scalar();
        }
        net.broadcast(Message::scalar_wide(tag + "/tsum", t_total, sum_int_bits,
                                           sum_frac_bits));
        net.round_barrier();

        const double alpha_hat =
            smallest_pow_half_at_least(25.0 * d * logd / t_total);
        const double alpha = std::min(1.0, alpha_hat / logd);

        // local sampling; selected rows and their exponents go up
        struct Picked {
            int machine;
            Eigen::Index local;
            double weight; // sqrt(3 alpha / 4) / sqrt(p_i)
        };
        std::vector<Picked> picked;
        for (int i = 0; i < s; ++i) {
            Rng rng = net.stream(tag + "/sample", i);
            const auto diag =
                lev::sample_diag(1.01 * tau[std::size_t(i)], 9.0 * alpha, c, d, rng);
            if (diag.nnz() == 0) continue;
            Eigen::MatrixXd rows(Eigen::Index(diag.nnz()), d);
            std::vector<int> row_exps;
            for (std::size_t k = 0; k < diag.nnz(); ++k) {
                rows.row(Eigen::Index(k)) = a.blocks[std::size_t(i)].row(diag.index[k]);
                row_exps.push_back(exps[std::size_t(i)][std::size_t(diag.index[k])]);
                picked.push_back(Picked{i, diag.index[k],
                                        std::sqrt(3.0 * alpha / 4.0) * diag.value[k]});
            }
            net.send_to_coord(i, Message::matrix(tag + "/rows", rows, L, L));
            net.send_to_coord(i, Message::exponent_list(tag + "/exps", row_exps));
        }
        net.round_barrier();
        if (trace) trace->sampled_rows_per_iter.push_back(Eigen::Index(picked.size()));

        // coordinator assembles Atil = sqrt(3a/4) Stil A and B = [Atil; sqrt(l) I]
        const Eigen::Index ntil = Eigen::Index(picked.size());
        Eigen::MatrixXd atil(ntil, d);
        for (Eigen::Index k = 0; k < ntil; ++k)
            atil.row(k) = a.blocks[std::size_t(picked[std::size_t(k)].machine)]
                              .row(picked[std::size_t(k)].local) *
                          picked[std::size_t(k)].weight;
        Eigen::MatrixXd b(ntil + d, d);
        b << atil, std::sqrt(lambda) * Eigen::MatrixXd::Identity(d, d);

        // rounded JL sketch of B (B^T B)^{-1}
        Rng jl = net.stream(tag + "/jl");
        const Eigen::MatrixXd g = sketch::rademacher(r, ntil + d, jl, false);
        const Eigen::MatrixXd ghat =
            (std::sqrt(1.01) / (0.99 * std::sqrt(double(r)))) * g * b *
            (b.transpose() * b).inverse();
        const double tol =
            1.0 / (1e4 * double(n) * double(n) * d * std::sqrt(double(r)) *
                   std::ldexp(1.0, L));
        const int grid_exp = int(std::floor(std::log2(tol)));
        const auto jmsg = Message::matrix_on_grid(tag + "/J", ghat, grid_exp);
        net.broadcast(jmsg);
        const Eigen::MatrixXd j = jmsg.as_matrix();

        // kernel probe for [Stil A] (unscaled integer rows)
        std::vector<std::vector<bigint>> int_rows;
        for (Eigen::Index k = 0; k < ntil; ++k) {
            std::vector<bigint> row(static_cast<std::size_t>(d));
            const auto& blk = a.blocks[std::size_t(picked[std::size_t(k)].machine)];
            for (int jj = 0; jj < d; ++jj)
                row[std::size_t(jj)] = bigint(fp::grid_round(
                    blk(picked[std::size_t(k)].local, jj), L));
            int_rows.push_back(std::move(row));
        }
        Rng krng = net.stream(tag + "/kernel");
        const auto probe = build_kernel_probe(int_rows, d, L,
                                              preset.num_kernel_primes(n), krng);
        {
            std::vector<std::uint64_t> primes_u(probe.primes.begin(),
                                                probe.primes.end());
            net.broadcast(Message::index_list(tag + "/primes", primes_u));
            for (const auto& residues : probe.mods) {
                std::vector<std::uint64_t> ru(residues.begin(), residues.end());
                net.broadcast(Message::index_list(tag + "/vk", ru));
            }
        }
        net.round_barrier();

        // machine-side update
        for (int i = 0; i < s; ++i) {
            auto& tb = tau[std::size_t(i)];
            auto& eb = exps[std::size_t(i)];
            for (Eigen::Index row = 0; row < a.blocks[std::size_t(i)].rows(); ++row) {
                std::vector<std::int64_t> nums(static_cast<std::size_t>(d));
                for (int jj = 0; jj < d; ++jj)
                    nums[std::size_t(jj)] =
                        fp::grid_round(a.blocks[std::size_t(i)](row, jj), L);

                double tau_gen;
                if (in_kernel_complement(probe, nums)) {
                    if (strict_kernel_audit && !probe.trivial &&
                        probe_false_negative(probe, nums)) {
                        if (trace) ++trace->kernel_inconclusive;
                        throw kernel_test_inconclusive(
                            "all probe primes divide a nonzero kernel inner product");
                    }
                    tau_gen =
                        (j * a.blocks[std::size_t(i)].row(row).transpose()).squaredNorm();
                } else {
                    tau_gen = lev::kInf;
                }
                const double floor_val = 1.0 / (2.0 * double(n) * double(n));
                const double target =
                    std::max(std::min(tb[row], tau_gen), floor_val);
                const int e = smallest_pow2_exponent_at_least(target);
                eb[std::size_t(row)] = e;
                tb[row] = 1.01 * std::ldexp(1.0, e);
            }
        }
        net.round_barrier();

        if (trace) {
            double l1 = 0;
            for (const auto& tb : tau) l1 += tb.sum();
            trace->l1_per_iter.push_back(l1);
        }
    }

    OverestimateVector out;
    out.tau_blocks = std::move(tau);
    out.exponents = std::move(exps);
    return out;
}

} // namespace commopt::refine
