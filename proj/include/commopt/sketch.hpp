#pragma once

// Oblivious sketches: Rademacher/JL projections, lp norm sketches built on
// rounded p-stable variates, an lp sampler (exponential scaling + count
// sketch recovery + companion norm sketch), and the two distributed
// primitives built from them: SampleFromBlock and lp,2 norm estimation.
// All sketch randomness is regenerable from keyed streams.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>
#include <vector>

#include "message.hpp"
#include "network.hpp"
#include "rng.hpp"

namespace commopt::sketch {

struct zero_vector_error : std::runtime_error {
    zero_vector_error() : std::runtime_error("lp sampler: zero vector") {}
};
struct zero_product_error : std::runtime_error {
    zero_product_error() : std::runtime_error("SampleFromBlock: X*M = 0") {}
};

// c_p = 1/E|N(0,1)|^p and median|stable_p|, Monte-Carlo estimated once per p
// and cached; closed forms for p in {1, 2}.
namespace detail {

inline double mc_cached(double p, int which) {
    static std::map<std::pair<int, long long>, double> cache;
    static std::mutex mu;
    const auto key = std::make_pair(which, llround(p * 1e6));
    {
        std::lock_guard<std::mutex> lk(mu);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }
    Rng rng(0x5eedc0de ^ std::uint64_t(key.second) ^ (std::uint64_t(which) << 40));
    const int n = 1'000'000;
    double val;
    if (which == 0) { // E|N(0,1)|^p
        double acc = 0;
        for (int i = 0; i < n; ++i) acc += std::pow(std::abs(rng.gaussian()), p);
        val = acc / n;
    } else { // median |stable_p|
        std::vector<double> v(n);
        for (int i = 0; i < n; ++i) v[i] = std::abs(rng.stable(p));
        std::nth_element(v.begin(), v.begin() + n / 2, v.end());
        val = v[n / 2];
    }
    std::lock_guard<std::mutex> lk(mu);
    cache[key] = val;
    return val;
}

} // namespace detail

inline double cp_constant(double p) {
    if (p == 1.0) return std::sqrt(M_PI / 2.0);
    if (p == 2.0) return 1.0;
    return 1.0 / detail::mc_cached(p, 0);
}

inline double stable_abs_median(double p) {
    if (p == 1.0) return 1.0;                  // |Cauchy| median = tan(pi/4)
    if (p == 2.0) return std::sqrt(2.0) * 0.6744897501960817; // stable(2) = sqrt(2) N(0,1)
    return detail::mc_cached(p, 1);
}

// -- Rademacher / JL -----------------------------------------------------

// r x n matrix with entries +-1/sqrt(r), regenerated from a keyed stream
inline Eigen::MatrixXd rademacher(Eigen::Index r, Eigen::Index n, Rng& rng,
                                  bool normalized = true) {
    const double scale = normalized ? 1.0 / std::sqrt(double(r)) : 1.0;
    Eigen::MatrixXd g(r, n);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < n; ++j) g(i, j) = scale * rng.rademacher();
    return g;
}

// ||(1/sqrt(r)) G x||_2^2, unbiased for ||x||_2^2
inline double jl_estimate_norm(const Eigen::VectorXd& x, Eigen::Index r, Rng& rng) {
    if (r < 1) throw std::invalid_argument("jl rows must be >= 1");
    double acc = 0;
    for (Eigen::Index i = 0; i < r; ++i) {
        double dot = 0;
        for (Eigen::Index j = 0; j < x.size(); ++j)
            dot += (rng.rademacher()) * x[j];
        acc += dot * dot;
    }
    return acc / double(r);
}

// -- lp norm sketch ------------------------------------------------------

// m x n p-stable rows rounded to the grid 2eps/sqrt(n); median estimator.
class LpNormSketch {
public:
    LpNormSketch(Eigen::Index n, double p, double eps, double delta, Rng& rng)
        : p_(p) {
        if (p < 1.0 || p > 2.0)
            throw std::invalid_argument("lp norm sketch needs p in [1,2]");
        const int m = int(std::ceil(6.0 / (eps * eps) *
                                    std::log(2.0 / std::min(delta, 0.5))));
        // round entries so the per-row error vector has l2 norm <= eps
        const double grid = 2.0 * eps / std::sqrt(double(std::max<Eigen::Index>(n, 1)));
        frac_bits_ = std::max(1, int(std::ceil(-std::log2(grid))));
        s_.resize(m, n);
        for (int i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                s_(i, j) = std::ldexp(double(fp::grid_round(rng.stable(p), frac_bits_)),
                                      -frac_bits_);
    }

    const Eigen::MatrixXd& matrix() const { return s_; }
    int rows() const { return int(s_.rows()); }
    int entry_frac_bits() const { return frac_bits_; }

    // estimate ||x||_p from the sketched vector s = S x
    double estimate_from(const Eigen::VectorXd& sx) const {
        std::vector<double> a(std::size_t(sx.size()));
        for (Eigen::Index i = 0; i < sx.size(); ++i) a[std::size_t(i)] = std::abs(sx[i]);
        std::nth_element(a.begin(), a.begin() + a.size() / 2, a.end());
        return a[a.size() / 2] / stable_abs_median(p_);
    }

    double estimate(const Eigen::VectorXd& x) const { return estimate_from(s_ * x); }

private:
    double p_;
    int frac_bits_;
    Eigen::MatrixXd s_;
};

// -- lp sampler ----------------------------------------------------------

// Exponential scaling z_i = x_i / E_i^{1/p} with count-sketch argmax
// recovery.  Linear in x for fixed randomness; E_i are derived from a key,
// never materialized into the sketch.
class LpSampler {
public:
    LpSampler(Eigen::Index n, double p, Rng& rng) : n_(n), p_(p) {
        if (p < 1.0 || p > 2.0) throw std::invalid_argument("lp sampler needs p in [1,2]");
        const int lg = int(std::ceil(std::log2(double(std::max<Eigen::Index>(n, 2)))));
        depth_ = std::max(7, lg + 2);
        width_ = 64;
        while (width_ < 2 * lg * lg) width_ *= 2;
        exp_key_ = rng.next_u64();
        hash_keys_.resize(depth_);
        for (int d = 0; d < depth_; ++d) hash_keys_[d] = rng.next_u64();
    }

    int depth() const { return depth_; }
    int width() const { return width_; }
    Eigen::Index input_dim() const { return n_; }

    double exp_scale(Eigen::Index i) const { // E_i^{1/p}
        Rng r(exp_key_ ^ (0x9e3779b97f4a7c15ULL * std::uint64_t(i + 1)));
        return std::pow(r.exponential(), 1.0 / p_);
    }

    // count-sketch table of D_z x, rows = depth, cols = width
    Eigen::MatrixXd sketch(const Eigen::VectorXd& x) const {
        Eigen::MatrixXd t = Eigen::MatrixXd::Zero(depth_, width_);
        for (Eigen::Index i = 0; i < n_; ++i) {
            if (x[i] == 0.0) continue;
            const double z = x[i] / exp_scale(i);
            for (int d = 0; d < depth_; ++d)
                t(d, bucket(d, i)) += sign(d, i) * z;
        }
        return t;
    }

    // median point query for index i from a table
    double point_query(const Eigen::MatrixXd& t, Eigen::Index i) const {
        std::vector<double> est(static_cast<std::size_t>(depth_));
        for (int d = 0; d < depth_; ++d)
            est[std::size_t(d)] = sign(d, i) * t(d, bucket(d, i));
        std::nth_element(est.begin(), est.begin() + est.size() / 2, est.end());
        return est[est.size() / 2];
    }

    struct Draw {
        Eigen::Index index;
        double scaled_value; // recovered z_index
    };

    Draw decode(const Eigen::MatrixXd& t) const {
        if (t.cwiseAbs().maxCoeff() == 0.0) throw zero_vector_error();
        Draw best{0, 0.0};
        for (Eigen::Index i = 0; i < n_; ++i) {
            const double v = point_query(t, i);
            if (std::abs(v) > std::abs(best.scaled_value)) best = Draw{i, v};
        }
        return best;
    }

    int bucket(int d, Eigen::Index i) const {
        std::uint64_t h = hash_keys_[std::size_t(d)] ^
                          (0xd6e8feb86659fd93ULL * std::uint64_t(i + 1));
        h ^= h >> 29;
        h *= 0xbf58476d1ce4e5b9ULL;
        h ^= h >> 32;
        return int(h & std::uint64_t(width_ - 1));
    }
    double sign(int d, Eigen::Index i) const {
        std::uint64_t h = hash_keys_[std::size_t(d)] +
                          0x94d049bb133111ebULL * std::uint64_t(i + 1);
        h ^= h >> 31;
        h *= 0xd6e8feb86659fd93ULL;
        return (h >> 63) ? 1.0 : -1.0;
    }

private:
    Eigen::Index n_;
    double p_;
    int depth_, width_;
    std::uint64_t exp_key_;
    std::vector<std::uint64_t> hash_keys_;
};

struct LpSampleResult {
    Eigen::Index index;
    double prob_estimate;
};

// sample index i with probability ~ |x_i|^p / ||x||_p^p, plus a (1 +- nu)
// estimate of that probability
inline LpSampleResult lp_sample(const Eigen::VectorXd& x, double p, double nu,
                                Rng& rng) {
    if (x.size() == 0 || x.cwiseAbs().maxCoeff() == 0.0) throw zero_vector_error();
    LpSampler sampler(x.size(), p, rng);
    LpNormSketch norm(x.size(), p, nu, 0.05, rng);
    const auto draw = sampler.decode(sampler.sketch(x));
    const double xk = std::abs(draw.scaled_value) * sampler.exp_scale(draw.index);
    const double nrm = norm.estimate(x);
    const double prob = std::pow(xk / nrm, p);
    return LpSampleResult{draw.index, prob};
}

// -- distributed primitives ----------------------------------------------

// wire precision for sketch payloads (adaptive dyadic grid mantissa)
constexpr int kSketchMantissaBits = 24;

// Coordinator-side estimate of ||X M||_{p,2}^p where the server holds X and
// the coordinator holds M.  The server ships one lp norm sketch of X; the
// coordinator pushes r Gaussian probes through it.
inline double lp2_norm_estimate(Network& net, int machine, const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& m, double p, double eps,
                                double delta, const std::string& tag = "lp2norm") {
    const Eigen::Index n = x.rows();
    const int r = int(std::ceil(4.0 / (eps * eps) *
                                (std::log(std::max<double>(double(n), 2.0)) +
                                 std::log(1.0 / std::min(delta, 0.5)))));
    // per-probe failures average out in the sum; a flat probe failure rate
    // keeps the sketch small
    Rng server_rng = net.stream(tag + "/sketch", machine);
    LpNormSketch sk(n, p, eps / 2.0, std::max(delta, 0.02), server_rng);

    // server -> coordinator: the sketched block S X
    const auto msg = Message::matrix_adaptive(tag + "/SX", sk.matrix() * x,
                                              kSketchMantissaBits);
    net.send_to_coord(machine, msg);
    const Eigen::MatrixXd sx = msg.as_matrix();

    Rng probe = net.stream(tag + "/probe", machine);
    const double cp = cp_constant(p);
    double acc = 0;
    for (int j = 0; j < r; ++j) {
        Eigen::VectorXd g(m.cols());
        for (Eigen::Index i = 0; i < g.size(); ++i)
            g[i] = std::pow(cp, 1.0 / p) * probe.gaussian();
        acc += std::pow(sk.estimate_from(sx * (m * g)), p);
    }
    return acc / r;
}

struct BlockSample {
    Eigen::Index row_index;   // row of X, coordinator side
    Eigen::VectorXd row;      // the row as received over the channel
    double prob_estimate;     // (1 +- eps) estimate of the sampling probability
};

// SampleFromBlock: sample row i of the server matrix X with probability
// ~ ||e_i^T X M||_2^p / ||X M||_{p,2}^p via the Kronecker lift X (x) I_r and
// a Gaussian probe on the coordinator side.  `row_L` is the fixed-point
// width used when the server ships the requested row.
inline BlockSample sample_from_block(Network& net, int machine,
                                     const Eigen::MatrixXd& x,
                                     const Eigen::MatrixXd& m, double p,
                                     double eps, double delta, int row_L,
                                     const std::string& tag = "sfb",
                                     bool estimate_prob = true) {
    const Eigen::Index n = x.rows(), d = x.cols();
    if ((x * m).cwiseAbs().maxCoeff() == 0.0) throw zero_product_error();
    const int r = std::max(1, int(std::ceil(
                               1.0 / (eps * eps) *
                               (std::log(std::max<double>(double(n), 2.0)) +
                                std::log(1.0 / std::min(delta, 0.5))))));

    // server draws the lp sampling sketch for the lifted matrix X (x) I_r;
    // lifted row (i,j) carries the d nonzeros of row i at column slots c*r+j
    Rng server_rng = net.stream(tag + "/sampler", machine);
    LpSampler sampler(n * r, p, server_rng);
    Eigen::MatrixXd flat = Eigen::MatrixXd::Zero(
        Eigen::Index(sampler.depth()) * sampler.width(), d * r);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int j = 0; j < r; ++j) {
            const Eigen::Index lifted = i * Eigen::Index(r) + j;
            const double zscale = 1.0 / sampler.exp_scale(lifted);
            for (int dep = 0; dep < sampler.depth(); ++dep) {
                const Eigen::Index row =
                    Eigen::Index(dep) * sampler.width() + sampler.bucket(dep, lifted);
                const double sgn = sampler.sign(dep, lifted) * zscale;
                for (Eigen::Index c = 0; c < d; ++c)
                    flat(row, c * r + j) += sgn * x(i, c);
            }
        }

    // server -> coordinator: the sketched lifted block
    const auto sk_msg =
        Message::matrix_adaptive(tag + "/SX", flat, kSketchMantissaBits);
    net.send_to_coord(machine, sk_msg);
    const Eigen::MatrixXd& sx = sk_msg.as_matrix();

    // coordinator probes with g ~ c_p^{1/p} N(0, I_{rd}); M' g has entry
    // (c,j) = sum_c' M(c,c') g(c'*r + j)
    Rng probe = net.stream(tag + "/g", machine);
    const double cp_pow = std::pow(cp_constant(p), 1.0 / p);
    Eigen::VectorXd g(d * r);
    for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = cp_pow * probe.gaussian();
    Eigen::VectorXd mg = Eigen::VectorXd::Zero(d * r);
    for (Eigen::Index c = 0; c < d; ++c)
        for (int j = 0; j < r; ++j) {
            double acc = 0;
            for (Eigen::Index c2 = 0; c2 < d; ++c2)
                acc += m(c, c2) * g[c2 * r + j];
            mg[c * r + j] = acc;
        }

    const Eigen::VectorXd bucketed = sx * mg; // per (depth,bucket) sums
    Eigen::MatrixXd table(sampler.depth(), sampler.width());
    for (int dep = 0; dep < sampler.depth(); ++dep)
        for (int w = 0; w < sampler.width(); ++w)
            table(dep, w) = bucketed[Eigen::Index(dep) * sampler.width() + w];

    const auto draw = sampler.decode(table);
    const Eigen::Index row_idx = draw.index / r;

    // coordinator requests the row; server ships it at input precision
    net.send_to_machine(machine, Message::varint(tag + "/req", std::uint64_t(row_idx)));
    const auto row_msg =
        Message::vector(tag + "/row", x.row(row_idx).transpose(), row_L);
    net.send_to_coord(machine, row_msg);
    const Eigen::VectorXd row = row_msg.as_vector();

    // probability estimate: exact numerator from the received row, sketched
    // denominator from the lp,2 norm protocol
    if (!estimate_prob) return BlockSample{row_idx, row, 0.0};
    const double num = std::pow((m.transpose() * row).norm(), p);
    const double den =
        lp2_norm_estimate(net, machine, x, m, p, eps, delta, tag + "/den");
    return BlockSample{row_idx, row, num / den};
}

} // namespace commopt::sketch
