#pragma once

// High-accuracy linear programming in the coordinator model: the modified
// feasible-start LP, regularized-Lewis-weight warm start, a weighted-path
// interior point loop with potential-guided correction steps, and
// leverage-triggered inverse maintenance for the KKT solves.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "instance.hpp"
#include "leverage.hpp"
#include "message.hpp"
#include "network.hpp"
#include "presets.hpp"

namespace commopt::lp {

struct guard_violated : std::runtime_error {
    explicit guard_violated(const std::string& w) : std::runtime_error(w) {}
};
struct positivity_loss : std::runtime_error {
    explicit positivity_loss(const std::string& w) : std::runtime_error(w) {}
};
struct infeasible_detected : std::runtime_error {
    explicit infeasible_detected(const std::string& w) : std::runtime_error(w) {}
};
struct ipm_stall : std::runtime_error {
    explicit ipm_stall(const std::string& w) : std::runtime_error(w) {}
};

struct LpInstance {
    RowPartitionedMatrix a; // n x d
    Eigen::VectorXd b;      // d, known everywhere
    RowPartitionedVector c; // n, partitioned with the rows
    double outer_radius = 1.0;
    double inner_radius = 0.0;
    double kappa = 1.0;
};

// The modified LP of the feasible-start construction.  Row n is the
// ||A||_F column row, row n+1 the (1/R) b^T - 1^T A row; both synthetic
// rows live on machine 0 after the assembly broadcast.
struct ModifiedLp {
    Eigen::MatrixXd abar;  // (n+2) x (d+1), dense view
    Eigen::VectorXd bbar;  // d+1
    Eigen::VectorXd cbar;  // n+2
    double a_fro = 0.0;
    double eps = 0.0;
    Eigen::Index n = 0;
    int d = 0;
    int s = 1;
    std::vector<Eigen::Index> part; // machine row counts within [0, n)

    Eigen::Index nbar() const { return n + 2; }
    int dbar() const { return d + 1; }

    // machine owning a modified row; the two synthetic rows sit on machine 0
    int owner(Eigen::Index row) const {
        if (row >= n) return 0;
        for (int i = 0; i < s; ++i) {
            if (row < part[std::size_t(i)]) return i;
            row -= part[std::size_t(i)];
        }
        return s - 1;
    }
};

// exact block assembly of Def. "modified LP"; the Frobenius norm and the
// column sums are aggregated over the channel first
inline ModifiedLp build_modified_lp(Network& net, const LpInstance& inst, double eps) {
    if (inst.outer_radius <= 0) throw std::invalid_argument("outer radius must be > 0");
    const Eigen::VectorXd cs = inst.c.stacked();
    if (cs.norm() == 0) throw std::invalid_argument("zero objective");
    const int d = inst.a.d, s = inst.a.s();
    const Eigen::Index n = inst.a.rows();

    // machines report ||A^(i)||_F^2 and 1^T A^(i); totals are broadcast
    double fro2 = 0;
    Eigen::VectorXd colsum = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < s; ++i) {
        const auto fmsg = Message::scalar_wide(
            "mlp/fro", inst.a.blocks[std::size_t(i)].squaredNorm(),
            2 * inst.a.L + int(std::ceil(std::log2(double(n) * d + 2))), 2 * inst.a.L);
        net.send_to_coord(i, fmsg);
        fro2 += fmsg.as_scalar();
        const auto cmsg = Message::vector_on_grid(
            "mlp/colsum", inst.a.blocks[std::size_t(i)].colwise().sum().transpose(),
            -inst.a.L);
        net.send_to_coord(i, cmsg);
        colsum += cmsg.as_vector();
    }
    net.broadcast(Message::scalar_wide(
        "mlp/fro_total", fro2,
        2 * inst.a.L + int(std::ceil(std::log2(double(n) * d + 2))), 2 * inst.a.L));
    net.broadcast(Message::vector_on_grid("mlp/colsum_total", colsum, -inst.a.L));
    net.round_barrier();

    ModifiedLp m;
    m.n = n;
    m.d = d;
    m.s = s;
    m.part = inst.a.partition();
    m.eps = eps;
    m.a_fro = std::sqrt(fro2);

    m.abar = Eigen::MatrixXd::Zero(n + 2, d + 1);
    m.abar.topLeftCorner(n, d) = inst.a.stacked();
    m.abar.col(d).head(n).setConstant(m.a_fro);
    m.abar(n, d) = m.a_fro;
    m.abar.row(n + 1).head(d) =
        (inst.b / inst.outer_radius - colsum).transpose();

    m.bbar.resize(d + 1);
    m.bbar.head(d) = inst.b / inst.outer_radius;
    m.bbar[d] = double(n + 1) * m.a_fro;

    m.cbar.resize(n + 2);
    m.cbar.head(n) = (eps / cs.norm()) * cs;
    m.cbar[n] = 0.0;
    m.cbar[n + 1] = 1.0;
    return m;
}

struct InitialPoint {
    Eigen::VectorXd x, y, s;
};

// feasible primal/dual start; the last dual coordinate is -1/||A||_F so
// that dual feasibility holds exactly for unnormalized inputs
inline InitialPoint initial_point(const ModifiedLp& m) {
    const Eigen::Index nb = m.nbar();
    InitialPoint p;
    p.x = Eigen::VectorXd::Ones(nb);
    p.y = Eigen::VectorXd::Zero(m.dbar());
    p.y[m.d] = -1.0 / m.a_fro;
    p.s = m.cbar - m.abar * p.y;
    if ((p.s.array() <= 0).any())
        throw guard_violated("initial slack not positive: eps >= ||c||_2 / ||c||_inf");
    return p;
}

// -- IPM parameters ----------------------------------------------------------

struct IpmParams {
    double alpha, lambda, gamma, eps_hat;
    double paper_lambda, paper_gamma; // the printed outer-solver constants
    double mu_shrink;                 // per-step rate toward mu_final
    double phi_term;                  // termination potential bound

    IpmParams(Eigen::Index nbar, int dbar, const Preset& preset) {
        const double n = double(nbar), d = double(dbar);
        eps_hat = 0.1;
        alpha = 1.0 / (4.0 * std::log(4.0 * n / d));
        const double big = std::ldexp(1.0, 16) * n * std::sqrt(d) / (alpha * alpha);
        paper_lambda = alpha / 32000.0 * std::log(big);
        paper_gamma = std::min(alpha / 64000.0, alpha / (50.0 * paper_lambda));
        if (!std::isfinite(preset.ipm_gamma_cap)) { // paper preset
            lambda = paper_lambda;
            gamma = paper_gamma;
            mu_shrink = gamma * alpha / (std::ldexp(1.0, 15) * std::sqrt(d));
            phi_term = big;
        } else {
            // desk: a self-consistent (lambda, gamma, rate) triple; the
            // termination band stays inside the printed Phi bound
            lambda = 40.0;
            gamma = std::min({eps_hat / 4.0, 1.0 / (2.0 * lambda),
                              preset.ipm_gamma_cap});
            mu_shrink = 1.0 / (2.0 * lambda);
            phi_term = std::min(2.0 * n * std::exp(lambda * eps_hat / 4.0), big);
        }
    }
};

// overflow-safe potential and gradient
inline double phi_of(const Eigen::VectorXd& v, double lambda) {
    double acc = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double t = std::min(700.0, lambda * std::abs(v[i] - 1.0));
        acc += std::exp(t) + std::exp(-t);
    }
    return acc;
}

inline Eigen::VectorXd phi_grad(const Eigen::VectorXd& v, double lambda) {
    Eigen::VectorXd g(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double t = lambda * (v[i] - 1.0);
        const double tc = std::max(-700.0, std::min(700.0, t));
        g[i] = lambda * (std::exp(tc) - std::exp(-tc));
    }
    return g;
}

// -- warm start: regularized Lewis weights over metered channels -------------

// s-hat with s-hat ~ sigma(S^{-1/2-alpha} Abar) + (dbar/nbar) 1, i.e. the
// p = 1/(1+alpha) regularized Lewis fixed point.  Each iteration's quadratic
// form crosses the channel as aggregated Gram blocks (desk route).
inline Eigen::VectorXd warm_start_weights(Network& net, const ModifiedLp& m,
                                          double alpha, double eps_hat,
                                          int* iters_out = nullptr) {
    const double p = 1.0 / (1.0 + alpha);
    const Eigen::Index nb = m.nbar();
    const int db = m.dbar();
    const double eta = double(db) / double(nb);
    const double slack = std::pow(eta, 2.0 / p) / double(nb * nb);
    const int max_iters =
        2 * lev::lewis_predicted_iters(p, eta, p * eps_hat / 2.0, nb);

    Eigen::VectorXd w = Eigen::VectorXd::Constant(nb, eta);
    int it = 0;
    for (; it < max_iters; ++it) {
        // machines aggregate their weighted Gram parts; machine 0 also owns
        // the two synthetic rows
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(db, db);
        Eigen::Index row0 = 0;
        for (int i = 0; i < m.s; ++i) {
            const Eigen::Index cnt =
                m.part[std::size_t(i)] + (i == 0 ? 2 : 0);
            Eigen::MatrixXd part = Eigen::MatrixXd::Zero(db, db);
            for (Eigen::Index k = 0; k < m.part[std::size_t(i)]; ++k) {
                const Eigen::VectorXd row = m.abar.row(row0 + k).transpose();
                part += std::pow(w[row0 + k], 1.0 - 2.0 / p) * row * row.transpose();
            }
            if (i == 0)
                for (Eigen::Index k = m.n; k < nb; ++k) {
                    const Eigen::VectorXd row = m.abar.row(k).transpose();
                    part += std::pow(w[k], 1.0 - 2.0 / p) * row * row.transpose();
                }
            const auto msg = Message::matrix_adaptive("warm/gram", part, 40);
            net.send_to_coord(i, msg);
            h += msg.as_matrix();
            row0 += m.part[std::size_t(i)];
            (void)cnt;
        }
        const Eigen::MatrixXd hinv = lev::Pinv(h).inv;
        const auto hmsg = Message::matrix_adaptive("warm/hinv", hinv, 40);
        net.broadcast(hmsg);
        net.round_barrier();

        // machine-side fixed point map with the additive slack
        const Eigen::MatrixXd& hi = hmsg.as_matrix();
        Eigen::VectorXd next(nb);
        double gap = 0;
        for (Eigen::Index i = 0; i < nb; ++i) {
            const Eigen::VectorXd row = m.abar.row(i).transpose();
            const double q = row.dot(hi * row) + slack;
            next[i] = std::pow(q + eta * std::pow(w[i], 2.0 / p - 1.0), p / 2.0);
            gap = std::max(gap, std::abs(std::log(next[i] / w[i])));
        }
        w = next;
        if (gap <= p * eps_hat / 2.0) break;
    }
    if (iters_out) *iters_out = it + 1;
    return w;
}

// -- inverse maintenance -------------------------------------------------------

class InverseMaintainer {
public:
    InverseMaintainer(const Eigen::MatrixXd& abar, double gamma_im)
        : abar_(abar), gamma_im_(gamma_im) {}

    // (re)initialize from scratch at the given diagonal and scores
    void reset(const Eigen::VectorXd& dvec, const Eigen::VectorXd& sigma, Rng& rng) {
        d_old_ = dvec;
        sigma_old_ = sigma;
        h_ = Eigen::VectorXd::Zero(dvec.size());
        for (Eigen::Index i = 0; i < dvec.size(); ++i) sample_row(i, dvec, sigma, rng);
        refactor();
    }

    // drift-triggered resampling; returns the rows whose h changed
    std::vector<Eigen::Index> update(const Eigen::VectorXd& dvec,
                                     const Eigen::VectorXd& sigma, Rng& rng) {
        std::vector<Eigen::Index> changed;
        for (Eigen::Index i = 0; i < dvec.size(); ++i) {
            const bool d_trip =
                std::abs(dvec[i] - d_old_[i]) > 0.1 * std::abs(d_old_[i]);
            const bool s_trip =
                std::abs(sigma[i] - sigma_old_[i]) > 0.1 * std::abs(sigma_old_[i]);
            if (d_trip || s_trip) {
                d_old_[i] = dvec[i];
                sigma_old_[i] = sigma[i];
                const double before = h_[i];
                sample_row(i, dvec, sigma, rng);
                if (h_[i] != before) changed.push_back(i);
                ++resamples_;
            }
        }
        if (!changed.empty()) refactor();
        return changed;
    }

    const Eigen::MatrixXd& k() const { return k_; }
    const Eigen::VectorXd& h() const { return h_; }
    std::uint64_t resamples() const { return resamples_; }

private:
    void sample_row(Eigen::Index i, const Eigen::VectorXd& dvec,
                    const Eigen::VectorXd& sigma, Rng& rng) {
        const double pr = std::min(1.0, gamma_im_ * std::max(sigma[i], 0.0));
        h_[i] = (pr > 0 && rng.uniform() < pr) ? dvec[i] / pr : 0.0;
    }

    void refactor() {
        k_ = lev::Pinv(abar_.transpose() * h_.asDiagonal() * abar_).inv;
    }

    Eigen::MatrixXd abar_;
    double gamma_im_;
    Eigen::VectorXd d_old_, sigma_old_, h_;
    Eigen::MatrixXd k_;
    std::uint64_t resamples_ = 0;
};

// -- the IPM loop ---------------------------------------------------------------

struct IpmState {
    Eigen::VectorXd x, y, s, tau;
    double mu = 1.0;
};

struct IpmReport {
    std::uint64_t steps = 0;
    std::uint64_t corrections = 0;
    std::uint64_t resamples = 0;
    std::uint64_t positivity_rejections = 0;
    double max_kkt_violation = 0.0;
    double max_e1 = 0.0, max_e2 = 0.0, max_e3 = 0.0;
    double dbg_dx_norm = 0.0, dbg_dmu_norm = 0.0;
    std::uint64_t bits = 0;
};

struct IpmHooks { // test observability, all optional
    bool check_kkt = true;
    bool check_mu_schedule = true;
};

namespace detail {

// wire width for IPM vectors per the L + log(kappa R / (r eps)) rule
inline int ipm_wire_mantissa(const LpInstance& inst, int L, double eps) {
    const double r = std::max(inst.inner_radius, 1e-6);
    const int bits =
        L + int(std::ceil(std::log2(std::max(2.0, inst.kappa * inst.outer_radius /
                                                      (r * eps)))));
    return std::max(24, std::min(52, bits));
}

} // namespace detail

// One full ipm run between mu levels (both directions).  x, s, tau are
// machine state; the coordinator holds the maintained inverse.
inline IpmReport ipm(Network& net, const ModifiedLp& m, const LpInstance& inst,
                     const Eigen::VectorXd& cbar, IpmState& st, double mu_final,
                     const IpmParams& prm, const Preset& preset,
                     const IpmHooks& hooks = {}, const std::string& tag = "ipm") {
    const Eigen::Index nb = m.nbar();
    const int db = m.dbar();
    const std::uint64_t bits0 = net.ledger().total();
    const int wire = detail::ipm_wire_mantissa(inst, inst.a.L, prm.eps_hat);
    const double gamma_im =
        preset.im_gamma_factor * std::log(std::max(double(db), 2.0));

    IpmReport rep;
    auto dvec_of = [&](void) {
        return Eigen::VectorXd((st.x.array() / st.s.array()).matrix());
    };
    auto dtau_of = [&](void) {
        Eigen::VectorXd d(nb);
        for (Eigen::Index i = 0; i < nb; ++i)
            d[i] = std::pow(st.x[i], 1.0 - 2.0 * prm.alpha) *
                   std::pow(st.s[i], -1.0 - 2.0 * prm.alpha);
        return d;
    };

    // exact tau refresh through the Gram channel: machines send weighted Gram
    // parts, the coordinator returns the inverse form
    auto refresh_tau = [&](const std::string& subtag) {
        const Eigen::VectorXd dt = dtau_of();
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(db, db);
        Eigen::Index row0 = 0;
        for (int i = 0; i < m.s; ++i) {
            Eigen::MatrixXd part = Eigen::MatrixXd::Zero(db, db);
            for (Eigen::Index k = 0; k < m.part[std::size_t(i)]; ++k) {
                const Eigen::VectorXd row = m.abar.row(row0 + k).transpose();
                part += dt[row0 + k] * row * row.transpose();
            }
            if (i == 0)
                for (Eigen::Index k = m.n; k < nb; ++k)
                    part += dt[k] * m.abar.row(k).transpose() * m.abar.row(k);
            const auto msg = Message::matrix_adaptive(subtag + "/gram", part, 40);
            net.send_to_coord(i, msg);
            h += msg.as_matrix();
            row0 += m.part[std::size_t(i)];
        }
        const auto hmsg =
            Message::matrix_adaptive(subtag + "/hinv", lev::Pinv(h).inv, 40);
        net.broadcast(hmsg);
        const Eigen::MatrixXd& hi = hmsg.as_matrix();
        for (Eigen::Index i = 0; i < nb; ++i) {
            const Eigen::VectorXd row = m.abar.row(i).transpose();
            st.tau[i] = dt[i] * row.dot(hi * row) + double(db) / double(nb);
        }
    };

    // inverse maintenance over the KKT diagonal x/s
    Rng im_rng = net.stream(tag + "/im");
    InverseMaintainer im(m.abar, gamma_im);
    {
        refresh_tau(tag + "/tau0");
        const Eigen::VectorXd dv = dvec_of();
        const Eigen::VectorXd sg =
            (st.tau.array() - double(db) / double(nb)).matrix(); // sigma estimate
        im.reset(dv, sg, im_rng);
        // sampled rows cross the channel once
        for (Eigen::Index i = 0; i < nb; ++i)
            if (im.h()[i] != 0.0)
                net.send_to_coord(m.owner(i),
                                  Message::vector_adaptive(tag + "/imrow",
                                                           m.abar.row(i).transpose(),
                                                           wire));
        net.round_barrier();
    }

    // one metered matvec round: machines return their parts of Abar^T D Abar z
    auto matvec_round = [&](const Eigen::VectorXd& zz, const Eigen::VectorXd& dv,
                            const std::string& subtag) {
        Eigen::VectorXd hz = Eigen::VectorXd::Zero(db);
        Eigen::Index row0 = 0;
        for (int i = 0; i < m.s; ++i) {
            Eigen::VectorXd part = Eigen::VectorXd::Zero(db);
            for (Eigen::Index k = 0; k < m.part[std::size_t(i)]; ++k) {
                const Eigen::VectorXd row = m.abar.row(row0 + k).transpose();
                part += dv[row0 + k] * row.dot(zz) * row;
            }
            if (i == 0)
                for (Eigen::Index k = m.n; k < nb; ++k) {
                    const Eigen::VectorXd row = m.abar.row(k).transpose();
                    part += dv[k] * row.dot(zz) * row;
                }
            const auto pmsg = Message::vector_adaptive(subtag + "/hz", part, 52);
            net.send_to_coord(i, pmsg);
            hz += pmsg.as_vector();
            row0 += m.part[std::size_t(i)];
        }
        return hz;
    };

    // preconditioned Richardson solve of (Abar^T D Abar) z = g over metered
    // rounds; the returned broadcast width is widened until the residual at
    // the quantized point meets the identity tolerance
    struct KktSolution {
        Eigen::VectorXd z; // as received by the machines
    };
    auto kkt_solve = [&](const Eigen::VectorXd& g, const Eigen::VectorXd& dv,
                         const std::string& subtag) {
        Eigen::VectorXd z = im.k() * g;
        const double gnorm = g.norm() + 1e-300;
        double hnorm_est = 1.0;
        for (int t = 0; t < 200; ++t) {
            const auto zmsg = Message::vector_adaptive(subtag + "/z", z, wire);
            net.broadcast(zmsg);
            const Eigen::VectorXd hz = matvec_round(zmsg.as_vector(), dv, subtag);
            hnorm_est = std::max(hnorm_est, hz.norm() / (z.norm() + 1e-300));
            const Eigen::VectorXd resid = g - hz;
            if (resid.norm() <= 1e-10 * gnorm) break;
            z += im.k() * resid;
        }
        // final broadcast: quantize so that ||H (z - zz)|| stays below the
        // identity tolerance, verified with one extra round
        int mant = wire;
        for (int t = 0; t < 6; ++t) {
            const double quantum = std::ldexp(z.cwiseAbs().maxCoeff() + 1e-300, -mant);
            if (hnorm_est * quantum * std::sqrt(double(db)) <= 1e-10 * gnorm || mant >= 52)
                break;
            mant = std::min(52, mant + 10);
        }
        const auto fmsg = Message::vector_adaptive(subtag + "/zfin", z, mant);
        net.broadcast(fmsg);
        return KktSolution{fmsg.as_vector()};
    };

    Eigen::VectorXd x_tmp = st.x, s_tmp = st.s;

    const bool shrinking = st.mu > mu_final;
    int corrections_at_mu = 0;
    for (std::uint64_t step = 0; step < preset.ipm_max_steps; ++step) {
        const Eigen::VectorXd w = st.x.cwiseProduct(st.s);
        const Eigen::VectorXd v = (st.mu * st.tau.array() / w.array()).matrix();
        const double phi = phi_of(v, prm.lambda);
        const bool centered = phi <= prm.phi_term;

        if (centered && st.mu == mu_final) break;

        if (centered) {
            // mu moves only when the potential is inside the termination band
            const double next =
                shrinking ? std::max(mu_final, (1.0 - prm.mu_shrink) * st.mu)
                          : std::min(mu_final, (1.0 + prm.mu_shrink) * st.mu);
            if (hooks.check_mu_schedule && shrinking) {
                const double expect =
                    std::max(mu_final, (1.0 - prm.mu_shrink) * st.mu);
                if (next != expect) throw std::logic_error("mu schedule violated");
            }
            st.mu = next;
            ++rep.steps;
            corrections_at_mu = 0;
            continue;
        }

        if (++corrections_at_mu > 400)
            throw ipm_stall("correction limit at mu = " + std::to_string(st.mu));
        ++rep.corrections;

        // potential-guided target shift: machines send local grad norms and
        // potential parts; the coordinator returns the totals
        const Eigen::VectorXd grad = phi_grad(v, prm.lambda);
        double gnorm2 = 0;
        {
            Eigen::Index row0 = 0;
            for (int i = 0; i < m.s; ++i) {
                Eigen::Index cnt = m.part[std::size_t(i)] + (i == 0 ? 2 : 0);
                double local = grad.segment(row0, m.part[std::size_t(i)]).squaredNorm();
                if (i == 0) local += grad.tail(2).squaredNorm();
                const auto msg =
                    Message::scalar_wide(tag + "/gn2", std::min(local, 1e290), 52, 8);
                net.send_to_coord(i, msg);
                gnorm2 += msg.as_scalar();
                row0 += m.part[std::size_t(i)];
                (void)cnt;
            }
            net.broadcast(Message::scalar_wide(tag + "/gn2t", std::min(gnorm2, 1e290),
                                               52, 8));
        }
        const double gnorm = std::sqrt(gnorm2) + 1e-300;
        // descent in w-space for v = mu tau / w
        Eigen::VectorXd delta_mu =
            (prm.gamma / gnorm) * w.cwiseProduct(grad);

        double damp = 1.0;
        for (int attempt = 0;; ++attempt) {
            const Eigen::VectorXd dmu = damp * delta_mu;
            // machines send Abar^(i)T S^(i)-1 dmu^(i)
            const Eigen::VectorXd sinv_dmu = dmu.cwiseQuotient(st.s);
            Eigen::VectorXd g = Eigen::VectorXd::Zero(db);
            Eigen::Index row0 = 0;
            for (int i = 0; i < m.s; ++i) {
                Eigen::VectorXd part =
                    m.abar.middleRows(row0, m.part[std::size_t(i)]).transpose() *
                    sinv_dmu.segment(row0, m.part[std::size_t(i)]);
                if (i == 0)
                    part += m.abar.bottomRows(2).transpose() * sinv_dmu.tail(2);
                const auto msg = Message::vector_adaptive(tag + "/g", part, 52);
                net.send_to_coord(i, msg);
                g += msg.as_vector();
                row0 += m.part[std::size_t(i)];
            }

            const Eigen::VectorXd dv = dvec_of();
            const Eigen::VectorXd zz = kkt_solve(g, dv, tag + "/solve").z;

            const Eigen::VectorXd delta_s = m.abar * zz;
            const Eigen::VectorXd delta_x =
                (dmu - st.x.cwiseProduct(delta_s)).cwiseQuotient(st.s);

            if (((st.x + delta_x).array() <= 0).any() ||
                ((st.s + delta_s).array() <= 0).any()) {
                ++rep.positivity_rejections;
                if (attempt >= 12)
                    throw positivity_loss("step rejected at mu = " +
                                          std::to_string(st.mu));
                damp *= 0.5;
                continue;
            }

            if (hooks.check_kkt) {
                const double e1 = (st.x.cwiseProduct(delta_s) +
                                   st.s.cwiseProduct(delta_x) - dmu)
                                      .norm() /
                                  (dmu.norm() + 1e-300);
                const double e2 =
                    (m.abar.transpose() * delta_x).norm() /
                    (m.abar.norm() *
                         (delta_x.norm() + dmu.cwiseQuotient(st.s).norm()) +
                     1e-300);
                const double e3 = (m.abar * (-zz) + delta_s).norm() /
                                  (delta_s.norm() + 1e-300);
                rep.max_kkt_violation =
                    std::max({rep.max_kkt_violation, e1, e2, e3});
                if (e2 > rep.max_e2) {
                    rep.dbg_dx_norm = delta_x.norm();
                    rep.dbg_dmu_norm = dmu.norm();
                }
                rep.max_e1 = std::max(rep.max_e1, e1);
                rep.max_e2 = std::max(rep.max_e2, e2);
                rep.max_e3 = std::max(rep.max_e3, e3);
            }

            st.x += delta_x;
            st.s += delta_s;
            st.y -= zz;
            break;
        }
        net.round_barrier();

        // lazy snapshots with gamma/8 bands drive the weight refresh and the
        // inverse maintenance triggers
        bool tripped = false;
        for (Eigen::Index i = 0; i < nb; ++i) {
            if (std::abs(std::log(st.x[i] / x_tmp[i])) > prm.gamma / 8.0 ||
                std::abs(std::log(st.s[i] / s_tmp[i])) > prm.gamma / 8.0) {
                x_tmp[i] = st.x[i];
                s_tmp[i] = st.s[i];
                tripped = true;
            }
        }
        if (tripped) {
            refresh_tau(tag + "/tau" + std::to_string(step));
            const Eigen::VectorXd sg =
                (st.tau.array() - double(db) / double(nb)).matrix();
            const auto changed = im.update(dvec_of(), sg, im_rng);
            for (const auto i : changed)
                net.send_to_coord(m.owner(i),
                                  Message::vector_adaptive(tag + "/imrow",
                                                           m.abar.row(i).transpose(),
                                                           wire));
        }
        ++rep.steps;
    }

    rep.resamples = im.resamples();
    rep.bits = net.ledger().total() - bits0;
    return rep;
}

// -- end-to-end solver ---------------------------------------------------------

struct LpReport {
    double objective = 0.0;
    double primal_residual = 0.0;
    Eigen::VectorXd x;
    IpmReport phase1, phase2;
    std::uint64_t bits_warm_start = 0;
    std::uint64_t bits_total = 0;
    double kkt_violation = 0.0;
};

inline LpReport ipm_solve(Network& net, const LpInstance& inst, double eps,
                          const Preset& preset, const IpmHooks& hooks = {}) {
    const std::uint64_t bits0 = net.ledger().total();
    const auto m = build_modified_lp(net, inst, eps);
    const IpmParams prm(m.nbar(), m.dbar(), preset);

    const auto init = initial_point(m);

    // phase 0: warm-start weights; c-hat = s-hat puts (1, 0, s-hat) exactly
    // on the weighted path at mu = 1
    const std::uint64_t bits_ws0 = net.ledger().total();
    const Eigen::VectorXd shat =
        warm_start_weights(net, m, prm.alpha, prm.eps_hat);
    const std::uint64_t bits_ws = net.ledger().total() - bits_ws0;

    IpmState st;
    st.x = init.x;
    st.y = Eigen::VectorXd::Zero(m.dbar());
    st.s = shat;
    st.tau = shat;
    st.mu = 1.0;

    // phase 1: raise mu with the surrogate objective until the objective
    // swap becomes a negligible relative slack shift
    const Eigen::VectorXd chat = shat;
    double mu1 = 64.0 * double(m.nbar()) * double(m.nbar()) *
                 std::sqrt(double(m.dbar())) / (prm.gamma * prm.alpha * prm.alpha);
    IpmReport rep1;
    for (int tries = 0;; ++tries) {
        rep1 = ipm(net, m, inst, chat, st, mu1, prm, preset, hooks, "ipm1");
        const Eigen::VectorXd shift = m.cbar - chat;
        const double rel = (shift.cwiseAbs().cwiseQuotient(st.s)).maxCoeff();
        if (rel <= prm.gamma / 8.0 || tries >= 4) break;
        mu1 *= 16.0;
    }

    // swap to the true objective; the slack shift keeps dual feasibility
    st.s += m.cbar - chat;
    if ((st.s.array() <= 0).any())
        throw infeasible_detected("slack went nonpositive at the objective swap");

    // phase 2: descend to the final centrality
    const double mu2 = eps * eps /
                       (512.0 * std::pow(double(m.nbar()), 4) * double(m.dbar()));
    const auto rep2 = ipm(net, m, inst, m.cbar, st, mu2, prm, preset, hooks, "ipm2");

    LpReport out;
    out.x = inst.outer_radius * st.x.head(m.n);
    const Eigen::MatrixXd a = inst.a.stacked();
    out.objective = inst.c.stacked().dot(out.x);
    out.primal_residual = (a.transpose() * out.x - inst.b).norm();
    out.phase1 = rep1;
    out.phase2 = rep2;
    out.bits_warm_start = bits_ws;
    out.bits_total = net.ledger().total() - bits0;
    out.kkt_violation = std::max(rep1.max_kkt_violation, rep2.max_kkt_violation);

    const double bound =
        eps * (m.a_fro * inst.outer_radius + inst.b.norm());
    if (out.primal_residual > std::max(1.0, 8.0) * bound)
        throw infeasible_detected("final primal residual " +
                                  std::to_string(out.primal_residual) +
                                  " exceeds the feasibility bound");
    return out;
}

} // namespace commopt::lp
