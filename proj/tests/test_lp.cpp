#include <catch2/catch_amalgamated.hpp>

#include <commopt/lp.hpp>
#include <commopt/smalllp.hpp>

using namespace commopt;
using Catch::Approx;

namespace {

lp::LpInstance toy_instance() {
    // min x1 + x2  st  x1 + x2 = 1, x >= 0
    lp::LpInstance inst;
    Eigen::MatrixXd a(2, 1);
    a << 1, 1;
    inst.a = RowPartitionedMatrix::from_dense(a, {1, 1}, 8);
    inst.b = Eigen::VectorXd::Ones(1);
    Eigen::VectorXd c(2);
    c << 1, 1;
    inst.c = RowPartitionedVector::from_dense(c, inst.a.partition());
    inst.outer_radius = 1.0;
    inst.inner_radius = 0.25;
    inst.kappa = 1.0;
    return inst;
}

// random feasible standard-form LP with a planted interior point
lp::LpInstance random_feasible(Eigen::Index n, int d, int s, int L, Rng& rng) {
    lp::LpInstance inst;
    Eigen::MatrixXd a(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = fp::encode(rng.uniform(-2, 2), L).value();
    std::vector<Eigen::Index> part(std::size_t(s), n / s);
    part.back() += n % s;
    inst.a = RowPartitionedMatrix::from_dense(a, part, L);
    Eigen::VectorXd xf(n);
    for (Eigen::Index i = 0; i < n; ++i) xf[i] = rng.uniform(0.2, 1.0);
    inst.b = a.transpose() * xf;
    Eigen::VectorXd c(n);
    for (Eigen::Index i = 0; i < n; ++i) c[i] = fp::encode(rng.uniform(0.2, 2.0), L).value();
    inst.c = RowPartitionedVector::from_dense(c, part);
    // generous outer radius: the feasible set lives inside ||x|| <= R
    inst.outer_radius = 8.0 * std::sqrt(double(n));
    inst.inner_radius = 0.05;
    const auto sv = a.jacobiSvd().singularValues();
    inst.kappa = sv.maxCoeff() / sv.minCoeff();
    return inst;
}

} // namespace

TEST_CASE("modified lp assembly") {
    SECTION("hand-checked blocks for the identity instance") {
        lp::LpInstance inst;
        inst.a = RowPartitionedMatrix::from_dense(Eigen::MatrixXd::Identity(2, 2),
                                                  {1, 1}, 8);
        inst.b = Eigen::VectorXd::Ones(2);
        inst.c = RowPartitionedVector::from_dense(Eigen::VectorXd::Ones(2),
                                                  inst.a.partition());
        inst.outer_radius = 1.0;
        Network net(Model::Coordinator, 2, SharedRandomness(61));
        const auto m = lp::build_modified_lp(net, inst, 1.0);
        CHECK(m.a_fro == Approx(std::sqrt(2.0)).margin(1e-9));
        CHECK(m.bbar[0] == Approx(1.0));
        CHECK(m.bbar[1] == Approx(1.0));
        CHECK(m.bbar[2] == Approx(3.0 * std::sqrt(2.0)).margin(1e-9));
        // c = e1-like scaling
        CHECK(m.cbar.head(2).isApprox(Eigen::Vector2d(1, 1) / std::sqrt(2.0), 1e-12));
        CHECK(m.cbar[2] == 0.0);
        CHECK(m.cbar[3] == 1.0);
        // primal round trip at the all-ones point
        CHECK((m.abar.transpose() * Eigen::VectorXd::Ones(4) - m.bbar).norm() <= 1e-9);
    }

    SECTION("feasibility of the initial point on random instances") {
        Rng rng(62);
        for (int t = 0; t < 10; ++t) {
            const auto inst = random_feasible(10, 3, 2, 8, rng);
            Network net(Model::Coordinator, 2, SharedRandomness(63 + std::uint64_t(t)));
            const auto m = lp::build_modified_lp(net, inst, 0.1);
            const auto p = lp::initial_point(m);
            CHECK((p.x.array() == 1.0).all());
            CHECK((m.abar.transpose() * p.x - m.bbar).norm() <= 1e-9);
            CHECK((m.abar * p.y + p.s - m.cbar).norm() <= 1e-12);
            CHECK(p.s.minCoeff() > 0);
        }
    }

    SECTION("positivity guard on the slack") {
        lp::LpInstance inst = toy_instance();
        Eigen::VectorXd c(2);
        c << -1, 0.01;
        inst.c = RowPartitionedVector::from_dense(c, inst.a.partition());
        Network net(Model::Coordinator, 2, SharedRandomness(64));
        const auto m = lp::build_modified_lp(net, inst, 1.5);
        CHECK_THROWS_AS(lp::initial_point(m), lp::guard_violated);
    }
}

TEST_CASE("ipm parameters and potential") {
    const lp::IpmParams prm(62, 11, Preset::desk());

    SECTION("printed constants") {
        const double n = 62, d = 11;
        const double alpha = 1.0 / (4.0 * std::log(4.0 * n / d));
        CHECK(prm.alpha == alpha);
        const double big = std::ldexp(1.0, 16) * n * std::sqrt(d) / (alpha * alpha);
        CHECK(prm.paper_lambda == alpha / 32000.0 * std::log(big));
        CHECK(prm.paper_gamma ==
              std::min(alpha / 64000.0, alpha / (50.0 * prm.paper_lambda)));
        CHECK(prm.eps_hat == 0.1);
        // the desk termination band sits inside the printed bound
        CHECK(prm.phi_term <= big);
    }

    SECTION("potential at the center") {
        const Eigen::VectorXd v = Eigen::VectorXd::Ones(12);
        CHECK(lp::phi_of(v, prm.lambda) == Approx(24.0));
        CHECK(lp::phi_grad(v, prm.lambda).norm() == 0.0);
    }

    SECTION("projection matrix is an orthogonal projection") {
        Rng rng(65);
        Eigen::MatrixXd a(12, 3);
        for (int i = 0; i < 12; ++i)
            for (int j = 0; j < 3; ++j) a(i, j) = rng.gaussian();
        Eigen::VectorXd x(12), s(12);
        for (int i = 0; i < 12; ++i) x[i] = rng.uniform(0.5, 2), s[i] = rng.uniform(0.5, 2);
        const Eigen::VectorXd dsq = (x.array() / s.array()).sqrt().matrix();
        const Eigen::MatrixXd h =
            a.transpose() * (x.array() / s.array()).matrix().asDiagonal() * a;
        const Eigen::MatrixXd p =
            dsq.asDiagonal() * a * h.inverse() * a.transpose() * dsq.asDiagonal();
        CHECK((p * p - p).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("warm start weights") {
    SECTION("identity-like modified matrix gives sigma + d/n") {
        lp::ModifiedLp m;
        m.n = 4;
        m.d = 5;
        m.s = 1;
        m.part = {4};
        m.abar = Eigen::MatrixXd::Identity(6, 6);
        m.a_fro = 1.0;
        Network net(Model::Coordinator, 1, SharedRandomness(66));
        const Eigen::VectorXd w = lp::warm_start_weights(net, m, 0.1, 0.1);
        // sigma = 1 for orthonormal rows, eta = 1: fixed point at 2
        for (int i = 0; i < 6; ++i) CHECK(w[i] == Approx(2.0).margin(0.25));
    }

    SECTION("residual against the dense oracle") {
        Rng rng(67);
        lp::LpInstance inst = random_feasible(12, 3, 2, 8, rng);
        Network net(Model::Coordinator, 2, SharedRandomness(68));
        const auto m = lp::build_modified_lp(net, inst, 0.1);
        const lp::IpmParams prm(m.nbar(), m.dbar(), Preset::desk());
        int iters = 0;
        const Eigen::VectorXd w =
            lp::warm_start_weights(net, m, prm.alpha, prm.eps_hat, &iters);
        // dense check of s ~ sigma(S^{-1/2-alpha} Abar) + d/n
        const double eta = double(m.dbar()) / double(m.nbar());
        Eigen::VectorXd dt(m.nbar());
        for (Eigen::Index i = 0; i < m.nbar(); ++i)
            dt[i] = std::pow(w[i], -1.0 - 2.0 * prm.alpha);
        const Eigen::MatrixXd h = m.abar.transpose() * dt.asDiagonal() * m.abar;
        const Eigen::MatrixXd hi = lev::Pinv(h).inv;
        for (Eigen::Index i = 0; i < m.nbar(); ++i) {
            const Eigen::VectorXd row = m.abar.row(i).transpose();
            const double sigma = dt[i] * row.dot(hi * row);
            CHECK(std::abs(w[i] - sigma - eta) <=
                  (std::exp(prm.eps_hat) - 1.0) * w[i] + 0.02);
        }
        const double p = 1.0 / (1.0 + prm.alpha);
        CHECK(iters <= 2 * lev::lewis_predicted_iters(p, eta, p * prm.eps_hat / 2,
                                                      m.nbar()));
    }
}

TEST_CASE("inverse maintenance") {
    Rng rng(69);
    Eigen::MatrixXd a(10, 3);
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 3; ++j) a(i, j) = rng.gaussian();
    const double gamma_im = 40.0 * std::log(3.0);
    lp::InverseMaintainer im(a, gamma_im);
    Eigen::VectorXd d0 = Eigen::VectorXd::Ones(10);
    Eigen::VectorXd sg = Eigen::VectorXd::Constant(10, 0.3);
    Rng imr(70);
    im.reset(d0, sg, imr);
    const Eigen::MatrixXd k0 = im.k();
    const Eigen::VectorXd h0 = im.h();

    SECTION("unchanged input leaves everything in place") {
        CHECK(im.update(d0, sg, imr).empty());
        CHECK(im.k() == k0);
        CHECK(im.h() == h0);
        CHECK(im.resamples() == 0);
    }

    SECTION("a doubled coordinate is resampled") {
        Eigen::VectorXd d1 = d0;
        d1[4] *= 2.0;
        const auto changed = im.update(d1, sg, imr);
        CHECK(im.resamples() == 1);
        // saturated probability here, so the new h is deterministic
        REQUIRE(changed.size() == 1);
        CHECK(changed[0] == 4);
        CHECK(im.h()[4] == d1[4]);
        for (int i = 0; i < 10; ++i)
            if (i != 4) CHECK(im.h()[i] == h0[i]);
    }

    SECTION("slow geometric drift keeps the resample count in budget") {
        Eigen::VectorXd d = d0;
        std::uint64_t steps = 50;
        for (std::uint64_t t = 0; t < steps; ++t) {
            d *= 1.02; // uniform 2% drift trips every ~5 steps
            im.update(d, sg, imr);
        }
        CHECK(im.resamples() <=
              std::uint64_t(3.0 * double(steps * steps) * std::log(3.0)));
    }
}

TEST_CASE("lp end to end") {
    const Preset preset = Preset::desk();

    SECTION("two-variable toy: value 1 within tolerance") {
        const auto inst = toy_instance();
        Network net(Model::Coordinator, 2, SharedRandomness(71));
        const double eps = 1e-3;
        const auto rep = lp::ipm_solve(net, inst, eps, preset);
        CHECK(rep.objective <= 1.0 + eps * std::sqrt(2.0) * inst.outer_radius + 1e-9);
        CHECK(rep.objective >= 1.0 - eps * (inst.a.stacked().norm() + 2));
        CHECK(rep.primal_residual <=
              eps * (std::sqrt(2.0) * inst.outer_radius + 1.0));
        CHECK((rep.x.array() >= 0).all());
        CHECK(rep.kkt_violation <= 1e-8);
    }

    SECTION("random feasible instances against the enumeration oracle") {
        Rng rng(72);
        int ok = 0;
        const int seeds = 10;
        for (int seed = 0; seed < seeds; ++seed) {
            const auto inst = random_feasible(12, 3, 2, 8, rng);
            Network net(Model::Coordinator, 2, SharedRandomness(1300 + std::uint64_t(seed)));
            const double eps = 1e-3;
            try {
                const auto rep = lp::ipm_solve(net, inst, eps, preset);
                const auto oracle = smalllp::enumerate_optimum(
                    inst.a.stacked(), inst.b, inst.c.stacked());
                REQUIRE(oracle.status == smalllp::Status::Optimal);
                const double tol = eps * inst.c.stacked().norm() * inst.outer_radius;
                const bool obj_ok = rep.objective <= oracle.value + tol;
                const bool res_ok =
                    rep.primal_residual <=
                    eps * (inst.a.stacked().norm() * inst.outer_radius +
                           inst.b.norm());
                const bool kkt_ok = rep.kkt_violation <= 1e-8;
                if (obj_ok && res_ok && kkt_ok) ++ok;
            } catch (const std::exception&) {
            }
        }
        CHECK(ok >= seeds - 1);
    }
}
