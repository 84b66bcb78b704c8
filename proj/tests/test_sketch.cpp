#include <catch2/catch_amalgamated.hpp>

#include <commopt/fixed_point.hpp>
#include <commopt/sketch.hpp>

#include <map>

using namespace commopt;
using Catch::Approx;

// total variation distance between an empirical histogram and a distribution
static double tv_distance(const std::map<Eigen::Index, int>& counts, int draws,
                          const Eigen::VectorXd& probs) {
    double tv = 0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        const auto it = counts.find(i);
        const double emp = it == counts.end() ? 0.0 : double(it->second) / draws;
        tv += std::abs(emp - probs[i]);
    }
    return 0.5 * tv;
}

TEST_CASE("stable constants against the closed form") {
    // independent oracle: E|N(0,1)|^p = 2^{p/2} Gamma((p+1)/2) / sqrt(pi)
    auto moment = [](double p) {
        return std::pow(2.0, p / 2.0) * std::tgamma((p + 1) / 2.0) / std::sqrt(M_PI);
    };
    CHECK(sketch::cp_constant(1.0) == Approx(1.0 / moment(1.0)).epsilon(1e-9));
    CHECK(sketch::cp_constant(2.0) == Approx(1.0 / moment(2.0)).epsilon(1e-9));
    CHECK(sketch::cp_constant(1.5) == Approx(1.0 / moment(1.5)).epsilon(5e-3));
}

TEST_CASE("jl norm estimate") {
    SECTION("zero vector") {
        Rng rng(1);
        CHECK(sketch::jl_estimate_norm(Eigen::VectorXd::Zero(6), 8, rng) == 0.0);
    }

    SECTION("unbiased on a unit vector") {
        // Monte-Carlo mean of an unbiased estimator over 1e4 seeds
        double acc = 0;
        const Eigen::VectorXd e1 = Eigen::VectorXd::Unit(10, 0);
        for (int s = 0; s < 10000; ++s) {
            Rng rng(1000 + std::uint64_t(s));
            acc += sketch::jl_estimate_norm(e1, 4, rng);
        }
        CHECK(acc / 10000 >= 0.97);
        CHECK(acc / 10000 <= 1.03);
    }

    SECTION("failure rate of the (1 +- 0.5) event at r = 64") {
        // bound 2 exp(-(eps^2 - eps^3) r / 4) at eps = 1/2, plus sampling slack
        Eigen::VectorXd x(16);
        Rng gen(3);
        for (int i = 0; i < 16; ++i) x[i] = gen.gaussian();
        const double target = x.squaredNorm();
        int fails = 0;
        const int trials = 4000;
        for (int s = 0; s < trials; ++s) {
            Rng rng(77 + std::uint64_t(s));
            const double est = sketch::jl_estimate_norm(x, 64, rng);
            if (est < 0.5 * target || est > 1.5 * target) ++fails;
        }
        const double bound = 2 * std::exp(-(0.25 - 0.125) * 64 / 4.0);
        CHECK(double(fails) / trials <= bound + 0.05);
    }
}

TEST_CASE("lp norm sketch") {
    const double eps = 0.25, delta = 0.05;

    SECTION("unit vector, p = 1") {
        int ok = 0;
        const int trials = 1000;
        for (int s = 0; s < trials; ++s) {
            Rng rng(11 + std::uint64_t(s));
            sketch::LpNormSketch sk(12, 1.0, eps, delta, rng);
            const double est = sk.estimate(Eigen::VectorXd::Unit(12, 0));
            if (est >= 1 - eps && est <= 1 + eps) ++ok;
        }
        CHECK(double(ok) / trials >= 1 - delta);
    }

    SECTION("all-ones length 8, p = 1 targets 8") {
        int ok = 0;
        const int trials = 1000;
        for (int s = 0; s < trials; ++s) {
            Rng rng(211 + std::uint64_t(s));
            sketch::LpNormSketch sk(8, 1.0, eps, delta, rng);
            const double est = sk.estimate(Eigen::VectorXd::Ones(8));
            if (est >= 8 * (1 - eps) && est <= 8 * (1 + eps)) ++ok;
        }
        CHECK(double(ok) / trials >= 1 - delta);
    }

    SECTION("huge and tiny magnitudes mixed (rounding robustness)") {
        const int L = 16;
        Eigen::VectorXd x(6);
        x << std::ldexp(1.0, L), -std::ldexp(1.0, L), std::ldexp(1.0, -L),
            std::ldexp(1.0, -L), std::ldexp(1.0, L), std::ldexp(1.0, -L);
        for (double p : {1.0, 2.0}) {
            const double exact = std::pow(x.array().abs().pow(p).sum(), 1.0 / p);
            int ok = 0;
            const int trials = 400;
            for (int s = 0; s < trials; ++s) {
                Rng rng(311 + std::uint64_t(s));
                sketch::LpNormSketch sk(6, p, eps, delta, rng);
                const double est = sk.estimate(x);
                if (est >= exact * (1 - eps) && est <= exact * (1 + eps)) ++ok;
            }
            CHECK(double(ok) / trials >= 1 - delta);
        }
    }

    SECTION("linearity under fixed randomness") {
        Rng rng(511);
        sketch::LpNormSketch sk(7, 1.5, eps, delta, rng);
        Rng gen(512);
        Eigen::VectorXd x(7), y(7);
        for (int i = 0; i < 7; ++i) x[i] = gen.gaussian(), y[i] = gen.gaussian();
        const Eigen::VectorXd lhs = sk.matrix() * (x + y);
        const Eigen::VectorXd rhs = sk.matrix() * x + sk.matrix() * y;
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("lp sampler") {
    SECTION("point mass concentrates") {
        int hits = 0;
        for (int s = 0; s < 1000; ++s) {
            Rng rng(600 + std::uint64_t(s));
            const auto res = sketch::lp_sample(Eigen::VectorXd::Unit(8, 2), 1.0, 0.25, rng);
            if (res.index == 2) ++hits;
        }
        CHECK(hits >= 990);
    }

    SECTION("two equal entries split evenly") {
        Eigen::VectorXd x(2);
        x << 1, 1;
        int first = 0;
        const int draws = 10000;
        for (int s = 0; s < draws; ++s) {
            Rng rng(700 + std::uint64_t(s));
            if (sketch::lp_sample(x, 1.0, 0.25, rng).index == 0) ++first;
        }
        CHECK(double(first) / draws == Approx(0.5).margin(0.05));
    }

    SECTION("p = 2 weights proportional to squares") {
        Eigen::VectorXd x(3);
        x << 1, 2, 3;
        Eigen::VectorXd probs(3); // exact normalization oracle
        probs << 1.0 / 14, 4.0 / 14, 9.0 / 14;
        std::map<Eigen::Index, int> counts;
        const int draws = 10000;
        for (int s = 0; s < draws; ++s) {
            Rng rng(800 + std::uint64_t(s));
            counts[sketch::lp_sample(x, 2.0, 0.25, rng).index]++;
        }
        CHECK(tv_distance(counts, draws, probs) <= 0.05);
    }

    SECTION("linearity of the sampler sketch under fixed randomness") {
        Rng rng(850);
        sketch::LpSampler sampler(9, 1.5, rng);
        Rng gen(851);
        Eigen::VectorXd x(9), y(9);
        for (int i = 0; i < 9; ++i) x[i] = gen.gaussian(), y[i] = gen.gaussian();
        const Eigen::MatrixXd lhs = sampler.sketch(x + y);
        const Eigen::MatrixXd rhs = sampler.sketch(x) + sampler.sketch(y);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-10);
    }

    SECTION("probability estimates are calibrated") {
        Eigen::VectorXd x(6);
        x << 4, 2, 1, 1, 0.5, 0.25;
        const double total = x.array().abs().pow(1.5).sum();
        int ok = 0;
        const int trials = 500;
        for (int s = 0; s < trials; ++s) {
            Rng rng(900 + std::uint64_t(s));
            const auto res = sketch::lp_sample(x, 1.5, 0.3, rng);
            const double truth = std::pow(std::abs(x[res.index]), 1.5) / total;
            if (res.prob_estimate >= truth * 0.6 && res.prob_estimate <= truth * 1.4)
                ++ok;
        }
        CHECK(double(ok) / trials >= 0.9);
    }

    SECTION("zero vector raises") {
        Rng rng(1000);
        CHECK_THROWS_AS(sketch::lp_sample(Eigen::VectorXd::Zero(4), 1.0, 0.25, rng),
                        sketch::zero_vector_error);
    }
}

TEST_CASE("sample_from_block") {
    const int L = 10;

    SECTION("identity block is uniform, estimates near 1/4") {
        const Eigen::MatrixXd x = Eigen::MatrixXd::Identity(4, 4);
        const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(4, 4);
        std::map<Eigen::Index, int> counts;
        const int draws = 2000;
        double psum = 0;
        for (int s = 0; s < draws; ++s) {
            Network net(Model::Coordinator, 1, SharedRandomness(4000 + std::uint64_t(s)));
            const auto bs = sketch::sample_from_block(net, 0, x, m, 2.0, 0.3, 0.1, L);
            counts[bs.row_index]++;
            psum += bs.prob_estimate;
        }
        CHECK(tv_distance(counts, draws, Eigen::VectorXd::Constant(4, 0.25)) <= 0.06);
        CHECK(psum / draws == Approx(0.25).margin(0.08));
    }

    SECTION("single nonzero row always chosen") {
        Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4, 4);
        x(0, 0) = 1.0;
        const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(4, 4);
        int est_ok = 0;
        for (int s = 0; s < 50; ++s) {
            Network net(Model::Coordinator, 1, SharedRandomness(5000 + std::uint64_t(s)));
            const auto bs = sketch::sample_from_block(net, 0, x, m, 2.0, 0.3, 0.1, L);
            CHECK(bs.row_index == 0);
            if (std::abs(bs.prob_estimate - 1.0) <= 0.35) ++est_ok;
        }
        CHECK(est_ok >= 43); // p-hat = 1 +- eps holds with probability 1 - delta
    }

    SECTION("all traffic goes through the ledger") {
        Network net(Model::Coordinator, 1, SharedRandomness(123));
        const auto bs = sketch::sample_from_block(
            net, 0, Eigen::MatrixXd::Identity(4, 4), Eigen::MatrixXd::Identity(4, 4),
            2.0, 0.3, 0.1, L);
        (void)bs;
        CHECK(net.ledger().total_up() > 0);
        CHECK(net.ledger().total_down() > 0); // the row request
        CHECK(net.ledger().consistent());
    }

    SECTION("random block, p = 1, matches the exact row-norm distribution") {
        Rng gen(42);
        Eigen::MatrixXd x(8, 3);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 3; ++j)
                x(i, j) = fp::encode(gen.uniform(-2, 2), L).value();
        Eigen::MatrixXd m(3, 3); // random PD
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) m(i, j) = gen.gaussian();
        m = m * m.transpose() + Eigen::MatrixXd::Identity(3, 3);

        Eigen::VectorXd probs(8);
        for (int i = 0; i < 8; ++i)
            probs[i] = (m.transpose() * x.row(i).transpose()).norm();
        probs /= probs.sum();

        std::map<Eigen::Index, int> counts;
        const int draws = 10000;
        for (int s = 0; s < draws; ++s) {
            Network net(Model::Coordinator, 1, SharedRandomness(6000 + std::uint64_t(s)));
            counts[sketch::sample_from_block(net, 0, x, m, 1.0, 0.5, 0.5, L).row_index]++;
        }
        CHECK(tv_distance(counts, draws, probs) <= 0.05);
    }

    SECTION("zero product raises") {
        Network net(Model::Coordinator, 1, SharedRandomness(1));
        CHECK_THROWS_AS(sketch::sample_from_block(net, 0, Eigen::MatrixXd::Ones(3, 2),
                                                  Eigen::MatrixXd::Zero(2, 2), 2.0,
                                                  0.3, 0.1, L),
                        sketch::zero_product_error);
    }
}

TEST_CASE("lp2 norm estimation") {
    SECTION("identity: ||I||_{2,2}^2 = d") {
        const int d = 5;
        int ok = 0;
        const int trials = 200;
        for (int s = 0; s < trials; ++s) {
            Network net(Model::Coordinator, 1, SharedRandomness(7000 + std::uint64_t(s)));
            const double est = sketch::lp2_norm_estimate(
                net, 0, Eigen::MatrixXd::Identity(d, d), Eigen::MatrixXd::Identity(d, d),
                2.0, 0.3, 0.05);
            if (est >= d * 0.7 && est <= d * 1.3) ++ok;
        }
        CHECK(double(ok) / trials >= 0.95);
    }

    SECTION("rank one, p = 1") {
        Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4, 4);
        x(0, 0) = 1.0;
        int ok = 0;
        for (int s = 0; s < 200; ++s) {
            Network net(Model::Coordinator, 1, SharedRandomness(8000 + std::uint64_t(s)));
            const double est = sketch::lp2_norm_estimate(
                net, 0, x, Eigen::MatrixXd::Identity(4, 4), 1.0, 0.3, 0.05);
            if (est >= 0.7 && est <= 1.3) ++ok;
        }
        CHECK(double(ok) / 200 >= 0.95);
    }

    SECTION("random instance against the dense oracle") {
        Rng gen(43);
        Eigen::MatrixXd x(16, 4);
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 4; ++j) x(i, j) = gen.gaussian();
        Eigen::MatrixXd m(4, 4);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) m(i, j) = gen.gaussian();

        for (double p : {1.0, 2.0}) {
            double exact = 0;
            for (int i = 0; i < 16; ++i)
                exact += std::pow((x.row(i) * m).norm(), p);
            int ok = 0;
            const int trials = 200;
            for (int s = 0; s < trials; ++s) {
                Network net(Model::Coordinator, 1,
                            SharedRandomness(9000 + std::uint64_t(s)));
                const double est =
                    sketch::lp2_norm_estimate(net, 0, x, m, p, 0.3, 0.05);
                if (est >= exact * 0.7 && est <= exact * 1.3) ++ok;
            }
            CHECK(double(ok) / trials >= 0.95);
        }
    }
}
