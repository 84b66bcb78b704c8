#include <catch2/catch_amalgamated.hpp>

#include <commopt/leverage.hpp>
#include <commopt/refinement.hpp>

using namespace commopt;
using Catch::Approx;

static RowPartitionedMatrix random_instance(Eigen::Index n, int d, int s, int L,
                                            Rng& rng) {
    Eigen::MatrixXd a(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = fp::encode(rng.uniform(-2, 2), L).value();
    std::vector<Eigen::Index> part(std::size_t(s), n / s);
    part.back() += n % s;
    return RowPartitionedMatrix::from_dense(a, part, L);
}

static double cond_number(const Eigen::MatrixXd& a) {
    const auto sv = a.jacobiSvd().singularValues();
    return sv.maxCoeff() / sv.minCoeff();
}

TEST_CASE("integer kernel basis") {
    using refine::bigint;

    SECTION("full rank matrix has empty kernel") {
        std::vector<std::vector<bigint>> rows = {{1, 0}, {0, 1}, {2, 3}};
        CHECK(refine::integer_kernel_basis(rows, 2).empty());
    }

    SECTION("known one-dimensional kernel") {
        // rows (1,2,3) and (4,5,6): kernel spanned by (1,-2,1)
        std::vector<std::vector<bigint>> rows = {{1, 2, 3}, {4, 5, 6}};
        const auto basis = refine::integer_kernel_basis(rows, 3);
        REQUIRE(basis.size() == 1);
        const auto& v = basis[0];
        CHECK(v[0] * 1 + v[1] * 2 + v[2] * 3 == 0);
        CHECK(v[0] * 4 + v[1] * 5 + v[2] * 6 == 0);
        CHECK(v[0] != 0);
    }

    SECTION("random matrices: basis vectors annihilate all rows") {
        Rng rng(1);
        for (int t = 0; t < 50; ++t) {
            const int n = 3 + int(rng.below(6)), d = 2 + int(rng.below(5));
            std::vector<std::vector<bigint>> rows(static_cast<std::size_t>(n));
            for (auto& r : rows) {
                r.resize(std::size_t(d));
                for (auto& x : r) x = bigint(std::int64_t(rng.below(2001)) - 1000);
            }
            const auto basis = refine::integer_kernel_basis(rows, d);
            for (const auto& v : basis)
                for (const auto& r : rows) {
                    bigint acc = 0;
                    for (int j = 0; j < d; ++j)
                        acc += r[std::size_t(j)] * v[std::size_t(j)];
                    CHECK(acc == 0);
                }
            // dimension check against a double-precision rank oracle
            Eigen::MatrixXd m(n, d);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    m(i, j) = double(rows[std::size_t(i)][std::size_t(j)].convert_to<long long>());
            const int rank = int(Eigen::FullPivLU<Eigen::MatrixXd>(m).rank());
            CHECK(int(basis.size()) == d - rank);
        }
    }
}

TEST_CASE("kernel membership probe") {
    using refine::bigint;
    const Preset preset = Preset::desk();

    SECTION("trivial kernel flags every row as in the complement") {
        std::vector<std::vector<bigint>> rows = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        Rng rng(2);
        const auto probe = refine::build_kernel_probe(rows, 3, 8, 16, rng);
        CHECK(probe.trivial);
        CHECK(refine::in_kernel_complement(probe, {5, -3, 7}));
    }

    SECTION("row in the kernel of [e1] is flagged out") {
        std::vector<std::vector<bigint>> rows = {{1, 0, 0}};
        Rng rng(3);
        const auto probe = refine::build_kernel_probe(rows, 3, 8, 16, rng);
        CHECK_FALSE(probe.trivial);
        // e2 has a kernel component, e1 does not
        CHECK(refine::in_kernel_complement(probe, {1, 0, 0}));
        CHECK_FALSE(refine::in_kernel_complement(probe, {0, 1, 0}));
    }

    SECTION("agreement with the exact rational nullspace oracle") {
        Rng rng(4);
        int agree = 0, total = 0;
        for (int seed = 0; seed < 100; ++seed) {
            // random 6x4 of rank 3
            std::vector<std::vector<bigint>> rows(6, std::vector<bigint>(4));
            Eigen::MatrixXd dense(6, 4);
            for (int i = 0; i < 5; ++i)
                for (int j = 0; j < 4; ++j) {
                    const auto v = std::int64_t(rng.below(41)) - 20;
                    rows[std::size_t(i)][std::size_t(j)] = v;
                    dense(i, j) = double(v);
                }
            for (int j = 0; j < 4; ++j) { // sixth row = sum of first two
                rows[5][std::size_t(j)] = rows[0][std::size_t(j)] + rows[1][std::size_t(j)];
                dense(5, j) = dense(0, j) + dense(1, j);
            }
            Rng prng(500 + std::uint64_t(seed));
            const auto probe = refine::build_kernel_probe(rows, 4, 8,
                                                          preset.kernel_primes, prng);
            // oracle: orthogonal complement membership via double-precision kernel
            const Eigen::FullPivLU<Eigen::MatrixXd> lu(dense);
            const Eigen::MatrixXd ker = lu.kernel();
            for (int t = 0; t < 4; ++t) {
                std::vector<std::int64_t> row(4);
                Eigen::VectorXd rowd(4);
                for (int j = 0; j < 4; ++j) {
                    row[std::size_t(j)] = std::int64_t(prng.below(21)) - 10;
                    rowd[j] = double(row[std::size_t(j)]);
                }
                const bool oracle_in =
                    lu.rank() == 4 || (ker.transpose() * rowd).norm() < 1e-9;
                if (refine::in_kernel_complement(probe, row) == oracle_in) ++agree;
                ++total;
            }
        }
        CHECK(double(agree) / total >= 0.99);
    }
}

TEST_CASE("refinement overestimates") {
    const Preset preset = Preset::desk();
    const double c = 3.0;

    SECTION("identity: tau = 1 everywhere, mass within 9d") {
        const int d = 8;
        const auto a = RowPartitionedMatrix::from_dense(
            Eigen::MatrixXd::Identity(d, d), {4, 4}, 8);
        Network net(Model::Coordinator, 2, SharedRandomness(21));
        const auto over = refine::refinement_overestimates(net, a, c, 1.0, preset);
        const Eigen::VectorXd tau = over.stacked();
        for (int i = 0; i < d; ++i) CHECK(tau[i] >= 1.0);
        CHECK(tau.sum() <= 9.0 * d);
    }

    SECTION("duplicated rows receive identical overestimates") {
        Rng rng(5);
        auto a = random_instance(12, 3, 2, 8, rng);
        a.blocks[1].row(0) = a.blocks[0].row(0); // duplicate across machines
        Network net(Model::Coordinator, 2, SharedRandomness(22));
        const auto over = refine::refinement_overestimates(
            net, a, c, 2 * cond_number(a.stacked()), preset);
        CHECK(over.tau_blocks[1][0] == over.tau_blocks[0][0]);
    }

    SECTION("random instances: overestimation and mass bound") {
        Rng rng(6);
        int ok = 0;
        const int seeds = 30;
        for (int seed = 0; seed < seeds; ++seed) {
            const auto a = random_instance(200, 10, 4, 8, rng);
            const double kappa = 1.5 * cond_number(a.stacked());
            Network net(Model::Coordinator, 4, SharedRandomness(600 + std::uint64_t(seed)));
            refine::RefinementTrace trace;
            bool good = true;
            try {
                const auto over =
                    refine::refinement_overestimates(net, a, c, kappa, preset, &trace);
                const Eigen::VectorXd tau = over.stacked();
                const Eigen::VectorXd truth = lev::leverage_exact(a.stacked());
                for (int i = 0; i < 200; ++i)
                    if (tau[i] < truth[i]) good = false;
                if (tau.sum() > 9.0 * 10) good = false;
                // mass shrinks geometrically until the d-scale floor
                for (std::size_t k = 1; k < trace.l1_per_iter.size(); ++k)
                    if (trace.l1_per_iter[k] > 1.2 * std::max(0.5 * trace.l1_per_iter[k - 1],
                                                              9.0 * 10))
                        good = false;
            } catch (const refine::kernel_test_inconclusive&) {
                good = false;
            }
            if (good) ++ok;
        }
        CHECK(ok >= seeds - 1);
    }

    SECTION("ridge overestimate invariant holds each round") {
        Rng rng(7);
        const auto a = random_instance(64, 4, 2, 8, rng);
        const double kappa = 1.5 * cond_number(a.stacked());
        const double lambda = 1.0 / (100.0 * kappa * kappa);
        const Eigen::VectorXd ridge = lev::ridge_leverage(a.stacked(), lambda);
        Network net(Model::Coordinator, 2, SharedRandomness(23));
        const auto over = refine::refinement_overestimates(net, a, c, kappa, preset);
        const Eigen::VectorXd tau = over.stacked();
        for (int i = 0; i < 64; ++i) CHECK(tau[i] >= ridge[i] - 1e-12);
    }

    SECTION("rejects tiny instances") {
        const auto a = RowPartitionedMatrix::from_dense(
            Eigen::MatrixXd::Identity(4, 4), {4}, 8);
        Network net(Model::Coordinator, 1, SharedRandomness(24));
        CHECK_THROWS_AS(refine::refinement_overestimates(net, a, 3.0, 1.0, preset),
                        std::invalid_argument);
    }
}
