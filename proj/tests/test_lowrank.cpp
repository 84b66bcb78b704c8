#include <catch2/catch_amalgamated.hpp>

#include <commopt/lowrank.hpp>

using namespace commopt;
using Catch::Approx;

namespace {

// planted spectrum instance: U diag(sv) V^T quantized to L bits
RowPartitionedMatrix planted(Eigen::Index n, int d, int s, int L,
                             const Eigen::VectorXd& sv, Rng& rng) {
    Eigen::MatrixXd g(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) g(i, j) = rng.gaussian();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::VectorXd use = Eigen::VectorXd::Zero(d);
    use.head(sv.size()) = sv;
    Eigen::MatrixXd a = svd.matrixU() * use.asDiagonal() * svd.matrixV().transpose();
    a /= a.cwiseAbs().maxCoeff() * 1.1; // keep entries in range
    for (Eigen::Index i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = fp::encode(a(i, j), L).value();
    std::vector<Eigen::Index> part(std::size_t(s), n / s);
    part.back() += n % s;
    return RowPartitionedMatrix::from_dense(a, part, L);
}

} // namespace

TEST_CASE("low rank projection") {
    const Preset preset = Preset::desk();

    SECTION("exact rank-k input is recovered") {
        // exact product of grid matrices: rank <= 3 holds bit for bit
        Rng rng(1);
        Eigen::MatrixXd g1(48, 3), g2(3, 8);
        for (int i = 0; i < 48; ++i)
            for (int j = 0; j < 3; ++j) g1(i, j) = fp::encode(rng.uniform(-2, 2), 6).value();
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 8; ++j) g2(i, j) = fp::encode(rng.uniform(-1, 1), 6).value();
        const auto a = RowPartitionedMatrix::from_dense(g1 * g2, {12, 12, 12, 12}, 12);
        Network net(Model::Coordinator, 4, SharedRandomness(51));
        const auto res = lowrank::low_rank_projection(net, a, 3, 0.5, 0.1, preset);
        CHECK(res.error_fro <= 1e-6 * a.stacked().norm());
        CHECK(res.factor.cols() <= 3);
    }

    SECTION("k = d returns the identity projection") {
        Rng rng(2);
        Eigen::VectorXd sv(4);
        sv << 4, 3, 2, 1;
        const auto a = planted(32, 4, 2, 12, sv, rng);
        Network net(Model::Coordinator, 2, SharedRandomness(52));
        const auto res = lowrank::low_rank_projection(net, a, 4, 0.5, 0.1, preset);
        CHECK((res.projection() - Eigen::MatrixXd::Identity(4, 4)).norm() <= 1e-8);
    }

    SECTION("projection factor is orthonormal (idempotent, symmetric)") {
        Rng rng(3);
        Eigen::VectorXd sv(6);
        sv << 10, 9, 8, 3, 2, 1;
        const auto a = planted(64, 8, 4, 10, sv, rng);
        Network net(Model::Coordinator, 4, SharedRandomness(53));
        const auto res = lowrank::low_rank_projection(net, a, 3, 0.5, 0.1, preset);
        const Eigen::MatrixXd p = res.projection();
        CHECK((p * p - p).cwiseAbs().maxCoeff() <= 1e-9);
        CHECK((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-9);
        CHECK((res.factor.transpose() * res.factor -
               Eigen::MatrixXd::Identity(res.factor.cols(), res.factor.cols()))
                  .cwiseAbs()
                  .maxCoeff() <= 1e-10);

        // row-space containment: rows of A P lie in colspace(factor)
        const Eigen::MatrixXd ap = a.stacked() * p;
        const Eigen::MatrixXd resid =
            ap - ap * res.factor * res.factor.transpose();
        CHECK(resid.cwiseAbs().maxCoeff() <= 1e-9);
    }

    SECTION("planted spectrum meets the ratio target") {
        Rng rng(4);
        Eigen::VectorXd sv(12);
        for (int i = 0; i < 12; ++i) sv[i] = 10.0 - i * (9.0 / 11.0);
        int ok = 0;
        const int seeds = 20;
        for (int seed = 0; seed < seeds; ++seed) {
            const auto a = planted(128, 12, 4, 10, sv, rng);
            Network net(Model::Coordinator, 4,
                        SharedRandomness(1200 + std::uint64_t(seed)));
            const auto res = lowrank::low_rank_projection(net, a, 3, 0.5, 0.1, preset);
            if (res.ratio <= 1.5) ++ok;
        }
        CHECK(ok >= int(0.85 * seeds));
    }
}
