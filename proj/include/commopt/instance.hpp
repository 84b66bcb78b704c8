#pragma once

// Row-partitioned problem instances and their on-disk JSON format:
//   header {n, d, s, L, partition, kind} + row-major list of integer
//   numerators at scale 2^-L.  LP instances carry {b, c, R, r, kappa}
//   extensions; b and c entries are numerators at the same scale.

#include <Eigen/Dense>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "../../vendor/json.hpp"
#include "fixed_point.hpp"

namespace commopt {

struct RowPartitionedMatrix {
    std::vector<Eigen::MatrixXd> blocks; // n_i x d each, entries on the 2^-L grid
    int d = 0;
    int L = 0;

    int s() const { return int(blocks.size()); }
    Eigen::Index rows() const {
        Eigen::Index n = 0;
        for (const auto& b : blocks) n += b.rows();
        return n;
    }
    std::vector<Eigen::Index> partition() const {
        std::vector<Eigen::Index> p;
        p.reserve(blocks.size());
        for (const auto& b : blocks) p.push_back(b.rows());
        return p;
    }

    Eigen::MatrixXd stacked() const {
        Eigen::MatrixXd a(rows(), d);
        Eigen::Index r = 0;
        for (const auto& b : blocks) {
            a.middleRows(r, b.rows()) = b;
            r += b.rows();
        }
        return a;
    }

    // global row index -> (machine, local row)
    std::pair<int, Eigen::Index> locate(Eigen::Index global) const {
        for (int i = 0; i < s(); ++i) {
            if (global < blocks[i].rows()) return {i, global};
            global -= blocks[i].rows();
        }
        throw std::out_of_range("row index past end of partition");
    }

    void validate() const {
        for (const auto& b : blocks) {
            if (b.cols() != d) throw std::invalid_argument("block width mismatch");
            for (Eigen::Index i = 0; i < b.rows(); ++i)
                for (Eigen::Index j = 0; j < b.cols(); ++j)
                    if (!fp::representable(b(i, j), L))
                        throw overflow_error("entry not representable at L bits");
        }
    }

    static RowPartitionedMatrix from_dense(const Eigen::MatrixXd& a,
                                           const std::vector<Eigen::Index>& part,
                                           int L) {
        RowPartitionedMatrix m;
        m.d = int(a.cols());
        m.L = L;
        Eigen::Index r = 0;
        for (auto n_i : part) {
            m.blocks.push_back(a.middleRows(r, n_i));
            r += n_i;
        }
        if (r != a.rows()) throw std::invalid_argument("partition does not cover rows");
        return m;
    }
};

// b-vectors and c-vectors split the same way as the matrix rows
struct RowPartitionedVector {
    std::vector<Eigen::VectorXd> blocks;

    Eigen::Index size() const {
        Eigen::Index n = 0;
        for (const auto& b : blocks) n += b.size();
        return n;
    }
    Eigen::VectorXd stacked() const {
        Eigen::VectorXd v(size());
        Eigen::Index r = 0;
        for (const auto& b : blocks) {
            v.segment(r, b.size()) = b;
            r += b.size();
        }
        return v;
    }
    static RowPartitionedVector from_dense(const Eigen::VectorXd& v,
                                           const std::vector<Eigen::Index>& part) {
        RowPartitionedVector out;
        Eigen::Index r = 0;
        for (auto n_i : part) {
            out.blocks.push_back(v.segment(r, n_i));
            r += n_i;
        }
        if (r != v.size()) throw std::invalid_argument("partition does not cover vector");
        return out;
    }
};

struct LpExtension {
    Eigen::VectorXd b; // d-vector, known to all machines
    RowPartitionedVector c;
    double R = 1.0;
    double r = 0.0;
    double kappa = 1.0;
};

struct Instance {
    RowPartitionedMatrix A;
    std::optional<RowPartitionedVector> b; // regression right-hand side
    std::optional<LpExtension> lp;
    std::string kind = "random";

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["n"] = A.rows();
        j["d"] = A.d;
        j["s"] = A.s();
        j["L"] = A.L;
        j["kind"] = kind;
        std::vector<Eigen::Index> part = A.partition();
        j["partition"] = part;
        std::vector<std::int64_t> entries;
        entries.reserve(std::size_t(A.rows()) * A.d);
        for (const auto& blk : A.blocks)
            for (Eigen::Index i = 0; i < blk.rows(); ++i)
                for (Eigen::Index jj = 0; jj < blk.cols(); ++jj)
                    entries.push_back(fp::encode(blk(i, jj), A.L).numerator);
        j["entries"] = entries;
        if (b) {
            std::vector<std::int64_t> bv;
            const Eigen::VectorXd bs = b->stacked();
            for (Eigen::Index i = 0; i < bs.size(); ++i)
                bv.push_back(fp::encode(bs[i], A.L).numerator);
            j["b"] = bv;
        }
        if (lp) {
            std::vector<std::int64_t> bv, cv;
            for (Eigen::Index i = 0; i < lp->b.size(); ++i)
                bv.push_back(fp::encode(lp->b[i], A.L).numerator);
            const Eigen::VectorXd cs = lp->c.stacked();
            for (Eigen::Index i = 0; i < cs.size(); ++i)
                cv.push_back(fp::encode(cs[i], A.L).numerator);
            j["lp"] = {{"b", bv}, {"c", cv}, {"R", lp->R}, {"r", lp->r},
                       {"kappa", lp->kappa}};
        }
        return j;
    }

    static Instance from_json(const nlohmann::json& j) {
        Instance inst;
        const int d = j.at("d").get<int>();
        const int L = j.at("L").get<int>();
        const auto part = j.at("partition").get<std::vector<Eigen::Index>>();
        const auto entries = j.at("entries").get<std::vector<std::int64_t>>();
        const Eigen::Index n = j.at("n").get<Eigen::Index>();
        if (Eigen::Index(entries.size()) != n * d)
            throw std::invalid_argument("entry count does not match n*d");
        Eigen::MatrixXd a(n, d);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index c = 0; c < d; ++c)
                a(i, c) = std::ldexp(double(entries[std::size_t(i * d + c)]), -L);
        inst.A = RowPartitionedMatrix::from_dense(a, part, L);
        inst.kind = j.value("kind", "random");
        if (j.contains("b")) {
            const auto bv = j.at("b").get<std::vector<std::int64_t>>();
            Eigen::VectorXd b(Eigen::Index(bv.size()));
            for (std::size_t i = 0; i < bv.size(); ++i)
                b[Eigen::Index(i)] = std::ldexp(double(bv[i]), -L);
            inst.b = RowPartitionedVector::from_dense(b, part);
        }
        if (j.contains("lp")) {
            LpExtension ext;
            const auto& je = j.at("lp");
            const auto bv = je.at("b").get<std::vector<std::int64_t>>();
            ext.b.resize(Eigen::Index(bv.size()));
            for (std::size_t i = 0; i < bv.size(); ++i)
                ext.b[Eigen::Index(i)] = std::ldexp(double(bv[i]), -L);
            const auto cv = je.at("c").get<std::vector<std::int64_t>>();
            Eigen::VectorXd c(Eigen::Index(cv.size()));
            for (std::size_t i = 0; i < cv.size(); ++i)
                c[Eigen::Index(i)] = std::ldexp(double(cv[i]), -L);
            ext.c = RowPartitionedVector::from_dense(c, part);
            ext.R = je.at("R").get<double>();
            ext.r = je.at("r").get<double>();
            ext.kappa = je.at("kappa").get<double>();
            inst.lp = ext;
        }
        return inst;
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("cannot write " + path);
        f << to_json().dump();
    }

    static Instance load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot read " + path);
        nlohmann::json j;
        f >> j;
        return from_json(j);
    }
};

} // namespace commopt
