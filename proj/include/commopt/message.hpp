#pragma once

// Channel payloads.  Every builder quantizes its argument onto the declared
// dyadic grid and keeps the decoded (receiver-side) value alongside the bit
// stream; protocols must use the decoded value after a send, never the
// original.  bit_size is a pure function of payload shape and entry widths.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bits.hpp"
#include "fixed_point.hpp"

namespace commopt {

class Message {
public:
    const std::string& tag() const { return tag_; }
    std::uint64_t bit_size() const { return writer_.size_bits(); }
    const BitWriter& bits() const { return writer_; }

    // -- scalars ------------------------------------------------------

    // sign + L integer + L fraction bits = 2L+1 bits
    static Message scalar(std::string tag, double v, int L) {
        Message m(std::move(tag));
        const auto fx = fp::encode(v, L);
        m.put_signed_fixed(fx.numerator, 2 * L);
        m.scalar_ = fx.value();
        return m;
    }

    // sign + int_bits + frac_bits per entry; throws on overflow
    static Message scalar_wide(std::string tag, double v, int int_bits, int frac_bits) {
        Message m(std::move(tag));
        m.scalar_ = m.put_entry(v, int_bits, frac_bits);
        return m;
    }

    static Message varint(std::string tag, std::uint64_t v) {
        Message m(std::move(tag));
        m.writer_.put_varint(v);
        m.scalar_ = double(v);
        return m;
    }

    // a power of two sent as its exponent only
    static Message exponent(std::string tag, int e) {
        Message m(std::move(tag));
        m.writer_.put_svarint(e);
        m.scalar_ = std::ldexp(1.0, e);
        return m;
    }

    // protocol-specific raw bit string (e.g. one-bit notifications)
    static Message raw_bits(std::string tag, std::uint64_t value, int width) {
        Message m(std::move(tag));
        m.writer_.put_uint(value, width);
        m.scalar_ = double(value);
        return m;
    }

    // -- vectors / matrices --------------------------------------------

    // varint length header (charged) + fixed-point entries
    static Message vector(std::string tag, const Eigen::VectorXd& v, int L) {
        return vector_wide(std::move(tag), v, L, L);
    }

    static Message vector_wide(std::string tag, const Eigen::VectorXd& v,
                               int int_bits, int frac_bits) {
        Message m(std::move(tag));
        m.writer_.put_varint(std::uint64_t(v.size()));
        m.vector_.resize(v.size());
        for (Eigen::Index i = 0; i < v.size(); ++i)
            m.vector_[i] = m.put_entry(v[i], int_bits, frac_bits);
        return m;
    }

    // two varint shape headers (charged) + fixed-point entries
    static Message matrix(std::string tag, const Eigen::MatrixXd& a,
                          int int_bits, int frac_bits) {
        Message m(std::move(tag));
        m.writer_.put_varint(std::uint64_t(a.rows()));
        m.writer_.put_varint(std::uint64_t(a.cols()));
        m.matrix_.resize(a.rows(), a.cols());
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < a.cols(); ++j)
                m.matrix_(i, j) = m.put_entry(a(i, j), int_bits, frac_bits);
        return m;
    }

    // entries as signed varints of round(v / 2^grid_exp); adaptive width
    static Message vector_on_grid(std::string tag, const Eigen::VectorXd& v,
                                  int grid_exp) {
        Message m(std::move(tag));
        m.writer_.put_varint(std::uint64_t(v.size()));
        m.writer_.put_svarint(grid_exp);
        m.vector_.resize(v.size());
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            if (v[i] == 0.0) { // varint(0) is the single bit '1'
                m.writer_.put_uint(1, 1);
                m.vector_[i] = 0.0;
                continue;
            }
            const std::int64_t q = fp::grid_round(v[i], -grid_exp);
            m.writer_.put_svarint(q);
            m.vector_[i] = std::ldexp(double(q), grid_exp);
        }
        return m;
    }

    static Message matrix_on_grid(std::string tag, const Eigen::MatrixXd& a,
                                  int grid_exp) {
        Message m(std::move(tag));
        m.writer_.put_varint(std::uint64_t(a.rows()));
        m.writer_.put_varint(std::uint64_t(a.cols()));
        m.writer_.put_svarint(grid_exp);
        m.matrix_.resize(a.rows(), a.cols());
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < a.cols(); ++j) {
                if (a(i, j) == 0.0) {
                    m.writer_.put_uint(1, 1);
                    m.matrix_(i, j) = 0.0;
                    continue;
                }
                const std::int64_t q = fp::grid_round(a(i, j), -grid_exp);
                m.writer_.put_svarint(q);
                m.matrix_(i, j) = std::ldexp(double(q), grid_exp);
            }
        return m;
    }

    // adaptive dyadic grid: exponent chosen from the largest entry so that
    // `mantissa_bits` of relative precision survive; the exponent is charged
    static Message vector_adaptive(std::string tag, const Eigen::VectorXd& v,
                                   int mantissa_bits) {
        const double amax = v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
        return vector_on_grid(std::move(tag), v, adaptive_exp(amax, mantissa_bits));
    }

    static Message matrix_adaptive(std::string tag, const Eigen::MatrixXd& a,
                                   int mantissa_bits) {
        const double amax = a.size() ? a.cwiseAbs().maxCoeff() : 0.0;
        return matrix_on_grid(std::move(tag), a, adaptive_exp(amax, mantissa_bits));
    }

    static Message index_list(std::string tag, const std::vector<std::uint64_t>& idx) {
        Message m(std::move(tag));
        m.writer_.put_varint(idx.size());
        for (auto v : idx) m.writer_.put_varint(v);
        m.indices_ = idx;
        return m;
    }

    // exponents of powers of two, one svarint each (refinement sampling)
    static Message exponent_list(std::string tag, const std::vector<int>& exps) {
        Message m(std::move(tag));
        m.writer_.put_varint(exps.size());
        m.vector_.resize(Eigen::Index(exps.size()));
        for (std::size_t i = 0; i < exps.size(); ++i) {
            m.writer_.put_svarint(exps[i]);
            m.vector_[Eigen::Index(i)] = std::ldexp(1.0, exps[i]);
        }
        return m;
    }

    // -- receiver-side views -------------------------------------------

    double as_scalar() const { return scalar_; }
    const Eigen::VectorXd& as_vector() const { return vector_; }
    const Eigen::MatrixXd& as_matrix() const { return matrix_; }
    const std::vector<std::uint64_t>& as_indices() const { return indices_; }

private:
    explicit Message(std::string tag) : tag_(std::move(tag)) {}

    static int adaptive_exp(double max_abs, int mantissa_bits) {
        if (max_abs <= 0.0 || !std::isfinite(max_abs)) return 0;
        int e;
        std::frexp(max_abs, &e);
        return e - mantissa_bits;
    }

    void put_signed_fixed(std::int64_t numerator, int mag_bits) {
        writer_.put_bit(numerator < 0);
        writer_.put_uint(std::uint64_t(numerator < 0 ? -numerator : numerator), mag_bits);
    }

    double put_entry(double v, int int_bits, int frac_bits) {
        if (int_bits + frac_bits > 62)
            throw std::invalid_argument("entry width exceeds 62 bits");
        const std::int64_t q = fp::grid_round(v, frac_bits);
        if (std::llabs(q) >= (std::int64_t(1) << (int_bits + frac_bits)))
            throw overflow_error("entry exceeds declared wire width");
        put_signed_fixed(q, int_bits + frac_bits);
        return std::ldexp(double(q), -frac_bits);
    }

    std::string tag_;
    BitWriter writer_;
    double scalar_ = 0.0;
    Eigen::VectorXd vector_;
    Eigen::MatrixXd matrix_;
    std::vector<std::uint64_t> indices_;
};

} // namespace commopt
