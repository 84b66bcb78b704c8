#pragma once

// Canonical bit-level serialization.  Identical payload => identical bits,
// so ledger charges are a pure function of payload shape and entry widths.
//
// Unsigned varints use an Elias-gamma-style length prefix: gamma(bitlen)
// followed by the value's bits below the leading one.  Cost for value v:
//   len(v+1) + 2*floor(log2(len(v+1))) bits.
// Signed varints are zigzag-mapped first.

#include <cstdint>
#include <vector>
#include <stdexcept>

namespace commopt {

class BitWriter {
public:
    void put_bit(bool b) { put_uint(b ? 1u : 0u, 1); }

    // low `width` bits of v, LSB first
    void put_uint(std::uint64_t v, int width) {
        if (width < 64) v &= (std::uint64_t(1) << width) - 1;
        const std::size_t need = (nbits_ + std::size_t(width) + 7) / 8;
        if (need > data_.size()) data_.resize(need, 0);
        int off = int(nbits_ % 8);
        std::size_t byte = nbits_ / 8;
        nbits_ += std::size_t(width);
        while (width > 0) {
            data_[byte] |= std::uint8_t(v << off);
            const int used = 8 - off;
            v >>= used;
            width -= used;
            off = 0;
            ++byte;
        }
    }

    void put_gamma(std::uint64_t n) { // n >= 1
        if (n == 0) throw std::invalid_argument("gamma code needs n >= 1");
        const int len = 64 - __builtin_clzll(n);
        put_uint(0, len - 1);
        // emit n's bits MSB first
        for (int i = len - 1; i >= 0; --i) put_uint((n >> i) & 1u, 1);
    }

    // length-prefixed code for arbitrary v >= 0 (Elias-delta shape)
    void put_varint(std::uint64_t v) {
        const std::uint64_t n = v + 1;
        const int len = 64 - __builtin_clzll(n | 1);
        put_gamma(std::uint64_t(len));
        for (int i = len - 2; i >= 0; --i) put_uint((n >> i) & 1u, 1);
    }

    void put_svarint(std::int64_t v) {
        const std::uint64_t zz = (std::uint64_t(v) << 1) ^ std::uint64_t(v >> 63);
        put_varint(zz);
    }

    std::size_t size_bits() const { return nbits_; }
    const std::vector<std::uint8_t>& bytes() const { return data_; }

    bool operator==(const BitWriter& o) const {
        return nbits_ == o.nbits_ && data_ == o.data_;
    }

private:
    std::vector<std::uint8_t> data_;
    std::size_t nbits_ = 0;
};

class BitReader {
public:
    BitReader(const std::vector<std::uint8_t>& data, std::size_t nbits)
        : data_(data), nbits_(nbits) {}

    bool get_bit() {
        if (pos_ >= nbits_) throw std::out_of_range("bit stream exhausted");
        const bool b = (data_[pos_ / 8] >> (pos_ % 8)) & 1u;
        ++pos_;
        return b;
    }

    std::uint64_t get_uint(int width) {
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i)
            if (get_bit()) v |= (std::uint64_t(1) << i);
        return v;
    }

    std::uint64_t get_gamma() {
        int zeros = 0;
        while (!get_bit()) ++zeros;
        std::uint64_t n = 1;
        for (int i = 0; i < zeros; ++i) n = (n << 1) | (get_bit() ? 1u : 0u);
        return n;
    }

    std::uint64_t get_varint() {
        const int len = int(get_gamma());
        std::uint64_t n = 1;
        for (int i = 0; i < len - 1; ++i) n = (n << 1) | (get_bit() ? 1u : 0u);
        return n - 1;
    }

    std::int64_t get_svarint() {
        const std::uint64_t zz = get_varint();
        return std::int64_t(zz >> 1) ^ -std::int64_t(zz & 1);
    }

private:
    const std::vector<std::uint8_t>& data_;
    std::size_t nbits_;
    std::size_t pos_ = 0;
};

// Cost helpers (pure functions of the value, used in wire-bound assertions).
namespace bitcost {

inline std::size_t gamma(std::uint64_t n) {
    const int len = 64 - __builtin_clzll(n | 1);
    return std::size_t(2 * len - 1);
}

inline std::size_t varint(std::uint64_t v) {
    const std::uint64_t n = v + 1;
    const int len = 64 - __builtin_clzll(n | 1);
    return gamma(std::uint64_t(len)) + std::size_t(len - 1);
}

inline std::size_t svarint(std::int64_t v) {
    const std::uint64_t zz = (std::uint64_t(v) << 1) ^ std::uint64_t(v >> 63);
    return varint(zz);
}

} // namespace bitcost
} // namespace commopt
