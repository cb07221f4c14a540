#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace falcon {

using u8 = std::uint8_t;
using u32 = std::uint32_t;
using u64 = std::uint64_t;
using i64 = std::int64_t;
using u128 = unsigned __int128;
using i128 = __int128;

enum class ErrorCode {
    Protocol = 1,
    Crypto = 2,
    Capacity = 3,
    BadArgument = 4,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

inline void check(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) throw Error(code, what);
}

// ---- modular arithmetic on word-sized moduli ----

inline u64 add_mod(u64 a, u64 b, u64 m) {
    u64 s = a + b;
    return s >= m ? s - m : s;
}

inline u64 sub_mod(u64 a, u64 b, u64 m) { return a >= b ? a - b : a + m - b; }

inline u64 mul_mod(u64 a, u64 b, u64 m) { return static_cast<u64>((u128)a * b % m); }

inline u64 pow_mod(u64 base, u64 exp, u64 m) {
    u64 r = 1 % m;
    base %= m;
    while (exp) {
        if (exp & 1) r = mul_mod(r, base, m);
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    return r;
}

// m must be prime.
inline u64 inv_mod(u64 a, u64 m) { return pow_mod(a % m, m - 2, m); }

// Signed lift of x in [0,m) to (-m/2, m/2].
inline i64 signed_lift(u64 x, u64 m) {
    return x > m / 2 ? static_cast<i64>(x) - static_cast<i64>(m) : static_cast<i64>(x);
}

inline u64 from_signed(i64 v, u64 m) {
    i64 r = v % static_cast<i64>(m);
    if (r < 0) r += static_cast<i64>(m);
    return static_cast<u64>(r);
}

// Round half away from zero.
inline i64 round_half_away(double v) {
    return static_cast<i64>(v >= 0 ? v + 0.5 : v - 0.5);
}

// floor(v / 2^s) on signed values; matches arithmetic shift semantics.
inline i64 floor_shift(i64 v, unsigned s) { return v >> s; }

inline bool is_power_of_two(u64 x) { return x != 0 && (x & (x - 1)) == 0; }

inline unsigned bit_length(u64 x) {
    unsigned n = 0;
    while (x) {
        ++n;
        x >>= 1;
    }
    return n;
}

// ---- little-endian byte IO ----

inline void put_u32(std::vector<u8>& out, u32 v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<u8>(v >> (8 * i)));
}

inline void put_u64(std::vector<u8>& out, u64 v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<u8>(v >> (8 * i)));
}

class ByteReader {
public:
    explicit ByteReader(const std::vector<u8>& buf) : buf_(buf) {}

    u32 u32le() {
        need(4);
        u32 v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<u32>(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    u64 u64le() {
        need(8);
        u64 v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<u64>(buf_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    std::vector<u8> bytes(size_t n) {
        need(n);
        std::vector<u8> out(buf_.begin() + pos_, buf_.begin() + pos_ + n);
        pos_ += n;
        return out;
    }

    size_t remaining() const { return buf_.size() - pos_; }
    bool done() const { return pos_ == buf_.size(); }

private:
    void need(size_t n) const {
        check(pos_ + n <= buf_.size(), ErrorCode::Protocol, "truncated message");
    }
    const std::vector<u8>& buf_;
    size_t pos_ = 0;
};

}  // namespace falcon
