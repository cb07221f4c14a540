#pragma once

#include <array>
#include <memory>

#include <openssl/evp.h>
#include <openssl/rand.h>
#include <openssl/sha.h>

#include "falcon/common.hpp"

namespace falcon {

using Seed32 = std::array<u8, 32>;

inline Seed32 sha256(const void* data, size_t len) {
    Seed32 out;
    SHA256(static_cast<const u8*>(data), len, out.data());
    return out;
}

inline Seed32 sha256(const std::vector<u8>& data) { return sha256(data.data(), data.size()); }

// Derives an independent sub-seed: SHA-256(seed || label).
inline Seed32 derive_seed(const Seed32& seed, const std::string& label) {
    std::vector<u8> buf(seed.begin(), seed.end());
    buf.insert(buf.end(), label.begin(), label.end());
    return sha256(buf);
}

inline Seed32 seed_from_u64(u64 v) {
    std::vector<u8> buf;
    put_u64(buf, v);
    return sha256(buf);
}

inline Seed32 random_seed() {
    Seed32 s;
    check(RAND_bytes(s.data(), (int)s.size()) == 1, ErrorCode::Crypto, "RAND_bytes failed");
    return s;
}

// Deterministic AES-128-CTR stream keyed by a 32-byte seed.
// The whole artifact draws randomness through this so that fixed seeds give
// byte-identical transcripts.
class Rng {
public:
    explicit Rng(const Seed32& seed) {
        ctx_ = EVP_CIPHER_CTX_new();
        check(ctx_ != nullptr, ErrorCode::Crypto, "EVP ctx alloc failed");
        // Key from the first 16 bytes, IV from the last 16.
        check(EVP_EncryptInit_ex(ctx_, EVP_aes_128_ctr(), nullptr, seed.data(), seed.data() + 16) == 1,
              ErrorCode::Crypto, "AES-CTR init failed");
    }
    ~Rng() { EVP_CIPHER_CTX_free(ctx_); }
    Rng(const Rng&) = delete;
    Rng& operator=(const Rng&) = delete;

    void fill(void* out, size_t n) {
        static const u8 zeros[4096] = {0};
        u8* p = static_cast<u8*>(out);
        while (n > 0) {
            size_t chunk = n < sizeof(zeros) ? n : sizeof(zeros);
            int outl = 0;
            check(EVP_EncryptUpdate(ctx_, p, &outl, zeros, (int)chunk) == 1, ErrorCode::Crypto,
                  "AES-CTR update failed");
            p += outl;
            n -= static_cast<size_t>(outl);
        }
    }

    u64 next_u64() {
        u64 v;
        fill(&v, sizeof v);
        return v;
    }

    // Uniform in [0, bound) by rejection.
    u64 uniform(u64 bound) {
        check(bound > 0, ErrorCode::BadArgument, "uniform bound must be positive");
        u64 limit = UINT64_MAX - UINT64_MAX % bound;
        u64 v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % bound;
    }

    // Uniform signed in [lo, hi].
    i64 uniform_i64(i64 lo, i64 hi) {
        return lo + static_cast<i64>(uniform(static_cast<u64>(hi - lo + 1)));
    }

    double uniform_real(double lo, double hi) {
        return lo + (hi - lo) * (static_cast<double>(next_u64() >> 11) * 0x1.0p-53);
    }

    bool next_bit() { return (next_u64() & 1) != 0; }

    // Centered binomial with eta pairs: sum of eta (b - b') terms, sigma = sqrt(eta/2).
    i64 centered_binomial(unsigned eta) {
        i64 acc = 0;
        unsigned left = eta;
        while (left > 0) {
            unsigned take = left < 32 ? left : 32;
            u64 bits = next_u64();
            for (unsigned i = 0; i < take; ++i) {
                acc += static_cast<i64>((bits >> (2 * i)) & 1);
                acc -= static_cast<i64>((bits >> (2 * i + 1)) & 1);
            }
            left -= take;
        }
        return acc;
    }

private:
    EVP_CIPHER_CTX* ctx_;
};

}  // namespace falcon
