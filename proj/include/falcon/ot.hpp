#pragma once

#include <openssl/bn.h>
#include <openssl/ec.h>
#include <openssl/obj_mac.h>

#include "falcon/channel.hpp"
#include "falcon/garble.hpp"
#include "falcon/rng.hpp"

namespace falcon {

enum class OtMode : u8 {
    BaseOt = 0,         // Chou-Orlandi base OT, one per choice bit
    InsecureDealer = 1  // choice bits cross the channel; tests only
};

struct ObliviousTransferConfig {
    OtMode mode = OtMode::BaseOt;
    bool allow_insecure = false;  // must be set explicitly for dealer mode

    void validate() const {
        check(mode != OtMode::InsecureDealer || allow_insecure, ErrorCode::BadArgument,
              "insecure_dealer OT requires the explicit unsafe flag");
    }
};

namespace detail {

struct EcGroup {
    EC_GROUP* group;
    BN_CTX* bn;
    BIGNUM* order;

    EcGroup() {
        group = EC_GROUP_new_by_curve_name(NID_X9_62_prime256v1);
        bn = BN_CTX_new();
        order = BN_new();
        check(group && bn && order, ErrorCode::Crypto, "EC setup failed");
        check(EC_GROUP_get_order(group, order, bn) == 1, ErrorCode::Crypto, "EC order failed");
    }
    ~EcGroup() {
        BN_free(order);
        BN_CTX_free(bn);
        EC_GROUP_free(group);
    }

    BIGNUM* random_scalar(Rng& rng) const {
        u8 buf[48];
        rng.fill(buf, sizeof buf);
        BIGNUM* t = BN_bin2bn(buf, sizeof buf, nullptr);
        BIGNUM* s = BN_new();
        BN_mod(s, t, order, bn);
        BN_free(t);
        return s;
    }

    std::vector<u8> encode(const EC_POINT* p) const {
        size_t len = EC_POINT_point2oct(group, p, POINT_CONVERSION_COMPRESSED, nullptr, 0, bn);
        std::vector<u8> out(len);
        EC_POINT_point2oct(group, p, POINT_CONVERSION_COMPRESSED, out.data(), len, bn);
        return out;
    }

    EC_POINT* decode(const u8* data, size_t len) const {
        EC_POINT* p = EC_POINT_new(group);
        check(EC_POINT_oct2point(group, p, data, len, bn) == 1, ErrorCode::Protocol,
              "bad EC point on the wire");
        return p;
    }

    Block key_from_point(const EC_POINT* p, u64 index) const {
        auto enc = encode(p);
        std::vector<u8> buf = enc;
        put_u64(buf, index);
        Seed32 h = sha256(buf);
        Block b;
        std::memcpy(&b.lo, h.data(), 8);
        std::memcpy(&b.hi, h.data() + 8, 8);
        return b;
    }
};

inline constexpr size_t kPointLen = 33;  // compressed P-256

}  // namespace detail

// Sender side: holds (m0, m1) label pairs; the receiver learns exactly its
// chosen label per pair and the sender learns nothing about the choices.
inline void ot_send(Channel& ch, const std::vector<std::pair<Block, Block>>& pairs,
                    const ObliviousTransferConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.mode == OtMode::InsecureDealer) {
        auto bits = expect_frame(ch, FrameType::OtMsg);
        check(bits.size() == pairs.size(), ErrorCode::Protocol, "dealer OT count mismatch");
        std::vector<u8> out;
        for (size_t i = 0; i < pairs.size(); ++i) {
            const Block& l = bits[i] ? pairs[i].second : pairs[i].first;
            put_u64(out, l.lo);
            put_u64(out, l.hi);
        }
        write_frame(ch, FrameType::OtMsg, out);
        return;
    }

    detail::EcGroup ec;
    BIGNUM* a = ec.random_scalar(rng);
    EC_POINT* A = EC_POINT_new(ec.group);
    check(EC_POINT_mul(ec.group, A, a, nullptr, nullptr, ec.bn) == 1, ErrorCode::Crypto, "EC mul");
    write_frame(ch, FrameType::OtMsg, ec.encode(A));

    auto bs = expect_frame(ch, FrameType::OtMsg);
    check(bs.size() == pairs.size() * detail::kPointLen, ErrorCode::Protocol, "bad OT B points");

    std::vector<u8> out;
    EC_POINT* t = EC_POINT_new(ec.group);
    EC_POINT* negA = EC_POINT_new(ec.group);
    EC_POINT_copy(negA, A);
    EC_POINT_invert(ec.group, negA, ec.bn);
    for (size_t i = 0; i < pairs.size(); ++i) {
        EC_POINT* B = ec.decode(bs.data() + i * detail::kPointLen, detail::kPointLen);
        // k0 = H(a*B), k1 = H(a*(B - A))
        check(EC_POINT_mul(ec.group, t, nullptr, B, a, ec.bn) == 1, ErrorCode::Crypto, "EC mul");
        Block k0 = ec.key_from_point(t, i);
        EC_POINT_add(ec.group, B, B, negA, ec.bn);
        check(EC_POINT_mul(ec.group, t, nullptr, B, a, ec.bn) == 1, ErrorCode::Crypto, "EC mul");
        Block k1 = ec.key_from_point(t, i);
        Block e0 = pairs[i].first ^ k0;
        Block e1 = pairs[i].second ^ k1;
        put_u64(out, e0.lo);
        put_u64(out, e0.hi);
        put_u64(out, e1.lo);
        put_u64(out, e1.hi);
        EC_POINT_free(B);
    }
    write_frame(ch, FrameType::OtMsg, out);
    EC_POINT_free(negA);
    EC_POINT_free(t);
    EC_POINT_free(A);
    BN_free(a);
}

inline std::vector<Block> ot_receive(Channel& ch, const std::vector<bool>& choices,
                                     const ObliviousTransferConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.mode == OtMode::InsecureDealer) {
        std::vector<u8> bits(choices.size());
        for (size_t i = 0; i < choices.size(); ++i) bits[i] = choices[i] ? 1 : 0;
        write_frame(ch, FrameType::OtMsg, bits);
        auto data = expect_frame(ch, FrameType::OtMsg);
        check(data.size() == choices.size() * 16, ErrorCode::Protocol, "dealer OT reply size");
        ByteReader r(data);
        std::vector<Block> out(choices.size());
        for (Block& b : out) {
            b.lo = r.u64le();
            b.hi = r.u64le();
        }
        return out;
    }

    detail::EcGroup ec;
    auto apoint = expect_frame(ch, FrameType::OtMsg);
    EC_POINT* A = ec.decode(apoint.data(), apoint.size());

    std::vector<u8> bs;
    std::vector<BIGNUM*> scalars(choices.size());
    EC_POINT* B = EC_POINT_new(ec.group);
    for (size_t i = 0; i < choices.size(); ++i) {
        scalars[i] = ec.random_scalar(rng);
        check(EC_POINT_mul(ec.group, B, scalars[i], nullptr, nullptr, ec.bn) == 1, ErrorCode::Crypto,
              "EC mul");
        if (choices[i]) EC_POINT_add(ec.group, B, B, A, ec.bn);
        auto enc = ec.encode(B);
        bs.insert(bs.end(), enc.begin(), enc.end());
    }
    write_frame(ch, FrameType::OtMsg, bs);

    auto es = expect_frame(ch, FrameType::OtMsg);
    check(es.size() == choices.size() * 32, ErrorCode::Protocol, "bad OT ciphertexts");
    ByteReader r(es);
    std::vector<Block> out(choices.size());
    EC_POINT* t = EC_POINT_new(ec.group);
    for (size_t i = 0; i < choices.size(); ++i) {
        Block e0{r.u64le(), r.u64le()};
        Block e1{r.u64le(), r.u64le()};
        check(EC_POINT_mul(ec.group, t, nullptr, A, scalars[i], ec.bn) == 1, ErrorCode::Crypto,
              "EC mul");
        Block k = ec.key_from_point(t, i);
        out[i] = (choices[i] ? e1 : e0) ^ k;
        BN_free(scalars[i]);
    }
    EC_POINT_free(t);
    EC_POINT_free(B);
    EC_POINT_free(A);
    return out;
}

}  // namespace falcon
