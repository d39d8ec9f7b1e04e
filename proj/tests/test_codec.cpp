#include <gtest/gtest.h>

#include <cstring>
#include <string>

#include "support.hpp"

using namespace dpu;

namespace {

DecodeErrc decode_error(std::span<const std::uint8_t> bytes) {
    try {
        decode_packet(bytes);
    } catch (const DecodeError& e) {
        return e.code();
    }
    ADD_FAILURE() << "frame decoded without error";
    return DecodeErrc::malformed_frame;
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t off, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b[off + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

void reseal(std::vector<std::uint8_t>& b) {
    put_u32(b, b.size() - 4, crc32(std::span<const std::uint8_t>(b).first(b.size() - 4)));
}

UpdatePacket random_packet(Rng& rng) {
    const auto I = static_cast<std::uint32_t>(1 + rng.below(3000));
    const unsigned bits = rng.below(2) ? 32 : 64;
    const auto round = static_cast<std::uint32_t>(rng.below(1000));
    const std::size_t type = rng.below(4);
    std::vector<double> v(I);
    for (double& x : v) x = rng.normal() * std::pow(10.0, double(rng.below(7)) - 3.0);
    if (type == 3) return make_skip_packet(round, I);
    UpdatePacket p;
    p.round = round;
    p.weight_count = I;
    p.value_bits = static_cast<std::uint8_t>(bits);
    if (type == 0) {
        p.frame_type = FrameType::full;
        for (double x : v) p.values.push_back(quantize_value(x, bits));
        return p;
    }
    p.frame_type = type == 1 ? FrameType::sparse : FrameType::reinit_sparse;
    if (type == 2) p.seed = rng.next_u64();
    const double k = rng.uniform();
    p.mask = uniform_random_mask(I, static_cast<std::size_t>(k * k * I), rng.next_u64());
    p.mask_encoding = rng.below(2) ? MaskEncoding::block_coded : MaskEncoding::raw_bitmap;
    for (std::size_t i = 0; i < I; ++i)
        if (p.mask.test(i)) p.values.push_back(quantize_value(v[i], bits));
    return p;
}

std::size_t raw_mode_size(const UpdatePacket& p) {
    return frame_overhead_bytes(p.frame_type) + raw_mask_bytes(p.weight_count) + p.k_count() * p.value_bits / 8;
}

}  // namespace

TEST(Crc32, StandardCheckValue) {
    const std::string s = "123456789";
    EXPECT_EQ(crc32(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())), 0xCBF43926u);
}

TEST(Codec, SkipFrameIsFourteenBytes) {
    const auto bytes = encode_packet(make_skip_packet(3, 1251));
    EXPECT_EQ(bytes.size(), 14u);
    EXPECT_EQ(bytes.size(), kSkipFrameBytes);
    const UpdatePacket p = decode_packet(bytes);
    EXPECT_EQ(p.frame_type, FrameType::skip);
    EXPECT_EQ(p.round, 3u);
    EXPECT_EQ(p.weight_count, 1251u);
}

TEST(Codec, RawMaskSectionForHalfMask) {
    std::vector<std::uint8_t> bits(64, 0);
    for (std::size_t i = 0; i < 32; ++i) bits[i] = 1;
    const WeightVector w = testing_support::random_weights(Architecture({31, 2}), 1);
    ASSERT_EQ(w.size(), 64u);
    UpdatePacket p = make_sparse_packet(1, w, Mask::from_bits(bits), 32);
    p.mask_encoding = MaskEncoding::raw_bitmap;
    const auto bytes = encode_packet(p);
    EXPECT_EQ(raw_mask_bytes(64), 8u);
    EXPECT_EQ(bytes.size(), frame_overhead_bytes(FrameType::sparse) + 8 + 32 * 32 / 8);
    const std::size_t mask_at = frame_overhead_bytes(FrameType::sparse) - 4;
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(bytes[mask_at + i], i < 4 ? 0xFF : 0x00);
}

TEST(Codec, FullFrameSize) {
    const WeightVector w = init_weights(Architecture({2, 32, 32, 3}), 1);
    EXPECT_EQ(encode_packet(make_full_packet(1, w, 32)).size(), frame_overhead_bytes(FrameType::full) + 4 * 1251);
    EXPECT_EQ(encode_packet(make_full_packet(1, w, 64)).size(), frame_overhead_bytes(FrameType::full) + 8 * 1251);
}

TEST(Codec, RandomRoundtrip) {
    Rng rng(2024);
    for (int i = 0; i < 1000; ++i) {
        const UpdatePacket p = random_packet(rng);
        const UpdatePacket q = decode_packet(encode_packet(p));
        EXPECT_TRUE(q == p) << "packet " << i;
    }
}

TEST(Codec, EverySingleByteFlipIsDetected) {
    Rng rng(7);
    for (int i = 0; i < 12; ++i) {
        const auto bytes = encode_packet(random_packet(rng));
        for (std::size_t pos = 0; pos < bytes.size(); ++pos) {
            for (std::uint8_t flip : {std::uint8_t{0x01}, std::uint8_t{0x80}, static_cast<std::uint8_t>(1 + rng.below(255))}) {
                auto bad = bytes;
                bad[pos] ^= flip;
                EXPECT_EQ(decode_error(bad), DecodeErrc::checksum_mismatch) << "packet " << i << " byte " << pos;
            }
        }
    }
}

TEST(Codec, TruncationIsReported) {
    EXPECT_EQ(decode_error({}), DecodeErrc::truncated_frame);
    const WeightVector w = init_weights(Architecture({3, 4, 2}), 1);
    const auto bytes = encode_packet(make_sparse_packet(1, w, uniform_random_mask(w.size(), 5, 1), 32, 99u));
    for (std::size_t n = 0; n < bytes.size(); ++n) {
        const DecodeErrc e = decode_error(std::span(bytes).first(n));
        if (n == kSkipFrameBytes)
            EXPECT_EQ(e, DecodeErrc::checksum_mismatch);
        else
            EXPECT_EQ(e, DecodeErrc::truncated_frame) << n;
    }
}

TEST(Codec, TrailingBytesAreRejected) {
    auto bytes = encode_packet(make_skip_packet(1, 10));
    bytes.push_back(0);
    EXPECT_EQ(decode_error(bytes), DecodeErrc::checksum_mismatch);
    auto full = encode_packet(make_full_packet(1, init_weights(Architecture({2, 2}), 1), 32));
    full.insert(full.end() - 4, 4, 0);
    reseal(full);
    EXPECT_EQ(decode_error(full), DecodeErrc::malformed_frame);
}

TEST(Codec, UnsupportedVersion) {
    UpdatePacket p = make_full_packet(1, init_weights(Architecture({2, 2}), 1), 32);
    p.version = 2;
    EXPECT_EQ(decode_error(encode_packet(p)), DecodeErrc::unsupported_version);
    UpdatePacket s = make_skip_packet(1, 6);
    s.version = 0;
    EXPECT_EQ(decode_error(encode_packet(s)), DecodeErrc::unsupported_version);
}

TEST(Codec, MaskCountMismatch) {
    const WeightVector w = init_weights(Architecture({3, 4, 2}), 1);
    UpdatePacket p = make_sparse_packet(1, w, Mask::from_bits(std::vector<std::uint8_t>(w.size(), 0)), 32);
    p.mask = Mask::filled(w.size(), false);
    p.values.clear();
    p.mask_encoding = MaskEncoding::raw_bitmap;
    auto bytes = encode_packet(p);
    bytes[frame_overhead_bytes(FrameType::sparse) - 4] = 0x01;  // one mask bit, k_count still 0
    reseal(bytes);
    EXPECT_EQ(decode_error(bytes), DecodeErrc::mask_count_mismatch);
}

TEST(Codec, CountAboveWeightCountIsRejected) {
    const WeightVector w = init_weights(Architecture({3, 4, 2}), 1);
    UpdatePacket p = make_sparse_packet(1, w, uniform_random_mask(w.size(), 3, 1), 32);
    p.values.push_back(1.0);
    EXPECT_THROW(encode_packet(p), InputError);

    auto bytes = encode_packet(make_sparse_packet(1, w, uniform_random_mask(w.size(), 3, 1), 32));
    put_u32(bytes, 11, static_cast<std::uint32_t>(w.size() + 1));
    put_u32(bytes, 20, crc32(std::span<const std::uint8_t>(bytes).first(20)));
    EXPECT_EQ(decode_error(bytes), DecodeErrc::malformed_frame);
}

TEST(Codec, CodedModeNeverExceedsRawMode) {
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        const std::size_t I = 1 + rng.below(5000);
        const std::size_t count = rng.below(I + 1);
        const WeightVector w(Architecture({I, 1}), std::vector<double>(I + 1, 0.5));
        const Mask m = uniform_random_mask(w.size(), std::min(count, w.size()), rng.next_u64());
        const UpdatePacket p = make_sparse_packet(1, w, m, 32);
        const auto bytes = encode_packet(p);
        EXPECT_LE(bytes.size(), raw_mode_size(p));
        if (p.mask_encoding == MaskEncoding::raw_bitmap) {
            EXPECT_EQ(bytes.size(), raw_mode_size(p));
        }
    }
}

TEST(Codec, CodedMaskNearEntropyAtLowRatio) {
    const std::size_t I = 100000;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Mask m = uniform_random_mask(I, target_k_count(I, 0.01), seed);
        const double bits = 8.0 * double(coded_mask_bytes(m));
        EXPECT_GE(bits, 0.0808 * I);
        EXPECT_LE(bits, 0.12 * I);
        EXPECT_EQ(choose_mask_encoding(m), MaskEncoding::block_coded);
    }
}

TEST(Codec, CodedMaskWithinEntropyAndRawBounds) {
    const std::size_t I = 20000;
    for (double k : {0.01, 0.05, 0.1}) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const Mask m = uniform_random_mask(I, target_k_count(I, k), seed);
            const double bits = 8.0 * double(coded_mask_bytes(m));
            EXPECT_GE(bits, index_entropy(k) * I);
            EXPECT_LE(bits, I + 8.0 * frame_overhead_bytes(FrameType::sparse));
        }
    }
}

TEST(Codec, EncodedRatioTracksClosedForm) {
    // Large I so that headers are negligible; block coding costs slightly
    // more than the entropy bound.
    const std::size_t I = 100000;
    const WeightVector w(Architecture({I - 1, 1}), std::vector<double>(I, 0.25));
    const Mask m = uniform_random_mask(I, target_k_count(I, 0.1), 3);
    const double sparse = double(encode_packet(make_sparse_packet(2, w, m, 32)).size());
    const double full = double(encode_packet(make_full_packet(2, w, 32)).size());
    EXPECT_NEAR(sparse / full, 0.1147, 0.002);
}

TEST(Codec, BlockCodeIsCanonicalAndBounded) {
    for (double k : {1e-5, 0.01, 0.1, 0.5, 0.9, 1.0}) {
        const std::size_t I = 1000;
        const BlockCode code(static_cast<std::size_t>(k * I), I);
        EXPECT_LE(code.max_length(), 31u);
        double kraft = 0.0;
        for (std::uint32_t s = 0; s < BlockCode::kSymbols; ++s) kraft += std::ldexp(1.0, -int(code.length(s)));
        EXPECT_DOUBLE_EQ(kraft, 1.0);
    }
}

TEST(ApplyPacket, SkipIsIdentity) {
    const Architecture a({3, 4, 2});
    const WeightVector w = testing_support::random_weights(a, 3);
    EXPECT_TRUE(apply_packet(w, decode_packet(encode_packet(make_skip_packet(1, a.weight_count()))), a).bit_equal(w));
}

TEST(ApplyPacket, ServerWeightsReachEdgeExactlyAt64Bits) {
    const Architecture a({3, 4, 2});
    const WeightVector deployed = testing_support::random_weights(a, 3), server = testing_support::random_weights(a, 4);
    const Mask m = uniform_random_mask(a.weight_count(), 7, 2);
    const WeightVector target = rewind(deployed, server, m);
    const auto p = decode_packet(encode_packet(make_sparse_packet(5, target, m, 64)));
    EXPECT_TRUE(apply_packet(deployed, p, a).bit_equal(target));
    const auto f = decode_packet(encode_packet(make_full_packet(5, server, 64)));
    EXPECT_TRUE(apply_packet(deployed, f, a).bit_equal(server));
}

TEST(ApplyPacket, ThirtyTwoBitTransportRoundsOnly) {
    const Architecture a({3, 4, 2});
    const WeightVector deployed = testing_support::random_weights(a, 3), server = testing_support::random_weights(a, 4);
    const auto f = decode_packet(encode_packet(make_full_packet(5, server, 32)));
    const WeightVector edge = apply_packet(deployed, f, a);
    for (std::size_t i = 0; i < a.weight_count(); ++i) {
        EXPECT_EQ(edge[i], static_cast<double>(static_cast<float>(server[i])));
        EXPECT_NEAR(edge[i], server[i], 1e-7 * std::abs(server[i]) + 1e-45);
    }
}

TEST(ApplyPacket, ReinitWithEmptyMaskGivesInitWeights) {
    const Architecture a({3, 4, 2});
    const WeightVector deployed = testing_support::random_weights(a, 3);
    const auto p = decode_packet(encode_packet(make_sparse_packet(1, deployed, Mask::filled(a.weight_count(), false), 32, 42u)));
    EXPECT_EQ(p.k_count(), 0u);
    EXPECT_TRUE(apply_packet(deployed, p, a).bit_equal(init_weights(a, 42)));
}

TEST(ApplyPacket, ArchitectureMismatchIsRejected) {
    const Architecture a({3, 4, 2}), b({3, 5, 2});
    const WeightVector w = init_weights(a, 1);
    EXPECT_THROW(apply_packet(w, make_skip_packet(1, b.weight_count()), b), InputError);
    EXPECT_THROW(apply_packet(w, make_full_packet(1, w, 32), b), InputError);
}

TEST(Codec, InvalidValueWidthIsRejected) {
    const WeightVector w = init_weights(Architecture({2, 2}), 1);
    EXPECT_THROW(make_full_packet(1, w, 16), InputError);
    EXPECT_THROW(make_sparse_packet(1, w, Mask::filled(w.size(), true), 8), InputError);
}
