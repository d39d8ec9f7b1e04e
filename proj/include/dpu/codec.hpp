#pragma once

// Server-to-edge wire format.
//
// All integers little-endian. Weight values are IEEE-754 bit patterns of
// value_bits width (32 -> binary32, 64 -> binary64). CRC-32 is the IEEE
// 802.3 polynomial (same as zlib).
//
//   offset  size  field
//   0       1     version (= 1)
//   1       1     frame_type  0 full | 1 sparse | 2 reinit_sparse | 3 skip
//   2       4     round
//   6       4     weight_count I
//
// skip:           10  4  frame_crc                                    (14 bytes)
// full:           10  1  value_bits
//                 11  4  header_crc (bytes 0..10)
//                 15  I * value_bits/8 values
//                 ..  4  frame_crc
// sparse,
// reinit_sparse:  10  1  value_bits
//                 11  4  k_count
//                 15  1  mask_encoding  0 raw_bitmap | 1 block_coded
//                 16  4  mask_bytes
//                 20  8  seed                     (reinit_sparse only)
//                 ..  4  header_crc (all preceding bytes)
//                 ..     mask_bytes mask section
//                 ..     k_count * value_bits/8 values, ascending index order
//                 ..  4  frame_crc (all preceding bytes)
//
// raw_bitmap: bit i of the mask is bit (i % 8) of byte i / 8.
// block_coded: the mask is cut into 16-bit blocks (bit j of block b is mask
// bit 16b + j, zero-padded past I), and each block is written MSB-first with
// a canonical Huffman code built from p = k_count / I: block s has weight
// max(p^popcount(s) * (1-p)^(16-popcount(s)), 2^-20).
//
// Masked weights carry their new absolute values, not increments.

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/crc.hpp>

#include "dpu/error.hpp"
#include "dpu/nn.hpp"
#include "dpu/update.hpp"

namespace dpu {

inline constexpr std::uint8_t kPacketVersion = 1;
inline constexpr std::size_t kSkipFrameBytes = 14;
inline constexpr unsigned kMaskBlockBits = 16;

enum class FrameType : std::uint8_t { full = 0, sparse = 1, reinit_sparse = 2, skip = 3 };
enum class MaskEncoding : std::uint8_t { raw_bitmap = 0, block_coded = 1 };

inline const char* to_string(FrameType t) {
    switch (t) {
        case FrameType::full: return "full";
        case FrameType::sparse: return "sparse";
        case FrameType::reinit_sparse: return "reinit_sparse";
        case FrameType::skip: return "skip";
    }
    return "?";
}

inline const char* to_string(MaskEncoding e) {
    return e == MaskEncoding::raw_bitmap ? "raw_bitmap" : "block_coded";
}

enum class DecodeErrc { truncated_frame, checksum_mismatch, unsupported_version, mask_count_mismatch, malformed_frame };

inline const char* to_string(DecodeErrc e) {
    switch (e) {
        case DecodeErrc::truncated_frame: return "truncated_frame";
        case DecodeErrc::checksum_mismatch: return "checksum_mismatch";
        case DecodeErrc::unsupported_version: return "unsupported_version";
        case DecodeErrc::mask_count_mismatch: return "mask_count_mismatch";
        case DecodeErrc::malformed_frame: return "malformed_frame";
    }
    return "?";
}

class DecodeError : public std::runtime_error {
public:
    DecodeError(DecodeErrc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
    DecodeErrc code() const { return code_; }

private:
    DecodeErrc code_;
};

struct UpdatePacket {
    std::uint8_t version = kPacketVersion;
    FrameType frame_type = FrameType::skip;
    std::uint32_t round = 0;
    std::uint32_t weight_count = 0;
    std::uint8_t value_bits = 32;                         // full and sparse frames
    MaskEncoding mask_encoding = MaskEncoding::raw_bitmap;  // sparse frames
    std::uint64_t seed = 0;                               // reinit_sparse only
    Mask mask;                                            // sparse frames
    std::vector<double> values;                           // already representable at value_bits

    std::uint32_t k_count() const {
        if (frame_type == FrameType::full) return weight_count;
        if (frame_type == FrameType::skip) return 0;
        return static_cast<std::uint32_t>(mask.count());
    }

    bool is_sparse() const { return frame_type == FrameType::sparse || frame_type == FrameType::reinit_sparse; }

    bool operator==(const UpdatePacket& o) const {
        if (version != o.version || frame_type != o.frame_type || round != o.round || weight_count != o.weight_count)
            return false;
        if (frame_type == FrameType::skip) return true;
        if (value_bits != o.value_bits || values.size() != o.values.size()) return false;
        for (std::size_t i = 0; i < values.size(); ++i)
            if (std::bit_cast<std::uint64_t>(values[i]) != std::bit_cast<std::uint64_t>(o.values[i])) return false;
        if (frame_type == FrameType::full) return true;
        if (mask_encoding != o.mask_encoding || !(mask == o.mask)) return false;
        return frame_type != FrameType::reinit_sparse || seed == o.seed;
    }
};

inline std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    boost::crc_32_type crc;
    crc.process_bytes(bytes.data(), bytes.size());
    return crc.checksum();
}

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void value(double v, unsigned bits) {
        if (bits == 32)
            u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        else
            u64(std::bit_cast<std::uint64_t>(v));
    }
    void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void crc() { u32(crc32(buf_)); }
    std::size_t size() const { return buf_.size(); }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

inline std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
    return v;
}

inline std::uint64_t read_u64(std::span<const std::uint8_t> b, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[off + i]) << (8 * i);
    return v;
}

inline double read_value(std::span<const std::uint8_t> b, std::size_t off, unsigned bits) {
    if (bits == 32) return static_cast<double>(std::bit_cast<float>(read_u32(b, off)));
    return std::bit_cast<double>(read_u64(b, off));
}

class BitWriter {
public:
    void put(std::uint32_t code, unsigned len) {
        for (unsigned i = len; i-- > 0;) {
            if (nbits_ % 8 == 0) bytes_.push_back(0);
            if ((code >> i) & 1u) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (nbits_ % 8));
            ++nbits_;
        }
    }
    std::size_t bit_count() const { return nbits_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t nbits_ = 0;
};

class BitReader {
public:
    explicit BitReader(std::span<const std::uint8_t> b) : b_(b) {}
    std::optional<unsigned> next() {
        if (pos_ >= b_.size() * 8) return std::nullopt;
        const unsigned bit = (b_[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
        ++pos_;
        return bit;
    }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

}  // namespace detail

// Canonical Huffman code over 16-bit mask blocks, deterministic in the
// ratio k_count / weight_count.
class BlockCode {
public:
    static constexpr std::size_t kSymbols = std::size_t{1} << kMaskBlockBits;
    static constexpr double kWeightFloor = 0x1.0p-20;

    BlockCode(std::size_t k_count, std::size_t weight_count) {
        detail::require(weight_count >= 1 && k_count <= weight_count, "block code needs 0 <= k_count <= I");
        const double p = static_cast<double>(k_count) / static_cast<double>(weight_count);
        std::array<double, kMaskBlockBits + 1> class_weight{};
        for (unsigned c = 0; c <= kMaskBlockBits; ++c) {
            double w = 1.0;
            for (unsigned j = 0; j < c; ++j) w *= p;
            for (unsigned j = c; j < kMaskBlockBits; ++j) w *= 1.0 - p;
            class_weight[c] = std::max(w, kWeightFloor);
        }
        build_lengths(class_weight);
        assign_codes();
    }

    unsigned length(std::uint32_t symbol) const { return lengths_[symbol]; }
    std::uint32_t code(std::uint32_t symbol) const { return codes_[symbol]; }
    unsigned max_length() const { return max_len_; }

    // Canonical decode, one bit at a time.
    std::optional<std::uint32_t> decode(detail::BitReader& in) const {
        std::uint32_t code = 0;
        for (unsigned len = 1; len <= max_len_; ++len) {
            auto bit = in.next();
            if (!bit) return std::nullopt;
            code = (code << 1) | *bit;
            const std::uint32_t count = count_[len];
            if (count && code >= first_code_[len] && code - first_code_[len] < count)
                return sorted_[first_index_[len] + (code - first_code_[len])];
        }
        return std::nullopt;
    }

private:
    // Leaves ordered by (weight ascending, symbol ascending); two-queue
    // Huffman merge, leaves win ties. Weights depend only on popcount so
    // the leaf order is produced by bucketing instead of sorting.
    void build_lengths(const std::array<double, kMaskBlockBits + 1>& class_weight) {
        std::array<unsigned, kMaskBlockBits + 1> classes{};
        for (unsigned c = 0; c <= kMaskBlockBits; ++c) classes[c] = c;
        std::stable_sort(classes.begin(), classes.end(),
                         [&](unsigned a, unsigned b) { return class_weight[a] < class_weight[b]; });
        std::vector<std::uint32_t> leaves;
        leaves.reserve(kSymbols);
        std::vector<std::uint32_t> by_class[kMaskBlockBits + 1];
        for (std::uint32_t s = 0; s < kSymbols; ++s) by_class[std::popcount(s)].push_back(s);
        // Classes of equal weight must interleave by symbol.
        for (std::size_t i = 0; i <= kMaskBlockBits;) {
            std::size_t j = i;
            while (j <= kMaskBlockBits && class_weight[classes[j]] == class_weight[classes[i]]) ++j;
            const std::size_t start = leaves.size();
            for (std::size_t c = i; c < j; ++c)
                leaves.insert(leaves.end(), by_class[classes[c]].begin(), by_class[classes[c]].end());
            if (j - i > 1) std::sort(leaves.begin() + static_cast<std::ptrdiff_t>(start), leaves.end());
            i = j;
        }

        const std::size_t n = kSymbols;
        std::vector<double> weight(2 * n - 1);
        std::vector<std::uint32_t> parent(2 * n - 1, 0);
        for (std::size_t i = 0; i < n; ++i) weight[i] = class_weight[std::popcount(leaves[i])];
        std::size_t leaf = 0, inner = n, next = n;
        auto pick = [&]() {
            if (leaf < n && (inner >= next || weight[leaf] <= weight[inner])) return leaf++;
            return inner++;
        };
        while (next < 2 * n - 1) {
            const std::size_t a = pick();
            const std::size_t b = pick();
            weight[next] = weight[a] + weight[b];
            parent[a] = parent[b] = static_cast<std::uint32_t>(next);
            ++next;
        }
        std::vector<unsigned> depth(2 * n - 1, 0);
        for (std::size_t i = 2 * n - 1; i-- > 0;)
            if (i != 2 * n - 2) depth[i] = depth[parent[i]] + 1;
        lengths_.assign(n, 0);
        max_len_ = 0;
        for (std::size_t i = 0; i < n; ++i) {
            lengths_[leaves[i]] = depth[i];
            max_len_ = std::max(max_len_, depth[i]);
        }
        if (max_len_ > 31) throw std::logic_error("block code length exceeds 31 bits");
    }

    void assign_codes() {
        sorted_.resize(kSymbols);
        for (std::uint32_t s = 0; s < kSymbols; ++s) sorted_[s] = s;
        std::stable_sort(sorted_.begin(), sorted_.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return lengths_[a] < lengths_[b]; });
        count_.assign(max_len_ + 1, 0);
        for (std::uint32_t s = 0; s < kSymbols; ++s) ++count_[lengths_[s]];
        first_code_.assign(max_len_ + 2, 0);
        first_index_.assign(max_len_ + 2, 0);
        codes_.assign(kSymbols, 0);
        std::uint32_t code = 0;
        std::uint32_t index = 0;
        for (unsigned len = 1; len <= max_len_; ++len) {
            code = (code + (len > 1 ? count_[len - 1] : 0)) << 1;
            if (len == 1) code = 0;
            first_code_[len] = code;
            first_index_[len] = index;
            index += count_[len];
        }
        std::vector<std::uint32_t> next = first_code_;
        for (std::uint32_t s : sorted_) codes_[s] = next[lengths_[s]]++;
    }

    std::vector<unsigned> lengths_;
    std::vector<std::uint32_t> codes_;
    std::vector<std::uint32_t> sorted_;
    std::vector<std::uint32_t> count_;
    std::vector<std::uint32_t> first_code_;
    std::vector<std::uint32_t> first_index_;
    unsigned max_len_ = 0;
};

namespace detail {

inline std::vector<std::uint8_t> encode_raw_mask(const Mask& m) {
    std::vector<std::uint8_t> out((m.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m.test(i)) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    return out;
}

inline std::uint32_t mask_block(const Mask& m, std::size_t b) {
    std::uint32_t s = 0;
    for (unsigned j = 0; j < kMaskBlockBits; ++j) {
        const std::size_t i = b * kMaskBlockBits + j;
        if (i < m.size() && m.test(i)) s |= 1u << j;
    }
    return s;
}

inline std::vector<std::uint8_t> encode_coded_mask(const Mask& m) {
    const BlockCode code(m.count(), m.size());
    BitWriter bw;
    const std::size_t blocks = (m.size() + kMaskBlockBits - 1) / kMaskBlockBits;
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::uint32_t s = mask_block(m, b);
        bw.put(code.code(s), code.length(s));
    }
    return bw.take();
}

inline Mask decode_raw_mask(std::span<const std::uint8_t> bytes, std::size_t n) {
    if (bytes.size() != (n + 7) / 8) throw DecodeError(DecodeErrc::malformed_frame, "raw mask section has wrong length");
    std::vector<std::uint8_t> bits(n);
    for (std::size_t i = 0; i < n; ++i) bits[i] = (bytes[i / 8] >> (i % 8)) & 1u;
    for (std::size_t i = n; i < bytes.size() * 8; ++i)
        if ((bytes[i / 8] >> (i % 8)) & 1u) throw DecodeError(DecodeErrc::malformed_frame, "raw mask padding is not zero");
    return Mask::from_bits(std::move(bits));
}

inline Mask decode_coded_mask(std::span<const std::uint8_t> bytes, std::size_t n, std::size_t k_count) {
    if (k_count > n) throw DecodeError(DecodeErrc::malformed_frame, "k_count exceeds weight count");
    const BlockCode code(k_count, n);
    BitReader br(bytes);
    std::vector<std::uint8_t> bits(n, 0);
    const std::size_t blocks = (n + kMaskBlockBits - 1) / kMaskBlockBits;
    for (std::size_t b = 0; b < blocks; ++b) {
        auto s = code.decode(br);
        if (!s) throw DecodeError(DecodeErrc::malformed_frame, "coded mask section ended early");
        for (unsigned j = 0; j < kMaskBlockBits; ++j) {
            const std::size_t i = b * kMaskBlockBits + j;
            if ((*s >> j) & 1u) {
                if (i >= n) throw DecodeError(DecodeErrc::malformed_frame, "coded mask sets bits past I");
                bits[i] = 1;
            }
        }
    }
    return Mask::from_bits(std::move(bits));
}

inline std::size_t value_bytes(unsigned bits) { return bits / 8; }

}  // namespace detail

inline std::size_t raw_mask_bytes(std::size_t weight_count) { return (weight_count + 7) / 8; }

inline std::size_t coded_mask_bytes(const Mask& m) { return detail::encode_coded_mask(m).size(); }

// Block coding only when strictly smaller than the raw bitmap.
inline MaskEncoding choose_mask_encoding(const Mask& m) {
    return coded_mask_bytes(m) < raw_mask_bytes(m.size()) ? MaskEncoding::block_coded : MaskEncoding::raw_bitmap;
}

// Fixed bytes (headers and checksums) of a frame, excluding mask and values.
inline std::size_t frame_overhead_bytes(FrameType t) {
    switch (t) {
        case FrameType::skip: return kSkipFrameBytes;
        case FrameType::full: return 10 + 1 + 4 + 4;
        case FrameType::sparse: return 20 + 4 + 4;
        case FrameType::reinit_sparse: return 28 + 4 + 4;
    }
    return 0;
}

inline double quantize_value(double v, unsigned bits) {
    return bits == 32 ? static_cast<double>(static_cast<float>(v)) : v;
}

namespace detail {

inline void require_value_bits(unsigned bits) {
    require(bits == 32 || bits == 64, "value width must be 32 or 64 bits");
}

}  // namespace detail

inline UpdatePacket make_skip_packet(std::uint32_t round, std::uint32_t weight_count) {
    UpdatePacket p;
    p.frame_type = FrameType::skip;
    p.round = round;
    p.weight_count = weight_count;
    return p;
}

inline UpdatePacket make_full_packet(std::uint32_t round, const WeightVector& w, unsigned value_bits) {
    detail::require_value_bits(value_bits);
    UpdatePacket p;
    p.frame_type = FrameType::full;
    p.round = round;
    p.weight_count = static_cast<std::uint32_t>(w.size());
    p.value_bits = static_cast<std::uint8_t>(value_bits);
    p.values.reserve(w.size());
    for (double v : w.values()) p.values.push_back(quantize_value(v, value_bits));
    return p;
}

// Sparse frame carrying w_new at the mask positions. With a seed the edge
// first regenerates init_weights(arch, seed).
inline UpdatePacket make_sparse_packet(std::uint32_t round, const WeightVector& w_new, const Mask& mask,
                                       unsigned value_bits, std::optional<std::uint64_t> reinit_seed = std::nullopt) {
    detail::require_value_bits(value_bits);
    detail::require(mask.size() == w_new.size(), "mask length does not match weights");
    UpdatePacket p;
    p.frame_type = reinit_seed ? FrameType::reinit_sparse : FrameType::sparse;
    p.round = round;
    p.weight_count = static_cast<std::uint32_t>(w_new.size());
    p.value_bits = static_cast<std::uint8_t>(value_bits);
    p.seed = reinit_seed.value_or(0);
    p.mask = mask;
    p.mask_encoding = choose_mask_encoding(mask);
    p.values.reserve(mask.count());
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask.test(i)) p.values.push_back(quantize_value(w_new[i], value_bits));
    return p;
}

inline UpdatePacket make_packet(std::uint32_t round, const PartialUpdateResult& r, unsigned value_bits,
                                std::optional<std::uint64_t> reinit_seed = std::nullopt) {
    return make_sparse_packet(round, r.w_new, r.mask, value_bits, reinit_seed);
}

inline std::vector<std::uint8_t> encode_packet(const UpdatePacket& p) {
    detail::ByteWriter w;
    w.u8(p.version);
    w.u8(static_cast<std::uint8_t>(p.frame_type));
    w.u32(p.round);
    w.u32(p.weight_count);
    if (p.frame_type == FrameType::skip) {
        w.crc();
        return w.take();
    }
    detail::require_value_bits(p.value_bits);
    w.u8(p.value_bits);
    if (p.frame_type == FrameType::full) {
        detail::require(p.values.size() == p.weight_count, "full frame needs one value per weight");
        w.crc();
        for (double v : p.values) w.value(v, p.value_bits);
        w.crc();
        return w.take();
    }
    detail::require(p.is_sparse(), "unknown frame type");
    detail::require(p.mask.size() == p.weight_count, "mask length does not match weight count");
    detail::require(p.mask.count() <= p.weight_count, "k_count exceeds weight count");
    detail::require(p.values.size() == p.mask.count(), "sparse frame needs one value per mask bit");
    const std::vector<std::uint8_t> mask_bytes = p.mask_encoding == MaskEncoding::raw_bitmap
                                                     ? detail::encode_raw_mask(p.mask)
                                                     : detail::encode_coded_mask(p.mask);
    w.u32(static_cast<std::uint32_t>(p.mask.count()));
    w.u8(static_cast<std::uint8_t>(p.mask_encoding));
    w.u32(static_cast<std::uint32_t>(mask_bytes.size()));
    if (p.frame_type == FrameType::reinit_sparse) w.u64(p.seed);
    w.crc();
    w.bytes(mask_bytes);
    for (double v : p.values) w.value(v, p.value_bits);
    w.crc();
    return w.take();
}

// Rejects, in order: frames too short to hold a header (truncated_frame),
// damaged headers or bodies (checksum_mismatch), intact headers whose
// declared length exceeds the buffer (truncated_frame), unknown versions,
// and masks whose population disagrees with k_count. A 14-byte buffer that
// fails its checksum is reported as checksum_mismatch even when it is the
// prefix of a longer frame.
inline UpdatePacket decode_packet(std::span<const std::uint8_t> b) {
    using detail::read_u32;
    const std::size_t n = b.size();
    if (n < kSkipFrameBytes) throw DecodeError(DecodeErrc::truncated_frame, "frame shorter than 14 bytes");

    auto frame_crc_ok = [&] { return crc32(b.first(n - 4)) == read_u32(b, n - 4); };

    UpdatePacket p;
    p.version = b[0];
    const std::uint8_t type = b[1];
    p.round = read_u32(b, 2);
    p.weight_count = read_u32(b, 6);

    std::size_t header_len;  // bytes before header_crc
    switch (type) {
        case 0: header_len = 11; break;
        case 1: header_len = 20; break;
        case 2: header_len = 28; break;
        case 3: header_len = 10; break;
        default:
            if (!frame_crc_ok()) throw DecodeError(DecodeErrc::checksum_mismatch, "frame checksum mismatch");
            throw DecodeError(DecodeErrc::malformed_frame, "unknown frame type " + std::to_string(type));
    }

    if (type == 3) {
        if (n != kSkipFrameBytes) {
            if (!frame_crc_ok()) throw DecodeError(DecodeErrc::checksum_mismatch, "frame checksum mismatch");
            throw DecodeError(DecodeErrc::malformed_frame, "skip frame must be 14 bytes");
        }
        if (!frame_crc_ok()) throw DecodeError(DecodeErrc::checksum_mismatch, "frame checksum mismatch");
        if (p.version != kPacketVersion)
            throw DecodeError(DecodeErrc::unsupported_version, "version " + std::to_string(p.version));
        p.frame_type = FrameType::skip;
        return p;
    }

    if (n < header_len + 4) {
        if (n == kSkipFrameBytes) throw DecodeError(DecodeErrc::checksum_mismatch, "frame checksum mismatch");
        throw DecodeError(DecodeErrc::truncated_frame, "header incomplete");
    }
    if (crc32(b.first(header_len)) != read_u32(b, header_len))
        throw DecodeError(DecodeErrc::checksum_mismatch, "header checksum mismatch");
    if (p.version != kPacketVersion)
        throw DecodeError(DecodeErrc::unsupported_version, "version " + std::to_string(p.version));

    p.frame_type = static_cast<FrameType>(type);
    p.value_bits = b[10];
    if (p.value_bits != 32 && p.value_bits != 64)
        throw DecodeError(DecodeErrc::malformed_frame, "value width " + std::to_string(p.value_bits));
    const std::size_t vb = detail::value_bytes(p.value_bits);
    const std::size_t body = header_len + 4;

    std::size_t k_count = p.weight_count, mask_len = 0;
    if (p.is_sparse()) {
        k_count = read_u32(b, 11);
        if (b[15] > 1) throw DecodeError(DecodeErrc::malformed_frame, "unknown mask encoding");
        p.mask_encoding = static_cast<MaskEncoding>(b[15]);
        mask_len = read_u32(b, 16);
        if (p.frame_type == FrameType::reinit_sparse) p.seed = detail::read_u64(b, 20);
        if (k_count > p.weight_count) throw DecodeError(DecodeErrc::malformed_frame, "k_count exceeds weight count");
    }
    const std::size_t expected = body + mask_len + k_count * vb + 4;
    if (n < expected) throw DecodeError(DecodeErrc::truncated_frame, "frame shorter than declared length");
    if (n > expected) {
        if (!frame_crc_ok()) throw DecodeError(DecodeErrc::checksum_mismatch, "frame checksum mismatch");
        throw DecodeError(DecodeErrc::malformed_frame, "trailing bytes after frame");
    }
    if (!frame_crc_ok()) throw DecodeError(DecodeErrc::checksum_mismatch, "frame checksum mismatch");

    if (p.is_sparse()) {
        const auto section = b.subspan(body, mask_len);
        p.mask = p.mask_encoding == MaskEncoding::raw_bitmap ? detail::decode_raw_mask(section, p.weight_count)
                                                             : detail::decode_coded_mask(section, p.weight_count, k_count);
        if (p.mask.count() != k_count)
            throw DecodeError(DecodeErrc::mask_count_mismatch,
                              "mask has " + std::to_string(p.mask.count()) + " ones, k_count is " + std::to_string(k_count));
    }
    p.values.resize(k_count);
    const std::size_t voff = body + mask_len;
    for (std::size_t j = 0; j < k_count; ++j) p.values[j] = detail::read_value(b, voff + j * vb, p.value_bits);
    return p;
}

// Edge-side application of a decoded packet.
inline WeightVector apply_packet(const WeightVector& deployed, const UpdatePacket& p, const Architecture& arch) {
    detail::require(p.weight_count == arch.weight_count(), "packet weight count does not match architecture");
    switch (p.frame_type) {
        case FrameType::skip:
            detail::require(deployed.arch() == arch, "deployed weights do not match architecture");
            return deployed;
        case FrameType::full:
            return WeightVector(arch, p.values);
        case FrameType::sparse:
        case FrameType::reinit_sparse: {
            WeightVector out = p.frame_type == FrameType::reinit_sparse ? init_weights(arch, p.seed) : deployed;
            detail::require(out.arch() == arch, "deployed weights do not match architecture");
            std::size_t j = 0;
            for (std::size_t i = 0; i < p.mask.size(); ++i)
                if (p.mask.test(i)) out[i] = p.values[j++];
            return out;
        }
    }
    throw InputError("unknown frame type");
}

}  // namespace dpu
