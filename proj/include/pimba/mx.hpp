#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

#include "pimba/rounding.hpp"

namespace pimba {

// MX8 block floating point group: 16 values share an 8-bit exponent (bias
// 127), each consecutive pair shares a 1-bit microexponent, and every element
// carries a sign and a 6-bit unsigned mantissa (no implicit bit).
//
// Decoded value of element i:
//   v_i = (-1)^s_i * m_i * 2^(E - 127 - mu_{i/2} - 6)
// The microexponent scales the pair DOWN (mu=1 halves the pair's scale).
struct MXGroup {
    static constexpr int kElems = 16;
    static constexpr int kPairs = 8;
    static constexpr int kMantBits = 6;
    static constexpr int kBias = 127;
    static constexpr int kEncodedBytes = 16;  // 128 bits exactly

    uint8_t shared_exponent = 0;
    uint8_t micro_exponents = 0;  // pair p in bit p
    uint16_t sign_bits = 0;       // element i in bit i
    std::array<uint8_t, kElems> mantissas{};

    int mu(int pair) const { return (micro_exponents >> pair) & 1; }
    int mu_of(int elem) const { return mu(elem / 2); }
    int sign(int elem) const { return (sign_bits >> elem) & 1; }
    void set_mu(int pair, int v) {
        micro_exponents = static_cast<uint8_t>(
            (micro_exponents & ~(1u << pair)) | (static_cast<unsigned>(v & 1) << pair));
    }
    void set_sign(int elem, int s) {
        sign_bits = static_cast<uint16_t>(
            (sign_bits & ~(1u << elem)) | (static_cast<unsigned>(s & 1) << elem));
    }

    bool is_zero() const {
        for (uint8_t m : mantissas)
            if (m != 0) return false;
        return true;
    }

    static MXGroup canonical_zero() { return MXGroup{}; }

    // log2 of element i's scale: E - 127 - mu - 6.
    int scale_log2(int elem) const {
        return static_cast<int>(shared_exponent) - kBias - mu_of(elem) - kMantBits;
    }

    bool operator==(const MXGroup& o) const = default;

    // Bit-exact wire format, little endian: byte 0 = shared exponent, byte 1 =
    // microexponents (pair 0 in bit 0), bytes 2-15 = 16 packed 7-bit fields in
    // index order, laid out LSB first; within a field the mantissa occupies
    // bits 0-5 and the sign bit 6.
    std::array<std::byte, kEncodedBytes> to_bytes() const;
    static MXGroup from_bytes(std::span<const std::byte, kEncodedBytes> bytes);
};

std::array<double, MXGroup::kElems> dequantize_mx(const MXGroup& g);

// Encodes 16 finite reals. E = 127 + floor(log2 max|x|) + 1, adjusted so the
// largest element's mantissa keeps its top bit set (or E is already at its
// minimum); mu per pair = min(1, E - pair scale), demoted where it would
// overflow the mantissa. Throws std::invalid_argument("non-finite input").
MXGroup quantize_mx(std::span<const double, MXGroup::kElems> x, Rounder& rm,
                    MxFlags* flags = nullptr);

// Element-wise product. Result exponent E_a + E_b - 127 saturating to [0,255]
// with sticky flags; pair microexponents add, clamping to 1 with a one-bit
// right shift of that pair's product mantissas; element mantissa is the
// rounded top 6 bits of the 12-bit product; signs xor.
MXGroup mx_multiply(const MXGroup& a, const MXGroup& b, Rounder& rm,
                    MxFlags* flags = nullptr);

// Element-wise sum. Result exponent max(E_a, E_b) (+1 on mantissa overflow,
// group-uniform renormalization); the smaller-exponent group shifts right by
// the exponent difference and every mantissa additionally shifts by its own
// microexponent; shifted-out bits are kept as a 16-bit fraction and rounded
// per rm. Result microexponents are always zero.
MXGroup mx_add(const MXGroup& a, const MXGroup& b, Rounder& rm,
               MxFlags* flags = nullptr);

// Exact dot product: 32-bit signed fixed-point accumulation at the max
// operand scale, converted to double at the end. Bit-deterministic.
double mx_dot(const MXGroup& a, const MXGroup& b, MxFlags* flags = nullptr);

}  // namespace pimba
