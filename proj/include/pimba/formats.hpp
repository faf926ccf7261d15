#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pimba/mx.hpp"
#include "pimba/rounding.hpp"

namespace pimba {

enum class Format : uint8_t { Fp16, E4m3, E5m2, Int8Group, Mx8 };

const char* format_name(Format f);
Format format_from_name(const std::string& name);

// Encoded width per state element, the area proxy used by the pareto report.
double bits_per_element(Format f);

// Largest encodable magnitude (saturation point). Group-scaled formats are
// effectively unbounded at workload scales.
double format_max_magnitude(Format f);

// Minifloat codec. e4m3: 1/4/3, bias 7; e5m2: 1/5/2, bias 15. Subnormals are
// kept; overflow saturates to the max finite magnitude (PIM datapaths carry
// no infinities or NaNs).
uint8_t fp8_encode(double v, int exp_bits, int mant_bits, Rounder& rm);
double fp8_decode(uint8_t bits, int exp_bits, int mant_bits);

// IEEE half; nearest-even is the baseline, stochastic honored when asked.
uint16_t fp16_encode(double v, Rounder& rm);
double fp16_decode(uint16_t bits);

// 32 int8 values sharing one positive scale stored as an 8-bit-exponent,
// 7-bit-mantissa float. Scale is chosen so a nonzero group's max magnitude
// lands at >= 64 (full-range scaling).
struct Int8Group {
    static constexpr int kElems = 32;
    uint16_t scale_bits = 0x3F80;  // 1.0
    std::array<int8_t, kElems> values{};

    double scale() const;
    bool operator==(const Int8Group&) const = default;
};

Int8Group int8_group_quantize(std::span<const double, Int8Group::kElems> x, Rounder& rm);
std::array<double, Int8Group::kElems> int8_group_dequantize(const Int8Group& g);

// Generic vector encode/decode used by the drift harness and the CLI. The
// payload is an opaque per-format encoding; dequantize_format inverts it.
struct QuantizedVector {
    Format format = Format::Fp16;
    size_t size = 0;
    std::vector<uint16_t> scalar_bits;   // fp16 / fp8 payloads
    std::vector<Int8Group> int8_groups;  // zero-padded tail group
    std::vector<MXGroup> mx_groups;      // zero-padded tail group
};

QuantizedVector quantize_format(std::span<const double> x, Format fmt, Rounder& rm,
                                MxFlags* flags = nullptr);
std::vector<double> dequantize_format(const QuantizedVector& q);

}  // namespace pimba
