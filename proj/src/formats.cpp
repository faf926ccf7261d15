#include "pimba/formats.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace pimba {

namespace {

int floor_log2(double x) {
    int e = 0;
    std::frexp(std::fabs(x), &e);
    return e - 1;
}

// Round |v| onto a binary minifloat grid: exp_bits/mant_bits, given bias.
// Returns the encoded magnitude (exponent field and mantissa field).
struct MiniFloat {
    int exp_field;
    int mant_field;
};

MiniFloat encode_magnitude(double mag, int exp_bits, int mant_bits, Rounder& rm) {
    int bias = (1 << (exp_bits - 1)) - 1;
    int emax = (1 << exp_bits) - 1;  // saturating format: top code is finite
    int e = floor_log2(mag);

    if (e < 1 - bias) {
        // Subnormal grid: step 2^(1 - bias - mant_bits).
        double u = std::ldexp(mag, bias - 1 + mant_bits);
        uint64_t m = rm.round_mag(u);
        if (m >= (1ull << mant_bits)) return {1, static_cast<int>(m - (1ull << mant_bits))};
        return {0, static_cast<int>(m)};
    }

    int ef = e + bias;
    // No NaN/inf codes: the full top binade is usable, max finite is
    // (2 - 2^-mant) * 2^(emax - bias); anything past it saturates there.
    if (ef > emax) return {emax, (1 << mant_bits) - 1};
    // Normalized: value = (1 + m/2^mant) * 2^(ef - bias).
    double u = std::ldexp(mag, bias - ef + mant_bits);  // in [2^mant, 2^(mant+1))
    uint64_t m = rm.round_mag(u);
    if (m >= (1ull << (mant_bits + 1))) {
        ++ef;
        m >>= 1;
    }
    if (ef > emax) {
        ef = emax;
        m = (1ull << (mant_bits + 1)) - 1;  // saturate to max finite
    }
    return {ef, static_cast<int>(m - (1ull << mant_bits))};
}

double decode_magnitude(int exp_field, int mant_field, int exp_bits, int mant_bits) {
    int bias = (1 << (exp_bits - 1)) - 1;
    if (exp_field == 0)
        return std::ldexp(static_cast<double>(mant_field), 1 - bias - mant_bits);
    return std::ldexp(static_cast<double>((1 << mant_bits) + mant_field),
                      exp_field - bias - mant_bits);
}

// Positive scale as 8-bit exponent + 7-bit mantissa (bfloat16 layout, sign 0),
// rounded up so values never exceed the int8 range after division.
uint16_t scale_encode_up(double s) {
    float f = static_cast<float>(s);
    if (f == 0.0f) return 0x0001;                     // min subnormal
    if (!std::isfinite(f)) return 0x7F7F;             // max finite
    uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    uint16_t hi = static_cast<uint16_t>(bits >> 16);
    if (bits & 0xFFFF) ++hi;
    return static_cast<uint16_t>(hi & 0x7FFF);
}

double scale_decode(uint16_t bits) {
    uint32_t w = static_cast<uint32_t>(bits) << 16;
    float f;
    std::memcpy(&f, &w, sizeof(f));
    return static_cast<double>(f);
}

void require_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite input");
}

}  // namespace

const char* format_name(Format f) {
    switch (f) {
        case Format::Fp16: return "fp16";
        case Format::E4m3: return "e4m3";
        case Format::E5m2: return "e5m2";
        case Format::Int8Group: return "int8_group";
        case Format::Mx8: return "mx8";
    }
    return "?";
}

Format format_from_name(const std::string& name) {
    if (name == "fp16") return Format::Fp16;
    if (name == "e4m3") return Format::E4m3;
    if (name == "e5m2") return Format::E5m2;
    if (name == "int8_group" || name == "int8") return Format::Int8Group;
    if (name == "mx8") return Format::Mx8;
    throw std::invalid_argument("unknown format: " + name);
}

double bits_per_element(Format f) {
    switch (f) {
        case Format::Fp16: return 16.0;
        case Format::E4m3:
        case Format::E5m2: return 8.0;
        case Format::Int8Group: return 8.0 + 16.0 / Int8Group::kElems;  // 8.5
        case Format::Mx8: return 8.0;  // 128 bits / 16 values
    }
    return 0.0;
}

double format_max_magnitude(Format f) {
    switch (f) {
        case Format::Fp16: return 65504.0;
        case Format::E4m3: return decode_magnitude(15, 7, 4, 3);    // 480
        case Format::E5m2: return decode_magnitude(31, 3, 5, 2);    // 1.75 * 2^16
        case Format::Int8Group: return 127.0 * scale_decode(0x7F7F);
        case Format::Mx8: return 63.0 * std::ldexp(1.0, 255 - 127 - 6);
    }
    return 0.0;
}

uint8_t fp8_encode(double v, int exp_bits, int mant_bits, Rounder& rm) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite input");
    uint8_t s = std::signbit(v) ? 0x80 : 0;
    double mag = std::fabs(v);
    if (mag == 0.0) return s;
    MiniFloat mf = encode_magnitude(mag, exp_bits, mant_bits, rm);
    return static_cast<uint8_t>(s | (mf.exp_field << mant_bits) | mf.mant_field);
}

double fp8_decode(uint8_t bits, int exp_bits, int mant_bits) {
    int ef = (bits >> mant_bits) & ((1 << exp_bits) - 1);
    int mf = bits & ((1 << mant_bits) - 1);
    double mag = decode_magnitude(ef, mf, exp_bits, mant_bits);
    return (bits & 0x80) ? -mag : mag;
}

uint16_t fp16_encode(double v, Rounder& rm) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite input");
    uint16_t s = std::signbit(v) ? 0x8000 : 0;
    double mag = std::fabs(v);
    if (mag == 0.0) return s;
    MiniFloat mf = encode_magnitude(mag, 5, 10, rm);
    return static_cast<uint16_t>(s | (mf.exp_field << 10) | mf.mant_field);
}

double fp16_decode(uint16_t bits) {
    int ef = (bits >> 10) & 0x1F;
    int mf = bits & 0x3FF;
    double mag = decode_magnitude(ef, mf, 5, 10);
    return (bits & 0x8000) ? -mag : mag;
}

double Int8Group::scale() const { return scale_decode(scale_bits); }

Int8Group int8_group_quantize(std::span<const double, Int8Group::kElems> x, Rounder& rm) {
    require_finite(x);
    Int8Group g;
    double amax = 0.0;
    for (double v : x) amax = std::max(amax, std::fabs(v));
    if (amax == 0.0) return g;
    g.scale_bits = scale_encode_up(amax / 127.0);
    double s = g.scale();
    for (int i = 0; i < Int8Group::kElems; ++i) {
        uint64_t m = rm.round_mag(std::fabs(x[i]) / s);
        if (m > 127) m = 127;
        g.values[i] = static_cast<int8_t>(std::signbit(x[i]) ? -static_cast<int>(m)
                                                             : static_cast<int>(m));
    }
    return g;
}

std::array<double, Int8Group::kElems> int8_group_dequantize(const Int8Group& g) {
    std::array<double, Int8Group::kElems> out{};
    double s = g.scale();
    for (int i = 0; i < Int8Group::kElems; ++i) out[i] = g.values[i] * s;
    return out;
}

QuantizedVector quantize_format(std::span<const double> x, Format fmt, Rounder& rm,
                                MxFlags* flags) {
    require_finite(x);
    QuantizedVector q;
    q.format = fmt;
    q.size = x.size();
    switch (fmt) {
        case Format::Fp16:
            q.scalar_bits.reserve(x.size());
            for (double v : x) q.scalar_bits.push_back(fp16_encode(v, rm));
            break;
        case Format::E4m3:
            for (double v : x) q.scalar_bits.push_back(fp8_encode(v, 4, 3, rm));
            break;
        case Format::E5m2:
            for (double v : x) q.scalar_bits.push_back(fp8_encode(v, 5, 2, rm));
            break;
        case Format::Int8Group: {
            std::array<double, Int8Group::kElems> buf{};
            for (size_t base = 0; base < x.size(); base += Int8Group::kElems) {
                buf.fill(0.0);
                size_t n = std::min<size_t>(Int8Group::kElems, x.size() - base);
                std::copy_n(x.begin() + base, n, buf.begin());
                q.int8_groups.push_back(int8_group_quantize(buf, rm));
            }
            break;
        }
        case Format::Mx8: {
            std::array<double, MXGroup::kElems> buf{};
            for (size_t base = 0; base < x.size(); base += MXGroup::kElems) {
                buf.fill(0.0);
                size_t n = std::min<size_t>(MXGroup::kElems, x.size() - base);
                std::copy_n(x.begin() + base, n, buf.begin());
                q.mx_groups.push_back(quantize_mx(buf, rm, flags));
            }
            break;
        }
    }
    return q;
}

std::vector<double> dequantize_format(const QuantizedVector& q) {
    std::vector<double> out;
    out.reserve(q.size);
    switch (q.format) {
        case Format::Fp16:
            for (uint16_t b : q.scalar_bits) out.push_back(fp16_decode(b));
            break;
        case Format::E4m3:
            for (uint16_t b : q.scalar_bits)
                out.push_back(fp8_decode(static_cast<uint8_t>(b), 4, 3));
            break;
        case Format::E5m2:
            for (uint16_t b : q.scalar_bits)
                out.push_back(fp8_decode(static_cast<uint8_t>(b), 5, 2));
            break;
        case Format::Int8Group:
            for (const auto& g : q.int8_groups) {
                auto vals = int8_group_dequantize(g);
                out.insert(out.end(), vals.begin(), vals.end());
            }
            out.resize(q.size);
            break;
        case Format::Mx8:
            for (const auto& g : q.mx_groups) {
                auto vals = dequantize_mx(g);
                out.insert(out.end(), vals.begin(), vals.end());
            }
            out.resize(q.size);
            break;
    }
    return out;
}

}  // namespace pimba
