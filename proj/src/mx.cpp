#include "pimba/mx.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace pimba {

namespace {

constexpr int kElems = MXGroup::kElems;
constexpr int kMantBits = MXGroup::kMantBits;
constexpr uint64_t kMantMax = 63;

// floor(log2 |x|) for finite nonzero x.
int floor_log2(double x) {
    int e = 0;
    std::frexp(std::fabs(x), &e);  // |x| = f * 2^e, f in [0.5, 1)
    return e - 1;
}

double round_half_even(double u) {
    double fl = std::floor(u);
    double frac = u - fl;
    if (frac > 0.5) return fl + 1.0;
    if (frac < 0.5) return fl;
    return (std::fmod(fl, 2.0) == 0.0) ? fl : fl + 1.0;
}

}  // namespace

std::array<std::byte, MXGroup::kEncodedBytes> MXGroup::to_bytes() const {
    std::array<std::byte, kEncodedBytes> out{};
    out[0] = static_cast<std::byte>(shared_exponent);
    out[1] = static_cast<std::byte>(micro_exponents);
    // 16 x 7-bit fields packed LSB first into bytes 2..15.
    uint8_t buf[14] = {};
    for (int i = 0; i < kElems; ++i) {
        unsigned field = (static_cast<unsigned>(sign(i)) << 6) | (mantissas[i] & 0x3F);
        int bitpos = 7 * i;
        for (int b = 0; b < 7; ++b) {
            if (field & (1u << b)) {
                int p = bitpos + b;
                buf[p / 8] |= static_cast<uint8_t>(1u << (p % 8));
            }
        }
    }
    for (int i = 0; i < 14; ++i) out[2 + i] = static_cast<std::byte>(buf[i]);
    return out;
}

MXGroup MXGroup::from_bytes(std::span<const std::byte, kEncodedBytes> bytes) {
    MXGroup g;
    g.shared_exponent = std::to_integer<uint8_t>(bytes[0]);
    g.micro_exponents = std::to_integer<uint8_t>(bytes[1]);
    for (int i = 0; i < kElems; ++i) {
        unsigned field = 0;
        int bitpos = 7 * i;
        for (int b = 0; b < 7; ++b) {
            int p = bitpos + b;
            if (std::to_integer<uint8_t>(bytes[2 + p / 8]) & (1u << (p % 8)))
                field |= 1u << b;
        }
        g.mantissas[i] = static_cast<uint8_t>(field & 0x3F);
        g.set_sign(i, static_cast<int>(field >> 6));
    }
    return g;
}

std::array<double, kElems> dequantize_mx(const MXGroup& g) {
    std::array<double, kElems> out{};
    for (int i = 0; i < kElems; ++i) {
        double v = std::ldexp(static_cast<double>(g.mantissas[i]), g.scale_log2(i));
        out[i] = g.sign(i) ? -v : v;
    }
    return out;
}

MXGroup quantize_mx(std::span<const double, kElems> x, Rounder& rm, MxFlags* flags) {
    for (double v : x)
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite input");

    double amax = 0.0;
    for (double v : x) amax = std::max(amax, std::fabs(v));
    if (amax == 0.0) return MXGroup::canonical_zero();

    int e_raw = MXGroup::kBias + floor_log2(amax) + 1;
    bool sat_high = e_raw > 255;
    int exponent = std::clamp(e_raw, 0, 255);

    std::array<int, MXGroup::kPairs> mu{};
    auto derive_mu = [&] {
        for (int p = 0; p < MXGroup::kPairs; ++p) {
            double pmax = std::max(std::fabs(x[2 * p]), std::fabs(x[2 * p + 1]));
            if (pmax == 0.0) {
                mu[p] = 0;
                continue;
            }
            int pe = MXGroup::kBias + floor_log2(pmax) + 1;
            mu[p] = std::clamp(exponent - pe, 0, 1);
            // Demote mu where nearest rounding of the pair max would need 7 bits.
            double m_hi = std::ldexp(pmax, MXGroup::kBias + kMantBits + mu[p] - exponent);
            if (round_half_even(m_hi) > static_cast<double>(kMantMax)) mu[p] = 0;
        }
    };
    derive_mu();

    // Group-level renormalization: bump E once if the max element still
    // rounds past 6 bits (amax just below a power of two).
    {
        double m_top = std::ldexp(amax, MXGroup::kBias + kMantBits - exponent);
        if (round_half_even(m_top) > static_cast<double>(kMantMax) && exponent < 255) {
            ++exponent;
            derive_mu();
        }
    }

    MXGroup g;
    g.shared_exponent = static_cast<uint8_t>(exponent);
    for (int p = 0; p < MXGroup::kPairs; ++p) g.set_mu(p, mu[p]);
    for (int i = 0; i < kElems; ++i) {
        double mag = std::ldexp(std::fabs(x[i]),
                                MXGroup::kBias + kMantBits + mu[i / 2] - exponent);
        uint64_t m = rm.round_mag(mag);
        if (m > kMantMax) {
            // Reachable only via saturation or a stochastic round-up at the top.
            if (sat_high && flags) flags->overflow = true;
            m = kMantMax;
        }
        g.mantissas[i] = static_cast<uint8_t>(m);
        g.set_sign(i, std::signbit(x[i]) ? 1 : 0);
    }
    if (sat_high && flags) flags->overflow = true;
    return g;
}

MXGroup mx_multiply(const MXGroup& a, const MXGroup& b, Rounder& rm, MxFlags* flags) {
    if (a.is_zero() || b.is_zero()) return MXGroup::canonical_zero();

    int e_raw = static_cast<int>(a.shared_exponent) + b.shared_exponent - MXGroup::kBias;
    int exponent = std::clamp(e_raw, 0, 255);
    int shift_adj = e_raw - exponent;  // <0: graceful flush toward E=0; >0: saturation
    if (flags) {
        if (e_raw < 0) flags->underflow = true;
        if (e_raw > 255) flags->overflow = true;
    }

    MXGroup r;
    r.shared_exponent = static_cast<uint8_t>(exponent);
    for (int p = 0; p < MXGroup::kPairs; ++p) {
        int mu_sum = a.mu(p) + b.mu(p);
        int mu_r = std::min(mu_sum, 1);  // clamp compensated by the extra shift
        r.set_mu(p, mu_r);
        for (int i = 2 * p; i < 2 * p + 2; ++i) {
            uint32_t prod = static_cast<uint32_t>(a.mantissas[i]) * b.mantissas[i];
            double mag = std::ldexp(static_cast<double>(prod),
                                    mu_r - mu_sum - kMantBits + shift_adj);
            uint64_t m = rm.round_mag(mag);
            if (m > kMantMax) {
                if (flags) flags->overflow = true;
                m = kMantMax;
            }
            r.mantissas[i] = static_cast<uint8_t>(m);
            r.set_sign(i, m != 0 ? (a.sign(i) ^ b.sign(i)) : 0);  // canonical +0
        }
    }
    if (r.is_zero()) return MXGroup::canonical_zero();
    return r;
}

MXGroup mx_add(const MXGroup& a, const MXGroup& b, Rounder& rm, MxFlags* flags) {
    if (a.is_zero() && b.is_zero()) return MXGroup::canonical_zero();

    int e0 = std::max(a.shared_exponent, b.shared_exponent);

    // Aligned signed sums in Q48.16; shifts past 62 vanish entirely.
    auto aligned = [&](const MXGroup& g, int i) -> int64_t {
        int shift = (e0 - g.shared_exponent) + g.mu_of(i);
        if (shift > 62) return 0;
        int64_t v = static_cast<int64_t>(static_cast<uint64_t>(g.mantissas[i]) << 16) >> shift;
        return g.sign(i) ? -v : v;
    };

    std::array<int64_t, kElems> sum{};
    uint64_t max_mag = 0;
    for (int i = 0; i < kElems; ++i) {
        sum[i] = aligned(a, i) + aligned(b, i);
        max_mag = std::max(max_mag, static_cast<uint64_t>(std::llabs(sum[i])));
    }

    // Group-uniform renormalization when a nearest-rounded sum needs a 7th
    // bit (>= 63.5). A stochastic round-up from just under that clamps below.
    int bump = (max_mag >= ((2 * kMantMax + 1) << 15)) ? 1 : 0;
    if (bump && e0 == 255) {
        bump = 0;  // exponent already saturated; mantissas clamp below
        if (flags) flags->overflow = true;
    }

    MXGroup r;
    r.shared_exponent = static_cast<uint8_t>(e0 + bump);
    r.micro_exponents = 0;  // adder always produces mu = 0
    for (int i = 0; i < kElems; ++i) {
        uint64_t mag = static_cast<uint64_t>(std::llabs(sum[i])) >> bump;
        uint64_t m = rm.round_mag_q16(mag);
        if (m > kMantMax) m = kMantMax;  // reachable only when the exponent saturated
        r.mantissas[i] = static_cast<uint8_t>(m);
        r.set_sign(i, (sum[i] < 0 && m != 0) ? 1 : 0);  // canonical +0
    }
    if (r.is_zero()) return MXGroup::canonical_zero();
    return r;
}

double mx_dot(const MXGroup& a, const MXGroup& b, MxFlags* flags) {
    if (a.is_zero() || b.is_zero()) return 0.0;

    // Accumulate at the finest pair scale (mu_sum up to 2): unit is
    // 2^(E_a + E_b - 2*127 - 12 - 2). |acc| <= 16 * 63*63 * 4 < 2^18.
    int32_t acc = 0;
    for (int i = 0; i < kElems; ++i) {
        int mu_sum = a.mu_of(i) + b.mu_of(i);
        int32_t term = static_cast<int32_t>(a.mantissas[i]) * b.mantissas[i];
        term <<= (2 - mu_sum);
        acc += (a.sign(i) ^ b.sign(i)) ? -term : term;
    }
    if (flags && (acc == std::numeric_limits<int32_t>::max() ||
                  acc == std::numeric_limits<int32_t>::min()))
        flags->acc_saturated = true;
    int exp = static_cast<int>(a.shared_exponent) + b.shared_exponent -
              2 * MXGroup::kBias - 2 * kMantBits - 2;
    return std::ldexp(static_cast<double>(acc), exp);
}

double stochastic_round(double value, int target_bits, Rounder& rng) {
    if (value == 0.0 || !std::isfinite(value)) return value;
    double mag = std::fabs(value);
    int e = floor_log2(mag);
    int scale = e - target_bits + 1;
    double u = std::ldexp(mag, -scale);
    uint64_t m = rng.round_mag(u);
    double r = std::ldexp(static_cast<double>(m), scale);
    return std::signbit(value) ? -r : r;
}

}  // namespace pimba
