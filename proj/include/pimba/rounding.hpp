#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace pimba {

// 16-bit Fibonacci LFSR, taps {16, 14, 13, 11}. Full period (65535), the
// state is never zero. One word is drawn per rounding event.
class Lfsr16 {
  public:
    static constexpr uint16_t kDefaultSeed = 0xACE1;

    explicit Lfsr16(uint16_t seed = kDefaultSeed)
        : state_(seed == 0 ? kDefaultSeed : seed) {}

    uint16_t next() {
        uint16_t bit = static_cast<uint16_t>(
            ((state_ >> 0) ^ (state_ >> 2) ^ (state_ >> 3) ^ (state_ >> 5)) & 1u);
        state_ = static_cast<uint16_t>((state_ >> 1) | (bit << 15));
        return state_;
    }

    uint16_t state() const { return state_; }

    void reseed(uint16_t seed) { state_ = (seed == 0 ? kDefaultSeed : seed); }

  private:
    uint16_t state_;
};

enum class RoundMode : uint8_t {
    NearestEven,
    Stochastic,
};

// Sticky status flags. Ops never trap; saturation and flushes are recorded
// here when a flags object is supplied.
struct MxFlags {
    bool overflow = false;
    bool underflow = false;
    bool acc_saturated = false;

    void merge(const MxFlags& o) {
        overflow |= o.overflow;
        underflow |= o.underflow;
        acc_saturated |= o.acc_saturated;
    }
};

// Rounding mode plus the LFSR stream it owns. Each caller owns its Rounder;
// identical seed and call sequence replays bit-identically.
class Rounder {
  public:
    explicit Rounder(RoundMode mode = RoundMode::NearestEven,
                     uint16_t seed = Lfsr16::kDefaultSeed)
        : mode_(mode), lfsr_(seed) {}

    RoundMode mode() const { return mode_; }
    Lfsr16& lfsr() { return lfsr_; }

    // Round a nonnegative real mantissa to an integer. In stochastic mode the
    // drawn word is added to the 16 fraction bits and the carry decides the
    // direction, so P(up) = frac/2^16; a word is drawn even when the value is
    // exact, which keeps the draw count per group op fixed at one per element.
    // Magnitudes past the integer range pin to a ceiling the callers clamp.
    uint64_t round_mag(double mag) {
        if (mag >= 9.0e18) {
            if (mode_ == RoundMode::Stochastic) lfsr_.next();
            return UINT64_MAX;
        }
        double fl = std::floor(mag);
        double frac = mag - fl;
        auto base = static_cast<uint64_t>(fl);
        if (mode_ == RoundMode::NearestEven) {
            if (frac > 0.5) return base + 1;
            if (frac < 0.5) return base;
            return (base & 1) ? base + 1 : base;
        }
        uint32_t frac16 = static_cast<uint32_t>(frac * 65536.0);
        uint32_t word = lfsr_.next();
        return (word + frac16 >= 65536) ? base + 1 : base;
    }

    // Same rule on a two's-complement-free Q.16 fixed-point magnitude.
    uint64_t round_mag_q16(uint64_t mag_q16) {
        uint64_t base = mag_q16 >> 16;
        uint32_t frac16 = static_cast<uint32_t>(mag_q16 & 0xFFFF);
        if (mode_ == RoundMode::NearestEven) {
            if (frac16 > 0x8000) return base + 1;
            if (frac16 < 0x8000) return base;
            return (base & 1) ? base + 1 : base;
        }
        uint32_t word = lfsr_.next();
        return (word + frac16 >= 65536) ? base + 1 : base;
    }

  private:
    RoundMode mode_;
    Lfsr16 lfsr_;
};

// Rounds |value| to a normalized integer mantissa of target_bits bits (grid
// step 2^(floor(log2|v|) - target_bits + 1)). Exactly representable values
// return unchanged under every seed.
double stochastic_round(double value, int target_bits, Rounder& rng);

// Deterministic per-(request, head) rounder derivation so interleaved device
// execution and the golden model consume identical LFSR streams.
inline Rounder rounder_for(uint16_t base_seed, uint32_t request, uint32_t head,
                           uint32_t heads_per_request, RoundMode mode) {
    uint32_t lane = request * heads_per_request + head;
    uint16_t seed = static_cast<uint16_t>(base_seed + 0x9E37u * (lane + 1));
    return Rounder(mode, seed == 0 ? Lfsr16::kDefaultSeed : seed);
}

}  // namespace pimba
