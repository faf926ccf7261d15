#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracle.hpp"
#include "pimba/mx.hpp"

using namespace pimba;

namespace {

MXGroup make_group(uint8_t E, uint8_t mu_bits, uint8_t mant, uint16_t signs = 0) {
    MXGroup g;
    g.shared_exponent = E;
    g.micro_exponents = mu_bits;
    g.sign_bits = signs;
    g.mantissas.fill(mant);
    return g;
}

MXGroup quantize(const std::array<double, 16>& x, RoundMode mode = RoundMode::NearestEven,
                 MxFlags* flags = nullptr) {
    Rounder rm(mode);
    return quantize_mx(x, rm, flags);
}

const MXGroup kOne = quantize([] {
    std::array<double, 16> x{};
    x.fill(1.0);
    return x;
}());

}  // namespace

TEST_CASE("dequantize: canonical zero and formula instantiations") {
    auto zeros = dequantize_mx(MXGroup::canonical_zero());
    for (double v : zeros) CHECK(v == 0.0);

    // v = m * 2^(E - 127 - mu - 6): both encodings of 1.0.
    CHECK(dequantize_mx(make_group(128, 0, 32))[0] == 1.0);
    CHECK(dequantize_mx(make_group(133, 0, 1))[0] == 1.0);
    // Negative sign, mu scales the pair down.
    MXGroup g = make_group(128, 0x01, 32, 0x0001);
    CHECK(dequantize_mx(g)[0] == -0.5);
    CHECK(dequantize_mx(g)[1] == 0.5);
    CHECK(dequantize_mx(g)[2] == 1.0);
}

TEST_CASE("quantize: zeros give the canonical zero group") {
    std::array<double, 16> x{};
    CHECK(quantize(x) == MXGroup::canonical_zero());
}

TEST_CASE("quantize: sixteen ones are exact with equal mantissas") {
    MXGroup g = kOne;
    CHECK(g.shared_exponent == 128);
    CHECK(g.micro_exponents == 0);
    for (int i = 0; i < 16; ++i) CHECK(g.mantissas[i] == 32);
    for (double v : dequantize_mx(g)) CHECK(v == 1.0);
}

TEST_CASE("quantize: non-finite input is rejected") {
    std::array<double, 16> x{};
    x[3] = std::numeric_limits<double>::infinity();
    Rounder rm;
    CHECK_THROWS_WITH_AS(quantize_mx(x, rm), "non-finite input", std::invalid_argument);
}

TEST_CASE("quantize: overflow saturates with a sticky flag") {
    std::array<double, 16> x{};
    x.fill(1e40);  // above 63 * 2^122
    MxFlags flags;
    MXGroup g = quantize(x, RoundMode::NearestEven, &flags);
    CHECK(g.shared_exponent == 255);
    CHECK(flags.overflow);
    for (int i = 0; i < 16; ++i) CHECK(g.mantissas[i] == 63);
}

TEST_CASE("quantize: nearest error within half a step, top bit normalized") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 2000; ++trial) {
        auto x = oracle::random_values(rng);
        MXGroup g = quantize(x);
        auto back = dequantize_mx(g);
        bool top = false;
        for (int i = 0; i < 16; ++i) {
            CHECK(std::fabs(back[i] - x[i]) <= oracle::ulp_of(g, i) / 2 + 1e-300);
            top |= g.mantissas[i] >= 32;
        }
        CHECK((top || g.shared_exponent == 0));
        // Independent re-encode agrees bit for bit.
        MXGroup ref = oracle::mx_encode_ref(x);
        CHECK(g == ref);
    }
}

TEST_CASE("quantize/dequantize round trip is idempotent") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> scale(-8.0, 8.0);
    for (int trial = 0; trial < 100000; ++trial) {
        MXGroup g = oracle::random_group(rng, -std::exp2(scale(rng)), std::exp2(scale(rng)));
        auto vals = dequantize_mx(g);
        Rounder rm;
        MXGroup g2 = quantize_mx(vals, rm);
        CHECK(dequantize_mx(g2) == vals);
    }
}

TEST_CASE("serialization: 128 bits, exact layout, lossless round trip") {
    CHECK(MXGroup::kEncodedBytes * 8 == 128);
    MXGroup g = make_group(0x9C, 0x5A, 0, 0xF00F);
    for (int i = 0; i < 16; ++i) g.mantissas[i] = static_cast<uint8_t>((i * 7) & 0x3F);
    auto bytes = g.to_bytes();
    CHECK(std::to_integer<uint8_t>(bytes[0]) == 0x9C);
    CHECK(std::to_integer<uint8_t>(bytes[1]) == 0x5A);
    // Element 0 occupies bits 0..6 of the packed field: mantissa low, sign high.
    unsigned first = std::to_integer<uint8_t>(bytes[2]) & 0x7F;
    CHECK((first & 0x3F) == g.mantissas[0]);
    CHECK(((first >> 6) & 1) == static_cast<unsigned>(g.sign(0)));
    CHECK(MXGroup::from_bytes(bytes) == g);

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5000; ++trial) {
        MXGroup r = oracle::random_group(rng);
        CHECK(MXGroup::from_bytes(r.to_bytes()) == r);
    }
}

TEST_CASE("multiply: identity on even mantissas, canonical zero annihilates") {
    std::mt19937_64 rng(23);
    Rounder rm;
    for (int trial = 0; trial < 200; ++trial) {
        MXGroup a = oracle::random_group(rng);
        for (auto& m : a.mantissas) m &= 0x3E;  // even mantissas: halving is exact
        MXGroup prod = mx_multiply(a, kOne, rm);
        auto got = dequantize_mx(prod);
        auto want = dequantize_mx(a);
        for (int i = 0; i < 16; ++i) CHECK(got[i] == want[i]);

        CHECK(mx_multiply(a, MXGroup::canonical_zero(), rm) == MXGroup::canonical_zero());
    }
}

TEST_CASE("multiply: microexponent clamp right-shifts the pair") {
    // Both operands mu=1, m=32 (value 0.25 at E=127). The sum of
    // microexponents is 2; hardware clamps to 1 and shifts mantissas once.
    MXGroup a = make_group(127, 0xFF, 32);
    Rounder rm;
    MXGroup r = mx_multiply(a, a, rm);
    CHECK(r.shared_exponent == 127);
    CHECK(r.micro_exponents == 0xFF);
    for (int i = 0; i < 16; ++i) CHECK(r.mantissas[i] == 8);  // 1024 >> 7
    // Value equals the unshifted mu=2 interpretation: 16 * 2^(127-127-2-6).
    for (double v : dequantize_mx(r)) CHECK(v == 16.0 * std::exp2(-8));
    for (double v : dequantize_mx(r)) CHECK(v == 0.25 * 0.25);
}

TEST_CASE("multiply: oracle bound, one result-scale ulp") {
    std::mt19937_64 rng(31);
    Rounder rm;
    for (int trial = 0; trial < 20000; ++trial) {
        MXGroup a = oracle::random_group(rng);
        MXGroup b = oracle::random_group(rng);
        MXGroup r = mx_multiply(a, b, rm);
        auto av = dequantize_mx(a), bv = dequantize_mx(b), rv = dequantize_mx(r);
        for (int i = 0; i < 16; ++i)
            CHECK(std::fabs(rv[i] - av[i] * bv[i]) <= oracle::ulp_of(r, i));
    }
}

TEST_CASE("multiply: exponent underflow flushes with a sticky flag") {
    MXGroup tiny = make_group(10, 0, 33);
    Rounder rm;
    MxFlags flags;
    MXGroup r = mx_multiply(tiny, tiny, rm, &flags);
    CHECK(flags.underflow);
    CHECK(r == MXGroup::canonical_zero());
}

TEST_CASE("add: additive identity folds microexponents to zero") {
    std::mt19937_64 rng(41);
    Rounder rm;
    for (int trial = 0; trial < 500; ++trial) {
        MXGroup a = oracle::random_group(rng);
        MXGroup r = mx_add(a, MXGroup::canonical_zero(), rm);
        CHECK(r.micro_exponents == 0);
        auto got = dequantize_mx(r);
        auto want = dequantize_mx(a);
        for (int i = 0; i < 16; ++i) {
            // Exact when the lane had mu=0; within the folded half-ulp otherwise.
            if (a.mu_of(i) == 0) CHECK(got[i] == want[i]);
            else CHECK(std::fabs(got[i] - want[i]) <= oracle::ulp_of(r, i) / 2);
        }
    }
}

TEST_CASE("add: doubling within one result ulp, mu always zero") {
    std::mt19937_64 rng(43);
    Rounder rm;
    for (int trial = 0; trial < 20000; ++trial) {
        MXGroup a = oracle::random_group(rng);
        MXGroup r = mx_add(a, a, rm);
        CHECK(r.micro_exponents == 0);
        auto got = dequantize_mx(r);
        auto want = dequantize_mx(a);
        for (int i = 0; i < 16; ++i)
            CHECK(std::fabs(got[i] - 2.0 * want[i]) <= oracle::ulp_of(r, i));
    }
}

TEST_CASE("add: a fully swamped addend leaves the accumulator bit-identical") {
    std::mt19937_64 rng(47);
    Rounder rm;
    for (int trial = 0; trial < 500; ++trial) {
        // Accumulator-style group: mu = 0 (an adder output).
        MXGroup acc = oracle::random_group(rng);
        acc.micro_exponents = 0;
        MXGroup small = oracle::random_group(rng);
        if (acc.shared_exponent < 140) acc.shared_exponent = 140;
        small.shared_exponent = static_cast<uint8_t>(acc.shared_exponent - 13);
        MXGroup r = mx_add(acc, small, rm);
        CHECK(r == mx_add(acc, MXGroup::canonical_zero(), rm));
    }
}

TEST_CASE("add: oracle bound against exact fp64 sums") {
    std::mt19937_64 rng(53);
    Rounder rm;
    std::uniform_int_distribution<int> shift(0, 8);
    for (int trial = 0; trial < 20000; ++trial) {
        MXGroup a = oracle::random_group(rng);
        MXGroup b = oracle::random_group(rng);
        b.shared_exponent = static_cast<uint8_t>(
            std::clamp(static_cast<int>(a.shared_exponent) - shift(rng), 0, 255));
        MXGroup r = mx_add(a, b, rm);
        auto av = dequantize_mx(a), bv = dequantize_mx(b), rv = dequantize_mx(r);
        for (int i = 0; i < 16; ++i)
            CHECK(std::fabs(rv[i] - (av[i] + bv[i])) <= oracle::ulp_of(r, i));
    }
}

TEST_CASE("dot: trivial anchors and exactness against fp64") {
    Rounder rm;
    std::mt19937_64 rng(59);
    CHECK(mx_dot(oracle::random_group(rng), MXGroup::canonical_zero()) == 0.0);
    CHECK(mx_dot(kOne, kOne) == 16.0);
    for (int trial = 0; trial < 20000; ++trial) {
        MXGroup a = oracle::random_group(rng);
        MXGroup b = oracle::random_group(rng);
        auto av = dequantize_mx(a), bv = dequantize_mx(b);
        double want = 0;
        for (int i = 0; i < 16; ++i) want += av[i] * bv[i];
        CHECK(mx_dot(a, b) == doctest::Approx(want).epsilon(1e-15));
    }
}

TEST_CASE("stochastic round: representable values unchanged under every seed") {
    for (uint32_t seed = 1; seed <= 100; ++seed) {
        Rounder rm(RoundMode::Stochastic, static_cast<uint16_t>(seed));
        CHECK(stochastic_round(1.5, 4, rm) == 1.5);
        CHECK(stochastic_round(-0.75, 3, rm) == -0.75);
        CHECK(stochastic_round(0.0, 6, rm) == 0.0);
    }
}

TEST_CASE("stochastic round: the drawn word against the midpoint threshold") {
    // Midpoint fraction 0.5: round up iff word >= 2^16 - 0x8000 = 0x8000.
    // Walk the documented LFSR to find one seed on each side.
    uint16_t seed_low = 0, seed_high = 0;
    for (uint32_t s = 1; s < 0x10000 && (!seed_low || !seed_high); ++s) {
        uint16_t word = oracle::lfsr_next_ref(static_cast<uint16_t>(s));
        if (word < 0x8000 && !seed_low) seed_low = static_cast<uint16_t>(s);
        if (word >= 0x8000 && !seed_high) seed_high = static_cast<uint16_t>(s);
    }
    // 8.5 with 4 mantissa bits sits exactly between 8 and 9.
    Rounder down(RoundMode::Stochastic, seed_low);
    Rounder up(RoundMode::Stochastic, seed_high);
    CHECK(stochastic_round(8.5, 4, down) == 8.0);
    CHECK(stochastic_round(8.5, 4, up) == 9.0);
}

TEST_CASE("stochastic round: unbiased within three sigma") {
    const int trials = 10000;
    std::mt19937 seed_rng(2024);  // seeds spread over the full 16-bit space
    std::uniform_int_distribution<uint32_t> seeds(1, 0xFFFF);
    for (double frac : {0.25, 0.5, 0.125}) {
        double x = 8.0 + frac;  // grid step 1.0 at 4 mantissa bits
        double sum = 0;
        for (int s = 0; s < trials; ++s) {
            Rounder rm(RoundMode::Stochastic, static_cast<uint16_t>(seeds(seed_rng)));
            sum += stochastic_round(x, 4, rm);
        }
        double mean = sum / trials;
        double sigma = std::sqrt(frac * (1 - frac) / trials);
        CHECK(std::fabs(mean - x) <= 3 * sigma);
    }
}

TEST_CASE("determinism: identical rounder state replays bit-identically") {
    std::mt19937_64 rng(61);
    auto x = oracle::random_values(rng);
    Rounder r1(RoundMode::Stochastic, 0xBEEF);
    Rounder r2(RoundMode::Stochastic, 0xBEEF);
    MXGroup a = quantize_mx(x, r1);
    MXGroup b = quantize_mx(x, r2);
    CHECK(a == b);
    MXGroup pa = mx_multiply(a, a, r1);
    MXGroup pb = mx_multiply(b, b, r2);
    CHECK(pa == pb);
    CHECK(r1.lfsr().state() == r2.lfsr().state());
}

TEST_CASE("lfsr: nonzero forever, full-period, reseed of zero maps to default") {
    Lfsr16 l(0xACE1);
    uint16_t first = l.next();
    CHECK(first == oracle::lfsr_next_ref(0xACE1));
    uint32_t seen_back_at = 0;
    Lfsr16 probe(0xACE1);
    for (uint32_t i = 1; i <= 65535; ++i) {
        uint16_t w = probe.next();
        CHECK(w != 0);
        if (w == 0xACE1 && !seen_back_at) seen_back_at = i;
    }
    CHECK(seen_back_at == 65535);  // maximal period
    Lfsr16 z(0);
    CHECK(z.state() == Lfsr16::kDefaultSeed);
}

TEST_CASE("swamping: stochastic accumulation keeps the expected increment") {
    // Accumulator lanes at 32.0 with a one-unit ulp (E=133, m=32); the 0.25
    // addend sits a quarter ulp up, invisible to nearest-even.
    MXGroup acc = make_group(133, 0, 32);
    std::array<double, 16> small{};
    small.fill(0.25);
    Rounder enc;
    MXGroup addend = quantize_mx(small, enc);

    Rounder ne(RoundMode::NearestEven);
    CHECK(mx_add(acc, addend, ne) == acc);

    const int trials = 10000;
    std::mt19937 seed_rng(7);
    std::uniform_int_distribution<uint32_t> seeds(1, 0xFFFF);
    double sum = 0;
    for (int s = 0; s < trials; ++s) {
        Rounder st(RoundMode::Stochastic, static_cast<uint16_t>(seeds(seed_rng)));
        sum += dequantize_mx(mx_add(acc, addend, st))[0];
    }
    double mean = sum / trials;
    double sigma = std::sqrt(0.25 * 0.75 / trials);  // one-ulp Bernoulli
    CHECK(std::fabs(mean - 32.25) <= 3 * sigma);
}
