#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracle.hpp"
#include "pimba/state_update.hpp"

using namespace pimba;

namespace {

std::vector<double> randn(size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng) * scale;
    return v;
}

double frobenius_rel(const StateMatrix& a, const StateMatrix& b) {
    double num = 0, den = 0;
    for (size_t i = 0; i < a.s.size(); ++i) {
        double d = a.s[i] - b.s[i];
        num += d * d;
        den += b.s[i] * b.s[i];
    }
    return den > 0 ? std::sqrt(num / den) : 0.0;
}

}  // namespace

TEST_CASE("reference step: identity update and rank-1 algebra") {
    StateMatrix S(4, 3);
    std::mt19937_64 rng(1);
    for (auto& v : S.s) v = randn(1, rng)[0];
    StateMatrix S0 = S;

    // d = 1, k = 0: S unchanged, y = S^T q.
    StateUpdateInputs in;
    in.d.assign(4, 1.0);
    in.k.assign(4, 0.0);
    in.q = randn(4, rng);
    in.v = randn(3, rng);
    StepResult r = state_update_step_ref(S, in);
    CHECK(S.s == S0.s);
    for (size_t c = 0; c < 3; ++c) {
        double want = 0;
        for (size_t h = 0; h < 4; ++h) want += S0.at(h, c) * in.q[h];
        CHECK(r.y[c] == doctest::Approx(want).epsilon(1e-15));
    }

    // Zero state: S' = k v^T, y = (k . q) v.
    StateMatrix Z(4, 3);
    in.d = randn(4, rng);
    in.k = randn(4, rng);
    StepResult rz = state_update_step_ref(Z, in);
    double kq = 0;
    for (size_t h = 0; h < 4; ++h) kq += in.k[h] * in.q[h];
    for (size_t h = 0; h < 4; ++h)
        for (size_t c = 0; c < 3; ++c)
            CHECK(Z.at(h, c) == doctest::Approx(in.k[h] * in.v[c]).epsilon(1e-15));
    for (size_t c = 0; c < 3; ++c)
        CHECK(rz.y[c] == doctest::Approx(kq * in.v[c]).epsilon(1e-14));
}

TEST_CASE("reference step matches the naive brute-force loop") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        size_t dh = 4, ds = 4;
        StateMatrix S(dh, ds);
        std::vector<std::vector<double>> naive(dh, std::vector<double>(ds));
        for (size_t h = 0; h < dh; ++h)
            for (size_t c = 0; c < ds; ++c) naive[h][c] = S.at(h, c) = randn(1, rng)[0];
        StateUpdateInputs in{randn(dh, rng), randn(dh, rng), randn(dh, rng), randn(ds, rng)};
        StepResult r = state_update_step_ref(S, in);
        auto want = oracle::naive_state_update(naive, in.d, in.q, in.k, in.v);
        for (size_t h = 0; h < dh; ++h)
            for (size_t c = 0; c < ds; ++c)
                CHECK(S.at(h, c) == doctest::Approx(want.S[h][c]).epsilon(1e-14));
        for (size_t c = 0; c < ds; ++c)
            CHECK(r.y[c] == doctest::Approx(want.y[c]).epsilon(1e-13));
    }
}

TEST_CASE("reference step: rank-1 identity and linearity in q") {
    std::mt19937_64 rng(3);
    size_t dh = 8, ds = 5;
    StateMatrix S(dh, ds);
    for (auto& v : S.s) v = randn(1, rng)[0];
    StateUpdateInputs in{std::vector<double>(dh, 1.0), randn(dh, rng), randn(dh, rng),
                         randn(ds, rng)};
    StateMatrix S1 = S;
    state_update_step_ref(S1, in);
    for (size_t h = 0; h < dh; ++h)
        for (size_t c = 0; c < ds; ++c)
            CHECK(S1.at(h, c) == S.at(h, c) + in.k[h] * in.v[c]);

    // y linear in q: y(a*q1 + b*q2) = a*y(q1) + b*y(q2) with fixed S'.
    auto y_of = [&](const std::vector<double>& q) {
        StateMatrix Sc = S;
        StateUpdateInputs probe = in;
        probe.q = q;
        return state_update_step_ref(Sc, probe).y;
    };
    auto q1 = randn(dh, rng), q2 = randn(dh, rng);
    std::vector<double> mix(dh);
    for (size_t h = 0; h < dh; ++h) mix[h] = 2.0 * q1[h] - 0.5 * q2[h];
    auto y1 = y_of(q1), y2 = y_of(q2), ym = y_of(mix);
    for (size_t c = 0; c < ds; ++c)
        CHECK(ym[c] == doctest::Approx(2.0 * y1[c] - 0.5 * y2[c]).epsilon(1e-12));
}

TEST_CASE("dimension mismatch is rejected") {
    StateMatrix S(4, 4);
    StateUpdateInputs in{{1, 1, 1}, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}};
    CHECK_THROWS_AS(state_update_step_ref(S, in), std::invalid_argument);
}

TEST_CASE("mx step: all-zero inputs stay zero") {
    StateMatrix S(16, 4);
    Rounder rm;
    MxStateMatrix qs = quantize_state(S, rm);
    StateUpdateInputs in{std::vector<double>(16, 0.0), std::vector<double>(16, 0.0),
                         std::vector<double>(16, 0.0), std::vector<double>(4, 0.0)};
    MxOperands ops = quantize_operands(in, rm);
    StepResult r = state_update_step_mx(qs, ops, rm);
    for (const auto& g : qs.groups) CHECK(g == MXGroup::canonical_zero());
    for (double y : r.y) CHECK(y == 0.0);
}

TEST_CASE("mx step: exact-one decay with zero outer keeps values, folds mu") {
    std::mt19937_64 rng(5);
    StateMatrix S(16, 4);
    for (auto& v : S.s) v = randn(1, rng)[0];
    Rounder rm;
    MxStateMatrix qs = quantize_state(S, rm);
    // Force even mantissas and mu=0 so halving through the one-group is exact.
    for (auto& g : qs.groups) {
        for (auto& m : g.mantissas) m &= 0x3E;
        g.micro_exponents = 0;
    }
    StateMatrix S_before = dequantize_state(qs);

    StateUpdateInputs in{std::vector<double>(16, 1.0), std::vector<double>(16, 0.0),
                         std::vector<double>(16, 0.0), std::vector<double>(4, 0.0)};
    MxOperands ops = quantize_operands(in, rm);
    StepResult r = state_update_step_mx(qs, ops, rm);
    StateMatrix S_after = dequantize_state(qs);
    CHECK(S_after.s == S_before.s);
    for (const auto& g : qs.groups) CHECK(g.micro_exponents == 0);
    (void)r;
}

TEST_CASE("mx step: trajectory stays near the reference") {
    // Random inputs with bounded dynamic range (well under the 2^6 group
    // ratio): magnitudes in [0.5, 1] with random signs.
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> mag(0.75, 1.0);
    std::bernoulli_distribution flip(0.5);
    auto bounded = [&](size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = flip(rng) ? -mag(rng) : mag(rng);
        return v;
    };
    StateMatrix ref(16, 4);
    Rounder rm;
    MxStateMatrix qs = quantize_state(ref, rm);
    for (int step = 0; step < 10; ++step) {
        StateUpdateInputs in;
        std::uniform_real_distribution<double> decay(0.3, 0.6);
        in.d.resize(16);
        for (auto& v : in.d) v = decay(rng);
        in.k = bounded(16);
        in.q = bounded(16);
        in.v = bounded(4);
        MxOperands ops = quantize_operands(in, rm);
        // Both trajectories consume the identical (quantized) operand values,
        // so the bound isolates the MX state arithmetic.
        StateUpdateInputs same;
        same.d.assign(16, 0.0);
        same.k.assign(16, 0.0);
        same.q.assign(16, 0.0);
        same.v.assign(4, 0.0);
        for (size_t g = 0; g < ops.d.size(); ++g) {
            auto dd = dequantize_mx(ops.d[g]);
            auto kk = dequantize_mx(ops.k[g]);
            auto qq = dequantize_mx(ops.q[g]);
            for (size_t e = 0; e < MXGroup::kElems; ++e) {
                size_t h = g * MXGroup::kElems + e;
                if (h >= 16) break;
                same.d[h] = dd[e];
                same.k[h] = kk[e];
                same.q[h] = qq[e];
            }
        }
        for (size_t c = 0; c < 4; ++c) same.v[c] = dequantize_mx(ops.v_bcast[c])[0];
        state_update_step_ref(ref, same);
        state_update_step_mx(qs, ops, rm);
    }
    StateMatrix got = dequantize_state(qs);
    CHECK(frobenius_rel(got, ref) <= std::exp2(-5));
}

TEST_CASE("mx step is deterministic given the rounder state") {
    std::mt19937_64 rng(11);
    StateMatrix S(32, 4);
    for (auto& v : S.s) v = randn(1, rng)[0];
    StateUpdateInputs in{randn(32, rng), randn(32, rng), randn(32, rng), randn(4, rng)};
    for (auto& d : in.d) d = std::fabs(d);

    auto run_once = [&] {
        Rounder rm(RoundMode::Stochastic, 0x1234);
        MxStateMatrix qs = quantize_state(S, rm);
        MxOperands ops = quantize_operands(in, rm);
        StepResult r = state_update_step_mx(qs, ops, rm);
        return std::make_pair(qs.groups, r.y);
    };
    auto a = run_once();
    auto b = run_once();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("attention: single token and one-hot anchors") {
    KVCache cache;
    cache.dim_head = 4;
    std::vector<double> k0 = {1, 2, -1, 0.5};
    cache.append(k0, {3, -1, 2, 0});
    auto scores = attention_score(k0, cache);
    double norm2 = 1 + 4 + 1 + 0.25;
    CHECK(scores.size() == 1);
    CHECK(scores[0] == doctest::Approx(norm2).epsilon(1e-15));

    cache.append({0, 1, 0, 1}, {5, 6, 7, 8});
    auto attended = attention_attend({0.0, 1.0}, cache);
    CHECK(attended == std::vector<double>{5, 6, 7, 8});
}

TEST_CASE("attention matches the naive double loop; empty cache rejected") {
    std::mt19937_64 rng(13);
    KVCache cache;
    cache.dim_head = 16;
    for (int i = 0; i < 8; ++i) cache.append(randn(16, rng), randn(16, rng));
    auto q = randn(16, rng);
    auto scores = attention_score(q, cache);
    for (size_t i = 0; i < 8; ++i) {
        double want = 0;
        for (size_t h = 0; h < 16; ++h) want += cache.k_rows[i][h] * q[h];
        CHECK(scores[i] == doctest::Approx(want).epsilon(1e-14));
    }
    auto attended = attention_attend(scores, cache);
    for (size_t h = 0; h < 16; ++h) {
        double want = 0;
        for (size_t i = 0; i < 8; ++i) want += scores[i] * cache.v_rows[i][h];
        CHECK(attended[h] == doctest::Approx(want).epsilon(1e-13));
    }

    KVCache empty;
    empty.dim_head = 16;
    CHECK_THROWS_AS(attention_score(q, empty), std::invalid_argument);
}

TEST_CASE("two-phase attention equals monolithic softmax attention") {
    std::mt19937_64 rng(17);
    KVCache cache;
    cache.dim_head = 8;
    for (int i = 0; i < 12; ++i) cache.append(randn(8, rng), randn(8, rng));
    auto q = randn(8, rng);

    auto scores = attention_score(q, cache);
    double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0;
    std::vector<double> soft(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) z += std::exp(scores[i] - mx);
    for (size_t i = 0; i < scores.size(); ++i) soft[i] = std::exp(scores[i] - mx) / z;
    auto attended = attention_attend(soft, cache);

    for (size_t h = 0; h < 8; ++h) {
        double want = 0;
        for (size_t i = 0; i < cache.seq_len(); ++i) {
            double w = 0;
            for (size_t j = 0; j < 8; ++j) w += cache.k_rows[i][j] * q[j];
            want += std::exp(w - mx) / z * cache.v_rows[i][h];
        }
        CHECK(attended[h] == doctest::Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("mx attention agrees with its reference within group precision") {
    std::mt19937_64 rng(19);
    KVCache cache;
    cache.dim_head = 16;
    for (int i = 0; i < 8; ++i) cache.append(randn(16, rng), randn(16, rng));
    auto q = randn(16, rng);
    Rounder rm;
    MxKVCache mx = quantize_kv(cache, rm);
    auto q_groups = quantize_head_vector(q, rm);
    auto scores = attention_score_mx(q_groups, mx);
    auto ref_scores = attention_score(q, cache);
    for (size_t i = 0; i < scores.size(); ++i)
        CHECK(scores[i] == doctest::Approx(ref_scores[i]).epsilon(0.15));
    std::vector<double> soft(scores.size(), 1.0 / scores.size());
    auto attended = attention_attend_mx(soft, mx, rm);
    auto ref_at = attention_attend(soft, cache);
    for (size_t h = 0; h < 16; ++h)
        CHECK(attended[h] == doctest::Approx(ref_at[h]).epsilon(0.2).scale(1.0));
}

TEST_CASE("linear attention equivalence: prefix product, decay gate") {
    std::mt19937_64 rng(23);
    size_t dh = 4, ds = 4, T = 4;
    std::vector<std::vector<double>> Q, K, V;
    for (size_t t = 0; t < T; ++t) {
        Q.push_back(randn(dh, rng));
        K.push_back(randn(dh, rng));
        V.push_back(randn(ds, rng));
    }
    CHECK(linear_attention_equivalence(Q, K, V, std::vector<double>(dh, 1.0)));

    // T = 1: y_1 = v_1 (k_1 . q_1) is the same identity at one step.
    CHECK(linear_attention_equivalence({Q[0]}, {K[0]}, {V[0]},
                                       std::vector<double>(dh, 1.0)));

    // Any decay != 1 breaks the equivalence.
    std::vector<double> decay(dh, 0.9);
    CHECK_FALSE(linear_attention_equivalence(Q, K, V, decay));
}

TEST_CASE("padding: dim_head 40 pads to 48 with masked lanes") {
    std::mt19937_64 rng(29);
    StateMatrix S(40, 4);
    for (auto& v : S.s) v = randn(1, rng)[0];
    Rounder rm;
    MxStateMatrix qs = quantize_state(S, rm);
    CHECK(qs.dim_head_padded == 48);
    CHECK(qs.groups_per_col() == 3);
    StateMatrix back = dequantize_state(qs);
    CHECK(back.dim_head == 40);
    // Masked lanes decode to zero inside the padded groups.
    auto last = dequantize_mx(qs.group(0, 2));
    for (int i = 8; i < 16; ++i) CHECK(last[i] == 0.0);
}
