#include "pimba/state_update.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pimba {

namespace {

size_t pad16(size_t n) { return (n + MXGroup::kElems - 1) / MXGroup::kElems * MXGroup::kElems; }

// Quantize a padded dim_head vector into groups, zeros in the masked lanes.
std::vector<MXGroup> quantize_lanes(const std::vector<double>& x, size_t padded,
                                    Rounder& rm, MxFlags* flags) {
    std::vector<MXGroup> out;
    out.reserve(padded / MXGroup::kElems);
    std::array<double, MXGroup::kElems> buf{};
    for (size_t base = 0; base < padded; base += MXGroup::kElems) {
        buf.fill(0.0);
        for (size_t i = 0; i < MXGroup::kElems && base + i < x.size(); ++i)
            buf[i] = x[base + i];
        out.push_back(quantize_mx(buf, rm, flags));
    }
    return out;
}

MXGroup broadcast_group(double v, Rounder& rm, MxFlags* flags) {
    std::array<double, MXGroup::kElems> buf;
    buf.fill(v);
    return quantize_mx(buf, rm, flags);
}

}  // namespace

StepResult state_update_step_ref(StateMatrix& S, const StateUpdateInputs& in) {
    if (in.d.size() != S.dim_head || in.q.size() != S.dim_head ||
        in.k.size() != S.dim_head || in.v.size() != S.dim_state)
        throw std::invalid_argument("state update dimension mismatch");

    StepResult r;
    r.y.assign(S.dim_state, 0.0);
    for (size_t c = 0; c < S.dim_state; ++c) {
        for (size_t h = 0; h < S.dim_head; ++h) {
            double s = in.d[h] * S.at(h, c) + in.k[h] * in.v[c];
            S.at(h, c) = s;
            r.y[c] += s * in.q[h];
        }
    }
    return r;
}

MxStateMatrix quantize_state(const StateMatrix& S, Rounder& rm, MxFlags* flags) {
    MxStateMatrix q;
    q.dim_head = S.dim_head;
    q.dim_head_padded = pad16(S.dim_head);
    q.dim_state = S.dim_state;
    size_t G = q.groups_per_col();
    q.groups.reserve(G * S.dim_state);
    std::array<double, MXGroup::kElems> buf{};
    for (size_t c = 0; c < S.dim_state; ++c) {
        for (size_t g = 0; g < G; ++g) {
            buf.fill(0.0);
            for (size_t i = 0; i < MXGroup::kElems; ++i) {
                size_t h = g * MXGroup::kElems + i;
                if (h < S.dim_head) buf[i] = S.at(h, c);
            }
            q.groups.push_back(quantize_mx(buf, rm, flags));
        }
    }
    return q;
}

StateMatrix dequantize_state(const MxStateMatrix& S) {
    StateMatrix out(S.dim_head, S.dim_state);
    size_t G = S.groups_per_col();
    for (size_t c = 0; c < S.dim_state; ++c) {
        for (size_t g = 0; g < G; ++g) {
            auto vals = dequantize_mx(S.group(c, g));
            for (size_t i = 0; i < MXGroup::kElems; ++i) {
                size_t h = g * MXGroup::kElems + i;
                if (h < S.dim_head) out.at(h, c) = vals[i];
            }
        }
    }
    return out;
}

MxOperands quantize_operands(const StateUpdateInputs& in, Rounder& rm, MxFlags* flags) {
    MxOperands ops;
    ops.dim_head = in.d.size();
    ops.dim_head_padded = pad16(in.d.size());
    ops.dim_state = in.v.size();
    ops.d = quantize_lanes(in.d, ops.dim_head_padded, rm, flags);
    ops.k = quantize_lanes(in.k, ops.dim_head_padded, rm, flags);
    ops.q = quantize_lanes(in.q, ops.dim_head_padded, rm, flags);
    ops.v_bcast.reserve(in.v.size());
    for (double v : in.v) ops.v_bcast.push_back(broadcast_group(v, rm, flags));
    return ops;
}

StepResult state_update_step_mx(MxStateMatrix& S, const MxOperands& ops, Rounder& rm) {
    if (ops.dim_head_padded != S.dim_head_padded || ops.dim_state != S.dim_state)
        throw std::invalid_argument("state update dimension mismatch");

    StepResult r;
    r.y.assign(S.dim_state, 0.0);
    size_t G = S.groups_per_col();
    for (size_t c = 0; c < S.dim_state; ++c) {
        for (size_t g = 0; g < G; ++g) {
            MXGroup decayed = mx_multiply(ops.d[g], S.group(c, g), rm, &r.flags);
            MXGroup outer = mx_multiply(ops.k[g], ops.v_bcast[c], rm, &r.flags);
            MXGroup updated = mx_add(decayed, outer, rm, &r.flags);
            S.group(c, g) = updated;
            r.y[c] += mx_dot(updated, ops.q[g], &r.flags);
        }
    }
    return r;
}

void KVCache::append(std::vector<double> k, std::vector<double> v) {
    if (k.size() != dim_head || v.size() != dim_head)
        throw std::invalid_argument("kv row dimension mismatch");
    k_rows.push_back(std::move(k));
    v_rows.push_back(std::move(v));
}

std::vector<double> attention_score(const std::vector<double>& q, const KVCache& cache) {
    if (cache.seq_len() == 0) throw std::invalid_argument("empty kv cache");
    if (q.size() != cache.dim_head) throw std::invalid_argument("query dimension mismatch");
    std::vector<double> scores(cache.seq_len(), 0.0);
    for (size_t i = 0; i < cache.seq_len(); ++i)
        for (size_t h = 0; h < cache.dim_head; ++h)
            scores[i] += cache.k_rows[i][h] * q[h];
    return scores;
}

std::vector<double> attention_attend(const std::vector<double>& scores,
                                     const KVCache& cache) {
    if (cache.seq_len() == 0) throw std::invalid_argument("empty kv cache");
    if (scores.size() != cache.seq_len())
        throw std::invalid_argument("score length mismatch");
    std::vector<double> out(cache.dim_head, 0.0);
    for (size_t i = 0; i < cache.seq_len(); ++i)
        for (size_t h = 0; h < cache.dim_head; ++h)
            out[h] += scores[i] * cache.v_rows[i][h];
    return out;
}

MxKVCache quantize_kv(const KVCache& cache, Rounder& rm) {
    MxKVCache q;
    q.dim_head = cache.dim_head;
    q.dim_head_padded = pad16(cache.dim_head);
    for (size_t i = 0; i < cache.seq_len(); ++i) {
        auto kg = quantize_lanes(cache.k_rows[i], q.dim_head_padded, rm, nullptr);
        auto vg = quantize_lanes(cache.v_rows[i], q.dim_head_padded, rm, nullptr);
        q.k_rows.insert(q.k_rows.end(), kg.begin(), kg.end());
        q.v_rows.insert(q.v_rows.end(), vg.begin(), vg.end());
    }
    return q;
}

std::vector<double> attention_score_mx(const std::vector<MXGroup>& q_groups,
                                       const MxKVCache& cache) {
    if (cache.seq_len() == 0) throw std::invalid_argument("empty kv cache");
    size_t G = cache.groups_per_row();
    std::vector<double> scores(cache.seq_len(), 0.0);
    for (size_t i = 0; i < cache.seq_len(); ++i)
        for (size_t g = 0; g < G; ++g)
            scores[i] += mx_dot(cache.k_rows[i * G + g], q_groups[g]);
    return scores;
}

std::vector<MXGroup> quantize_head_vector(const std::vector<double>& x, Rounder& rm,
                                          MxFlags* flags) {
    return quantize_lanes(x, pad16(x.size()), rm, flags);
}

std::vector<MXGroup> quantize_scores(const std::vector<double>& scores, Rounder& rm,
                                     MxFlags* flags) {
    std::vector<MXGroup> out;
    out.reserve(scores.size());
    for (double s : scores) out.push_back(broadcast_group(s, rm, flags));
    return out;
}

std::vector<MXGroup> attend_accumulate(const std::vector<MXGroup>& score_groups,
                                       const MxKVCache& cache, Rounder& rm,
                                       MxFlags* flags) {
    size_t G = cache.groups_per_row();
    std::vector<MXGroup> acc(G, MXGroup::canonical_zero());
    for (size_t i = 0; i < cache.seq_len(); ++i) {
        for (size_t g = 0; g < G; ++g) {
            MXGroup weighted = mx_multiply(score_groups[i], cache.v_rows[i * G + g], rm, flags);
            acc[g] = mx_add(acc[g], weighted, rm, flags);
        }
    }
    return acc;
}

std::vector<double> attention_attend_mx(const std::vector<double>& scores,
                                        const MxKVCache& cache, Rounder& rm,
                                        MxFlags* flags) {
    if (cache.seq_len() == 0) throw std::invalid_argument("empty kv cache");
    if (scores.size() != cache.seq_len())
        throw std::invalid_argument("score length mismatch");
    size_t G = cache.groups_per_row();

    std::vector<MXGroup> score_groups = quantize_scores(scores, rm, flags);
    std::vector<MXGroup> acc = attend_accumulate(score_groups, cache, rm, flags);

    std::vector<double> out(cache.dim_head, 0.0);
    for (size_t g = 0; g < G; ++g) {
        auto vals = dequantize_mx(acc[g]);
        for (size_t e = 0; e < MXGroup::kElems; ++e) {
            size_t h = g * MXGroup::kElems + e;
            if (h < cache.dim_head) out[h] = vals[e];
        }
    }
    return out;
}

bool linear_attention_equivalence(const std::vector<std::vector<double>>& Q,
                                  const std::vector<std::vector<double>>& K,
                                  const std::vector<std::vector<double>>& V,
                                  const std::vector<double>& decay,
                                  double tolerance) {
    size_t T = Q.size();
    if (T == 0 || K.size() != T || V.size() != T) return false;
    size_t dh = Q[0].size();
    size_t ds = V[0].size();

    StateMatrix S(dh, ds);
    for (size_t t = 0; t < T; ++t) {
        StateUpdateInputs in{decay, Q[t], K[t], V[t]};
        StepResult step = state_update_step_ref(S, in);

        // Prefix-product oracle: row t of Q (K^T V) with K, V up to t.
        for (size_t c = 0; c < ds; ++c) {
            double want = 0.0;
            for (size_t tau = 0; tau <= t; ++tau) {
                double kq = 0.0;
                for (size_t h = 0; h < dh; ++h) kq += K[tau][h] * Q[t][h];
                want += kq * V[tau][c];
            }
            if (std::fabs(step.y[c] - want) > tolerance) return false;
        }
    }
    return true;
}

}  // namespace pimba
