#pragma once

#include <cstddef>
#include <vector>

#include "pimba/mx.hpp"
#include "pimba/rounding.hpp"

namespace pimba {

// Per-head inputs of the generalized state update
//   S_t = d ⊙ S_{t-1} + k v^T,  y_t = S_t^T q.
// Scalar-decay models broadcast their scalar into d at ingestion.
struct StateUpdateInputs {
    std::vector<double> d;  // dim_head
    std::vector<double> q;  // dim_head
    std::vector<double> k;  // dim_head
    std::vector<double> v;  // dim_state
};

// Dense double-precision state, row-major [dim_head][dim_state].
struct StateMatrix {
    size_t dim_head = 0;
    size_t dim_state = 0;
    std::vector<double> s;

    StateMatrix() = default;
    StateMatrix(size_t dh, size_t ds) : dim_head(dh), dim_state(ds), s(dh * ds, 0.0) {}
    double& at(size_t h, size_t c) { return s[h * dim_state + c]; }
    double at(size_t h, size_t c) const { return s[h * dim_state + c]; }
};

struct StepResult {
    std::vector<double> y;  // dim_state
    MxFlags flags;
};

// Reference semantics, double precision throughout. S is updated in place.
// Throws std::invalid_argument on dimension mismatch; decay entries outside
// [0, 1] are accepted (the well-posedness check is warn-only at the CLI).
StepResult state_update_step_ref(StateMatrix& S, const StateUpdateInputs& in);

// Quantized state: dim_head padded to a multiple of 16, stored column-major
// as MXGroups along dim_head (group g of column c at groups[c * G + g]).
struct MxStateMatrix {
    size_t dim_head = 0;         // logical (unpadded)
    size_t dim_head_padded = 0;  // multiple of 16
    size_t dim_state = 0;
    std::vector<MXGroup> groups;

    size_t groups_per_col() const { return dim_head_padded / MXGroup::kElems; }
    MXGroup& group(size_t col, size_t g) { return groups[col * groups_per_col() + g]; }
    const MXGroup& group(size_t col, size_t g) const {
        return groups[col * groups_per_col() + g];
    }
};

MxStateMatrix quantize_state(const StateMatrix& S, Rounder& rm, MxFlags* flags = nullptr);
StateMatrix dequantize_state(const MxStateMatrix& S);

// Operands quantized once per step, in the fixed ingestion order d, k, q,
// then v[0..dim_state) as broadcast groups. The device path consumes the
// same object, so LFSR streams line up bit for bit.
struct MxOperands {
    size_t dim_head = 0;
    size_t dim_head_padded = 0;
    size_t dim_state = 0;
    std::vector<MXGroup> d, k, q;  // groups_per_col each
    std::vector<MXGroup> v_bcast;  // dim_state broadcast groups
};

MxOperands quantize_operands(const StateUpdateInputs& in, Rounder& rm,
                             MxFlags* flags = nullptr);

// MX semantics in the exact SPE dataflow order: for each state column
// (ascending), for each 16-group along dim_head (ascending):
//   mx_add(mx_multiply(d_g, S_gc), mx_multiply(k_g, v_c)), then
//   y_c += mx_dot(S'_gc, q_g) accumulated in double.
StepResult state_update_step_mx(MxStateMatrix& S, const MxOperands& ops, Rounder& rm);

// Per-head KV cache, rows appended monotonically; K and V rows are both
// dim_head long.
struct KVCache {
    size_t dim_head = 0;
    std::vector<std::vector<double>> k_rows;
    std::vector<std::vector<double>> v_rows;

    size_t seq_len() const { return k_rows.size(); }
    void append(std::vector<double> k, std::vector<double> v);
};

// score_i = K_i · q; attend = sum_i scores_i * V_i. Softmax lives on the
// host between the two phases and is intentionally absent here.
std::vector<double> attention_score(const std::vector<double>& q, const KVCache& cache);
std::vector<double> attention_attend(const std::vector<double>& scores,
                                     const KVCache& cache);

// MXGroup-packed cache rows (group g of token i at rows[i * G + g]).
struct MxKVCache {
    size_t dim_head = 0;
    size_t dim_head_padded = 0;
    std::vector<MXGroup> k_rows;
    std::vector<MXGroup> v_rows;

    size_t groups_per_row() const { return dim_head_padded / MXGroup::kElems; }
    size_t seq_len() const {
        return groups_per_row() ? k_rows.size() / groups_per_row() : 0;
    }
};

MxKVCache quantize_kv(const KVCache& cache, Rounder& rm);

// Quantizes a dim_head vector into groups (zero padding in masked lanes).
std::vector<MXGroup> quantize_head_vector(const std::vector<double>& x, Rounder& rm,
                                          MxFlags* flags = nullptr);

// One broadcast group per score, token order (the attend-phase ingestion).
std::vector<MXGroup> quantize_scores(const std::vector<double>& scores, Rounder& rm,
                                     MxFlags* flags = nullptr);

// Attend-phase accumulation in device order (tokens ascending, groups
// ascending): acc_g = mx_add(acc_g, mx_multiply(score_i, V_gi)).
std::vector<MXGroup> attend_accumulate(const std::vector<MXGroup>& score_groups,
                                       const MxKVCache& cache, Rounder& rm,
                                       MxFlags* flags = nullptr);

// Same dataflow order as the device: tokens ascending, groups ascending.
std::vector<double> attention_score_mx(const std::vector<MXGroup>& q_groups,
                                       const MxKVCache& cache);
// Scores are quantized to broadcast groups at ingestion (token order), then
// attend accumulates per group with mx_add(acc, mx_multiply(score_i, V_gi)).
std::vector<double> attention_attend_mx(const std::vector<double>& scores,
                                        const MxKVCache& cache, Rounder& rm,
                                        MxFlags* flags = nullptr);

// Test utility: with decay == 1, stepping the recurrence over the sequence reproduces
// row t of Q (K^T V) with the running prefix product. Returns the verdict.
bool linear_attention_equivalence(const std::vector<std::vector<double>>& Q,
                                  const std::vector<std::vector<double>>& K,
                                  const std::vector<std::vector<double>>& V,
                                  const std::vector<double>& decay,
                                  double tolerance = 1e-12);

}  // namespace pimba
