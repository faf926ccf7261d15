#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pimba/layout.hpp"
#include "pimba/state_update.hpp"

namespace pimba {

struct DeviceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class CompMode : uint8_t { StateUpdate, AttnScore, AttnAttend };

enum class TraceAction : uint8_t { Read, Write, Idle };

// One record per SPU action per iteration; the hazard auditor consumes this.
struct TraceEvent {
    uint64_t iteration;
    int spu;
    int bank;
    TraceAction action;
    int row;
    int col;
};

std::string trace_to_csv(const std::vector<TraceEvent>& trace);

// Bank array with row-buffer state. Row storage is sparse (allocated on
// first touch); reads and writes require the row to be active.
class PimDevice {
  public:
    explicit PimDevice(const DramConfig& cfg);

    const DramConfig& config() const { return cfg_; }
    void activate(int bank, int row);
    void precharge_all();
    bool row_active(int bank, int row) const;

    void write_column(int bank, int row, int col, std::span<const std::byte> bytes);
    std::vector<std::byte> read_column(int bank, int row, int col) const;

  private:
    DramConfig cfg_;
    std::vector<int> active_row_;
    mutable std::unordered_map<uint64_t, std::vector<std::byte>> rows_;
    uint64_t key(int bank, int row) const {
        return (static_cast<uint64_t>(bank) << 32) | static_cast<uint32_t>(row);
    }
};

// Everything one (request, head) chunk group needs: quantized data plus the
// rounder stream left exactly where ingestion finished, so device and golden
// replays consume identical LFSR words.
struct HeadTask {
    MxStateMatrix state;
    MxOperands ops;
    MxKVCache kv;
    std::vector<MXGroup> q_groups;
    std::vector<MXGroup> score_groups;
    Rounder rounder{RoundMode::NearestEven};
};

struct PimWorkload {
    CompMode mode = CompMode::StateUpdate;
    int batch = 0;
    int n_heads = 0;
    int dim_head = 0;
    int dim_state = 0;  // seq_len in attention modes
    std::vector<HeadTask> tasks;

    HeadTask& task(int request, int head) {
        return tasks[static_cast<size_t>(request) * n_heads + head];
    }
};

struct ExecResult {
    uint64_t iterations = 0;
    uint64_t column_reads = 0;
    uint64_t column_writes = 0;
    // Per task: y (dim_state) in state mode, scores (seq) in score mode,
    // attend (dim_head) in attend mode.
    std::vector<std::vector<double>> outputs;
    MxFlags flags;
    std::vector<TraceEvent> trace;
};

// Loads the workload's state (or KV) bytes into the bank rows given by the
// layout. In attention modes the stored matrix is K (score) or V (attend).
void load_workload(PimDevice& dev, const ChunkLayout& layout, const PimWorkload& wl);

// Shared-SPU pipeline with access interleaving, pumpable one PIM iteration at
// a time (the COMP command granularity). Each iteration the SPU reads the
// next sub-chunk from the parity-selected bank, advances the four pipeline
// stages, and writes back the sub-chunk read three iterations earlier to the
// opposite bank (state mode). Attention modes skip write-back. With
// auto_activate off, reads stall until the target row is activated.
class InterleavedEngine {
  public:
    InterleavedEngine(PimDevice& dev, const ChunkLayout& layout, PimWorkload& wl,
                      bool record_trace, bool auto_activate);
    ~InterleavedEngine();

    bool step();  // one iteration; returns whether work remains
    bool done() const;
    uint64_t iteration() const;
    ExecResult finish();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Convenience pump: auto-activates rows and runs until drained. Outputs are
// bit-identical to the state_update_core MX functions applied in layout order.
ExecResult execute_comp(PimDevice& dev, const ChunkLayout& layout, PimWorkload& wl,
                        bool record_trace = false);

// Per-bank-pipelined reference: one unit per bank, no interleaving; a ready
// write blocks that bank's read for the iteration.
ExecResult execute_per_bank(PimDevice& dev, const ChunkLayout& layout, PimWorkload& wl,
                            bool record_trace = false);

// Reads a task's state back out of the banks (write-back inspection).
MxStateMatrix read_back_state(PimDevice& dev, const ChunkLayout& layout,
                              const PimWorkload& wl, int request, int head);

// HBM-PIM-style baseline: fp16 state, one unit spanning two banks, no access
// interleaving, each state-update primitive issued as a separate pass
// (decay read+write, update read+write, output read). Functional outputs use
// fp16 element arithmetic with double dot accumulation.
struct TmResult {
    uint64_t iterations = 0;
    uint64_t column_reads = 0;
    uint64_t column_writes = 0;
    std::vector<std::vector<double>> outputs;  // y per task
    std::vector<TraceEvent> trace;
};

struct TmWorkload {
    int batch = 0;
    int n_heads = 0;
    int dim_head = 0;
    int dim_state = 0;
    bool decay_only = false;  // single-primitive pass, for baseline comparisons
    // fp16-encoded state and operands per task.
    std::vector<std::vector<uint16_t>> states;  // row-major dim_head x dim_state
    std::vector<std::vector<uint16_t>> d, k, q;
    std::vector<std::vector<uint16_t>> v;
};

TmResult execute_time_multiplexed(const ChunkLayout& layout_fp16, TmWorkload& wl,
                                  bool record_trace = false);

// Golden replay of a workload through the state_update_core MX functions, in
// the same canonical order the device uses.
std::vector<std::vector<double>> golden_outputs(const PimWorkload& wl,
                                                std::vector<HeadTask>* final_tasks = nullptr);

// Builders used by tests and the CLI: deterministic random data, quantized in
// the fixed ingestion order (state, then operands d/k/q/v).
PimWorkload make_state_workload(int batch, int n_heads, int dim_head, int dim_state,
                                uint64_t data_seed, uint16_t lfsr_seed, RoundMode mode);
PimWorkload make_attention_workload(CompMode mode, int batch, int n_heads, int dim_head,
                                    int seq_len, uint64_t data_seed, uint16_t lfsr_seed,
                                    RoundMode rmode);
TmWorkload make_tm_workload(int batch, int n_heads, int dim_head, int dim_state,
                            uint64_t data_seed, bool decay_only = false);

}  // namespace pimba
