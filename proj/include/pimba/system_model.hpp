#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pimba/dram.hpp"

namespace pimba {

enum class SystemKind : uint8_t { Gpu, GpuQ, GpuPimTm, Pimba };

const char* system_name(SystemKind k);
SystemKind system_from_name(const std::string& name);

struct ModelConfig {
    std::string name;
    double params_total = 0;
    int n_layers = 0;
    int hidden_dim = 0;
    int n_heads = 0;
    int dim_head = 0;
    int dim_state = 0;
    double attention_layer_ratio = 0.0;  // 0 pure SU, 1/7-style hybrid, 1 attention
    double weight_bytes = 2.0;           // fp16 weights throughout

    double su_layers() const { return n_layers * (1.0 - attention_layer_ratio); }
    double attn_layers() const { return n_layers * attention_layer_ratio; }

    // Scales layers and hidden dim to a parameter target, keeping the head
    // count and re-aligning dim_head/dim_state with the hidden size.
    ModelConfig scaled_to(double params_target) const;
};

// Named presets: retnet, gla, hgrn2, mamba2 (2.7B-class), zamba2 (7B hybrid),
// opt (attention-only).
ModelConfig model_preset(const std::string& name);

struct SystemConfig {
    double external_bandwidth = 2.0e12;  // bytes/s per device
    double compute_throughput = 312e12;  // flop/s per device
    int n_devices = 1;
    double memory_capacity = 80e9;  // bytes per device
    int pim_modules = 40;
    int pseudo_channels_per_module = 2;
    DramConfig dram;
    TimingParams timing;
    // Energy coefficients; placeholder defaults, all configurable.
    double pj_per_activation = 909.0;
    double pj_per_column_op = 100.0;
    double pj_per_channel_byte = 28.0;
    double pj_per_mx_op = 0.5;

    int total_pseudo_channels() const { return pim_modules * pseudo_channels_per_module; }
    double machine_balance() const { return compute_throughput / external_bandwidth; }
};

struct Roofline {
    double arithmetic_intensity = 0;  // flop/byte
    bool memory_bound = true;
};

enum class OpClass : uint8_t { StateUpdate, Attention, Gemm };

// Counting rules: state update 5 FLOPs per state element (decay mul, outer
// mul, add, dot mul+add) over read+write of S; attention 2 FLOPs per cached
// element over read of K and V; gemm 2*batch FLOPs per weight element over
// one weight read (batch reuse).
Roofline roofline(OpClass op, const ModelConfig& model, double bytes_per_element,
                  const SystemConfig& sys, int batch = 1);

struct LatencyBreakdown {
    double projections_ffn = 0;  // seconds over the whole generation
    double state_update = 0;
    double attention = 0;
    double other = 0;
    double tokens_per_s = 0;

    double total() const { return projections_ffn + state_update + attention + other; }
};

struct EnergyBreakdown {
    double activation_j = 0;
    double column_j = 0;
    double channel_j = 0;
    double compute_j = 0;

    double total() const { return activation_j + column_j + channel_j + compute_j; }
};

struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Generation-phase accounting under blocked GPU<->PIM execution. Projections
// stream weights once per token (reused across the batch); state update and
// attention run at external bandwidth on the GPU systems and at the device
// pipeline rate (plus operand transfer) on the PIM systems.
LatencyBreakdown estimate_generation(const ModelConfig& model, const SystemConfig& sys,
                                     int batch, int in_len, int out_len, SystemKind kind);

EnergyBreakdown estimate_energy(const ModelConfig& model, const SystemConfig& sys,
                                int batch, int in_len, int out_len, SystemKind kind);

struct SweepPoint {
    std::string model;
    SystemKind system;
    int batch;
    int in_len;
    int out_len;
};

struct SweepRow {
    SweepPoint point;
    std::optional<LatencyBreakdown> latency;
    std::optional<EnergyBreakdown> energy;
    std::string error;  // set when the point failed
};

// Runs every grid point, deterministic order; individual failures are
// recorded and the sweep continues.
std::vector<SweepRow> sweep(const std::vector<SweepPoint>& grid, const SystemConfig& sys);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);
std::string sweep_to_json(const std::vector<SweepRow>& rows);

}  // namespace pimba
