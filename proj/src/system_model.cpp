#include "pimba/system_model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace pimba {

namespace {

int round16(double x) {
    int v = static_cast<int>(std::lround(x / 16.0)) * 16;
    return std::max(16, v);
}

double state_bpe(SystemKind k) {
    return (k == SystemKind::GpuQ || k == SystemKind::Pimba) ? 1.0 : 2.0;
}

struct PimPhase {
    double seconds = 0;
    double activations = 0;
    double column_ops = 0;
    double channel_bytes = 0;
    double mx_ops = 0;
};

// One PIM layer phase (all chunk groups of one layer for the whole batch).
// The all-bank layout spreads sub-chunks evenly over every bank of every
// pseudo-channel (chunk groups split across banks with operands replicated),
// so an interleaved SPU pair retires one sub-chunk per PIM cycle and a
// time-multiplexed unit one column access. Operand/result transfer rides the
// ACT4/PRECHARGES windows; the slower path bounds the phase.
PimPhase pim_state_update_phase(const ModelConfig& m, const SystemConfig& sys,
                                int batch, bool time_multiplexed) {
    PimPhase p;
    double groups_total = static_cast<double>(batch) * m.n_heads;
    double n_pch =
        static_cast<double>(sys.total_pseudo_channels()) * sys.n_devices;
    double groups_per_pch = std::ceil(groups_total / n_pch);

    double pim_cycle = 1.0 / sys.dram.pim_frequency_hz;
    int dh = round16(m.dim_head);
    double values_per_group = static_cast<double>(dh) * m.dim_state;
    double iters;
    if (!time_multiplexed) {
        // MX8: 32 values per sub-chunk, one per iteration per SPU pair.
        double subs_pch = groups_per_pch * std::ceil(values_per_group / 32.0);
        iters = std::ceil(subs_pch / sys.dram.spus()) + 3;  // pipeline drain
        p.column_ops = groups_total * std::ceil(values_per_group / 32.0) * 2.0;
        p.mx_ops = p.column_ops * 4.0;  // two groups per sub-chunk, four ops each
    } else {
        // fp16, 16 values per column, five serialized accesses per column
        // (decay R+W, update R+W, output R), one access per unit per cycle.
        double accesses_pch = groups_per_pch * 5.0 * values_per_group / 16.0;
        iters = std::ceil(accesses_pch / sys.dram.spus());
        p.column_ops = groups_total * 5.0 * values_per_group / 16.0;
        p.mx_ops = 0;
    }
    double device_s = iters * pim_cycle;

    // Shared d/q/k once per chunk group plus the v vector, results back.
    double operand_bytes_per_group = 3.0 * (dh / 16.0) * 16.0 + m.dim_state;
    if (time_multiplexed) operand_bytes_per_group = 2.0 * (3.0 * dh + m.dim_state);
    double result_bytes_per_group = m.dim_state * 4.0;
    p.channel_bytes = groups_total * (operand_bytes_per_group + result_bytes_per_group);
    p.seconds = std::max(device_s,
                         p.channel_bytes / (sys.external_bandwidth * sys.n_devices));

    double chunks_per_group = std::ceil(values_per_group /
                                        (sys.dram.columns_per_row * 32.0 /
                                         (time_multiplexed ? 2.0 : 1.0)));
    double passes = time_multiplexed ? 3.0 : 1.0;  // TM reopens rows per pass
    p.activations = groups_total * chunks_per_group * passes;
    return p;
}

PimPhase pim_attention_phase(const ModelConfig& m, const SystemConfig& sys, int batch,
                             double seq, bool time_multiplexed) {
    PimPhase p;
    double groups_total = static_cast<double>(batch) * m.n_heads;
    double n_pch =
        static_cast<double>(sys.total_pseudo_channels()) * sys.n_devices;
    double groups_per_pch = std::ceil(groups_total / n_pch);

    double pim_cycle = 1.0 / sys.dram.pim_frequency_hz;
    int dh = round16(m.dim_head);
    double values = static_cast<double>(dh) * seq;  // per cache matrix (K or V)
    double iters;
    if (!time_multiplexed) {
        // Score over K plus attend over V, reads only, blocked by softmax.
        double subs_pch = groups_per_pch * std::ceil(values / 32.0);
        iters = 2.0 * (std::ceil(subs_pch / sys.dram.spus()) + 3);
        p.column_ops = groups_total * std::ceil(values / 32.0) * 2.0;
        p.mx_ops = p.column_ops * 3.0;
    } else {
        double accesses_pch = groups_per_pch * 2.0 * values / 16.0;
        iters = std::ceil(accesses_pch / sys.dram.spus());
        p.column_ops = groups_total * 2.0 * values / 16.0;
        p.mx_ops = 0;
    }
    double device_s = iters * pim_cycle;

    double operand_bytes = (dh / 16.0) * 16.0 + seq * (time_multiplexed ? 2.0 : 1.0);
    double result_bytes = (seq + dh) * 4.0;  // scores out, attend out
    p.channel_bytes = groups_total * (operand_bytes + result_bytes);
    p.seconds = std::max(device_s,
                         p.channel_bytes / (sys.external_bandwidth * sys.n_devices));

    double chunks = std::ceil(values / (sys.dram.columns_per_row * 32.0 /
                                        (time_multiplexed ? 2.0 : 1.0)));
    p.activations = groups_total * chunks * 2.0;
    return p;
}

void check_capacity(const ModelConfig& m, const SystemConfig& sys, int batch, int in_len,
                    int out_len, SystemKind kind) {
    double weights = m.params_total * m.weight_bytes;
    double state = static_cast<double>(batch) * m.su_layers() * m.n_heads * m.dim_head *
                   m.dim_state * state_bpe(kind);
    double kv = static_cast<double>(batch) * m.attn_layers() * m.n_heads * m.dim_head *
                2.0 * (in_len + out_len) * state_bpe(kind);
    double need = weights + state + kv;
    double have = sys.memory_capacity * sys.n_devices;
    if (need > have) {
        std::ostringstream os;
        os << "capacity exceeded: model needs " << need / 1e9 << " GB, devices hold "
           << have / 1e9 << " GB";
        throw CapacityError(os.str());
    }
}

}  // namespace

const char* system_name(SystemKind k) {
    switch (k) {
        case SystemKind::Gpu: return "gpu";
        case SystemKind::GpuQ: return "gpu_q";
        case SystemKind::GpuPimTm: return "gpu_pim_tm";
        case SystemKind::Pimba: return "pimba";
    }
    return "?";
}

SystemKind system_from_name(const std::string& name) {
    if (name == "gpu") return SystemKind::Gpu;
    if (name == "gpu_q") return SystemKind::GpuQ;
    if (name == "gpu_pim_tm") return SystemKind::GpuPimTm;
    if (name == "pimba") return SystemKind::Pimba;
    throw std::invalid_argument("unknown system: " + name);
}

ModelConfig ModelConfig::scaled_to(double params_target) const {
    double s = std::cbrt(params_target / params_total);
    ModelConfig out = *this;
    out.n_layers = std::max(1, static_cast<int>(std::lround(n_layers * s)));
    out.hidden_dim = round16(hidden_dim * s);
    // Head count stays fixed; head and state dims realign with the hidden dim.
    out.dim_head = round16(static_cast<double>(out.hidden_dim) / n_heads);
    out.dim_state = round16(dim_state * (static_cast<double>(out.dim_head) / dim_head));
    out.params_total = 12.0 * out.n_layers * out.hidden_dim * out.hidden_dim;
    out.name = name + "-scaled";
    return out;
}

ModelConfig model_preset(const std::string& name) {
    ModelConfig m;
    m.name = name;
    if (name == "retnet") {
        m.n_layers = 32; m.hidden_dim = 2560; m.n_heads = 10;
        m.dim_head = 256; m.dim_state = 256; m.attention_layer_ratio = 0.0;
    } else if (name == "gla") {
        m.n_layers = 32; m.hidden_dim = 2560; m.n_heads = 8;
        m.dim_head = 320; m.dim_state = 320; m.attention_layer_ratio = 0.0;
    } else if (name == "hgrn2") {
        m.n_layers = 32; m.hidden_dim = 2560; m.n_heads = 20;
        m.dim_head = 128; m.dim_state = 128; m.attention_layer_ratio = 0.0;
    } else if (name == "mamba2") {
        m.n_layers = 64; m.hidden_dim = 2560; m.n_heads = 80;
        m.dim_head = 64; m.dim_state = 128; m.attention_layer_ratio = 0.0;
    } else if (name == "zamba2") {
        m.n_layers = 56; m.hidden_dim = 3712; m.n_heads = 58;
        m.dim_head = 64; m.dim_state = 128; m.attention_layer_ratio = 1.0 / 7.0;
    } else if (name == "opt") {
        m.n_layers = 32; m.hidden_dim = 4096; m.n_heads = 32;
        m.dim_head = 128; m.dim_state = 128; m.attention_layer_ratio = 1.0;
    } else {
        throw std::invalid_argument("unknown model preset: " + name);
    }
    m.params_total = 12.0 * m.n_layers * m.hidden_dim * m.hidden_dim;
    return m;
}

Roofline roofline(OpClass op, const ModelConfig& model, double bytes_per_element,
                  const SystemConfig& sys, int batch) {
    double elems, flops, bytes;
    switch (op) {
        case OpClass::StateUpdate:
            elems = static_cast<double>(model.dim_head) * model.dim_state;
            flops = 5.0 * elems;
            bytes = 2.0 * elems * bytes_per_element;  // read + write S
            break;
        case OpClass::Attention:
            elems = 2.0 * model.dim_head;  // one K row and one V row per token
            flops = 2.0 * elems;
            bytes = elems * bytes_per_element;  // read only
            break;
        case OpClass::Gemm:
            elems = static_cast<double>(model.hidden_dim) * model.hidden_dim;
            flops = 2.0 * elems * batch;
            bytes = elems * bytes_per_element;
            break;
        default:
            throw std::invalid_argument("bad op class");
    }
    Roofline r;
    r.arithmetic_intensity = flops / bytes;
    r.memory_bound = r.arithmetic_intensity < sys.machine_balance();
    return r;
}

LatencyBreakdown estimate_generation(const ModelConfig& model, const SystemConfig& sys,
                                     int batch, int in_len, int out_len, SystemKind kind) {
    check_capacity(model, sys, batch, in_len, out_len, kind);
    LatencyBreakdown b;
    double bw = sys.external_bandwidth * sys.n_devices;
    double compute = sys.compute_throughput * sys.n_devices;
    double tokens = std::max(1, out_len);

    // Projections/FFN: weights stream once per token, reused across the batch.
    double w_bytes = model.params_total * model.weight_bytes;
    double w_flops = 2.0 * model.params_total * batch;
    b.projections_ffn = tokens * std::max(w_bytes / bw, w_flops / compute);

    // State update: per token, every request reads and writes its own state.
    double state_elems = static_cast<double>(batch) * model.n_heads * model.dim_head *
                         model.dim_state;
    if (kind == SystemKind::Gpu || kind == SystemKind::GpuQ) {
        double bytes = 2.0 * state_elems * state_bpe(kind);
        b.state_update = tokens * model.su_layers() * bytes / bw;
    } else {
        PimPhase p = pim_state_update_phase(model, sys, batch,
                                            kind == SystemKind::GpuPimTm);
        b.state_update = tokens * model.su_layers() * p.seconds;
    }

    // Attention: linear in cached sequence length.
    double seq_avg = in_len + (tokens - 1.0) / 2.0;
    if (model.attn_layers() > 0) {
        if (kind == SystemKind::Gpu || kind == SystemKind::GpuQ) {
            double bytes = 2.0 * static_cast<double>(batch) * model.n_heads *
                           model.dim_head * seq_avg * state_bpe(kind);
            b.attention = tokens * model.attn_layers() * bytes / bw;
        } else {
            PimPhase p = pim_attention_phase(model, sys, batch, seq_avg,
                                             kind == SystemKind::GpuPimTm);
            b.attention = tokens * model.attn_layers() * p.seconds;
        }
    }

    // Residual/norm streaming, minor by construction.
    double act_bytes = 4.0 * static_cast<double>(batch) * model.hidden_dim * 2.0 *
                       model.n_layers;
    b.other = tokens * act_bytes / bw;

    double total = b.total();
    b.tokens_per_s = total > 0 ? batch * tokens / total : 0.0;
    return b;
}

EnergyBreakdown estimate_energy(const ModelConfig& model, const SystemConfig& sys,
                                int batch, int in_len, int out_len, SystemKind kind) {
    check_capacity(model, sys, batch, in_len, out_len, kind);
    EnergyBreakdown e;
    double tokens = out_len;  // zero-token run: zero dynamic energy
    if (tokens <= 0) return e;

    double w_bytes = model.params_total * model.weight_bytes;
    double seq_avg = in_len + (tokens - 1.0) / 2.0;
    double state_elems = static_cast<double>(batch) * model.n_heads * model.dim_head *
                         model.dim_state;
    double kv_elems = 2.0 * static_cast<double>(batch) * model.n_heads * model.dim_head *
                      seq_avg;

    double channel_bytes = tokens * w_bytes;  // weights always stream
    double activations = 0, column_ops = 0, mx_ops = 0;

    if (kind == SystemKind::Gpu || kind == SystemKind::GpuQ) {
        channel_bytes += tokens * model.su_layers() * 2.0 * state_elems * state_bpe(kind);
        channel_bytes += tokens * model.attn_layers() * kv_elems * state_bpe(kind);
    } else {
        bool tm = kind == SystemKind::GpuPimTm;
        PimPhase su = pim_state_update_phase(model, sys, batch, tm);
        channel_bytes += tokens * model.su_layers() * su.channel_bytes;
        activations += tokens * model.su_layers() * su.activations;
        column_ops += tokens * model.su_layers() * su.column_ops;
        mx_ops += tokens * model.su_layers() * su.mx_ops;
        if (model.attn_layers() > 0) {
            PimPhase at = pim_attention_phase(model, sys, batch, seq_avg, tm);
            channel_bytes += tokens * model.attn_layers() * at.channel_bytes;
            activations += tokens * model.attn_layers() * at.activations;
            column_ops += tokens * model.attn_layers() * at.column_ops;
            mx_ops += tokens * model.attn_layers() * at.mx_ops;
        }
    }

    e.activation_j = activations * sys.pj_per_activation * 1e-12;
    e.column_j = column_ops * sys.pj_per_column_op * 1e-12;
    e.channel_j = channel_bytes * sys.pj_per_channel_byte * 1e-12;
    e.compute_j = mx_ops * sys.pj_per_mx_op * 1e-12;
    return e;
}

std::vector<SweepRow> sweep(const std::vector<SweepPoint>& grid, const SystemConfig& sys) {
    std::vector<SweepRow> rows;
    rows.reserve(grid.size());
    for (const auto& pt : grid) {
        SweepRow row;
        row.point = pt;
        try {
            ModelConfig m = model_preset(pt.model);
            row.latency = estimate_generation(m, sys, pt.batch, pt.in_len, pt.out_len,
                                              pt.system);
            row.energy = estimate_energy(m, sys, pt.batch, pt.in_len, pt.out_len,
                                         pt.system);
        } catch (const std::exception& ex) {
            row.error = ex.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "model,system,batch,in_len,out_len,projections_ffn_s,state_update_s,"
          "attention_s,other_s,total_s,tokens_per_s,energy_j,error\n";
    os.precision(17);
    for (const auto& r : rows) {
        os << r.point.model << ',' << system_name(r.point.system) << ',' << r.point.batch
           << ',' << r.point.in_len << ',' << r.point.out_len << ',';
        if (r.latency) {
            os << r.latency->projections_ffn << ',' << r.latency->state_update << ','
               << r.latency->attention << ',' << r.latency->other << ','
               << r.latency->total() << ',' << r.latency->tokens_per_s << ',';
        } else {
            os << ",,,,,,";
        }
        if (r.energy) os << r.energy->total();
        os << ',' << r.error << '\n';
    }
    return os.str();
}

std::string sweep_to_json(const std::vector<SweepRow>& rows) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json row;
        row["model"] = r.point.model;
        row["system"] = system_name(r.point.system);
        row["batch"] = r.point.batch;
        row["in_len"] = r.point.in_len;
        row["out_len"] = r.point.out_len;
        if (r.latency) {
            row["projections_ffn_s"] = r.latency->projections_ffn;
            row["state_update_s"] = r.latency->state_update;
            row["attention_s"] = r.latency->attention;
            row["other_s"] = r.latency->other;
            row["tokens_per_s"] = r.latency->tokens_per_s;
        }
        if (r.energy) row["energy_j"] = r.energy->total();
        if (!r.error.empty()) row["error"] = r.error;
        arr.push_back(std::move(row));
    }
    return arr.dump(2) + "\n";
}

}  // namespace pimba
