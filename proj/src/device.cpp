#include "pimba/device.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <random>
#include <sstream>

#include "pimba/formats.hpp"

namespace pimba {

namespace {

constexpr int kGroupBytes = MXGroup::kEncodedBytes;

struct WorkItem {
    int task;
    int state_col;
    int sub;
    int bank, row, col;
};

// Enumerates every sub-chunk of the layout in processing order (groups in
// placement order, flat sub-chunk index ascending), bucketed per bank.
std::vector<std::vector<WorkItem>> bank_streams(const ChunkLayout& layout) {
    std::vector<std::vector<WorkItem>> streams(layout.dram.banks());
    for (size_t gi = 0; gi < layout.groups.size(); ++gi) {
        const auto& g = layout.groups[gi];
        int task = g.request * layout.n_heads + g.head;
        for (int c = 0; c < g.n_state_cols; ++c) {
            for (int s = 0; s < g.subchunks_per_state_col; ++s) {
                SubChunkAddr a = g.locate(c, s);
                streams[a.bank].push_back({task, c, s, a.bank, a.row, a.col});
            }
        }
    }
    return streams;
}

}  // namespace

std::string trace_to_csv(const std::vector<TraceEvent>& trace) {
    std::ostringstream os;
    os << "cycle,spu,bank,action,row,col\n";
    for (const auto& e : trace) {
        const char* a = e.action == TraceAction::Read    ? "READ"
                        : e.action == TraceAction::Write ? "WRITE"
                                                         : "IDLE";
        os << e.iteration << ',' << e.spu << ',' << e.bank << ',' << a << ','
           << e.row << ',' << e.col << '\n';
    }
    return os.str();
}

PimDevice::PimDevice(const DramConfig& cfg)
    : cfg_(cfg), active_row_(cfg.banks(), -1) {}

void PimDevice::activate(int bank, int row) { active_row_[bank] = row; }

void PimDevice::precharge_all() {
    std::fill(active_row_.begin(), active_row_.end(), -1);
}

bool PimDevice::row_active(int bank, int row) const { return active_row_[bank] == row; }

void PimDevice::write_column(int bank, int row, int col, std::span<const std::byte> bytes) {
    if (active_row_[bank] != row) throw DeviceError("write to inactive row");
    auto& storage = rows_[key(bank, row)];
    if (storage.empty())
        storage.assign(static_cast<size_t>(cfg_.columns_per_row) * cfg_.column_bytes,
                       std::byte{0});
    std::copy(bytes.begin(), bytes.end(),
              storage.begin() + static_cast<size_t>(col) * cfg_.column_bytes);
}

std::vector<std::byte> PimDevice::read_column(int bank, int row, int col) const {
    if (active_row_[bank] != row) throw DeviceError("read from inactive row");
    auto it = rows_.find(key(bank, row));
    if (it == rows_.end())
        return std::vector<std::byte>(cfg_.column_bytes, std::byte{0});
    auto begin = it->second.begin() + static_cast<size_t>(col) * cfg_.column_bytes;
    return std::vector<std::byte>(begin, begin + cfg_.column_bytes);
}

void load_workload(PimDevice& dev, const ChunkLayout& layout, const PimWorkload& wl) {
    std::vector<std::byte> colbuf(layout.dram.column_bytes, std::byte{0});
    for (const auto& g : layout.groups) {
        int task = g.request * layout.n_heads + g.head;
        const HeadTask& ht = wl.tasks[task];
        size_t G = static_cast<size_t>(g.dim_head_padded) / MXGroup::kElems;
        for (int c = 0; c < g.n_state_cols; ++c) {
            for (int s = 0; s < g.subchunks_per_state_col; ++s) {
                std::fill(colbuf.begin(), colbuf.end(), std::byte{0});
                for (int j = 0; j < 2; ++j) {
                    size_t gg = static_cast<size_t>(2 * s + j);
                    if (gg >= G) continue;
                    const MXGroup* src = nullptr;
                    if (wl.mode == CompMode::StateUpdate)
                        src = &ht.state.group(c, gg);
                    else if (wl.mode == CompMode::AttnScore)
                        src = &ht.kv.k_rows[c * G + gg];
                    else
                        src = &ht.kv.v_rows[c * G + gg];
                    auto bytes = src->to_bytes();
                    std::copy(bytes.begin(), bytes.end(), colbuf.begin() + j * kGroupBytes);
                }
                SubChunkAddr a = g.locate(c, s);
                dev.activate(a.bank, a.row);
                dev.write_column(a.bank, a.row, a.col, colbuf);
            }
        }
    }
    dev.precharge_all();
}

namespace {

// Shared functional core: consumes one sub-chunk, returns write-back bytes in
// state mode. Rounder draws follow the exact golden-model order.
class ComputeContext {
  public:
    ComputeContext(PimWorkload& wl, ExecResult& result) : wl_(wl), result_(result) {
        rounders_.reserve(wl.tasks.size());
        for (auto& t : wl.tasks) rounders_.push_back(t.rounder);
        result_.outputs.resize(wl.tasks.size());
        attend_acc_.resize(wl.tasks.size());
        size_t G = wl.tasks.empty() ? 0 : group_count(wl.tasks.front());
        for (size_t i = 0; i < wl.tasks.size(); ++i) {
            if (wl.mode == CompMode::StateUpdate)
                result_.outputs[i].assign(wl.dim_state, 0.0);
            else if (wl.mode == CompMode::AttnScore)
                result_.outputs[i].assign(wl.dim_state, 0.0);
            else
                attend_acc_[i].assign(G, MXGroup::canonical_zero());
        }
    }

    bool writes_back() const { return wl_.mode == CompMode::StateUpdate; }

    std::vector<std::byte> consume(const WorkItem& item, std::span<const std::byte> col) {
        HeadTask& ht = wl_.tasks[item.task];
        Rounder& rnd = rounders_[item.task];
        size_t G = group_count(ht);
        std::vector<std::byte> out(col.begin(), col.end());
        for (int j = 0; j < 2; ++j) {
            size_t g = static_cast<size_t>(2 * item.sub + j);
            if (g >= G) continue;
            std::span<const std::byte, kGroupBytes> gb(col.data() + j * kGroupBytes,
                                                       kGroupBytes);
            MXGroup in = MXGroup::from_bytes(gb);
            switch (wl_.mode) {
                case CompMode::StateUpdate: {
                    MXGroup decayed = mx_multiply(ht.ops.d[g], in, rnd, &result_.flags);
                    MXGroup outer =
                        mx_multiply(ht.ops.k[g], ht.ops.v_bcast[item.state_col], rnd,
                                    &result_.flags);
                    MXGroup updated = mx_add(decayed, outer, rnd, &result_.flags);
                    result_.outputs[item.task][item.state_col] +=
                        mx_dot(updated, ht.ops.q[g], &result_.flags);
                    auto bytes = updated.to_bytes();
                    std::copy(bytes.begin(), bytes.end(), out.begin() + j * kGroupBytes);
                    break;
                }
                case CompMode::AttnScore:
                    result_.outputs[item.task][item.state_col] +=
                        mx_dot(in, ht.q_groups[g], &result_.flags);
                    break;
                case CompMode::AttnAttend: {
                    MXGroup weighted = mx_multiply(ht.score_groups[item.state_col], in,
                                                   rnd, &result_.flags);
                    attend_acc_[item.task][g] =
                        mx_add(attend_acc_[item.task][g], weighted, rnd, &result_.flags);
                    break;
                }
            }
        }
        return out;
    }

    void finish() {
        if (wl_.mode != CompMode::AttnAttend) return;
        for (size_t i = 0; i < wl_.tasks.size(); ++i) {
            result_.outputs[i].assign(wl_.dim_head, 0.0);
            for (size_t g = 0; g < attend_acc_[i].size(); ++g) {
                auto vals = dequantize_mx(attend_acc_[i][g]);
                for (size_t e = 0; e < MXGroup::kElems; ++e) {
                    size_t h = g * MXGroup::kElems + e;
                    if (h < static_cast<size_t>(wl_.dim_head)) result_.outputs[i][h] = vals[e];
                }
            }
        }
    }

  private:
    size_t group_count(const HeadTask& ht) const {
        if (wl_.mode == CompMode::StateUpdate) return ht.state.groups_per_col();
        return ht.kv.groups_per_row();
    }

    PimWorkload& wl_;
    ExecResult& result_;
    std::vector<Rounder> rounders_;
    std::vector<std::vector<MXGroup>> attend_acc_;
};

struct InFlight {
    WorkItem item;
    std::vector<std::byte> bytes;
    uint64_t due;
};

}  // namespace

struct InterleavedEngine::Impl {
    PimDevice& dev;
    bool record_trace;
    bool auto_activate;
    int spus;
    uint64_t t = 0;
    std::vector<std::vector<WorkItem>> streams;
    std::vector<size_t> cursor;
    std::vector<std::deque<InFlight>> pending;
    ExecResult result;
    ComputeContext ctx;

    Impl(PimDevice& d, const ChunkLayout& layout, PimWorkload& wl, bool trace, bool act)
        : dev(d),
          record_trace(trace),
          auto_activate(act),
          spus(layout.dram.spus()),
          streams(bank_streams(layout)),
          cursor(streams.size(), 0),
          pending(static_cast<size_t>(spus)),
          ctx(wl, result) {}

    bool readable(int bank) const {
        if (cursor[bank] >= streams[bank].size()) return false;
        if (auto_activate) return true;
        const WorkItem& item = streams[bank][cursor[bank]];
        return dev.row_active(item.bank, item.row);
    }

    bool done() const {
        for (size_t b = 0; b < streams.size(); ++b)
            if (cursor[b] < streams[b].size()) return false;
        for (const auto& p : pending)
            if (!p.empty()) return false;
        return true;
    }

    void step() {
        for (int u = 0; u < spus; ++u) {
            int wrote_bank = -1;
            if (!pending[u].empty() && pending[u].front().due == t) {
                InFlight f = std::move(pending[u].front());
                pending[u].pop_front();
                if (auto_activate) dev.activate(f.item.bank, f.item.row);
                dev.write_column(f.item.bank, f.item.row, f.item.col, f.bytes);
                wrote_bank = f.item.bank;
                ++result.column_writes;
                if (record_trace)
                    result.trace.push_back({t, u, f.item.bank, TraceAction::Write,
                                            f.item.row, f.item.col});
            }

            int preferred = (t % 2 == 0) ? 2 * u : 2 * u + 1;
            int other = preferred ^ 1;
            int read_bank = -1;
            if (readable(preferred) && preferred != wrote_bank)
                read_bank = preferred;
            else if (readable(other) && other != wrote_bank)
                read_bank = other;

            if (read_bank >= 0) {
                if (read_bank == wrote_bank)
                    throw DeviceError("structural hazard: same-bank read and write");
                const WorkItem& item = streams[read_bank][cursor[read_bank]++];
                if (auto_activate) dev.activate(item.bank, item.row);
                auto col = dev.read_column(item.bank, item.row, item.col);
                auto outbytes = ctx.consume(item, col);
                if (ctx.writes_back())
                    pending[u].push_back({item, std::move(outbytes), t + 3});
                ++result.column_reads;
                if (record_trace)
                    result.trace.push_back({t, u, item.bank, TraceAction::Read, item.row,
                                            item.col});
            } else if (wrote_bank < 0 && record_trace) {
                result.trace.push_back({t, u, preferred, TraceAction::Idle, -1, -1});
            }
        }
        ++t;
    }
};

InterleavedEngine::InterleavedEngine(PimDevice& dev, const ChunkLayout& layout,
                                     PimWorkload& wl, bool record_trace, bool auto_activate)
    : impl_(std::make_unique<Impl>(dev, layout, wl, record_trace, auto_activate)) {}

InterleavedEngine::~InterleavedEngine() = default;

bool InterleavedEngine::done() const { return impl_->done(); }

uint64_t InterleavedEngine::iteration() const { return impl_->t; }

bool InterleavedEngine::step() {
    impl_->step();
    return !impl_->done();
}

ExecResult InterleavedEngine::finish() {
    impl_->ctx.finish();
    impl_->result.iterations = impl_->t;
    return std::move(impl_->result);
}

ExecResult execute_comp(PimDevice& dev, const ChunkLayout& layout, PimWorkload& wl,
                        bool record_trace) {
    InterleavedEngine engine(dev, layout, wl, record_trace, /*auto_activate=*/true);
    while (!engine.done()) engine.step();
    return engine.finish();
}

ExecResult execute_per_bank(PimDevice& dev, const ChunkLayout& layout, PimWorkload& wl,
                            bool record_trace) {
    ExecResult result;
    ComputeContext ctx(wl, result);
    auto streams = bank_streams(layout);
    std::vector<size_t> cursor(streams.size(), 0);
    std::vector<std::deque<InFlight>> pending(streams.size());

    auto done = [&] {
        for (size_t b = 0; b < streams.size(); ++b)
            if (cursor[b] < streams[b].size() || !pending[b].empty()) return false;
        return true;
    };

    uint64_t t = 0;
    while (!done()) {
        for (size_t b = 0; b < streams.size(); ++b) {
            // One unit per bank; the row buffer does a read or a write per
            // iteration, never both. Ready writes take priority.
            if (!pending[b].empty() && pending[b].front().due <= t) {
                InFlight f = std::move(pending[b].front());
                pending[b].pop_front();
                dev.activate(f.item.bank, f.item.row);
                dev.write_column(f.item.bank, f.item.row, f.item.col, f.bytes);
                ++result.column_writes;
                if (record_trace)
                    result.trace.push_back({t, static_cast<int>(b), f.item.bank,
                                            TraceAction::Write, f.item.row, f.item.col});
            } else if (cursor[b] < streams[b].size()) {
                const WorkItem& item = streams[b][cursor[b]++];
                dev.activate(item.bank, item.row);
                auto col = dev.read_column(item.bank, item.row, item.col);
                auto outbytes = ctx.consume(item, col);
                if (ctx.writes_back())
                    pending[b].push_back({item, std::move(outbytes), t + 3});
                ++result.column_reads;
                if (record_trace)
                    result.trace.push_back({t, static_cast<int>(b), item.bank,
                                            TraceAction::Read, item.row, item.col});
            }
        }
        ++t;
    }
    ctx.finish();
    result.iterations = t;
    return result;
}

MxStateMatrix read_back_state(PimDevice& dev, const ChunkLayout& layout,
                              const PimWorkload& wl, int request, int head) {
    (void)wl;
    const auto& g = layout.group_of(request, head);
    MxStateMatrix out;
    out.dim_head = layout.dim_head;
    out.dim_head_padded = layout.dim_head_padded;
    out.dim_state = layout.dim_state;
    size_t G = out.groups_per_col();
    out.groups.assign(G * out.dim_state, MXGroup::canonical_zero());
    for (int c = 0; c < g.n_state_cols; ++c) {
        for (int s = 0; s < g.subchunks_per_state_col; ++s) {
            SubChunkAddr a = g.locate(c, s);
            dev.activate(a.bank, a.row);
            auto col = dev.read_column(a.bank, a.row, a.col);
            for (int j = 0; j < 2; ++j) {
                size_t gg = static_cast<size_t>(2 * s + j);
                if (gg >= G) continue;
                std::span<const std::byte, kGroupBytes> gb(col.data() + j * kGroupBytes,
                                                           kGroupBytes);
                out.group(c, gg) = MXGroup::from_bytes(gb);
            }
        }
    }
    dev.precharge_all();
    return out;
}

std::vector<std::vector<double>> golden_outputs(const PimWorkload& wl,
                                                std::vector<HeadTask>* final_tasks) {
    std::vector<std::vector<double>> out;
    out.reserve(wl.tasks.size());
    std::vector<HeadTask> tasks = wl.tasks;
    for (auto& t : tasks) {
        switch (wl.mode) {
            case CompMode::StateUpdate: {
                StepResult r = state_update_step_mx(t.state, t.ops, t.rounder);
                out.push_back(std::move(r.y));
                break;
            }
            case CompMode::AttnScore:
                out.push_back(attention_score_mx(t.q_groups, t.kv));
                break;
            case CompMode::AttnAttend: {
                MxFlags flags;
                auto acc = attend_accumulate(t.score_groups, t.kv, t.rounder, &flags);
                std::vector<double> attend(wl.dim_head, 0.0);
                for (size_t g = 0; g < acc.size(); ++g) {
                    auto vals = dequantize_mx(acc[g]);
                    for (size_t e = 0; e < MXGroup::kElems; ++e) {
                        size_t h = g * MXGroup::kElems + e;
                        if (h < static_cast<size_t>(wl.dim_head)) attend[h] = vals[e];
                    }
                }
                out.push_back(std::move(attend));
                break;
            }
        }
    }
    if (final_tasks) *final_tasks = std::move(tasks);
    return out;
}

PimWorkload make_state_workload(int batch, int n_heads, int dim_head, int dim_state,
                                uint64_t data_seed, uint16_t lfsr_seed, RoundMode mode) {
    PimWorkload wl;
    wl.mode = CompMode::StateUpdate;
    wl.batch = batch;
    wl.n_heads = n_heads;
    wl.dim_head = dim_head;
    wl.dim_state = dim_state;
    std::mt19937_64 rng(data_seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::uniform_real_distribution<double> decay(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int r = 0; r < batch; ++r) {
        for (int h = 0; h < n_heads; ++h) {
            HeadTask task;
            task.rounder = rounder_for(lfsr_seed, r, h, n_heads, mode);
            StateMatrix S(dim_head, dim_state);
            for (auto& v : S.s) v = uni(rng);
            StateUpdateInputs in;
            in.d.resize(dim_head);
            in.k.resize(dim_head);
            in.q.resize(dim_head);
            in.v.resize(dim_state);
            for (auto& v : in.d) v = decay(rng);
            for (auto& v : in.k) v = gauss(rng);
            for (auto& v : in.q) v = gauss(rng);
            for (auto& v : in.v) v = gauss(rng);
            task.state = quantize_state(S, task.rounder);
            task.ops = quantize_operands(in, task.rounder);
            wl.tasks.push_back(std::move(task));
        }
    }
    return wl;
}

PimWorkload make_attention_workload(CompMode mode, int batch, int n_heads, int dim_head,
                                    int seq_len, uint64_t data_seed, uint16_t lfsr_seed,
                                    RoundMode rmode) {
    PimWorkload wl;
    wl.mode = mode;
    wl.batch = batch;
    wl.n_heads = n_heads;
    wl.dim_head = dim_head;
    wl.dim_state = seq_len;
    std::mt19937_64 rng(data_seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int r = 0; r < batch; ++r) {
        for (int h = 0; h < n_heads; ++h) {
            HeadTask task;
            task.rounder = rounder_for(lfsr_seed, r, h, n_heads, rmode);
            KVCache cache;
            cache.dim_head = static_cast<size_t>(dim_head);
            for (int i = 0; i < seq_len; ++i) {
                std::vector<double> kr(dim_head), vr(dim_head);
                for (auto& v : kr) v = gauss(rng);
                for (auto& v : vr) v = gauss(rng);
                cache.append(std::move(kr), std::move(vr));
            }
            task.kv = quantize_kv(cache, task.rounder);
            if (mode == CompMode::AttnScore) {
                std::vector<double> q(dim_head);
                for (auto& v : q) v = gauss(rng);
                task.q_groups = quantize_head_vector(q, task.rounder);
            } else {
                std::vector<double> scores(seq_len);
                double sum = 0.0;
                for (auto& s : scores) {
                    s = uni(rng);
                    sum += s;
                }
                for (auto& s : scores) s /= sum;
                task.score_groups = quantize_scores(scores, task.rounder);
            }
            wl.tasks.push_back(std::move(task));
        }
    }
    return wl;
}

TmResult execute_time_multiplexed(const ChunkLayout& layout_fp16, TmWorkload& wl,
                                  bool record_trace) {
    TmResult result;
    result.outputs.assign(wl.states.size(), {});
    for (auto& task_out : result.outputs) task_out.assign(wl.dim_state, 0.0);

    int elems_per_col = layout_fp16.dram.column_bytes / layout_fp16.bytes_per_element;
    int spus = layout_fp16.dram.spus();

    // Unit u serves banks 2u and 2u+1 serially, one column access per
    // iteration, primitives as separate passes. Per-unit clocks advance
    // independently; the result is their maximum.
    std::vector<uint64_t> unit_clock(spus, 0);
    for (const auto& g : layout_fp16.groups) {
        int task = g.request * layout_fp16.n_heads + g.head;
        int unit = g.bank / 2;
        uint64_t& t = unit_clock[unit];
        auto& state = wl.states[task];
        const auto& d = wl.d[task];
        const auto& k = wl.k[task];
        const auto& q = wl.q[task];
        const auto& v = wl.v[task];

        // Pass 0: decay multiply (R+W). Pass 1: outer-product update (R+W).
        // Pass 2: output dot (R only, partial sums leave via registers).
        int passes = wl.decay_only ? 1 : 3;
        Rounder rne;
        for (int pass = 0; pass < passes; ++pass) {
            bool writes = pass < 2;
            for (int c = 0; c < g.n_state_cols; ++c) {
                for (int s = 0; s < g.subchunks_per_state_col; ++s) {
                    SubChunkAddr a = g.locate(c, s);
                    if (record_trace)
                        result.trace.push_back({t, unit, a.bank, TraceAction::Read, a.row,
                                                a.col});
                    ++result.column_reads;
                    ++t;
                    for (int e = 0; e < elems_per_col; ++e) {
                        int lane = s * elems_per_col + e;
                        if (lane >= wl.dim_head) break;
                        size_t idx = static_cast<size_t>(lane) * wl.dim_state + c;
                        double sv = fp16_decode(state[idx]);
                        if (pass == 0) {
                            sv = fp16_decode(fp16_encode(fp16_decode(d[lane]) * sv, rne));
                        } else if (pass == 1) {
                            double kv = fp16_decode(
                                fp16_encode(fp16_decode(k[lane]) * fp16_decode(v[c]), rne));
                            sv = fp16_decode(fp16_encode(sv + kv, rne));
                        } else {
                            result.outputs[task][c] += sv * fp16_decode(q[lane]);
                        }
                        if (pass < 2) state[idx] = fp16_encode(sv, rne);
                    }
                    if (writes) {
                        if (record_trace)
                            result.trace.push_back({t, unit, a.bank, TraceAction::Write,
                                                    a.row, a.col});
                        ++result.column_writes;
                        ++t;
                    }
                }
            }
        }
    }
    result.iterations = *std::max_element(unit_clock.begin(), unit_clock.end());
    return result;
}

TmWorkload make_tm_workload(int batch, int n_heads, int dim_head, int dim_state,
                            uint64_t data_seed, bool decay_only) {
    TmWorkload wl;
    wl.batch = batch;
    wl.n_heads = n_heads;
    wl.dim_head = dim_head;
    wl.dim_state = dim_state;
    wl.decay_only = decay_only;
    std::mt19937_64 rng(data_seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::uniform_real_distribution<double> decay(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Rounder rne;
    auto enc = [&](double x) { return fp16_encode(x, rne); };
    for (int t = 0; t < batch * n_heads; ++t) {
        std::vector<uint16_t> S(static_cast<size_t>(dim_head) * dim_state);
        for (auto& v : S) v = enc(uni(rng));
        std::vector<uint16_t> d(dim_head), k(dim_head), q(dim_head), v(dim_state);
        for (auto& x : d) x = enc(decay(rng));
        for (auto& x : k) x = enc(gauss(rng));
        for (auto& x : q) x = enc(gauss(rng));
        for (auto& x : v) x = enc(gauss(rng));
        wl.states.push_back(std::move(S));
        wl.d.push_back(std::move(d));
        wl.k.push_back(std::move(k));
        wl.q.push_back(std::move(q));
        wl.v.push_back(std::move(v));
    }
    return wl;
}

}  // namespace pimba
