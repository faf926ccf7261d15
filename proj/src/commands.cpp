#include "pimba/commands.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <sstream>

namespace pimba {

namespace {

// Command cycle plus completion time, used for stream length accounting.
uint64_t duration(CmdKind k, const TimingParams& t) {
    switch (k) {
        case CmdKind::Act4: return 1;
        case CmdKind::RegWrite: return 1;
        case CmdKind::Comp: return static_cast<uint64_t>(t.tCCD_L);
        case CmdKind::ResultRead: return static_cast<uint64_t>(t.tCCD_S);
        case CmdKind::Precharges: return 1 + static_cast<uint64_t>(t.tRP);
        case CmdKind::Refresh: return static_cast<uint64_t>(t.tRFC);
    }
    return 1;
}

// Exact iteration count for one SPU pair over one round: mirrors the engine's
// slot rules (parity-preferred read, write at read+3 to the source bank, a
// same-bank write blocks the read).
uint64_t pair_iterations(int n_a, int n_b, int start_parity, bool writes_back) {
    int ca = 0, cb = 0;
    std::deque<std::pair<uint64_t, int>> pending;  // (due, bank)
    uint64_t t = 0;
    while (ca < n_a || cb < n_b || !pending.empty()) {
        int wrote = -1;
        if (!pending.empty() && pending.front().first == t) {
            wrote = pending.front().second;
            pending.pop_front();
        }
        int preferred = ((t + start_parity) % 2 == 0) ? 0 : 1;
        int other = 1 - preferred;
        auto avail = [&](int b) { return b == 0 ? ca < n_a : cb < n_b; };
        int rb = -1;
        if (avail(preferred) && preferred != wrote) rb = preferred;
        else if (avail(other) && other != wrote) rb = other;
        if (rb == 0) {
            ++ca;
            if (writes_back) pending.push_back({t + 3, 0});
        } else if (rb == 1) {
            ++cb;
            if (writes_back) pending.push_back({t + 3, 1});
        }
        ++t;
    }
    return t;
}

}  // namespace

const char* cmd_name(CmdKind k) {
    switch (k) {
        case CmdKind::Act4: return "ACT4";
        case CmdKind::RegWrite: return "REG_WRITE";
        case CmdKind::Comp: return "COMP";
        case CmdKind::ResultRead: return "RESULT_READ";
        case CmdKind::Precharges: return "PRECHARGES";
        case CmdKind::Refresh: return "REFRESH";
    }
    return "?";
}

std::string CommandStream::to_text() const {
    std::ostringstream os;
    for (const auto& c : commands)
        os << c.cycle << ' ' << cmd_name(c.kind) << ' ' << c.round << ' ' << c.burst << '\n';
    return os.str();
}

CommandStream CommandStream::from_text(const std::string& text) {
    CommandStream s;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        uint64_t cycle;
        std::string kind;
        int round = 0, burst = 0;
        if (!(ls >> cycle >> kind)) throw std::invalid_argument("bad command line: " + line);
        ls >> round >> burst;
        Command c;
        c.cycle = cycle;
        c.round = round;
        c.burst = burst;
        if (kind == "ACT4") c.kind = CmdKind::Act4;
        else if (kind == "REG_WRITE") c.kind = CmdKind::RegWrite;
        else if (kind == "COMP") c.kind = CmdKind::Comp;
        else if (kind == "RESULT_READ") c.kind = CmdKind::ResultRead;
        else if (kind == "PRECHARGES") c.kind = CmdKind::Precharges;
        else if (kind == "REFRESH") c.kind = CmdKind::Refresh;
        else throw std::invalid_argument("unknown command kind: " + kind);
        s.commands.push_back(c);
    }
    return s;
}

std::vector<Violation> validate_timing(const CommandStream& stream, const TimingParams& t,
                                       bool comps_write) {
    std::vector<Violation> out;
    std::optional<uint64_t> last_act4, last_pre, last_comp, last_rw, prev;
    std::vector<uint64_t> refreshes;

    auto gap_lt = [](std::optional<uint64_t> last, uint64_t now, int bound) {
        return last && now - *last < static_cast<uint64_t>(bound);
    };

    for (size_t i = 0; i < stream.commands.size(); ++i) {
        const Command& c = stream.commands[i];
        if (prev && c.cycle < *prev)
            out.push_back({"order", i, c.cycle, "cycles must be nondecreasing"});
        prev = c.cycle;

        switch (c.kind) {
            case CmdKind::Act4:
                if (gap_lt(last_act4, c.cycle, t.tFAW))
                    out.push_back({"tFAW", i, c.cycle,
                                   "four activations per tFAW window (ACT4 spacing)"});
                if (gap_lt(last_pre, c.cycle, t.tRP))
                    out.push_back({"tRP", i, c.cycle, "ACT4 before precharge completed"});
                last_act4 = c.cycle;
                break;
            case CmdKind::Comp:
                if (gap_lt(last_comp, c.cycle, t.tCCD_L))
                    out.push_back({"tCCD_L", i, c.cycle, "consecutive COMP spacing"});
                for (uint64_t r : refreshes)
                    if (c.cycle >= r && c.cycle < r + static_cast<uint64_t>(t.tRFC))
                        out.push_back({"refresh_exclusion", i, c.cycle,
                                       "COMP during refresh"});
                last_comp = c.cycle;
                break;
            case CmdKind::RegWrite:
                if (gap_lt(last_rw, c.cycle, t.tCCD_S))
                    out.push_back({"tCCD_S", i, c.cycle, "REG_WRITE spacing"});
                last_rw = c.cycle;
                break;
            case CmdKind::ResultRead:
                if (gap_lt(last_comp, c.cycle, t.tRTP_L))
                    out.push_back({"tRTP_L", i, c.cycle,
                                   "RESULT_READ too soon after COMP (read-to-precharge)"});
                if (comps_write && gap_lt(last_comp, c.cycle, t.tWR))
                    out.push_back({"tWR", i, c.cycle,
                                   "RESULT_READ before write recovery"});
                break;
            case CmdKind::Precharges:
                if (gap_lt(last_act4, c.cycle, t.tRAS))
                    out.push_back({"tRAS", i, c.cycle, "PRECHARGES before tRAS elapsed"});
                last_pre = c.cycle;
                break;
            case CmdKind::Refresh:
                refreshes.push_back(c.cycle);
                break;
        }
    }

    // Refresh liveness over the stream span.
    if (!stream.commands.empty()) {
        uint64_t end = stream.commands.back().cycle;
        if (end > static_cast<uint64_t>(t.tREFI)) {
            uint64_t cursor = 0;
            for (uint64_t r : refreshes) {
                if (r - cursor > static_cast<uint64_t>(t.tREFI))
                    out.push_back({"tREFI", 0, r, "refresh interval exceeded"});
                cursor = r;
            }
            if (end - cursor > static_cast<uint64_t>(t.tREFI))
                out.push_back({"tREFI", stream.commands.size() - 1, end,
                               "refresh interval exceeded at stream tail"});
        }
    }
    return out;
}

WorkPlan plan_from_layout(const ChunkLayout& layout, CompMode mode, int reg_payload_bytes) {
    WorkPlan plan;
    plan.mode = mode;
    int banks = layout.dram.banks();
    int spus = layout.dram.spus();

    // Per-bank ordered row list and per-(bank, row) sub-chunk counts.
    std::vector<std::vector<int>> bank_rows(banks);
    std::map<std::pair<int, int>, int> subchunks;
    for (const auto& g : layout.groups) {
        for (int c = 0; c < g.n_state_cols; ++c) {
            for (int s = 0; s < g.subchunks_per_state_col; ++s) {
                SubChunkAddr a = g.locate(c, s);
                auto& rows = bank_rows[a.bank];
                if (rows.empty() || rows.back() != a.row) rows.push_back(a.row);
                ++subchunks[{a.bank, a.row}];
            }
        }
    }
    size_t n_rounds = 0;
    for (const auto& rows : bank_rows) n_rounds = std::max(n_rounds, rows.size());
    if (n_rounds == 0) return plan;

    size_t G = static_cast<size_t>(layout.dim_head_padded) / 16;
    size_t n_tasks = layout.groups.size();
    int cols_per_chunk = layout.groups.front().state_cols_per_chunk;

    // Operand traffic: d/q/k (or the query) once per chunk group at round 0,
    // 16 bytes per MX group; per-chunk v elements (or scores) 1 byte each.
    uint64_t round0_bytes = 0;
    if (mode == CompMode::StateUpdate)
        round0_bytes = n_tasks * 3 * G * 16;
    else if (mode == CompMode::AttnScore)
        round0_bytes = n_tasks * G * 16;
    uint64_t per_round_bytes =
        (mode == CompMode::AttnScore) ? 0 : n_tasks * static_cast<uint64_t>(cols_per_chunk);

    // Output traffic drained at the end: 4 bytes per scalar.
    uint64_t result_bytes = 0;
    if (mode == CompMode::StateUpdate || mode == CompMode::AttnScore)
        result_bytes = n_tasks * static_cast<uint64_t>(layout.dim_state) * 4;
    else
        result_bytes = n_tasks * static_cast<uint64_t>(layout.dim_head_padded) * 4;

    auto ceil_div = [](uint64_t a, uint64_t b) { return (a + b - 1) / b; };

    uint64_t comps_so_far = 0;
    for (size_t r = 0; r < n_rounds; ++r) {
        RoundPlan round;
        round.act4_bursts = (banks + 3) / 4;
        uint64_t bytes = per_round_bytes + (r == 0 ? round0_bytes : 0);
        round.reg_writes = static_cast<int>(ceil_div(bytes, reg_payload_bytes));
        uint64_t comps = 0;
        int parity = static_cast<int>(comps_so_far % 2);
        for (int u = 0; u < spus; ++u) {
            int na = 0, nb = 0;
            if (r < bank_rows[2 * u].size()) na = subchunks[{2 * u, bank_rows[2 * u][r]}];
            if (r < bank_rows[2 * u + 1].size())
                nb = subchunks[{2 * u + 1, bank_rows[2 * u + 1][r]}];
            comps = std::max(comps, pair_iterations(na, nb, parity, plan.writes()));
        }
        // Attention results ride the stage-4 dot; drain the pipe at the end.
        if (!plan.writes() && r + 1 == n_rounds) comps += 3;
        round.comps = static_cast<int>(comps);
        comps_so_far += comps;
        if (r + 1 == n_rounds)
            round.result_reads = static_cast<int>(ceil_div(result_bytes, reg_payload_bytes));
        plan.rounds.push_back(round);
    }
    return plan;
}

CommandStream schedule(const WorkPlan& plan, const TimingParams& t, bool overlap) {
    CommandStream stream;
    if (plan.rounds.empty()) return stream;

    auto emit = [&](CmdKind kind, uint64_t cycle, int round, int burst) {
        stream.commands.push_back({kind, cycle, round, burst});
    };

    std::optional<uint64_t> last_act4, last_rw, last_comp;
    uint64_t cursor = 0;       // earliest cycle the next command may use
    uint64_t pre_done = 0;     // precharge completion bound for ACT4

    for (size_t r = 0; r < plan.rounds.size(); ++r) {
        const RoundPlan& round = plan.rounds[r];

        // ACT4 bursts, tFAW apart.
        std::vector<uint64_t> act_cycles;
        for (int b = 0; b < round.act4_bursts; ++b) {
            uint64_t c = std::max(cursor, pre_done);
            if (last_act4) c = std::max(c, *last_act4 + static_cast<uint64_t>(t.tFAW));
            emit(CmdKind::Act4, c, static_cast<int>(r), b);
            last_act4 = c;
            act_cycles.push_back(c);
            cursor = c + 1;
        }

        // REG_WRITEs: into the tFAW-forced gaps when overlapping, serial after
        // the last ACT4 otherwise.
        int remaining = round.reg_writes;
        if (overlap && remaining > 0) {
            for (size_t a = 0; a + 1 < act_cycles.size() && remaining > 0; ++a) {
                uint64_t slot = act_cycles[a] + 1;
                if (last_rw) slot = std::max(slot, *last_rw + static_cast<uint64_t>(t.tCCD_S));
                while (remaining > 0 && slot < act_cycles[a + 1]) {
                    emit(CmdKind::RegWrite, slot, static_cast<int>(r), 0);
                    last_rw = slot;
                    slot += static_cast<uint64_t>(t.tCCD_S);
                    --remaining;
                }
            }
        }
        while (remaining > 0) {
            uint64_t c = cursor;
            if (last_rw) c = std::max(c, *last_rw + static_cast<uint64_t>(t.tCCD_S));
            emit(CmdKind::RegWrite, c, static_cast<int>(r), 0);
            last_rw = c;
            cursor = c + 1;
            --remaining;
        }

        // COMPs at tCCD_L.
        for (int i = 0; i < round.comps; ++i) {
            uint64_t c = cursor;
            if (last_comp) c = std::max(c, *last_comp + static_cast<uint64_t>(t.tCCD_L));
            emit(CmdKind::Comp, c, static_cast<int>(r), 0);
            last_comp = c;
            cursor = c + static_cast<uint64_t>(t.tCCD_L);
        }

        // PRECHARGES once the row held tRAS and writes recovered.
        uint64_t pre = cursor;
        if (last_act4) pre = std::max(pre, *last_act4 + static_cast<uint64_t>(t.tRAS));
        if (last_comp)
            pre = std::max(pre, *last_comp + static_cast<uint64_t>(
                                                 plan.writes() ? t.tWR : t.tRTP_L));
        emit(CmdKind::Precharges, pre, static_cast<int>(r), 0);
        pre_done = pre + 1 + static_cast<uint64_t>(t.tRP);
        cursor = pre + 1;

        // Final-round RESULT_READs: overlapped inside the tRP window or after it.
        if (round.result_reads > 0) {
            uint64_t c = overlap ? pre + 1 : pre_done;
            if (last_comp)
                c = std::max(c, *last_comp +
                                    static_cast<uint64_t>(std::max(
                                        t.tRTP_L, plan.writes() ? t.tWR : 0)));
            for (int i = 0; i < round.result_reads; ++i) {
                emit(CmdKind::ResultRead, c, static_cast<int>(r), 0);
                cursor = std::max(cursor, c + static_cast<uint64_t>(t.tCCD_S));
                c += static_cast<uint64_t>(t.tCCD_S);
            }
            cursor = std::max(cursor, pre_done);
        }
    }

    std::stable_sort(stream.commands.begin(), stream.commands.end(),
                     [](const Command& a, const Command& b) { return a.cycle < b.cycle; });

    // Refresh insertion: every tREFI, shifting everything behind the window
    // uniformly by tRFC (relative spacings, and so all constraints, hold).
    uint64_t due = static_cast<uint64_t>(t.tREFI);
    size_t idx = 0;
    while (idx < stream.commands.size()) {
        if (stream.commands[idx].cycle < due) {
            ++idx;
            continue;
        }
        for (size_t j = idx; j < stream.commands.size(); ++j)
            stream.commands[j].cycle += static_cast<uint64_t>(t.tRFC);
        stream.commands.insert(stream.commands.begin() + idx,
                               {CmdKind::Refresh, due, stream.commands[idx].round, 0});
        due += static_cast<uint64_t>(t.tREFI);
        ++idx;
    }
    return stream;
}

uint64_t stream_cycles(const CommandStream& stream, const TimingParams& t) {
    uint64_t end = 0;
    for (const auto& c : stream.commands) end = std::max(end, c.cycle + duration(c.kind, t));
    return end;
}

RunResult run(const CommandStream& stream, PimDevice& dev, const ChunkLayout& layout,
              PimWorkload& wl, const TimingParams& t, int reg_payload_bytes,
              bool record_trace) {
    auto violations = validate_timing(stream, t, wl.mode == CompMode::StateUpdate);
    if (!violations.empty()) throw TimingError(violations.front());

    WorkPlan plan = plan_from_layout(layout, wl.mode, reg_payload_bytes);
    std::vector<uint64_t> reg_required(plan.rounds.size() + 1, 0);
    for (size_t r = 0; r < plan.rounds.size(); ++r)
        reg_required[r + 1] = reg_required[r] + plan.rounds[r].reg_writes;

    // Per-bank row sequence: round r opens the r-th row each bank touches.
    int banks = layout.dram.banks();
    std::vector<std::vector<int>> bank_rows(banks);
    for (const auto& g : layout.groups) {
        for (int c = 0; c < g.n_state_cols; ++c) {
            for (int s = 0; s < g.subchunks_per_state_col; ++s) {
                SubChunkAddr a = g.locate(c, s);
                auto& rows = bank_rows[a.bank];
                if (rows.empty() || rows.back() != a.row) rows.push_back(a.row);
            }
        }
    }

    InterleavedEngine engine(dev, layout, wl, record_trace, /*auto_activate=*/false);
    RunResult result;
    uint64_t regs_seen = 0;

    for (size_t i = 0; i < stream.commands.size(); ++i) {
        const Command& c = stream.commands[i];
        result.total_cycles = std::max(result.total_cycles, c.cycle + duration(c.kind, t));
        switch (c.kind) {
            case CmdKind::Act4:
                for (int b = 4 * c.burst; b < std::min(banks, 4 * c.burst + 4); ++b)
                    if (static_cast<size_t>(c.round) < bank_rows[b].size())
                        dev.activate(b, bank_rows[b][c.round]);
                result.activations += 4;
                break;
            case CmdKind::RegWrite:
                ++regs_seen;
                result.reg_write_bytes += static_cast<uint64_t>(reg_payload_bytes);
                break;
            case CmdKind::Comp: {
                size_t round = static_cast<size_t>(c.round);
                if (round < plan.rounds.size() && regs_seen < reg_required[round + 1])
                    throw DeviceError("unloaded registers: COMP before REG_WRITEs of round " +
                                      std::to_string(c.round));
                engine.step();
                ++result.comps;
                break;
            }
            case CmdKind::ResultRead:
                result.result_read_bytes += static_cast<uint64_t>(reg_payload_bytes);
                break;
            case CmdKind::Precharges:
                dev.precharge_all();
                break;
            case CmdKind::Refresh:
                break;
        }
    }
    if (!engine.done())
        throw DeviceError("command stream ended with work pending (missing COMPs or rows)");
    result.exec = engine.finish();
    return result;
}

}  // namespace pimba
