#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pimba/device.hpp"
#include "pimba/dram.hpp"

namespace pimba {

enum class CmdKind : uint8_t { Act4, RegWrite, Comp, ResultRead, Precharges, Refresh };

const char* cmd_name(CmdKind k);

// Timestamps are memory bus cycles. ACT4 gangs four row activations (burst
// index selects the four-bank slice); one COMP advances every SPU in the
// pseudo-channel by one iteration.
struct Command {
    CmdKind kind;
    uint64_t cycle = 0;
    int round = 0;  // row step the command belongs to
    int burst = 0;  // ACT4: which four-bank slice
};

struct CommandStream {
    std::vector<Command> commands;

    std::string to_text() const;
    static CommandStream from_text(const std::string& text);
};

struct Violation {
    std::string constraint;  // e.g. "tCCD_L", "tFAW", "tWR"
    size_t index;            // offending command position
    uint64_t cycle;
    std::string detail;
};

// Pure constraint check; violations are data, an empty list means valid.
// Checked rules: ACT4 spacing >= tFAW; ACT4 >= tRP after PRECHARGES;
// COMP spacing >= tCCD_L and no COMP inside a refresh window; REG_WRITE
// spacing >= tCCD_S; RESULT_READ >= tRTP after the last COMP (tRTP_L within a
// bank group) and >= tWR after the last writing COMP; PRECHARGES >= tRAS
// after the last ACT4; a REFRESH in every tREFI window; nondecreasing cycles.
std::vector<Violation> validate_timing(const CommandStream& stream, const TimingParams& t,
                                       bool comps_write = true);

// Per-round work counts; one round opens one row step across all banks.
struct RoundPlan {
    int act4_bursts = 0;
    int reg_writes = 0;
    int comps = 0;
    int result_reads = 0;  // drained at the end of the plan
};

struct WorkPlan {
    CompMode mode = CompMode::StateUpdate;
    std::vector<RoundPlan> rounds;

    bool writes() const { return mode == CompMode::StateUpdate; }
};

// Derives the command plan for a laid-out workload: ACT4 bursts per round,
// REG_WRITEs for the operands (d/q/k once per chunk group, v per chunk),
// COMPs per row step including the 3-iteration pipeline drain, RESULT_READs
// for the outputs.
WorkPlan plan_from_layout(const ChunkLayout& layout, CompMode mode,
                          int reg_payload_bytes = 32);

// Emits a timing-valid stream. With overlap on, REG_WRITEs fill the
// tFAW-forced idle between ACT4 bursts and RESULT_READs overlap the tRP
// window of the final PRECHARGES; with overlap off both run serially.
// REFRESH commands are inserted so no tREFI window lacks one.
CommandStream schedule(const WorkPlan& plan, const TimingParams& t, bool overlap);

// Stream length: the latest command completion (a COMP occupies tCCD_L, a
// PRECHARGES its cycle plus tRP, a REFRESH tRFC).
uint64_t stream_cycles(const CommandStream& stream, const TimingParams& t);

struct TimingError : std::runtime_error {
    Violation violation;
    TimingError(const Violation& v)
        : std::runtime_error("timing violation: " + v.constraint + " at cycle " +
                             std::to_string(v.cycle) + " (" + v.detail + ")"),
          violation(v) {}
};

struct RunResult {
    uint64_t total_cycles = 0;  // bus cycles
    uint64_t comps = 0;
    uint64_t activations = 0;   // individual row activations (4 per ACT4)
    uint64_t reg_write_bytes = 0;
    uint64_t result_read_bytes = 0;
    ExecResult exec;
};

// Drives the device from a validated stream: ACT4 activates the round's rows,
// COMP pumps every SPU one iteration, PRECHARGES closes row buffers.
// Throws TimingError on an invalid stream, DeviceError when a COMP arrives
// before the round's REG_WRITEs complete ("unloaded registers") or the
// stream ends with work pending.
RunResult run(const CommandStream& stream, PimDevice& dev, const ChunkLayout& layout,
              PimWorkload& wl, const TimingParams& t, int reg_payload_bytes = 32,
              bool record_trace = false);

}  // namespace pimba
