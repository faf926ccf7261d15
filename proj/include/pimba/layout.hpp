#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pimba/dram.hpp"

namespace pimba {

struct LayoutError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Address of one sub-chunk: a DRAM column holding 32 consecutive state
// elements (2 MXGroups) of one state column along dim_head.
struct SubChunkAddr {
    int bank = 0;
    int row = 0;
    int col = 0;
};

// One chunk group: all chunks of a (request, head) pair, in consecutive rows
// of a single bank. Chunks fill DRAM rows with sub-chunks ordered state
// column major, so the shared d/q/k operands load once per group and each v
// element binds to fixed column positions.
struct ChunkGroupPlacement {
    int request = 0;
    int head = 0;
    int bank = 0;
    int first_row = 0;
    int n_chunks = 0;           // rows
    int subchunks_per_state_col = 0;
    int state_cols_per_chunk = 0;
    int n_state_cols = 0;       // dim_state
    int dim_head_padded = 0;

    int total_subchunks() const { return n_state_cols * subchunks_per_state_col; }

    SubChunkAddr locate(int state_col, int sub) const {
        int flat = state_col * subchunks_per_state_col + sub;
        int per_row = state_cols_per_chunk * subchunks_per_state_col;
        return {bank, first_row + flat / per_row, flat % per_row};
    }
};

struct ChunkLayout {
    DramConfig dram;
    int batch = 0;
    int n_heads = 0;
    int dim_head = 0;
    int dim_head_padded = 0;
    int dim_state = 0;
    int bytes_per_element = 1;  // MX8 averages 8 bits/value; fp16 uses 2
    std::vector<ChunkGroupPlacement> groups;

    const ChunkGroupPlacement& group_of(int request, int head) const {
        return groups[static_cast<size_t>(request) * n_heads + head];
    }
    int rows_used(int bank) const;
};

// Deterministic placement: chunk group (request, head) -> bank round-robin,
// stacked in consecutive rows per bank. dim_head pads to a multiple of 16
// (masked lanes); dim_state is the token axis for KV layouts.
// Throws LayoutError naming the row shortfall when a bank overflows.
ChunkLayout layout_state(int batch, int n_heads, int dim_head, int dim_state,
                         const DramConfig& dram, int bytes_per_element = 1);

}  // namespace pimba
