#include "pimba/layout.hpp"

#include <string>

namespace pimba {

int ChunkLayout::rows_used(int bank) const {
    int used = 0;
    for (const auto& g : groups)
        if (g.bank == bank) used += g.n_chunks;
    return used;
}

ChunkLayout layout_state(int batch, int n_heads, int dim_head, int dim_state,
                         const DramConfig& dram, int bytes_per_element) {
    if (batch < 1 || n_heads < 1 || dim_head < 1 || dim_state < 1)
        throw LayoutError("layout: dimensions must be positive");

    ChunkLayout layout;
    layout.dram = dram;
    layout.batch = batch;
    layout.n_heads = n_heads;
    layout.dim_head = dim_head;
    layout.dim_state = dim_state;
    layout.bytes_per_element = bytes_per_element;
    constexpr int kGroup = 16;  // MX group size: dim_head pads to it
    layout.dim_head_padded = (dim_head + kGroup - 1) / kGroup * kGroup;

    int elems_per_col = dram.column_bytes / bytes_per_element;
    int subs_per_state_col = (layout.dim_head_padded + elems_per_col - 1) / elems_per_col;
    int cols_per_chunk = dram.columns_per_row / subs_per_state_col;
    if (cols_per_chunk < 1)
        throw LayoutError("layout: one state column exceeds a DRAM row");
    int chunks_per_group = (dim_state + cols_per_chunk - 1) / cols_per_chunk;

    int banks = dram.banks();
    std::vector<int> next_row(banks, 0);
    layout.groups.reserve(static_cast<size_t>(batch) * n_heads);
    for (int r = 0; r < batch; ++r) {
        for (int h = 0; h < n_heads; ++h) {
            int idx = r * n_heads + h;
            int bank = idx % banks;
            ChunkGroupPlacement g;
            g.request = r;
            g.head = h;
            g.bank = bank;
            g.first_row = next_row[bank];
            g.n_chunks = chunks_per_group;
            g.subchunks_per_state_col = subs_per_state_col;
            g.state_cols_per_chunk = cols_per_chunk;
            g.n_state_cols = dim_state;
            g.dim_head_padded = layout.dim_head_padded;
            next_row[bank] += chunks_per_group;
            layout.groups.push_back(g);
        }
    }

    for (int b = 0; b < banks; ++b) {
        if (next_row[b] > dram.rows_per_bank) {
            int shortfall = next_row[b] - dram.rows_per_bank;
            throw LayoutError("layout: capacity exceeded on bank " + std::to_string(b) +
                              ", short by " + std::to_string(shortfall) + " rows");
        }
    }
    return layout;
}

}  // namespace pimba
