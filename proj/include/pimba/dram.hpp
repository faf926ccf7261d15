#pragma once

#include <cstdint>

namespace pimba {

// HBM2E-class organization. One SPU serves two banks; the PIM clock is one
// tCCD_L (4 memory bus cycles), so 1.512 GHz bus -> 378 MHz PIM.
struct DramConfig {
    int banks_per_bank_group = 4;
    int bank_groups_per_pseudo_channel = 4;
    int pseudo_channels = 1;
    int column_bytes = 32;      // one sub-chunk: 2 MXGroups = 32 state elements
    int columns_per_row = 32;   // 1 KiB rows
    int rows_per_bank = 16384;
    double bus_frequency_hz = 1.512e9;
    double pim_frequency_hz = 378e6;

    int banks() const { return banks_per_bank_group * bank_groups_per_pseudo_channel; }
    int spus() const { return banks() / 2; }
};

// Bus-cycle timing constraints. Defaults follow the evaluated HBM part;
// tRFC is a config extension (refresh duration) not in the base set.
struct TimingParams {
    int tRP = 14;
    int tRAS = 34;
    int tCCD_S = 2;
    int tCCD_L = 4;
    int tWR = 16;
    int tRTP_S = 4;
    int tRTP_L = 6;
    int tREFI = 3900;
    int tFAW = 30;
    int tRFC = 390;
};

}  // namespace pimba
