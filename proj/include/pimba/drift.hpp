#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pimba/formats.hpp"

namespace pimba {

// Synthetic long-horizon state-update trajectory: the quantized state steps
// in lockstep with a double-precision reference, errors recorded every step.
// Only the state is quantized; d, k, v, q stay in double precision. The
// standard workload draws per-step decay from U[decay_min, decay_max] and
// k/v/q from N(0,1) scaled by input_scale.
struct DriftExperiment {
    int dim_head = 32;
    int dim_state = 32;
    int steps = 4096;
    double decay_min = 0.99;
    double decay_max = 0.9999;
    double input_scale = 0.0625;  // 2^-4
    uint64_t seed = 1;
    Format format = Format::Mx8;
    RoundMode rounding = RoundMode::NearestEven;
};

struct DriftPoint {
    int step;
    double frobenius_error;  // relative, state
    double output_error;     // relative L2, y
    bool saturated;          // divergence recorded, not thrown
};

struct DriftResult {
    DriftExperiment exp;
    std::vector<DriftPoint> series;

    double final_frobenius() const {
        return series.empty() ? 0.0 : series.back().frobenius_error;
    }
};

DriftResult run_drift(const DriftExperiment& exp);

std::string drift_to_csv(const DriftResult& r);

struct ParetoRow {
    Format format;
    RoundMode rounding;
    double final_error;
    double bits_per_element;
    bool pareto_8bit;  // error-minimal among the <= 8-bit formats
};

// One row per (format, rounding) combination on a fixed experiment; bits per
// element is the area proxy.
std::vector<ParetoRow> format_pareto_report(const std::vector<Format>& formats,
                                            const std::vector<RoundMode>& roundings,
                                            const DriftExperiment& base);

std::string pareto_to_csv(const std::vector<ParetoRow>& rows);

}  // namespace pimba
