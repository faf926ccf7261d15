#include "pimba/drift.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "pimba/state_update.hpp"

namespace pimba {

namespace {

// Quantize the state column-major along dim_head, matching the device layout
// (mx8 groups of 16, int8 groups of 32, scalars elementwise).
std::vector<double> requantize_state(const std::vector<double>& s, int dim_head,
                                     int dim_state, Format fmt, Rounder& rm) {
    std::vector<double> col(dim_head);
    std::vector<double> out(s.size());
    for (int c = 0; c < dim_state; ++c) {
        for (int h = 0; h < dim_head; ++h) col[h] = s[static_cast<size_t>(h) * dim_state + c];
        QuantizedVector q = quantize_format(col, fmt, rm);
        std::vector<double> back = dequantize_format(q);
        for (int h = 0; h < dim_head; ++h) out[static_cast<size_t>(h) * dim_state + c] = back[h];
    }
    return out;
}

}  // namespace

DriftResult run_drift(const DriftExperiment& exp) {
    if (exp.steps < 1) throw std::invalid_argument("drift: steps must be >= 1");
    DriftResult result;
    result.exp = exp;
    result.series.reserve(exp.steps);

    std::mt19937_64 rng(exp.seed);
    std::uniform_real_distribution<double> decay(exp.decay_min, exp.decay_max);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Rounder rm(exp.rounding, static_cast<uint16_t>(exp.seed % 0xFFFF + 1));

    size_t n = static_cast<size_t>(exp.dim_head) * exp.dim_state;
    std::vector<double> ref(n, 0.0), quant(n, 0.0);
    std::vector<double> d(exp.dim_head), k(exp.dim_head), q(exp.dim_head), v(exp.dim_state);
    double sat_mag = format_max_magnitude(exp.format);

    for (int step = 0; step < exp.steps; ++step) {
        for (auto& x : d) x = decay(rng);
        for (auto& x : k) x = gauss(rng) * exp.input_scale;
        for (auto& x : q) x = gauss(rng);
        for (auto& x : v) x = gauss(rng) * exp.input_scale;

        double fro_num = 0, fro_den = 0;
        double y_num = 0, y_den = 0;
        bool saturated = false;

        // Reference and quantized step share the exact same inputs.
        for (int h = 0; h < exp.dim_head; ++h) {
            for (int c = 0; c < exp.dim_state; ++c) {
                size_t i = static_cast<size_t>(h) * exp.dim_state + c;
                ref[i] = d[h] * ref[i] + k[h] * v[c];
                quant[i] = d[h] * quant[i] + k[h] * v[c];
                if (std::fabs(quant[i]) > sat_mag) saturated = true;
            }
        }
        quant = requantize_state(quant, exp.dim_head, exp.dim_state, exp.format, rm);

        for (int c = 0; c < exp.dim_state; ++c) {
            double yr = 0, yq = 0;
            for (int h = 0; h < exp.dim_head; ++h) {
                size_t i = static_cast<size_t>(h) * exp.dim_state + c;
                yr += ref[i] * q[h];
                yq += quant[i] * q[h];
                double diff = quant[i] - ref[i];
                fro_num += diff * diff;
                fro_den += ref[i] * ref[i];
            }
            y_num += (yq - yr) * (yq - yr);
            y_den += yr * yr;
        }

        DriftPoint pt;
        pt.step = step;
        pt.frobenius_error = fro_den > 0 ? std::sqrt(fro_num / fro_den) : 0.0;
        pt.output_error = y_den > 0 ? std::sqrt(y_num / y_den) : 0.0;
        pt.saturated = saturated;
        result.series.push_back(pt);
    }
    return result;
}

std::string drift_to_csv(const DriftResult& r) {
    std::ostringstream os;
    os.precision(17);
    os << "step,format,rounding,frobenius_error,output_error\n";
    const char* rnd = r.exp.rounding == RoundMode::Stochastic ? "stochastic" : "nearest";
    for (const auto& pt : r.series)
        os << pt.step << ',' << format_name(r.exp.format) << ',' << rnd << ','
           << pt.frobenius_error << ',' << pt.output_error << '\n';
    return os.str();
}

std::vector<ParetoRow> format_pareto_report(const std::vector<Format>& formats,
                                            const std::vector<RoundMode>& roundings,
                                            const DriftExperiment& base) {
    std::vector<ParetoRow> rows;
    for (Format f : formats) {
        for (RoundMode r : roundings) {
            DriftExperiment exp = base;
            exp.format = f;
            exp.rounding = r;
            DriftResult res = run_drift(exp);
            rows.push_back({f, r, res.final_frobenius(), bits_per_element(f), false});
        }
    }
    // Flag the error-minimal row among the <= 8-bit encodings.
    double best = -1;
    size_t best_idx = rows.size();
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].bits_per_element > 8.0) continue;
        if (best < 0 || rows[i].final_error < best) {
            best = rows[i].final_error;
            best_idx = i;
        }
    }
    if (best_idx < rows.size()) rows[best_idx].pareto_8bit = true;
    return rows;
}

std::string pareto_to_csv(const std::vector<ParetoRow>& rows) {
    std::ostringstream os;
    os.precision(17);
    os << "format,rounding,final_frobenius_error,bits_per_element,pareto_8bit\n";
    for (const auto& r : rows)
        os << format_name(r.format) << ','
           << (r.rounding == RoundMode::Stochastic ? "stochastic" : "nearest") << ','
           << r.final_error << ',' << r.bits_per_element << ',' << (r.pareto_8bit ? 1 : 0)
           << '\n';
    return os.str();
}

}  // namespace pimba
