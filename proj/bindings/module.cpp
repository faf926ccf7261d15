#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pimba/commands.hpp"
#include "pimba/device.hpp"
#include "pimba/drift.hpp"
#include "pimba/system_model.hpp"

namespace py = pybind11;
using namespace pimba;

namespace {

Rounder make_rounder(const std::string& mode, uint16_t seed) {
    RoundMode m = mode == "stochastic" ? RoundMode::Stochastic : RoundMode::NearestEven;
    return Rounder(m, seed);
}

std::array<double, 16> to_array16(const std::vector<double>& v) {
    if (v.size() != 16) throw std::invalid_argument("expected 16 values");
    std::array<double, 16> a{};
    std::copy(v.begin(), v.end(), a.begin());
    return a;
}

}  // namespace

PYBIND11_MODULE(pimba, m) {
    m.doc() = "MX8 block floating point arithmetic and PIM state-update simulation";

    py::class_<MXGroup>(m, "MXGroup")
        .def(py::init<>())
        .def_readwrite("shared_exponent", &MXGroup::shared_exponent)
        .def_readwrite("micro_exponents", &MXGroup::micro_exponents)
        .def("mu", &MXGroup::mu)
        .def("sign", &MXGroup::sign)
        .def("mantissa", [](const MXGroup& g, int i) { return g.mantissas.at(i); })
        .def("to_bytes",
             [](const MXGroup& g) {
                 auto b = g.to_bytes();
                 return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
             })
        .def_static("from_bytes",
                    [](const py::bytes& b) {
                        std::string s = b;
                        if (s.size() != MXGroup::kEncodedBytes)
                            throw std::invalid_argument("expected 16 bytes");
                        std::array<std::byte, MXGroup::kEncodedBytes> a;
                        std::memcpy(a.data(), s.data(), a.size());
                        return MXGroup::from_bytes(a);
                    })
        .def("__eq__", [](const MXGroup& a, const MXGroup& b) { return a == b; });

    m.def(
        "quantize_mx",
        [](const std::vector<double>& x, const std::string& rounding, uint16_t seed) {
            Rounder r = make_rounder(rounding, seed);
            return quantize_mx(to_array16(x), r);
        },
        py::arg("values"), py::arg("rounding") = "nearest", py::arg("seed") = 0xACE1);

    m.def("dequantize_mx", [](const MXGroup& g) {
        auto a = dequantize_mx(g);
        return std::vector<double>(a.begin(), a.end());
    });

    m.def(
        "mx_multiply",
        [](const MXGroup& a, const MXGroup& b, const std::string& rounding, uint16_t seed) {
            Rounder r = make_rounder(rounding, seed);
            return mx_multiply(a, b, r);
        },
        py::arg("a"), py::arg("b"), py::arg("rounding") = "nearest",
        py::arg("seed") = 0xACE1);

    m.def(
        "mx_add",
        [](const MXGroup& a, const MXGroup& b, const std::string& rounding, uint16_t seed) {
            Rounder r = make_rounder(rounding, seed);
            return mx_add(a, b, r);
        },
        py::arg("a"), py::arg("b"), py::arg("rounding") = "nearest",
        py::arg("seed") = 0xACE1);

    m.def("mx_dot", [](const MXGroup& a, const MXGroup& b) { return mx_dot(a, b); });

    m.def(
        "stochastic_round",
        [](double value, int target_bits, uint16_t seed) {
            Rounder r(RoundMode::Stochastic, seed);
            return stochastic_round(value, target_bits, r);
        },
        py::arg("value"), py::arg("target_bits"), py::arg("seed") = 0xACE1);

    m.def(
        "state_update_step",
        [](std::vector<std::vector<double>> S, const std::vector<double>& d,
           const std::vector<double>& q, const std::vector<double>& k,
           const std::vector<double>& v) {
            size_t dh = S.size();
            size_t ds = dh ? S[0].size() : 0;
            StateMatrix m_(dh, ds);
            for (size_t h = 0; h < dh; ++h)
                for (size_t c = 0; c < ds; ++c) m_.at(h, c) = S[h][c];
            StepResult r = state_update_step_ref(m_, {d, q, k, v});
            for (size_t h = 0; h < dh; ++h)
                for (size_t c = 0; c < ds; ++c) S[h][c] = m_.at(h, c);
            return py::make_tuple(S, r.y);
        },
        py::arg("S"), py::arg("d"), py::arg("q"), py::arg("k"), py::arg("v"),
        "Reference state-update step: returns (S_new, y)");

    m.def(
        "run_drift",
        [](int dim_head, int dim_state, int steps, const std::string& format,
           const std::string& rounding, uint64_t seed) {
            DriftExperiment exp;
            exp.dim_head = dim_head;
            exp.dim_state = dim_state;
            exp.steps = steps;
            exp.format = format_from_name(format);
            exp.rounding =
                rounding == "stochastic" ? RoundMode::Stochastic : RoundMode::NearestEven;
            exp.seed = seed;
            DriftResult r = run_drift(exp);
            std::vector<std::pair<double, double>> series;
            series.reserve(r.series.size());
            for (const auto& p : r.series)
                series.emplace_back(p.frobenius_error, p.output_error);
            return series;
        },
        py::arg("dim_head") = 32, py::arg("dim_state") = 32, py::arg("steps") = 256,
        py::arg("format") = "mx8", py::arg("rounding") = "nearest", py::arg("seed") = 1);

    m.def(
        "simulate_state_update",
        [](int batch, int n_heads, int dim_head, int dim_state, uint64_t seed) {
            PimWorkload wl = make_state_workload(batch, n_heads, dim_head, dim_state, seed,
                                                 static_cast<uint16_t>(seed),
                                                 RoundMode::NearestEven);
            DramConfig dram;
            ChunkLayout layout = layout_state(batch, n_heads, dim_head, dim_state, dram);
            PimDevice dev(dram);
            load_workload(dev, layout, wl);
            ExecResult res = execute_comp(dev, layout, wl);
            auto golden = golden_outputs(wl);
            py::dict out;
            out["iterations"] = res.iterations;
            out["column_reads"] = res.column_reads;
            out["column_writes"] = res.column_writes;
            out["golden_match"] = golden == res.outputs;
            out["outputs"] = res.outputs;
            return out;
        },
        py::arg("batch") = 1, py::arg("n_heads") = 1, py::arg("dim_head") = 32,
        py::arg("dim_state") = 8, py::arg("seed") = 1,
        "Cycle-accurate state update on the shared-SPU device, checked against "
        "the golden model");

    m.def(
        "validate_command_stream",
        [](const std::string& text) {
            TimingParams t;
            auto violations = validate_timing(CommandStream::from_text(text), t);
            std::vector<std::string> out;
            for (const auto& v : violations)
                out.push_back(v.constraint + " at cycle " + std::to_string(v.cycle));
            return out;
        },
        py::arg("stream_text"), "Timing-check a textual command stream (Table-1 defaults)");

    m.def(
        "estimate_generation",
        [](const std::string& model, const std::string& system, int batch, int in_len,
           int out_len) {
            SystemConfig sys;
            LatencyBreakdown b = estimate_generation(model_preset(model), sys, batch,
                                                     in_len, out_len,
                                                     system_from_name(system));
            py::dict out;
            out["projections_ffn_s"] = b.projections_ffn;
            out["state_update_s"] = b.state_update;
            out["attention_s"] = b.attention;
            out["other_s"] = b.other;
            out["tokens_per_s"] = b.tokens_per_s;
            return out;
        },
        py::arg("model") = "retnet", py::arg("system") = "pimba", py::arg("batch") = 32,
        py::arg("in_len") = 2048, py::arg("out_len") = 2048);
}
