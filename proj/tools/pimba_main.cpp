#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "pimba/commands.hpp"
#include "pimba/config_file.hpp"
#include "pimba/device.hpp"
#include "pimba/drift.hpp"
#include "pimba/system_model.hpp"

namespace fs = std::filesystem;
using namespace pimba;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitTiming = 3;
constexpr int kExitGolden = 4;

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    long seed = 1;
    std::string overlap = "on";
    std::string system = "pimba";
    bool no_timestamp = false;
    bool dry_run = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "config file (key = value)")->required();
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_option("--seed", o.seed, "base seed");
    cmd->add_option("--overlap", o.overlap, "command overlap: on|off")
        ->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--system", o.system, "system kind")
        ->check(CLI::IsMember({"gpu", "gpu_q", "gpu_pim_tm", "pimba"}));
    cmd->add_flag("--no-timestamp", o.no_timestamp, "suppress timestamp headers");
    cmd->add_flag("--dry-run", o.dry_run, "validate config and print the plan only");
}

std::string timestamp_header(const CommonOpts& o) {
    if (o.no_timestamp) return "";
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::ostringstream os;
    os << "# generated " << std::put_time(std::gmtime(&now), "%FT%TZ") << "\n";
    return os.str();
}

void write_file(const fs::path& path, const std::string& header, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << header << body;
    std::cout << path.string() << "\n";
}

KeyValueConfig load_config(const CommonOpts& o) {
    if (!fs::exists(o.config_path))
        throw std::runtime_error("config file not found: " + o.config_path);
    return KeyValueConfig::parse_file(o.config_path);
}

RoundMode rounding_from(const std::string& s) {
    if (s == "nearest" || s == "nearest_even") return RoundMode::NearestEven;
    if (s == "stochastic") return RoundMode::Stochastic;
    throw std::runtime_error("unknown rounding: " + s);
}

int cmd_drift(const CommonOpts& o, bool seed_flag_given) {
    KeyValueConfig cfg = load_config(o);
    DriftExperiment base;
    base.dim_head = static_cast<int>(cfg.get_int("dim_head", 32));
    base.dim_state = static_cast<int>(cfg.get_int("dim_state", 32));
    base.steps = static_cast<int>(cfg.get_int("steps", 4096));
    base.decay_min = cfg.get_double("decay_min", 0.99);
    base.decay_max = cfg.get_double("decay_max", 0.9999);
    base.input_scale = cfg.get_double("input_scale", 0.0625);
    base.seed = static_cast<uint64_t>(cfg.get_int("seed", o.seed));
    if (seed_flag_given) base.seed = static_cast<uint64_t>(o.seed);

    std::vector<Format> formats;
    auto fmt_names = cfg.get_list("formats");
    if (fmt_names.empty() || (fmt_names.size() == 1 && fmt_names[0] == "all"))
        formats = {Format::Fp16, Format::E4m3, Format::E5m2, Format::Int8Group, Format::Mx8};
    else
        for (const auto& n : fmt_names) formats.push_back(format_from_name(n));

    std::vector<RoundMode> roundings;
    auto rnd_names = cfg.get_list("roundings");
    if (rnd_names.empty()) roundings = {RoundMode::NearestEven};
    else
        for (const auto& n : rnd_names) roundings.push_back(rounding_from(n));

    if (o.dry_run) {
        std::cout << "drift plan: " << formats.size() * roundings.size()
                  << " trajectories, T=" << base.steps << ", dims=" << base.dim_head << "x"
                  << base.dim_state << ", seed=" << base.seed << "\n";
        return kExitOk;
    }

    fs::create_directories(o.out_dir);
    std::string header = timestamp_header(o);
    for (Format f : formats) {
        for (RoundMode r : roundings) {
            DriftExperiment exp = base;
            exp.format = f;
            exp.rounding = r;
            DriftResult res = run_drift(exp);
            std::string name = std::string("drift_") + format_name(f) + "_" +
                               (r == RoundMode::Stochastic ? "stochastic" : "nearest") +
                               ".csv";
            write_file(fs::path(o.out_dir) / name, header, drift_to_csv(res));
        }
    }
    auto pareto = format_pareto_report(formats, roundings, base);
    write_file(fs::path(o.out_dir) / "pareto.csv", header, pareto_to_csv(pareto));

    nlohmann::ordered_json sum;
    sum["steps"] = base.steps;
    sum["seed"] = base.seed;
    sum["rows"] = pareto.size();
    write_file(fs::path(o.out_dir) / "summary.json", "", sum.dump(2) + "\n");
    return kExitOk;
}

int cmd_simulate(const CommonOpts& o) {
    KeyValueConfig cfg = load_config(o);
    int batch = static_cast<int>(cfg.get_int("batch", 1));
    int n_heads = static_cast<int>(cfg.get_int("n_heads", 1));
    int dim_head = static_cast<int>(cfg.get_int("dim_head", 32));
    int dim_state = static_cast<int>(cfg.get_int("dim_state", 8));
    std::string mode_name = cfg.get("mode", "state_update");
    RoundMode rmode = rounding_from(cfg.get("rounding", "nearest"));
    std::string inject = cfg.get("inject_violation", "none");

    CompMode mode;
    if (mode_name == "state_update") mode = CompMode::StateUpdate;
    else if (mode_name == "attn_score") mode = CompMode::AttnScore;
    else if (mode_name == "attn_attend") mode = CompMode::AttnAttend;
    else throw std::runtime_error("unknown mode: " + mode_name);

    DramConfig dram;
    dram.rows_per_bank = static_cast<int>(cfg.get_int("rows_per_bank", dram.rows_per_bank));
    TimingParams timing;
    bool overlap = o.overlap == "on";

    if (o.dry_run) {
        std::cout << "simulate plan: mode=" << mode_name << " batch=" << batch
                  << " heads=" << n_heads << " dims=" << dim_head << "x" << dim_state
                  << " overlap=" << o.overlap << " inject=" << inject << "\n";
        return kExitOk;
    }

    uint16_t lfsr_seed = static_cast<uint16_t>(o.seed);
    PimWorkload wl =
        mode == CompMode::StateUpdate
            ? make_state_workload(batch, n_heads, dim_head, dim_state,
                                  static_cast<uint64_t>(o.seed), lfsr_seed, rmode)
            : make_attention_workload(mode, batch, n_heads, dim_head, dim_state,
                                      static_cast<uint64_t>(o.seed), lfsr_seed, rmode);
    ChunkLayout layout = layout_state(batch, n_heads, dim_head, dim_state, dram);
    WorkPlan plan = plan_from_layout(layout, mode);
    CommandStream stream = schedule(plan, timing, overlap);

    if (inject == "tccd_l") {
        for (size_t i = 1; i < stream.commands.size(); ++i)
            if (stream.commands[i].kind == CmdKind::Comp &&
                stream.commands[i - 1].kind == CmdKind::Comp) {
                stream.commands[i].cycle = stream.commands[i - 1].cycle + timing.tCCD_L - 1;
                break;
            }
    } else if (inject == "tfaw") {
        for (size_t i = 1; i < stream.commands.size(); ++i)
            if (stream.commands[i].kind == CmdKind::Act4 &&
                stream.commands[i - 1].kind == CmdKind::Act4) {
                stream.commands[i].cycle = stream.commands[i - 1].cycle + timing.tFAW - 1;
                break;
            }
    } else if (inject == "result_read_early") {
        uint64_t last_comp = 0;
        for (auto& c : stream.commands)
            if (c.kind == CmdKind::Comp) last_comp = c.cycle;
        for (auto& c : stream.commands)
            if (c.kind == CmdKind::ResultRead) {
                c.cycle = last_comp + 5;
                break;
            }
    } else if (inject != "none") {
        throw std::runtime_error("unknown inject_violation: " + inject);
    }

    auto violations = validate_timing(stream, timing, mode == CompMode::StateUpdate);
    if (!violations.empty()) {
        for (const auto& v : violations)
            std::cerr << "violation: " << v.constraint << " at cycle " << v.cycle << " ("
                      << v.detail << ")\n";
        return kExitTiming;
    }

    PimDevice dev(dram);
    load_workload(dev, layout, wl);
    RunResult rr = run(stream, dev, layout, wl, timing, 32, /*record_trace=*/true);

    std::vector<HeadTask> golden_tasks;
    auto golden = golden_outputs(wl, &golden_tasks);
    bool pass = golden == rr.exec.outputs;
    if (pass && mode == CompMode::StateUpdate) {
        for (int r = 0; r < batch && pass; ++r)
            for (int h = 0; h < n_heads && pass; ++h) {
                MxStateMatrix dev_state = read_back_state(dev, layout, wl, r, h);
                const MxStateMatrix& want =
                    golden_tasks[static_cast<size_t>(r) * n_heads + h].state;
                pass = dev_state.groups == want.groups;
            }
    }

    fs::create_directories(o.out_dir);
    std::string header = timestamp_header(o);
    write_file(fs::path(o.out_dir) / "commands.txt", header, stream.to_text());
    write_file(fs::path(o.out_dir) / "trace.csv", header, trace_to_csv(rr.exec.trace));
    nlohmann::ordered_json sum;
    sum["total_cycles"] = rr.total_cycles;
    sum["pim_iterations"] = rr.exec.iterations;
    sum["comps"] = rr.comps;
    sum["column_reads"] = rr.exec.column_reads;
    sum["column_writes"] = rr.exec.column_writes;
    sum["overlap"] = o.overlap;
    sum["golden"] = pass ? "PASS" : "FAIL";
    write_file(fs::path(o.out_dir) / "summary.json", "", sum.dump(2) + "\n");

    std::cout << "cycles " << rr.total_cycles << " golden " << (pass ? "PASS" : "FAIL")
              << "\n";
    return pass ? kExitOk : kExitGolden;
}

int cmd_sweep(const CommonOpts& o, bool system_flag_given) {
    KeyValueConfig cfg = load_config(o);
    auto model_names = cfg.get_list("models");
    if (model_names.empty()) model_names = {"retnet"};
    auto system_names = cfg.get_list("systems");
    if (system_flag_given || system_names.empty()) system_names = {o.system};
    auto batch_list = cfg.get_list("batches");
    if (batch_list.empty()) batch_list = {"32"};
    int in_len = static_cast<int>(cfg.get_int("in_len", 2048));
    int out_len = static_cast<int>(cfg.get_int("out_len", 2048));
    double scale_params = cfg.get_double("scale_params", 0.0);

    SystemConfig sys;
    sys.external_bandwidth = cfg.get_double("external_bandwidth", sys.external_bandwidth);
    sys.compute_throughput = cfg.get_double("compute_throughput", sys.compute_throughput);
    sys.n_devices = static_cast<int>(cfg.get_int("n_devices", sys.n_devices));
    sys.memory_capacity = cfg.get_double("memory_capacity", sys.memory_capacity);
    sys.pim_modules = static_cast<int>(cfg.get_int("pim_modules", sys.pim_modules));

    // Invalid names are config errors, not per-point failures.
    for (const auto& m : model_names) model_preset(m);
    std::vector<SystemKind> systems;
    for (const auto& s : system_names) systems.push_back(system_from_name(s));

    std::vector<SweepPoint> grid;
    for (const auto& m : model_names)
        for (SystemKind s : systems)
            for (const auto& b : batch_list)
                grid.push_back({m, s, std::stoi(b), in_len, out_len});

    if (o.dry_run) {
        std::cout << "sweep plan: " << grid.size() << " points, in_len=" << in_len
                  << " out_len=" << out_len << "\n";
        return kExitOk;
    }

    std::vector<SweepRow> rows;
    if (scale_params > 0) {
        // Scale each model before sweeping.
        rows.reserve(grid.size());
        for (const auto& pt : grid) {
            SweepRow row;
            row.point = pt;
            try {
                ModelConfig m = model_preset(pt.model).scaled_to(scale_params);
                row.latency =
                    estimate_generation(m, sys, pt.batch, pt.in_len, pt.out_len, pt.system);
                row.energy =
                    estimate_energy(m, sys, pt.batch, pt.in_len, pt.out_len, pt.system);
            } catch (const std::exception& ex) {
                row.error = ex.what();
            }
            rows.push_back(std::move(row));
        }
    } else {
        rows = sweep(grid, sys);
    }

    fs::create_directories(o.out_dir);
    std::string header = timestamp_header(o);
    write_file(fs::path(o.out_dir) / "results.csv", header, sweep_to_csv(rows));
    write_file(fs::path(o.out_dir) / "results.json", "", sweep_to_json(rows));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pimba: PIM accelerator simulation for state-update LLM serving"};
    app.require_subcommand(1);

    CommonOpts drift_opts, sim_opts, sweep_opts;
    CLI::App* drift_cmd = app.add_subcommand("drift", "quantization drift experiments");
    add_common(drift_cmd, drift_opts);
    CLI::App* sim_cmd = app.add_subcommand("simulate", "schedule, validate and run a PIM workload");
    add_common(sim_cmd, sim_opts);
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "system-model latency/energy sweeps");
    add_common(sweep_cmd, sweep_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (drift_cmd->parsed())
            return cmd_drift(drift_opts, drift_cmd->count("--seed") > 0);
        if (sim_cmd->parsed()) return cmd_simulate(sim_opts);
        if (sweep_cmd->parsed())
            return cmd_sweep(sweep_opts, sweep_cmd->count("--system") > 0);
    } catch (const TimingError& ex) {
        std::cerr << ex.what() << "\n";
        return kExitTiming;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}
