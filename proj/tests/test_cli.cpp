#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const char* kCli = PIMBA_CLI_PATH;

struct RunOutcome {
    int exit_code;
};

RunOutcome run_cli(const std::string& args) {
    std::string cmd = std::string(kCli) + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return {WEXITSTATUS(rc)};
}

fs::path write_config(const std::string& name, const std::string& body) {
    fs::path dir = fs::temp_directory_path() / "pimba_cli_test";
    fs::create_directories(dir);
    fs::path p = dir / name;
    std::ofstream(p) << body;
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path out_dir(const std::string& tag) {
    fs::path d = fs::temp_directory_path() / "pimba_cli_test" / tag;
    fs::remove_all(d);
    return d;
}

}  // namespace

TEST_CASE("missing config file exits 2 and names the path") {
    RunOutcome r = run_cli("drift --config /nonexistent/x.cfg");
    CHECK(r.exit_code == 2);
}

TEST_CASE("drift: minimal config produces per-format csv plus pareto table") {
    fs::path cfg = write_config("drift_min.cfg",
                                "dim_head = 16\ndim_state = 16\nsteps = 32\n"
                                "formats = mx8, e4m3\nroundings = nearest\n");
    fs::path out = out_dir("drift1");
    RunOutcome r = run_cli("drift --config " + cfg.string() + " --out " + out.string() +
                           " --no-timestamp");
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(out / "drift_mx8_nearest.csv"));
    CHECK(fs::exists(out / "drift_e4m3_nearest.csv"));
    CHECK(fs::exists(out / "pareto.csv"));
    std::string csv = slurp(out / "drift_mx8_nearest.csv");
    // header + 32 step rows
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 33);
}

TEST_CASE("drift: formats=all yields a file per combination") {
    fs::path cfg = write_config("drift_all.cfg",
                                "dim_head = 16\ndim_state = 16\nsteps = 8\n"
                                "formats = all\nroundings = nearest, stochastic\n");
    fs::path out = out_dir("drift2");
    RunOutcome r = run_cli("drift --config " + cfg.string() + " --out " + out.string() +
                           " --no-timestamp");
    CHECK(r.exit_code == 0);
    int count = 0;
    for (const auto& e : fs::directory_iterator(out))
        if (e.path().filename().string().rfind("drift_", 0) == 0) ++count;
    CHECK(count == 10);  // 5 formats x 2 roundings
}

TEST_CASE("simulate: golden verdict PASS, overlap shortens the schedule") {
    fs::path cfg = write_config("sim.cfg",
                                "mode = state_update\nbatch = 1\nn_heads = 4\n"
                                "dim_head = 32\ndim_state = 4\nrounding = stochastic\n");
    fs::path out_on = out_dir("sim_on");
    fs::path out_off = out_dir("sim_off");
    CHECK(run_cli("simulate --config " + cfg.string() + " --out " + out_on.string() +
                  " --overlap on --no-timestamp")
              .exit_code == 0);
    CHECK(run_cli("simulate --config " + cfg.string() + " --out " + out_off.string() +
                  " --overlap off --no-timestamp")
              .exit_code == 0);
    std::string on = slurp(out_on / "summary.json");
    std::string off = slurp(out_off / "summary.json");
    CHECK(on.find("\"golden\": \"PASS\"") != std::string::npos);
    auto cycles_of = [](const std::string& s) {
        size_t p = s.find("\"total_cycles\": ");
        return std::stoull(s.substr(p + 16));
    };
    CHECK(cycles_of(on) <= cycles_of(off));
}

TEST_CASE("simulate: injected timing violation exits 3") {
    fs::path cfg = write_config("sim_bad.cfg",
                                "mode = state_update\nbatch = 1\nn_heads = 2\n"
                                "dim_head = 32\ndim_state = 4\n"
                                "inject_violation = tccd_l\n");
    fs::path out = out_dir("sim_bad");
    RunOutcome r = run_cli("simulate --config " + cfg.string() + " --out " + out.string());
    CHECK(r.exit_code == 3);
}

TEST_CASE("sweep: one point per grid cell; bad keys exit 2") {
    fs::path cfg = write_config("sweep.cfg",
                                "models = retnet\nsystems = gpu, pimba\n"
                                "batches = 8, 16, 32\nin_len = 128\nout_len = 4\n");
    fs::path out = out_dir("sweep1");
    RunOutcome r = run_cli("sweep --config " + cfg.string() + " --out " + out.string() +
                           " --no-timestamp");
    CHECK(r.exit_code == 0);
    std::string csv = slurp(out / "results.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);  // header + 2x3 rows

    fs::path bad = write_config("sweep_bad.cfg", "models = not_a_model\n");
    CHECK(run_cli("sweep --config " + bad.string() + " --out " + out.string()).exit_code ==
          2);
}

TEST_CASE("dry run validates and prints the plan without writing files") {
    fs::path cfg = write_config("dry.cfg",
                                "dim_head = 16\ndim_state = 16\nsteps = 8\n");
    fs::path out = out_dir("dry");
    RunOutcome r = run_cli("drift --config " + cfg.string() + " --out " + out.string() +
                           " --dry-run");
    CHECK(r.exit_code == 0);
    CHECK_FALSE(fs::exists(out));
}

TEST_CASE("reproducibility: --no-timestamp output is byte-identical across runs") {
    fs::path cfg = write_config("rep.cfg",
                                "dim_head = 16\ndim_state = 16\nsteps = 16\n"
                                "formats = mx8\nroundings = stochastic\nseed = 9\n");
    fs::path a = out_dir("rep_a");
    fs::path b = out_dir("rep_b");
    CHECK(run_cli("drift --config " + cfg.string() + " --out " + a.string() +
                  " --no-timestamp")
              .exit_code == 0);
    CHECK(run_cli("drift --config " + cfg.string() + " --out " + b.string() +
                  " --no-timestamp")
              .exit_code == 0);
    CHECK(slurp(a / "drift_mx8_stochastic.csv") == slurp(b / "drift_mx8_stochastic.csv"));
    CHECK(slurp(a / "pareto.csv") == slurp(b / "pareto.csv"));
    CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
}
