#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {
const fs::path kRoot = fs::temp_directory_path() / "spncs_cli_test";

Json example() {
    std::ifstream in("configs/example.json");
    return Json::parse(in);
}

fs::path write_config(const std::string& name, const Json& j) {
    fs::create_directories(kRoot);
    const fs::path p = kRoot / (name + ".json");
    std::ofstream(p) << j.dump(2);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Runs the CLI with stdout/stderr discarded and returns its exit code.
int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + SPNCS_CLI_PATH + " " + args + " > /dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string out_dir(const std::string& name) {
    const fs::path p = kRoot / name;
    fs::remove_all(p);
    return p.string();
}

/// Short-horizon variant of the example for fast simulate runs.
Json short_run(double horizon) {
    Json j = example();
    j["simulation"]["horizon"] = horizon;
    return j;
}
}  // namespace

TEST_CASE("usage errors exit 2") {
    CHECK(run("") == 2);
    CHECK(run("frobnicate --config configs/example.json") == 2);
    CHECK(run("verify") == 2);
    CHECK(run("verify --config " + (kRoot / "missing.json").string()) == 2);
    CHECK(run("--help") == 0);
}

TEST_CASE("malformed configs exit 2") {
    fs::create_directories(kRoot);
    std::ofstream(kRoot / "broken.json") << "{ \"plant\": [1, 2";
    CHECK(run("verify --config " + (kRoot / "broken.json").string() + " --out " + out_dir("broken")) == 2);

    Json j = example();
    j["plant"]["A11"] = Json::array({Json::array({1.0, 0.0})});
    CHECK(run("verify --config " + write_config("bad_dims", j).string() + " --out " + out_dir("bad_dims")) == 2);

    j = example();
    j["gain_template"]["L1s"] = Json::array({Json::array({"n1"})});
    CHECK(run("design --config " + write_config("bad_template", j).string() + " --out " + out_dir("bad_template")) == 2);

    j = example();
    j["design"]["gamma_s"] = 0.0;
    CHECK(run("mati --config " + write_config("gamma_zero", j).string() + " --out " + out_dir("gamma_zero")) == 2);
}

TEST_CASE("verify reports the printed certificates as infeasible") {
    const std::string dir = out_dir("verify");
    CHECK(run("verify --config configs/example.json --out " + dir) == 1);
    const Json r = Json::parse(slurp(fs::path(dir) / "verify.json"));
    CHECK(r["tool"] == "spncs 1.0.0");
    CHECK(r["lmi"]["bl_lmi_max_eig"].get<double>() > 0);
    CHECK(r["protocols"]["slow"]["validation"]["pass"] == true);
    CHECK(r["pass"] == false);

    Json j = example();
    j["design"]["gamma_s"] = 0.1;
    const std::string d2 = out_dir("verify_small_gamma");
    CHECK(run("verify --config " + write_config("small_gamma", j).string() + " --out " + d2) == 1);
    const Json r2 = Json::parse(slurp(fs::path(d2) / "verify.json"));
    CHECK(r2["lmi"]["reduced_lmi_max_eig"].get<double>() > r["lmi"]["reduced_lmi_max_eig"].get<double>());
}

TEST_CASE("design writes a config that verifies") {
    Json j = example();
    j["search"]["max_evals"] = 20000;
    const std::string dir = out_dir("design");
    CHECK(run("design --config " + write_config("design", j).string() + " --out " + dir) == 0);
    const Json r = Json::parse(slurp(fs::path(dir) / "design.json"));
    CHECK(r["design"]["verify"]["pass"] == true);
    CHECK(r["design"]["objective"].get<double>() > r["reference_objective_at_initial_gains"].get<double>());
    CHECK(run("verify --config " + (fs::path(dir) / "designed_config.json").string() + " --out " + out_dir("designed")) ==
          0);
}

TEST_CASE("mati reports the constants and fails the eps precondition") {
    const std::string a = out_dir("mati_a"), b = out_dir("mati_b");
    CHECK(run("mati --config configs/example.json --out " + a) == 1);
    CHECK(run("mati --config configs/example.json --out " + b) == 1);
    const std::string ra = slurp(fs::path(a) / "mati.json");
    CHECK(ra == slurp(fs::path(b) / "mati.json"));
    const Json r = Json::parse(ra);
    CHECK(r["preconditions"]["slow_timing"] == true);
    CHECK(r["preconditions"]["epsilon_below_epsilon_star"] == false);
    CHECK(r["ledger"].contains("constants"));

    const std::string c = out_dir("mati_seed");
    CHECK(run("mati --config configs/example.json --seed 7 --out " + c) == 1);
    CHECK(Json::parse(slurp(fs::path(c) / "mati.json"))["config_hash"] != r["config_hash"]);
}

TEST_CASE("simulate output is byte-identical across thread counts") {
    const fs::path cfg = write_config("short", short_run(0.5));
    const std::string a = out_dir("sim_a"), b = out_dir("sim_b");
    CHECK(run("simulate --config " + cfg.string() + " --out " + a, "SPNCS_THREADS=1") == 0);
    CHECK(run("simulate --config " + cfg.string() + " --out " + b, "SPNCS_THREADS=3") == 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        ++files;
        INFO(e.path().filename());
        CHECK(slurp(e.path()) == slurp(fs::path(b) / e.path().filename()));
    }
    CHECK(files == 13);
    const Json r = Json::parse(slurp(fs::path(a) / "simulate.json"));
    CHECK(r["scenarios"].size() == 6);
    CHECK(r["scenarios"][0]["diss"]["holds"] == true);
    CHECK(run("simulate --config " + cfg.string() + " --out " + out_dir("sim_bad_env"), "SPNCS_THREADS=x") == 2);
}

TEST_CASE("zero initial error and zero signals flatline at the attractor") {
    Json j = short_run(0.3);
    j["simulation"]["initial"] = {{"x_p", {0.0, 0.0}}, {"z_p", {0.0, 0.0}}, {"x_o", {0.0, 0.0}}, {"z_o", {0.0, 0.0}}};
    j["simulation"]["scenarios"] = Json::array({{{"name", "flat"}}});
    const std::string dir = out_dir("flat");
    CHECK(run("simulate --config " + write_config("flat", j).string() + " --out " + dir) == 0);
    const Json r = Json::parse(slurp(fs::path(dir) / "simulate.json"));
    CHECK(r["scenarios"][0]["initial_distance"].get<double>() == 0.0);
    CHECK(r["scenarios"][0]["final_distance"].get<double>() == 0.0);
    CHECK(r["scenarios"][0]["empirical_ultimate_bound"].get<double>() == 0.0);
}
