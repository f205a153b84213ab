#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "../tools/commands.hpp"
#include "attnlab/exp2poly.hpp"
#include "attnlab/matrix.hpp"
#include "attnlab/roofline.hpp"

namespace {

struct CliRun {
    int exit_code = 0;
    std::string out;
    std::string err;
};

CliRun run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("attnlab");
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliRun r;
    r.exit_code = attnlab::cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

} // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run({}).exit_code == 2);
    CHECK(run({"exp2-accuracy", "--samples", "0"}).exit_code == 2);
    CHECK(run({"roofline", "--pass", "sideways"}).exit_code == 2);
    CHECK(run({"schedule-sim", "--policy", "zigzag"}).exit_code == 2);
    CHECK(run({"no-such-command"}).exit_code == 2);
}

TEST_CASE("help is not an error") {
    const auto r = run({"--help"});
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("exp2-accuracy") != std::string::npos);
}

TEST_CASE("exp2-accuracy emits one csv row per method and is reproducible") {
    const auto r = run({"exp2-accuracy", "--samples", "200000", "--seed", "9",
                        "--degrees", "3,4,5"});
    CHECK(r.exit_code == 0);
    std::istringstream lines(r.out);
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(lines, line)) rows.push_back(line);
    REQUIRE(rows.size() == 6); // header + ideal + hardware + three degrees
    CHECK(rows[0] == attnlab::fastmath::accuracy_csv_header());
    CHECK(rows[1].rfind("ideal-round,", 0) == 0);
    CHECK(rows[2].rfind("hardware-like,", 0) == 0);
    CHECK(rows[3].rfind("poly-degree-3,", 0) == 0);

    const auto again = run({"exp2-accuracy", "--samples", "200000", "--seed", "9",
                            "--degrees", "3,4,5"});
    CHECK(again.out == r.out); // byte-identical for a fixed seed
}

TEST_CASE("exp2-accuracy json matches the library sweep") {
    const auto r = run({"exp2-accuracy", "--samples", "100000", "--seed", "4",
                        "--degrees", "3", "--format", "json"});
    REQUIRE(r.exit_code == 0);
    const auto j = nlohmann::json::parse(r.out);
    REQUIRE(j.size() == 3);
    const auto direct =
        attnlab::fastmath::accuracy_sweep(attnlab::fastmath::AccuracyMethod::PolyDegree3,
                                          100000, 4);
    CHECK(j[2].at("method") == "poly-degree-3");
    CHECK(j[2].at("fp32_max_rel").get<double>() == direct.fp32_max_rel);
    CHECK(j[2].at("ulp_match_fraction").get<double>() == direct.ulp_match_fraction);
}

TEST_CASE("exp2-fit emits importable coefficients") {
    const auto r = run({"exp2-fit", "--degree", "4"});
    REQUIRE(r.exit_code == 0);
    const auto poly = attnlab::fastmath::poly_from_json(r.out);
    CHECK(poly.degree == 4);
    CHECK(poly.coeffs[0] == 1.0f);
}

TEST_CASE("roofline reproduces the tables from the command line") {
    const auto fwd = run({"roofline", "--pass", "fwd", "--tile", "128x128x128"});
    REQUIRE(fwd.exit_code == 0);
    CHECK(fwd.out.find("fwd,1,128,128,128,1024,768,0,0,0,768,1024,mma") != std::string::npos);

    const auto bwd = run({"roofline", "--pass", "bwd", "--cta", "2", "--format", "json"});
    REQUIRE(bwd.exit_code == 0);
    const auto j = nlohmann::json::parse(bwd.out);
    CHECK(j.at("rows")[0].at("t_smem_total") == 2688);
    CHECK(j.at("rows")[0].at("t_mma") == 2560);

    const auto bad = run({"roofline", "--profile", "granite-class"});
    CHECK(bad.exit_code == 2);
    CHECK(bad.err.find("b200-class") != std::string::npos); // lists known profiles
    const auto bad_tile = run({"roofline", "--tile", "128x128"});
    CHECK(bad_tile.exit_code == 2);
}

TEST_CASE("attention-check passes its default suite") {
    const auto r = run({"attention-check", "--nq", "32", "--nkv", "32", "--d", "8",
                        "--tile-m", "8", "--tile-n", "8"});
    REQUIRE(r.exit_code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j.at("pass") == true);
    bool saw_forward = false;
    for (const auto& c : j.at("checks")) {
        if (c.at("check") == "forward_tiled_vs_dense") {
            saw_forward = true;
            CHECK(c.at("value").get<double>() <= 1e-12);
        }
    }
    CHECK(saw_forward);
}

TEST_CASE("attention-check covers the decode alignment and kernel modes") {
    const auto decode = run({"attention-check", "--causal", "--nq", "1", "--nkv", "128",
                             "--d", "16", "--tile-m", "1", "--tile-n", "32", "--skip-grad"});
    REQUIRE(decode.exit_code == 0);
    CHECK(nlohmann::json::parse(decode.out).at("pass") == true);

    const auto kf = run({"attention-check", "--precision", "kernel-faithful", "--exp",
                         "mixed:0.25", "--nq", "32", "--nkv", "64", "--d", "16",
                         "--tile-m", "16", "--tile-n", "16", "--skip-grad"});
    REQUIRE(kf.exit_code == 0);
    const auto j = nlohmann::json::parse(kf.out);
    CHECK(j.at("pass") == true);
    CHECK(j.at("checks")[0].at("check") == "kernel_faithful_envelope");
}

TEST_CASE("attention-check writes and reads matrices") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path();
    const auto o_path = (dir / "attnlab_cli_o.bin").string();
    const auto r = run({"attention-check", "--nq", "16", "--nkv", "16", "--d", "4",
                        "--tile-m", "8", "--tile-n", "8", "--skip-grad", "--emit-o", o_path});
    REQUIRE(r.exit_code == 0);
    const auto O = attnlab::read_matrix_binary(o_path);
    CHECK(O.rows == 16);
    CHECK(O.cols == 4);
    fs::remove(o_path);
}

TEST_CASE("schedule-sim compares policies and runs the lock model") {
    const auto naive = run({"schedule-sim", "--policy", "naive", "--mblocks", "12",
                            "--heads", "2", "--batches", "1", "--sms", "4"});
    const auto lpt = run({"schedule-sim", "--policy", "lpt-causal", "--mblocks", "12",
                          "--heads", "2", "--batches", "1", "--sms", "4"});
    REQUIRE(naive.exit_code == 0);
    REQUIRE(lpt.exit_code == 0);
    const double m_naive = nlohmann::json::parse(naive.out).at("makespan").get<double>();
    const double m_lpt = nlohmann::json::parse(lpt.out).at("makespan").get<double>();
    CHECK(m_lpt <= m_naive);

    const auto spt = run({"schedule-sim", "--policy", "spt", "--mblocks", "8", "--heads", "1",
                          "--batches", "1", "--sms", "8", "--lock-sim"});
    REQUIRE(spt.exit_code == 0);
    CHECK(nlohmann::json::parse(spt.out).at("lock_sim").at("first_write_stalls") == 0);

    const auto varlen = run({"schedule-sim", "--policy", "lpt-varlen", "--seqlens",
                             "100,5000,300", "--heads", "1", "--sms", "4"});
    REQUIRE(varlen.exit_code == 0);
    const auto vj = nlohmann::json::parse(varlen.out);
    CHECK(vj.at("virtual_to_actual") == nlohmann::json::array({1, 2, 0}));
}

TEST_CASE("pipeline-sim reports the steady-state rates") {
    const auto fwd = run({"pipeline-sim", "--pass", "fwd", "--tile", "128x128x128",
                          "--exp-fraction", "0"});
    REQUIRE(fwd.exit_code == 0);
    CHECK(nlohmann::json::parse(fwd.out).at("cycles_per_iter").get<double>() ==
          doctest::Approx(1024.0));

    const auto bwd = run({"pipeline-sim", "--pass", "bwd", "--cta", "1"});
    REQUIRE(bwd.exit_code == 0);
    CHECK(nlohmann::json::parse(bwd.out).at("cycles_per_iter").get<double>() ==
          doctest::Approx(3328.0));

    const auto auto_f = run({"pipeline-sim", "--pass", "fwd", "--tile", "128x128x32",
                             "--exp-fraction", "auto", "--no-correction-fma"});
    REQUIRE(auto_f.exit_code == 0);
    const auto j = nlohmann::json::parse(auto_f.out);
    CHECK(j.at("exp_fraction").get<double>() == doctest::Approx(0.53).epsilon(0.02));
    CHECK(j.at("curve").size() == 101);
}

TEST_CASE("pipeline-sim can dump the task graph and validate tmem") {
    namespace fs = std::filesystem;
    const auto dag_path = (fs::temp_directory_path() / "attnlab_dag.json").string();
    const auto r = run({"pipeline-sim", "--pass", "bwd", "--cta", "2", "--validate-tmem",
                        "--dag-out", dag_path});
    REQUIRE(r.exit_code == 0);
    CHECK(nlohmann::json::parse(r.out).at("tmem_plan_ok") == true);
    std::ifstream f(dag_path);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    const auto dag = nlohmann::json::parse(ss.str());
    CHECK(dag.at("nodes").size() > 5);
    fs::remove(dag_path);
}

TEST_CASE("--out writes the payload to a file") {
    namespace fs = std::filesystem;
    const auto path = (fs::temp_directory_path() / "attnlab_roofline.csv").string();
    const auto r = run({"roofline", "--pass", "fwd", "--out", path});
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.empty());
    std::ifstream f(path);
    REQUIRE(f.good());
    std::string line;
    std::getline(f, line);
    CHECK(line == attnlab::roofline::breakdown_csv_header());
    fs::remove(path);
}
