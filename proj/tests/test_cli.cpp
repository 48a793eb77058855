#include "doctest.h"

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "support.hpp"

namespace {

struct Run {
    int code = -1;
    std::string out;
};

// Runs the CLI with stderr folded into stdout.
Run cli(const std::string &args, const std::string &env = {}) {
    const std::string cmd = env + (env.empty() ? "" : " ") + std::string(CTXKMP_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE *p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::array<char, 4096> buf{};
    while (std::size_t n = fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const std::filesystem::path &p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t lines(const std::string &s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("help lists every run config field") {
    const Run r = cli("train --help");
    CHECK(r.code == 0);
    for (const char *flag : {"--components", "--refs", "--lambda", "--l_c", "--l_p", "--K_s", "--K_g", "--pi_sp",
                             "--gamma_sigma", "--gamma_grad", "--dt", "--rate_scaled", "--em_seed", "--sample_seed",
                             "--start_seed", "--max_iters", "--success_radius", "--config"}) {
        CHECK_MESSAGE(r.out.find(flag) != std::string::npos, flag);
    }
    CHECK(r.out.find("[0.5]") != std::string::npos);
    CHECK(cli("--help").code == 0);
}

TEST_CASE("usage and data errors map to exit codes") {
    testing::TempDir dir("cli_err");
    CHECK(cli("").code == 1);
    CHECK(cli("train").code == 1);
    CHECK(cli("frobnicate").code == 1);
    const Run missing = cli("train -d " + (dir.path / "nowhere.json").string());
    CHECK(missing.code == 2);
    CHECK(missing.out.find("nowhere.json") != std::string::npos);
    std::ofstream(dir.path / "bad.json") << "{\"version\": 1}";
    CHECK(cli("train -d " + (dir.path / "bad.json").string()).code == 2);
}

TEST_CASE("generate, train, eval, field and rollout") {
    testing::TempDir dir("cli");
    const std::string d = dir.path.string();
    REQUIRE(cli("generate shapes --shape Angle --demos 3 -o " + d + "/angle.json").code == 0);
    const std::string small = " -N 60 -C 4";

    REQUIRE(cli("train -d " + d + "/angle.json -o " + d + "/a" + small).code == 0);
    REQUIRE(cli("train -d " + d + "/angle.json -o " + d + "/b" + small).code == 0);
    CHECK(slurp(d + "/a/angle.model.json") == slurp(d + "/b/angle.model.json"));
    const auto manifest = nlohmann::json::parse(slurp(d + "/a/angle.manifest.json"));
    CHECK(manifest["config"]["N"] == 60);
    CHECK(manifest.contains("config_hash"));
    CHECK(manifest["seeds"]["em"] == 1);
    CHECK(manifest.contains("jitter"));
    CHECK(manifest["timings"].contains("kmp"));

    // Output directory from the environment.
    REQUIRE(cli("train -d " + d + "/angle.json" + small, "CTXKMP_OUTPUT_DIR=" + d + "/env").code == 0);
    CHECK(std::filesystem::exists(d + "/env/angle.model.json"));

    const std::string model = d + "/a/angle.model.json";
    const Run e1 = cli("eval -m " + model + " -s kmp,full -o " + d + "/r1.csv");
    const Run e2 = cli("eval -m " + model + " -s kmp,full -o " + d + "/r2.csv");
    REQUIRE(e1.code == 0);
    CHECK(lines(slurp(d + "/r1.csv")) == 3);
    CHECK(slurp(d + "/r1.csv") == slurp(d + "/r2.csv"));
    const Run rnd1 = cli("eval -m " + model + " --starts random --random_starts 5 -o " + d + "/q1.csv");
    const Run rnd2 = cli("eval -m " + model + " --starts random --random_starts 5 -o " + d + "/q2.csv");
    CHECK(rnd1.code == 0);
    CHECK(lines(slurp(d + "/q1.csv")) == 5);
    CHECK(slurp(d + "/q1.csv") == slurp(d + "/q2.csv"));
    CHECK(cli("eval -m " + model + " -s kmp,teleport").code == 1);

    REQUIRE(cli("field -m " + model + " -o " + d + "/full").code == 0);
    REQUIRE(cli("field -m " + model + " --strategy kmp -o " + d + "/kmp").code == 0);
    CHECK(lines(slurp(d + "/full.csv")) == 2501);
    CHECK(slurp(d + "/full.csv") != slurp(d + "/kmp.csv"));
    CHECK(nlohmann::json::parse(slurp(d + "/full.json"))["points"].size() == 2500);

    const Run roll = cli("rollout -m " + model + " --rate_scaled false -o " + d + "/trace.csv");
    CHECK(roll.code == 0);
    CHECK(slurp(d + "/trace.csv").rfind("iteration,s0,s1,v0,v1", 0) == 0);
}

TEST_CASE("context models demand a context for fields") {
    testing::TempDir dir("cli_ctx");
    const std::string d = dir.path.string();
    REQUIRE(cli("generate letters --demos 1 -o " + d + "/letters.json").code == 0);
    REQUIRE(cli("train -d " + d + "/letters.json -o " + d + " -N 60 -C 4").code == 0);
    const auto manifest = nlohmann::json::parse(slurp(d + "/letters.manifest.json"));
    CHECK(manifest["config"]["l_c"] == 0.06);
    const Run r = cli("field -m " + d + "/letters.model.json -o " + d + "/f");
    CHECK(r.code == 1);
    CHECK(r.out.find("--context") != std::string::npos);
    CHECK(cli("field -m " + d + "/letters.model.json --context 1,1 -o " + d + "/f").code == 0);
}

TEST_CASE("config file and flag precedence") {
    testing::TempDir dir("cli_cfg");
    const std::string d = dir.path.string();
    REQUIRE(cli("generate shapes --shape Sine --demos 2 -o " + d + "/s.json").code == 0);
    std::ofstream(d + "/cfg.json") << R"({"N": 50, "C": 3, "lambda": 0.7})";
    REQUIRE(cli("train -d " + d + "/s.json -o " + d + " --config " + d + "/cfg.json --lambda 0.9").code == 0);
    const auto manifest = nlohmann::json::parse(slurp(d + "/s.manifest.json"));
    CHECK(manifest["config"]["N"] == 50);
    CHECK(manifest["config"]["lambda"] == 0.9);
    std::ofstream(d + "/typo.json") << R"({"lamda": 0.7})";
    CHECK(cli("train -d " + d + "/s.json -o " + d + " --config " + d + "/typo.json").code == 2);
    CHECK(cli("train -d " + d + "/s.json -o " + d + " --pi_sp 1.5").code == 1);
}

TEST_CASE("serve rejects an invalid config before binding") {
    CHECK(cli("serve --pi_sp 2 --port 0").code == 1);
}
