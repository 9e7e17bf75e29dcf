#include <doctest.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct Scratch {
    fs::path dir;
    Scratch() {
        dir = fs::temp_directory_path() / ("scl_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }

    std::string config(const std::string& name, const Json& j) const {
        const auto f = dir / name;
        std::ofstream(f) << j.dump();
        return f.string();
    }
    std::string out(const std::string& name) const { return (dir / name).string(); }
};

int run(const std::string& args) {
    const std::string cmd = std::string(SCL_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& file) {
    std::ifstream is(file);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Json read_json(const std::string& file) { return Json::parse(slurp(file)); }

}  // namespace

TEST_CASE("usage errors exit with 2") {
    Scratch s;
    const auto small = s.config("small.json", {{"problem", {{"kind", "example33"}}}, {"paths", 10}});
    CHECK(run("check --config " + small) == 2);
    CHECK(run("reproduce no-such-example --out " + s.out("r")) == 2);
    CHECK(run("check --config " + s.out("missing.json")) == 2);
    const auto ok = s.config("ok.json", {{"problem", {{"kind", "example33"}}}, {"paths", 200}, {"steps", 32}});
    CHECK(run("check --config " + ok + " --steps 4") == 2);
    CHECK(run("reproduce counterexample-osc --paths 10 --out " + s.out("r")) == 2);
}

TEST_CASE("validate writes a passing report") {
    Scratch s;
    const auto cfg = s.config("c.json", {{"problem", {{"kind", "sine"}}}, {"paths", 200}, {"steps", 32}});
    REQUIRE(run("validate --config " + cfg + " --out " + s.out("v")) == 0);
    const auto j = read_json(s.out("v") + "/validate.json");
    CHECK(j["kind"] == "validate");
    CHECK(j["result"]["pass"] == true);
}

TEST_CASE("check on the two examples") {
    Scratch s;
    SUBCASE("example 3.3 is flagged") {
        const auto cfg = s.config("c33.json", {{"problem", {{"kind", "example33"}}},
                                               {"paths", 400},
                                               {"steps", 128},
                                               {"tau_count", 4},
                                               {"out", s.out("c33")}});
        REQUIRE(run("check --config " + cfg) == 0);
        const auto j = read_json(s.out("c33") + "/check.json");
        CHECK(j["result"]["global_verdict"] == "violated");
        CHECK(j["result"]["singularity"]["verdict"] == "singular");
        CHECK(j["result"]["condition"]["config_echo"]["paths"] == 400);
        CHECK_FALSE(j.contains("timings"));
        CHECK(fs::exists(s.out("c33") + "/cells.csv"));
    }
    SUBCASE("example 3.4 passes") {
        const auto cfg = s.config("c34.json", {{"problem", {{"kind", "example34"}}},
                                               {"paths", 400},
                                               {"steps", 128},
                                               {"tau_count", 4},
                                               {"form", "malliavin"},
                                               {"out", s.out("c34")}});
        REQUIRE(run("check --config " + cfg) == 0);
        const auto j = read_json(s.out("c34") + "/check.json");
        CHECK(j["result"]["global_verdict"] == "satisfied");
        CHECK(j["result"]["condition"]["condition"] == "malliavin");
    }
}

TEST_CASE("reruns are byte-identical and timings are opt-in") {
    Scratch s;
    const auto cfg = s.config("c.json", {{"problem", {{"kind", "example33"}}}, {"paths", 300}, {"steps", 128},
                                         {"seed", 9}, {"tau_count", 2}});
    // The output directory is part of the echo, so both runs write to the same place.
    REQUIRE(run("check --config " + cfg + " --out " + s.out("a")) == 0);
    const std::string first = slurp(s.out("a") + "/check.json");
    REQUIRE(run("check --config " + cfg + " --out " + s.out("a")) == 0);
    CHECK(first == slurp(s.out("a") + "/check.json"));
    REQUIRE(run("check --config " + cfg + " --timings --out " + s.out("t")) == 0);
    CHECK(read_json(s.out("t") + "/check.json").contains("timings"));
}

TEST_CASE("reproduce a counterexample") {
    Scratch s;
    REQUIRE(run("reproduce counterexample-osc --out " + s.out("r")) == 0);
    const auto j = read_json(s.out("r") + "/reproduce_counterexample-osc.json");
    CHECK(j["result"]["pass"] == true);
    CHECK(j["config_echo"]["reproduce"] == "counterexample-osc");
    CHECK(fs::exists(s.out("r") + "/osc_half_previous.csv"));
}
