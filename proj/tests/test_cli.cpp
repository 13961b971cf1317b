#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "rank_bbm/config.hpp"

namespace fs = std::filesystem;
using namespace rank_bbm;
using Catch::Matchers::ContainsSubstring;

namespace {

struct Run {
    int status = -1;
    std::string output;
};

Run cli(const std::string& args) {
    const std::string cmd = std::string(RANK_BBM_CLI) + " " + args + " 2>&1";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    Run r;
    char buf[4096];
    while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
    const int raw = ::pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::path(RANK_BBM_SCRATCH) / name;
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string header(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    return line;
}

} // namespace

TEST_CASE("usage and exit codes") {
    const Run help = cli("--help");
    CHECK(help.status == 0);
    CHECK_THAT(help.output, ContainsSubstring("velocity"));
    const Run sub = cli("velocity --help");
    CHECK(sub.status == 0);
    CHECK_THAT(sub.output, ContainsSubstring("--config"));

    CHECK(cli("").status == 1);
    CHECK(cli("fit").status == 1);
    CHECK(cli("simulate --bogus").status == 1);
    CHECK(cli("simulate -c /no/such.cfg").status == 1);

    const Run invalid = cli("simulate --n 1 --out " + scratch("invalid").string());
    CHECK(invalid.status == 1);
    CHECK_THAT(invalid.output, ContainsSubstring("n must be >= 2"));
    const Run unknown = cli("simulate --set bogus=1 --out " + scratch("unknown").string());
    CHECK(unknown.status == 1);
    CHECK_THAT(unknown.output, ContainsSubstring("unknown field 'bogus'"));

    const Run no_wave = cli("wave --set c=1 --out " + scratch("wave-c1").string());
    CHECK(no_wave.status == 2);
    CHECK_THAT(no_wave.output, ContainsSubstring("NoConnection"));
}

TEST_CASE("pde prints the fitted front speed") {
    const fs::path out = scratch("pde");
    const Run r = cli("pde --preset fisher --T 20 --out " + out.string());
    REQUIRE(r.status == 0);
    CHECK(header(out / "pde.csv") == "t,x,u");

    const RunConfig rc = resolve_config(Command::pde, {{{{"psi", ConfigValue::of("fisher")},
                                                         {"horizon", ConfigValue::of(20.0)}},
                                                        "test"}});
    const auto w = rc.numbers("window");
    const SpeedFit fit = estimate_spreading_speed(solve(config_pde(rc)), rc.number("level"), w[0], w[1]);
    char expected[64];
    std::snprintf(expected, sizeof expected, "): %.6f", fit.speed);
    CHECK_THAT(r.output, ContainsSubstring(std::string("front speed (level 0.5, t in [10, 20]") + expected));
    CHECK(slurp(out / "manifest.cfg") == manifest_text([&] {
              RunConfig m = rc;
              m.values["out"] = ConfigValue::of(out.string());
              return m;
          }()));
}

TEST_CASE("a manifest reproduces its run") {
    const fs::path a = scratch("manifest-a");
    const fs::path b = scratch("manifest-b");
    REQUIRE(cli("simulate --n 60 --T 2 --seed 11 --replicas 2 --set 'psi=cubic(0.5)' --out " + a.string()).status == 0);
    REQUIRE(cli("simulate -c " + (a / "manifest.cfg").string() + " --out " + b.string()).status == 0);
    for (const char* f : {"replica-0/snapshots.csv", "replica-0/events.csv", "replica-1/snapshots.csv"}) {
        const std::string x = slurp(a / f);
        CHECK(!x.empty());
        CHECK(x == slurp(b / f));
    }
    CHECK(header(a / "replica-0/snapshots.csv") == "t,particle_index,x");
    CHECK(header(a / "replica-0/events.csv") == "m,t_m,i,j");
    CHECK(slurp(a / "replica-0/snapshots.csv") != slurp(a / "replica-1/snapshots.csv"));
}

TEST_CASE("every command writes its csv") {
    struct Case {
        std::string args;
        std::string file;
        std::string header;
    };
    const std::vector<Case> cases{
        {"wave --preset split-cloud --set z_span=80", "wave.csv", "z,w"},
        {"hydro --set n_list=[50,100] --replicas 2 --set dx=0.05", "hydro.csv", "n,t,ks_mean,ks_stderr,replicas"},
        {"velocity --n 16 --T 4 --replicas 2", "velocity.csv", "n,v_min,v_max,ci,window"},
        {"split --n 400 --T 12 --replicas 2", "split.csv", "replica,right_fraction"},
        {"dominate --n 20 --replicas 3", "domination.csv", "t,pop_mean,pop_expected"},
    };
    for (const auto& c : cases) {
        INFO(c.args);
        const fs::path out = scratch(c.file);
        const Run r = cli(c.args + " --out " + out.string());
        INFO(r.output);
        REQUIRE(r.status == 0);
        CHECK(header(out / c.file) == c.header);
        CHECK(fs::exists(out / "manifest.cfg"));
        CHECK_THAT(r.output, ContainsSubstring("outputs in"));
    }
}

TEST_CASE("bundled configs resolve") {
    for (const auto& entry : fs::directory_iterator(RANK_BBM_CONFIGS)) {
        if (entry.path().extension() != ".cfg") continue;
        INFO(entry.path());
        const ConfigMap m = parse_config_file(entry.path());
        REQUIRE(m.contains("command"));
        const Command c = command_from_string(m.at("command").text);
        CHECK_NOTHROW(parse_config(entry.path(), c));
    }
}
