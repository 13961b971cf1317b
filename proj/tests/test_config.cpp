#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "rank_bbm/config.hpp"

using namespace rank_bbm;
using Catch::Matchers::ContainsSubstring;

namespace {

RunConfig resolve_text(Command c, std::string_view text) {
    return resolve_config(c, {{parse_config_text(text), "test.cfg"}});
}

std::filesystem::path scratch() {
    const auto dir = std::filesystem::temp_directory_path() / "rank_bbm_test_config";
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("value syntax") {
    CHECK(parse_config_value("2.5").number == 2.5);
    CHECK(parse_config_value("\"a \\\"b\\\"\"").text == "a \"b\"");
    CHECK(parse_config_value("true").flag);
    const auto l = parse_config_value("[1, [2, 3], \"x\"]");
    REQUIRE(l.items.size() == 3);
    CHECK(l.items[1].items[1].number == 3.0);
    CHECK(parse_config_value("[]").items.empty());
    CHECK_THROWS_AS(parse_config_value("fisher"), ParseError);
    CHECK_THROWS_AS(parse_config_value("[1, 2"), ParseError);
    CHECK_THROWS_AS(parse_config_value("1 2"), ParseError);
    CHECK_THROWS_AS(parse_config_value("inf"), ParseError);
    CHECK_THROWS_AS(parse_config_value("\"open"), ParseError);
}

TEST_CASE("config text: sections, comments, multi-line lists") {
    const auto m = parse_config_text(R"(
# leading comment
psi = "fisher"   # trailing comment
n = 50
[rate]
value = 2
[init]
rho = "gaussian#not a comment"
positions = [
  1, 2,   # inside
  3
]
)");
    CHECK(m.at("psi").text == "fisher");
    CHECK(m.at("n").number == 50.0);
    CHECK(m.at("rate.value").number == 2.0);
    CHECK(m.at("init.rho").text == "gaussian#not a comment");
    CHECK(m.at("init.positions").items.size() == 3);
    CHECK(m.at("init.positions").line == 9);

    CHECK_THROWS_WITH(parse_config_text("n = 1\nn = 2\n"), ContainsSubstring("line 2") && ContainsSubstring("duplicate"));
    CHECK_THROWS_WITH(parse_config_text("n 1\n"), ContainsSubstring("line 1"));
    CHECK_THROWS_WITH(parse_config_text("\n[rate\n"), ContainsSubstring("line 2"));
    CHECK_THROWS_WITH(parse_config_text("x = [1,\n2,\n"), ContainsSubstring("unterminated"));
    CHECK_THROWS_AS(parse_config_text("bad key = 1\n"), ParseError);
}

TEST_CASE("selection keys") {
    CHECK(config_psi(resolve_text(Command::simulate, "psi = \"fisher\"\n")).label() == "fisher");
    const RunConfig u = resolve_text(Command::simulate, "psi.pieces = [[0, 1, 1]]\n");
    CHECK(config_psi(u).at_zero() == 1.0);
    CHECK(config_psi(u).at_one() == 1.0);
    CHECK_FALSE(u.has("psi"));
    CHECK_THROWS_AS(resolve_text(Command::simulate, "psi.pieces = [[0, 1, 2]]\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::simulate, "psi = \"nope\"\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::simulate, "psi = \"fisher\"\npsi.pieces = [[0, 1, 1]]\n"), ValidationError);

    SECTION("psi.file is inlined") {
        const auto path = scratch() / "psi.txt";
        std::ofstream(path) << "# two pieces\npiece 0 0.5 2\npiece 0.5 1 0\n";
        const RunConfig rc = resolve_text(Command::simulate, "psi.file = \"" + path.string() + "\"\n");
        CHECK_FALSE(rc.has("psi.file"));
        CHECK(rc.has("psi.pieces"));
        CHECK(config_psi(rc).zero_tail_fraction() == 0.5);
        CHECK_THROWS_AS(resolve_text(Command::simulate, "psi.file = \"/no/such/file\"\n"), ValidationError);
    }
}

TEST_CASE("unknown keys and type errors carry line numbers") {
    CHECK_THROWS_WITH(resolve_text(Command::simulate, "n = 10\n\nbogus = 1\n"),
                      ContainsSubstring("test.cfg: line 3") && ContainsSubstring("unknown field 'bogus'"));
    CHECK_THROWS_AS(resolve_text(Command::wave, "n = 10\n"), ParseError); // n is not a wave key
    CHECK_THROWS_WITH(resolve_text(Command::simulate, "n = \"ten\"\n"), ContainsSubstring("line 1"));
    CHECK_THROWS_AS(resolve_text(Command::simulate, "n = 2.5\n"), ParseError);
    CHECK_THROWS_AS(resolve_text(Command::simulate, "verify = 1\n"), ParseError);
    CHECK_THROWS_AS(resolve_text(Command::hydro, "n_list = [10, -1]\n"), ParseError);
    CHECK_THROWS_AS(resolve_text(Command::simulate, "psi.pieces = [[0, 1]]\n"), ParseError);
}

TEST_CASE("dependent keys") {
    const RunConfig s = resolve_text(Command::pde, "rate = \"sinusoidal\"\nrate.amplitude = 0.25\n");
    CHECK(s.number("rate.amplitude") == 0.25);
    CHECK(s.number("rate.base") == 1.0);
    CHECK_FALSE(s.has("rate.value"));

    CHECK_THROWS_WITH(resolve_text(Command::simulate, "rate.omega = 2\n"),
                      ContainsSubstring("rate.omega requires rate = \"sinusoidal\""));
    CHECK_THROWS_AS(resolve_text(Command::simulate, "rate = \"piecewise\"\n"), ValidationError); // needs rate.pieces
    CHECK_THROWS_AS(resolve_text(Command::simulate, "rate = \"weird\"\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::simulate, "init = \"point-mass\"\ninit.a = 1\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::simulate, "init = \"step\"\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::hydro, "init = \"positions\"\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::simulate, "init.rho = \"cauchy\"\n"), ValidationError);

    const RunConfig p = resolve_text(Command::simulate, "rate = \"piecewise\"\nrate.pieces = [[0, 2, 1]]\nrate.max = 1\n"
                                                        "horizon = 2\n");
    CHECK(config_rate(p).integral(0.0, 2.0) == 2.0);

    SECTION("a later layer's parent choice drops inherited sub-keys") {
        const RunConfig rc = resolve_config(Command::simulate,
                                            {{parse_config_text("rate = \"constant\"\nrate.value = 3\n"), "file"},
                                             {{{"rate", ConfigValue::of("sinusoidal")}}, "overrides"}});
        CHECK(rc.text("rate") == "sinusoidal");
        CHECK_FALSE(rc.has("rate.value"));
    }
}

TEST_CASE("value validation") {
    CHECK_THROWS_AS(resolve_text(Command::simulate, "n = 1\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::simulate, "horizon = 0\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::pde, "level = 1\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::pde, "x_lo = 5\nx_hi = 1\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::pde, "window = [5, 2]\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::pde, "scheme = \"implicit\"\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::hydro, "t_list = []\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::velocity, "psi = \"fisher\"\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::velocity, "replicas = 1\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::dominate, "sample_times = [0.5, 2]\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::simulate, "leftmost_kill = true\nrate.value = -1\n"), ValidationError);
    CHECK_THROWS_AS(resolve_text(Command::simulate, "command = \"pde\"\n"), ValidationError);
    CHECK_THROWS_AS(command_from_string("fit"), ValidationError);
}

TEST_CASE("defaults") {
    for (const auto& [cmd, name] : command_names()) {
        const RunConfig rc = resolve_config(cmd, {});
        CHECK(rc.text("command") == name);
        CHECK(rc.integer("seed") == 1);
        CHECK(rc.out_dir() == std::filesystem::path("out") / name);
        CHECK(command_from_string(name) == cmd);
    }
    CHECK(resolve_config(Command::simulate, {}).numbers("snapshot_times") == std::vector<double>{0.0, 1.0});
    CHECK(resolve_config(Command::velocity, {}).numbers("window") == std::vector<double>{15.0, 40.0});
    CHECK(resolve_config(Command::pde, {}).numbers("window") == std::vector<double>{10.0, 20.0});
    CHECK(config_psi(resolve_config(Command::split, {})).label() == "split-cloud");
    const VelocityConfig v = config_velocity(resolve_config(Command::velocity, {}));
    CHECK(v.psi.zero_tail_fraction() == 0.6);
    CHECK(v.init.kind == InitialCondition::Kind::point_mass);
}

TEST_CASE("manifest round trip") {
    const RunConfig rc = resolve_text(Command::simulate, R"(
n = 37
seed = 9
psi.pieces = [[0, 0.5, 2], [0.5, 1, 0]]
rate = "sinusoidal"
rate.omega = 0.1
init = "iid"
init.rho = "gaussian"
init.b = 0.5
snapshot_times = [0, 0.3333333333333333, 1]
)");
    const std::string text = manifest_text(rc);
    CHECK(text.rfind("command = \"simulate\"\n", 0) == 0);
    const RunConfig again = resolve_text(Command::simulate, text);
    CHECK(again.values == rc.values);
    CHECK(manifest_text(again) == text);

    const auto dir = scratch() / "manifest";
    write_manifest(rc, dir);
    CHECK(parse_config(dir / "manifest.cfg", Command::simulate).values == rc.values);
    CHECK_THROWS_AS(parse_config(dir / "manifest.cfg", Command::pde), ParseError); // n is not a pde key

    const EngineConfig e = config_engine(rc, 2);
    CHECK(e.n == 37);
    CHECK(e.seed == replica_seed(9, 37, 2));
    CHECK(e.init.iid);
}
