#pragma once

/// @file config.hpp
/// @brief Run configuration files: a small `key = value` format with sections, lists and comments.
///
///     # comment
///     seed = 7
///     psi = "fisher"            # or psi.pieces = [[0, 1, 2, -2]]
///     [init]
///     rho = "uniform"           # same as init.rho = "uniform"
///     a = -1
///
/// Values are numbers, "strings", true/false, or [lists] (which may span lines). Unknown keys are
/// errors. A resolved configuration expands every default and serializes back to the same format
/// (the run manifest).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rank_bbm/errors.hpp"
#include "rank_bbm/experiments.hpp"
#include "rank_bbm/io.hpp"
#include "rank_bbm/particle_engine.hpp"
#include "rank_bbm/pde_solver.hpp"
#include "rank_bbm/selection.hpp"

namespace rank_bbm {

struct ConfigValue {
    enum class Kind { number, string, boolean, list };

    Kind kind = Kind::number;
    double number = 0.0;
    std::string text;
    bool flag = false;
    std::vector<ConfigValue> items;
    int line = 0; ///< source line, 0 for defaults and overrides

    static ConfigValue of(double x) { return {Kind::number, x, {}, false, {}, 0}; }
    static ConfigValue of(std::string s) { return {Kind::string, 0.0, std::move(s), false, {}, 0}; }
    static ConfigValue of(const char* s) { return of(std::string(s)); }
    static ConfigValue of(bool b) { return {Kind::boolean, 0.0, {}, b, {}, 0}; }
    static ConfigValue list(std::vector<ConfigValue> xs) { return {Kind::list, 0.0, {}, false, std::move(xs), 0}; }
    static ConfigValue numbers(const std::vector<double>& xs) {
        std::vector<ConfigValue> v;
        for (double x : xs) v.push_back(of(x));
        return list(std::move(v));
    }

    bool operator==(const ConfigValue& o) const {
        return kind == o.kind && number == o.number && text == o.text && flag == o.flag && items == o.items;
    }
};

using ConfigMap = std::map<std::string, ConfigValue>;

namespace detail {

class ValueParser {
public:
    ValueParser(std::string_view src, int line) : s_(src), line_(line) {}

    ConfigValue parse_all() {
        ConfigValue v = parse();
        skip_ws();
        if (pos_ != s_.size()) fail("trailing characters after value");
        return v;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError("line " + std::to_string(line_) + ": " + msg);
    }

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' || s_[pos_] == '\r'))
            ++pos_;
    }

    ConfigValue parse() {
        skip_ws();
        if (pos_ >= s_.size()) fail("missing value");
        ConfigValue v;
        const char c = s_[pos_];
        if (c == '[') {
            ++pos_;
            v.kind = ConfigValue::Kind::list;
            skip_ws();
            if (pos_ < s_.size() && s_[pos_] == ']') {
                ++pos_;
            } else {
                while (true) {
                    v.items.push_back(parse());
                    skip_ws();
                    if (pos_ >= s_.size()) fail("unterminated list");
                    if (s_[pos_] == ',') {
                        ++pos_;
                        continue;
                    }
                    if (s_[pos_] == ']') {
                        ++pos_;
                        break;
                    }
                    fail("expected ',' or ']' in list");
                }
            }
        } else if (c == '"') {
            ++pos_;
            v.kind = ConfigValue::Kind::string;
            while (true) {
                if (pos_ >= s_.size()) fail("unterminated string");
                const char d = s_[pos_++];
                if (d == '"') break;
                if (d == '\\') {
                    if (pos_ >= s_.size()) fail("unterminated escape");
                    v.text += s_[pos_++];
                } else {
                    v.text += d;
                }
            }
        } else {
            std::size_t end = pos_;
            while (end < s_.size() && s_[end] != ',' && s_[end] != ']' && s_[end] != ' ' && s_[end] != '\t' &&
                   s_[end] != '\n' && s_[end] != '\r')
                ++end;
            const std::string word(s_.substr(pos_, end - pos_));
            pos_ = end;
            if (word == "true" || word == "false") {
                v.kind = ConfigValue::Kind::boolean;
                v.flag = word == "true";
            } else {
                v.kind = ConfigValue::Kind::number;
                std::size_t used = 0;
                try {
                    v.number = std::stod(word, &used);
                } catch (const std::exception&) {
                    used = 0;
                }
                if (used != word.size() || word.empty())
                    fail("cannot read '" + word + "' (strings must be quoted)");
                if (!std::isfinite(v.number)) fail("non-finite number '" + word + "'");
            }
        }
        v.line = line_;
        return v;
    }

    std::string_view s_;
    std::size_t pos_ = 0;
    int line_;
};

inline std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\\' && in_string) {
            ++i;
        } else if (line[i] == '"') {
            in_string = !in_string;
        } else if (line[i] == '#' && !in_string) {
            return line.substr(0, i);
        }
    }
    return line;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline int bracket_depth(std::string_view s) {
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && in_string) {
            ++i;
        } else if (s[i] == '"') {
            in_string = !in_string;
        } else if (!in_string) {
            depth += s[i] == '[' ? 1 : (s[i] == ']' ? -1 : 0);
        }
    }
    return depth;
}

inline bool valid_key(std::string_view k) {
    if (k.empty() || k.front() == '.' || k.back() == '.') return false;
    return std::all_of(k.begin(), k.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    });
}

} // namespace detail

/// Parses one value as written on the right of `=`.
inline ConfigValue parse_config_value(std::string_view text, int line = 0) {
    return detail::ValueParser(text, line).parse_all();
}

/// Parses configuration text into dotted keys. Throws ParseError with the line number.
inline ConfigMap parse_config_text(std::string_view text) {
    ConfigMap out;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::string section;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = detail::trim(detail::strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[' && line.find('=') == std::string::npos) {
            if (line.back() != ']') throw ParseError("line " + std::to_string(lineno) + ": malformed section header");
            section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
            if (!section.empty() && !detail::valid_key(section))
                throw ParseError("line " + std::to_string(lineno) + ": bad section name '" + section + "'");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key_part = detail::trim(std::string_view(line).substr(0, eq));
        if (!detail::valid_key(key_part))
            throw ParseError("line " + std::to_string(lineno) + ": bad key '" + key_part + "'");
        const std::string key = section.empty() ? key_part : section + "." + key_part;
        std::string value = line.substr(eq + 1);
        const int start = lineno;
        while (detail::bracket_depth(value) > 0) {
            if (!std::getline(in, raw)) throw ParseError("line " + std::to_string(start) + ": unterminated list");
            ++lineno;
            value += '\n' + detail::strip_comment(raw);
        }
        if (out.contains(key)) throw ParseError("line " + std::to_string(start) + ": duplicate key '" + key + "'");
        out[key] = parse_config_value(value, start);
    }
    return out;
}

inline ConfigMap parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        ConfigMap m = parse_config_text(ss.str());
        // Relative psi.file paths are taken relative to the config file.
        if (const auto it = m.find("psi.file"); it != m.end() && it->second.kind == ConfigValue::Kind::string) {
            const std::filesystem::path f = it->second.text;
            if (f.is_relative()) it->second.text = (path.parent_path() / f).lexically_normal().string();
        }
        return m;
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + std::string(e.what()).substr(std::string("ParseError: ").size()));
    }
}

inline std::string to_config_string(const ConfigValue& v) {
    switch (v.kind) {
    case ConfigValue::Kind::number: return format_double(v.number);
    case ConfigValue::Kind::boolean: return v.flag ? "true" : "false";
    case ConfigValue::Kind::string: {
        std::string s = "\"";
        for (char c : v.text) {
            if (c == '"' || c == '\\') s += '\\';
            s += c;
        }
        return s + '"';
    }
    case ConfigValue::Kind::list: {
        std::string s = "[";
        for (std::size_t k = 0; k < v.items.size(); ++k) {
            if (k) s += ", ";
            s += to_config_string(v.items[k]);
        }
        return s + "]";
    }
    }
    return {};
}

// ---------------------------------------------------------------------------------------------
// Commands and resolution

enum class Command { simulate, pde, wave, hydro, velocity, split, dominate };

inline const std::vector<std::pair<Command, std::string>>& command_names() {
    static const std::vector<std::pair<Command, std::string>> names{
        {Command::simulate, "simulate"}, {Command::pde, "pde"},     {Command::wave, "wave"},
        {Command::hydro, "hydro"},       {Command::velocity, "velocity"}, {Command::split, "split"},
        {Command::dominate, "dominate"}};
    return names;
}

inline std::string to_string(Command c) {
    for (const auto& [k, n] : command_names())
        if (k == c) return n;
    return "?";
}

inline Command command_from_string(std::string_view s) {
    for (const auto& [k, n] : command_names())
        if (n == s) return k;
    throw ValidationError("unknown command '" + std::string(s) + "'");
}

/// A fully resolved configuration: every key the command reads, defaults expanded.
struct RunConfig {
    Command command = Command::simulate;
    ConfigMap values;

    [[nodiscard]] const ConfigValue& at(const std::string& key) const {
        const auto it = values.find(key);
        if (it == values.end()) throw ValidationError("missing key '" + key + "'");
        return it->second;
    }
    [[nodiscard]] bool has(const std::string& key) const { return values.contains(key); }
    [[nodiscard]] double number(const std::string& key) const { return at(key).number; }
    [[nodiscard]] std::uint64_t integer(const std::string& key) const {
        return static_cast<std::uint64_t>(at(key).number);
    }
    [[nodiscard]] const std::string& text(const std::string& key) const { return at(key).text; }
    [[nodiscard]] bool flag(const std::string& key) const { return at(key).flag; }
    [[nodiscard]] std::vector<double> numbers(const std::string& key) const {
        std::vector<double> out;
        for (const auto& v : at(key).items) out.push_back(v.number);
        return out;
    }
    [[nodiscard]] std::vector<std::size_t> integers(const std::string& key) const {
        std::vector<std::size_t> out;
        for (const auto& v : at(key).items) out.push_back(static_cast<std::size_t>(v.number));
        return out;
    }

    [[nodiscard]] std::filesystem::path out_dir() const { return text("out"); }
};

namespace detail {

enum class Type { number, integer, string, boolean, numbers, integers, pieces };

struct KeyInfo {
    Type type;
    std::set<Command> commands;
};

inline const std::set<Command>& all_commands() {
    static const std::set<Command> all{Command::simulate, Command::pde,   Command::wave,    Command::hydro,
                                       Command::velocity, Command::split, Command::dominate};
    return all;
}

/// Every key any command accepts.
inline const std::map<std::string, KeyInfo>& key_table() {
    using C = Command;
    static const std::set<C> particles{C::simulate, C::hydro, C::velocity, C::split, C::dominate};
    static const std::set<C> with_rate{C::simulate, C::pde, C::hydro, C::dominate};
    static const std::set<C> with_init{C::simulate, C::pde, C::hydro, C::velocity, C::split, C::dominate};
    static const std::map<std::string, KeyInfo> table{
        {"command", {Type::string, all_commands()}},
        {"seed", {Type::integer, all_commands()}},
        {"out", {Type::string, all_commands()}},
        {"psi", {Type::string, all_commands()}},
        {"psi.pieces", {Type::pieces, all_commands()}},
        {"psi.file", {Type::string, all_commands()}},
        {"rate", {Type::string, with_rate}},
        {"rate.value", {Type::number, with_rate}},
        {"rate.base", {Type::number, with_rate}},
        {"rate.amplitude", {Type::number, with_rate}},
        {"rate.omega", {Type::number, with_rate}},
        {"rate.phase", {Type::number, with_rate}},
        {"rate.pieces", {Type::pieces, with_rate}},
        {"rate.max", {Type::number, with_rate}},
        {"init", {Type::string, with_init}},
        {"init.rho", {Type::string, with_init}},
        {"init.a", {Type::number, with_init}},
        {"init.b", {Type::number, with_init}},
        {"init.x0", {Type::number, with_init}},
        {"init.positions", {Type::numbers, {C::simulate}}},
        {"n", {Type::integer, {C::simulate, C::split, C::dominate}}},
        {"n_list", {Type::integers, {C::hydro, C::velocity}}},
        {"horizon", {Type::number, {C::simulate, C::pde, C::velocity, C::split, C::dominate}}},
        {"replicas", {Type::integer, particles}},
        {"leftmost_kill", {Type::boolean, {C::simulate}}},
        {"snapshot_times", {Type::numbers, {C::simulate}}},
        {"record_events", {Type::boolean, {C::simulate}}},
        {"verify", {Type::boolean, {C::simulate}}},
        {"pure_branching", {Type::boolean, {C::pde}}},
        {"x_lo", {Type::number, {C::pde}}},
        {"x_hi", {Type::number, {C::pde}}},
        {"dx", {Type::number, {C::pde, C::hydro}}},
        {"dt", {Type::number, {C::pde}}},
        {"scheme", {Type::string, {C::pde}}},
        {"output_dt", {Type::number, {C::pde}}},
        {"csv_dt", {Type::number, {C::pde}}},
        {"level", {Type::number, {C::pde}}},
        {"window", {Type::numbers, {C::pde, C::velocity}}},
        {"bc_left", {Type::number, {C::pde}}},
        {"bc_right", {Type::number, {C::pde}}},
        {"boundary_guard", {Type::boolean, {C::pde}}},
        {"c", {Type::number, {C::wave}}},
        {"z_span", {Type::number, {C::wave}}},
        {"dz", {Type::number, {C::wave}}},
        {"t_list", {Type::numbers, {C::hydro}}},
        {"snapshot_dt", {Type::number, {C::velocity}}},
        {"min_gap", {Type::number, {C::split}}},
        {"sample_times", {Type::numbers, {C::dominate}}},
        {"population_cap", {Type::integer, {C::dominate}}},
    };
    return table;
}

inline ConfigValue num(double x) { return ConfigValue::of(x); }
inline ConfigValue str(const char* s) { return ConfigValue::of(s); }

/// Command defaults that do not depend on other keys.
inline ConfigMap defaults(Command c) {
    using C = Command;
    ConfigMap m;
    m["command"] = ConfigValue::of(to_string(c));
    m["seed"] = num(1);
    m["out"] = ConfigValue::of("out/" + to_string(c));
    switch (c) {
    case C::velocity:
        m["psi.pieces"] = ConfigValue::list({ConfigValue::numbers({0.0, 0.4, 2.5}), ConfigValue::numbers({0.4, 1.0, 0.0})});
        break;
    case C::split: m["psi"] = str("split-cloud"); break;
    default: m["psi"] = str("fisher"); break;
    }
    if (key_table().at("rate").commands.contains(c)) m["rate"] = str("constant");
    switch (c) {
    case C::simulate:
        m["n"] = num(100);
        m["horizon"] = num(1);
        m["replicas"] = num(1);
        m["leftmost_kill"] = ConfigValue::of(false);
        m["record_events"] = ConfigValue::of(true);
        m["verify"] = ConfigValue::of(false);
        m["init"] = str("quantiles");
        break;
    case C::pde:
        m["horizon"] = num(20);
        m["pure_branching"] = ConfigValue::of(false);
        m["x_lo"] = num(-10);
        m["x_hi"] = num(45);
        m["dx"] = num(0.02);
        m["dt"] = num(0);
        m["scheme"] = str("explicit");
        m["output_dt"] = num(0.1);
        m["csv_dt"] = num(1);
        m["level"] = num(0.5);
        m["bc_left"] = num(1);
        m["bc_right"] = num(0);
        m["boundary_guard"] = ConfigValue::of(true);
        m["init"] = str("step");
        break;
    case C::wave:
        m["c"] = num(2);
        m["z_span"] = num(60);
        m["dz"] = num(0.005);
        break;
    case C::hydro:
        m["n_list"] = ConfigValue::numbers({250, 1000, 4000});
        m["t_list"] = ConfigValue::numbers({1});
        m["replicas"] = num(20);
        m["dx"] = num(0.01);
        m["init"] = str("quantiles");
        break;
    case C::velocity:
        m["n_list"] = ConfigValue::numbers({64, 256, 1024, 4096});
        m["horizon"] = num(40);
        m["snapshot_dt"] = num(0.25);
        m["replicas"] = num(8);
        m["init"] = str("point-mass");
        break;
    case C::split:
        m["n"] = num(2000);
        m["horizon"] = num(15);
        m["replicas"] = num(10);
        m["min_gap"] = num(5);
        m["init"] = str("quantiles");
        break;
    case C::dominate:
        m["n"] = num(500);
        m["horizon"] = num(1);
        m["replicas"] = num(100);
        m["population_cap"] = num(static_cast<double>(kColouredPopulationCap));
        m["init"] = str("quantiles");
        break;
    }
    return m;
}

inline std::string where(const ConfigValue& v) {
    return v.line > 0 ? "line " + std::to_string(v.line) + ": " : "";
}

inline void check_type(const std::string& key, const ConfigValue& v, Type t) {
    const auto bad = [&](const char* expected) {
        throw ParseError(where(v) + "field '" + key + "' expects " + expected);
    };
    const auto is_int = [](const ConfigValue& x) {
        return x.kind == ConfigValue::Kind::number && x.number >= 0.0 && x.number == std::floor(x.number) &&
               x.number < 1.8e19;
    };
    switch (t) {
    case Type::number:
        if (v.kind != ConfigValue::Kind::number) bad("a number");
        break;
    case Type::integer:
        if (!is_int(v)) bad("a non-negative integer");
        break;
    case Type::string:
        if (v.kind != ConfigValue::Kind::string) bad("a quoted string");
        break;
    case Type::boolean:
        if (v.kind != ConfigValue::Kind::boolean) bad("true or false");
        break;
    case Type::numbers:
        if (v.kind != ConfigValue::Kind::list) bad("a list of numbers");
        for (const auto& x : v.items)
            if (x.kind != ConfigValue::Kind::number) bad("a list of numbers");
        break;
    case Type::integers:
        if (v.kind != ConfigValue::Kind::list) bad("a list of integers");
        for (const auto& x : v.items)
            if (!is_int(x)) bad("a list of integers");
        break;
    case Type::pieces:
        if (v.kind != ConfigValue::Kind::list || v.items.empty()) bad("a list of [lo, hi, c0, c1, ...] pieces");
        for (const auto& p : v.items) {
            if (p.kind != ConfigValue::Kind::list || p.items.size() < 3) bad("a list of [lo, hi, c0, c1, ...] pieces");
            for (const auto& x : p.items)
                if (x.kind != ConfigValue::Kind::number) bad("numeric piece entries");
        }
        break;
    }
}

inline std::vector<PiecewisePolynomial::Piece> to_pieces(const ConfigValue& v) {
    std::vector<PiecewisePolynomial::Piece> out;
    for (const auto& p : v.items) {
        std::vector<double> coeffs;
        for (std::size_t k = 2; k < p.items.size(); ++k) coeffs.push_back(p.items[k].number);
        out.push_back({p.items[0].number, p.items[1].number, Polynomial(std::move(coeffs))});
    }
    return out;
}

inline ConfigValue from_pieces(std::span<const PiecewisePolynomial::Piece> pieces) {
    std::vector<ConfigValue> out;
    for (const auto& p : pieces) {
        std::vector<double> row{p.lo, p.hi};
        if (p.poly.coeffs().empty()) row.push_back(0.0);
        for (double c : p.poly.coeffs()) row.push_back(c);
        out.push_back(ConfigValue::numbers(row));
    }
    return ConfigValue::list(std::move(out));
}

/// Sub-keys that only make sense for one choice of their parent key.
struct Dependent {
    std::string parent;
    std::vector<std::pair<std::string, std::vector<std::string>>> by_choice; ///< choice -> allowed sub-keys
};

inline const std::vector<Dependent>& dependents() {
    static const std::vector<Dependent> deps{
        {"rate",
         {{"constant", {"rate.value"}},
          {"sinusoidal", {"rate.base", "rate.amplitude", "rate.omega", "rate.phase"}},
          {"piecewise", {"rate.pieces", "rate.max"}}}},
        {"init",
         {{"quantiles", {"init.rho", "init.a", "init.b"}},
          {"iid", {"init.rho", "init.a", "init.b"}},
          {"point-mass", {"init.x0"}},
          {"step", {"init.x0"}},
          {"positions", {"init.positions"}}}},
    };
    return deps;
}

} // namespace detail

/// One layer of settings: a parsed file or command-line overrides. Later layers win.
struct ConfigLayer {
    ConfigMap values;
    std::string origin; ///< shown in error messages
};

/// Merges layers over the command defaults, checks keys and types, fills dependent defaults and
/// validates the result by building every object the command needs.
inline RunConfig resolve_config(Command command, const std::vector<ConfigLayer>& layers);

inline RunConfig parse_config(const std::filesystem::path& path, Command command) {
    return resolve_config(command, {{parse_config_file(path), path.string()}});
}

/// Manifest text: `key = value` lines in key order, `command` first.
inline std::string manifest_text(const RunConfig& rc) {
    std::string out = "command = " + to_config_string(rc.at("command")) + "\n";
    for (const auto& [k, v] : rc.values)
        if (k != "command") out += k + " = " + to_config_string(v) + "\n";
    return out;
}

inline void write_manifest(const RunConfig& rc, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "manifest.cfg");
    if (!out) throw IoError("cannot write " + (dir / "manifest.cfg").string());
    out << manifest_text(rc);
}

// ---------------------------------------------------------------------------------------------
// Typed views

inline SelectionPsi config_psi(const RunConfig& rc) {
    if (rc.has("psi.pieces")) return SelectionPsi(detail::to_pieces(rc.at("psi.pieces")), "custom");
    return preset(rc.text("psi"));
}

inline BranchingRate config_rate(const RunConfig& rc) {
    if (!rc.has("rate")) return BranchingRate::constant(1.0);
    const std::string& kind = rc.text("rate");
    if (kind == "constant") return BranchingRate::constant(rc.number("rate.value"));
    if (kind == "sinusoidal")
        return BranchingRate::sinusoidal(rc.number("rate.base"), rc.number("rate.amplitude"), rc.number("rate.omega"),
                                         rc.number("rate.phase"));
    return BranchingRate::piecewise(PiecewisePolynomial(detail::to_pieces(rc.at("rate.pieces"))), rc.number("rate.max"));
}

inline Density config_density(const RunConfig& rc) {
    const std::string& rho = rc.text("init.rho");
    const double a = rc.number("init.a");
    const double b = rc.number("init.b");
    Density d;
    if (rho == "uniform") d = Density::uniform(a, b);
    else if (rho == "gaussian") d = Density::gaussian(a, b);
    else d = Density::exponential_tail(a, b);
    d.validate();
    return d;
}

inline InitialCondition config_init(const RunConfig& rc) {
    const std::string& kind = rc.text("init");
    if (kind == "quantiles" || kind == "iid") {
        InitialCondition ic = InitialCondition::quantiles(config_density(rc));
        ic.iid = kind == "iid";
        return ic;
    }
    if (kind == "point-mass" || kind == "step") return InitialCondition::point_mass(rc.number("init.x0"));
    return InitialCondition::explicit_positions(rc.numbers("init.positions"));
}

/// Engine configuration for replica `replica` (seeded from the master seed).
inline EngineConfig config_engine(const RunConfig& rc, std::size_t replica = 0) {
    EngineConfig e;
    e.n = rc.integer("n");
    if (rc.flag("leftmost_kill")) e.selection = LeftmostKill{};
    else e.selection = config_psi(rc);
    e.rate = config_rate(rc);
    e.horizon = rc.number("horizon");
    e.init = config_init(rc);
    e.seed = replica_seed(rc.integer("seed"), e.n, replica);
    e.snapshot_times = rc.numbers("snapshot_times");
    e.record_events = rc.flag("record_events");
    e.verify = rc.flag("verify");
    return e;
}

inline std::vector<double> pde_output_times(const RunConfig& rc) {
    const double horizon = rc.number("horizon");
    const double step = rc.number("output_dt");
    std::vector<double> out;
    const auto count = static_cast<std::size_t>(std::floor(horizon / step + 1e-9));
    for (std::size_t k = 0; k <= count; ++k) out.push_back(static_cast<double>(k) * step);
    if (horizon - out.back() > 1e-9) out.push_back(horizon);
    return out;
}

inline PdeConfig config_pde(const RunConfig& rc) {
    PdeConfig p;
    if (rc.flag("pure_branching")) p.reaction = PureBranching{};
    else p.reaction = g_from_psi(config_psi(rc));
    p.rate = config_rate(rc);
    p.x_lo = rc.number("x_lo");
    p.x_hi = rc.number("x_hi");
    p.dx = rc.number("dx");
    p.dt = rc.number("dt");
    p.horizon = rc.number("horizon");
    p.scheme = rc.text("scheme") == "explicit" ? Scheme::explicit_euler : Scheme::semi_implicit;
    p.output_times = pde_output_times(rc);
    p.bc_left = rc.number("bc_left");
    p.bc_right = rc.number("bc_right");
    p.boundary_guard = rc.flag("boundary_guard");
    if (rc.text("init") == "step") {
        p.init = step_profile(rc.number("init.x0"));
    } else {
        const InitialCondition ic = config_init(rc);
        p.init = [ic](double x) { return ic.tail(x); };
    }
    return p;
}

inline HydroConfig config_hydro(const RunConfig& rc) {
    HydroConfig h;
    h.psi = config_psi(rc);
    h.rate = config_rate(rc);
    h.init = config_init(rc);
    h.n_list = rc.integers("n_list");
    h.t_list = rc.numbers("t_list");
    h.replicas = rc.integer("replicas");
    h.seed = rc.integer("seed");
    h.dx = rc.number("dx");
    return h;
}

inline VelocityConfig config_velocity(const RunConfig& rc) {
    VelocityConfig v;
    v.psi = config_psi(rc);
    v.init = config_init(rc);
    v.n_list = rc.integers("n_list");
    v.horizon = rc.number("horizon");
    const auto w = rc.numbers("window");
    v.window_start = w.at(0);
    v.window_end = w.at(1);
    v.snapshot_dt = rc.number("snapshot_dt");
    v.replicas = rc.integer("replicas");
    v.seed = rc.integer("seed");
    return v;
}

inline SplitConfig config_split(const RunConfig& rc) {
    SplitConfig s;
    s.psi = config_psi(rc);
    s.init = config_init(rc);
    s.n = rc.integer("n");
    s.horizon = rc.number("horizon");
    s.replicas = rc.integer("replicas");
    s.seed = rc.integer("seed");
    s.min_gap = rc.number("min_gap");
    return s;
}

inline DominationConfig config_domination(const RunConfig& rc) {
    DominationConfig d;
    d.psi = config_psi(rc);
    d.rate = config_rate(rc);
    d.init = config_init(rc);
    d.n = rc.integer("n");
    d.horizon = rc.number("horizon");
    d.sample_times = rc.numbers("sample_times");
    d.replicas = rc.integer("replicas");
    d.seed = rc.integer("seed");
    d.population_cap = rc.integer("population_cap");
    return d;
}

// ---------------------------------------------------------------------------------------------

inline RunConfig resolve_config(Command command, const std::vector<ConfigLayer>& layers) {
    using detail::Type;
    RunConfig rc;
    rc.command = command;
    rc.values = detail::defaults(command);
    const auto& table = detail::key_table();

    static const std::vector<std::string> psi_group{"psi", "psi.pieces", "psi.file"};
    for (const auto& layer : layers) {
        const auto in_group = [&](const std::string& k) {
            return std::find(psi_group.begin(), psi_group.end(), k) != psi_group.end();
        };
        int psi_keys = 0;
        for (const auto& [k, v] : layer.values) {
            const auto it = table.find(k);
            if (it == table.end() || !it->second.commands.contains(command))
                throw ParseError(layer.origin + ": " + detail::where(v) + "unknown field '" + k + "' for command '" +
                                 to_string(command) + "'");
            try {
                detail::check_type(k, v, it->second.type);
            } catch (const ParseError& e) {
                throw ParseError(layer.origin + ": " + std::string(e.what()).substr(std::string("ParseError: ").size()));
            }
            if (in_group(k)) ++psi_keys;
        }
        if (psi_keys > 1) throw ValidationError(layer.origin + ": give only one of psi, psi.pieces, psi.file");
        if (psi_keys == 1)
            for (const auto& k : psi_group) rc.values.erase(k);
        // A new parent choice discards sub-keys inherited from earlier layers.
        for (const auto& dep : detail::dependents()) {
            if (!layer.values.contains(dep.parent)) continue;
            for (const auto& [choice, subs] : dep.by_choice)
                for (const auto& s : subs) rc.values.erase(s);
        }
        for (const auto& [k, v] : layer.values) {
            ConfigValue stored = v;
            stored.line = 0;
            rc.values[k] = stored;
        }
    }

    auto& m = rc.values;
    if (m.at("command").text != to_string(command))
        throw ValidationError("config is for command '" + m.at("command").text + "', not '" + to_string(command) + "'");

    // Selection: inline a psi file so the manifest is self-contained.
    if (m.contains("psi.file")) {
        const std::string path = m.at("psi.file").text;
        std::ifstream in(path);
        if (!in) throw ValidationError("psi.file: cannot open " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        try {
            m["psi.pieces"] = detail::from_pieces(psi_from_text(ss.str()).density().pieces());
        } catch (const Error& e) {
            throw ValidationError(std::string("psi.file: ") + e.what());
        }
        m.erase("psi.file");
    }

    // Dependent keys: reject strays, fill defaults.
    static const std::map<std::string, ConfigValue> sub_defaults{
        {"rate.value", detail::num(1)},     {"rate.base", detail::num(1)},   {"rate.amplitude", detail::num(0.5)},
        {"rate.omega", detail::num(1)},     {"rate.phase", detail::num(0)},  {"init.a", detail::num(-1)},
        {"init.b", detail::num(0)},         {"init.x0", detail::num(0)},     {"init.rho", detail::str("uniform")},
    };
    for (const auto& dep : detail::dependents()) {
        if (!m.contains(dep.parent)) continue;
        const std::string choice = m.at(dep.parent).text;
        const auto chosen = std::find_if(dep.by_choice.begin(), dep.by_choice.end(),
                                         [&](const auto& p) { return p.first == choice; });
        if (chosen == dep.by_choice.end())
            throw ValidationError(dep.parent + ": unknown choice \"" + choice + "\"");
        for (const auto& [other, subs] : dep.by_choice)
            for (const auto& s : subs) {
                const bool allowed = std::find(chosen->second.begin(), chosen->second.end(), s) != chosen->second.end();
                if (!allowed && m.contains(s))
                    throw ValidationError(s + " requires " + dep.parent + " = \"" + other + "\"");
            }
        for (const auto& s : chosen->second) {
            if (m.contains(s)) continue;
            const auto d = sub_defaults.find(s);
            if (d == sub_defaults.end()) throw ValidationError(dep.parent + " = \"" + choice + "\" needs " + s);
            m[s] = d->second;
        }
    }
    if (m.contains("init")) {
        const std::string& kind = m.at("init").text;
        if (kind == "step" && command != Command::pde)
            throw ValidationError("init = \"step\" is only meaningful for pde; use \"point-mass\"");
        if (kind == "positions" && command != Command::simulate)
            throw ValidationError("init = \"positions\" is only supported by simulate");
    }
    if (m.contains("init.rho")) {
        const std::string& rho = m.at("init.rho").text;
        if (rho != "uniform" && rho != "gaussian" && rho != "exponential-tail")
            throw ValidationError("init.rho must be \"uniform\", \"gaussian\" or \"exponential-tail\"");
    }
    if (m.contains("scheme") && m.at("scheme").text != "explicit" && m.at("scheme").text != "semi-implicit")
        throw ValidationError("scheme must be \"explicit\" or \"semi-implicit\"");

    // Defaults that depend on the horizon.
    if (command == Command::simulate && !m.contains("snapshot_times"))
        m["snapshot_times"] = ConfigValue::numbers({0.0, m.at("horizon").number});
    if (command == Command::dominate && !m.contains("sample_times"))
        m["sample_times"] = ConfigValue::numbers({m.at("horizon").number});
    if (command == Command::pde && !m.contains("window"))
        m["window"] = ConfigValue::numbers({m.at("horizon").number / 2.0, m.at("horizon").number});
    if (command == Command::velocity && !m.contains("window"))
        m["window"] = ConfigValue::numbers({m.at("horizon").number * 3.0 / 8.0, m.at("horizon").number});

    // Invariants: build every object the command uses.
    const auto positive = [&](const char* key) {
        if (m.contains(key) && !(m.at(key).number > 0.0)) throw ValidationError(std::string(key) + " must be > 0");
    };
    for (const char* key : {"horizon", "dx", "output_dt", "csv_dt", "z_span", "dz", "snapshot_dt", "min_gap", "replicas",
                            "population_cap"})
        positive(key);
    if (m.contains("n") && m.at("n").number < 2) throw ValidationError("n must be >= 2");
    for (const char* key : {"n_list", "t_list", "sample_times", "snapshot_times"})
        if (m.contains(key) && m.at(key).items.empty()) throw ValidationError(std::string(key) + " must not be empty");
    if (m.contains("n_list"))
        for (const auto& v : m.at("n_list").items)
            if (v.number < 2) throw ValidationError("n_list entries must be >= 2");
    if (m.contains("window") && m.at("window").items.size() != 2)
        throw ValidationError("window must be [t0, t1]");
    if (m.contains("level") && !(m.at("level").number > 0.0 && m.at("level").number < 1.0))
        throw ValidationError("level must lie in (0, 1)");

    try {
        const SelectionPsi psi = config_psi(rc);
        switch (command) {
        case Command::simulate: config_engine(rc).validate(); break;
        case Command::pde: {
            const PdeConfig p = config_pde(rc);
            if (!(p.x_hi > p.x_lo)) throw ValidationError("need x_lo < x_hi");
            (void)detail::choose_dt(p);
            const auto w = rc.numbers("window");
            if (!(w[0] >= 0.0 && w[1] > w[0] && w[1] <= p.horizon + 1e-12))
                throw ValidationError("window must satisfy 0 <= t0 < t1 <= horizon");
            break;
        }
        case Command::wave: (void)g_from_psi(psi); break;
        case Command::hydro: {
            const HydroConfig h = config_hydro(rc);
            for (double t : h.t_list)
                if (!(t > 0.0)) throw ValidationError("t_list entries must be > 0");
            if (h.init.kind == InitialCondition::Kind::quantile_of) h.init.rho.validate();
            break;
        }
        case Command::velocity: {
            const VelocityConfig v = config_velocity(rc);
            check_velocity_assumptions(v.psi, v.rate);
            if (!(v.t0() >= 0.0 && v.t1() > v.t0() && v.t1() <= v.horizon + 1e-12))
                throw ValidationError("window must satisfy 0 <= t0 < t1 <= horizon");
            if (v.replicas < 2) throw ValidationError("velocity needs replicas >= 2");
            if (v.init.kind == InitialCondition::Kind::quantile_of) v.init.rho.validate();
            break;
        }
        case Command::split: {
            const SplitConfig s = config_split(rc);
            if (s.n < 4) throw ValidationError("split needs n >= 4");
            if (s.init.kind == InitialCondition::Kind::quantile_of) s.init.rho.validate();
            break;
        }
        case Command::dominate: {
            const DominationConfig d = config_domination(rc);
            for (double t : d.sample_times)
                if (!(t >= 0.0 && t <= d.horizon)) throw ValidationError("sample_times must lie in [0, horizon]");
            if (!std::is_sorted(d.sample_times.begin(), d.sample_times.end()))
                throw ValidationError("sample_times must be sorted");
            d.rate.validate_horizon(d.horizon);
            if (d.init.kind == InitialCondition::Kind::quantile_of) d.init.rho.validate();
            break;
        }
        }
    } catch (const ValidationError&) {
        throw;
    } catch (const Error& e) {
        throw ValidationError(e.what());
    }
    return rc;
}

} // namespace rank_bbm
