#pragma once

// Scenario configuration: JSON schema, validation and echo.
//
// Complex numbers are [re, im] pairs, matrices are row-major nested lists of
// such pairs, and every index a user writes (subspace groups) is 1-based.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatesim/ensemble.hpp"
#include "gatesim/gates.hpp"

namespace gatesim::cli {

using json = nlohmann::json;

/// Invalid configuration; `field` names the offending key (dotted path).
class ConfigError : public Error {
  public:
    ConfigError(std::string field, const std::string& message)
        : Error(field.empty() ? message : "field '" + field + "': " + message), field_(std::move(field)) {}

    const std::string& field() const { return field_; }

  private:
    std::string field_;
};

enum class Mode { trivial, ideal, product, random, custom };

inline const char* to_string(Mode mode) {
    switch (mode) {
    case Mode::trivial:
        return "trivial";
    case Mode::ideal:
        return "ideal";
    case Mode::product:
        return "product";
    case Mode::random:
        return "random";
    case Mode::custom:
        return "custom";
    }
    return "?";
}

struct EntangledConfig {
    std::size_t dim2 = 1;
    std::vector<Complex> state; // over V1 (x) V2; empty means "use the top-level state"
    bool fresh_ledger = false;
};

struct PerturbConfig {
    double magnitude = 0.0;
    std::size_t period = 1;
};

// H_system for the independence check: explicit matrix, or Tr_W(H_hat) / m.
struct ReducedSystemHamiltonian {};
using SystemHamiltonianSpec = std::variant<ComplexMatrix, ReducedSystemHamiltonian>;

struct ScenarioConfig {
    Mode mode = Mode::ideal;
    std::size_t n = 0;
    std::size_t m = 0;
    double hbar = 1.0;
    std::uint64_t seed = 0;
    std::vector<Complex> state;
    std::vector<double> initial_energies;
    std::size_t steps = 0;
    std::vector<double> system_energies;    // ideal / product: diagonal of H_S
    std::vector<double> apparatus_energies; // product: diagonal of H_M
    std::optional<ComplexMatrix> custom_hamiltonian;
    std::optional<SystemHamiltonianSpec> system_hamiltonian;
    std::optional<EntangledConfig> entangled;
    std::optional<std::vector<std::vector<std::size_t>>> subspaces; // 1-based
    std::optional<PerturbConfig> perturb;
    std::vector<double> times;
    double fd_step = 1e-4;

    std::size_t gate_count() const { return subspaces ? subspaces->size() : n; }
};

namespace detail {

inline Complex parse_complex(const json& j, const std::string& field) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
        throw ConfigError(field, "expected a complex number as [re, im]");
    }
    return {j[0].get<double>(), j[1].get<double>()};
}

inline std::vector<Complex> parse_complex_list(const json& j, const std::string& field) {
    if (!j.is_array()) {
        throw ConfigError(field, "expected a list of [re, im] pairs");
    }
    std::vector<Complex> out;
    out.reserve(j.size());
    for (std::size_t k = 0; k < j.size(); ++k) {
        out.push_back(parse_complex(j[k], field + "[" + std::to_string(k) + "]"));
    }
    return out;
}

inline ComplexMatrix parse_matrix(const json& j, const std::string& field) {
    if (!j.is_array() || j.empty()) {
        throw ConfigError(field, "expected a non-empty row-major list of rows");
    }
    const auto rows = static_cast<Eigen::Index>(j.size());
    ComplexMatrix out;
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto row = parse_complex_list(j[static_cast<std::size_t>(r)], field + "[" + std::to_string(r) + "]");
        if (r == 0) {
            out.resize(rows, static_cast<Eigen::Index>(row.size()));
        } else if (static_cast<Eigen::Index>(row.size()) != out.cols()) {
            throw ConfigError(field, "row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                                         " entries, expected " + std::to_string(out.cols()));
        }
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
            out(r, c) = row[static_cast<std::size_t>(c)];
        }
    }
    return out;
}

inline std::vector<double> parse_reals(const json& j, const std::string& field) {
    if (!j.is_array()) {
        throw ConfigError(field, "expected a list of numbers");
    }
    std::vector<double> out;
    for (std::size_t k = 0; k < j.size(); ++k) {
        if (!j[k].is_number()) {
            throw ConfigError(field + "[" + std::to_string(k) + "]", "expected a number");
        }
        const double x = j[k].get<double>();
        if (!std::isfinite(x)) {
            throw ConfigError(field + "[" + std::to_string(k) + "]", "must be finite");
        }
        out.push_back(x);
    }
    return out;
}

inline std::size_t parse_count(const json& j, const std::string& field, std::size_t min_value) {
    if (!j.is_number_integer() || j.get<long long>() < static_cast<long long>(min_value)) {
        throw ConfigError(field, "expected an integer >= " + std::to_string(min_value));
    }
    return j.get<std::size_t>();
}

inline double parse_real(const json& j, const std::string& field) {
    if (!j.is_number() || !std::isfinite(j.get<double>())) {
        throw ConfigError(field, "expected a finite number");
    }
    return j.get<double>();
}

inline void reject_unknown(const json& obj, const std::string& prefix, std::initializer_list<const char*> known) {
    for (const auto& [key, value] : obj.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
            throw ConfigError(prefix + key, "unknown field");
        }
    }
}

inline json complex_to_json(Complex z) { return json::array({z.real(), z.imag()}); }

inline json complex_list_to_json(const std::vector<Complex>& v) {
    json out = json::array();
    for (auto z : v) {
        out.push_back(complex_to_json(z));
    }
    return out;
}

inline std::vector<Complex> to_complex_list(const StateVector& v) {
    return {v.data(), v.data() + v.size()};
}

inline json matrix_to_json(const ComplexMatrix& a) {
    json out = json::array();
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < a.cols(); ++c) {
            row.push_back(complex_to_json(a(r, c)));
        }
        out.push_back(std::move(row));
    }
    return out;
}

inline std::vector<double> default_ladder(std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        out[k] = static_cast<double>(k);
    }
    return out;
}

} // namespace detail

inline ScenarioConfig parse_config(const json& j) {
    using namespace detail;
    if (!j.is_object()) {
        throw ConfigError("", "config must be a JSON object");
    }
    reject_unknown(j, "", {"mode", "N", "m", "hbar", "seed", "state", "initial_energies", "steps",
                           "system_energies", "apparatus_energies", "custom_hamiltonian", "system_hamiltonian",
                           "entangled", "subspaces", "perturb", "times", "fd_step"});

    ScenarioConfig cfg;
    if (!j.contains("mode") || !j["mode"].is_string()) {
        throw ConfigError("mode", "required, one of trivial|ideal|product|random|custom");
    }
    const auto mode = j["mode"].get<std::string>();
    if (mode == "trivial") {
        cfg.mode = Mode::trivial;
    } else if (mode == "ideal") {
        cfg.mode = Mode::ideal;
    } else if (mode == "product") {
        cfg.mode = Mode::product;
    } else if (mode == "random") {
        cfg.mode = Mode::random;
    } else if (mode == "custom") {
        cfg.mode = Mode::custom;
    } else {
        throw ConfigError("mode", "unknown mode '" + mode + "'");
    }

    if (!j.contains("N")) {
        throw ConfigError("N", "required");
    }
    cfg.n = parse_count(j["N"], "N", 1);
    cfg.m = j.contains("m") ? parse_count(j["m"], "m", 1) : cfg.n;
    if (j.contains("hbar")) {
        cfg.hbar = parse_real(j["hbar"], "hbar");
        if (!(cfg.hbar > 0.0)) {
            throw ConfigError("hbar", "must be positive");
        }
    }
    if (j.contains("seed")) {
        if (!j["seed"].is_number_integer()) {
            throw ConfigError("seed", "expected an integer");
        }
        cfg.seed = j["seed"].is_number_unsigned() ? j["seed"].get<std::uint64_t>()
                                                  : static_cast<std::uint64_t>(j["seed"].get<std::int64_t>());
    }
    cfg.steps = j.contains("steps") ? parse_count(j["steps"], "steps", 0) : 0;

    if (j.contains("subspaces")) {
        const auto& groups = j["subspaces"];
        if (!groups.is_array() || groups.empty()) {
            throw ConfigError("subspaces", "expected a non-empty list of index groups");
        }
        std::vector<std::vector<std::size_t>> parsed;
        std::set<std::size_t> seen;
        for (std::size_t g = 0; g < groups.size(); ++g) {
            const std::string field = "subspaces[" + std::to_string(g) + "]";
            if (!groups[g].is_array() || groups[g].empty()) {
                throw ConfigError(field, "expected a non-empty list of 1-based indices");
            }
            std::vector<std::size_t> group;
            for (const auto& idx : groups[g]) {
                const auto k = parse_count(idx, field, 1);
                if (k > cfg.n) {
                    throw ConfigError(field, "index " + std::to_string(k) + " exceeds N=" + std::to_string(cfg.n));
                }
                if (!seen.insert(k).second) {
                    throw ConfigError(field, "index " + std::to_string(k) + " appears in more than one group");
                }
                group.push_back(k);
            }
            parsed.push_back(std::move(group));
        }
        if (seen.size() != cfg.n) {
            throw ConfigError("subspaces", "groups must cover 1.." + std::to_string(cfg.n));
        }
        cfg.subspaces = std::move(parsed);
    }

    if (j.contains("entangled")) {
        const auto& e = j["entangled"];
        if (!e.is_object()) {
            throw ConfigError("entangled", "expected an object {dim2, state, ledger}");
        }
        reject_unknown(e, "entangled.", {"dim2", "state", "ledger"});
        if (!e.contains("dim2")) {
            throw ConfigError("entangled.dim2", "required");
        }
        EntangledConfig ec;
        ec.dim2 = parse_count(e["dim2"], "entangled.dim2", 1);
        if (e.contains("state")) {
            ec.state = parse_complex_list(e["state"], "entangled.state");
        }
        if (e.contains("ledger")) {
            const auto mode_name = e["ledger"].is_string() ? e["ledger"].get<std::string>() : "";
            if (mode_name != "shared" && mode_name != "fresh") {
                throw ConfigError("entangled.ledger", "expected \"shared\" or \"fresh\"");
            }
            ec.fresh_ledger = mode_name == "fresh";
        }
        if (cfg.subspaces) {
            throw ConfigError("entangled", "cannot be combined with subspaces");
        }
        cfg.entangled = std::move(ec);
    }

    // The measured state: V, or V1 (x) V2 when entangled.
    if (cfg.entangled && !cfg.entangled->state.empty()) {
        if (j.contains("state")) {
            throw ConfigError("state", "give the entangled state in either state or entangled.state, not both");
        }
        cfg.state = std::move(cfg.entangled->state);
        cfg.entangled->state.clear();
    } else {
        if (!j.contains("state")) {
            throw ConfigError("state", "required");
        }
        cfg.state = parse_complex_list(j["state"], "state");
    }
    const std::size_t state_dim = cfg.entangled ? cfg.n * cfg.entangled->dim2 : cfg.n;
    if (cfg.state.size() != state_dim) {
        throw ConfigError(cfg.entangled ? "entangled.state" : "state",
                          "expected " + std::to_string(state_dim) + " amplitudes, got " +
                              std::to_string(cfg.state.size()));
    }
    if (std::all_of(cfg.state.begin(), cfg.state.end(), [](Complex z) { return z == Complex(0.0); })) {
        throw ConfigError("state", "must be non-zero");
    }

    if (j.contains("initial_energies")) {
        cfg.initial_energies = parse_reals(j["initial_energies"], "initial_energies");
        if (cfg.initial_energies.size() != cfg.gate_count()) {
            throw ConfigError("initial_energies", "expected " + std::to_string(cfg.gate_count()) + " values, got " +
                                                      std::to_string(cfg.initial_energies.size()));
        }
    } else {
        cfg.initial_energies.assign(cfg.gate_count(), 0.0);
    }

    const bool uses_system_energies = cfg.mode == Mode::ideal || cfg.mode == Mode::product;
    if (j.contains("system_energies")) {
        if (!uses_system_energies) {
            throw ConfigError("system_energies", "only used by ideal and product modes");
        }
        cfg.system_energies = parse_reals(j["system_energies"], "system_energies");
        if (cfg.system_energies.size() != cfg.n) {
            throw ConfigError("system_energies", "expected " + std::to_string(cfg.n) + " values");
        }
    } else if (uses_system_energies) {
        cfg.system_energies = detail::default_ladder(cfg.n);
    }
    if (j.contains("apparatus_energies")) {
        if (cfg.mode != Mode::product) {
            throw ConfigError("apparatus_energies", "only used by product mode");
        }
        cfg.apparatus_energies = parse_reals(j["apparatus_energies"], "apparatus_energies");
        if (cfg.apparatus_energies.size() != cfg.m) {
            throw ConfigError("apparatus_energies", "expected " + std::to_string(cfg.m) + " values");
        }
    } else if (cfg.mode == Mode::product) {
        cfg.apparatus_energies = detail::default_ladder(cfg.m);
    }

    if (j.contains("custom_hamiltonian") != (cfg.mode == Mode::custom)) {
        throw ConfigError("custom_hamiltonian", "must be present exactly when mode is custom");
    }
    if (cfg.mode == Mode::custom) {
        auto h = parse_matrix(j["custom_hamiltonian"], "custom_hamiltonian");
        const auto d = static_cast<Eigen::Index>(cfg.n * cfg.m);
        if (h.rows() != d || h.cols() != d) {
            throw ConfigError("custom_hamiltonian", "expected " + std::to_string(d) + "x" + std::to_string(d) +
                                                        " for N*m = " + std::to_string(d));
        }
        if (!qla::is_hermitian(h)) {
            throw ConfigError("custom_hamiltonian", "not Hermitian within 1e-12");
        }
        cfg.custom_hamiltonian = std::move(h);
    }

    if (j.contains("system_hamiltonian")) {
        const auto& sh = j["system_hamiltonian"];
        if (sh.is_string()) {
            if (sh.get<std::string>() != "reduced") {
                throw ConfigError("system_hamiltonian", "expected a matrix or \"reduced\"");
            }
            cfg.system_hamiltonian = ReducedSystemHamiltonian{};
        } else {
            auto h = parse_matrix(sh, "system_hamiltonian");
            if (static_cast<std::size_t>(h.rows()) != cfg.n || static_cast<std::size_t>(h.cols()) != cfg.n) {
                throw ConfigError("system_hamiltonian", "expected " + std::to_string(cfg.n) + "x" + std::to_string(cfg.n));
            }
            if (!qla::is_hermitian(h)) {
                throw ConfigError("system_hamiltonian", "not Hermitian within 1e-12");
            }
            cfg.system_hamiltonian = std::move(h);
        }
    }

    if (j.contains("perturb")) {
        const auto& p = j["perturb"];
        if (!p.is_object()) {
            throw ConfigError("perturb", "expected an object {magnitude, period}");
        }
        reject_unknown(p, "perturb.", {"magnitude", "period"});
        PerturbConfig pc;
        if (!p.contains("magnitude")) {
            throw ConfigError("perturb.magnitude", "required");
        }
        pc.magnitude = parse_real(p["magnitude"], "perturb.magnitude");
        if (pc.magnitude < 0.0) {
            throw ConfigError("perturb.magnitude", "must be >= 0");
        }
        pc.period = p.contains("period") ? parse_count(p["period"], "perturb.period", 1) : 1;
        cfg.perturb = pc;
    }

    if (j.contains("times")) {
        cfg.times = parse_reals(j["times"], "times");
    }
    if (j.contains("fd_step")) {
        cfg.fd_step = parse_real(j["fd_step"], "fd_step");
        if (!(cfg.fd_step > 0.0)) {
            throw ConfigError("fd_step", "must be positive");
        }
    }
    return cfg;
}

inline ScenarioConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        // The message carries the line and column of the offending token.
        throw ConfigError("", e.what());
    }
    return parse_config(j);
}

inline ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("", "cannot open config file '" + path + "'");
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

/// Normalized echo of a config: every default is written out, so the echo alone reproduces the run.
inline json to_json(const ScenarioConfig& cfg) {
    using namespace detail;
    json j;
    j["mode"] = to_string(cfg.mode);
    j["N"] = cfg.n;
    j["m"] = cfg.m;
    j["hbar"] = cfg.hbar;
    j["seed"] = cfg.seed;
    j["steps"] = cfg.steps;
    j["state"] = complex_list_to_json(cfg.state);
    j["initial_energies"] = cfg.initial_energies;
    if (cfg.mode == Mode::ideal || cfg.mode == Mode::product) {
        j["system_energies"] = cfg.system_energies;
    }
    if (cfg.mode == Mode::product) {
        j["apparatus_energies"] = cfg.apparatus_energies;
    }
    if (cfg.custom_hamiltonian) {
        j["custom_hamiltonian"] = matrix_to_json(*cfg.custom_hamiltonian);
    }
    if (cfg.system_hamiltonian) {
        if (std::holds_alternative<ReducedSystemHamiltonian>(*cfg.system_hamiltonian)) {
            j["system_hamiltonian"] = "reduced";
        } else {
            j["system_hamiltonian"] = matrix_to_json(std::get<ComplexMatrix>(*cfg.system_hamiltonian));
        }
    }
    if (cfg.entangled) {
        j["entangled"] = {{"dim2", cfg.entangled->dim2}, {"ledger", cfg.entangled->fresh_ledger ? "fresh" : "shared"}};
    }
    if (cfg.subspaces) {
        j["subspaces"] = *cfg.subspaces;
    }
    if (cfg.perturb) {
        j["perturb"] = {{"magnitude", cfg.perturb->magnitude}, {"period", cfg.perturb->period}};
    }
    if (!cfg.times.empty()) {
        j["times"] = cfg.times;
    }
    j["fd_step"] = cfg.fd_step;
    return j;
}

inline StateVector state_vector(const ScenarioConfig& cfg) {
    StateVector v(static_cast<Eigen::Index>(cfg.state.size()));
    for (std::size_t k = 0; k < cfg.state.size(); ++k) {
        v(static_cast<Eigen::Index>(k)) = cfg.state[k];
    }
    return v;
}

/// Combined Hamiltonian for the configured mode. Random mode draws from the config seed.
inline ComplexMatrix build_hamiltonian(const ScenarioConfig& cfg) {
    const Dims dims{cfg.n, cfg.m};
    switch (cfg.mode) {
    case Mode::trivial:
        return presets::trivial(dims);
    case Mode::ideal:
        return presets::ideal(cfg.system_energies, cfg.m);
    case Mode::product:
        return presets::product(cfg.system_energies, cfg.apparatus_energies);
    case Mode::random:
        return presets::random(dims, cfg.seed);
    case Mode::custom:
        return *cfg.custom_hamiltonian;
    }
    throw ConfigError("mode", "unhandled mode");
}

/// H_system for the independence check, or nullopt when the config supplies none.
inline std::optional<ComplexMatrix> system_hamiltonian(const ScenarioConfig& cfg, const Apparatus& app) {
    if (cfg.system_hamiltonian) {
        if (std::holds_alternative<ReducedSystemHamiltonian>(*cfg.system_hamiltonian)) {
            return qla::partial_trace_W(app.hamiltonian(), cfg.n, cfg.m) / static_cast<double>(cfg.m);
        }
        return std::get<ComplexMatrix>(*cfg.system_hamiltonian);
    }
    if (cfg.mode == Mode::ideal || cfg.mode == Mode::product) {
        return presets::diagonal(cfg.system_energies);
    }
    return std::nullopt;
}

/// Subspace groups converted to 0-based indices.
inline std::vector<std::vector<std::size_t>> zero_based_groups(const ScenarioConfig& cfg) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& group : *cfg.subspaces) {
        std::vector<std::size_t> g;
        for (auto k : group) {
            g.push_back(k - 1);
        }
        out.push_back(std::move(g));
    }
    return out;
}

/// Seed of the perturbation stream derived from the config seed.
inline std::uint64_t perturbation_seed(const ScenarioConfig& cfg) { return derive_seed(cfg.seed, 1); }

inline RunOptions run_options(const ScenarioConfig& cfg, bool keep_outcomes = true) {
    RunOptions options;
    options.keep_outcomes = keep_outcomes;
    if (cfg.perturb) {
        options.perturb = Perturbation{cfg.perturb->magnitude, cfg.perturb->period, perturbation_seed(cfg)};
    }
    return options;
}

} // namespace gatesim::cli
