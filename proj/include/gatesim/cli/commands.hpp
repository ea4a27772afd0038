#pragma once

// The five scenario commands. Each writes its report to `out`, diagnostics to
// `err`, and returns the process exit code.

#include <chrono>
#include <cstdio>
#include <exception>
#include <future>
#include <ostream>
#include <string>
#include <vector>

#include "gatesim/cli/config.hpp"
#include "gatesim/ensemble.hpp"
#include "gatesim/gates.hpp"

namespace gatesim::cli {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int internal = 1;
inline constexpr int config = 2;
inline constexpr int all_gates_closed = 3;
inline constexpr int bound_violation = 4;
} // namespace exit_code

enum class Format { json, csv };

struct CommandOptions {
    Format format = Format::json;
    std::size_t jobs = 1;
    bool iid = false;
    std::size_t iid_seeds = 1;
};

/// CSV cells carry 15 significant digits.
inline std::string csv_number(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.15g", x);
    return buf;
}

/// Per-step rows: step, chosen, c_1..c_N, rho_1..rho_N, deviation.
class CsvStepWriter {
  public:
    CsvStepWriter(std::ostream& out, std::size_t gates) : out_(&out) {
        *out_ << "step,chosen";
        for (std::size_t j = 1; j <= gates; ++j) {
            *out_ << ",c_" << j;
        }
        for (std::size_t j = 1; j <= gates; ++j) {
            *out_ << ",rho_" << j;
        }
        *out_ << ",deviation\n";
    }

    void operator()(const StepRecord& r) const {
        *out_ << r.step << ',' << r.chosen + 1;
        for (double c : r.closeness) {
            *out_ << ',' << csv_number(c);
        }
        for (double rho : r.energies) {
            *out_ << ',' << csv_number(rho);
        }
        *out_ << ',' << csv_number(r.deviation) << '\n';
    }

  private:
    std::ostream* out_;
};

namespace detail {

inline std::vector<std::size_t> one_based(const std::vector<std::size_t>& v) {
    std::vector<std::size_t> out(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
        out[k] = v[k] + 1;
    }
    return out;
}

inline Apparatus base_apparatus(const ScenarioConfig& cfg) {
    return build_apparatus(build_hamiltonian(cfg), Dims{cfg.n, cfg.m}, cfg.hbar);
}

/// Calls fn with the configured gate model: the per-basis apparatus, or the subspace one.
template <typename Fn>
decltype(auto) with_model(const ScenarioConfig& cfg, Fn&& fn) {
    if (cfg.subspaces) {
        const auto model = build_subspace_apparatus(projectors_from_groups(zero_based_groups(cfg), cfg.n),
                                                    build_hamiltonian(cfg), cfg.m, cfg.hbar);
        return fn(model);
    }
    const auto model = base_apparatus(cfg);
    return fn(model);
}

inline json run_fields(const RunStatistics& stats, const EnergyLedger& ledger) {
    json j;
    j["closeness"] = stats.closeness_ref;
    j["outcomes"] = one_based(stats.outcomes);
    j["final_energies"] = ledger.energies();
    j["counts"] = stats.counts;
    j["max_deviation"] = stats.max_deviation;
    j["bound_B"] = stats.bound_B;
    j["bound_upper"] = stats.bound_upper;
    j["offset"] = stats.offset;
    j["conservation_error"] = ledger.conservation_error();
    return j;
}

inline void require_no_entangled(const ScenarioConfig& cfg, const char* command) {
    if (cfg.entangled) {
        throw ConfigError("entangled", std::string("not used by ") + command + "; use the entangle command");
    }
}

inline void require_no_subspaces(const ScenarioConfig& cfg, const char* command) {
    if (cfg.subspaces) {
        throw ConfigError("subspaces", std::string("not supported by ") + command);
    }
}

/// Runs the configured repeated measurement; the sink sees every step.
template <typename Sink>
std::pair<RunStatistics, EnergyLedger> run_scenario(const ScenarioConfig& cfg, const RunOptions& options, Sink&& sink) {
    EnergyLedger ledger(cfg.initial_energies);
    const StateVector xi = state_vector(cfg);
    auto stats = with_model(cfg, [&](const auto& model) {
        return run_repeated(model, ledger, xi, cfg.steps, options, sink);
    });
    return {std::move(stats), std::move(ledger)};
}

} // namespace detail

inline json cmd_simulate(const ScenarioConfig& cfg, const CommandOptions& opts, std::ostream& out) {
    detail::require_no_entangled(cfg, "simulate");
    const auto options = run_options(cfg);
    json report;
    if (opts.format == Format::csv) {
        CsvStepWriter writer(out, cfg.gate_count());
        auto [stats, ledger] = detail::run_scenario(cfg, options, writer);
        report = detail::run_fields(stats, ledger);
    } else {
        auto [stats, ledger] = detail::run_scenario(cfg, options, NoSink{});
        report = detail::run_fields(stats, ledger);
    }
    return report;
}

/// Deviation of the iid baseline for seeds seed, seed+1, ..., fanned out over `jobs` threads.
inline std::vector<double> iid_deviations(const std::vector<double>& c, std::size_t n, std::uint64_t seed,
                                          std::size_t count, std::size_t jobs) {
    std::vector<double> out(count, 0.0);
    jobs = std::max<std::size_t>(1, std::min(jobs, count));
    std::vector<std::future<void>> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
        workers.push_back(std::async(std::launch::async, [&, w] {
            for (std::size_t s = w; s < count; s += jobs) {
                out[s] = frequency_deviation(iid_reference(c, n, seed + s));
            }
        }));
    }
    for (auto& f : workers) {
        f.get();
    }
    return out;
}

struct BornCheckResult {
    json report;
    bool holds = false;
};

inline BornCheckResult cmd_born_check(const ScenarioConfig& cfg, const CommandOptions& opts, std::ostream& out) {
    detail::require_no_entangled(cfg, "born-check");
    auto options = run_options(cfg);
    options.throw_on_violation = false;

    RunStatistics stats;
    EnergyLedger ledger;
    if (opts.format == Format::csv) {
        CsvStepWriter writer(out, cfg.gate_count());
        std::tie(stats, ledger) = detail::run_scenario(cfg, options, writer);
    } else {
        std::tie(stats, ledger) = detail::run_scenario(cfg, options, NoSink{});
    }

    // Count-scale envelope, checked against the running maximum over every prefix.
    const double envelope_counts = std::max(std::abs(stats.bound_B), stats.bound_upper) + stats.offset;
    const bool holds = stats.violations == 0 && stats.max_deviation <= envelope_counts;

    BornCheckResult result;
    result.report = detail::run_fields(stats, ledger);
    std::vector<double> per_gate(stats.counts.size(), 0.0);
    if (stats.n > 0) {
        for (std::size_t j = 0; j < per_gate.size(); ++j) {
            per_gate[j] = std::abs(static_cast<double>(stats.counts[j]) / static_cast<double>(stats.n) -
                                   stats.closeness_ref[j]);
        }
    }
    result.report["frequency_deviation"] = per_gate;
    result.report["max_frequency_deviation"] = frequency_deviation(stats);
    result.report["bound"] = born_envelope(stats);
    result.report["bound_violations"] = stats.violations;
    result.report["holds"] = holds;

    if (opts.iid) {
        const auto devs = iid_deviations(stats.closeness_ref, stats.n, cfg.seed, opts.iid_seeds, opts.jobs);
        const double det = frequency_deviation(stats);
        std::size_t exceed = 0;
        for (double d : devs) {
            exceed += d > det ? 1 : 0;
        }
        result.report["iid"] = {{"seeds", opts.iid_seeds},
                                {"first_seed", cfg.seed},
                                {"deviations", devs},
                                {"exceeding_deterministic", exceed}};
    }
    result.holds = holds;
    return result;
}

inline json cmd_independence(const ScenarioConfig& cfg) {
    detail::require_no_entangled(cfg, "independence");
    detail::require_no_subspaces(cfg, "independence");
    const auto app = detail::base_apparatus(cfg);
    const auto h_system = system_hamiltonian(cfg, app);
    if (!h_system) {
        throw ConfigError("system_hamiltonian", "required by independence for mode " + std::string(to_string(cfg.mode)));
    }
    const auto residuals = independence_residual(app, *h_system);
    const bool pass = independence_compatible(residuals);
    json report;
    report["residuals"] = residuals;
    report["max_residual"] = residuals.empty() ? 0.0 : *std::max_element(residuals.begin(), residuals.end());
    report["threshold"] = tol::independence;
    report["verdict"] = pass ? "independence-compatible" : "not independence-compatible";
    report["compatible"] = pass;
    return report;
}

inline std::vector<double> default_times() { return {0.0, 0.37, 1.0}; }

inline json cmd_trace_ops(const ScenarioConfig& cfg) {
    detail::require_no_entangled(cfg, "trace-ops");
    detail::require_no_subspaces(cfg, "trace-ops");
    const auto app = detail::base_apparatus(cfg);
    const auto times = cfg.times.empty() ? default_times() : cfg.times;
    const double h_norm = qla::max_abs(app.hamiltonian());
    const double schrodinger_tol = 1e-6 * h_norm * h_norm;

    json rows = json::array();
    bool all_pass = true;
    for (double t : times) {
        const ComplexMatrix u_t = qla::evolution_operator(app.hamiltonian(), t, app.hbar());
        ComplexMatrix total = ComplexMatrix::Zero(u_t.rows(), u_t.cols());
        std::vector<double> schrodinger;
        for (std::size_t j = 0; j < app.gate_count(); ++j) {
            total += u_hat_j(app, j, t);
            schrodinger.push_back(schrodinger_residual(app, j, t, cfg.fd_step));
        }
        const double sum_residual = qla::max_abs(total - u_t);
        const double worst = *std::max_element(schrodinger.begin(), schrodinger.end());
        const bool pass = sum_residual < 1e-9 && worst <= schrodinger_tol;
        all_pass = all_pass && pass;
        rows.push_back({{"t", t},
                        {"sum_residual", sum_residual},
                        {"schrodinger_residuals", schrodinger},
                        {"max_schrodinger_residual", worst},
                        {"pass", pass}});
    }
    json report;
    report["times"] = rows;
    report["fd_step"] = cfg.fd_step;
    report["hamiltonian_max_abs"] = h_norm;
    report["sum_tolerance"] = 1e-9;
    report["schrodinger_tolerance"] = schrodinger_tol;
    report["pass"] = all_pass;
    return report;
}

/// Repeated measurement of one half of an entangled pair. The ledger is
/// shared across trials by default; "fresh" restarts it from the initial
/// energies for every trial.
inline json cmd_entangle(const ScenarioConfig& cfg, const CommandOptions& opts, std::ostream& out) {
    if (!cfg.entangled) {
        throw ConfigError("entangled", "required by entangle");
    }
    detail::require_no_subspaces(cfg, "entangle");
    const EntangledApparatus eapp(detail::base_apparatus(cfg), cfg.entangled->dim2);
    const StateVector xi = state_vector(cfg);
    const auto options = run_options(cfg);

    RunStatistics stats;
    EnergyLedger ledger(cfg.initial_energies);
    std::optional<CsvStepWriter> writer;
    if (opts.format == Format::csv) {
        writer.emplace(out, cfg.n);
    }
    auto sink = [&](const StepRecord& r) {
        if (writer) {
            (*writer)(r);
        }
    };
    if (cfg.entangled->fresh_ledger) {
        const std::vector<double> initial = cfg.initial_energies;
        stats = run_sequence(
            normalize_closeness(xi, closeness(std::span<const ComplexMatrix>(eapp.gate_operators()), xi)).closeness,
            ledger, cfg.steps, options,
            [&](EnergyLedger& l) {
                l = EnergyLedger(initial);
                auto o = measure_entangled(eapp, l, xi);
                return std::pair{o.outcome.chosen, std::move(o.outcome.ledger_after)};
            },
            sink);
    } else {
        stats = run_repeated_entangled(eapp, ledger, xi, cfg.steps, options, sink);
    }

    json report = detail::run_fields(stats, ledger);
    report["ledger"] = cfg.entangled->fresh_ledger ? "fresh" : "shared";
    json partners = json::object();
    for (std::size_t j = 0; j < cfg.n; ++j) {
        if (stats.closeness_ref[j] > tol::closed_gate) {
            const auto partner = qla::partial_inner_left(qla::basis_vector(j, cfg.n), xi);
            partners[std::to_string(j + 1)] = detail::complex_list_to_json(detail::to_complex_list(partner));
        }
    }
    report["partner_states"] = partners;
    return report;
}

inline void write_table_csv(std::ostream& out, const std::string& command, const json& report) {
    if (command == "independence") {
        out << "gate,residual\n";
        const auto& r = report["residuals"];
        for (std::size_t j = 0; j < r.size(); ++j) {
            out << j + 1 << ',' << csv_number(r[j].get<double>()) << '\n';
        }
    } else if (command == "trace-ops") {
        out << "t,sum_residual,max_schrodinger_residual\n";
        for (const auto& row : report["times"]) {
            out << csv_number(row["t"].get<double>()) << ',' << csv_number(row["sum_residual"].get<double>()) << ','
                << csv_number(row["max_schrodinger_residual"].get<double>()) << '\n';
        }
    }
}

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"simulate", "born-check", "independence", "trace-ops", "entangle"};
    return names;
}

/// Runs one command and maps failures to exit codes.
inline int run_command(const std::string& command, const ScenarioConfig& cfg, const CommandOptions& opts,
                       std::ostream& out, std::ostream& err) {
    const auto start = std::chrono::steady_clock::now();
    try {
        json report;
        int code = exit_code::ok;
        if (command == "simulate") {
            report = cmd_simulate(cfg, opts, out);
        } else if (command == "born-check") {
            auto result = cmd_born_check(cfg, opts, out);
            report = std::move(result.report);
            if (!result.holds) {
                err << "born-check: deviation bound violated (max deviation "
                    << report["max_deviation"].get<double>() << ")\n";
                code = exit_code::bound_violation;
            }
        } else if (command == "independence") {
            report = cmd_independence(cfg);
        } else if (command == "trace-ops") {
            report = cmd_trace_ops(cfg);
        } else if (command == "entangle") {
            report = cmd_entangle(cfg, opts, out);
        } else {
            err << "unknown command '" << command << "'\n";
            return exit_code::config;
        }

        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
        json full;
        full["command"] = command;
        full["config"] = to_json(cfg);
        full.update(report);
        full["wall_time_s"] = elapsed.count();

        if (opts.format == Format::json) {
            out << full.dump(2) << '\n';
        } else {
            write_table_csv(out, command, full);
        }
        return code;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return exit_code::config;
    } catch (const AllGatesClosed& e) {
        err << "all gates closed: " << e.what() << '\n';
        return exit_code::all_gates_closed;
    } catch (const BoundViolation& e) {
        err << "bound violation: " << e.what() << '\n';
        return exit_code::bound_violation;
    } catch (const NonHermitianInput& e) {
        err << "config error: " << e.what() << '\n';
        return exit_code::config;
    } catch (const DimensionMismatch& e) {
        err << "config error: " << e.what() << '\n';
        return exit_code::config;
    } catch (const NotAPartition& e) {
        err << "config error: " << e.what() << '\n';
        return exit_code::config;
    } catch (const IndexOutOfRange& e) {
        err << "config error: " << e.what() << '\n';
        return exit_code::config;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_code::internal;
    }
}

} // namespace gatesim::cli
