#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gatesim/cli/commands.hpp"

namespace {

using namespace gatesim::cli;

struct Flags {
    std::string config;
    std::string output;
    std::string format = "json";
    std::optional<std::int64_t> seed;
    std::size_t jobs = 1;
    bool iid = false;
    std::size_t iid_seeds = 1;
    std::string times;
};

void add_common(CLI::App* sub, Flags& f) {
    sub->add_option("--config", f.config, "scenario config (JSON)")->required();
    sub->add_option("--output", f.output, "write the report here instead of stdout");
    sub->add_option("--format", f.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--seed", f.seed, "override the config seed");
    sub->add_option("--jobs", f.jobs, "worker threads for independent seeds")->check(CLI::PositiveNumber);
}

std::vector<double> parse_times(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double t = 0.0;
        try {
            t = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) {
            ++used;
        }
        if (item.empty() || used != item.size() || !std::isfinite(t)) {
            throw ConfigError("--t", "invalid time '" + item + "'");
        }
        out.push_back(t);
    }
    if (out.empty() || text.back() == ',') {
        throw ConfigError("--t", "expected a comma-separated list of times");
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deterministic gate-model measurement simulator"};
    app.require_subcommand(1);
    Flags f;
    for (const auto& name : command_names()) {
        auto* sub = app.add_subcommand(name);
        add_common(sub, f);
        if (name == "born-check") {
            sub->add_flag("--iid", f.iid, "add the i.i.d. sampling baseline");
            sub->add_option("--iid-seeds", f.iid_seeds, "number of baseline seeds")->check(CLI::PositiveNumber);
        }
        if (name == "trace-ops") {
            sub->add_option("--t", f.times, "comma-separated evaluation times");
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_code::config;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    ScenarioConfig cfg;
    try {
        cfg = load_config(f.config);
        if (f.seed) {
            cfg.seed = static_cast<std::uint64_t>(*f.seed);
        }
        if (!f.times.empty()) {
            cfg.times = parse_times(f.times);
        }
    } catch (const gatesim::Error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_code::config;
    }

    CommandOptions opts;
    opts.format = f.format == "csv" ? Format::csv : Format::json;
    opts.jobs = f.jobs;
    opts.iid = f.iid;
    opts.iid_seeds = f.iid_seeds;

    if (f.output.empty()) {
        return run_command(command, cfg, opts, std::cout, std::cerr);
    }
    std::ofstream out(f.output);
    if (!out) {
        std::cerr << "cannot open output file '" << f.output << "'\n";
        return exit_code::config;
    }
    return run_command(command, cfg, opts, out, std::cerr);
}
