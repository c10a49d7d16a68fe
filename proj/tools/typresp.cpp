// Command-line front end: one subcommand per workflow, a one-line JSON
// summary on stdout, progress on stderr.

#include "typresp/harness.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

namespace {

unsigned default_threads() {
    if (const char* env = std::getenv("TYPRESP_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return unsigned(v);
        } catch (const std::exception&) {
        }
        std::cerr << "typresp: ignoring invalid TYPRESP_THREADS='" << env << "'\n";
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void print_error(const std::string& command, const std::string& kind, const std::string& message) {
    nlohmann::ordered_json err = {{"command", command}, {"status", "error"}, {"error", kind}, {"message", message}};
    std::cout << err.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Typical nonlinear response of driven many-body systems"};
    app.set_version_flag("--version", std::string(typresp::kVersion));
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    unsigned threads = default_threads();
    bool quiet = false;

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"respond", "solve the response equation for gamma(t, t')"},
        {"approx", "evaluate the closed-form approximations"},
        {"simulate", "propagate the random-matrix model"},
        {"compare", "run a scenario: theory against simulation"},
        {"sweep", "run compare over a parameter grid"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "experiment JSON")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory")->required();
        sub->add_option("--seed", seed, "master seed (overrides the config)");
        sub->add_option("--threads", threads, "worker threads (default: $TYPRESP_THREADS or all cores)")
            ->check(CLI::PositiveNumber);
        sub->add_flag("--quiet", quiet, "no progress on stderr");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    const std::string command = app.get_subcommands().front()->get_name();
    const bool seed_given = app.get_subcommands().front()->count("--seed") > 0;
    try {
        auto config = typresp::load_config(config_path);
        if (seed_given) config.seed = seed;
        typresp::RunOptions opts;
        opts.threads = threads;
        if (!quiet) opts.log = [](const std::string& msg) { std::cerr << "typresp: " << msg << '\n'; };

        const auto start = std::chrono::steady_clock::now();
        typresp::RunSummary result;
        if (command == "respond") {
            result = typresp::run_respond(config, out_dir, opts);
        } else if (command == "approx") {
            result = typresp::run_approx(config, out_dir, opts);
        } else if (command == "simulate") {
            result = typresp::run_simulate(config, out_dir, opts);
        } else if (command == "compare") {
            result = typresp::run_compare(config, out_dir, opts);
        } else {
            result = typresp::run_sweep(config, out_dir, opts);
        }
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.summary["out"] = out_dir;
        result.summary["threads"] = threads;
        result.summary["elapsed_s"] = elapsed;
        std::cout << result.summary.dump() << std::endl;
        return 0;
    } catch (const typresp::ConfigError& e) {
        print_error(command, "config", e.what());
        return 2;
    } catch (const typresp::SolverError& e) {
        print_error(command, "solver", e.what());
        return 3;
    } catch (const std::exception& e) {
        print_error(command, "runtime", e.what());
        return 1;
    }
}
