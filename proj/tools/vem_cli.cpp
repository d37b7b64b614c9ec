// vem: run the built-in benchmarks from the command line.
//
//   vem run --case example2 --out out/ex2
//   vem describe example3

#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "vem/errors.hpp"
#include "vem/run.hpp"

namespace {

template <typename T>
void optional_flag(CLI::App& app, const std::string& name, std::optional<T>& target,
                   const std::string& help) {
    app.add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

void print_summary(const vem::RunSummary& s) {
    std::printf("case %s: %s at tau=%g\n", s.case_name.c_str(), vem::to_string(s.status), s.tau);
    std::printf("  final residual %.3e, J %.10g", s.final_residual, s.final_J);
    if (s.final_J1) std::printf(", J1 %.3e", *s.final_J1);
    std::printf("\n");
    if (s.final_tf) std::printf("  tf %.6f\n", *s.final_tf);
    if (s.max_error) std::printf("  max error vs reference %.3e\n", *s.max_error);
    if (s.tf_error) std::printf("  |tf - reference tf| %.3e\n", *s.tf_error);
    if (s.transversality) std::printf("  |H(tf) + phi_tf| %.3e\n", std::abs(*s.transversality));
    std::printf("  %zu steps (%zu rejected), %.2f s\n", s.stats.accepted, s.stats.rejected, s.wall_time);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Variation-evolution solver for the built-in benchmark problems"};
    app.require_subcommand(1);

    vem::RunConfig cfg;
    std::string out_dir = ".";
    std::string guess = "published";
    const std::map<std::string, vem::Method> methods{{"rk45", vem::Method::ExplicitRK45},
                                                     {"stiff", vem::Method::ImplicitStiff}};

    CLI::App* run = app.add_subcommand("run", "Solve a case and write snapshots, diagnostics and a summary");
    run->add_option("--case", cfg.case_name, "Case name (example1, example2, example3)")->required();
    optional_flag(*run, "--n-points", cfg.nodes, "Grid nodes (default: the case's N)");
    optional_flag(*run, "--gain-k", cfg.gain_k, "Uniform gain K for every component");
    optional_flag(*run, "--gain-ktf", cfg.gain_ktf, "Gain of the terminal-time flow");
    run->add_option_function<std::string>(
           "--method", [&](const std::string& m) { cfg.method = methods.at(m); },
           "Integrator: rk45 or stiff (default: the case's)")
        ->check(CLI::IsMember({"rk45", "stiff"}));
    optional_flag(*run, "--rel-tol", cfg.rel_tol, "Relative integration tolerance");
    optional_flag(*run, "--abs-tol", cfg.abs_tol, "Absolute integration tolerance");
    optional_flag(*run, "--tau-max", cfg.tau_max, "Variation-time horizon (default: the published one)");
    run->add_option("--residual-tol", cfg.residual_tol, "Stop when the optimality residual drops below this")
        ->capture_default_str();
    run->add_option("--snapshot-every", cfg.snapshot_every, "Tau spacing of snapshots and diagnostics")
        ->capture_default_str();
    run->add_option("--guess", guess, "Initial guess: published or linear")
        ->check(CLI::IsMember({"published", "linear"}))
        ->capture_default_str();
    run->add_option("--out", out_dir, "Output directory")->capture_default_str();

    std::string describe_case;
    std::optional<std::size_t> describe_nodes;
    CLI::App* describe = app.add_subcommand("describe", "Print dimensions, boundary data and defaults of a case");
    describe->add_option("case", describe_case, "Case name")->required();
    optional_flag(*describe, "--n-points", describe_nodes, "Grid nodes for the dimension count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }

    try {
        if (*describe) {
            std::cout << vem::describe(vem::builtin_case(describe_case), describe_nodes);
            return 0;
        }
        cfg.out_dir = out_dir;
        cfg.guess = guess == "linear" ? vem::GuessKind::Linear : vem::GuessKind::Published;
        const vem::RunSummary s = vem::run(cfg);
        print_summary(s);
        return vem::exit_status(s, cfg);
    } catch (const vem::UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
    } catch (const vem::Error& e) {
        std::cerr << "solver aborted: " << e.what() << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
    }
    return 1;
}
