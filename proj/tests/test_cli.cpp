#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"
#include "vem/errors.hpp"
#include "vem/run.hpp"

using namespace vem;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int status = -1;
    std::string output;
};

Outcome cli(const std::string& args) {
    const std::string cmd = std::string(VEM_CLI) + " " + args + " 2>&1";
    Outcome o;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) o.output.append(buf, n);
    const int raw = pclose(pipe);
    o.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("vem_cli_test_" + name);
    fs::remove_all(p);
    return p;
}

bool has(const std::string& text, const std::string& needle) { return text.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("describe") {
    const Outcome e2 = cli("describe example2");
    CHECK(e2.status == 0);
    CHECK(has(e2.output, "n=2, m=1"));
    CHECK(has(e2.output, "fixed tf=2"));
    CHECK(has(e2.output, "integrated values at N=41: 205"));
    CHECK(has(e2.output, "reference solution: closed form"));

    const Outcome e1 = cli("describe example1");
    CHECK(e1.status == 0);
    CHECK(has(e1.output, "n=1"));
    CHECK(has(e1.output, "fixed both ends"));

    const Outcome e3 = cli("describe example3");
    CHECK(has(e3.output, "free tf"));
    CHECK(has(e3.output, "terminal state: mixed"));
    CHECK(has(e3.output, "reference solution: none"));
    CHECK(has(e3.output, "reference tf: 0.8165"));

    CHECK(cli("describe nosuch").status == 1);
}

TEST_CASE("describe embeds a parseable boundary spec") {
    const std::string text = describe(example1());
    const auto at = text.find('{');
    REQUIRE(at != std::string::npos);
    const BoundarySpec b = boundary_from_json(text.substr(at, text.find('\n', at) - at));
    CHECK(b == example1().cov().boundary);
}

TEST_CASE("errors exit with status 1") {
    const Outcome unknown = cli("run --case nosuch --out " + scratch("unknown").string());
    CHECK(unknown.status == 1);
    CHECK(has(unknown.output, "unknown case"));

    const Outcome flag = cli("run --case example1 --no-such-flag 3");
    CHECK(flag.status == 1);

    const Outcome method = cli("run --case example1 --method euler");
    CHECK(method.status == 1);

    const fs::path blocker = scratch("blocker");
    std::ofstream(blocker) << "file";
    const Outcome dir = cli("run --case example1 --tau-max 1 --out " + (blocker / "sub").string());
    CHECK(dir.status == 1);
    CHECK(has(dir.output, "output directory"));
    fs::remove(blocker);

    CHECK(cli("").status == 1);
    CHECK(cli("run --case example1 --n-points 3").status == 1);
    CHECK(cli("run --case example1 --rel-tol -1").status == 1);
}

TEST_CASE("run example1 to tau = 6") {
    const fs::path out = scratch("e1");
    const Outcome r = cli("run --case example1 --tau-max 6 --out " + out.string());
    CHECK(r.status == 0);
    const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
    CHECK(summary["max_error"].get<double>() <= 1e-2);
    CHECK(summary["status"] == "tau_max");
    CHECK(summary["tau"].get<double>() == 6.0);
    CHECK(summary["final_tf"].is_null());

    std::istringstream diag(slurp(out / "diagnostics.csv"));
    std::string line;
    std::getline(diag, line);
    CHECK(line == "tau,J,J1,residual_norm,tf,descent_ok");
    int rows = 0;
    while (std::getline(diag, line)) ++rows;
    CHECK(rows == 7);

    std::istringstream snaps(slurp(out / "snapshots.csv"));
    std::getline(snaps, line);
    CHECK(line == "tau,node_index,t,y1");
    rows = 0;
    while (std::getline(snaps, line)) ++rows;
    CHECK(rows == 7 * 101);
}

TEST_CASE("repeated runs write identical files") {
    const fs::path a = scratch("rep_a"), b = scratch("rep_b");
    const std::string args = "run --case example2 --tau-max 5 --snapshot-every 0.5 --out ";
    CHECK(cli(args + a.string()).status == 0);
    CHECK(cli(args + b.string()).status == 0);
    CHECK(slurp(a / "snapshots.csv") == slurp(b / "snapshots.csv"));
    CHECK(slurp(a / "diagnostics.csv") == slurp(b / "diagnostics.csv"));
    auto ja = nlohmann::json::parse(slurp(a / "summary.json"));
    auto jb = nlohmann::json::parse(slurp(b / "summary.json"));
    ja.erase("wall_time_s");
    jb.erase("wall_time_s");
    CHECK(ja.dump() == jb.dump());
}

TEST_CASE("library run with overrides") {
    RunConfig cfg;
    cfg.case_name = "example2";
    cfg.nodes = 21;
    cfg.gain_k = 2.0;
    cfg.tau_max = 3.0;
    cfg.snapshot_every = 1.0;
    cfg.out_dir = scratch("lib");
    const RunSummary s = run(cfg);
    CHECK(s.state_dimension == 105);
    CHECK(s.tau == 3.0);
    CHECK(s.final_J1.has_value());
    CHECK(s.max_error.has_value());
    CHECK(s.descent_ok);
    CHECK(exit_status(s, cfg) == 0);
    RunConfig defaults = cfg;
    defaults.tau_max.reset();
    CHECK(exit_status(s, defaults) == 2);

    const EvolveOptions o = resolve_options(RunConfig{"example3"}, example3());
    CHECK(o.method == Method::ImplicitStiff);
    CHECK(o.tau_max == 400.0);
    CHECK_THROWS_AS(run(RunConfig{"nosuch"}), UsageError);
}

TEST_CASE("diagnostics J1 column never rises") {
    const fs::path out = scratch("mono");
    CHECK(cli("run --case example2 --tau-max 10 --snapshot-every 0.25 --out " + out.string()).status == 0);
    std::istringstream diag(slurp(out / "diagnostics.csv"));
    std::string line;
    std::getline(diag, line);
    double prev = 1e300;
    while (std::getline(diag, line)) {
        std::istringstream cells(line);
        std::string tau, J, J1;
        std::getline(cells, tau, ',');
        std::getline(cells, J, ',');
        std::getline(cells, J1, ',');
        const double v = std::stod(J1);
        CHECK(v <= prev + 1e-9);
        prev = v;
        CHECK(line.back() == '1');
    }
}
