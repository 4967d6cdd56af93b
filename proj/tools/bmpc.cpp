#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "bmpc/bench.hpp"
#include "bmpc/scenario_io.hpp"
#include "bmpc/trace_io.hpp"

namespace {

constexpr int kExitOk            = 0;
constexpr int kExitScenarioError = 2;
constexpr int kExitRunFailure    = 3;

/// BMPC_OUTPUT_DIR, when set, replaces the directory given on the command line.
std::filesystem::path output_dir(const std::string & requested)
{
  if (const char * env = std::getenv("BMPC_OUTPUT_DIR"); env != nullptr && *env != '\0') { return env; }
  return requested;
}

struct RunOverrides
{
  std::optional<std::string> method;
  std::optional<int> knots;
  std::optional<int> joint_points;
  std::optional<double> horizon;
  std::optional<double> time_limit;
  std::optional<double> margin;
  bool admittance{false};
  bool no_admittance{false};
};

void apply(const RunOverrides & o, bmpc::ScenarioConfig & sc)
{
  if (o.method) {
    if (*o.method == "bezier") {
      sc.method = bmpc::PlannerMethod::kBezier;
    } else if (*o.method == "discretized") {
      sc.method = bmpc::PlannerMethod::kDiscretized;
    } else {
      throw bmpc::ScenarioError("--method must be bezier or discretized");
    }
  }
  if (o.knots) { sc.wholebody.knots = *o.knots; }
  if (o.joint_points) { sc.wholebody.joint_points = *o.joint_points; }
  if (o.horizon) { sc.wholebody.horizon = *o.horizon; }
  if (o.time_limit) { sc.time_limit = *o.time_limit; }
  if (o.margin) { sc.planner_margin = *o.margin; }
  if (o.admittance) { sc.wholebody.admittance = true; }
  if (o.no_admittance) { sc.wholebody.admittance = false; }
  sc.validate();
}

void write_report(const bmpc::BenchmarkReport & rep, const std::filesystem::path & dir, const std::string & stem)
{
  std::cout << rep.table();
  std::filesystem::create_directories(dir);
  std::ofstream(dir / (stem + ".json")) << rep.to_json().dump(2) << '\n';
  std::cout << "report written to " << (dir / (stem + ".json")).string() << '\n';
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Bilevel Bezier MPC: closed-loop runs, benchmarks and scenario checks"};
  app.require_subcommand(1);

  // run
  auto * run = app.add_subcommand("run", "run a scenario in closed loop and write trace.csv, plans.csv, summary.json and SVG plots");
  std::string scenario_path, run_out = "out";
  RunOverrides ov;
  bool no_plots = false, verbose = false;
  run->add_option("scenario", scenario_path, "scenario file (JSON)")->required();
  run->add_option("output", run_out, "output directory (BMPC_OUTPUT_DIR overrides)");
  run->add_option("--method", ov.method, "whole-body planner: bezier or discretized");
  run->add_option("--knots", ov.knots, "whole-body knots K+1");
  run->add_option("--joint-points", ov.joint_points, "whole-body joint control points Nq+1");
  run->add_option("--horizon", ov.horizon, "whole-body horizon [s]");
  run->add_option("--time-limit", ov.time_limit, "simulated time limit [s]");
  run->add_option("--margin", ov.margin, "planner margin added to every d_safe [m]");
  run->add_flag("--admittance", ov.admittance, "enable predictive admittance");
  run->add_flag("--no-admittance", ov.no_admittance, "disable predictive admittance");
  run->add_flag("--no-plots", no_plots, "skip the SVG plots");
  run->add_flag("--verbose", verbose, "report non-converged solves");

  // validate
  auto * validate = app.add_subcommand("validate", "parse and check a scenario without running it");
  std::string validate_path;
  validate->add_option("scenario", validate_path, "scenario file (JSON)")->required();

  // bench
  auto * bench = app.add_subcommand("bench", "benchmark suites");
  bench->require_subcommand(1);
  std::string bench_out = "out";
  bench->add_option("--out", bench_out, "report directory (BMPC_OUTPUT_DIR overrides)");
  auto * t1 = bench->add_subcommand("table1", "MPC-T formulations: counts, solve time, unit-norm error");
  int t1_knots = 8, t1_cps = 8, t1_repeats = 10;
  t1->add_option("--knots", t1_knots, "task knots K+1");
  t1->add_option("--control-points", t1_cps, "task control points N+1");
  t1->add_option("--repeats", t1_repeats, "cold solves per formulation");
  auto * t2 = bench->add_subcommand("table2", "sine tracking: discretized vs Bezier at 6 and 26 knots");
  double t2_horizon = 5.0, t2_duration = 8.0;
  t2->add_option("--horizon", t2_horizon, "whole-body horizon [s]");
  t2->add_option("--duration", t2_duration, "simulated time per configuration [s]");
  auto * sc = bench->add_subcommand("scaling", "solve time over horizons and capabilities");
  std::vector<double> sc_horizons{1.0, 2.0, 3.0};
  int sc_knots = 26;
  double sc_duration = 3.0;
  sc->add_option("--horizons", sc_horizons, "horizons [s]")->delimiter(',');
  sc->add_option("--knots", sc_knots, "knots K+1 for both methods");
  sc->add_option("--duration", sc_duration, "simulated time per cell [s]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitScenarioError;
  }

  try {
    if (*validate) {
      const bmpc::ScenarioConfig cfg = bmpc::load_scenario(validate_path);
      std::cout << "scenario '" << cfg.name << "' is valid (" << (cfg.mode == bmpc::ScenarioMode::kTask ? "task" : "tracking") << ", "
                << bmpc::to_string(cfg.method) << ", " << cfg.obstacles.size() << " obstacles)\n";
      return kExitOk;
    }
    if (*run) {
      bmpc::ScenarioConfig cfg = bmpc::load_scenario(scenario_path);
      apply(ov, cfg);
      bmpc::RunOptions opt;
      opt.verbose                 = verbose;
      const bmpc::RunTrace trace  = bmpc::run_closed_loop(cfg, opt);
      const std::filesystem::path dir = output_dir(run_out);
      bmpc::write_run_outputs(trace, cfg, bmpc::load_model(cfg.model), dir, !no_plots);
      const auto & s = trace.summary;
      std::cout << cfg.name << ": " << s.outcome << " after " << s.loops << " loops (" << s.final_time << " s)";
      if (!s.message.empty()) { std::cout << ", " << s.message; }
      std::cout << "\n  min clearance hands " << s.min_hand_clearance << " m, base " << s.min_base_clearance << " m\n"
                << "  mean solve time task " << 1e3 * s.mean_task_time << " ms, whole-body " << 1e3 * s.mean_wb_time << " ms\n"
                << "  output in " << dir.string() << '\n';
      return s.failed() ? kExitRunFailure : kExitOk;
    }
    if (*bench) {
      const std::filesystem::path dir = output_dir(bench_out);
      if (*t1) { write_report(bmpc::bench_table1(t1_knots, t1_cps, t1_repeats), dir, "table1"); }
      if (*t2) { write_report(bmpc::bench_table2(t2_horizon, t2_duration), dir, "table2"); }
      if (*sc) { write_report(bmpc::bench_scaling(sc_horizons, sc_knots, sc_duration), dir, "scaling"); }
      return kExitOk;
    }
  } catch (const bmpc::ScenarioError & e) {
    std::cerr << "scenario error: " << e.what() << '\n';
    return kExitScenarioError;
  } catch (const bmpc::ParseError & e) {
    std::cerr << "model error: " << e.what() << '\n';
    return kExitScenarioError;
  } catch (const bmpc::DomainError & e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitScenarioError;
  } catch (const std::exception & e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return kExitRunFailure;
  }
  return kExitOk;
}
