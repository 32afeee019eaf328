// Command-line front end: solve, bound, branches, verify, plot-data.
//
// Exit codes: 0 on success with a converged result, 2 when a solve or
// verification finishes without one, 1 for usage and I/O errors.
// QBRACH_LOG=quiet|info|debug controls progress output on stderr.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "qbrach/pipeline.hpp"

using namespace qbrach;

namespace {

std::string sector_label(int s) {
  switch (s & 3) {
    case 0: return "1";
    case 1: return "i";
    case 2: return "-1";
    default: return "-i";
  }
}

// Spec fields exposed as flags; a flag that was passed wins over the
// problem file, which wins over built-in defaults.
struct SpecFlags {
  double energy_bound = 0, q_max = 0, dq0 = 0, tstar = -1;
  double ode_tol = 0, corrector_tol = 0, shoot_tol = 0;
  int max_shift = -1;
  long long rng_seed = -1;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--energy-bound", energy_bound, "energy bound E");
    cmd->add_option("--q-max", q_max, "continuation endpoint");
    cmd->add_option("--dq0", dq0, "initial continuation step");
    cmd->add_option("--tstar", tstar, "pruning bound override, units 1/E");
    cmd->add_option("--ode-tol", ode_tol, "flow integration tolerance");
    cmd->add_option("--corrector-tol", corrector_tol,
                    "continuation corrector tolerance");
    cmd->add_option("--shoot-tol", shoot_tol, "final shot tolerance");
    cmd->add_option("--max-shift", max_shift, "log-branch shift bound");
    cmd->add_option("--rng-seed", rng_seed, "seed for all stochastic phases");
  }

  void apply(const CLI::App* cmd, ProblemSpec& spec) const {
    if (cmd->count("--energy-bound")) spec.energy_bound = energy_bound;
    if (cmd->count("--q-max")) spec.q_max = q_max;
    if (cmd->count("--dq0")) spec.dq0 = dq0;
    if (cmd->count("--tstar")) spec.tstar_override = tstar;
    if (cmd->count("--ode-tol")) spec.ode_tol = ode_tol;
    if (cmd->count("--corrector-tol")) spec.corrector_tol = corrector_tol;
    if (cmd->count("--shoot-tol")) spec.shoot_tol = shoot_tol;
    if (cmd->count("--max-shift")) spec.max_shift = max_shift;
    if (cmd->count("--rng-seed"))
      spec.rng_seed = static_cast<unsigned>(rng_seed);
    if (!(spec.energy_bound > 0))
      throw CLI::ValidationError("--energy-bound", "must be positive");
  }
};

int cmd_solve(const std::string& problem, const SpecFlags& flags,
              const CLI::App* cmd, const std::string& output_dir,
              int workers) {
  ProblemSpec spec = load_problem(problem);
  flags.apply(cmd, spec);
  SolveOptions options;
  options.num_workers = workers;
  options.output_dir = output_dir;
  SolveReport report = run_solve(spec, options);

  std::printf("T* = %.6g%s\n", report.tstar,
              report.tstar_estimated ? " (scanned)" : " (override)");
  std::printf("%d candidate branch(es)\n", report.num_candidates);
  for (const BranchReport& br : report.branches) {
    std::printf("branch %d: ||H|| = %.4f, sector %s%s, %s", br.index,
                br.seed_norm, sector_label(br.sector_index).c_str(),
                br.special_case ? ", special case" : "",
                br.converged ? "" : "not ");
    if (br.converged)
      std::printf("T = %.6f, infidelity = %.3e\n", br.T, br.infidelity);
    else
      std::printf("converged (%s%s)\n", br.path.reason.c_str(),
                  br.note.empty() ? "" : ("; " + br.note).c_str());
  }
  if (report.best >= 0) {
    const BranchReport& best = report.branches[report.best];
    std::printf("best: branch %d, T = %.10g, infidelity = %.3e\n", best.index,
                best.T, best.infidelity);
  } else {
    std::printf("no branch converged\n");
  }
  if (!output_dir.empty())
    std::printf("report written to %s/report.json\n", output_dir.c_str());
  return report.best >= 0 ? 0 : 2;
}

int cmd_bound(const std::string& problem, const SpecFlags& flags,
              const CLI::App* cmd, ScanConfig scan,
              const std::string& scan_out) {
  ProblemSpec spec = load_problem(problem);
  flags.apply(cmd, spec);
  SubspaceSplit split = spec.make_split();
  scan.rng_seed = spec.rng_seed;
  TstarEstimate est = estimate_Tstar(split, spec.target, 1.0, scan);
  double tstar = est.value / spec.energy_bound;
  std::printf("T* = %.10g%s\n", tstar,
              est.reliable ? "" : " (scan exhausted; low confidence)");
  if (!scan_out.empty()) {
    std::ofstream out(scan_out, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + scan_out);
    write_scan_csv(est, out);
    std::printf("scan written to %s\n", scan_out.c_str());
  }
  return est.reliable ? 0 : 2;
}

int cmd_branches(const std::string& problem, const SpecFlags& flags,
                 const CLI::App* cmd, double max_norm) {
  ProblemSpec spec = load_problem(problem);
  flags.apply(cmd, spec);
  SubspaceSplit split = spec.make_split();
  auto seeds = log_branches(spec.target, split, max_norm, spec.max_shift);
  std::printf("%zu branch(es) with ||H|| <= %g\n", seeds.size(), max_norm);
  std::printf("%4s  %10s  %6s  %s\n", "m", "||H||", "sector", "shifts");
  for (const BranchSeed& seed : seeds) {
    std::string shifts;
    for (std::size_t i = 0; i < seed.shifts.size(); ++i)
      shifts += (i ? "," : "") + std::to_string(seed.shifts[i]);
    std::printf("%4d  %10.4f  %6s  (%s)%s\n", seed.index, seed.hs_norm,
                sector_label(seed.sector_index).c_str(), shifts.c_str(),
                detect_special_case(split, seed.coeffs) ? "  [special]" : "");
  }
  return 0;
}

int cmd_verify(const std::string& protocol_path, const std::string& problem,
               const SpecFlags& flags, const CLI::App* cmd) {
  ProblemSpec spec = load_problem(problem);
  flags.apply(cmd, spec);
  ReplayReport rep = verify_protocol(protocol_path, spec);
  std::printf("replay fidelity   = %.12f\n", rep.fidelity);
  std::printf("norm drift        = %.3e\n", rep.norm_drift);
  std::printf("QBE defect (rms)  = %.3e\n", rep.qbe_residual);
  if (rep.stale) {
    std::printf("STALE: replay fidelity falls short of the declared value\n");
    return 2;
  }
  return 0;
}

int cmd_plot(const std::string& protocol_path, const std::string& overlay_path,
             const std::string& out_path) {
  ControlProtocol protocol = load_protocol(protocol_path);
  ControlProtocol overlay;
  bool with_overlay = !overlay_path.empty();
  if (with_overlay) overlay = load_protocol(overlay_path);
  std::ostringstream text;
  emit_plot_data(protocol, text, with_overlay ? &overlay : nullptr);
  if (out_path.empty()) {
    std::cout << text.str();
  } else {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << text.str();
    std::printf("plot data written to %s\n", out_path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-optimal gate protocols via brachistochrone continuation"};
  app.require_subcommand(1);

  std::string problem, protocol_path, output_dir, scan_out, overlay_path,
      out_path;
  int workers = 0;
  double max_norm = 10.0;
  SpecFlags flags;
  ScanConfig scan;

  CLI::App* solve = app.add_subcommand("solve", "run the full pipeline");
  solve->add_option("problem", problem, "problem JSON file")->required();
  solve->add_option("-o,--output", output_dir, "directory for report files");
  solve->add_option("--workers", workers, "branch worker pool size");
  flags.add_to(solve);

  CLI::App* bound = app.add_subcommand("bound", "estimate the T* upper bound");
  bound->add_option("problem", problem, "problem JSON file")->required();
  bound->add_option("--t-min", scan.t_min, "scan start");
  bound->add_option("--t-max", scan.t_max, "scan end");
  bound->add_option("--t-step", scan.t_step, "scan grid step");
  bound->add_option("--threshold", scan.fidelity_threshold,
                    "fidelity that counts as reachable");
  bound->add_option("--segments", scan.num_segments, "protocol segments");
  bound->add_option("--modes", scan.num_modes, "cosine modes per control");
  bound->add_option("--restarts", scan.num_restarts, "optimizer restarts");
  bound->add_option("--iters", scan.max_iters, "ascent iterations");
  bound->add_option("--scan-out", scan_out, "write the scan table as CSV");
  flags.add_to(bound);

  CLI::App* branches =
      app.add_subcommand("branches", "list matrix-log branch seeds");
  branches->add_option("problem", problem, "problem JSON file")->required();
  branches->add_option("--max-norm", max_norm, "listing cutoff on ||H||");
  flags.add_to(branches);

  CLI::App* verify =
      app.add_subcommand("verify", "replay an exported protocol");
  verify->add_option("protocol", protocol_path, "protocol CSV")->required();
  verify->add_option("problem", problem, "problem JSON file")->required();
  flags.add_to(verify);

  CLI::App* plot = app.add_subcommand("plot-data", "emit plot-ready curves");
  plot->add_option("protocol", protocol_path, "protocol CSV")->required();
  plot->add_option("--overlay", overlay_path,
                   "geodesic protocol CSV for alpha columns");
  plot->add_option("-o,--output", out_path, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (solve->parsed())
      return cmd_solve(problem, flags, solve, output_dir, workers);
    if (bound->parsed())
      return cmd_bound(problem, flags, bound, scan, scan_out);
    if (branches->parsed())
      return cmd_branches(problem, flags, branches, max_norm);
    if (verify->parsed())
      return cmd_verify(protocol_path, problem, flags, verify);
    if (plot->parsed())
      return cmd_plot(protocol_path, overlay_path, out_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
