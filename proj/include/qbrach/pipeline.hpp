#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "qbrach/bounds.hpp"
#include "qbrach/continuation.hpp"
#include "qbrach/dynamics.hpp"
#include "qbrach/liealg.hpp"

namespace qbrach {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kProblemSchema = "qbrach-problem/1";
inline constexpr const char* kProtocolSchema = "qbrach-protocol/1";

/// Validated solve request: the target gate, the control structure, the
/// energy budget, and the numeric policy for each phase. Produced by
/// load_problem; a default-constructed spec is not usable until target
/// and split data are filled in.
struct ProblemSpec {
  std::string name;

  Matrix target;            ///< SU(n) representative of the requested gate
  double target_phase = 0;  ///< global phase stripped from the input

  /// Named split, or explicit allowed coefficient vectors over the
  /// Pauli basis of num_qubits qubits (preset empty in that case).
  std::string preset;
  std::vector<Vector> allowed;
  int num_qubits = 0;

  double energy_bound = 1.0;

  double ode_tol = 1e-11;        ///< flow integrations
  double corrector_tol = 1e-10;  ///< continuation boundary-value residual
  double shoot_tol = 1e-12;      ///< final shot: residual and integrator

  double q_max = 100.0;
  double dq0 = 0.25;

  int max_shift = 2;
  double tstar_override = 0;  ///< > 0 skips the scan; units of 1/E

  unsigned rng_seed = 0;

  SubspaceSplit make_split() const;
};

/// Parses and validates the documented JSON schema. Every rejection
/// names the offending field. The target is projected to SU(n) via
/// to_special_unitary and the stripped phase recorded.
ProblemSpec parse_problem(const std::string& json_text);
ProblemSpec load_problem(const std::string& path);

/// Canonical JSON image of a spec (keys sorted, target stored as its
/// SU(n) representative); parse_problem accepts it, and the report's
/// config hash is computed over this text.
std::string problem_to_json(const ProblemSpec& spec);

/// Everything recorded about one matrix-log branch: how its q-path
/// fared and, when the path completed, the final brachistochrone
/// solution and its companion geodesic replay.
struct BranchReport {
  int index = 0;  ///< the paper's m, 1-based
  double seed_norm = 0;
  int sector_index = 0;
  bool special_case = false;

  QPath path;                   ///< empty samples when bootstrap failed
  double bootstrap_norm = 0;    ///< ||H^0|| of the accepted q'=5 root
  double bootstrap_fidelity = 0;

  bool converged = false;     ///< final shot found a brachistochrone
  double T = 0;               ///< protocol time, ||mu|| / E
  double infidelity = 1;      ///< 1 - replay fidelity of `protocol`
  double qbe_residual = 0;    ///< boundary-value residual of the shot
  ControlProtocol protocol;
  ControlProtocol geodesic_protocol;  ///< q_max replay for overlay plots

  std::string note;  ///< failure detail past the path stage, if any
  double wall_seconds = 0;
};

struct SolveReport {
  std::string name;
  std::string tool_version;
  std::string config_hash;  ///< FNV-1a over the canonical problem JSON

  double tstar = 0;  ///< pruning bound actually used, units of 1/E
  bool tstar_estimated = false;
  bool tstar_reliable = true;

  int num_candidates = 0;  ///< branch seeds below the pruning bound
  std::vector<BranchReport> branches;
  int best = -1;  ///< index into `branches`, -1 when nothing converged

  double wall_tstar = 0;
  double wall_solve = 0;
};

struct SolveOptions {
  int num_workers = 0;     ///< 0 = hardware concurrency
  std::string output_dir;  ///< non-empty: persist report and protocols
};

/// Steps 1-3 end to end: bound, enumerate, continue, shoot, rank.
/// Branch solves fan out to a worker pool; assembly is by branch index,
/// so the report is deterministic for a fixed spec. A run where no
/// branch converges still returns the full report.
SolveReport run_solve(const ProblemSpec& spec, const SolveOptions& options = {});

/// Report persistence: <dir>/report.json plus one CSV and JSON sidecar
/// per solved branch, written atomically (temp + rename).
void write_report(const SolveReport& report, const std::string& dir);
std::string report_to_json(const SolveReport& report);

/// Inverse of write_protocol_csv; accepts exactly its header layout.
ControlProtocol read_protocol_csv(std::istream& in);
ControlProtocol load_protocol(const std::string& csv_path);

/// Independent check of an exported protocol: re-integrates the
/// Schrodinger equation through a natural cubic spline of the sampled
/// mu columns and compares against the spec's target.
struct ReplayReport {
  double fidelity = 0;
  double norm_drift = 0;    ///< max relative |  ||mu(t)|| - E  | / E
  double qbe_residual = 0;  ///< RMS defect of the sampled (mu, lambda)
                            ///< against the brachistochrone equations
  bool stale = false;  ///< declared infidelity better than replay by > 1e-6
};
ReplayReport verify_protocol(const ControlProtocol& protocol,
                             const ProblemSpec& spec);
ReplayReport verify_protocol(const std::string& protocol_path,
                             const ProblemSpec& spec);

/// Plot-ready control curves: rows "t, mu_1..mu_dA". With an overlay
/// protocol (the q_max geodesic replay), its columns are appended as
/// "alpha_1..alpha_dA", resampled onto the same grid by fractional
/// time so both curve families share the t axis.
void emit_plot_data(const ControlProtocol& protocol, std::ostream& out,
                    const ControlProtocol* overlay = nullptr);

}  // namespace qbrach
