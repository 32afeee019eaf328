#include "qbrach/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "qbrach/shooting.hpp"

namespace qbrach {

namespace {

using nlohmann::json;

[[noreturn]] void reject(const std::string& field, const std::string& why) {
  throw std::invalid_argument("problem file: field \"" + field + "\" " + why);
}

int verbosity() {
  static const int level = [] {
    const char* env = std::getenv("QBRACH_LOG");
    if (!env) return 1;
    std::string v(env);
    if (v == "quiet" || v == "0") return 0;
    if (v == "debug" || v == "2") return 2;
    return 1;
  }();
  return level;
}

void log_info(const std::string& line) {
  if (verbosity() >= 1) std::fprintf(stderr, "[qbrach] %s\n", line.c_str());
}

double num_or(const json& obj, const char* key, double fallback,
              const std::string& prefix) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) reject(prefix + key, "must be a number");
  return v.get<double>();
}

Eigen::MatrixXd read_square(const json& rows, const std::string& path) {
  if (!rows.is_array() || rows.empty())
    reject(path, "must be a non-empty array of rows");
  const std::size_t n = rows.size();
  Eigen::MatrixXd m(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    const json& row = rows.at(r);
    if (!row.is_array() || row.size() != n)
      reject(path, "must be square (row " + std::to_string(r) + ")");
    for (std::size_t c = 0; c < n; ++c) {
      if (!row.at(c).is_number()) reject(path, "must hold numbers only");
      m(r, c) = row.at(c).get<double>();
    }
  }
  return m;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

double replay_fidelity(const SubspaceSplit& split, const Trajectory& traj,
                       const Matrix& target, double tol) {
  Trajectory rp = integrate_schrodinger(
      split,
      [&](double t) { return split.project_allowed(traj.generator_at(t)); },
      traj.T, tol, 64);
  return gate_fidelity(rp.unitaries.back(), target);
}

/// Natural cubic splines through shared abscissae, one per column.
class ColumnSplines {
 public:
  ColumnSplines(const std::vector<double>& t, const std::vector<Vector>& rows) {
    const int n = static_cast<int>(t.size());
    const int d = rows.empty() ? 0 : static_cast<int>(rows[0].size());
    t_ = t;
    y_.resize(n, d);
    for (int i = 0; i < n; ++i) y_.row(i) = rows[i].transpose();
    m_ = Eigen::MatrixXd::Zero(n, d);
    if (n < 3 || d == 0) return;
    // Tridiagonal system for the interior second derivatives.
    Eigen::VectorXd diag(n - 2), sub(n - 2), sup(n - 2);
    Eigen::MatrixXd rhs(n - 2, d);
    for (int i = 1; i + 1 < n; ++i) {
      double h0 = t[i] - t[i - 1], h1 = t[i + 1] - t[i];
      diag[i - 1] = 2.0 * (h0 + h1);
      sub[i - 1] = h0;
      sup[i - 1] = h1;
      rhs.row(i - 1) = 6.0 * ((y_.row(i + 1) - y_.row(i)) / h1 -
                              (y_.row(i) - y_.row(i - 1)) / h0);
    }
    for (int i = 1; i < n - 2; ++i) {  // Thomas elimination
      double w = sub[i] / diag[i - 1];
      diag[i] -= w * sup[i - 1];
      rhs.row(i) -= w * rhs.row(i - 1);
    }
    m_.row(n - 2) = rhs.row(n - 3) / diag[n - 3];
    for (int i = n - 4; i >= 0; --i)
      m_.row(i + 1) = (rhs.row(i) - sup[i] * m_.row(i + 2)) / diag[i];
  }

  Vector eval(double t) const { return piece(t, false); }
  Vector derivative(double t) const { return piece(t, true); }

 private:
  Vector piece(double t, bool deriv) const {
    const int n = static_cast<int>(t_.size());
    if (n == 1) return deriv ? Vector::Zero(y_.cols()) : Vector(y_.row(0));
    t = std::clamp(t, t_.front(), t_.back());
    int k = static_cast<int>(std::upper_bound(t_.begin(), t_.end(), t) -
                             t_.begin()) -
            1;
    k = std::clamp(k, 0, n - 2);
    double h = t_[k + 1] - t_[k];
    double a = (t_[k + 1] - t) / h, b = (t - t_[k]) / h;
    if (!deriv) {
      return (a * y_.row(k) + b * y_.row(k + 1) +
              ((a * a * a - a) * m_.row(k) + (b * b * b - b) * m_.row(k + 1)) *
                  (h * h) / 6.0)
          .transpose();
    }
    return ((y_.row(k + 1) - y_.row(k)) / h +
            ((3 * b * b - 1) * m_.row(k + 1) - (3 * a * a - 1) * m_.row(k)) *
                h / 6.0)
        .transpose();
  }

  std::vector<double> t_;
  Eigen::MatrixXd y_;
  Eigen::MatrixXd m_;
};

void atomic_write(const std::filesystem::path& path, const std::string& text) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string protocol_file_name(int branch_index) {
  return "branch_" + std::to_string(branch_index) + "_protocol.csv";
}

const char* status_name(PathStatus s) {
  switch (s) {
    case PathStatus::completed: return "completed";
    case PathStatus::terminated: return "terminated";
    default: return "extending";
  }
}

}  // namespace

SubspaceSplit ProblemSpec::make_split() const {
  if (!preset.empty()) return SubspaceSplit::preset(preset);
  return SubspaceSplit::build(build_pauli_basis(num_qubits), allowed);
}

ProblemSpec parse_problem(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("problem file: not valid JSON (") +
                                e.what() + ")");
  }
  if (!j.is_object()) reject("(root)", "must be an object");
  if (!j.contains("schema") || !j.at("schema").is_string())
    reject("schema", "is required");
  if (j.at("schema").get<std::string>() != kProblemSchema)
    reject("schema", std::string("must be \"") + kProblemSchema + "\"");

  ProblemSpec spec;
  if (j.contains("name")) {
    if (!j.at("name").is_string()) reject("name", "must be a string");
    spec.name = j.at("name").get<std::string>();
  }

  if (!j.contains("target") || !j.at("target").is_object())
    reject("target", "is required (object with \"real\" and \"imag\")");
  const json& tj = j.at("target");
  if (!tj.contains("real") || !tj.contains("imag"))
    reject("target", "must carry row-major \"real\" and \"imag\"");
  Eigen::MatrixXd re = read_square(tj.at("real"), "target.real");
  Eigen::MatrixXd im = read_square(tj.at("imag"), "target.imag");
  if (re.rows() != im.rows()) reject("target", "real and imag disagree in size");
  Matrix u = re.cast<Complex>() + Complex(0, 1) * im.cast<Complex>();
  if (unitarity_defect(u) > 1e-8) reject("target", "is not unitary within 1e-8");
  auto su = to_special_unitary(u);
  spec.target = su.first;
  spec.target_phase = su.second;

  if (!j.contains("split") || !j.at("split").is_object())
    reject("split", "is required");
  const json& sj = j.at("split");
  if (sj.contains("preset")) {
    if (!sj.at("preset").is_string()) reject("split.preset", "must be a string");
    spec.preset = sj.at("preset").get<std::string>();
  } else {
    if (!sj.contains("num_qubits") || !sj.at("num_qubits").is_number_integer())
      reject("split.num_qubits", "is required for explicit splits");
    spec.num_qubits = sj.at("num_qubits").get<int>();
    if (spec.num_qubits < 1 || spec.num_qubits > 4)
      reject("split.num_qubits", "must lie in [1, 4]");
    if (!sj.contains("allowed") || !sj.at("allowed").is_array() ||
        sj.at("allowed").empty())
      reject("split.allowed", "must be a non-empty array of vectors");
    const int dim = 1 << spec.num_qubits;
    const int d = dim * dim - 1;
    for (const json& vj : sj.at("allowed")) {
      if (!vj.is_array() || static_cast<int>(vj.size()) != d)
        reject("split.allowed",
               "vectors must have length " + std::to_string(d));
      Vector v(d);
      for (int i = 0; i < d; ++i) {
        if (!vj.at(i).is_number())
          reject("split.allowed", "must hold numbers only");
        v[i] = vj.at(i).get<double>();
      }
      spec.allowed.push_back(v);
    }
  }

  spec.energy_bound = num_or(j, "energy_bound", 1.0, "");
  if (!(spec.energy_bound > 0))
    reject("energy_bound", "(the bound E) must be positive");

  if (j.contains("tolerances")) {
    const json& t = j.at("tolerances");
    if (!t.is_object()) reject("tolerances", "must be an object");
    spec.ode_tol = num_or(t, "ode", spec.ode_tol, "tolerances.");
    spec.corrector_tol = num_or(t, "corrector", spec.corrector_tol,
                                "tolerances.");
    spec.shoot_tol = num_or(t, "shoot", spec.shoot_tol, "tolerances.");
    if (!(spec.ode_tol > 0 && spec.ode_tol <= 1e-2))
      reject("tolerances.ode", "must lie in (0, 1e-2]");
    if (!(spec.corrector_tol > 0 && spec.corrector_tol <= 1e-2))
      reject("tolerances.corrector", "must lie in (0, 1e-2]");
    if (!(spec.shoot_tol > 0 && spec.shoot_tol <= 1e-2))
      reject("tolerances.shoot", "must lie in (0, 1e-2]");
  }

  if (j.contains("q_schedule")) {
    const json& q = j.at("q_schedule");
    if (!q.is_object()) reject("q_schedule", "must be an object");
    spec.q_max = num_or(q, "q_max", spec.q_max, "q_schedule.");
    spec.dq0 = num_or(q, "dq0", spec.dq0, "q_schedule.");
    if (!(spec.q_max > 1)) reject("q_schedule.q_max", "must exceed 1");
    if (!(spec.dq0 > 0)) reject("q_schedule.dq0", "must be positive");
  }

  if (j.contains("branches")) {
    const json& b = j.at("branches");
    if (!b.is_object()) reject("branches", "must be an object");
    if (b.contains("max_shift")) {
      if (!b.at("max_shift").is_number_integer())
        reject("branches.max_shift", "must be an integer");
      spec.max_shift = b.at("max_shift").get<int>();
      if (spec.max_shift < 0 || spec.max_shift > 6)
        reject("branches.max_shift", "must lie in [0, 6]");
    }
    spec.tstar_override = num_or(b, "tstar", 0.0, "branches.");
    if (spec.tstar_override < 0) reject("branches.tstar", "must be >= 0");
  }

  if (j.contains("rng_seed")) {
    if (!j.at("rng_seed").is_number_integer())
      reject("rng_seed", "must be an integer");
    long long seed = j.at("rng_seed").get<long long>();
    if (seed < 0 || seed > std::numeric_limits<unsigned>::max())
      reject("rng_seed", "must fit an unsigned 32-bit integer");
    spec.rng_seed = static_cast<unsigned>(seed);
  }

  SubspaceSplit split = [&spec] {
    try {
      return spec.make_split();
    } catch (const std::exception& e) {
      reject("split", std::string("is invalid: ") + e.what());
    }
  }();
  if (split.hilbert_dim() != spec.target.rows())
    reject("split", "dimension does not match the target");
  return spec;
}

ProblemSpec load_problem(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open problem file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_problem(buffer.str());
}

std::string problem_to_json(const ProblemSpec& spec) {
  json j;
  j["schema"] = kProblemSchema;
  if (!spec.name.empty()) j["name"] = spec.name;
  const Eigen::Index n = spec.target.rows();
  json re = json::array(), im = json::array();
  for (Eigen::Index r = 0; r < n; ++r) {
    json row_re = json::array(), row_im = json::array();
    for (Eigen::Index c = 0; c < n; ++c) {
      row_re.push_back(spec.target(r, c).real());
      row_im.push_back(spec.target(r, c).imag());
    }
    re.push_back(row_re);
    im.push_back(row_im);
  }
  j["target"] = {{"real", re}, {"imag", im}};
  j["target_phase"] = spec.target_phase;
  if (!spec.preset.empty()) {
    j["split"] = {{"preset", spec.preset}};
  } else {
    json av = json::array();
    for (const Vector& v : spec.allowed) {
      json vj = json::array();
      for (Eigen::Index i = 0; i < v.size(); ++i) vj.push_back(v[i]);
      av.push_back(vj);
    }
    j["split"] = {{"num_qubits", spec.num_qubits}, {"allowed", av}};
  }
  j["energy_bound"] = spec.energy_bound;
  j["tolerances"] = {{"ode", spec.ode_tol},
                     {"corrector", spec.corrector_tol},
                     {"shoot", spec.shoot_tol}};
  j["q_schedule"] = {{"q_max", spec.q_max}, {"dq0", spec.dq0}};
  j["branches"] = {{"max_shift", spec.max_shift},
                   {"tstar", spec.tstar_override}};
  j["rng_seed"] = spec.rng_seed;
  return j.dump(2);
}

SolveReport run_solve(const ProblemSpec& spec, const SolveOptions& options) {
  const auto t_start = std::chrono::steady_clock::now();
  SubspaceSplit split = spec.make_split();
  if (split.hilbert_dim() != spec.target.rows())
    throw std::invalid_argument("split dimension does not match the target");

  SolveReport report;
  report.name = spec.name;
  report.tool_version = kToolVersion;
  report.config_hash = fnv1a_hex(problem_to_json(spec));

  // Step 1: the pruning bound. The scan runs in E = 1 units; physics is
  // scale-covariant, so the bound just divides by E.
  if (spec.tstar_override > 0) {
    report.tstar = spec.tstar_override;
    report.tstar_estimated = false;
  } else {
    ScanConfig scan;
    scan.rng_seed = spec.rng_seed;
    TstarEstimate est = estimate_Tstar(split, spec.target, 1.0, scan);
    report.tstar = est.value / spec.energy_bound;
    report.tstar_estimated = true;
    report.tstar_reliable = est.reliable;
  }
  report.wall_tstar = seconds_since(t_start);
  log_info("T* = " + std::to_string(report.tstar) +
           (report.tstar_estimated ? " (scanned)" : " (override)"));

  const double max_norm = spec.energy_bound * report.tstar * 1.05;
  std::vector<BranchSeed> seeds =
      log_branches(spec.target, split, max_norm, spec.max_shift);
  report.num_candidates = static_cast<int>(seeds.size());
  log_info(std::to_string(seeds.size()) + " branch seeds below ||H|| = " +
           std::to_string(max_norm));

  const auto t_solve = std::chrono::steady_clock::now();
  report.branches.resize(seeds.size());

  ContinuationOptions copts;
  copts.q_max = spec.q_max;
  copts.dq0 = spec.dq0;
  copts.ode_tol = spec.ode_tol;
  copts.corrector_tol = spec.corrector_tol;
  copts.record_at = {spec.q_max};

  auto solve_one = [&](int i) {
    const BranchSeed& seed = seeds[i];
    BranchReport& br = report.branches[i];
    const auto t0 = std::chrono::steady_clock::now();
    br.index = seed.index;
    br.seed_norm = seed.hs_norm;
    br.sector_index = seed.sector_index;
    const Matrix target = seed.phase_sector * spec.target;
    br.special_case = detect_special_case(split, seed.coeffs);

    // Step 2: walk the branch through the q-homotopy.
    try {
      if (br.special_case) {
        // The q = 1 deformation derivative vanishes; restart from
        // scratch at q' = 5 and continue from the lowest-norm root.
        auto roots = bootstrap_special(
            split, target, 5.0, 60,
            spec.rng_seed + 12345u + 1000u * static_cast<unsigned>(seed.index));
        if (roots.empty()) {
          br.path.branch_index = seed.index;
          br.path.status = PathStatus::terminated;
          br.path.reason = "special-case bootstrap found no roots";
          br.wall_seconds = seconds_since(t0);
          return;
        }
        br.bootstrap_norm = roots.front().initial_data.norm();
        br.bootstrap_fidelity = replay_fidelity(
            split, roots.front().trajectory, target, spec.ode_tol);
        br.path =
            continue_path(split, target, 5.0, roots.front().initial_data, copts);
        br.path.branch_index = seed.index;
      } else {
        br.path = continue_path(split, target, seed, copts);
      }
    } catch (const std::exception& e) {
      br.path.branch_index = seed.index;
      br.path.status = PathStatus::terminated;
      br.path.reason = std::string("continuation error: ") + e.what();
    }

    if (br.path.status == PathStatus::completed && !br.path.samples.empty()) {
      const PathSample& end = br.path.samples.back();
      const int dA = split.dim_allowed(), dB = split.dim_forbidden();

      // Step 3: the adjoint correspondence lambda = q beta seeds the
      // exact brachistochrone shot from the q_max endpoint.
      try {
        Vector x0(split.dim());
        x0.head(dA) = end.h0.head(dA);
        x0.tail(dB) = spec.q_max * end.h0.tail(dB);
        ShootingProblem prob;
        prob.family = FlowFamily::brachistochrone;
        prob.split = &split;
        prob.target = target;
        prob.tol = spec.shoot_tol;
        ShootingOptions sopts;
        sopts.residual_tol = spec.shoot_tol;
        ShootingResult shot = shoot(prob, x0, sopts);
        br.converged = shot.converged;
        if (shot.converged) {
          br.qbe_residual = shot.residual_norm;
          br.protocol = normalize_protocol(shot.trajectory, spec.energy_bound);
          br.protocol.branch_index = seed.index;
          br.T = br.protocol.T;
          ReplayReport rr = verify_protocol(br.protocol, spec);
          br.infidelity = 1.0 - rr.fidelity;
          br.protocol.achieved_infidelity = br.infidelity;
        }
      } catch (const std::exception& e) {
        br.converged = false;
        br.note = std::string("final shot: ") + e.what();
      }

      // Companion geodesic replay at q_max, kept for overlay plots and
      // as the "approximate protocol" diagnostic.
      try {
        Trajectory geo = integrate_geodesic(split, end.h0, spec.q_max, 1.0,
                                            spec.ode_tol, 512);
        Trajectory rp = integrate_schrodinger(
            split,
            [&](double t) {
              return split.project_allowed(geo.generator_at(t));
            },
            1.0, spec.ode_tol, 512);
        br.geodesic_protocol = normalize_protocol(rp, spec.energy_bound);
        br.geodesic_protocol.branch_index = seed.index;
        br.geodesic_protocol.q_final = spec.q_max;
        br.geodesic_protocol.achieved_infidelity =
            1.0 - gate_fidelity(rp.unitaries.back(), target);
      } catch (const std::exception& e) {
        if (br.note.empty()) br.note = std::string("overlay replay: ") + e.what();
      }
    }
    br.wall_seconds = seconds_since(t0);
    log_info("branch " + std::to_string(seed.index) + ": " +
             status_name(br.path.status) +
             (br.converged ? ", T = " + std::to_string(br.T)
                           : ", " + br.path.reason + br.note));
  };

  // Branch solves are independent; the pool writes into disjoint slots,
  // so the assembled report does not depend on scheduling.
  int workers = options.num_workers > 0
                    ? options.num_workers
                    : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1,
                       std::max(1, static_cast<int>(seeds.size())));
  if (workers <= 1) {
    for (int i = 0; i < static_cast<int>(seeds.size()); ++i) solve_one(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int i = next++; i < static_cast<int>(seeds.size()); i = next++)
          solve_one(i);
      });
    for (auto& th : pool) th.join();
  }

  double best_t = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(report.branches.size()); ++i) {
    const BranchReport& br = report.branches[i];
    if (br.converged && br.T < best_t) {
      best_t = br.T;
      report.best = i;
    }
  }
  report.wall_solve = seconds_since(t_solve);
  if (report.best >= 0)
    log_info("best protocol: branch " +
             std::to_string(report.branches[report.best].index) + ", T = " +
             std::to_string(best_t));
  else
    log_info("no branch converged");

  if (!options.output_dir.empty()) write_report(report, options.output_dir);
  return report;
}

std::string report_to_json(const SolveReport& report) {
  json j;
  j["schema"] = "qbrach-report/1";
  j["name"] = report.name;
  j["tool_version"] = report.tool_version;
  j["config_hash"] = report.config_hash;
  j["tstar"] = report.tstar;
  j["tstar_estimated"] = report.tstar_estimated;
  j["tstar_reliable"] = report.tstar_reliable;
  j["num_candidates"] = report.num_candidates;
  j["wall_tstar_seconds"] = report.wall_tstar;
  j["wall_solve_seconds"] = report.wall_solve;
  json branches = json::array();
  for (const BranchReport& br : report.branches) {
    json b;
    b["index"] = br.index;
    b["seed_norm"] = br.seed_norm;
    b["sector_index"] = br.sector_index;
    b["special_case"] = br.special_case;
    b["status"] = status_name(br.path.status);
    b["q_stop"] = br.path.status == PathStatus::completed ? br.path.q_max
                                                          : br.path.q_stop;
    if (!br.path.reason.empty()) b["reason"] = br.path.reason;
    if (br.special_case && br.bootstrap_norm > 0) {
      b["bootstrap_norm"] = br.bootstrap_norm;
      b["bootstrap_fidelity"] = br.bootstrap_fidelity;
    }
    b["converged"] = br.converged;
    if (br.converged) {
      b["T"] = br.T;
      b["infidelity"] = br.infidelity;
      b["qbe_residual"] = br.qbe_residual;
      b["protocol_file"] = protocol_file_name(br.index);
    }
    if (!br.note.empty()) b["note"] = br.note;
    b["wall_seconds"] = br.wall_seconds;
    branches.push_back(b);
  }
  j["branches"] = branches;
  j["best_branch"] =
      report.best >= 0 ? json(report.branches[report.best].index) : json();
  return j.dump(2);
}

void write_report(const SolveReport& report, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  atomic_write(fs::path(dir) / "report.json", report_to_json(report));
  for (const BranchReport& br : report.branches) {
    if (!br.converged) continue;
    std::ostringstream csv;
    write_protocol_csv(br.protocol, csv);
    atomic_write(fs::path(dir) / protocol_file_name(br.index), csv.str());

    json side;
    side["schema"] = kProtocolSchema;
    side["branch_index"] = br.index;
    side["T"] = br.protocol.T;
    side["energy_bound"] = br.protocol.energy_bound;
    side["infidelity"] = br.infidelity;
    side["qbe_residual"] = br.qbe_residual;
    side["samples"] = br.protocol.times.size();
    side["config_hash"] = report.config_hash;
    atomic_write(fs::path(dir) / ("branch_" + std::to_string(br.index) +
                                  "_protocol.json"),
                 side.dump(2));

    if (!br.geodesic_protocol.times.empty()) {
      std::ostringstream geo;
      write_protocol_csv(br.geodesic_protocol, geo);
      atomic_write(fs::path(dir) / ("branch_" + std::to_string(br.index) +
                                    "_geodesic.csv"),
                   geo.str());
    }
  }
}

ControlProtocol read_protocol_csv(std::istream& in) {
  std::string header;
  if (!std::getline(in, header))
    throw std::invalid_argument("protocol CSV: empty input");
  std::vector<std::string> names;
  {
    std::stringstream hs(header);
    std::string tok;
    while (std::getline(hs, tok, ',')) {
      const auto a = tok.find_first_not_of(" \t\r");
      const auto b = tok.find_last_not_of(" \t\r");
      names.push_back(a == std::string::npos ? ""
                                             : tok.substr(a, b - a + 1));
    }
  }
  if (names.empty() || names[0] != "t")
    throw std::invalid_argument("protocol CSV: header must start with t");
  int n_mu = 0, n_lambda = 0;
  for (std::size_t i = 1; i < names.size(); ++i) {
    if (names[i] == "mu_" + std::to_string(n_mu + 1) && n_lambda == 0)
      ++n_mu;
    else if (names[i] == "lambda_" + std::to_string(n_lambda + 1))
      ++n_lambda;
    else
      throw std::invalid_argument("protocol CSV: unexpected column \"" +
                                  names[i] + "\"");
  }
  if (n_mu == 0) throw std::invalid_argument("protocol CSV: no mu columns");

  ControlProtocol protocol;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ls(line);
    std::string tok;
    std::vector<double> vals;
    while (std::getline(ls, tok, ',')) {
      try {
        vals.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw std::invalid_argument("protocol CSV: non-numeric entry \"" +
                                    tok + "\"");
      }
    }
    if (static_cast<int>(vals.size()) != 1 + n_mu + n_lambda)
      throw std::invalid_argument("protocol CSV: row width mismatch");
    if (!protocol.times.empty() && vals[0] <= protocol.times.back())
      throw std::invalid_argument("protocol CSV: times must increase");
    protocol.times.push_back(vals[0]);
    Vector mu(n_mu), lambda(n_lambda);
    for (int i = 0; i < n_mu; ++i) mu[i] = vals[1 + i];
    for (int i = 0; i < n_lambda; ++i) lambda[i] = vals[1 + n_mu + i];
    protocol.mu.push_back(mu);
    protocol.lambda.push_back(lambda);
  }
  if (protocol.times.empty())
    throw std::invalid_argument("protocol CSV: no sample rows");
  protocol.T = protocol.times.back();
  double e = 0;
  for (const Vector& mu : protocol.mu) e = std::max(e, mu.norm());
  protocol.energy_bound = e > 0 ? e : 1.0;
  return protocol;
}

ControlProtocol load_protocol(const std::string& csv_path) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open protocol file: " + csv_path);
  ControlProtocol protocol = read_protocol_csv(in);

  // The JSON sidecar carries the exact constraint data when present.
  std::filesystem::path side(csv_path);
  side.replace_extension(".json");
  std::ifstream sin(side, std::ios::binary);
  if (sin) {
    std::stringstream buf;
    buf << sin.rdbuf();
    try {
      json s = json::parse(buf.str());
      if (s.contains("energy_bound"))
        protocol.energy_bound = s.at("energy_bound").get<double>();
      if (s.contains("infidelity"))
        protocol.achieved_infidelity = s.at("infidelity").get<double>();
      if (s.contains("branch_index"))
        protocol.branch_index = s.at("branch_index").get<int>();
    } catch (const json::exception&) {
      // A malformed sidecar only loses metadata; the CSV stands alone.
    }
  }
  return protocol;
}

ReplayReport verify_protocol(const ControlProtocol& protocol,
                             const ProblemSpec& spec) {
  SubspaceSplit split = spec.make_split();
  const int dA = split.dim_allowed();
  if (protocol.mu.empty() ||
      static_cast<int>(protocol.mu[0].size()) != dA)
    throw std::invalid_argument(
        "protocol dimension does not match the problem split");

  ReplayReport rep;
  const double E = protocol.energy_bound > 0 ? protocol.energy_bound : 1.0;

  if (protocol.times.size() < 2 || protocol.T <= 0) {
    // Zero-span protocol: the implemented gate is the identity.
    const Eigen::Index n = spec.target.rows();
    rep.fidelity = gate_fidelity(Matrix::Identity(n, n), spec.target);
  } else {
    ColumnSplines mu_spline(protocol.times, protocol.mu);
    Trajectory rp = integrate_schrodinger(
        split,
        [&](double t) {
          Vector full = Vector::Zero(split.dim());
          full.head(dA) = mu_spline.eval(t);
          return full;
        },
        protocol.T, 1e-11, 64);
    rep.fidelity = gate_fidelity(rp.unitaries.back(), spec.target);

    for (const Vector& mu : protocol.mu)
      rep.norm_drift = std::max(rep.norm_drift, std::abs(mu.norm() - E) / E);

    // QBE defect of the sampled pair: spline time-derivatives against
    // the brachistochrone right sides, RMS over interior samples,
    // scaled by E^2 (the natural magnitude of the commutator terms).
    if (!protocol.lambda.empty() && protocol.lambda[0].size() > 0 &&
        protocol.times.size() >= 4) {
      ColumnSplines lambda_spline(protocol.times, protocol.lambda);
      double acc = 0;
      int count = 0;
      for (std::size_t i = 1; i + 1 < protocol.times.size(); ++i) {
        double t = protocol.times[i];
        BrachistochroneState state{protocol.mu[i], protocol.lambda[i]};
        BrachistochroneState rhs = brachistochrone_rhs(split, state);
        acc += (mu_spline.derivative(t) - rhs.mu).squaredNorm() +
               (lambda_spline.derivative(t) - rhs.lambda).squaredNorm();
        ++count;
      }
      rep.qbe_residual = std::sqrt(acc / count) / (E * E);
    }
  }

  const double declared = protocol.achieved_infidelity;
  if (std::isfinite(declared))
    rep.stale = (1.0 - rep.fidelity) > declared + 1e-6;
  return rep;
}

ReplayReport verify_protocol(const std::string& protocol_path,
                             const ProblemSpec& spec) {
  return verify_protocol(load_protocol(protocol_path), spec);
}

void emit_plot_data(const ControlProtocol& protocol, std::ostream& out,
                    const ControlProtocol* overlay) {
  if (protocol.times.empty() || protocol.mu.empty())
    throw std::invalid_argument("plot data needs at least one sample");
  const Eigen::Index dA = protocol.mu[0].size();
  if (overlay && (!overlay->times.empty() && !overlay->mu.empty()) &&
      overlay->mu[0].size() != dA)
    throw std::invalid_argument("overlay dimension mismatch");
  const bool with_overlay =
      overlay && overlay->times.size() >= 2 && overlay->T > 0;

  out.precision(17);
  out << "t";
  for (Eigen::Index j = 0; j < dA; ++j) out << ", mu_" << j + 1;
  if (with_overlay)
    for (Eigen::Index j = 0; j < dA; ++j) out << ", alpha_" << j + 1;
  out << "\n";

  ColumnSplines overlay_spline({}, {});
  if (with_overlay)
    overlay_spline = ColumnSplines(overlay->times, overlay->mu);

  const double T = protocol.T;
  for (std::size_t i = 0; i < protocol.times.size(); ++i) {
    out << protocol.times[i];
    for (Eigen::Index j = 0; j < dA; ++j) out << ", " << protocol.mu[i][j];
    if (with_overlay) {
      // Shared t axis via the fractional position along each protocol.
      double frac = T > 0 ? protocol.times[i] / T : 0.0;
      Vector a = overlay_spline.eval(frac * overlay->T);
      for (Eigen::Index j = 0; j < dA; ++j) out << ", " << a[j];
    }
    out << "\n";
  }
}

}  // namespace qbrach
