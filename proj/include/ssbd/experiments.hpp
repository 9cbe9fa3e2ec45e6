#pragma once

// Seeded sweeps emitting CSV tables: kernel parameter scaling, recovery grids,
// initialisation region rates, and finite-sample concentration trends.
// Trial (i, j, l, t) of a grid always uses seed derive_seed(master, {i, j, l, t}),
// and results are merged by index, so worker count never changes the output.

#include <ssbd/core.hpp>
#include <ssbd/io.hpp>
#include <ssbd/landscape.hpp>
#include <ssbd/pipeline.hpp>
#include <ssbd/rng.hpp>
#include <ssbd/shift_model.hpp>
#include <ssbd/signals.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <string>
#include <thread>
#include <vector>

namespace ssbd {

inline constexpr const char* kArtifactVersion = "0.1.0";

inline constexpr const char* kBandpassRecipe =
    "N=floor(k/2); DFT bins [max(1,floor(N/3)), floor(2N/3)] with iid N(0,1) cos/sin coefficients, direct synthesis, unit norm";

/// Runs fn(0..n-1) on `workers` threads; results are stored by index. The
/// exception of the lowest failing index is rethrown.
template <class R, class F>
std::vector<R> parallel_map(std::size_t n, int workers, F fn) {
  std::vector<R> out(n);
  std::vector<std::exception_ptr> errs(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errs[i] = std::current_exception();
      }
    }
  };
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::size_t>(n, 1))));
  if (w == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < w; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// ---------------------------------------------------------------- params

struct ParamSweepResult {
  std::vector<KernelParams> rows;
  std::string csv;       ///< k,sigma_min_avg,kappa_avg,mu_avg,trials,seed
  std::string pred_csv;  ///< same averages against log^{-1}k, log^{4/3}k, sqrt(log k / k)
};

inline ParamSweepResult run_param_sweep(const std::vector<Index>& k_list, int trials, std::uint64_t seed,
                                        KernelFamily family = KernelFamily::Generic) {
  if (k_list.empty()) throw ParameterError("run_param_sweep", "k list is empty");
  for (Index k : k_list)
    if (k < 2) throw ParameterError("run_param_sweep", "every k must be >= 2");
  ParamSweepResult r;
  r.rows = estimate_kernel_params(k_list, trials, seed, family);
  io::Csv csv({"k", "sigma_min_avg", "kappa_avg", "mu_avg", "trials", "seed"});
  io::Csv pred({"k", "sigma_min_avg", "kappa_avg", "mu_avg", "sigma_min_pred", "kappa_pred", "mu_pred", "sigma_min_ratio",
                "kappa_ratio", "mu_ratio"});
  for (const auto& p : r.rows) {
    csv.row() << p.k << p.sigma_min_avg << p.kappa_avg << p.mu_avg << p.trials << p.seed;
    const double lk = std::log(static_cast<double>(p.k));
    const double sp = 1.0 / lk, kp = std::pow(lk, 4.0 / 3.0), mp = std::sqrt(lk / static_cast<double>(p.k));
    pred.row() << p.k << p.sigma_min_avg << p.kappa_avg << p.mu_avg << sp << kp << mp << p.sigma_min_avg / sp << p.kappa_avg / kp
               << p.mu_avg / mp;
  }
  r.csv = csv.str();
  r.pred_csv = pred.str();
  return r;
}

// ---------------------------------------------------------------- grids

enum class ThetaRule { Values, KTheta, PowerTwoThirds };

inline std::string to_string(ThetaRule r) {
  switch (r) {
    case ThetaRule::Values: return "values";
    case ThetaRule::KTheta: return "ktheta";
    case ThetaRule::PowerTwoThirds: return "k^-2/3";
  }
  return "values";
}

inline ThetaRule parse_theta_rule(const std::string& s) {
  if (s == "values") return ThetaRule::Values;
  if (s == "ktheta") return ThetaRule::KTheta;
  if (s == "k^-2/3" || s == "pow") return ThetaRule::PowerTwoThirds;
  throw ParameterError("theta rule", "unknown rule '" + s + "' (expected values, ktheta or k^-2/3)");
}

struct GridSpec {
  std::vector<Index> k_values{50};
  std::vector<double> theta_values{0.5, 1.0, 2.0, 4.0};
  ThetaRule theta_rule = ThetaRule::KTheta;
  std::vector<Index> m_values{1 << 13, 1 << 15, 1 << 17};
  int trials = 5;
  std::uint64_t seed = 0;
  KernelFamily family = KernelFamily::Generic;
  SolveOptions solve;
  double c_star = 10.0;
  int workers = 1;
  double flops_cap = 1e11;

  /// Theta values of the j-th column for kernel length k.
  std::vector<double> thetas_for(Index k) const {
    if (theta_rule == ThetaRule::PowerTwoThirds) return {std::pow(static_cast<double>(k), -2.0 / 3.0)};
    std::vector<double> t;
    for (double v : theta_values) t.push_back(theta_rule == ThetaRule::KTheta ? v / static_cast<double>(k) : v);
    return t;
  }

  void validate(const char* op) const {
    if (k_values.empty() || m_values.empty()) throw ParameterError(op, "k and m lists must be nonempty");
    if (theta_rule != ThetaRule::PowerTwoThirds && theta_values.empty()) throw ParameterError(op, "theta list must be nonempty");
    if (trials < 1) throw ParameterError(op, "trials must be >= 1");
    if (workers < 1) throw ParameterError(op, "workers must be >= 1");
    for (Index k : k_values) {
      if (k < 2) throw ParameterError(op, "every k must be >= 2");
      for (double th : thetas_for(k))
        if (!(th > 0.0 && th < 1.0)) throw ParameterError(op, "theta " + io::fmt17(th) + " for k=" + std::to_string(k) + " is outside (0,1)");
      for (Index m : m_values)
        if (m <= 2 * k) throw ParameterError(op, "need m > 2k (m=" + std::to_string(m) + ", k=" + std::to_string(k) + ")");
    }
  }
};

struct GridCell {
  std::size_t i = 0, j = 0, l = 0;
  Index k = 0;
  double theta = 0.0;
  Index m = 0;
};

inline std::vector<GridCell> grid_cells(const GridSpec& spec) {
  std::vector<GridCell> cells;
  for (std::size_t i = 0; i < spec.k_values.size(); ++i) {
    const auto th = spec.thetas_for(spec.k_values[i]);
    for (std::size_t j = 0; j < th.size(); ++j)
      for (std::size_t l = 0; l < spec.m_values.size(); ++l) cells.push_back({i, j, l, spec.k_values[i], th[j], spec.m_values[l]});
  }
  return cells;
}

inline std::uint64_t trial_seed(std::uint64_t master, const GridCell& c, int t) {
  return derive_seed(master, {c.i, c.j, c.l, static_cast<std::uint64_t>(t)});
}

/// Estimated cost of one recovery run: about 200 window passes of 2mk flops
/// plus O(k^3) for the Gram square roots.
inline double estimate_run_flops(Index k, Index m) {
  const double kk = static_cast<double>(k), mm = static_cast<double>(m);
  return 400.0 * mm * kk + 20.0 * kk * kk * kk;
}

inline double estimate_grid_flops(const GridSpec& spec) {
  double total = 0.0;
  for (const auto& c : grid_cells(spec)) total += spec.trials * estimate_run_flops(c.k, c.m);
  return total;
}

inline void check_budget(const GridSpec& spec, const char* op) {
  const double est = estimate_grid_flops(spec);
  if (est > spec.flops_cap)
    throw BudgetError(op, "estimated " + io::fmt17(est) + " flops exceeds the cap " + io::fmt17(spec.flops_cap) +
                              "; reduce trials, m values or cells, or raise flops_cap");
}

struct GridRow {
  Index k = 0;
  double theta = 0.0;
  Index m = 0;
  int trial = 0;
  std::uint64_t seed = 0;
  double err = 1.0;
  std::string status;
  int iters = 0;
  int escapes = 0;
};

struct GridCellSummary {
  Index k = 0;
  double theta = 0.0;
  Index m = 0;
  int trials = 0;
  double mean_err = 0.0;
  double median_err = 0.0;
};

struct GridResult {
  std::vector<GridRow> rows;
  std::vector<GridCellSummary> summary;
  std::string csv;          ///< k,theta,k_theta,m,trial,seed,err,status,iters,escapes
  std::string summary_csv;  ///< k,theta,k_theta,m,trials,mean_err,median_err
};

/// One recovery run exactly as the grid performs it.
inline GridRow recovery_trial(Index k, double theta, Index m, std::uint64_t seed, KernelFamily family, const SolveOptions& solve,
                              double c_star) {
  GridRow row;
  row.k = k;
  row.theta = theta;
  row.m = m;
  row.seed = seed;
  const Instance inst = generate_instance(k, theta, m, seed, family);
  try {
    const DeconvResult res = deconvolve(inst.y, DeconvOptions{solve, seed, c_star}, inst.kernel);
    row.err = res.score->err;
    row.status = to_string(res.report.status);
    row.iters = res.report.iterations;
    row.escapes = static_cast<int>(res.report.escape_events.size());
  } catch (const NumericalError& e) {
    row.err = 1.0;
    row.status = "failed";
  }
  return row;
}

inline GridResult run_recovery_grid(const GridSpec& spec) {
  spec.validate("run_recovery_grid");
  check_budget(spec, "run_recovery_grid");
  const auto cells = grid_cells(spec);
  const std::size_t T = static_cast<std::size_t>(spec.trials);
  GridResult r;
  r.rows = parallel_map<GridRow>(cells.size() * T, spec.workers, [&](std::size_t idx) {
    const GridCell& c = cells[idx / T];
    const int t = static_cast<int>(idx % T);
    GridRow row = recovery_trial(c.k, c.theta, c.m, trial_seed(spec.seed, c, t), spec.family, spec.solve, spec.c_star);
    row.trial = t;
    return row;
  });
  io::Csv csv({"k", "theta", "k_theta", "m", "trial", "seed", "err", "status", "iters", "escapes"});
  for (const auto& row : r.rows)
    csv.row() << row.k << row.theta << static_cast<double>(row.k) * row.theta << row.m << row.trial << row.seed << row.err << row.status
              << row.iters << row.escapes;
  io::Csv sum({"k", "theta", "k_theta", "m", "trials", "mean_err", "median_err"});
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    std::vector<double> errs;
    for (std::size_t t = 0; t < T; ++t) errs.push_back(r.rows[ci * T + t].err);
    GridCellSummary s{cells[ci].k, cells[ci].theta, cells[ci].m, spec.trials, mean(errs), median(errs)};
    r.summary.push_back(s);
    sum.row() << s.k << s.theta << static_cast<double>(s.k) * s.theta << s.m << s.trials << s.mean_err << s.median_err;
  }
  r.csv = csv.str();
  r.summary_csv = sum.str();
  return r;
}

// ---------------------------------------------------------------- init region

struct InitRateRow {
  Index k = 0;
  double theta = 0.0;
  Index m = 0;
  int trial = 0;
  std::uint64_t seed = 0;
  Index init_index = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  bool in_region = false;
};

struct InitRateResult {
  std::vector<InitRateRow> rows;
  std::vector<double> fractions;  ///< per cell, grid order
  std::string csv;                ///< k,theta,m,trial,seed,init_index,lhs,rhs,in_region
  std::string summary_csv;        ///< k,theta,m,trials,fraction,median_lhs,rhs_mean
};

/// Fraction of seeded initial points inside Rhat with constant `region_factor * C_star`.
inline InitRateResult run_init_region_rate(const GridSpec& spec, double region_factor = 3.0) {
  spec.validate("run_init_region_rate");
  const auto cells = grid_cells(spec);
  const std::size_t T = static_cast<std::size_t>(spec.trials);
  InitRateResult r;
  r.rows = parallel_map<InitRateRow>(cells.size() * T, spec.workers, [&](std::size_t idx) {
    const GridCell& c = cells[idx / T];
    const int t = static_cast<int>(idx % T);
    InitRateRow row;
    row.k = c.k;
    row.theta = c.theta;
    row.m = c.m;
    row.trial = t;
    row.seed = trial_seed(spec.seed, c, t);
    const Instance inst = generate_instance(c.k, c.theta, c.m, row.seed, spec.family);
    const ShiftModel sm = ShiftModel::build(inst.kernel);
    const ObservationModel mo = ObservationModel::build(inst.y);
    const InitChoice init = init_point_seeded(mo, row.seed);
    const RegionValues rv = region_values(sm, init.q, region_factor * spec.c_star);
    row.init_index = init.index;
    row.lhs = rv.lhs;
    row.rhs = rv.rhs_Rhat;
    row.in_region = rv.in_Rhat;
    return row;
  });
  io::Csv csv({"k", "theta", "m", "trial", "seed", "init_index", "lhs", "rhs", "in_region"});
  for (const auto& row : r.rows)
    csv.row() << row.k << row.theta << row.m << row.trial << row.seed << row.init_index << row.lhs << row.rhs << (row.in_region ? 1 : 0);
  io::Csv sum({"k", "theta", "m", "trials", "fraction", "median_lhs", "rhs_mean"});
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    std::vector<double> lhs, rhs;
    int in = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const auto& row = r.rows[ci * T + t];
      lhs.push_back(row.lhs);
      rhs.push_back(row.rhs);
      in += row.in_region ? 1 : 0;
    }
    const double frac = static_cast<double>(in) / static_cast<double>(T);
    r.fractions.push_back(frac);
    sum.row() << cells[ci].k << cells[ci].theta << cells[ci].m << spec.trials << frac << median(lhs) << mean(rhs);
  }
  r.csv = csv.str();
  r.summary_csv = sum.str();
  return r;
}

// ---------------------------------------------------------------- concentration

enum class QSampling { Region, Sphere };

inline std::string to_string(QSampling s) { return s == QSampling::Region ? "region" : "sphere"; }

inline QSampling parse_q_sampling(const std::string& s) {
  if (s == "region") return QSampling::Region;
  if (s == "sphere") return QSampling::Sphere;
  throw ParameterError("q sampling", "unknown mode '" + s + "' (expected region or sphere)");
}

struct ConcSpec {
  Index k = 20;
  double theta = 0.1;
  std::vector<Index> m_values{1 << 10, 1 << 11, 1 << 12, 1 << 13, 1 << 14, 1 << 15, 1 << 16};
  int samples = 20;
  int reps = 1;  ///< independent x0 draws per m
  std::uint64_t seed = 0;
  KernelFamily family = KernelFamily::Generic;
  QSampling q_sampling = QSampling::Region;
  double c_star = 10.0;
  long reject_cap = 100000;
  int workers = 1;
};

struct ConcRow {
  Index m = 0;
  int rep = 0;
  int sample = 0;
  GapMeasurement grad;
  GapMeasurement hess;
  WhiteningGap white;
};

struct ConcCellSummary {
  Index m = 0;
  bool sampled = false;
  double median_grad_dev = 0.0;
  double median_grad_ratio = 0.0;
  double median_hess_dev = 0.0;
  double median_hess_ratio = 0.0;
  double median_delta = 0.0;
  double delta_bound = 0.0;
  double delta_below_fraction = 0.0;
};

struct ConcResult {
  std::vector<ConcRow> rows;
  std::vector<ConcCellSummary> summary;
  std::vector<WhiteningGap> whitening;  ///< one per (m, rep), m-major
  std::string csv;
  std::string summary_csv;
};

/// q samples shared by every m: uniform on the sphere, or rejection-sampled into
/// Rhat_{2 C_star}. An empty result means the rejection cap was hit.
inline std::vector<Vector> sample_conc_points(const ShiftModel& sm, const ConcSpec& spec) {
  Rng rng(derive_seed(spec.seed, {1}));
  std::vector<Vector> pts;
  long attempts = 0;
  while (static_cast<int>(pts.size()) < spec.samples) {
    Vector q(spec.k);
    for (Index i = 0; i < spec.k; ++i) q[i] = rng.normal();
    q = normalized(q, "sample_conc_points");
    if (spec.q_sampling == QSampling::Sphere || region_values(sm, q, 2.0 * spec.c_star).in_Rhat) {
      pts.push_back(q);
      continue;
    }
    if (++attempts >= spec.reject_cap) return {};
  }
  return pts;
}

inline ConcResult run_concentration_sweep(const ConcSpec& spec) {
  if (spec.k < 2) throw ParameterError("run_concentration_sweep", "k must be >= 2");
  if (!(spec.theta > 0.0 && spec.theta < 1.0)) throw ParameterError("run_concentration_sweep", "theta must lie in (0,1)");
  if (spec.samples < 0 || spec.reps < 1) throw ParameterError("run_concentration_sweep", "need samples >= 0 and reps >= 1");
  if (spec.m_values.empty()) throw ParameterError("run_concentration_sweep", "m list is empty");
  for (Index m : spec.m_values)
    if (m <= 2 * spec.k) throw ParameterError("run_concentration_sweep", "need m > 2k");

  ConcResult r;
  io::Csv csv({"m", "rep", "sample", "grad_dev", "grad_bound", "grad_ratio", "hess_dev", "hess_bound", "hess_ratio", "delta", "delta_bound"});
  io::Csv sum({"m", "status", "reps", "samples", "median_grad_dev", "median_grad_ratio", "median_hess_dev", "median_hess_ratio",
               "median_delta", "delta_bound", "delta_below_fraction"});
  if (spec.samples == 0) {
    r.csv = csv.str();
    r.summary_csv = sum.str();
    return r;
  }

  Rng krng(derive_seed(spec.seed, {0}));
  const Kernel a0 = make_kernel(spec.family, spec.k, krng);
  const ShiftModel sm = ShiftModel::build(a0);
  const std::vector<Vector> pts = sample_conc_points(sm, spec);
  const bool sampled = !pts.empty();

  const std::size_t M = spec.m_values.size(), R = static_cast<std::size_t>(spec.reps);
  struct CellOut {
    WhiteningGap white;
    std::vector<ConcRow> rows;
  };
  const auto cells = parallel_map<CellOut>(M * R, spec.workers, [&](std::size_t idx) {
    const std::size_t l = idx / R, rep = idx % R;
    const Index m = spec.m_values[l];
    const SparseSignal x0 = sample_bg(m, spec.theta, derive_seed(spec.seed, {2, l, rep}));
    CellOut out;
    out.white = measure_whitening_gap(x0, spec.k);
    if (!sampled) return out;
    const ObservationModel mo = ObservationModel::build(convolve(a0, x0.values()));
    for (std::size_t s = 0; s < pts.size(); ++s) {
      ConcRow row;
      row.m = m;
      row.rep = static_cast<int>(rep);
      row.sample = static_cast<int>(s);
      row.grad = measure_gradient_gap(mo, sm, spec.theta, pts[s], spec.c_star);
      row.hess = measure_hessian_gap(mo, sm, spec.theta, pts[s], spec.c_star);
      row.white = out.white;
      out.rows.push_back(row);
    }
    return out;
  });

  for (const auto& c : cells) {
    r.whitening.push_back(c.white);
    for (const auto& row : c.rows) {
      r.rows.push_back(row);
      csv.row() << row.m << row.rep << row.sample << row.grad.deviation << row.grad.bound << row.grad.ratio << row.hess.deviation
                << row.hess.bound << row.hess.ratio << row.white.delta << row.white.bound;
    }
  }
  for (std::size_t l = 0; l < M; ++l) {
    ConcCellSummary s;
    s.m = spec.m_values[l];
    s.sampled = sampled;
    std::vector<double> gd, gr, hd, hr, dl;
    int below = 0;
    for (std::size_t rep = 0; rep < R; ++rep) {
      const auto& c = cells[l * R + rep];
      dl.push_back(c.white.delta);
      s.delta_bound = c.white.bound;
      below += c.white.delta <= c.white.bound ? 1 : 0;
      for (const auto& row : c.rows) {
        gd.push_back(row.grad.deviation);
        gr.push_back(row.grad.ratio);
        hd.push_back(row.hess.deviation);
        hr.push_back(row.hess.ratio);
      }
    }
    s.median_grad_dev = median(gd);
    s.median_grad_ratio = median(gr);
    s.median_hess_dev = median(hd);
    s.median_hess_ratio = median(hr);
    s.median_delta = median(dl);
    s.delta_below_fraction = static_cast<double>(below) / static_cast<double>(R);
    r.summary.push_back(s);
    sum.row() << s.m << (sampled ? "sampled" : "unsampled") << spec.reps << (sampled ? spec.samples : 0) << s.median_grad_dev
              << s.median_grad_ratio << s.median_hess_dev << s.median_hess_ratio << s.median_delta << s.delta_bound
              << s.delta_below_fraction;
  }
  r.csv = csv.str();
  r.summary_csv = sum.str();
  return r;
}

/// `.meta` text: artifact version, experiment name, then the effective config.
inline std::string make_meta(const std::string& name, const io::Config& cfg) {
  io::Config all = cfg;
  all["artifact_version"] = kArtifactVersion;
  all["experiment"] = name;
  return io::format_config(all);
}

}  // namespace ssbd
