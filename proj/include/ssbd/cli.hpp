#pragma once

// Command-line front end: gen / deconv / landscape / params / grid / initrate / conc.
// Precedence: command-line flags > `--config` file (flat key = value, keys are
// long option names with '_' for '-') > built-in defaults.
// Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

#include <ssbd/core.hpp>
#include <ssbd/experiments.hpp>
#include <ssbd/io.hpp>
#include <ssbd/landscape.hpp>
#include <ssbd/optimizer.hpp>
#include <ssbd/pipeline.hpp>
#include <ssbd/shift_model.hpp>
#include <ssbd/signals.hpp>

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ssbd::cli {

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      const auto t = io::trim(cur);
      if (!t.empty()) out.emplace_back(t);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

inline std::vector<double> parse_doubles(const std::string& s, const std::string& name) {
  std::vector<double> out;
  for (const auto& t : split_list(s)) out.push_back(io::parse_double(t, name));
  if (out.empty()) throw ParseError("option", name + ": empty list");
  return out;
}

inline std::vector<Index> parse_indices(const std::string& s, const std::string& name) {
  std::vector<Index> out;
  for (const auto& t : split_list(s)) {
    const double v = io::parse_double(t, name);
    if (v != std::floor(v) || std::abs(v) > 9.0e15) throw ParseError("option", name + ": not an integer: '" + t + "'");
    out.push_back(static_cast<Index>(v));
  }
  if (out.empty()) throw ParseError("option", name + ": empty list");
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>)
      s += io::fmt17(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s;
}

inline std::filesystem::path ensure_dir(const std::string& d) {
  std::filesystem::path p(d.empty() ? "." : d);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw ParseError("output", "cannot create directory '" + p.string() + "': " + ec.message());
  return p;
}

/// Keys written to .meta files that are not options.
inline bool meta_only_key(const std::string& k) { return k == "artifact_version" || k == "experiment" || k == "config" || k == "family_recipe"; }

/// Returns the subcommand name (first non-option token) and the config path, if any.
inline std::pair<std::string, std::string> prescan(const std::vector<std::string>& args) {
  std::string sub, cfg;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--config" && i + 1 < args.size()) {
      cfg = args[++i];
    } else if (a.rfind("--config=", 0) == 0) {
      cfg = a.substr(9);
    } else if (sub.empty() && !a.empty() && a[0] != '-') {
      sub = a;
    }
  }
  return {sub, cfg};
}

struct SolverFlags {
  SolveOptions o;
  void add(CLI::App* app) {
    app->add_option("--max-iters", o.max_iters, "iteration cap");
    app->add_option("--grad-tol", o.grad_tol, "gradient-norm tolerance");
    app->add_option("--curvature-tol", o.curvature_tol, "eigensolver residual tolerance");
    app->add_option("--armijo-c", o.armijo_c, "Armijo sufficient-decrease constant");
    app->add_option("--backtrack-factor", o.backtrack_factor, "line-search shrink factor");
    app->add_option("--initial-step", o.initial_step, "first trial step");
    app->add_option("--escape-check-period", o.escape_check_period, "iterations between curvature checks");
    app->add_option("--min-eig-tol", o.min_eig_tol, "negative-curvature threshold");
  }
  void echo(io::Config& c) const {
    c["max_iters"] = std::to_string(o.max_iters);
    c["grad_tol"] = io::fmt17(o.grad_tol);
    c["curvature_tol"] = io::fmt17(o.curvature_tol);
    c["armijo_c"] = io::fmt17(o.armijo_c);
    c["backtrack_factor"] = io::fmt17(o.backtrack_factor);
    c["initial_step"] = io::fmt17(o.initial_step);
    c["escape_check_period"] = std::to_string(o.escape_check_period);
    c["min_eig_tol"] = io::fmt17(o.min_eig_tol);
  }
};

inline void write_meta(const std::filesystem::path& dir, const std::string& name, const io::Config& cfg) {
  io::write_text((dir / (name + ".meta")).string(), make_meta(name, cfg));
}

}  // namespace detail

/// Entry point shared by the binary and the tests.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Short-and-sparse blind deconvolution on the sphere", "ssbd"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "flat key = value config file");

  // ------------------------------------------------------------ gen
  auto* gen = app.add_subcommand("gen", "sample a kernel and a Bernoulli-Gaussian signal, write y = a0 * x0");
  Index g_k = 50, g_m = 1 << 14;
  double g_theta = 0.1;
  std::uint64_t g_seed = 0;
  std::string g_family = "generic", g_out = "y.txt", g_kout, g_xout;
  gen->add_option("--k", g_k, "kernel length");
  gen->add_option("--m", g_m, "signal length");
  gen->add_option("--theta", g_theta, "Bernoulli rate");
  gen->add_option("--seed", g_seed, "master seed");
  gen->add_option("--family", g_family, "generic | bandpass | delta");
  gen->add_option("-o,--output", g_out, "observation file");
  gen->add_option("--kernel-out", g_kout, "kernel file (default a0.txt next to the output)");
  gen->add_option("--signal-out", g_xout, "activation file (optional)");

  // ------------------------------------------------------------ deconv
  auto* dec = app.add_subcommand("deconv", "recover the kernel from an observation file");
  std::string d_in, d_truth, d_outdir = ".";
  Index d_k = 0;
  std::uint64_t d_seed = 0;
  double d_cstar = 10.0;
  bool d_trace = false, d_activation = false;
  detail::SolverFlags d_solve;
  dec->add_option("-i,--input", d_in, "observation file")->required();
  dec->add_option("--k", d_k, "kernel length")->required();
  dec->add_option("--truth", d_truth, "ground-truth kernel file for scoring");
  dec->add_option("--outdir", d_outdir, "output directory");
  dec->add_option("--seed", d_seed, "seed for the initial window");
  dec->add_option("--c-star", d_cstar, "region constant");
  dec->add_flag("--trace", d_trace, "also write trace.csv");
  dec->add_flag("--activation", d_activation, "also write x_hat.txt (least-squares activation)");
  d_solve.add(dec);

  // ------------------------------------------------------------ landscape
  auto* lan = app.add_subcommand("landscape", "evaluate psi, gradient, curvature and regions at points");
  std::string l_in, l_points, l_truth, l_outdir;
  Index l_k = 0;
  int l_samples = 10;
  std::uint64_t l_seed = 0;
  double l_cstar = 10.0, l_eigtol = 1e-8;
  lan->add_option("-i,--input", l_in, "observation file")->required();
  lan->add_option("--k", l_k, "kernel length")->required();
  lan->add_option("--points", l_points, "points file (one point per line)");
  lan->add_option("--samples", l_samples, "uniform sphere samples when no points file");
  lan->add_option("--seed", l_seed, "sampling seed");
  lan->add_option("--truth", l_truth, "ground-truth kernel file (enables regions and classification)");
  lan->add_option("--c-star", l_cstar, "region constant");
  lan->add_option("--eig-tol", l_eigtol, "eigensolver tolerance");
  lan->add_option("--outdir", l_outdir, "write landscape.csv here instead of stdout");

  // ------------------------------------------------------------ params
  auto* par = app.add_subcommand("params", "average sigma_min, kappa, mu over random kernels");
  std::string p_k = "10,20,50,100,200", p_family = "generic", p_outdir = ".";
  int p_trials = 20;
  std::uint64_t p_seed = 0;
  par->add_option("--k", p_k, "comma-separated kernel lengths");
  par->add_option("--trials", p_trials, "kernels per k");
  par->add_option("--seed", p_seed, "master seed");
  par->add_option("--family", p_family, "generic | bandpass | delta");
  par->add_option("--outdir", p_outdir, "output directory");

  // ------------------------------------------------------------ grid / initrate
  struct GridFlags {
    std::string k = "50", theta = "0.5,1,2,4", rule = "ktheta", m = "8192,32768,131072", family = "generic", outdir = ".";
    int trials = 5, workers = 1;
    std::uint64_t seed = 0;
    double c_star = 10.0, flops_cap = 1e11;
    void add(CLI::App* a) {
      a->add_option("--k", k, "comma-separated kernel lengths");
      a->add_option("--theta", theta, "comma-separated theta values (meaning set by --theta-rule)");
      a->add_option("--theta-rule", rule, "values | ktheta (theta = value/k) | k^-2/3");
      a->add_option("--m", m, "comma-separated signal lengths");
      a->add_option("--trials", trials, "trials per cell");
      a->add_option("--seed", seed, "master seed");
      a->add_option("--family", family, "generic | bandpass");
      a->add_option("--c-star", c_star, "region constant");
      a->add_option("--workers", workers, "worker threads");
      a->add_option("--outdir", outdir, "output directory");
    }
    GridSpec spec() const {
      GridSpec s;
      s.k_values = detail::parse_indices(k, "k");
      s.theta_rule = parse_theta_rule(rule);
      if (s.theta_rule != ThetaRule::PowerTwoThirds) s.theta_values = detail::parse_doubles(theta, "theta");
      s.m_values = detail::parse_indices(m, "m");
      s.trials = trials;
      s.seed = seed;
      s.family = parse_family(family);
      s.c_star = c_star;
      s.workers = workers;
      s.flops_cap = flops_cap;
      return s;
    }
    void echo(io::Config& c) const {
      c["k"] = k;
      c["theta"] = theta;
      c["theta_rule"] = rule;
      c["m"] = m;
      c["trials"] = std::to_string(trials);
      c["seed"] = std::to_string(seed);
      c["family"] = family;
      c["c_star"] = io::fmt17(c_star);
      c["workers"] = std::to_string(workers);
      c["outdir"] = outdir;
    }
  };
  auto* grd = app.add_subcommand("grid", "recovery error over a (k, theta, m) grid");
  GridFlags gr;
  detail::SolverFlags gr_solve;
  gr.add(grd);
  grd->add_option("--flops-cap", gr.flops_cap, "refuse grids estimated above this many flops");
  gr_solve.add(grd);

  auto* ini = app.add_subcommand("initrate", "fraction of initial points inside the benign region");
  GridFlags ir;
  ir.trials = 100;
  ir.theta = "0.05";
  ir.rule = "values";
  ir.m = "65536";
  double ir_factor = 3.0;
  ir.add(ini);
  ini->add_option("--region-factor", ir_factor, "region constant multiplier");

  // ------------------------------------------------------------ conc
  auto* con = app.add_subcommand("conc", "finite-sample vs population gradient/Hessian gaps over m");
  ConcSpec cs;
  std::string c_m = "1024,2048,4096,8192,16384,32768,65536", c_family = "generic", c_sampling = "region", c_outdir = ".";
  con->add_option("--k", cs.k, "kernel length");
  con->add_option("--theta", cs.theta, "Bernoulli rate");
  con->add_option("--m", c_m, "comma-separated signal lengths");
  con->add_option("--samples", cs.samples, "q samples (shared across m)");
  con->add_option("--reps", cs.reps, "independent signals per m");
  con->add_option("--seed", cs.seed, "master seed");
  con->add_option("--family", c_family, "generic | bandpass | delta");
  con->add_option("--q-sampling", c_sampling, "region | sphere");
  con->add_option("--c-star", cs.c_star, "region constant");
  con->add_option("--reject-cap", cs.reject_cap, "rejection-sampling attempts before a cell is unsampled");
  con->add_option("--workers", cs.workers, "worker threads");
  con->add_option("--outdir", c_outdir, "output directory");

  try {
    // Config file values are injected ahead of the real flags so that flags win.
    auto [sub, cfg_path] = detail::prescan(args);
    std::vector<std::string> argv2;
    argv2.push_back(args.empty() ? "ssbd" : args[0]);
    std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
    if (!cfg_path.empty()) {
      CLI::App* target = nullptr;
      for (auto* s : app.get_subcommands({})) if (s->get_name() == sub) target = s;
      if (!target) throw ParseError("config", "a subcommand is required with --config");
      const io::Config cfg = io::read_config(cfg_path);
      std::vector<std::string> injected;
      for (const auto& [key, val] : cfg) {
        if (detail::meta_only_key(key)) continue;
        std::string name = key;
        for (char& c : name) if (c == '_') c = '-';
        const CLI::Option* opt = target->get_option_no_throw("--" + name);
        if (!opt) throw ParseError("config", cfg_path + ": unknown key '" + key + "' for '" + sub + "'");
        if (opt->get_type_size() == 0) {
          injected.push_back("--" + name + "=" + val);
        } else {
          injected.push_back("--" + name);
          injected.push_back(val);
        }
      }
      // Place injected values right after the subcommand token.
      std::vector<std::string> merged;
      bool placed = false;
      for (std::size_t i = 0; i < rest.size(); ++i) {
        if (rest[i] == "--config") {
          merged.push_back(rest[i]);
          if (i + 1 < rest.size()) merged.push_back(rest[++i]);
          continue;
        }
        merged.push_back(rest[i]);
        if (!placed && rest[i] == sub) {
          merged.insert(merged.end(), injected.begin(), injected.end());
          placed = true;
        }
      }
      rest = std::move(merged);
    }
    argv2.insert(argv2.end(), rest.begin(), rest.end());
    std::vector<std::string> reversed(argv2.rbegin(), argv2.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) {
      const Instance inst = generate_instance(g_k, g_theta, g_m, g_seed, parse_family(g_family));
      const std::filesystem::path outp(g_out);
      const std::filesystem::path dir = outp.has_parent_path() ? outp.parent_path() : std::filesystem::path(".");
      detail::ensure_dir(dir.string());
      const std::string kout = g_kout.empty() ? (dir / "a0.txt").string() : g_kout;
      io::write_vector(g_out, inst.y.y);
      io::write_vector(kout, inst.kernel.values());
      if (!g_xout.empty()) io::write_vector(g_xout, inst.x0.values());
      io::Config c{{"k", std::to_string(g_k)}, {"m", std::to_string(g_m)}, {"theta", io::fmt17(g_theta)},
                   {"seed", std::to_string(g_seed)}, {"family", g_family}, {"output", g_out}, {"kernel_out", kout}};
      if (!g_xout.empty()) c["signal_out"] = g_xout;
      if (parse_family(g_family) == KernelFamily::Bandpass) c["family_recipe"] = kBandpassRecipe;
      detail::write_meta(dir, "gen", c);
      return 0;
    }

    if (dec->parsed()) {
      const Observation y = Observation::make(io::read_vector(d_in), d_k);
      std::optional<Kernel> truth;
      if (!d_truth.empty()) {
        const Vector t = io::read_vector(d_truth);
        require_dims(t.size() == d_k, "deconv", "truth kernel has length " + std::to_string(t.size()) + ", expected " + std::to_string(d_k));
        truth = Kernel::from_values(t);
      }
      const auto dir = detail::ensure_dir(d_outdir);
      const DeconvResult res = deconvolve(y, DeconvOptions{d_solve.o, d_seed, d_cstar}, truth);
      io::write_vector((dir / "q_bar.txt").string(), res.q_bar);
      io::write_vector((dir / "a_bar.txt").string(), res.a_bar.values());
      io::Csv csv({"seed", "k", "m", "status", "iters", "escapes", "err", "best_shift", "sign", "psi_final"});
      auto& row = csv.row() << d_seed << d_k << y.m() << to_string(res.report.status) << res.report.iterations
                            << static_cast<int>(res.report.escape_events.size());
      if (res.score)
        row << res.score->err << res.score->best_shift << res.score->sign;
      else
        row << "" << "" << "";
      row << res.psi_final;
      io::write_text((dir / "deconv.csv").string(), csv.str());
      if (d_trace) {
        io::Csv tr({"iter", "objective", "grad_norm", "escape_lambda"});
        for (std::size_t i = 0; i < res.report.objective_trace.size(); ++i)
          tr.row() << i << res.report.objective_trace[i] << res.report.grad_norm_trace[i] << res.report.escape_lambda_trace[i];
        io::write_text((dir / "trace.csv").string(), tr.str());
      }
      if (d_activation) io::write_vector((dir / "x_hat.txt").string(), solve_activation(res.a_bar, y).x);
      io::Config c{{"input", d_in}, {"k", std::to_string(d_k)}, {"seed", std::to_string(d_seed)}, {"c_star", io::fmt17(d_cstar)},
                   {"outdir", d_outdir}, {"trace", d_trace ? "true" : "false"}, {"activation", d_activation ? "true" : "false"}};
      if (!d_truth.empty()) c["truth"] = d_truth;
      d_solve.echo(c);
      detail::write_meta(dir, "deconv", c);
      return 0;
    }

    if (lan->parsed()) {
      const ObservationModel mo = ObservationModel::build(Observation::make(io::read_vector(l_in), l_k));
      std::vector<Vector> pts;
      if (!l_points.empty()) {
        pts = io::read_points(l_points);
        for (auto& p : pts) {
          require_dims(p.size() == l_k, "landscape", "point has length " + std::to_string(p.size()) + ", expected " + std::to_string(l_k));
          p = normalized(p, "landscape");
        }
      } else {
        if (l_samples < 0) throw ParameterError("landscape", "samples must be >= 0");
        Rng rng(l_seed);
        for (int s = 0; s < l_samples; ++s) {
          Vector q(l_k);
          for (Index i = 0; i < l_k; ++i) q[i] = rng.normal();
          pts.push_back(normalized(q, "landscape"));
        }
      }
      std::optional<ShiftModel> sm;
      if (!l_truth.empty()) {
        const Vector t = io::read_vector(l_truth);
        require_dims(t.size() == l_k, "landscape", "truth kernel has the wrong length");
        sm = ShiftModel::build(Kernel::from_values(t));
      }
      io::Csv csv({"point", "psi", "grad_norm", "lambda_min", "lhs", "rhs_R", "rhs_Rhat", "in_R", "in_Rhat", "classification"});
      for (std::size_t p = 0; p < pts.size(); ++p) {
        const Vector& q = pts[p];
        const PsiPoint pt(mo, q);
        const EigPair e = min_tangent_eig([&](const Vector& v) { return pt.hess_vec(mo, tangent_project(q, v)); }, q, l_eigtol);
        auto& row = csv.row() << p << pt.value(mo) << pt.gradient(mo).norm() << e.lambda;
        if (sm) {
          const RegionValues rv = region_values(*sm, q, l_cstar);
          std::string cls;
          try {
            cls = to_string(classify_stationary(*sm, q, ClassifyOptions{l_cstar}).kind);
          } catch (const ContractError&) {
            cls = "not_stationary";
          }
          row << rv.lhs << rv.rhs_R << rv.rhs_Rhat << (rv.in_R ? 1 : 0) << (rv.in_Rhat ? 1 : 0) << cls;
        } else {
          row << "" << "" << "" << "" << "" << "no_truth";
        }
      }
      if (l_outdir.empty()) {
        out << csv.str();
      } else {
        const auto dir = detail::ensure_dir(l_outdir);
        io::write_text((dir / "landscape.csv").string(), csv.str());
        io::Config c{{"input", l_in}, {"k", std::to_string(l_k)}, {"samples", std::to_string(l_samples)}, {"seed", std::to_string(l_seed)},
                     {"c_star", io::fmt17(l_cstar)}, {"eig_tol", io::fmt17(l_eigtol)}, {"outdir", l_outdir}};
        if (!l_points.empty()) c["points"] = l_points;
        if (!l_truth.empty()) c["truth"] = l_truth;
        detail::write_meta(dir, "landscape", c);
      }
      return 0;
    }

    if (par->parsed()) {
      const ParamSweepResult r = run_param_sweep(detail::parse_indices(p_k, "k"), p_trials, p_seed, parse_family(p_family));
      const auto dir = detail::ensure_dir(p_outdir);
      io::write_text((dir / "params.csv").string(), r.csv);
      io::write_text((dir / "params_pred.csv").string(), r.pred_csv);
      io::Config c{{"k", p_k}, {"trials", std::to_string(p_trials)}, {"seed", std::to_string(p_seed)}, {"family", p_family}, {"outdir", p_outdir}};
      if (parse_family(p_family) == KernelFamily::Bandpass) c["family_recipe"] = kBandpassRecipe;
      detail::write_meta(dir, "params", c);
      out << r.csv;
      return 0;
    }

    if (grd->parsed()) {
      GridSpec spec = gr.spec();
      spec.solve = gr_solve.o;
      const GridResult r = run_recovery_grid(spec);
      const auto dir = detail::ensure_dir(gr.outdir);
      io::write_text((dir / "grid.csv").string(), r.csv);
      io::write_text((dir / "grid_summary.csv").string(), r.summary_csv);
      io::Config c;
      gr.echo(c);
      gr_solve.echo(c);
      c["flops_cap"] = io::fmt17(gr.flops_cap);
      if (spec.family == KernelFamily::Bandpass) c["family_recipe"] = kBandpassRecipe;
      detail::write_meta(dir, "grid", c);
      return 0;
    }

    if (ini->parsed()) {
      const GridSpec spec = ir.spec();
      const InitRateResult r = run_init_region_rate(spec, ir_factor);
      const auto dir = detail::ensure_dir(ir.outdir);
      io::write_text((dir / "initrate.csv").string(), r.csv);
      io::write_text((dir / "initrate_summary.csv").string(), r.summary_csv);
      io::Config c;
      ir.echo(c);
      c["region_factor"] = io::fmt17(ir_factor);
      if (spec.family == KernelFamily::Bandpass) c["family_recipe"] = kBandpassRecipe;
      detail::write_meta(dir, "initrate", c);
      return 0;
    }

    if (con->parsed()) {
      cs.m_values = detail::parse_indices(c_m, "m");
      cs.family = parse_family(c_family);
      cs.q_sampling = parse_q_sampling(c_sampling);
      const ConcResult r = run_concentration_sweep(cs);
      const auto dir = detail::ensure_dir(c_outdir);
      io::write_text((dir / "conc.csv").string(), r.csv);
      io::write_text((dir / "conc_summary.csv").string(), r.summary_csv);
      io::Config c{{"k", std::to_string(cs.k)}, {"theta", io::fmt17(cs.theta)}, {"m", c_m}, {"samples", std::to_string(cs.samples)},
                   {"reps", std::to_string(cs.reps)}, {"seed", std::to_string(cs.seed)}, {"family", c_family},
                   {"q_sampling", c_sampling}, {"c_star", io::fmt17(cs.c_star)}, {"reject_cap", std::to_string(cs.reject_cap)},
                   {"workers", std::to_string(cs.workers)}, {"outdir", c_outdir}};
      if (cs.family == KernelFamily::Bandpass) c["family_recipe"] = kBandpassRecipe;
      detail::write_meta(dir, "conc", c);
      return 0;
    }
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 1;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace ssbd::cli
