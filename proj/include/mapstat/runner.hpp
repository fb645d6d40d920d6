#pragma once

// Operation dispatch behind the CLI. Every operation turns a JobConfig plus
// run settings into key/value summary lines and tables; rendering to CSV or
// JSON happens at the edge so both formats serialize the same %.17g strings
// and outputs stay byte-identical across runs and thread counts.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mapstat/chain.hpp"
#include "mapstat/config.hpp"
#include "mapstat/coupling.hpp"
#include "mapstat/csv.hpp"
#include "mapstat/martingale.hpp"
#include "mapstat/statistics.hpp"
#include "mapstat/ulam.hpp"
#include "mapstat/version.hpp"

namespace mapstat {

struct RunSettings {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string format = "csv";  // csv | json
};

struct Table {
  std::string name;  // artifact stem
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void row(std::vector<std::string> cells) { rows.push_back(std::move(cells)); }
};

struct OpResult {
  std::vector<std::pair<std::string, std::string>> info;
  std::vector<Table> tables;

  void put(const std::string& key, const std::string& v) { info.emplace_back(key, v); }
  void put(const std::string& key, const char* v) { info.emplace_back(key, std::string(v)); }
  void put(const std::string& key, double v) { info.emplace_back(key, format_double(v)); }
  void put(const std::string& key, bool v) { info.emplace_back(key, v ? "true" : "false"); }
  void put_count(const std::string& key, std::size_t v) {
    info.emplace_back(key, std::to_string(v));
  }
};

namespace run_detail {

inline const IntervalMap& need_map(const JobConfig& job, const std::string& op) {
  if (!job.map) throw config_error(op + ": config needs a 'map' block");
  return *job.map;
}

inline const Observable& need_observable(const JobConfig& job, const std::string& op) {
  if (!job.observable) throw config_error(op + ": config needs an 'observable' block");
  return *job.observable;
}

inline UlamOperator build_operator(const JobConfig& job, const std::string& op) {
  const IntervalMap& m = need_map(job, op);
  BinGrid grid = job.grid.geometric
                     ? BinGrid::geometric(job.grid.bins, job.grid.first_width)
                     : BinGrid::uniform(job.grid.bins);
  return build_ulam(m, grid, job.grid.ulam);
}

inline GenerationMode resolve_mode(const JobConfig& job) {
  if (job.run.mode == "forward") return GenerationMode::forward;
  if (job.run.mode == "backward") return GenerationMode::backward;
  // auto: backward needs a Lebesgue-invariant full-branch linear map
  try {
    detail::BackwardSampler probe(*job.map);
    return GenerationMode::backward;
  } catch (const config_error&) {
    return GenerationMode::forward;
  }
}

inline EnsembleResult run_ensemble(const UlamOperator& op, const JobConfig& job,
                                   const RunSettings& st, const Observable& f) {
  EnsembleOptions eo;
  eo.trajectories = job.run.trajectories;
  eo.steps = job.run.steps;
  eo.seed = st.seed;
  eo.threads = st.threads;
  eo.mode = resolve_mode(job);
  eo.min_checkpoint = job.run.min_checkpoint;
  return simulate_ensemble(op, f, eo);
}

inline std::string fit_model_name(const DecayFit& fit) {
  return fit.model == DecayFit::Model::exponential ? "exponential" : "polynomial";
}

inline double fit_param(const DecayFit& fit) {
  return fit.model == DecayFit::Model::exponential ? fit.rho : fit.exponent;
}

}  // namespace run_detail

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline OpResult op_map_validate(const JobConfig& job) {
  const IntervalMap& m = run_detail::need_map(job, "map-validate");
  OpResult r;
  auto rep = m.validate();
  r.put("map", m.name());
  r.put_count("branches", m.branch_count());
  r.put("partition_ok", rep.partition_ok);
  r.put("images_ok", rep.images_ok);
  r.put("min_abs_derivative", rep.min_abs_derivative);
  r.put("strictly_expanding", rep.strictly_expanding);
  r.put("has_neutral_point", rep.has_neutral_point);
  r.put("adler_sup", rep.adler_sup);
  if (rep.gpm_gamma_hat) r.put("gamma_hat", *rep.gpm_gamma_hat);
  for (std::size_t i = 0; i < rep.notes.size(); ++i)
    r.put("note_" + std::to_string(i), rep.notes[i]);
  r.put("ok", rep.ok);

  Table t;
  t.name = "branches";
  t.header = {"branch", "lo", "hi", "image_lo", "image_hi", "increasing", "slope_mid"};
  for (std::size_t k = 0; k < m.branch_count(); ++k) {
    const Branch& b = m.branch(k);
    double mid = 0.5 * (b.lo + b.hi);
    t.row({std::to_string(k), format_double(b.lo), format_double(b.hi),
           format_double(b.image_lo), format_double(b.image_hi),
           b.increasing ? "1" : "0", format_double(b.derivative(mid))});
  }
  r.tables.push_back(std::move(t));
  return r;
}

inline OpResult op_density(const JobConfig& job) {
  auto op = run_detail::build_operator(job, "density");
  OpResult r;
  r.put("map", op.map().name());
  r.put_count("bins", op.bins());
  r.put_count("iterations", std::size_t(op.iterations()));
  r.put("residual", op.residual());
  r.put("row_sum_error", op.row_sum_error());
  r.put("stationarity_error", op.stationarity_error());

  Table t;
  t.name = "density";
  t.header = {"bin_lo", "bin_hi", "pi", "density"};
  for (std::size_t i = 0; i < op.bins(); ++i)
    t.row({format_double(op.grid().edges[i]), format_double(op.grid().edges[i + 1]),
           format_double(op.pi()[i]), format_double(op.density()[i])});
  r.tables.push_back(std::move(t));
  return r;
}

inline OpResult op_correlations(const JobConfig& job) {
  auto op = run_detail::build_operator(job, "correlations");
  const Observable& f = run_detail::need_observable(job, "correlations");
  OpResult r;
  double mean = op.nu(f);
  r.put("map", op.map().name());
  r.put("observable", f.name());
  r.put("nu_f", mean);
  r.put("var0", nu_of_square(op, f) - sq(mean));

  Table t;
  t.name = "correlations";
  t.header = {"lag", "covariance"};
  for (int k = 0; k <= job.analysis.phi.max_lag; ++k)
    t.row({std::to_string(k), format_double(correlation(op, f, f, k))});
  r.tables.push_back(std::move(t));
  return r;
}

inline OpResult op_variance(const JobConfig& job, const RunSettings& st) {
  auto op = run_detail::build_operator(job, "variance");
  const Observable& f = run_detail::need_observable(job, "variance");
  OpResult r;
  auto s2 = sigma2_operator(op, f, job.analysis.sigma2);
  r.put("map", op.map().name());
  r.put("observable", f.name());
  r.put("sigma2", s2.sigma2);
  r.put("var0", s2.var0);
  r.put_count("lags_used", std::size_t(s2.lags_used));
  r.put("tail_estimate", s2.tail_estimate);
  r.put("converged", s2.converged);

  Table t;
  t.name = "covariances";
  t.header = {"lag", "covariance"};
  for (std::size_t k = 0; k < s2.covariances.size(); ++k)
    t.row({std::to_string(k + 1), format_double(s2.covariances[k])});
  r.tables.push_back(std::move(t));

  if (job.raw.contains("run")) {
    auto ens = run_detail::run_ensemble(op, job, st, f);
    auto vars = ensemble_variance(ens);
    Table e;
    e.name = "ensemble_variance";
    e.header = {"n", "var_over_n"};
    for (const auto& [n, v] : vars) e.row({std::to_string(n), format_double(v)});
    r.tables.push_back(std::move(e));
    r.put("ensemble_mode",
          run_detail::resolve_mode(job) == GenerationMode::backward ? "backward" : "forward");
    r.put("ensemble_var_over_n", vars.back().second);
  }
  return r;
}

inline OpResult op_clt(const JobConfig& job, const RunSettings& st) {
  auto op = run_detail::build_operator(job, "clt");
  const Observable& f = run_detail::need_observable(job, "clt");
  OpResult r;
  auto s2 = sigma2_operator(op, f, job.analysis.sigma2);
  double sigma = std::sqrt(std::max(s2.sigma2, 0.0));
  if (!(sigma > 0)) throw numeric_error("clt: operator variance is not positive");
  auto ens = run_detail::run_ensemble(op, job, st, f);
  auto vars = ensemble_variance(ens);

  Table t;
  t.name = "clt";
  t.header = {"n", "var_over_n", "ks"};
  double ks_final = 0.0;
  for (std::size_t c = 0; c < ens.checkpoints.size(); ++c) {
    std::size_t n = ens.checkpoints[c];
    std::vector<double> z(ens.sums.size());
    for (std::size_t i = 0; i < ens.sums.size(); ++i)
      z[i] = ens.sums[i][c] / std::sqrt(double(n));
    double ks = ks_normal(z, sigma);
    if (c + 1 == ens.checkpoints.size()) ks_final = ks;
    t.row({std::to_string(n), format_double(vars[c].second), format_double(ks)});
  }
  r.put("map", op.map().name());
  r.put("observable", f.name());
  r.put("sigma2", s2.sigma2);
  r.put("mode",
        run_detail::resolve_mode(job) == GenerationMode::backward ? "backward" : "forward");
  r.put_count("trajectories", ens.sums.size());
  r.put("ks_final", ks_final);
  r.tables.push_back(std::move(t));
  return r;
}

inline OpResult op_wip(const JobConfig& job, const RunSettings& st) {
  auto op = run_detail::build_operator(job, "wip");
  const Observable& f = run_detail::need_observable(job, "wip");
  OpResult r;
  auto s2 = sigma2_operator(op, f, job.analysis.sigma2);
  auto ens = run_detail::run_ensemble(op, job, st, f);
  auto w = wip_covariance_check(ens, s2.sigma2);

  Table t;
  t.name = "wip";
  t.header = {"s", "t", "empirical", "expected"};
  for (const auto& e : w.entries)
    t.row({format_double(e.s), format_double(e.t), format_double(e.empirical),
           format_double(e.expected)});
  r.put("sigma2", s2.sigma2);
  r.put("max_error", w.max_error);
  r.put("max_error_over_sigma2", s2.sigma2 > 0 ? w.max_error / s2.sigma2 : 0.0);
  r.tables.push_back(std::move(t));
  return r;
}

inline OpResult op_lil(const JobConfig& job, const RunSettings& st) {
  auto op = run_detail::build_operator(job, "lil");
  const Observable& f = run_detail::need_observable(job, "lil");
  OpResult r;
  double threshold = job.analysis.lil_threshold;
  if (!(threshold > 0)) {
    // derive 3 C M from the discretized mixing profile
    auto chain = FiniteChain::from_operator(op);
    auto prof = mixing_profile(chain, job.analysis.phi);
    auto fit1 = fit_decay(prof.points, false);
    double var0 = nu_of_square(op, f) - sq(op.nu(f));
    double M = std::sqrt(std::max(var0, 0.0));
    auto ac = asip_constants(prof, fit1, M, job.run.steps);
    threshold = 3.0 * ac.C * ac.M;
    r.put("C", ac.C);
    r.put("M", ac.M);
  }
  auto ens = run_detail::run_ensemble(op, job, st, f);
  auto lil = lil_statistic(ens, threshold);

  Table t;
  t.name = "lil_series";
  t.header = {"n_j", "p_hat"};
  for (const auto& p : lil.series) t.row({std::to_string(p.n_j), format_double(p.p_hat)});
  r.put("threshold", lil.threshold);
  r.put("exceed_fraction", lil.exceed_fraction);
  r.put("u_median", median_of(lil.u));
  r.put("series_nonincreasing", lil.series_nonincreasing);
  r.tables.push_back(std::move(t));
  return r;
}

inline OpResult op_mixing(const JobConfig& job) {
  auto op = run_detail::build_operator(job, "mixing");
  OpResult r;
  auto chain = FiniteChain::from_operator(op);
  auto prof = mixing_profile(chain, job.analysis.phi);
  auto fit1 = fit_decay(prof.points, false);
  auto fit2 = fit_decay(prof.points, true);

  Table t;
  t.name = "mixing";
  t.header = {"lag", "phi1", "phi2_lower", "model", "fitted_param"};
  std::string model = run_detail::fit_model_name(fit1);
  std::string param = format_double(run_detail::fit_param(fit1));
  for (const auto& p : prof.points)
    t.row({std::to_string(p.lag), format_double(p.phi1), format_double(p.phi2), model, param});
  r.put("map", op.map().name());
  r.put("phi1_nonincreasing", prof.phi1_nonincreasing);
  r.put("phi2_nonincreasing", prof.phi2_nonincreasing);
  r.put("pair_lower_bound_only", prof.pair_lower_bound_only);
  r.put("model", model);
  r.put("fitted_param", run_detail::fit_param(fit1));
  auto quartic = quartic_mixing_series(prof, fit1);
  auto pair = pair_mixing_condition(prof, fit2);
  r.put("quartic_series", quartic.value);
  r.put("quartic_convergent", quartic.convergent);
  r.put("pair_series", pair.value);
  r.put("pair_convergent", pair.convergent);
  r.tables.push_back(std::move(t));
  return r;
}

inline OpResult op_gordin(const JobConfig& job) {
  auto op = run_detail::build_operator(job, "gordin");
  const Observable& f = run_detail::need_observable(job, "gordin");
  OpResult r;
  auto g = gordin_sum(op, f, job.analysis.gordin_terms);

  Table t;
  t.name = "gordin";
  t.header = {"k", "term", "partial"};
  double acc = 0.0;
  for (std::size_t k = 0; k < g.terms.size(); ++k) {
    acc += g.terms[k];
    t.row({std::to_string(k), format_double(g.terms[k]), format_double(acc)});
  }
  r.put("map", op.map().name());
  r.put("observable", f.name());
  r.put("partial_sum", g.partial_sum);
  r.put("tail_estimate", g.tail_estimate);
  r.put("total", g.partial_sum + g.tail_estimate);
  r.put("rho_hat", g.rho_hat);
  r.put("tail_certified", g.tail_certified);
  r.tables.push_back(std::move(t));
  return r;
}

inline OpResult op_decompose(const JobConfig& job) {
  const Observable& f = run_detail::need_observable(job, "decompose");
  OpResult r;
  r.put("observable", f.name());
  bool any = false;

  if (f.tag().kind == ClassKind::tail_class) {
    any = true;
    double m = job.analysis.clip_level;
    auto h = decompose_H(f, m);
    double recon = 0.0;
    for (int i = 0; i <= 10000; ++i) {
      double x = double(i) / 10000.0;
      recon = std::max(recon,
                       std::abs(f.eval(x) - h.bv_part.eval(x) - h.remainder.eval(x)));
    }
    Table t;
    t.name = "h_split";
    t.header = {"clip_level", "bv_variation", "reconstruction_error"};
    t.row({format_double(m), format_double(h.bv_variation), format_double(recon)});
    r.tables.push_back(std::move(t));
    r.put("clip_level", m);
    r.put("bv_variation", h.bv_variation);
    r.put("reconstruction_error", recon);
    double gamma = job.analysis.lil_gamma;
    const TailFunction* H = nullptr;
    for (const auto& term : f.terms())
      if (term.tail) { H = &*term.tail; break; }
    if (gamma > 0.0 && gamma < 0.5 && H) {
      auto ir = lil_condition_integral(*H, gamma);
      r.put("lil_integral", ir.value);
      r.put("lil_integral_finite", ir.finite);
    }
  }

  if (f.tag().kind == ClassKind::l2_class) {
    any = true;
    PiecewiseConstantDensity mu{{0.0, 1.0}, {1.0}};
    if (job.map) {
      auto op = run_detail::build_operator(job, "decompose");
      mu = op.density_fn();
    }
    auto d = decompose_L2(f, job.analysis.l2_eps, mu);
    Table t;
    t.name = "l2_split";
    t.header = {"eps", "K_star", "bv_variation", "degenerate"};
    t.row({format_double(job.analysis.l2_eps), format_double(d.K_star),
           format_double(d.bv_variation), d.degenerate ? "1" : "0"});
    r.tables.push_back(std::move(t));
    r.put("l2_eps", job.analysis.l2_eps);
    r.put("K_star", d.K_star);
    r.put("l2_bv_variation", d.bv_variation);
    r.put("degenerate", d.degenerate);
  }

  if (!any)
    throw config_error(
        "decompose: observable needs a 'tail' profile or an l2 'class' tag");
  return r;
}

inline OpResult op_martingale(const JobConfig& job, const RunSettings& st) {
  auto op = run_detail::build_operator(job, "martingale");
  const Observable& f = run_detail::need_observable(job, "martingale");
  OpResult r;
  std::size_t n = job.run.steps;
  auto ctx = make_martingale_context(op, f, n, job.analysis.martingale_M);

  std::vector<ChainPath> raw;
  std::vector<MartingalePath> mp;
  raw.reserve(job.analysis.martingale_paths);
  Table t;
  t.name = "martingale_paths";
  t.header = {"path", "identity_residual"};
  double worst = 0.0, total = 0.0;
  for (std::size_t p = 0; p < job.analysis.martingale_paths; ++p) {
    rng_stream rng(st.seed, p);
    raw.push_back(simulate_reversed_path(op, n, rng));
    mp.push_back(martingale_path(ctx, f, raw.back()));
    worst = std::max(worst, mp.back().identity_residual);
    total += mp.back().identity_residual;
    t.row({std::to_string(p), format_double(mp.back().identity_residual)});
  }
  std::vector<const MartingalePath*> mpp;
  std::vector<const ChainPath*> rpp;
  for (std::size_t p = 0; p < mp.size(); ++p) {
    mpp.push_back(&mp[p]);
    rpp.push_back(&raw[p]);
  }
  auto cm = conditional_mean_check(op, mpp, rpp);

  r.put("map", op.map().name());
  r.put("observable", f.name());
  r.put_count("n", n);
  r.put("truncation_level", ctx.level);
  r.put_count("series_terms", std::size_t(ctx.series_terms));
  r.put_count("paths", mp.size());
  r.put("max_identity_residual", worst);
  r.put("mean_identity_residual", total / double(mp.size()));
  r.put_count("cells_tested", cm.cells_tested);
  r.put("max_abs_tstat", cm.max_abs_tstat);
  r.tables.push_back(std::move(t));
  return r;
}

inline OpResult op_constants(const JobConfig& job) {
  auto op = run_detail::build_operator(job, "constants");
  const Observable* f = job.observable ? &*job.observable : nullptr;
  OpResult r;
  auto chain = FiniteChain::from_operator(op);
  auto prof = mixing_profile(chain, job.analysis.phi);
  auto fit1 = fit_decay(prof.points, false);
  auto fit2 = fit_decay(prof.points, true);

  double M = job.analysis.martingale_M;
  if (f) {
    double var0 = nu_of_square(op, *f) - sq(op.nu(*f));
    M = std::sqrt(std::max(var0, 0.0));
    r.put("observable", f->name());
  }
  auto ac = asip_constants(prof, fit1, M, job.run.steps);
  r.put("map", op.map().name());
  r.put("M", M);
  r.put_count("n", ac.n);
  r.put("s_half", ac.s_half);
  r.put("s_one", ac.s_one);
  r.put("C", ac.C);
  r.put("loglog_n", ac.loglog_n);
  r.put("c_n", ac.c_n);
  r.put("y_n", ac.y_n);
  r.put("x_n", ac.x_n);
  // scale identities the deviation bound relies on
  r.put("x_vs_4y_over_c", std::abs(ac.x_n - 4.0 * ac.y_n / ac.c_n) / ac.x_n);
  r.put("2y_vs_c2_loglog",
        std::abs(2.0 * ac.y_n - sq(ac.c_n) * ac.loglog_n) / (2.0 * ac.y_n));
  r.put("deviation_bound", pinelis_bound(ac.x_n, ac.y_n, ac.c_n));
  r.put("deviation_bound_log_form", pinelis_bound_log_form(ac.x_n, ac.y_n, ac.c_n));
  auto quartic = quartic_mixing_series(prof, fit1);
  auto pair = pair_mixing_condition(prof, fit2);
  r.put("quartic_series", quartic.value);
  r.put("quartic_convergent", quartic.convergent);
  r.put("pair_series", pair.value);
  r.put("pair_convergent", pair.convergent);

  Table t;
  t.name = "constants";
  t.header = {"name", "value"};
  for (const auto& [k, v] : r.info) t.row({k, v});
  r.tables.push_back(std::move(t));
  return r;
}

inline OpResult op_coupling_demo(const JobConfig& job, const RunSettings& st) {
  OpResult r;
  const auto& cc = job.analysis.coupling;
  std::vector<double> eps;
  for (int m = 1; m <= cc.levels; ++m) eps.push_back(std::ldexp(1.0, -m));
  auto sched = build_coupling_schedule(cc.n, eps);
  std::string why;
  bool ok = verify_coupling_schedule(sched, 2.0, &why);

  Table ts;
  ts.name = "schedule";
  ts.header = {"block", "length", "start", "eps"};
  for (std::size_t m = 0; m < sched.blocks(); ++m)
    ts.row({std::to_string(m + 1), std::to_string(sched.lengths[m]),
            std::to_string(sched.starts[m]), format_double(sched.eps[m])});
  r.tables.push_back(std::move(ts));
  r.put_count("blocks", sched.blocks());
  r.put_count("schedule_total", sched.total);
  r.put("schedule_verified", ok);
  if (!ok) r.put("schedule_violation", why);

  HarnessOptions ho;
  ho.n = cc.n;
  ho.checkpoints.clear();
  for (std::size_t cp = std::max<std::size_t>(cc.n / 100, 100); cp <= cc.n; cp *= 10)
    ho.checkpoints.push_back(cp);
  if (ho.checkpoints.empty() || ho.checkpoints.back() != cc.n)
    ho.checkpoints.push_back(cc.n);
  ho.ks_prefix = std::min<std::size_t>(cc.n, 100000);

  std::vector<std::vector<double>> Ds(ho.checkpoints.size());
  double zks0 = 0.0, lag10 = 0.0, ratio0 = 0.0;
  for (int s = 0; s < cc.seeds; ++s) {
    ho.seed = st.seed + std::uint64_t(s);
    auto hr = run_synthetic_harness(ho);
    for (std::size_t c = 0; c < hr.D.size(); ++c) Ds[c].push_back(hr.D[c]);
    if (s == 0) {
      zks0 = ks_normal(hr.z_prefix, 1.0);
      lag10 = hr.z_lag1;
      ratio0 = hr.max_block_ratio;
    }
  }
  Table td;
  td.name = "discrepancy";
  td.header = {"n", "median_D"};
  bool decreasing = true;
  double prev = 0.0;
  for (std::size_t c = 0; c < ho.checkpoints.size(); ++c) {
    double med = median_of(Ds[c]);
    if (c > 0 && med >= prev) decreasing = false;
    prev = med;
    td.row({std::to_string(ho.checkpoints[c]), format_double(med)});
  }
  r.tables.push_back(std::move(td));
  r.put_count("harness_seeds", std::size_t(cc.seeds));
  r.put("z_ks", zks0);
  r.put("z_lag1", lag10);
  r.put("max_block_ratio", ratio0);
  r.put("median_D_decreasing", decreasing);
  return r;
}

inline OpResult op_full_report(const JobConfig& job, const RunSettings& st) {
  auto op = run_detail::build_operator(job, "full-report");
  const Observable& f = run_detail::need_observable(job, "full-report");
  OpResult r;
  r.put("map", op.map().name());
  r.put("observable", f.name());
  r.put_count("bins", op.bins());
  r.put("residual", op.residual());
  r.put("stationarity_error", op.stationarity_error());

  double mean = op.nu(f);
  r.put("nu_f", mean);
  r.put("var0", nu_of_square(op, f) - sq(mean));
  auto s2 = sigma2_operator(op, f, job.analysis.sigma2);
  r.put("sigma2", s2.sigma2);
  r.put("sigma2_converged", s2.converged);

  auto g = gordin_sum(op, f, job.analysis.gordin_terms);
  r.put("gordin_total", g.partial_sum + g.tail_estimate);
  r.put("gordin_certified", g.tail_certified);

  auto chain = FiniteChain::from_operator(op);
  auto prof = mixing_profile(chain, job.analysis.phi);
  auto fit1 = fit_decay(prof.points, false);
  auto fit2 = fit_decay(prof.points, true);
  r.put("mixing_model", run_detail::fit_model_name(fit1));
  r.put("mixing_param", run_detail::fit_param(fit1));
  auto quartic = quartic_mixing_series(prof, fit1);
  auto pair = pair_mixing_condition(prof, fit2);
  r.put("quartic_series", quartic.value);
  r.put("quartic_convergent", quartic.convergent);
  r.put("pair_series", pair.value);
  r.put("pair_convergent", pair.convergent);

  double M = std::sqrt(std::max(nu_of_square(op, f) - sq(mean), 0.0));
  auto ac = asip_constants(prof, fit1, M, job.run.steps);
  r.put("C", ac.C);
  r.put("c_n", ac.c_n);
  r.put("x_n", ac.x_n);
  r.put("y_n", ac.y_n);
  r.put("deviation_bound", pinelis_bound(ac.x_n, ac.y_n, ac.c_n));

  Table phi;
  phi.name = "mixing";
  phi.header = {"lag", "phi1", "phi2_lower", "model", "fitted_param"};
  std::string model = run_detail::fit_model_name(fit1);
  std::string param = format_double(run_detail::fit_param(fit1));
  for (const auto& p : prof.points)
    phi.row({std::to_string(p.lag), format_double(p.phi1), format_double(p.phi2), model, param});
  r.tables.push_back(std::move(phi));

  Table cov;
  cov.name = "covariances";
  cov.header = {"lag", "covariance"};
  for (std::size_t k = 0; k < s2.covariances.size(); ++k)
    cov.row({std::to_string(k + 1), format_double(s2.covariances[k])});
  r.tables.push_back(std::move(cov));

  if (job.raw.contains("run")) {
    auto ens = run_detail::run_ensemble(op, job, st, f);
    auto vars = ensemble_variance(ens);
    double sigma = std::sqrt(std::max(s2.sigma2, 0.0));
    std::vector<double> z(ens.sums.size());
    std::size_t last = ens.checkpoints.size() - 1;
    for (std::size_t i = 0; i < ens.sums.size(); ++i)
      z[i] = ens.sums[i][last] / std::sqrt(double(ens.checkpoints[last]));
    r.put("ensemble_var_over_n", vars.back().second);
    if (sigma > 0) r.put("clt_ks", ks_normal(z, sigma));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Dispatch and rendering
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& operation_names() {
  static const std::vector<std::string> names = {
      "map-validate", "density",    "correlations", "variance",      "clt",
      "wip",          "lil",        "mixing",       "gordin",        "decompose",
      "martingale",   "constants",  "coupling-demo", "full-report"};
  return names;
}

inline OpResult run_operation(const std::string& name, const JobConfig& job,
                              const RunSettings& st) {
  if (name == "map-validate") return op_map_validate(job);
  if (name == "density") return op_density(job);
  if (name == "correlations") return op_correlations(job);
  if (name == "variance") return op_variance(job, st);
  if (name == "clt") return op_clt(job, st);
  if (name == "wip") return op_wip(job, st);
  if (name == "lil") return op_lil(job, st);
  if (name == "mixing") return op_mixing(job);
  if (name == "gordin") return op_gordin(job);
  if (name == "decompose") return op_decompose(job);
  if (name == "martingale") return op_martingale(job, st);
  if (name == "constants") return op_constants(job);
  if (name == "coupling-demo") return op_coupling_demo(job, st);
  if (name == "full-report") return op_full_report(job, st);
  throw config_error("unknown operation: " + name);
}

inline std::string render_table_csv(const Table& t) {
  CsvWriter w(t.header);
  for (const auto& row : t.rows) w.add_row(row);
  return w.str();
}

inline std::string render_summary(const OpResult& r) {
  std::string out;
  for (const auto& [k, v] : r.info) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

// single JSON artifact carrying the summary plus all tables
inline std::string render_json(const std::string& op_name, const OpResult& r) {
  json root;
  root["operation"] = op_name;
  json summary = json::object();
  for (const auto& [k, v] : r.info) summary[k] = v;
  root["summary"] = summary;
  json tables = json::object();
  for (const auto& t : r.tables) {
    json rows = json::array();
    for (const auto& row : t.rows) {
      json obj = json::object();
      for (std::size_t c = 0; c < t.header.size(); ++c) obj[t.header[c]] = row[c];
      rows.push_back(obj);
    }
    tables[t.name] = rows;
  }
  root["tables"] = tables;
  return root.dump(2) + "\n";
}

// artifacts written next to results; reruns reproduce a run from this alone
inline std::string render_manifest(const JobConfig& job, std::uint64_t seed) {
  json m;
  m["schema_version"] = manifest_schema_version;
  m["tool"] = tool_name;
  m["seed"] = seed;
  m["config"] = job.raw;
  return m.dump(2) + "\n";
}

}  // namespace mapstat
