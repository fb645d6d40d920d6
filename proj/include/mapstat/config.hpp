#pragma once

// JSON job configuration. Parsing is strict: unknown keys anywhere in the
// tree are config errors naming the full key path, so typos fail loudly
// instead of silently running with defaults.

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mapstat/chain.hpp"
#include "mapstat/common.hpp"
#include "mapstat/interval_map.hpp"
#include "mapstat/observable.hpp"
#include "mapstat/statistics.hpp"
#include "mapstat/ulam.hpp"
#include "mapstat/version.hpp"

namespace mapstat {

using nlohmann::json;

namespace cfg {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline void check_known(const json& obj, std::initializer_list<const char*> allowed,
                        const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed)
      if (it.key() == a) { ok = true; break; }
    if (!ok) throw config_error("unknown key '" + join(path, it.key()) + "'");
  }
}

inline const json& require(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) throw config_error("missing key '" + join(path, key) + "'");
  return *it;
}

inline void require_object(const json& v, const std::string& where) {
  if (!v.is_object()) throw config_error("'" + where + "' must be an object");
}

inline double as_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw config_error("'" + where + "' must be a number");
  return v.get<double>();
}

inline std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) throw config_error("'" + where + "' must be a string");
  return v.get<std::string>();
}

inline bool as_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) throw config_error("'" + where + "' must be a boolean");
  return v.get<bool>();
}

inline std::size_t as_count(const json& v, const std::string& where) {
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw config_error("'" + where + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

inline int as_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw config_error("'" + where + "' must be an integer");
  return v.get<int>();
}

// optional scalar getters; leave the target untouched when the key is absent
inline void opt_number(const json& obj, const char* key, const std::string& path, double& out) {
  auto it = obj.find(key);
  if (it != obj.end()) out = as_number(*it, join(path, key));
}
inline void opt_count(const json& obj, const char* key, const std::string& path, std::size_t& out) {
  auto it = obj.find(key);
  if (it != obj.end()) out = as_count(*it, join(path, key));
}
inline void opt_int(const json& obj, const char* key, const std::string& path, int& out) {
  auto it = obj.find(key);
  if (it != obj.end()) out = as_int(*it, join(path, key));
}
inline void opt_bool(const json& obj, const char* key, const std::string& path, bool& out) {
  auto it = obj.find(key);
  if (it != obj.end()) out = as_bool(*it, join(path, key));
}
inline void opt_string(const json& obj, const char* key, const std::string& path, std::string& out) {
  auto it = obj.find(key);
  if (it != obj.end()) out = as_string(*it, join(path, key));
}

inline std::vector<double> as_number_array(const json& v, const std::string& where) {
  if (!v.is_array()) throw config_error("'" + where + "' must be an array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(as_number(v[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

}  // namespace cfg

inline IntervalMap parse_map(const json& m, const std::string& path = "map") {
  cfg::require_object(m, path);
  std::string kind = cfg::as_string(cfg::require(m, "kind", path), cfg::join(path, "kind"));
  if (kind == "doubling") {
    cfg::check_known(m, {"kind"}, path);
    return make_doubling();
  }
  if (kind == "tent") {
    cfg::check_known(m, {"kind"}, path);
    return make_tent();
  }
  if (kind == "piecewise_linear") {
    cfg::check_known(m, {"kind", "slopes"}, path);
    auto slopes = cfg::as_number_array(cfg::require(m, "slopes", path), cfg::join(path, "slopes"));
    return make_piecewise_linear(slopes);
  }
  if (kind == "lsv") {
    cfg::check_known(m, {"kind", "gamma"}, path);
    double gamma = cfg::as_number(cfg::require(m, "gamma", path), cfg::join(path, "gamma"));
    return make_lsv(gamma);
  }
  if (kind == "custom_linear") {
    cfg::check_known(m, {"kind", "branches"}, path);
    const json& arr = cfg::require(m, "branches", path);
    if (!arr.is_array() || arr.empty())
      throw config_error("'" + cfg::join(path, "branches") + "' must be a non-empty array");
    std::vector<LinearBranchSpec> specs;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      std::string bp = cfg::join(path, "branches[" + std::to_string(i) + "]");
      cfg::require_object(arr[i], bp);
      cfg::check_known(arr[i], {"lo", "hi", "image_lo", "image_hi", "increasing"}, bp);
      LinearBranchSpec sp;
      sp.lo = cfg::as_number(cfg::require(arr[i], "lo", bp), cfg::join(bp, "lo"));
      sp.hi = cfg::as_number(cfg::require(arr[i], "hi", bp), cfg::join(bp, "hi"));
      sp.image_lo = cfg::as_number(cfg::require(arr[i], "image_lo", bp), cfg::join(bp, "image_lo"));
      sp.image_hi = cfg::as_number(cfg::require(arr[i], "image_hi", bp), cfg::join(bp, "image_hi"));
      cfg::opt_bool(arr[i], "increasing", bp, sp.increasing);
      specs.push_back(sp);
    }
    return make_custom_linear(specs);
  }
  throw config_error("'" + cfg::join(path, "kind") +
                     "' must be one of: doubling, tent, piecewise_linear, lsv, custom_linear");
}

inline TailFunction parse_tail(const json& t, const std::string& path) {
  cfg::require_object(t, path);
  std::string kind = cfg::as_string(cfg::require(t, "kind", path), cfg::join(path, "kind"));
  if (kind == "power") {
    cfg::check_known(t, {"kind", "q"}, path);
    return TailFunction::power(cfg::as_number(cfg::require(t, "q", path), cfg::join(path, "q")));
  }
  if (kind == "bounded") {
    cfg::check_known(t, {"kind", "sup"}, path);
    return TailFunction::bounded_sup(
        cfg::as_number(cfg::require(t, "sup", path), cfg::join(path, "sup")));
  }
  if (kind == "table") {
    cfg::check_known(t, {"kind", "levels", "values"}, path);
    auto ts = cfg::as_number_array(cfg::require(t, "levels", path), cfg::join(path, "levels"));
    auto vs = cfg::as_number_array(cfg::require(t, "values", path), cfg::join(path, "values"));
    return TailFunction::table(std::move(ts), std::move(vs));
  }
  throw config_error("'" + cfg::join(path, "kind") + "' must be one of: power, bounded, table");
}

inline Observable parse_observable(const json& o, const std::string& path = "observable") {
  cfg::require_object(o, path);
  std::string kind = cfg::as_string(cfg::require(o, "kind", path), cfg::join(path, "kind"));
  // keys accepted by every kind
  const char* kTail = "tail";
  const char* kClass = "class";
  const char* kName = "name";

  Observable obs = make_centered_linear();
  if (kind == "centered_linear") {
    cfg::check_known(o, {"kind", kTail, kClass, kName}, path);
    obs = make_centered_linear();
  } else if (kind == "cosine") {
    cfg::check_known(o, {"kind", "k", "normalized", kTail, kClass, kName}, path);
    int k = 1;
    cfg::opt_int(o, "k", path, k);
    bool normalized = false;
    cfg::opt_bool(o, "normalized", path, normalized);
    obs = make_cosine(k, normalized);
  } else if (kind == "power_law") {
    cfg::check_known(o, {"kind", "a", "shift", kTail, kClass, kName}, path);
    double a = cfg::as_number(cfg::require(o, "a", path), cfg::join(path, "a"));
    double shift = 0.0;
    cfg::opt_number(o, "shift", path, shift);
    obs = make_power_law(a, shift);
  } else if (kind == "log_damped_power") {
    cfg::check_known(o, {"kind", "a", "b", kTail, kClass, kName}, path);
    double a = cfg::as_number(cfg::require(o, "a", path), cfg::join(path, "a"));
    double b = cfg::as_number(cfg::require(o, "b", path), cfg::join(path, "b"));
    obs = make_log_damped_power(a, b);
  } else if (kind == "indicator") {
    cfg::check_known(o, {"kind", "lo", "hi", "weight", kTail, kClass, kName}, path);
    double lo = cfg::as_number(cfg::require(o, "lo", path), cfg::join(path, "lo"));
    double hi = cfg::as_number(cfg::require(o, "hi", path), cfg::join(path, "hi"));
    double weight = 1.0;
    cfg::opt_number(o, "weight", path, weight);
    obs = make_indicator(lo, hi, weight);
  } else if (kind == "combination") {
    cfg::check_known(o, {"kind", "terms", kTail, kClass, kName}, path);
    const json& arr = cfg::require(o, "terms", path);
    if (!arr.is_array() || arr.empty())
      throw config_error("'" + cfg::join(path, "terms") + "' must be a non-empty array");
    std::vector<std::pair<double, Observable>> parts;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      std::string tp = cfg::join(path, "terms[" + std::to_string(i) + "]");
      cfg::require_object(arr[i], tp);
      cfg::check_known(arr[i], {"weight", "observable"}, tp);
      double w = cfg::as_number(cfg::require(arr[i], "weight", tp), cfg::join(tp, "weight"));
      Observable part =
          parse_observable(cfg::require(arr[i], "observable", tp), cfg::join(tp, "observable"));
      parts.emplace_back(w, std::move(part));
    }
    obs = Observable::combine("combination", parts);
  } else {
    throw config_error("'" + cfg::join(path, "kind") +
                       "' must be one of: centered_linear, cosine, power_law, "
                       "log_damped_power, indicator, combination");
  }

  bool has_tail = o.contains(kTail);
  if (has_tail) obs = obs.with_tail_tag(parse_tail(o[kTail], cfg::join(path, kTail)));
  if (o.contains(kClass)) {
    std::string cp = cfg::join(path, kClass);
    cfg::require_object(o[kClass], cp);
    std::string type = cfg::as_string(cfg::require(o[kClass], "type", cp), cfg::join(cp, "type"));
    if (type == "l2") {
      if (has_tail)
        throw config_error("'" + cp + "': the l2 class cannot be combined with a tail profile");
      cfg::check_known(o[kClass], {"type", "M", "p"}, cp);
      double M = cfg::as_number(cfg::require(o[kClass], "M", cp), cfg::join(cp, "M"));
      double p = 2.0;
      cfg::opt_number(o[kClass], "p", cp, p);
      obs = obs.with_l2_tag(M, p);
    } else if (type == "tail") {
      cfg::check_known(o[kClass], {"type"}, cp);
      if (!has_tail)
        throw config_error("'" + cp + "': the tail class needs a tail profile ('" +
                           cfg::join(path, kTail) + "')");
      // with_tail_tag already set the class
    } else {
      throw config_error("'" + cfg::join(cp, "type") + "' must be 'l2' or 'tail'");
    }
  }
  std::string name;
  cfg::opt_string(o, kName, path, name);
  if (!name.empty()) obs = obs.renamed(name);
  return obs;
}

struct GridConfig {
  std::size_t bins = 1024;
  bool geometric = false;
  double first_width = 1e-8;
  UlamBuildOptions ulam;
};

struct RunConfig {
  std::size_t trajectories = 1000;
  std::size_t steps = 4096;
  std::size_t min_checkpoint = 16;
  std::string mode = "auto";  // auto | forward | backward
};

struct CouplingConfig {
  std::size_t n = 1000000;
  int levels = 12;   // epsilon levels 2^-1 .. 2^-levels
  int seeds = 100;   // harness replications
};

struct AnalysisConfig {
  PhiOptions phi;
  Sigma2Options sigma2;
  int gordin_terms = 40;
  double lil_threshold = 0.0;       // 0: derive from the mixing constants
  double normalization_ratio = 1.5;
  double clip_level = 10.0;
  double l2_eps = 0.1;
  double lil_gamma = 0.0;  // 0: skip the tail-integral criterion
  double martingale_M = 1.0;
  std::size_t martingale_paths = 32;
  CouplingConfig coupling;
};

struct JobConfig {
  json raw;  // config block as given, for manifest round-trips
  std::optional<IntervalMap> map;
  std::optional<Observable> observable;
  GridConfig grid;
  RunConfig run;
  AnalysisConfig analysis;
  std::string label;
  std::optional<std::uint64_t> manifest_seed;
};

inline GridConfig parse_grid(const json& g, const std::string& path = "grid") {
  cfg::require_object(g, path);
  cfg::check_known(g, {"bins", "scheme", "first_width", "tol", "max_iterations", "cesaro_every"},
                   path);
  GridConfig out;
  cfg::opt_count(g, "bins", path, out.bins);
  if (out.bins < 2) throw config_error("'" + cfg::join(path, "bins") + "' must be at least 2");
  std::string scheme = "uniform";
  cfg::opt_string(g, "scheme", path, scheme);
  if (scheme == "geometric")
    out.geometric = true;
  else if (scheme != "uniform")
    throw config_error("'" + cfg::join(path, "scheme") + "' must be 'uniform' or 'geometric'");
  cfg::opt_number(g, "first_width", path, out.first_width);
  cfg::opt_number(g, "tol", path, out.ulam.tol);
  cfg::opt_int(g, "max_iterations", path, out.ulam.max_iterations);
  cfg::opt_int(g, "cesaro_every", path, out.ulam.cesaro_every);
  return out;
}

inline RunConfig parse_run(const json& r, const std::string& path = "run") {
  cfg::require_object(r, path);
  cfg::check_known(r, {"trajectories", "steps", "mode", "min_checkpoint"}, path);
  RunConfig out;
  cfg::opt_count(r, "trajectories", path, out.trajectories);
  cfg::opt_count(r, "steps", path, out.steps);
  cfg::opt_count(r, "min_checkpoint", path, out.min_checkpoint);
  cfg::opt_string(r, "mode", path, out.mode);
  if (out.mode != "auto" && out.mode != "forward" && out.mode != "backward")
    throw config_error("'" + cfg::join(path, "mode") +
                       "' must be 'auto', 'forward' or 'backward'");
  if (out.trajectories == 0 || out.steps == 0)
    throw config_error("'" + path + "': trajectories and steps must be positive");
  return out;
}

inline AnalysisConfig parse_analysis(const json& a, const std::string& path = "analysis") {
  cfg::require_object(a, path);
  cfg::check_known(a,
                   {"max_lag", "pair_bins", "i1_window", "gap_window", "sigma2_max_lag",
                    "sigma2_tol", "gordin_terms", "lil_threshold", "normalization_ratio",
                    "clip_level", "l2_eps", "lil_gamma", "martingale_M", "martingale_paths",
                    "coupling"},
                   path);
  AnalysisConfig out;
  cfg::opt_int(a, "max_lag", path, out.phi.max_lag);
  cfg::opt_count(a, "pair_bins", path, out.phi.pair_bins);
  cfg::opt_int(a, "i1_window", path, out.phi.i1_window);
  cfg::opt_int(a, "gap_window", path, out.phi.gap_window);
  cfg::opt_int(a, "sigma2_max_lag", path, out.sigma2.max_lag);
  cfg::opt_number(a, "sigma2_tol", path, out.sigma2.abs_tol);
  cfg::opt_int(a, "gordin_terms", path, out.gordin_terms);
  cfg::opt_number(a, "lil_threshold", path, out.lil_threshold);
  cfg::opt_number(a, "normalization_ratio", path, out.normalization_ratio);
  cfg::opt_number(a, "clip_level", path, out.clip_level);
  cfg::opt_number(a, "l2_eps", path, out.l2_eps);
  cfg::opt_number(a, "lil_gamma", path, out.lil_gamma);
  cfg::opt_number(a, "martingale_M", path, out.martingale_M);
  cfg::opt_count(a, "martingale_paths", path, out.martingale_paths);
  if (a.contains("coupling")) {
    std::string cp = cfg::join(path, "coupling");
    cfg::require_object(a["coupling"], cp);
    cfg::check_known(a["coupling"], {"n", "levels", "seeds"}, cp);
    cfg::opt_count(a["coupling"], "n", cp, out.coupling.n);
    cfg::opt_int(a["coupling"], "levels", cp, out.coupling.levels);
    cfg::opt_int(a["coupling"], "seeds", cp, out.coupling.seeds);
    if (out.coupling.levels < 2)
      throw config_error("'" + cfg::join(cp, "levels") + "' must be at least 2");
  }
  return out;
}

inline JobConfig parse_config(const json& j) {
  JobConfig job;
  json body = j;
  if (j.is_object() && j.contains("schema_version") && j.contains("config")) {
    // a manifest from a previous run doubles as a config
    cfg::check_known(j, {"schema_version", "tool", "seed", "config"}, "");
    int sv = cfg::as_int(cfg::require(j, "schema_version", ""), "schema_version");
    if (sv != manifest_schema_version)
      throw config_error("unsupported manifest schema_version " + std::to_string(sv));
    if (j.contains("tool")) {
      std::string t = cfg::as_string(j["tool"], "tool");
      if (t != tool_name) throw config_error("manifest tool mismatch: '" + t + "'");
    }
    if (j.contains("seed")) job.manifest_seed = cfg::as_count(j["seed"], "seed");
    body = j["config"];
  }
  cfg::require_object(body, "config");
  cfg::check_known(body, {"map", "observable", "grid", "run", "analysis", "output"}, "");
  job.raw = body;
  if (body.contains("map")) job.map = parse_map(body["map"]);
  if (body.contains("observable")) job.observable = parse_observable(body["observable"]);
  if (body.contains("grid")) job.grid = parse_grid(body["grid"]);
  if (body.contains("run")) job.run = parse_run(body["run"]);
  if (body.contains("analysis")) job.analysis = parse_analysis(body["analysis"]);
  if (body.contains("output")) {
    cfg::require_object(body["output"], "output");
    cfg::check_known(body["output"], {"label"}, "output");
    cfg::opt_string(body["output"], "label", "output", job.label);
  }
  return job;
}

inline json parse_json_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("invalid JSON: ") + e.what());
  }
}

inline JobConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(parse_json_text(ss.str()));
}

}  // namespace mapstat
