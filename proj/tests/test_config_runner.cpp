#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mapstat/config.hpp"
#include "mapstat/runner.hpp"

using namespace mapstat;
namespace fs = std::filesystem;

namespace {

json demo_config() {
  return json::parse(R"({
    "map": {"kind": "doubling"},
    "observable": {"kind": "cosine", "k": 1},
    "grid": {"bins": 128},
    "run": {"trajectories": 64, "steps": 512},
    "analysis": {"max_lag": 8}
  })");
}

std::string error_text(const json& j) {
  try {
    parse_config(j);
    return "";
  } catch (const config_error& e) {
    return e.what();
  }
}

}  // namespace

TEST_CASE("a full config parses into typed blocks") {
  auto job = parse_config(demo_config());
  REQUIRE(job.map.has_value());
  REQUIRE(job.observable.has_value());
  CHECK(job.map->name() == "doubling");
  CHECK(job.observable->name() == "cosine");
  CHECK(job.grid.bins == 128);
  CHECK_FALSE(job.grid.geometric);
  CHECK(job.run.trajectories == 64);
  CHECK(job.run.steps == 512);
  CHECK(job.analysis.phi.max_lag == 8);
  CHECK_FALSE(job.manifest_seed.has_value());
}

TEST_CASE("unknown keys are rejected with their full path") {
  auto top = demo_config();
  top["outputs"] = 1;
  CHECK(error_text(top).find("'outputs'") != std::string::npos);

  auto mp = demo_config();
  mp["map"]["gama"] = 0.5;
  CHECK(error_text(mp).find("'map.gama'") != std::string::npos);

  auto an = demo_config();
  an["analysis"]["coupling"] = {{"seedz", 3}};
  CHECK(error_text(an).find("'analysis.coupling.seedz'") != std::string::npos);

  auto ob = demo_config();
  ob["observable"] = {
      {"kind", "combination"},
      {"terms", {{{"wait", 1.0}, {"observable", {{"kind", "cosine"}}}}}}};
  CHECK(error_text(ob).find("observable.terms[0].wait") != std::string::npos);
}

TEST_CASE("type mismatches name the offending key") {
  auto g = demo_config();
  g["grid"]["bins"] = "many";
  CHECK(error_text(g).find("'grid.bins'") != std::string::npos);

  auto r = demo_config();
  r["run"]["mode"] = "sideways";
  CHECK(error_text(r).find("'run.mode'") != std::string::npos);

  auto m = demo_config();
  m["map"]["kind"] = "rotation";
  CHECK(error_text(m).find("map.kind") != std::string::npos);
}

TEST_CASE("observable attachments parse and conflict checks fire") {
  json o = {{"kind", "power_law"},
            {"a", 0.25},
            {"tail", {{"kind", "power"}, {"q", 4.0}}},
            {"class", {{"type", "tail"}}},
            {"name", "heavy"}};
  auto obs = parse_observable(o);
  CHECK(obs.name() == "heavy");
  CHECK(obs.tag().kind == ClassKind::tail_class);

  json conflict = o;
  conflict["class"] = {{"type", "l2"}, {"M", 1.0}};
  CHECK_THROWS_AS(parse_observable(conflict), config_error);

  json orphan = {{"kind", "cosine"}, {"class", {{"type", "tail"}}}};
  CHECK_THROWS_AS(parse_observable(orphan), config_error);

  json l2 = {{"kind", "power_law"},
             {"a", 0.3},
             {"class", {{"type", "l2"}, {"M", 0.9}, {"p", 4.0}}}};
  auto tagged = parse_observable(l2);
  CHECK(tagged.tag().kind == ClassKind::l2_class);
  CHECK(tagged.tag().M == 0.9);
}

TEST_CASE("manifests unwrap to their embedded config") {
  json manifest = {{"schema_version", manifest_schema_version},
                   {"tool", tool_name},
                   {"seed", 42},
                   {"config", demo_config()}};
  auto job = parse_config(manifest);
  REQUIRE(job.manifest_seed.has_value());
  CHECK(*job.manifest_seed == 42);
  CHECK(job.raw == demo_config());

  auto wrong_tool = manifest;
  wrong_tool["tool"] = "othertool";
  CHECK_THROWS_AS(parse_config(wrong_tool), config_error);

  auto wrong_version = manifest;
  wrong_version["schema_version"] = 99;
  CHECK_THROWS_AS(parse_config(wrong_version), config_error);
}

TEST_CASE("invalid JSON text maps to a config failure") {
  CHECK_THROWS_AS(parse_json_text("{not json"), config_error);
  CHECK_THROWS_AS(load_config_file("/nonexistent/path.json"), config_error);
}

TEST_CASE("operations demand their inputs by block name") {
  json no_map = {{"observable", {{"kind", "cosine"}}}};
  auto job = parse_config(no_map);
  RunSettings st;
  try {
    run_operation("density", job, st);
    FAIL("expected config_error");
  } catch (const config_error& e) {
    CHECK(std::string(e.what()).find("'map'") != std::string::npos);
  }
  CHECK_THROWS_AS(run_operation("no-such-op", job, st), config_error);
}

TEST_CASE("density operation emits one row per bin") {
  auto job = parse_config(demo_config());
  RunSettings st;
  auto res = run_operation("density", job, st);
  REQUIRE(res.tables.size() == 1);
  CHECK(res.tables[0].rows.size() == 128);
  bool found = false;
  for (const auto& [k, v] : res.info)
    if (k == "stationarity_error") found = true;
  CHECK(found);
}

TEST_CASE("rendered results are byte-identical across runs and threads") {
  auto job = parse_config(demo_config());
  RunSettings one;
  one.seed = 3;
  one.threads = 1;
  RunSettings four = one;
  four.threads = 4;

  auto a = run_operation("variance", job, one);
  auto b = run_operation("variance", job, four);
  CHECK(render_json("variance", a) == render_json("variance", b));
  REQUIRE(a.tables.size() == b.tables.size());
  for (std::size_t t = 0; t < a.tables.size(); ++t)
    CHECK(render_table_csv(a.tables[t]) == render_table_csv(b.tables[t]));
}

TEST_CASE("manifests replay to the same bytes and omit the thread count") {
  auto job = parse_config(demo_config());
  std::string manifest = render_manifest(job, 21);
  CHECK(manifest.find("threads") == std::string::npos);
  CHECK(manifest.find("\"seed\": 21") != std::string::npos);

  auto replay = parse_config(parse_json_text(manifest));
  REQUIRE(replay.manifest_seed.has_value());
  CHECK(*replay.manifest_seed == 21);

  RunSettings st;
  st.seed = 21;
  auto a = run_operation("clt", job, st);
  auto b = run_operation("clt", replay, st);
  CHECK(render_json("clt", a) == render_json("clt", b));
}

TEST_CASE("certification failures surface as numeric errors") {
  json cfg = {{"map", {{"kind", "lsv"}, {"gamma", 0.25}}},
              {"grid",
               {{"bins", 128},
                {"scheme", "geometric"},
                {"first_width", 1e-6},
                {"max_iterations", 2}}}};
  auto job = parse_config(cfg);
  RunSettings st;
  try {
    run_operation("density", job, st);
    FAIL("expected convergence_error");
  } catch (const convergence_error& e) {
    CHECK(std::string(e.what()).find("build_ulam") != std::string::npos);
  }
}

TEST_CASE("double formatting is stable shortest-roundtrip") {
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(1.0 / 3.0) == "0.33333333333333331");
  CHECK(format_double(-0.0) == "-0");
}

#ifdef MAPSTAT_BIN_DIR
TEST_CASE("command line interface round trips through the exit taxonomy") {
  fs::path bin = fs::path(MAPSTAT_BIN_DIR) / "mapstat";
  if (!fs::exists(bin)) {
    WARN("cli binary not built, skipping");
    return;
  }
  fs::path dir = fs::temp_directory_path() / "mapstat_cli_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto cfg = dir / "job.json";
  {
    std::ofstream os(cfg);
    os << demo_config().dump(2);
  }
  auto shell = [&](const std::string& cmd) {
    int rc = std::system(cmd.c_str());
    return rc == -1 ? -1 : WEXITSTATUS(rc);
  };
  std::string base = "'" + bin.string() + "'";

  // success path with artifacts
  CHECK(shell(base + " variance '" + cfg.string() + "' --out '" + (dir / "o1").string() +
              "' --seed 4 > /dev/null") == 0);
  CHECK(fs::exists(dir / "o1" / "manifest.json"));
  CHECK(fs::exists(dir / "o1" / "covariances.csv"));

  // rerun from the manifest at a different thread count: identical bytes
  CHECK(shell(base + " variance '" + (dir / "o1" / "manifest.json").string() +
              "' --out '" + (dir / "o2").string() + "' --threads 3 > /dev/null") == 0);
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  for (const char* name : {"manifest.json", "covariances.csv", "ensemble_variance.csv"})
    CHECK(slurp(dir / "o1" / name) == slurp(dir / "o2" / name));

  // config failures exit 1
  auto bad = dir / "bad.json";
  {
    std::ofstream os(bad);
    os << R"({"map": {"kind": "doubling", "typo": 1}})";
  }
  CHECK(shell(base + " map-validate '" + bad.string() + "' 2> /dev/null") == 1);

  // certification failures exit 2
  auto hard = dir / "hard.json";
  {
    std::ofstream os(hard);
    os << R"({"map": {"kind": "lsv", "gamma": 0.25},
              "grid": {"bins": 128, "scheme": "geometric",
                       "first_width": 1e-6, "max_iterations": 2}})";
  }
  CHECK(shell(base + " density '" + hard.string() + "' 2> /dev/null") == 2);
  fs::remove_all(dir);
}
#endif
