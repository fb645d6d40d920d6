// Command line front end. One subcommand per operation; every subcommand
// takes a JSON job config and shared output flags.
//
// Exit codes: 0 success (including statistical checks that merely report
// an unfavorable value), 1 configuration errors, 2 numeric certification
// failures (non-convergence, uncertified series tails).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mapstat/config.hpp"
#include "mapstat/runner.hpp"
#include "mapstat/version.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::string format = "csv";
  std::uint64_t seed = 1;
  bool seed_given = false;
  int threads = 1;
};

int run_one(const std::string& op, const CliOptions& cli) {
  mapstat::JobConfig job = mapstat::load_config_file(cli.config_path);

  mapstat::RunSettings st;
  st.threads = cli.threads;
  st.format = cli.format;
  // precedence: explicit --seed, then a manifest's recorded seed, then 1
  st.seed = cli.seed_given ? cli.seed : job.manifest_seed.value_or(cli.seed);

  mapstat::OpResult res = mapstat::run_operation(op, job, st);

  std::cout << mapstat::render_summary(res);
  if (!cli.out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(cli.out_dir);
    auto write = [&](const std::string& name, const std::string& bytes) {
      std::ofstream os(fs::path(cli.out_dir) / name, std::ios::binary);
      if (!os) throw mapstat::error("cannot write artifact: " + name);
      os << bytes;
    };
    if (st.format == "json") {
      write(op + ".json", mapstat::render_json(op, res));
    } else {
      for (const auto& t : res.tables)
        write(t.name + ".csv", mapstat::render_table_csv(t));
    }
    write("manifest.json", mapstat::render_manifest(job, st.seed));
  } else if (st.format == "json") {
    std::cout << mapstat::render_json(op, res);
  } else {
    for (const auto& t : res.tables) {
      std::cout << "# " << t.name << "\n" << mapstat::render_table_csv(t);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"statistics of expanding interval maps"};
  app.set_version_flag("--version",
                       std::string(mapstat::tool_name) + " " + mapstat::tool_version);
  app.require_subcommand(1);

  CliOptions cli;
  std::string chosen;
  for (const auto& name : mapstat::operation_names()) {
    auto* sub = app.add_subcommand(name, "run the '" + name + "' operation");
    sub->add_option("config", cli.config_path, "JSON job config (or a manifest)")
        ->required();
    sub->add_option("--out", cli.out_dir, "artifact directory");
    sub->add_option("--format", cli.format, "csv or json")
        ->check(CLI::IsMember({"csv", "json"}));
    auto* seed_opt = sub->add_option("--seed", cli.seed, "RNG seed");
    sub->add_option("--threads", cli.threads, "worker threads")
        ->check(CLI::PositiveNumber);
    sub->callback([&cli, &chosen, name, seed_opt]() {
      chosen = name;
      cli.seed_given = seed_opt->count() > 0;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    return run_one(chosen, cli);
  } catch (const mapstat::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const mapstat::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
