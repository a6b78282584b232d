// Copyright 2026 The sbnd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Command-line front end: sbnd <command> --config <file> [--seed <u64>] [--out <dir>]

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "sbnd/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

int run(int argc, char** argv) {
  CLI::App app{"Sample-based diagonalization with neural samplers"};
  app.set_version_flag("--version", sbnd::kVersion);
  std::string command, config_path, out_dir;
  std::uint64_t seed = 0;
  int seeds = 0;
  app.add_option("command", command, "Command to run")
      ->required()
      ->check(CLI::IsMember(sbnd::command_names()));
  app.add_option("--config", config_path, "TOML run configuration")->required();
  auto* seed_opt = app.add_option("--seed", seed, "Master seed (overrides the config)");
  auto* seeds_opt = app.add_option("--seeds", seeds, "Replicate count (overrides scan.seeds)");
  auto* out_opt = app.add_option("--out", out_dir, "Output directory (overrides the config)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  sbnd::RunConfig rc = sbnd::RunConfig::from_config(sbnd::Config::load(config_path));
  if (*seed_opt) rc.seed = seed;
  if (*seeds_opt) rc.seeds = seeds;
  if (*out_opt) rc.out_dir = out_dir;
  const sbnd::RunResult res = sbnd::run_command(command, rc);

  std::cout << sbnd::kCsvHeader << "\n";
  for (const auto& r : res.rows) std::cout << sbnd::csv_line(r) << "\n";
  std::cerr << "wrote " << res.rows.size() << " rows to " << rc.out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const sbnd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sbnd::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
}
