// Command line front end: tumopt run <config> [--out DIR] [--experiment NAME] [--seed N]

#include "tumopt/experiments.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Sparse optimal control of a mechanically coupled tumour growth model"};
  app.require_subcommand(1);

  tumopt::CliOptions opts;
  std::string experiment;
  unsigned seed = 0;
  auto* run = app.add_subcommand("run", "run one experiment preset");
  run->add_option("config", opts.config_path, "configuration file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
  auto* exp_opt = run->add_option("--experiment", experiment, "override experiment.name")
                      ->check(CLI::IsMember(tumopt::experiment_names()));
  auto* seed_opt = run->add_option("--seed", seed, "override experiment.seed");

  std::string dump_path;
  auto* dump = app.add_subcommand("dump-config", "print the validated configuration with all defaults");
  dump->add_option("config", dump_path, "configuration file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  if (*dump) {
    try {
      std::cout << tumopt::load_config(dump_path).dump();
      return 0;
    } catch (const tumopt::ConfigError& e) {
      std::cerr << "configuration error: " << e.what() << '\n';
      return 2;
    }
  }
  if (*exp_opt) opts.experiment = experiment;
  if (*seed_opt) opts.seed = seed;
  return tumopt::run_cli(opts, std::cout);
}
