#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "trsbts/harness.hpp"

namespace {

using namespace trsbts;

using Command = std::vector<fs::path> (*)(const ExperimentConfig&, const RunContext&);

int fail_with(const std::string& code, int status, const std::string& message) {
  std::cerr << "error: " << message << '\n' << error_trailer(code, status, message) << '\n';
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Schrodinger-bridge time-series generator: fitting, generation and experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 0;

  const std::vector<std::pair<std::string, std::pair<std::string, Command>>> commands{
      {"fit", {"Fit every level on the training data and write a model directory", cmd_fit}},
      {"generate", {"Warm-start and generate paths from a fitted model directory", cmd_generate}},
      {"validate", {"Energy-score a fitted model on the validation paths", cmd_validate}},
      {"sweep-dim", {"Run the ambient-dimension sweep on the Hopf generator", cmd_sweep_dim}},
      {"ladder", {"Select hyperparameters with the three-phase ladder", cmd_ladder}},
      {"heston", {"Run the Heston parameter-recovery experiment", cmd_heston}},
      {"select-reference", {"Pick a reference family by entropic validation", cmd_select_reference}},
  };
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required();
    sub->add_option("--seed", seed, "Master seed; replaces the config's seed list");
    sub->add_option("--out", out, "Output directory; replaces output_dir");
    sub->add_option("--threads", threads, "Worker threads (default: TRSBTS_THREADS, then all cores)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail_with("UsageError", 2, e.what());
  }

  try {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (app.get_subcommands().front()->count("--seed") > 0) cfg.seeds = {seed};
    RunContext ctx;
    ctx.seed = cfg.seeds.front();
    ctx.threads = resolve_threads(threads);
    ctx.out = out.empty() ? cfg.output_dir : fs::path(out);
    ctx.log = &std::cerr;
    fs::create_directories(ctx.out);
    const std::string name = app.get_subcommands().front()->get_name();
    for (const auto& [n, entry] : commands) {
      if (n != name) continue;
      for (const auto& f : entry.second(cfg, ctx)) std::cout << f.string() << '\n';
    }
    return 0;
  } catch (const Error& e) {
    return fail_with(std::string(errc_name(e.code())), exit_code_for(e.code()), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail_with("DataError", 3, e.what());
  } catch (const std::exception& e) {
    return fail_with("NumericFailure", 4, e.what());
  }
}
