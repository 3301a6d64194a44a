#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "falab/errors.hpp"
#include "falab/experiment.hpp"

namespace {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kDiverged = 3,
  kAssumption = 4,
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  int jobs = 1;
  bool emit_plots = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file (defaults apply when omitted)");
  sub->add_option("--seed", c.seed, "Run a single seed instead of the configured list");
  sub->add_option("--out", c.out, "Output directory");
  sub->add_option("--jobs", c.jobs, "Seeds processed in parallel")->check(CLI::PositiveNumber);
  sub->add_flag("--emit-plots", c.emit_plots, "Also write SVG plots");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fuzzy-aware loss laboratory: data, training, adaptation and verifiers"};
  app.require_subcommand(1);
  Common common;
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"gen", "Generate source/target datasets for every seed"},
      {"train-source", "Train source models on the generated source data"},
      {"adapt", "Adapt source models on unlabeled target data"},
      {"compare", "Paired comparison of adaptation losses over the seeds"},
      {"verify", "Run boundedness, risk-gap and gradient verifiers"},
      {"ablate", "Loss-term ablation over the seeds"},
  };
  for (const Sub& s : subs) add_common(app.add_subcommand(s.name, s.help), common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    falab::ExperimentConfig cfg =
        common.config.empty() ? falab::default_config() : falab::load_config(common.config);
    falab::RunOptions opts;
    opts.seed = common.seed;
    if (common.out) opts.out = *common.out;
    opts.jobs = common.jobs;
    opts.emit_plots = common.emit_plots;
    cfg = falab::resolve_config(std::move(cfg), opts);

    if (cmd == "gen") {
      falab::cmd_gen(cfg, opts);
    } else if (cmd == "train-source") {
      falab::cmd_train_source(cfg, opts);
    } else if (cmd == "adapt") {
      falab::cmd_adapt(cfg, opts);
    } else if (cmd == "compare") {
      falab::cmd_compare(cfg, opts);
    } else if (cmd == "ablate") {
      falab::cmd_ablate(cfg, opts);
    } else if (cmd == "verify") {
      if (!falab::cmd_verify(cfg, opts)) {
        std::cerr << "falab: verifier rows fell outside their bound\n";
        return kAssumption;
      }
    }
    std::cout << "wrote " << cfg.paths.output_dir.string() << "\n";
    return kOk;
  } catch (const falab::ConfigError& e) {
    std::cerr << "falab: config error: " << e.what() << "\n";
    return kConfig;
  } catch (const falab::PathError& e) {
    std::cerr << "falab: path error: " << e.what() << "\n";
    return kConfig;
  } catch (const falab::Diverged& e) {
    std::cerr << "falab: diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const falab::AssumptionViolated& e) {
    std::cerr << "falab: assumption violated: " << e.what() << "\n";
    return kAssumption;
  } catch (const std::exception& e) {
    std::cerr << "falab: " << e.what() << "\n";
    return kFailure;
  }
}
