#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "esdm/error.hpp"
#include "esdm/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kInput = 2, kNumerical = 3 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Species distribution models from survey data and expert assessments"};
  app.require_subcommand(1);

  std::vector<std::string> configs;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  int threads = 1;
  bool verbose = false;

  auto common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", configs, "configuration document");
    if (config_required) opt->required();
    sub->add_option("--out", out, "output directory");
    sub->add_flag("--verbose", verbose, "progress on stderr");
  };
  auto* simulate = app.add_subcommand("simulate", "write a synthetic dataset");
  common(simulate, false);
  simulate->add_option("--seed", seed, "scenario seed");
  auto* fit = app.add_subcommand("fit", "fit a model");
  common(fit, true);
  fit->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  auto* predict = app.add_subcommand("predict", "predictive surfaces from a fit");
  common(predict, true);
  auto* evaluate = app.add_subcommand("evaluate", "leave-one-out scores for a fit");
  common(evaluate, true);
  evaluate->add_option("--threads", threads, "LOO worker threads")->check(CLI::PositiveNumber);
  auto* compare = app.add_subcommand("compare", "tabulate scores of evaluated fits");
  common(compare, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInput;
  }

  const esdm::Logger log = [&](const std::string& s) {
    if (verbose) std::cerr << s << '\n';
  };
  auto single = [&]() -> const std::string& {
    if (configs.size() != 1) throw esdm::InputError("exactly one --config expected");
    return configs.front();
  };
  try {
    if (*simulate) {
      if (configs.size() > 1) throw esdm::InputError("simulate takes at most one --config");
      const std::optional<std::string> scenario =
          configs.empty() ? std::nullopt : std::optional<std::string>(configs.front());
      esdm::cmd_simulate(scenario, out, seed, log);
    } else if (*fit) {
      esdm::cmd_fit(single(), out, threads, log);
    } else if (*predict) {
      esdm::cmd_predict(single(), out, log);
    } else if (*evaluate) {
      esdm::cmd_evaluate(single(), out, threads, log);
    } else if (*compare) {
      std::cout << esdm::cmd_compare(configs, out, log);
    }
  } catch (const esdm::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInput;
  } catch (const esdm::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInput;
  }
  return kOk;
}
