// Batch driver: lmc <command> --config a.ini [--config b.ini ...] [--out dir] [--seed k] [--jobs j]
//
// Exit status: 0 when every row is ok, 2 when some row failed, 1 on a
// configuration or output error.

#include <algorithm>
#include <filesystem>
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lmc/experiments.hpp"

namespace {

const std::map<std::string, std::set<lmc::ExperimentKind>> kCommands = {
    {"solve", {lmc::ExperimentKind::solve}},
    {"flow", {lmc::ExperimentKind::flow}},
    {"gallery", {lmc::ExperimentKind::counterexample_gallery}},
    {"jacobi", {lmc::ExperimentKind::jacobi_report}},
    {"concavity", {lmc::ExperimentKind::concavity_sweep}},
    {"rotate", {lmc::ExperimentKind::rotation_check}},
    {"scaling", {lmc::ExperimentKind::hessian_scaling, lmc::ExperimentKind::gradient_scaling}},
};

struct Job {
  std::string path;
  lmc::ExperimentConfig config;
  std::string dir;
};

struct Outcome {
  std::vector<std::string> summary;
  std::size_t failed = 0;
  std::optional<std::string> io_error;
};

Outcome execute(const Job& job) {
  Outcome o;
  const lmc::ExperimentReport rep = lmc::run(job.config);
  o.summary = rep.summary;
  o.failed = rep.failed_rows();
  try {
    lmc::emit_csv(rep, job.dir);
  } catch (const lmc::IoError& e) {
    o.io_error = e.what();
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite-difference experiments for Lagrangian phase equations"};
  app.require_subcommand(1);

  std::vector<std::string> configs;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;

  for (const auto& [name, kinds] : kCommands) {
    std::string desc = "run ";
    for (lmc::ExperimentKind k : kinds) desc += std::string(lmc::to_string(k)) + " ";
    desc += "experiments";
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", configs, "INI file; repeat for a batch")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (one subdirectory per config in a batch)");
    sub->add_option("--seed", seed, "random seed, overrides experiment.seed");
    sub->add_option("--jobs", jobs, "independent runs executed concurrently")->check(CLI::Range(1u, 64u));
  }

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();
  const auto& allowed = kCommands.at(command);

  std::vector<Job> batch;
  for (const std::string& path : configs) {
    try {
      Job j{path, lmc::load_config(path), {}};
      if (!allowed.count(j.config.kind))
        throw lmc::ConfigError("experiment.kind", std::string("'") + lmc::to_string(j.config.kind) +
                                                      "' cannot be run by the " + command + " command");
      if (seed) j.config.seed = *seed;
      const std::string root = out.value_or(j.config.out);
      j.dir = configs.size() == 1 ? root
                                  : (std::filesystem::path(root) / std::filesystem::path(path).stem()).string();
      batch.push_back(std::move(j));
    } catch (const lmc::ConfigError& e) {
      std::cerr << path << ": config error: " << e.what() << '\n';
      return 1;
    } catch (const lmc::IoError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return 1;
    }
  }
  if (configs.size() > 1) {
    std::set<std::string> dirs;
    for (const Job& j : batch)
      if (!dirs.insert(j.dir).second) {
        std::cerr << "config error: two configs share the output directory " << j.dir << '\n';
        return 1;
      }
  }

  std::vector<Outcome> outcomes(batch.size());
  for (std::size_t start = 0; start < batch.size(); start += jobs) {
    const std::size_t stop = std::min(batch.size(), start + jobs);
    std::vector<std::future<Outcome>> running;
    for (std::size_t i = start; i < stop; ++i)
      running.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, execute, std::cref(batch[i])));
    for (std::size_t i = start; i < stop; ++i) outcomes[i] = running[i - start].get();
  }

  int status = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::cout << "[" << batch[i].path << " -> " << batch[i].dir << "]\n";
    for (const std::string& line : outcomes[i].summary) std::cout << "  " << line << '\n';
    if (outcomes[i].io_error) {
      std::cerr << "output error: " << *outcomes[i].io_error << '\n';
      status = 1;
    } else if (outcomes[i].failed > 0 && status == 0) {
      status = 2;
    }
  }
  return status;
}
