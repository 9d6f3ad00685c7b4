// SPDX-License-Identifier: Apache-2.0
//
// lwlm <command> --config <file> [--profile desk|paper] [--seed N] [--out DIR]
//
// Commands: generate, pretrain, finetune, evaluate, omp, iblab.
// The default output root comes from LWLM_OUT_ROOT when --out is not given.

#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "lwlm/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"LWLM: hybrid self-supervised pretraining for wireless localization"};
  app.require_subcommand(1);

  struct Shared {
    std::string config;
    std::string profile;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
  };

  std::map<std::string, Shared> shared;
  for (const std::string name : {"generate", "pretrain", "finetune", "evaluate", "omp", "iblab"}) {
    auto* sub = app.add_subcommand(name);
    auto& s = shared[name];
    auto* cfg_opt = sub->add_option("--config", s.config, "key=value configuration file");
    if (name != "iblab") cfg_opt->required();
    sub->add_option("--profile", s.profile, "model profile: desk|paper");
    sub->add_option("--seed", s.seed, "root seed override")->each([&s](const std::string&) {
      s.seed_set = true;
    });
    sub->add_option("--out", s.out, "output directory");
    if (name == "generate") sub->add_option("--threads", s.threads, "generation threads");
  }

  CLI11_PARSE(app, argc, argv);

  const auto* sub = app.get_subcommands().front();
  const auto& s = shared[sub->get_name()];
  lwlm::harness::RunConfig rc;
  try {
    rc.command = lwlm::harness::command_from_string(sub->get_name());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  rc.config_path = s.config;
  rc.profile = s.profile;
  if (s.seed_set) rc.seed = s.seed;
  rc.out_dir = s.out;
  rc.threads = s.threads;
  return lwlm::harness::run(rc);
}
