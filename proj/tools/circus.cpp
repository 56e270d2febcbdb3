#include <iostream>
#include <map>

#include "CLI11.hpp"

#include "circus/app.hpp"

int main(int argc, char** argv) {
  using namespace circus;
  CLI::App cli{"Train and evaluate a supine quadruped that rotates a ball with its feet."};
  cli.require_subcommand(1);

  app::TrainOptions train;
  std::uint64_t train_seed = 0;
  std::string train_out;
  auto* t = cli.add_subcommand("train", "run the collect/update loop");
  t->add_option("--config", train.config_path, "JSON run config (defaults when omitted)");
  auto* t_seed = t->add_option("--seed", train_seed, "override the master seed");
  auto* t_out = t->add_option("--out", train_out, "override the output directory");
  t->add_flag("--quiet", train.quiet, "no per-iteration log lines");

  app::EvalOptions eval;
  std::string axis = "yaw";
  auto* e = cli.add_subcommand("eval", "run deterministic episodes and write traces");
  e->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
  e->add_option("--axis", axis, "rotation axis in the base frame")
      ->check(CLI::IsMember({"roll", "pitch", "yaw"}));
  e->add_option("--speed-deg", eval.speed_deg, "commanded speed in deg/s");
  e->add_option("--episodes", eval.episodes, "number of episodes");
  e->add_option("--seed", eval.seed, "evaluation seed");
  e->add_option("--out", eval.out, "output directory for traces and summary");

  std::string inspect_path;
  auto* i = cli.add_subcommand("inspect", "print a checkpoint report");
  i->add_option("--checkpoint", inspect_path, "checkpoint file")->required();

  auto* d = cli.add_subcommand("defaults", "print the default run config");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = cli.exit(err);
    return rc == 0 ? app::kOk : app::kUsage;
  }

  if (t->parsed()) {
    if (t_seed->count()) train.seed = train_seed;
    if (t_out->count()) train.out = train_out;
    train.workers = app::worker_count();
    return app::cmd_train(train);
  }
  if (e->parsed()) {
    eval.axis = parse_axis(axis);
    return app::cmd_eval(eval);
  }
  if (i->parsed()) return app::cmd_inspect(inspect_path);
  if (d->parsed()) return app::cmd_defaults();
  return app::kUsage;
}
