#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "usseg/app.hpp"

using namespace usseg;

int main(int argc, char** argv) {
  CLI::App cli{"Instance segmentation of nerve, muscle, vein and artery in ultrasound images"};
  cli.require_subcommand(1);
  std::size_t workers = 0;
  cli.add_option("--workers", workers, "parallel workers for the images of a training batch (default: config value)");

  auto* check = cli.add_subcommand("check", "run the self-check suite");
  std::string sabotage = "none", filter;
  check->add_option("--sabotage", sabotage, "inject a fault: conv-grad, sigmoid-grad, nms-order, ap-interp");
  check->add_option("--filter", filter, "only checks whose id contains this text");

  auto* gen = cli.add_subcommand("gen-synth", "write a synthetic corpus as PGM + Labelme JSON");
  std::string config, out_dir, data_dir, ckpt, report, image, out_file;
  std::size_t count = 0;
  bool split = false;
  gen->add_option("--config", config, "run config")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--count", count, "number of images")->required();
  gen->add_flag("--split", split, "write group-disjoint train/ and test/ subdirectories");

  auto* train = cli.add_subcommand("train", "train a model; writes checkpoints and loss.csv");
  train->add_option("--config", config, "run config")->required();
  train->add_option("--data", data_dir, "directory of annotated images")->required();
  train->add_option("--out", out_dir, "output directory")->required();

  auto* eval = cli.add_subcommand("eval", "evaluate a checkpoint; writes a key=value report and a table");
  eval->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  eval->add_option("--data", data_dir, "directory of annotated images")->required();
  eval->add_option("--report", report, "report file")->required();

  auto* predict = cli.add_subcommand("predict", "segment one PGM image; writes a PPM overlay");
  predict->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  predict->add_option("--image", image, "input PGM")->required();
  predict->add_option("--out", out_file, "output PPM")->required();

  auto* bench = cli.add_subcommand("bench", "parameter and MAC counts per configuration");
  bench->add_option("--config", config, "run config")->required();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    cli.exit(e);
    return app::kUsage;
  }

  return app::guarded(std::cerr, [&] {
    if (*check) return app::cmd_check(std::cout, sabotage, filter);
    if (*gen) return app::cmd_gen_synth(std::cout, config, out_dir, count, split);
    if (*train) return app::cmd_train(std::cout, config, data_dir, out_dir, workers);
    if (*eval) return app::cmd_eval(std::cout, ckpt, data_dir, report);
    if (*predict) return app::cmd_predict(std::cout, ckpt, image, out_file);
    return app::cmd_bench(std::cout, config);
  });
}
