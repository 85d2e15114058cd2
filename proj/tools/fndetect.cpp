// fndetect: train, detect, eval, bench, export-curves, ablate, synth.
#include <iostream>

#include "CLI11.hpp"
#include "fndet/commands.hpp"

int main(int argc, char** argv) {
  using fndet::RunConfig;
  RunConfig cfg;
  cfg.threads = fndet::thread_cap();

  CLI::App app{"FasterNet-backbone dual-head detector: training, NMS-free inference, evaluation"};
  app.require_subcommand(1);

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", cfg.config, "graph config file (key = value lines)");
    sub->add_option("--data", cfg.data, "dataset root with images/ and labels/");
    sub->add_option("--ckpt", cfg.ckpt, "checkpoint path");
    sub->add_option("--seed", cfg.seed, "random seed");
    sub->add_option("--img-size", cfg.img_size, "square input size, multiple of 32");
    sub->add_option("--out", cfg.out, "output file or directory");
    sub->add_option("--split", cfg.split, "manifest under the data root (train, val, test)");
  };
  auto inference = [&](CLI::App* sub) {
    sub->add_option("--conf", cfg.conf, "score threshold (default 0.25 for detect, 0.001 for eval)");
    sub->add_option("--iou-nms", cfg.iou_nms, "NMS IoU threshold")->check(CLI::Range(0.0, 1.0));
    sub->add_flag("--nms-free,!--nms", cfg.nms_free, "one-to-one head without NMS (default) or one-to-many head + NMS");
    sub->add_option("--max-dets", cfg.max_dets, "detections kept per image");
  };
  auto training = [&](CLI::App* sub) {
    sub->add_option("--iters", cfg.iterations, "training iterations");
    sub->add_option("--batch", cfg.batch, "batch size")->check(CLI::PositiveNumber);
    sub->add_option("--lr", cfg.lr, "initial learning rate");
  };

  CLI::App* train = app.add_subcommand("train", "train both heads jointly; writes checkpoint and loss log");
  common(train);
  training(train);
  train->add_option("--momentum", cfg.momentum, "SGD momentum");
  train->add_option("--val-every", cfg.val_every, "validation AP50 interval in iterations (0 disables)");

  CLI::App* detect = app.add_subcommand("detect", "write per-image detections");
  common(detect);
  inference(detect);
  detect->add_option("--format", cfg.format, "csv or yolo");

  CLI::App* eval = app.add_subcommand("eval", "precision, recall, AP50, AP50-95 and the PR curve");
  common(eval);
  inference(eval);
  eval->add_option("--pred", cfg.pred, "directory of <id>.csv detections (instead of --ckpt)");

  CLI::App* curves = app.add_subcommand("export-curves", "PR curves per IoU threshold and per class as CSV");
  common(curves);
  inference(curves);
  curves->add_option("--pred", cfg.pred, "directory of <id>.csv detections (instead of --ckpt)");

  CLI::App* bench = app.add_subcommand("bench", "per-layer cost CSV, PConv/Conv ratios and inference timing");
  common(bench);
  bench->add_option("--iters", cfg.iterations, "timed forward passes");
  bench->add_option("--batch", cfg.batch, "timing batch size")->check(CLI::PositiveNumber);

  CLI::App* ablate = app.add_subcommand("ablate", "train and compare the seven ablation configurations");
  common(ablate);
  training(ablate);
  ablate->add_option("--n", cfg.n_images, "synthetic images when --data is not given");

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic blob dataset with train/val/test manifests");
  common(synth);
  synth->add_option("--n", cfg.n_images, "number of images");
  synth->add_option("--max-objects", cfg.max_objects, "objects per image, at most");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? fndet::kExitOk : fndet::kExitUsage;
  }
  cfg.command = app.get_subcommands().front()->get_name();
  return fndet::run_command(cfg, std::cout, std::cerr);
}
