#pragma once

#include <cstdint>
#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

#include "fndet/dataset.hpp"
#include "fndet/model.hpp"

namespace fndet {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

struct RunConfig {
  std::string command;
  std::string config;  // graph config file; falls back to <ckpt>.cfg, then the desk default
  std::string data;    // dataset root (images/, labels/, optional train.txt/val.txt/test.txt)
  std::string ckpt;
  std::string pred;   // directory of <id>.csv detections for eval / export-curves
  std::string out;
  std::string split;  // manifest name under the data root, empty for every image
  std::string format = "csv";  // detect output: csv or yolo
  std::uint64_t seed = 0;
  int iterations = -1;  // -1: the command's default
  int batch = 4;
  double lr = 0.01;
  double momentum = 0.937;
  int img_size = 0;  // 0: take the size from the graph config
  double conf = -1;  // -1: 0.001 for eval paths, 0.25 for detect
  double iou_nms = 0.45;
  bool nms_free = true;
  int max_dets = 300;
  int val_every = 100;
  int n_images = 32;  // synth
  int max_objects = 3;
  int threads = 1;
};

/// FNDETECT_THREADS if set and positive, else 1.
int thread_cap();

/// Maps an exception from a command onto an exit code.
int exit_code_for(const std::exception& e);

/// Runs cfg.command and returns its exit code. Errors are reported on `err`.
int run_command(const RunConfig& cfg, std::ostream& out, std::ostream& err);

int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_detect(const RunConfig& cfg, std::ostream& out);
int cmd_eval(const RunConfig& cfg, std::ostream& out);
int cmd_export_curves(const RunConfig& cfg, std::ostream& out);
int cmd_bench(const RunConfig& cfg, std::ostream& out);
int cmd_ablate(const RunConfig& cfg, std::ostream& out);
int cmd_synth(const RunConfig& cfg, std::ostream& out);

/// Graph config for a run: --config, else <ckpt>.cfg, else desk; --img-size applied last.
GraphConfig resolve_graph(const RunConfig& cfg);

struct AblationRow {
  int row = 0;
  std::string name;
  std::size_t params = 0;        // deployed model: one-to-many heads removed
  std::size_t train_params = 0;  // both heads
  std::uint64_t flops = 0;
  double final_loss = 0;
  bool finite = true;
  double ap50 = 0;
  double ap50_95 = 0;
};

/// Builds, trains and evaluates ablation rows 1..7 on `data` (evaluated on
/// the same images through the NMS-free path).
std::vector<AblationRow> run_ablation(const std::vector<Sample>& data, int iterations, std::uint64_t seed,
                                      int batch = 4, std::ostream* progress = nullptr);
/// "row,name,params,train_params,flops,final_loss,finite,ap50,ap50_95".
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace fndet
