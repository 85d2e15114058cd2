#include "fndet/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "fndet/cost.hpp"
#include "fndet/eval.hpp"
#include "fndet/postprocess.hpp"
#include "fndet/train.hpp"

namespace fndet {

namespace fs = std::filesystem;

namespace {

constexpr std::array<double, 3> kSplitRatios = {600, 200, 250};

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  return os;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + " is required");
}

// Samples listed in <root>/<manifest>.txt, or every image when no manifest
// is requested. A default manifest that does not exist also means every image.
std::vector<Sample> load_data(const RunConfig& cfg, const std::string& default_manifest) {
  require(cfg.data, "--data");
  const std::string name = cfg.split.empty() ? default_manifest : cfg.split;
  if (!name.empty()) {
    const fs::path manifest = fs::path(cfg.data) / (name + ".txt");
    if (fs::exists(manifest)) return load_dataset(cfg.data, read_manifest(manifest.string()));
    if (!cfg.split.empty()) throw Error("no manifest " + manifest.string());
  }
  return load_dataset(cfg.data);
}

void check_sizes(const std::vector<Sample>& data, const GraphConfig& g) {
  for (const auto& s : data) {
    if (s.image.h() != g.input_h || s.image.w() != g.input_w) {
      throw DimensionError("hw", "image " + s.id + " is " + std::to_string(s.image.w()) + "x" +
                                     std::to_string(s.image.h()) + ", model expects " + std::to_string(g.input_w) +
                                     "x" + std::to_string(g.input_h) + " (see --img-size)");
    }
  }
}

Detector load_model(const RunConfig& cfg) {
  require(cfg.ckpt, "--ckpt");
  Detector m(resolve_graph(cfg), cfg.seed);
  m.load(cfg.ckpt);
  return m;
}

DetectOptions detect_options(const RunConfig& cfg, double default_conf) {
  DetectOptions o;
  o.nms_free = cfg.nms_free;
  o.score_thresh = cfg.conf >= 0 ? cfg.conf : default_conf;
  o.iou_thresh = cfg.iou_nms;
  o.max_dets = cfg.max_dets;
  o.threads = cfg.threads;
  return o;
}

// Detections from --pred (one <id>.csv per image; a missing file means no
// detections) or from running the checkpoint.
std::vector<ImageEval> gather(const RunConfig& cfg) {
  const auto data = load_data(cfg, "");
  if (!cfg.pred.empty()) {
    if (!fs::is_directory(cfg.pred)) throw Error("prediction directory " + cfg.pred + " does not exist");
    std::vector<ImageEval> out;
    for (const auto& s : data) {
      ImageEval ev;
      ev.gts = to_pixel_boxes(s.gts, s.image.w(), s.image.h());
      const fs::path p = fs::path(cfg.pred) / (s.id + ".csv");
      if (fs::exists(p)) {
        std::ifstream is(p);
        try {
          ev.dets = read_detections_csv(is);
        } catch (const ParseError& e) {
          throw ParseError(p.string() + ": " + e.what());
        }
      }
      out.push_back(std::move(ev));
    }
    return out;
  }
  if (cfg.ckpt.empty()) throw ConfigError("give --pred or --ckpt");
  const Detector model = load_model(cfg);
  check_sizes(data, model.config());
  return detect_samples(model, data, detect_options(cfg, 0.001));
}

double tail_mean(const std::vector<TrainStep>& log, std::size_t n) {
  if (log.empty()) return 0;
  n = std::min(n, log.size());
  double s = 0;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) s += log[i].loss.total;
  return s / static_cast<double>(n);
}

}  // namespace

int thread_cap() {
  if (const char* env = std::getenv("FNDETECT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  return kExitData;
}

GraphConfig resolve_graph(const RunConfig& cfg) {
  GraphConfig g;
  if (!cfg.config.empty()) {
    g = GraphConfig::load(cfg.config);
  } else if (!cfg.ckpt.empty() && fs::exists(cfg.ckpt + ".cfg")) {
    g = GraphConfig::load(cfg.ckpt + ".cfg");
  }
  if (cfg.img_size > 0) {
    g.input_h = g.input_w = cfg.img_size;
    g.validate();
  }
  return g;
}

int run_command(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    if (cfg.command == "train") return cmd_train(cfg, out);
    if (cfg.command == "detect") return cmd_detect(cfg, out);
    if (cfg.command == "eval") return cmd_eval(cfg, out);
    if (cfg.command == "export-curves") return cmd_export_curves(cfg, out);
    if (cfg.command == "bench") return cmd_bench(cfg, out);
    if (cfg.command == "ablate") return cmd_ablate(cfg, out);
    if (cfg.command == "synth") return cmd_synth(cfg, out);
    err << "unknown command '" << cfg.command << "'\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  require(cfg.ckpt, "--ckpt");
  if (cfg.batch < 1) throw ConfigError("--batch must be >= 1");
  const GraphConfig g = resolve_graph(cfg);
  const auto data = load_data(cfg, "train");
  check_sizes(data, g);
  std::vector<Sample> val;
  const fs::path val_manifest = fs::path(cfg.data) / "val.txt";
  if (cfg.split.empty() && cfg.val_every > 0 && fs::exists(val_manifest)) {
    val = load_dataset(cfg.data, read_manifest(val_manifest.string()));
    check_sizes(val, g);
  }

  TrainConfig tc;
  tc.iterations = cfg.iterations < 0 ? 500 : cfg.iterations;
  tc.batch = cfg.batch;
  tc.lr = cfg.lr;
  tc.momentum = cfg.momentum;
  tc.seed = cfg.seed;

  Detector model(g, cfg.seed);
  const std::string loss_path = cfg.out.empty() ? cfg.ckpt + ".loss.csv" : cfg.out;
  std::ofstream loss_log = open_out(loss_path);
  loss_log << "iter,lr,loss,cls_o2m,box_o2m,cls_o2o,box_o2o\n" << std::setprecision(17);
  std::ofstream val_log;
  if (!val.empty()) {
    val_log = open_out(loss_path + ".val.csv");
    val_log << "iter,ap50,ap50_95\n" << std::setprecision(17);
  }
  DetectOptions vopt;
  vopt.threads = cfg.threads;

  const auto log = train(model, data, tc, [&](const TrainStep& s) {
    write_loss_log_row(loss_log, s);
    const int done = s.iteration + 1;
    if (!val.empty() && (done % cfg.val_every == 0 || done == tc.iterations)) {
      const MapResult m = map_over_classes_and_thresholds(detect_samples(model, val, vopt));
      val_log << done << ',' << m.ap50 << ',' << m.ap50_95 << '\n';
      out << "iter " << done << "  loss " << s.loss.total << "  val AP50 " << m.ap50 << '\n';
    }
  });
  model.save(cfg.ckpt);
  g.save(cfg.ckpt + ".cfg");
  out << "trained " << tc.iterations << " iterations on " << data.size() << " images; final loss "
      << tail_mean(log, 1) << "\ncheckpoint " << cfg.ckpt << "\nloss log " << loss_path << '\n';
  return kExitOk;
}

int cmd_detect(const RunConfig& cfg, std::ostream& out) {
  require(cfg.out, "--out");
  if (cfg.format != "csv" && cfg.format != "yolo") throw ConfigError("--format must be csv or yolo");
  const Detector model = load_model(cfg);
  const auto data = load_data(cfg, "");
  check_sizes(data, model.config());
  const auto results = detect_samples(model, data, detect_options(cfg, 0.25));
  fs::create_directories(cfg.out);
  std::size_t total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& dets = results[i].dets;
    total += dets.size();
    if (cfg.format == "csv") {
      std::ofstream os = open_out(fs::path(cfg.out) / (data[i].id + ".csv"));
      write_detections_csv(os, dets);
    } else {
      std::ofstream os = open_out(fs::path(cfg.out) / (data[i].id + ".txt"));
      write_detections_yolo(os, dets, data[i].image.w(), data[i].image.h());
    }
  }
  out << (cfg.nms_free ? "nms-free" : "nms") << " path: " << total << " detections over " << data.size()
      << " images -> " << cfg.out << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const auto images = gather(cfg);
  const EvalSummary s = summarize(images);
  const MapResult m = map_over_classes_and_thresholds(images);
  write_summary(out, s);
  if (!cfg.out.empty()) {
    fs::create_directories(cfg.out);
    std::ofstream summary = open_out(fs::path(cfg.out) / "summary.txt");
    write_summary(summary, s);
    std::ofstream curve = open_out(fs::path(cfg.out) / "curve.csv");
    write_curve_csv(curve, pooled_curve(images, 0.5));
    std::ofstream per_class = open_out(fs::path(cfg.out) / "per_class.csv");
    per_class << "class,gts,dets,ap50,ap50_95\n" << std::setprecision(17);
    for (const auto& c : m.per_class) {
      per_class << c.class_id << ',' << c.gts << ',' << c.dets << ',' << c.ap50 << ',' << c.ap50_95 << '\n';
    }
  }
  return kExitOk;
}

int cmd_export_curves(const RunConfig& cfg, std::ostream& out) {
  require(cfg.out, "--out");
  const auto images = gather(cfg);
  fs::create_directories(cfg.out);
  std::ofstream table = open_out(fs::path(cfg.out) / "ap_vs_iou.csv");
  table << "iou,ap\n" << std::setprecision(17);
  for (int k = 0; k < 10; ++k) {
    const int pct = 50 + 5 * k;
    const PRCurve c = pooled_curve(images, pct / 100.0);
    std::ofstream os = open_out(fs::path(cfg.out) / ("pr_iou" + std::to_string(pct) + ".csv"));
    write_curve_csv(os, c);
    table << pct / 100.0 << ',' << c.ap << '\n';
  }
  // Per-class curves at IoU 0.5.
  std::vector<int> classes;
  for (const auto& c : map_over_classes_and_thresholds(images).per_class) classes.push_back(c.class_id);
  for (int cls : classes) {
    std::vector<ImageEval> only;
    for (const auto& im : images) {
      ImageEval e;
      for (const auto& d : im.dets) {
        if (d.class_id == cls) e.dets.push_back(d);
      }
      for (const auto& g : im.gts) {
        if (g.class_id == cls) e.gts.push_back(g);
      }
      only.push_back(std::move(e));
    }
    std::ofstream os = open_out(fs::path(cfg.out) / ("pr_class" + std::to_string(cls) + "_iou50.csv"));
    write_curve_csv(os, pooled_curve(only, 0.5));
  }
  out << "wrote 10 IoU curves and " << classes.size() << " class curves to " << cfg.out << '\n';
  return kExitOk;
}

int cmd_bench(const RunConfig& cfg, std::ostream& out) {
  const GraphConfig g = resolve_graph(cfg);
  const CostReport report = graph_cost(g);
  if (!cfg.out.empty()) {
    std::ofstream os = open_out(cfg.out);
    report.write_csv(os);
  }
  out << "layers " << report.layers.size() << "\nflops " << report.total_flops() << "\nmem_access "
      << report.total_mem_access() << "\nparams " << report.total_params() << '\n';

  // Headline identity at c = 64, r = 1/4, k = 3, 32x32.
  const ConvCost conv = cost_conv(32, 32, 3, 64, 64);
  const ConvCost pconv = cost_pconv(32, 32, 3, 16);
  const ConvCost dw = cost_dwconv(32, 32, 3, 64);
  const bool sixteenth = pconv.flops * 16 == conv.flops;
  const bool dw_ratio = dw.flops * 64 == conv.flops;
  out << "pconv/conv flops (c=64, cp=16, k=3): " << pconv.flops << "/" << conv.flops << " = 1/"
      << conv.flops / pconv.flops << (sixteenth ? "" : "  MISMATCH") << '\n';
  out << "dwconv/conv flops: 1/" << conv.flops / dw.flops << (dw_ratio ? "" : "  MISMATCH") << '\n';
  out << "pconv memory access / conv: " << static_cast<double>(pconv.mem_access) / static_cast<double>(conv.mem_access)
      << '\n';

  const int iters = cfg.iterations < 0 ? 3 : cfg.iterations;
  if (iters > 0) {
    Detector model(g, cfg.seed);
    const Tensor4 x({cfg.batch, 3, g.input_h, g.input_w}, 0.5);
    model.infer(x);  // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) model.infer(x);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    out << "inference " << ms / iters / cfg.batch << " ms/image (batch " << cfg.batch << ", " << iters << " runs)\n";
  }
  return sixteenth && dw_ratio ? kExitOk : kExitNumeric;
}

std::vector<AblationRow> run_ablation(const std::vector<Sample>& data, int iterations, std::uint64_t seed, int batch,
                                      std::ostream* progress) {
  if (data.empty()) throw Error("ablation needs at least one image");
  std::vector<AblationRow> rows;
  for (int row = 1; row <= 7; ++row) {
    GraphConfig g = GraphConfig::ablation(row);
    g.input_h = data[0].image.h();
    g.input_w = data[0].image.w();
    g.validate();
    check_sizes(data, g);
    AblationRow r;
    r.row = row;
    r.name = GraphConfig::ablation_name(row);
    r.flops = graph_cost(g).total_flops();
    Detector model(g, seed);
    r.train_params = model.params().trainable_scalars();
    TrainConfig tc;
    tc.iterations = iterations;
    tc.batch = batch;
    tc.seed = seed;
    try {
      r.final_loss = tail_mean(train(model, data, tc), 10);
      r.finite = std::isfinite(r.final_loss);
    } catch (const NumericError&) {
      r.finite = false;
    }
    if (r.finite) {
      const MapResult m = map_over_classes_and_thresholds(detect_samples(model, data, DetectOptions{}));
      r.ap50 = m.ap50;
      r.ap50_95 = m.ap50_95;
    }
    model.strip_one_to_many();
    r.params = model.params().trainable_scalars();
    if (progress) {
      *progress << "row " << row << " " << r.name << ": params " << r.params << ", loss " << r.final_loss << ", AP50 "
                << r.ap50 << '\n';
    }
    rows.push_back(r);
  }
  return rows;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "row,name,params,train_params,flops,final_loss,finite,ap50,ap50_95\n";
  const auto old = os.precision(17);
  for (const auto& r : rows) {
    os << r.row << ",\"" << r.name << "\"," << r.params << ',' << r.train_params << ',' << r.flops << ','
       << r.final_loss << ',' << (r.finite ? 1 : 0) << ',' << r.ap50 << ',' << r.ap50_95 << '\n';
  }
  os.precision(old);
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  const int size = cfg.img_size > 0 ? cfg.img_size : 64;
  const auto data = cfg.data.empty() ? synth_blobs(cfg.n_images, size, cfg.max_objects, 1000 + cfg.seed)
                                     : load_data(cfg, "train");
  const auto rows = run_ablation(data, cfg.iterations < 0 ? 100 : cfg.iterations, cfg.seed, cfg.batch, &out);
  const std::string path = cfg.out.empty() ? "ablation.csv" : cfg.out;
  std::ofstream os = open_out(path);
  write_ablation_csv(os, rows);
  out << "comparison -> " << path << '\n';
  for (const auto& r : rows) {
    if (!r.finite) return kExitNumeric;
  }
  return kExitOk;
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  require(cfg.out, "--out");
  const int size = cfg.img_size > 0 ? cfg.img_size : 64;
  const auto samples = synth_blobs(cfg.n_images, size, cfg.max_objects, cfg.seed);
  save_dataset(cfg.out, samples);
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  const Split sp = split(ids, kSplitRatios, cfg.seed);
  write_manifest((fs::path(cfg.out) / "train.txt").string(), sp.train);
  write_manifest((fs::path(cfg.out) / "val.txt").string(), sp.val);
  write_manifest((fs::path(cfg.out) / "test.txt").string(), sp.test);
  out << samples.size() << " images (" << size << "x" << size << ") -> " << cfg.out << "; split " << sp.train.size()
      << "/" << sp.val.size() << "/" << sp.test.size() << '\n';
  return kExitOk;
}

}  // namespace fndet
