#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "alff/checkpoint.hpp"
#include "alff/config.hpp"
#include "alff/csv.hpp"
#include "alff/evaluation.hpp"
#include "alff/geometry.hpp"
#include "alff/gradcheck.hpp"
#include "alff/pgm.hpp"
#include "alff/synthetic.hpp"
#include "alff/trainer.hpp"

namespace alff::cli {

namespace {

struct SynthArgs {
  std::string profile;
  int n = 0;
  std::uint64_t seed = 0;
  int size = 160;
  std::string out;
};

struct TrainArgs {
  std::string config_file;
  std::string resume;
  bool print_config = false;
  std::map<std::string, std::string> overrides;
};

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string metrics_csv;
  std::string detections_csv;
  double score_thr = PostprocessOptions{}.score_thr;
  double iou_thr = PostprocessOptions{}.iou_thr;
};

struct HeatmapArgs {
  std::string dataset;
  int image_id = -1;
  std::string out;
  int stride = 8;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::vector<std::string> units;
  std::string corrupt;
};

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const DensityProfile profile = parse_profile(a.profile);
  const Dataset ds = make_split(profile, a.n, a.seed, a.size);
  write_dataset(ds, a.out);
  std::size_t boxes = 0;
  for (const auto& s : ds.samples) boxes += s.boxes.size();
  out << "wrote " << ds.samples.size() << " images, " << boxes << " heads to " << a.out << "\n";
  return 0;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg;
  cfg.batch_size = 4;  // toy-scale default; the config file or flags may restore 16
  if (!a.config_file.empty()) cfg = load_config(a.config_file, cfg);
  apply_seed_env(cfg);
  for (const auto& [key, value] : a.overrides) set_config_value(cfg, key, value);
  cfg.validate();
  if (a.print_config) {
    out << serialize_config(cfg);
    return 0;
  }
  if (cfg.dataset.empty()) throw std::invalid_argument("train: no dataset given");
  const std::filesystem::path resume = a.resume;
  Trainer t = run_training(cfg, a.resume.empty() ? nullptr : &resume, out);
  out << "checkpoint " << cfg.checkpoint << " (epoch " << t.epoch() << ", step " << t.step() << ")\n";
  if (!cfg.test_dataset.empty()) {
    const PreparedData test = prepare_data(load_dataset(cfg.test_dataset), t.params().config.n_bins, false);
    const ApSummary ap = evaluate(t.params(), test);
    out << "test AP50 " << format_number(ap.ap50) << "  AP75 " << format_number(ap.ap75) << "  AP50-95 "
        << format_number(ap.ap50_95) << "\n";
  }
  return 0;
}

void print_metrics_table(const ApSummary& ap, std::size_t images, std::ostream& out) {
  out << "images " << images << "\n";
  out << std::left << std::setw(10) << "metric" << "value\n";
  out << std::setw(10) << "AP50" << std::fixed << std::setprecision(4) << ap.ap50 << "\n";
  out << std::setw(10) << "AP75" << ap.ap75 << "\n";
  out << std::setw(10) << "AP50-95" << ap.ap50_95 << "\n";
  out.unsetf(std::ios::fixed);
  out << std::setprecision(6);
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const DetectorParams<float> params = load_model(a.checkpoint);
  const PreparedData data = prepare_data(load_dataset(a.dataset), params.config.n_bins, false);
  const ApSummary ap = evaluate(params, data);
  print_metrics_table(ap, data.size(), out);

  if (!a.metrics_csv.empty()) {
    std::ofstream m(a.metrics_csv, std::ios::trunc);
    if (!m) throw std::runtime_error("cannot write " + a.metrics_csv);
    m << "metric,value\n";
    m << "ap50," << format_number(ap.ap50) << "\n";
    m << "ap75," << format_number(ap.ap75) << "\n";
    m << "ap50_95," << format_number(ap.ap50_95) << "\n";
    const auto thresholds = coco_thresholds();
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      m << "ap@" << format_number(thresholds[i]) << "," << format_number(ap.per_threshold[i]) << "\n";
    }
  }
  if (!a.detections_csv.empty()) {
    PostprocessOptions opts;
    opts.score_thr = a.score_thr;
    opts.iou_thr = a.iou_thr;
    const std::vector<EvalImage> images = predict(params, data, opts);
    std::ofstream d(a.detections_csv, std::ios::trunc);
    if (!d) throw std::runtime_error("cannot write " + a.detections_csv);
    d << "image_id,x1,y1,x2,y2,score\n";
    for (std::size_t i = 0; i < images.size(); ++i) {
      for (const Detection& det : images[i].detections) {
        d << data.image_ids[i] << "," << format_number(det.box.x1()) << "," << format_number(det.box.y1()) << ","
          << format_number(det.box.x2()) << "," << format_number(det.box.y2()) << "," << format_number(det.score)
          << "\n";
      }
    }
  }
  return 0;
}

int cmd_heatmap(const HeatmapArgs& a, std::ostream& out) {
  const Dataset ds = load_dataset(a.dataset);
  const Sample* sample = nullptr;
  for (const auto& s : ds.samples) {
    if (s.image_id == a.image_id) sample = &s;
  }
  if (sample == nullptr) throw std::invalid_argument("heatmap: unknown image_id " + std::to_string(a.image_id));
  const GridSpec spec{ds.image_w, ds.image_h, a.stride};
  spec.validate();
  const HeatmapTarget hm = render_heatmap(sample->boxes, spec);
  write_pgm(a.out, quantize(hm.grid));
  out << "wrote " << spec.grid_w() << "x" << spec.grid_h() << " heatmap for image " << a.image_id << " ("
      << sample->boxes.size() << " heads) to " << a.out << "\n";
  return 0;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradcheckOptions opts;
  opts.seed = a.seed;
  opts.corrupt_unit = a.corrupt;
  const std::vector<std::string> units = a.units.empty() ? gradcheck_units() : a.units;
  bool ok = true;
  out << std::left << std::setw(14) << "unit" << std::setw(14) << "worst_rel" << std::setw(10) << "tol"
      << std::setw(8) << "coords" << "result\n";
  for (const auto& u : units) {
    const GradUnitResult r = run_gradcheck_unit(u, opts);
    ok = ok && r.passed();
    char worst[32];
    std::snprintf(worst, sizeof worst, "%.3e", r.worst_rel_error);
    char tol[32];
    std::snprintf(tol, sizeof tol, "%.0e", r.tolerance);
    out << std::setw(14) << r.unit << std::setw(14) << worst << std::setw(10) << tol << std::setw(8) << r.coordinates
        << (r.passed() ? "PASS" : "FAIL at " + r.worst_at) << "\n";
  }
  if (!ok) {
    out << "gradcheck FAILED\n";
    return 1;
  }
  out << "gradcheck passed\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Anchor-free head detector with an auxiliary heatmap branch and noise-calibrated DFL", "alff"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic head dataset");
  s->add_option("--profile", synth.profile, "Density profile: low or high")->required();
  s->add_option("--n", synth.n, "Number of images")->required()->check(CLI::PositiveNumber);
  s->add_option("--seed", synth.seed, "Generator seed");
  s->add_option("--size", synth.size, "Square image size in pixels")->check(CLI::PositiveNumber);
  s->add_option("--out", synth.out, "Output directory")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a detector");
  t->add_option("--config", train.config_file, "key = value config file")->check(CLI::ExistingFile);
  t->add_option("--resume", train.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  t->add_flag("--print-config", train.print_config, "Print the resolved config and exit");
  const std::vector<std::string> keys = config_keys();
  std::vector<std::string> slot_values(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    t->add_option("--" + dashed(keys[i]), slot_values[i], "Overrides config key " + keys[i]);
  }

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  e->add_option("--dataset", ev.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--metrics", ev.metrics_csv, "Write metrics CSV here");
  e->add_option("--detections", ev.detections_csv, "Write detections CSV here");
  e->add_option("--score-thr", ev.score_thr, "Score threshold for exported detections")->check(CLI::Range(0.0, 1.0));
  e->add_option("--iou-thr", ev.iou_thr, "NMS IoU threshold for exported detections")->check(CLI::Range(0.0, 1.0));

  HeatmapArgs hm;
  auto* h = app.add_subcommand("heatmap", "Dump the target heatmap of one image as PGM");
  h->add_option("--dataset", hm.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  h->add_option("--image-id", hm.image_id, "Image id")->required();
  h->add_option("--out", hm.out, "Output PGM")->required();
  h->add_option("--stride", hm.stride, "Pixels per heatmap cell")->check(CLI::PositiveNumber);

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every analytic gradient");
  g->add_option("--seed", gc.seed, "Seed for the random instances");
  g->add_option("--unit", gc.units, "Restrict to these units");
  g->add_option("--corrupt", gc.corrupt, "Perturb this unit's analytic gradient (checker self-test)")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err);
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*t) {
      for (std::size_t i = 0; i < keys.size(); ++i) {
        if (t->count("--" + dashed(keys[i])) > 0) train.overrides[keys[i]] = slot_values[i];
      }
      return cmd_train(train, out);
    }
    if (*e) return cmd_eval(ev, out);
    if (*h) return cmd_heatmap(hm, out);
    if (*g) return cmd_gradcheck(gc, out);
  } catch (const CheckpointVersionError& ex) {
    err << "error: " << ex.what() << "\n";
    return 3;
  } catch (const TrainingAborted& ex) {
    err << "error: training aborted: " << ex.what() << "\n";
    return 4;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return 2;
  }
  return 1;
}

}  // namespace alff::cli
