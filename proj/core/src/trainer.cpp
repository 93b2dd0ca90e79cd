#include "alff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "alff/csv.hpp"

namespace alff {

namespace {

bool decays(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf == "weight" || leaf == "input_weights" || leaf == "hidden_weights" || leaf == "fc_weight";
}

bool is_alff(const std::string& name) { return name.rfind("alff.", 0) == 0; }

constexpr const char* kLossHeader = "step,box,cls,dfl,aux,total";

std::string loss_row(const StepLog& s) {
  std::string row = std::to_string(s.step);
  for (double v : {s.terms.box, s.terms.cls, s.terms.dfl, s.terms.aux, s.total}) row += "," + format_number(v);
  return row;
}

}  // namespace

PreparedData prepare_data(const Dataset& ds, int n_bins, bool with_heatmaps) {
  PreparedData d;
  d.image_w = ds.image_w;
  d.image_h = ds.image_h;
  AssignOptions assign;
  assign.n_bins = n_bins;
  for (const Sample& s : ds.samples) {
    d.image_ids.push_back(s.image_id);
    d.images.push_back(to_tensor<float>(s.image));
    d.truths.push_back(s.boxes);
    d.targets.push_back(assign_targets(s.boxes, ds.image_w, ds.image_h, assign));
    if (with_heatmaps) d.heatmaps.push_back(training_heatmap(s.boxes, ds.image_w, ds.image_h));
  }
  return d;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix rng(derive_key({seed, static_cast<std::uint64_t>(epoch), 0x5E0F}));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Trainer::Trainer(RunConfig cfg, ModelConfig model) : cfg_(std::move(cfg)), params_(model) {
  cfg_.validate();
  params_.init(cfg_.seed);
  grads_ = params_;
  zero_params<float>(grads_);
  momentum_ = grads_;
}

void Trainer::restore(const Checkpoint& ck) {
  assign_records(params_, ck.params);
  assign_records(momentum_, ck.momentum);
  epoch_ = static_cast<int>(ck.epoch);
  step_ = ck.step;
}

Checkpoint Trainer::snapshot() {
  Checkpoint ck;
  ck.seed = cfg_.seed;
  ck.epoch = static_cast<std::uint32_t>(epoch_);
  ck.step = step_;
  ck.config_text = serialize_config(cfg_);
  ck.params = records_of(params_);
  ck.momentum = records_of(momentum_);
  return ck;
}

double Trainer::learning_rate(int epoch, std::uint64_t step_in_epoch, std::uint64_t steps_per_epoch) const {
  const double progress =
      epoch + (steps_per_epoch == 0 ? 0.0 : static_cast<double>(step_in_epoch) / static_cast<double>(steps_per_epoch));
  const double span = std::max(1, cfg_.epochs);
  double lr = cfg_.lr * (1.0 - (1.0 - cfg_.final_lr_ratio) * std::min(1.0, progress / span));
  if (progress < cfg_.warmup_epochs) lr *= (progress + 1.0 / std::max<std::uint64_t>(1, steps_per_epoch)) / cfg_.warmup_epochs;
  return lr;
}

void Trainer::apply_update(double lr, double scale) {
  auto p = collect_params<float>(params_);
  auto g = collect_params<float>(grads_);
  auto m = collect_params<float>(momentum_);
  const auto mu = static_cast<float>(cfg_.momentum);
  const auto step = static_cast<float>(lr);
  const auto s = static_cast<float>(scale);
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (!cfg_.enable_alff && is_alff(p[k].first)) continue;
    const float wd = decays(p[k].first) ? static_cast<float>(cfg_.weight_decay) : 0.0f;
    auto w = as_vector(*p[k].second);
    auto v = as_vector(*m[k].second);
    const auto d = as_vector(*g[k].second);
    v = mu * v + s * d + wd * w;
    w -= step * v;
  }
}

void Trainer::train_epoch(const PreparedData& data, const std::function<void(const StepLog&)>& on_step) {
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (cfg_.enable_alff && data.heatmaps.size() != data.size()) {
    throw std::invalid_argument("train: heatmap targets missing for the auxiliary branch");
  }
  const std::vector<std::size_t> order = epoch_order(data.size(), cfg_.seed, epoch_);
  const auto batch = static_cast<std::size_t>(cfg_.batch_size);
  const std::uint64_t steps_per_epoch = (data.size() + batch - 1) / batch;

  ObjectiveOptions opts;
  opts.weights = cfg_.weights;
  opts.enable_ncdfl = cfg_.enable_ncdfl;
  opts.noise = cfg_.noise;
  opts.noise.seed = cfg_.seed;

  for (std::uint64_t s = 0; s < steps_per_epoch; ++s) {
    const std::size_t begin = s * batch;
    const std::size_t end = std::min(data.size(), begin + batch);
    zero_params<float>(grads_);
    StepLog log;
    log.step = step_ + 1;
    log.epoch = epoch_;
    log.lr = learning_rate(epoch_, s, steps_per_epoch);
    opts.step = step_;
    for (std::size_t b = begin; b < end; ++b) {
      const std::size_t i = order[b];
      opts.item = b - begin;
      const DetectorOutput<float> out = forward_full(params_, data.images[i], cfg_.enable_alff, &cache_);
      const Tensor3<double>* hm = cfg_.enable_alff ? &data.heatmaps[i] : nullptr;
      ImageObjective<float> obj;
      try {
        obj = compute_objective(out, data.truths[i], data.targets[i], hm, opts);
      } catch (const NonFiniteLoss& e) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << log.step << " (epoch " << epoch_ << ", image " << data.image_ids[i]
            << "): " << e.what();
        throw TrainingAborted(msg.str(), log.step);
      }
      backward_full(params_, cache_, obj.grad_head, obj.grad_heatmap, grads_);
      log.terms.box += obj.terms.box;
      log.terms.cls += obj.terms.cls;
      log.terms.dfl += obj.terms.dfl;
      log.terms.aux += obj.terms.aux;
      log.total += obj.total;
    }
    const double n = static_cast<double>(end - begin);
    log.terms.box /= n;
    log.terms.cls /= n;
    log.terms.dfl /= n;
    log.terms.aux /= n;
    log.total /= n;
    apply_update(log.lr, 1.0 / n);
    ++step_;
    if (on_step) on_step(log);
  }
  ++epoch_;
}

std::vector<EvalImage> predict(const DetectorParams<float>& params, const PreparedData& data,
                               const PostprocessOptions& opts) {
  std::vector<EvalImage> out;
  out.reserve(data.size());
  DetectorCache<float> cache;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const DetectorOutput<float> o = forward_full(params, data.images[i], false, &cache);
    out.push_back({postprocess(o.head, opts), data.truths[i]});
  }
  return out;
}

ApSummary evaluate(const DetectorParams<float>& params, const PreparedData& data) {
  PostprocessOptions opts;
  opts.score_thr = kEvalScoreThreshold;
  const std::vector<EvalImage> images = predict(params, data, opts);
  return ap_range(images);
}

namespace {

void truncate_loss_csv(const std::filesystem::path& path, std::uint64_t keep_steps) {
  std::vector<std::string> kept;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("resume: cannot read loss log " + path.string());
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto fields = split_csv(line);
    long long step = 0;
    if (fields.empty() || !parse_int(fields[0], &step)) throw std::runtime_error("resume: malformed loss log line");
    if (static_cast<std::uint64_t>(step) <= keep_steps) kept.push_back(line);
  }
  if (kept.size() != keep_steps) throw std::runtime_error("resume: loss log does not cover the checkpoint's steps");
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kLossHeader << "\n";
  for (const auto& l : kept) out << l << "\n";
}

}  // namespace

Trainer run_training(const RunConfig& cfg, const std::filesystem::path* resume, std::ostream& log) {
  cfg.validate();
  Trainer trainer(cfg);
  if (resume) {
    const Checkpoint ck = load_checkpoint(*resume);
    RunConfig saved = parse_config(ck.config_text);
    // Paths and the epoch budget may change on resume; everything else must not.
    saved.checkpoint = cfg.checkpoint;
    saved.loss_csv = cfg.loss_csv;
    saved.dataset = cfg.dataset;
    saved.test_dataset = cfg.test_dataset;
    saved.epochs = cfg.epochs;
    if (!(saved == cfg)) throw std::runtime_error("resume: configuration differs from the checkpoint's");
    trainer.restore(ck);
    truncate_loss_csv(cfg.loss_csv, ck.step);
  }

  const Dataset ds = load_dataset(cfg.dataset);
  if (ds.image_w != cfg.image_size || ds.image_h != cfg.image_size) {
    throw std::runtime_error("dataset image size does not match image_size = " + std::to_string(cfg.image_size));
  }
  const PreparedData data = prepare_data(ds, trainer.params().config.n_bins, cfg.enable_alff);

  std::ofstream csv(cfg.loss_csv, resume ? std::ios::app : std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write loss log " + cfg.loss_csv);
  if (!resume) csv << kLossHeader << "\n";

  while (trainer.epoch() < cfg.epochs) {
    double sum = 0.0;
    int steps = 0;
    trainer.train_epoch(data, [&](const StepLog& s) {
      csv << loss_row(s) << "\n";
      sum += s.total;
      ++steps;
    });
    csv.flush();
    save_checkpoint(trainer.snapshot(), cfg.checkpoint);
    log << "epoch " << trainer.epoch() << "/" << cfg.epochs << "  mean loss " << format_number(sum / steps) << "\n";
  }
  if (cfg.epochs == 0 || trainer.epoch() == 0) save_checkpoint(trainer.snapshot(), cfg.checkpoint);
  return trainer;
}

DetectorParams<float> load_model(const std::filesystem::path& path, RunConfig* cfg_out) {
  const Checkpoint ck = load_checkpoint(path);
  DetectorParams<float> params{ModelConfig{}};
  assign_records(params, ck.params);
  if (cfg_out) *cfg_out = parse_config(ck.config_text);
  return params;
}

}  // namespace alff
