#include "alff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "alff/alff_branch.hpp"
#include "alff/conv.hpp"
#include "alff/detector.hpp"
#include "alff/losses.hpp"
#include "alff/lstm.hpp"
#include "alff/objective.hpp"

namespace alff {

namespace {

/// One checked coordinate: where the value lives and its analytic derivative.
struct Coord {
  std::string name;
  double* value;
  double analytic;
};

class Checker {
 public:
  Checker(std::string unit, double tol, const GradcheckOptions& opts) : opts_(opts) {
    r_.unit = std::move(unit);
    r_.tolerance = tol;
  }

  void run(std::vector<Coord> coords, const std::function<double()>& loss) {
    if (opts_.corrupt_unit == r_.unit && !coords.empty()) {
      coords.front().analytic = coords.front().analytic * 1.01 + 1e-3;
    }
    for (const Coord& c : coords) {
      const double saved = *c.value;
      *c.value = saved + opts_.step;
      const double plus = loss();
      *c.value = saved - opts_.step;
      const double minus = loss();
      *c.value = saved;
      const double numeric = (plus - minus) / (2.0 * opts_.step);
      const double denom = std::max({std::abs(c.analytic), std::abs(numeric), kRelErrorFloor});
      const double rel = std::abs(c.analytic - numeric) / denom;
      if (!(rel <= r_.worst_rel_error)) {  // also catches NaN
        r_.worst_rel_error = std::isnan(rel) ? INFINITY : rel;
        r_.worst_at = c.name;
      }
      ++r_.coordinates;
    }
  }

  GradUnitResult result() const { return r_; }

 private:
  const GradcheckOptions& opts_;
  GradUnitResult r_;
};

void add_params(std::vector<Coord>& out, std::vector<std::pair<std::string, ParamTensor<double>*>> values,
                std::vector<std::pair<std::string, ParamTensor<double>*>> grads) {
  for (std::size_t k = 0; k < values.size(); ++k) {
    auto& v = values[k].second->data;
    const auto& g = grads[k].second->data;
    for (std::size_t i = 0; i < v.size(); ++i) {
      out.push_back({values[k].first + "[" + std::to_string(i) + "]", &v[i], g[i]});
    }
  }
}

template <typename M>
void add_matrix(std::vector<Coord>& out, const std::string& name, M& values, const RowMatrix<double>& grad) {
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    out.push_back({name + "[" + std::to_string(i) + "]", values.data() + i, grad.data()[i]});
  }
}

void fill_uniform(std::span<double> v, SplitMix& rng, double lo, double hi) {
  for (double& x : v) x = rng.uniform(lo, hi);
}

RowMatrix<double> random_matrix(int rows, int cols, SplitMix& rng, double scale = 1.0) {
  RowMatrix<double> m(rows, cols);
  fill_uniform({m.data(), static_cast<std::size_t>(m.size())}, rng, -scale, scale);
  return m;
}

Tensor3<double> random_tensor(int c, int h, int w, SplitMix& rng, double scale = 1.0) {
  Tensor3<double> t(c, h, w);
  fill_uniform(t.values(), rng, -scale, scale);
  return t;
}

double dot(const Tensor3<double>& a, const Tensor3<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

GradUnitResult check_lstm(const GradcheckOptions& opts) {
  SplitMix rng(derive_key({opts.seed, 1}));
  const int in = 3, hd = 4, cols = 5;
  LstmWeights<double> w(in, hd);
  w.init(rng);
  RowMatrix<double> x = random_matrix(in, cols, rng);
  LstmState<double> s0{random_matrix(hd, cols, rng, 0.5), random_matrix(hd, cols, rng, 0.5)};
  const RowMatrix<double> rh = random_matrix(hd, cols, rng);
  const RowMatrix<double> rc = random_matrix(hd, cols, rng);
  auto loss = [&] {
    const LstmState<double> s1 = lstm_cell_forward(x, s0, w);
    return (s1.h.array() * rh.array()).sum() + (s1.c.array() * rc.array()).sum();
  };
  LstmCache<double> cache;
  lstm_cell_forward(x, s0, w, &cache);
  LstmWeights<double> g = w;
  zero_params<double>(g);
  const LstmGradients<double> d = lstm_cell_backward(rh, rc, cache, w, g);

  std::vector<Coord> coords;
  add_params(coords, collect_params<double>(w), collect_params<double>(g));
  add_matrix(coords, "x", x, d.x);
  add_matrix(coords, "h_prev", s0.h, d.state.h);
  add_matrix(coords, "c_prev", s0.c, d.state.c);
  Checker ck("lstm_cell", kUnitTolerance, opts);
  ck.run(std::move(coords), loss);
  return ck.result();
}

GradUnitResult check_conv(const GradcheckOptions& opts) {
  SplitMix rng(derive_key({opts.seed, 2}));
  ConvBlockParams<double> p(ConvShape{2, 3, 3, 1, 1, true, true});
  p.init(rng);
  fill_uniform(p.gamma.data, rng, 0.5, 1.5);
  fill_uniform(p.beta.data, rng, -0.5, 0.5);
  Tensor3<double> x = random_tensor(2, 5, 5, rng);
  const Tensor3<double> r = random_tensor(3, 5, 5, rng);
  auto loss = [&] { return dot(conv_block_forward(p, x), r); };
  ConvBlockCache<double> cache;
  conv_block_forward(p, x, &cache);
  ConvBlockParams<double> g = p;
  zero_params<double>(g);
  const Tensor3<double> dx = conv_block_backward(p, cache, r, g);

  std::vector<Coord> coords;
  add_params(coords, collect_params<double>(p), collect_params<double>(g));
  for (std::size_t i = 0; i < x.size(); ++i) coords.push_back({"x[" + std::to_string(i) + "]", &x[i], dx[i]});
  Checker ck("conv_block", kUnitTolerance, opts);
  ck.run(std::move(coords), loss);
  return ck.result();
}

GradUnitResult check_alff(const GradcheckOptions& opts) {
  SplitMix rng(derive_key({opts.seed, 3}));
  AlffParams<double> p(AlffShape{2, 2, 8});
  p.init(rng);
  for (auto& b : p.blocks) {
    fill_uniform(b.gamma.data, rng, 0.5, 1.5);
    fill_uniform(b.beta.data, rng, -0.5, 0.5);
  }
  Tensor3<double> x = random_tensor(2, 4, 4, rng);
  const Tensor3<double> r = random_tensor(1, 32, 32, rng);
  auto loss = [&] { return dot(alff_forward(p, x), r); };
  AlffCache<double> cache;
  alff_forward(p, x, &cache);
  AlffParams<double> g = p;
  zero_params<double>(g);
  const Tensor3<double> dx = alff_backward(p, cache, r, g);

  std::vector<Coord> coords;
  add_params(coords, collect_params<double>(p), collect_params<double>(g));
  for (std::size_t i = 0; i < x.size(); ++i) coords.push_back({"x[" + std::to_string(i) + "]", &x[i], dx[i]});
  Checker ck("alff", kUnitTolerance, opts);
  ck.run(std::move(coords), loss);
  return ck.result();
}

template <typename LossFn>
GradUnitResult check_bin_loss(const std::string& unit, std::uint64_t salt, const GradcheckOptions& opts, LossFn fn) {
  SplitMix rng(derive_key({opts.seed, salt}));
  Checker ck(unit, kUnitTolerance, opts);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> logits(16);
    fill_uniform(logits, rng, -3.0, 3.0);
    // Keep targets off integer bins, where the loss has a kink.
    double y = rng.uniform_int(0, 14) + rng.uniform(0.05, 0.95);
    const double xi = rng.normal();
    std::vector<double> grad;
    fn(BinDistribution::from_logits(logits), y, xi, &grad);
    auto loss = [&] { return fn(BinDistribution::from_logits(logits), y, xi, nullptr); };
    std::vector<Coord> coords;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      coords.push_back({"trial" + std::to_string(trial) + ".logit[" + std::to_string(i) + "]", &logits[i], grad[i]});
    }
    ck.run(std::move(coords), loss);
  }
  return ck.result();
}

GradUnitResult check_heatmap_loss(const GradcheckOptions& opts) {
  SplitMix rng(derive_key({opts.seed, 6}));
  Tensor3<double> pred = random_tensor(1, 6, 7, rng);
  Tensor3<double> target(1, 6, 7);
  fill_uniform(target.values(), rng, 0.0, 1.0);
  Tensor3<double> grad;
  heatmap_loss(pred, target, &grad);
  std::vector<Coord> coords;
  for (std::size_t i = 0; i < pred.size(); ++i) coords.push_back({"pred[" + std::to_string(i) + "]", &pred[i], grad[i]});
  Checker ck("heatmap_loss", kUnitTolerance, opts);
  ck.run(std::move(coords), [&] { return heatmap_loss(pred, target); });
  return ck.result();
}

GradUnitResult check_pipeline(const GradcheckOptions& opts) {
  ModelConfig cfg;
  cfg.stem = {4, 4, 6};
  cfg.p8 = 6;
  cfg.p16 = 5;
  cfg.p32 = 4;
  cfg.head_hidden = 4;
  cfg.lstm_hidden = 3;
  cfg.n_bins = 8;
  DetectorParams<double> p(cfg);
  p.init(opts.seed);
  SplitMix rng(derive_key({opts.seed, 7}));
  Tensor3<double> image(3, 32, 32);
  fill_uniform(image.values(), rng, 0.0, 1.0);
  // Off-grid boxes so no regression target sits on a bin boundary.
  const std::vector<Box> truths = {Box(3.3, 4.6, 17.2, 15.9), Box(14.7, 12.1, 29.4, 30.2)};
  AssignOptions assign;
  assign.n_bins = cfg.n_bins;
  const AssignedTargets targets = assign_targets(truths, 32, 32, assign);
  const Tensor3<double> heatmap = training_heatmap(truths, 32, 32);
  ObjectiveOptions o;
  o.enable_ncdfl = true;
  o.noise.seed = opts.seed;
  o.noise.sigma_n = 0.1;
  o.step = 3;

  auto loss = [&] {
    const DetectorOutput<double> out = forward_full(p, image, true);
    return compute_objective(out, truths, targets, &heatmap, o).total;
  };
  DetectorCache<double> cache;
  const DetectorOutput<double> out = forward_full(p, image, true, &cache);
  const ImageObjective<double> obj = compute_objective(out, truths, targets, &heatmap, o);
  DetectorParams<double> g = p;
  zero_params<double>(g);
  backward_full(p, cache, obj.grad_head, obj.grad_heatmap, g);

  std::vector<Coord> coords;
  add_params(coords, collect_params<double>(p), collect_params<double>(g));
  Checker ck("pipeline", kPipelineTolerance, opts);
  ck.run(std::move(coords), loss);
  return ck.result();
}

}  // namespace

std::vector<std::string> gradcheck_units() {
  return {"lstm_cell", "conv_block", "alff", "dfl", "nc_dfl", "heatmap_loss", "pipeline"};
}

GradUnitResult run_gradcheck_unit(const std::string& unit, const GradcheckOptions& opts) {
  if (unit == "lstm_cell") return check_lstm(opts);
  if (unit == "conv_block") return check_conv(opts);
  if (unit == "alff") return check_alff(opts);
  if (unit == "dfl") {
    return check_bin_loss("dfl", 4, opts, [](const BinDistribution& d, double y, double, std::vector<double>* g) {
      return g ? dfl_with_grad(d, y, g) : dfl(d, y);
    });
  }
  if (unit == "nc_dfl") {
    NoiseConfig cfg;
    cfg.sigma_n = 0.3;
    return check_bin_loss("nc_dfl", 5, opts, [cfg](const BinDistribution& d, double y, double xi, std::vector<double>* g) {
      return g ? nc_dfl_with_grad(d, y, cfg, xi, g) : nc_dfl(d, y, cfg, xi);
    });
  }
  if (unit == "heatmap_loss") return check_heatmap_loss(opts);
  if (unit == "pipeline") return check_pipeline(opts);
  throw std::invalid_argument("gradcheck: unknown unit '" + unit + "'");
}

std::vector<GradUnitResult> run_gradcheck(const GradcheckOptions& opts) {
  std::vector<GradUnitResult> out;
  for (const auto& u : gradcheck_units()) out.push_back(run_gradcheck_unit(u, opts));
  return out;
}

}  // namespace alff
