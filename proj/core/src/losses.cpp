#include "alff/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "alff/random.hpp"

namespace alff {

BinDistribution BinDistribution::from_logits(std::span<const double> logits) {
  if (logits.size() < 2) throw std::invalid_argument("BinDistribution needs at least two bins");
  BinDistribution d;
  d.logits_.assign(logits.begin(), logits.end());
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  const double log_z = m + std::log(z);
  d.probs_.resize(logits.size());
  d.log_probs_.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    d.log_probs_[i] = logits[i] - log_z;
    d.probs_[i] = std::exp(d.log_probs_[i]);
  }
  return d;
}

BinDistribution BinDistribution::from_probs(std::span<const double> probs) {
  if (probs.size() < 2) throw std::invalid_argument("BinDistribution needs at least two bins");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw std::invalid_argument("BinDistribution: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    std::ostringstream msg;
    msg << "BinDistribution: probabilities sum to " << sum;
    throw std::invalid_argument(msg.str());
  }
  BinDistribution d;
  d.probs_.assign(probs.begin(), probs.end());
  d.log_probs_.resize(probs.size());
  d.logits_.resize(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    d.log_probs_[i] = std::log(std::max(probs[i], kLogFloor));
    d.logits_[i] = d.log_probs_[i];
  }
  return d;
}

double BinDistribution::log_prob(int i) const {
  const auto k = static_cast<std::size_t>(i);
  return probs_[k] < kLogFloor ? std::log(kLogFloor) : log_probs_[k];
}

double BinDistribution::expectation() const {
  double e = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) e += probs_[i] * static_cast<double>(i);
  return e;
}

namespace {

struct Neighbors {
  int lo = 0;
  double w_lo = 0.0;  // y_{i+1} - y
  double w_hi = 0.0;  // y - y_i
};

Neighbors neighbors(int bins, double y) {
  if (!(y >= 0.0) || !(y <= bins - 1)) {
    std::ostringstream msg;
    msg << "dfl target " << y << " outside [0, " << bins - 1 << "]";
    throw std::out_of_range(msg.str());
  }
  int lo = static_cast<int>(std::floor(y));
  if (lo >= bins - 1) lo = bins - 2;
  return {lo, static_cast<double>(lo + 1) - y, y - static_cast<double>(lo)};
}

}  // namespace

double dfl(const BinDistribution& dist, double y) {
  const Neighbors n = neighbors(dist.bins(), y);
  return -(n.w_lo * dist.log_prob(n.lo) + n.w_hi * dist.log_prob(n.lo + 1));
}

double dfl_with_grad(const BinDistribution& dist, double y, std::vector<double>* grad_logits) {
  const Neighbors n = neighbors(dist.bins(), y);
  const double loss = -(n.w_lo * dist.log_prob(n.lo) + n.w_hi * dist.log_prob(n.lo + 1));
  if (grad_logits) {
    // d(-log P_k)/dz_j = P_j - [j == k]; a floored log contributes nothing.
    const double a = dist.prob(n.lo) < kLogFloor ? 0.0 : n.w_lo;
    const double b = dist.prob(n.lo + 1) < kLogFloor ? 0.0 : n.w_hi;
    grad_logits->assign(dist.probs().size(), 0.0);
    for (std::size_t j = 0; j < dist.probs().size(); ++j) (*grad_logits)[j] = (a + b) * dist.probs()[j];
    (*grad_logits)[static_cast<std::size_t>(n.lo)] -= a;
    (*grad_logits)[static_cast<std::size_t>(n.lo + 1)] -= b;
  }
  return loss;
}

void NoiseConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("noise alpha must be >= 0");
  if (!(sigma_n >= 0.0) || !std::isfinite(sigma_n)) throw std::invalid_argument("noise sigma_n must be >= 0");
  if (!std::isfinite(mu)) throw std::invalid_argument("noise mu must be finite");
}

std::string to_string(NoiseMode mode) { return mode == NoiseMode::kInflate ? "inflate" : "deflate"; }

NoiseMode parse_noise_mode(const std::string& text) {
  if (text == "inflate") return NoiseMode::kInflate;
  if (text == "deflate") return NoiseMode::kDeflate;
  throw std::invalid_argument("noise mode must be 'inflate' or 'deflate', got '" + text + "'");
}

double noise_calibrate(double y, const NoiseConfig& cfg, double xi, double upper) {
  const double factor = cfg.alpha * (cfg.mu + cfg.sigma_n * std::abs(xi));
  const double scaled = cfg.mode == NoiseMode::kInflate ? y * (1.0 + factor) : y * (1.0 - factor);
  return std::clamp(scaled, 0.0, upper);
}

double nc_dfl(const BinDistribution& dist, double y, const NoiseConfig& cfg, double xi) {
  return dfl(dist, noise_calibrate(y, cfg, xi, dist.bins() - 1));
}

double nc_dfl_with_grad(const BinDistribution& dist, double y, const NoiseConfig& cfg, double xi,
                        std::vector<double>* grad_logits) {
  return dfl_with_grad(dist, noise_calibrate(y, cfg, xi, dist.bins() - 1), grad_logits);
}

double noise_draw(std::uint64_t seed, std::uint64_t step, std::uint64_t item, std::uint64_t target) {
  return counter_normal(derive_key({seed, step, item, target}));
}

template <typename T>
double heatmap_loss(const Tensor3<T>& pred, const Tensor3<double>& target, Tensor3<T>* grad) {
  if (pred.channels() != target.channels() || pred.height() != target.height() || pred.width() != target.width()) {
    throw std::invalid_argument("heatmap loss: prediction " + pred.shape_string() + " vs target " +
                                target.shape_string());
  }
  const double n = static_cast<double>(pred.size());
  if (grad) *grad = Tensor3<T>(pred.channels(), pred.height(), pred.width());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    sum += d * d;
    if (grad) (*grad)[i] = static_cast<T>(2.0 * d / n);
  }
  return n > 0 ? sum / n : 0.0;
}

template double heatmap_loss(const Tensor3<float>&, const Tensor3<double>&, Tensor3<float>*);
template double heatmap_loss(const Tensor3<double>&, const Tensor3<double>&, Tensor3<double>*);

double bce_with_logits(double logit, double target, double* grad) {
  if (grad) *grad = 1.0 / (1.0 + std::exp(-logit)) - target;
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

double iou_loss(double px1, double py1, double px2, double py2, const Box& truth, IouGrad* grad) {
  const double pw = std::max(px2 - px1, 0.0);
  const double ph = std::max(py2 - py1, 0.0);
  const double ix1 = std::max(px1, truth.x1());
  const double iy1 = std::max(py1, truth.y1());
  const double ix2 = std::min(px2, truth.x2());
  const double iy2 = std::min(py2, truth.y2());
  const double iw = std::max(ix2 - ix1, 0.0);
  const double ih = std::max(iy2 - iy1, 0.0);
  const double inter = iw * ih;
  const double uni = pw * ph + truth.area() - inter;
  const double iou = inter / uni;
  if (grad) {
    // d(I/U) with U = Ap + Ag - I.
    const double d_inter = 1.0 / uni + inter / (uni * uni);
    const double d_area = -inter / (uni * uni);
    IouGrad g;
    if (iw > 0.0 && ih > 0.0) {
      if (px1 > truth.x1()) g.x1 -= ih * d_inter;
      if (px2 < truth.x2()) g.x2 += ih * d_inter;
      if (py1 > truth.y1()) g.y1 -= iw * d_inter;
      if (py2 < truth.y2()) g.y2 += iw * d_inter;
    }
    if (px2 > px1 && py2 > py1) {
      g.x1 -= ph * d_area;
      g.x2 += ph * d_area;
      g.y1 -= pw * d_area;
      g.y2 += pw * d_area;
    }
    // The loss is 1 - IoU.
    *grad = {-g.x1, -g.y1, -g.x2, -g.y2};
  }
  return 1.0 - iou;
}

void LossWeights::validate() const {
  for (double v : {box, cls, dfl, aux}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be finite and >= 0");
  }
  if (box == 0.0 && cls == 0.0 && dfl == 0.0 && aux == 0.0) {
    throw std::invalid_argument("loss weights must not all be zero");
  }
}

double total_loss(const LossTerms& terms, const LossWeights& w) {
  const std::pair<const char*, double> named[] = {
      {"box", terms.box}, {"cls", terms.cls}, {"dfl", terms.dfl}, {"aux", terms.aux}};
  for (const auto& [name, value] : named) {
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite " << name << " loss (" << value << ")";
      throw NonFiniteLoss(msg.str());
    }
  }
  return w.box * terms.box + w.cls * terms.cls + w.dfl * terms.dfl + w.aux * terms.aux;
}

}  // namespace alff
