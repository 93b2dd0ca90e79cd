#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "alff/geometry.hpp"
#include "alff/tensor.hpp"

namespace alff {

/// Discrete distribution over integer bins 0..n-1, held as logits and their softmax.
class BinDistribution {
 public:
  static BinDistribution from_logits(std::span<const double> logits);
  /// Throws std::invalid_argument unless probs are non-negative and sum to 1 within 1e-9.
  static BinDistribution from_probs(std::span<const double> probs);

  int bins() const { return static_cast<int>(probs_.size()); }
  const std::vector<double>& probs() const { return probs_; }
  const std::vector<double>& logits() const { return logits_; }
  double prob(int i) const { return probs_[static_cast<std::size_t>(i)]; }
  /// Floored natural log of P_i.
  double log_prob(int i) const;
  /// Sum_i P_i * i.
  double expectation() const;

 private:
  std::vector<double> logits_;
  std::vector<double> probs_;
  std::vector<double> log_probs_;
};

inline constexpr double kLogFloor = 1e-12;

/// Distribution focal loss of `dist` against continuous target y in [0, bins-1].
/// Throws std::out_of_range otherwise.
double dfl(const BinDistribution& dist, double y);

/// dfl and its gradient with respect to the logits.
double dfl_with_grad(const BinDistribution& dist, double y, std::vector<double>* grad_logits);

enum class NoiseMode { kInflate, kDeflate };

struct NoiseConfig {
  double alpha = 1.0;
  double mu = 0.0;
  double sigma_n = 1.0;
  NoiseMode mode = NoiseMode::kInflate;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on alpha < 0, sigma_n < 0 or a non-finite mu.
  void validate() const;
  bool operator==(const NoiseConfig&) const = default;
};

std::string to_string(NoiseMode mode);
NoiseMode parse_noise_mode(const std::string& text);

/// y * (1 +/- alpha * (mu + sigma_n * |xi|)), clamped to [0, upper].
double noise_calibrate(double y, const NoiseConfig& cfg, double xi, double upper);

/// Distribution focal loss at the noise-calibrated target for the draw xi.
double nc_dfl(const BinDistribution& dist, double y, const NoiseConfig& cfg, double xi);
double nc_dfl_with_grad(const BinDistribution& dist, double y, const NoiseConfig& cfg, double xi,
                        std::vector<double>* grad_logits);

/// Standard-normal draw for one regression target at one training step.
double noise_draw(std::uint64_t seed, std::uint64_t step, std::uint64_t item, std::uint64_t target);

/// Mean squared error over all cells. The optional gradient is 2 (pred - target) / N.
/// Throws std::invalid_argument on a shape mismatch.
template <typename T>
double heatmap_loss(const Tensor3<T>& pred, const Tensor3<double>& target, Tensor3<T>* grad = nullptr);

template <typename T>
double heatmap_loss(const Tensor3<T>& pred, const HeatmapTarget& target, Tensor3<T>* grad = nullptr) {
  return heatmap_loss(pred, target.grid, grad);
}

/// Binary cross-entropy on a logit; optional gradient sigmoid(z) - t.
double bce_with_logits(double logit, double target, double* grad = nullptr);

struct IouGrad {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

/// 1 - IoU(pred, truth) with its gradient with respect to the predicted corners.
/// Accepts an empty predicted box (zero width or height).
double iou_loss(double px1, double py1, double px2, double py2, const Box& truth, IouGrad* grad = nullptr);

struct LossWeights {
  double box = 1.0;
  double cls = 0.5;
  double dfl = 1.5;
  double aux = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct LossTerms {
  double box = 0.0;
  double cls = 0.0;
  double dfl = 0.0;
  double aux = 0.0;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Weighted sum of the four terms. Throws NonFiniteLoss naming the offending term.
double total_loss(const LossTerms& terms, const LossWeights& w);

}  // namespace alff
