#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "alff/checkpoint.hpp"
#include "alff/config.hpp"
#include "alff/detector.hpp"
#include "alff/evaluation.hpp"
#include "alff/objective.hpp"
#include "alff/synthetic.hpp"

namespace alff {

/// A dataset converted once into network inputs and training targets.
struct PreparedData {
  int image_w = 0;
  int image_h = 0;
  std::vector<int> image_ids;
  std::vector<Tensor3<float>> images;
  std::vector<std::vector<Box>> truths;
  std::vector<AssignedTargets> targets;
  std::vector<Tensor3<double>> heatmaps;  // empty unless requested

  std::size_t size() const { return images.size(); }
};

PreparedData prepare_data(const Dataset& ds, int n_bins, bool with_heatmaps);

struct StepLog {
  std::uint64_t step = 0;  // 1-based optimizer step
  int epoch = 0;           // 0-based epoch the step belongs to
  double lr = 0.0;
  LossTerms terms;         // batch means
  double total = 0.0;
};

/// Raised when a loss term turns non-finite; names the step and image.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::uint64_t step) : std::runtime_error(what), step_(step) {}
  std::uint64_t step() const { return step_; }

 private:
  std::uint64_t step_;
};

/// SGD with momentum over the detector. Weight decay applies to conv and LSTM
/// weight tensors, not to biases or normalization parameters.
class Trainer {
 public:
  explicit Trainer(RunConfig cfg, ModelConfig model = {});

  /// Parameters and momentum from a checkpoint written by `snapshot`.
  void restore(const Checkpoint& ck);
  Checkpoint snapshot();

  /// One pass over `data` in the epoch's shuffled order.
  void train_epoch(const PreparedData& data, const std::function<void(const StepLog&)>& on_step = {});

  /// Learning rate of a step given the epoch it belongs to.
  double learning_rate(int epoch, std::uint64_t step_in_epoch, std::uint64_t steps_per_epoch) const;

  const DetectorParams<float>& params() const { return params_; }
  DetectorParams<float>& params() { return params_; }
  const RunConfig& config() const { return cfg_; }
  int epoch() const { return epoch_; }
  std::uint64_t step() const { return step_; }

 private:
  void apply_update(double lr, double scale);

  RunConfig cfg_;
  DetectorParams<float> params_;
  DetectorParams<float> grads_;
  DetectorParams<float> momentum_;
  DetectorCache<float> cache_;
  int epoch_ = 0;
  std::uint64_t step_ = 0;
};

/// Permutation of [0, n) for one epoch; a function of (seed, epoch) only.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

/// Forward pass, decoding and NMS for every image of `data`.
std::vector<EvalImage> predict(const DetectorParams<float>& params, const PreparedData& data,
                               const PostprocessOptions& opts);

/// Score threshold used when collecting detections for AP; low so the whole
/// precision-recall curve is visible.
inline constexpr double kEvalScoreThreshold = 0.001;

ApSummary evaluate(const DetectorParams<float>& params, const PreparedData& data);

/// Trains per `cfg`, writing the loss CSV and a checkpoint after every epoch.
/// With `resume`, continues from that checkpoint and truncates the loss CSV to
/// the steps it covers. Progress lines go to `log`.
Trainer run_training(const RunConfig& cfg, const std::filesystem::path* resume, std::ostream& log);

/// Rebuilds a model from a checkpoint; throws CheckpointVersionError on a
/// format mismatch.
DetectorParams<float> load_model(const std::filesystem::path& path, RunConfig* cfg_out = nullptr);

}  // namespace alff
