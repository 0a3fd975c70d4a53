#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "data/dataset.hpp"
#include "masking/masking.hpp"
#include "vit/model.hpp"

namespace lethe::unlearning {

struct SgdConfig {
  double lr = 0.05;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

// Plain SGD with optional momentum and L2 decay. Each step swaps in fresh
// parameter tensors; the previous tensors are never written.
class Sgd {
 public:
  explicit Sgd(SgdConfig config) : config_(config) {}

  // direction = +1 descends, -1 ascends.
  void step(vit::ViTParams& params, double direction = 1.0);

 private:
  SgdConfig config_;
  std::vector<std::vector<double>> velocity_;
};

struct TrainConfig {
  std::size_t epochs = 10;
  double lr = 0.05;
  std::size_t batch_size = 32;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Called once per optimisation step with the training-set indices in the batch.
using BatchObserver = std::function<void(const std::string& phase, std::span<const std::size_t> train_indices)>;

// Cross-entropy SGD on train[indices], reshuffled every epoch from seed.
// `direction` -1 turns descent into ascent. NaN or Inf anywhere in a step
// raises DivergenceError naming the phase and step.
void train_on(vit::ViTParams& params, const data::LabeledDataset& train, std::span<const std::size_t> indices,
              std::span<const int> labels, const TrainConfig& config, const std::string& phase, double direction = 1.0,
              const BatchObserver& observer = {});

// Fresh init_params(config, seed) trained on every training sample.
vit::ViTParams train_original(const vit::ViTConfig& model, const data::LabeledDataset& train,
                              const TrainConfig& config);

// Fresh init trained on the retain set only.
vit::ViTParams retrain(const vit::ViTConfig& model, const data::LabeledDataset& train, const data::DataSplit& split,
                       const TrainConfig& config, const BatchObserver& observer = {});

// Continues cross-entropy descent from the original on the retain set.
vit::ViTParams fine_tune(const vit::ViTParams& original, const data::LabeledDataset& train,
                         const data::DataSplit& split, const TrainConfig& config, const BatchObserver& observer = {});

// Cross-entropy ascent on the forget set.
vit::ViTParams gradient_ascent(const vit::ViTParams& original, const data::LabeledDataset& train,
                               const data::DataSplit& split, const TrainConfig& config,
                               const BatchObserver& observer = {});

// Uniform draw over the C - 1 classes other than each given label.
std::vector<int> relabel_forget(std::span<const int> labels, std::size_t class_count, std::uint64_t seed);

// Forget labels replaced by relabel_forget(seed), then descent on forget and
// retain together.
vit::ViTParams random_labels(const vit::ViTParams& original, const data::LabeledDataset& train,
                             const data::DataSplit& split, const TrainConfig& config,
                             const BatchObserver& observer = {});

// Anchor Z from the model being unlearned, positive Z_p from the original on
// masked images, negative Z_n from the original on clean images.
struct TripletLogits {
  Tensor anchor;
  Tensor positive;
  Tensor negative;
};

// mean over the batch of -log(e^{s_p/tau} / (e^{s_p/tau} + e^{s_n/tau})),
// written as softplus((s_n - s_p) / tau).
Tensor contrastive_loss(Tape& tape, const TripletLogits& triplet, double tau);
Tensor contrastive_from_similarities(Tape& tape, const Tensor& s_pos, const Tensor& s_neg, double tau);

struct UnlearnConfig {
  std::size_t forget_epochs = 2;
  std::size_t retain_epochs = 8;
  double lr = 0.01;
  std::size_t batch_size = 32;
  double tau = 0.5;
  masking::MaskSpec mask;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct UnlearnStats {
  // Forget-set means of cos(Z, Z_p) and cos(Z, Z_n) before the first step and
  // after the first forget epoch; all zero when there is no forget epoch.
  double cos_pos_start = 0.0, cos_pos_after_first = 0.0;
  double cos_neg_start = 0.0, cos_neg_after_first = 0.0;
  std::vector<double> forget_losses;  // per step
  std::size_t forget_steps = 0, retain_steps = 0;
  double forget_seconds = 0.0, retain_seconds = 0.0;
};

// Two-phase unlearning: contrastive steps on the forget set against masked
// views from the frozen original, then cross-entropy on the retain set.
vit::ViTParams unlearn(const vit::ViTParams& original, const data::LabeledDataset& train,
                       const data::DataSplit& split, const UnlearnConfig& config, UnlearnStats* stats = nullptr,
                       const BatchObserver& observer = {});

}  // namespace lethe::unlearning
