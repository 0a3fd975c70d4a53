#include "unlearning/unlearning.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "common/error.hpp"
#include "tensor/ops.hpp"

namespace lethe::unlearning {

void Sgd::step(vit::ViTParams& params, double direction) {
  std::size_t slot = 0;
  params.for_each([&](const std::string&, Tensor& w) {
    if (velocity_.size() <= slot) velocity_.emplace_back(w.numel(), 0.0);
    auto& vel = velocity_[slot++];
    auto wv = w.values();
    auto g = w.grad();
    std::vector<double> next(wv.size());
    for (std::size_t i = 0; i < wv.size(); ++i) {
      const double d = g[i] + config_.weight_decay * wv[i];
      vel[i] = config_.momentum * vel[i] + d;
      next[i] = wv[i] - direction * config_.lr * vel[i];
    }
    w = Tensor(w.shape(), std::move(next), true);
  });
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size == 0) throw ConfigError("batch must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
}

void UnlearnConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (batch_size == 0) throw ConfigError("batch must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  mask.validate();
}

namespace {

// Runs `epochs` passes over [0, n) in seeded shuffled batches. `loss_fn`
// receives batch positions and builds the scalar loss on the given tape.
template <typename LossFn, typename StepFn>
void run_epochs(vit::ViTParams& params, Sgd& opt, std::size_t n, std::size_t epochs, std::size_t batch,
                std::uint64_t seed, std::uint64_t stream, const std::string& phase, double direction,
                LossFn&& loss_fn, StepFn&& after_step, const std::function<void(std::size_t)>& after_epoch = {}) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t start = 0; start < n; start += batch, ++step) {
      const std::span<const std::size_t> pos(order.data() + start, std::min(batch, n - start));
      try {
        Tape tape;
        const Tensor loss = loss_fn(tape, pos);
        if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");
        tape.backward(loss);
        opt.step(params, direction);
        after_step(pos, loss.item());
      } catch (const NumericError& e) {
        throw DivergenceError(phase + " phase diverged at step " + std::to_string(step) + " (epoch " +
                              std::to_string(epoch) + "): " + e.what());
      }
    }
    if (after_epoch) after_epoch(epoch);
  }
}

vit::ViTParams copy_of(const vit::ViTParams& p) { return p.clone(); }

}  // namespace

void train_on(vit::ViTParams& params, const data::LabeledDataset& train, std::span<const std::size_t> indices,
              std::span<const int> labels, const TrainConfig& config, const std::string& phase, double direction,
              const BatchObserver& observer) {
  config.validate();
  if (labels.size() != indices.size()) throw ContractError("train_on: one label per index required");
  if (config.epochs > 0 && indices.empty()) throw ConfigError(phase + ": no samples to train on");
  Sgd opt({config.lr, config.momentum, config.weight_decay});
  std::vector<std::size_t> batch_ids;
  std::vector<int> batch_labels;
  run_epochs(
      params, opt, indices.size(), config.epochs, config.batch_size, config.seed, 1, phase, direction,
      [&](Tape& tape, std::span<const std::size_t> pos) {
        batch_ids.clear();
        batch_labels.clear();
        for (auto p : pos) {
          batch_ids.push_back(indices[p]);
          batch_labels.push_back(labels[p]);
        }
        if (observer) observer(phase, batch_ids);
        auto out = vit::forward(tape, params, take(train.images, batch_ids));
        return ops::cross_entropy(tape, out.logits, batch_labels);
      },
      [](std::span<const std::size_t>, double) {});
}

namespace {

std::vector<int> labels_at(const data::LabeledDataset& train, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(train.labels.at(i));
  return out;
}

}  // namespace

vit::ViTParams train_original(const vit::ViTConfig& model, const data::LabeledDataset& train,
                              const TrainConfig& config) {
  auto params = vit::init_params(model, config.seed);
  std::vector<std::size_t> all(train.size());
  std::iota(all.begin(), all.end(), 0);
  train_on(params, train, all, train.labels, config, "train");
  return params;
}

vit::ViTParams retrain(const vit::ViTConfig& model, const data::LabeledDataset& train, const data::DataSplit& split,
                       const TrainConfig& config, const BatchObserver& observer) {
  split.validate(train.size());
  auto params = vit::init_params(model, config.seed);
  train_on(params, train, split.retain, labels_at(train, split.retain), config, "retain", 1.0, observer);
  return params;
}

vit::ViTParams fine_tune(const vit::ViTParams& original, const data::LabeledDataset& train,
                         const data::DataSplit& split, const TrainConfig& config, const BatchObserver& observer) {
  split.validate(train.size());
  auto params = copy_of(original);
  train_on(params, train, split.retain, labels_at(train, split.retain), config, "retain", 1.0, observer);
  return params;
}

vit::ViTParams gradient_ascent(const vit::ViTParams& original, const data::LabeledDataset& train,
                               const data::DataSplit& split, const TrainConfig& config,
                               const BatchObserver& observer) {
  split.validate(train.size());
  auto params = copy_of(original);
  train_on(params, train, split.forget, labels_at(train, split.forget), config, "forget", -1.0, observer);
  return params;
}

std::vector<int> relabel_forget(std::span<const int> labels, std::size_t class_count, std::uint64_t seed) {
  if (class_count < 2) throw ConfigError("random labels need at least two classes");
  std::mt19937_64 rng(seed);
  std::vector<int> out;
  out.reserve(labels.size());
  for (int y : labels) {
    const int r = static_cast<int>(rng() % (class_count - 1));
    out.push_back(r < y ? r : r + 1);
  }
  return out;
}

vit::ViTParams random_labels(const vit::ViTParams& original, const data::LabeledDataset& train,
                             const data::DataSplit& split, const TrainConfig& config,
                             const BatchObserver& observer) {
  split.validate(train.size());
  auto relabeled = relabel_forget(labels_at(train, split.forget), train.class_count, config.seed);
  std::vector<std::size_t> indices(split.forget);
  indices.insert(indices.end(), split.retain.begin(), split.retain.end());
  std::vector<int> labels(relabeled);
  const auto retain_labels = labels_at(train, split.retain);
  labels.insert(labels.end(), retain_labels.begin(), retain_labels.end());
  auto params = copy_of(original);
  train_on(params, train, indices, labels, config, "relabel", 1.0, observer);
  return params;
}

Tensor contrastive_from_similarities(Tape& tape, const Tensor& s_pos, const Tensor& s_neg, double tau) {
  if (!(tau > 0.0)) throw ConfigError("contrastive_loss: tau must be positive");
  return ops::mean(tape, ops::softplus(tape, ops::scale(tape, ops::sub(tape, s_neg, s_pos), 1.0 / tau)));
}

Tensor contrastive_loss(Tape& tape, const TripletLogits& t, double tau) {
  if (t.anchor.shape() != t.positive.shape() || t.anchor.shape() != t.negative.shape()) {
    throw DimensionError("contrastive_loss: anchor " + shape_string(t.anchor.shape()) + ", positive " +
                         shape_string(t.positive.shape()) + " and negative " + shape_string(t.negative.shape()) +
                         " must match");
  }
  return contrastive_from_similarities(tape, ops::row_cosine(tape, t.anchor, t.positive),
                                       ops::row_cosine(tape, t.anchor, t.negative), tau);
}

namespace {

double mean_row_cosine(const Tensor& a, const Tensor& b) {
  Tape tape(Tape::Mode::kInference);
  return ops::mean(tape, ops::row_cosine(tape, a, b)).item();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

vit::ViTParams unlearn(const vit::ViTParams& original, const data::LabeledDataset& train,
                       const data::DataSplit& split, const UnlearnConfig& config, UnlearnStats* stats,
                       const BatchObserver& observer) {
  config.validate();
  split.validate(train.size());
  if (config.forget_epochs > 0 && split.forget.empty()) {
    throw ConfigError("unlearn: empty forget set with forget_epochs > 0");
  }
  UnlearnStats local;
  UnlearnStats& st = stats ? *stats : local;
  st = UnlearnStats{};
  auto params = copy_of(original);

  auto t0 = std::chrono::steady_clock::now();
  if (config.forget_epochs > 0) {
    const auto forget = train.subset(split.forget);
    // The original is frozen, so its masked views and logits are fixed for the
    // whole phase and can be computed once.
    const auto masked = masking::build_masked_view(original, forget.images, config.mask, config.seed);
    const Tensor z_pos = vit::predict_logits(original, masked.images);
    const Tensor z_neg = vit::predict_logits(original, forget.images);
    st.cos_pos_start = mean_row_cosine(vit::predict_logits(params, forget.images), z_pos);
    st.cos_neg_start = mean_row_cosine(vit::predict_logits(params, forget.images), z_neg);

    Sgd opt({config.lr, config.momentum, config.weight_decay});
    std::vector<std::size_t> batch_ids;
    run_epochs(
        params, opt, forget.size(), config.forget_epochs, config.batch_size, config.seed, 2, "forget", 1.0,
        [&](Tape& tape, std::span<const std::size_t> pos) {
          batch_ids.clear();
          for (auto p : pos) batch_ids.push_back(split.forget[p]);
          if (observer) observer("forget", batch_ids);
          TripletLogits triplet{vit::forward(tape, params, take(forget.images, pos)).logits, take(z_pos, pos),
                                take(z_neg, pos)};
          return contrastive_loss(tape, triplet, config.tau);
        },
        [&](std::span<const std::size_t>, double loss) {
          st.forget_losses.push_back(loss);
          ++st.forget_steps;
        },
        [&](std::size_t epoch) {
          if (epoch != 0) return;
          const auto z = vit::predict_logits(params, forget.images);
          st.cos_pos_after_first = mean_row_cosine(z, z_pos);
          st.cos_neg_after_first = mean_row_cosine(z, z_neg);
        });
  }
  st.forget_seconds = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  if (config.retain_epochs > 0) {
    TrainConfig tc{config.retain_epochs, config.lr, config.batch_size, config.momentum, config.weight_decay,
                   config.seed};
    BatchObserver counting = [&](const std::string& phase, std::span<const std::size_t> ids) {
      ++st.retain_steps;
      if (observer) observer(phase, ids);
    };
    train_on(params, train, split.retain, labels_at(train, split.retain), tc, "retain", 1.0, counting);
  }
  st.retain_seconds = seconds_since(t0);
  return params;
}

}  // namespace lethe::unlearning
