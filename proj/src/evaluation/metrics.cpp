#include "evaluation/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "common/error.hpp"

namespace lethe::eval {

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) == 0) {
    throw DimensionError("argmax_rows: expected [B x C], got " + shape_string(logits.shape()));
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  auto lv = logits.values();
  std::vector<int> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (lv[i * c + k] > lv[i * c + best]) best = k;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

double accuracy_from_logits(const Tensor& logits, std::span<const int> labels) {
  if (labels.empty()) throw ContractError("accuracy: empty set");
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("accuracy: logits " + shape_string(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const auto pred = argmax_rows(logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const vit::ViTParams& model, const data::LabeledDataset& set) {
  if (set.size() == 0) throw ContractError("accuracy: empty set");
  return accuracy_from_logits(vit::predict_logits(model, set.images), set.labels);
}

std::vector<double> per_sample_losses(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("per_sample_losses: logits " + shape_string(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  auto lv = logits.values();
  std::vector<double> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = lv.data() + i * c;
    const auto y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw LabelError("per_sample_losses: label " + std::to_string(y) + " at index " + std::to_string(i) +
                       " outside [0, " + std::to_string(c) + ")");
    }
    const double m = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(row[k] - m);
    out[i] = m + std::log(z) - row[y];
  }
  return out;
}

std::vector<double> per_sample_losses(const vit::ViTParams& model, const data::LabeledDataset& set) {
  return per_sample_losses(vit::predict_logits(model, set.images), set.labels);
}

double fit_loss_threshold(std::span<const double> member_losses, std::span<const double> nonmember_losses) {
  if (member_losses.empty() || nonmember_losses.empty()) {
    throw ContractError("mia: member and non-member sets must be nonempty");
  }
  struct Point {
    double loss;
    bool member;
  };
  std::vector<Point> pts;
  pts.reserve(member_losses.size() + nonmember_losses.size());
  for (double l : member_losses) pts.push_back({l, true});
  for (double l : nonmember_losses) pts.push_back({l, false});
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.loss < b.loss; });

  // Balanced accuracy compared as TP * |N| + TN * |M| to stay in integers.
  const auto m_count = static_cast<std::uint64_t>(member_losses.size());
  const auto n_count = static_cast<std::uint64_t>(nonmember_losses.size());
  std::uint64_t tp = 0, tn = n_count;  // threshold below every loss
  double best_t = pts.front().loss;
  std::uint64_t best_score = tp * n_count + tn * m_count;
  std::size_t i = 0;
  while (i < pts.size()) {
    const double v = pts[i].loss;
    while (i < pts.size() && pts[i].loss == v) {
      if (pts[i].member) ++tp;
      else --tn;
      ++i;
    }
    const double t = i < pts.size() ? 0.5 * (v + pts[i].loss) : std::numeric_limits<double>::infinity();
    const std::uint64_t score = tp * n_count + tn * m_count;
    if (score > best_score) {
      best_score = score;
      best_t = t;
    }
  }
  return best_t;
}

double member_rate(std::span<const double> losses, double threshold) {
  if (losses.empty()) throw ContractError("mia: forget set must be nonempty");
  std::size_t hits = 0;
  for (double l : losses) hits += l < threshold;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(losses.size());
}

MiaResult mia_from_losses(std::span<const double> forget, std::span<const double> retain,
                          std::span<const double> test) {
  MiaResult r;
  r.threshold = fit_loss_threshold(retain, test);
  r.rate = member_rate(forget, r.threshold);
  return r;
}

double mia_success_rate(const vit::ViTParams& model, const data::LabeledDataset& forget,
                        const data::LabeledDataset& retain, const data::LabeledDataset& test) {
  if (forget.size() == 0 || retain.size() == 0 || test.size() == 0) {
    throw ContractError("mia: forget, retain and test sets must be nonempty");
  }
  return mia_from_losses(per_sample_losses(model, forget), per_sample_losses(model, retain),
                         per_sample_losses(model, test))
      .rate;
}

MetricsReport evaluate(const vit::ViTParams& model, const data::LabeledDataset& train, const data::DataSplit& split,
                       std::string method, std::uint64_t seed) {
  split.validate(train.size());
  const auto forget = train.subset(split.forget);
  const auto retain = train.subset(split.retain);
  if (forget.size() == 0 || retain.size() == 0 || split.test.size() == 0) {
    throw ContractError("evaluate: forget, retain and test sets must be nonempty");
  }
  const auto lf = vit::predict_logits(model, forget.images);
  const auto lr = vit::predict_logits(model, retain.images);
  const auto lt = vit::predict_logits(model, split.test.images);
  MetricsReport r;
  r.method = std::move(method);
  r.seed = seed;
  r.fa = accuracy_from_logits(lf, forget.labels);
  r.ra = accuracy_from_logits(lr, retain.labels);
  r.ta = accuracy_from_logits(lt, split.test.labels);
  r.mia = mia_from_losses(per_sample_losses(lf, forget.labels), per_sample_losses(lr, retain.labels),
                          per_sample_losses(lt, split.test.labels))
              .rate;
  return r;
}

GapReport average_gap(const MetricsReport& method, const MetricsReport& retrain) {
  GapReport g;
  g.fa = std::abs(method.fa - retrain.fa);
  g.ra = std::abs(method.ra - retrain.ra);
  g.ta = std::abs(method.ta - retrain.ta);
  g.mia = std::abs(method.mia - retrain.mia);
  g.ag = (g.fa + g.ra + g.ta + g.mia) / 4.0;
  return g;
}

std::vector<SweepRow> masking_sweep(const vit::ViTParams& model, const data::LabeledDataset& forget,
                                    const data::LabeledDataset& retain, const data::LabeledDataset& test,
                                    std::span<const double> ratios, std::span<const masking::MaskType> types,
                                    double gaussian_std, std::uint64_t seed) {
  if (forget.size() == 0 || retain.size() == 0 || test.size() == 0) {
    throw ContractError("masking_sweep: forget, retain and test sets must be nonempty");
  }
  const double threshold =
      fit_loss_threshold(per_sample_losses(model, retain), per_sample_losses(model, test));
  std::vector<SweepRow> rows;
  for (double ratio : ratios) {
    for (auto type : types) {
      masking::MaskSpec spec{ratio, type, gaussian_std};
      const auto masked_test = masking::build_masked_view(model, test.images, spec, seed);
      const auto masked_forget = masking::build_masked_view(model, forget.images, spec, seed);
      SweepRow row;
      row.ratio = ratio;
      row.type = type;
      row.ta = accuracy_from_logits(vit::predict_logits(model, masked_test.images), test.labels);
      row.mia = member_rate(per_sample_losses(vit::predict_logits(model, masked_forget.images), forget.labels),
                            threshold);
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace lethe::eval
