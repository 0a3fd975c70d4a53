#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "data/dataset.hpp"
#include "masking/masking.hpp"
#include "vit/model.hpp"

namespace lethe::eval {

// Index of the largest logit per row, lowest index on ties.
std::vector<int> argmax_rows(const Tensor& logits);

// Percentage of rows whose argmax equals the label. Empty input is a
// ContractError.
double accuracy_from_logits(const Tensor& logits, std::span<const int> labels);
double accuracy(const vit::ViTParams& model, const data::LabeledDataset& set);

// Cross-entropy of each row against its label.
std::vector<double> per_sample_losses(const Tensor& logits, std::span<const int> labels);
std::vector<double> per_sample_losses(const vit::ViTParams& model, const data::LabeledDataset& set);

// Loss threshold attacker. Candidates are the smallest observed loss, every
// midpoint between adjacent distinct losses and +inf; a sample is called a
// member when its loss is strictly below the threshold. The candidate with the
// best balanced accuracy on members vs non-members wins, smallest on ties.
double fit_loss_threshold(std::span<const double> member_losses, std::span<const double> nonmember_losses);

// Percentage of losses strictly below the threshold.
double member_rate(std::span<const double> losses, double threshold);

struct MiaResult {
  double threshold = 0.0;
  double rate = 0.0;  // percent of forget samples called members
};

MiaResult mia_from_losses(std::span<const double> forget, std::span<const double> retain,
                          std::span<const double> test);
double mia_success_rate(const vit::ViTParams& model, const data::LabeledDataset& forget,
                        const data::LabeledDataset& retain, const data::LabeledDataset& test);

struct MetricsReport {
  std::string method;
  std::uint64_t seed = 0;
  double fa = 0.0, ra = 0.0, ta = 0.0, mia = 0.0;
};

// FA, RA, TA and MIA for one model on one split.
MetricsReport evaluate(const vit::ViTParams& model, const data::LabeledDataset& train, const data::DataSplit& split,
                       std::string method, std::uint64_t seed);

struct GapReport {
  double fa = 0.0, ra = 0.0, ta = 0.0, mia = 0.0;
  double ag = 0.0;
};

GapReport average_gap(const MetricsReport& method, const MetricsReport& retrain);

struct SweepRow {
  double ratio = 0.0;
  masking::MaskType type = masking::MaskType::kZero;
  double ta = 0.0;
  double mia = 0.0;
};

// For every (ratio, type): TA on the masked test set and MIA on the masked
// forget set. The attack threshold is fit once on unmasked retain vs test
// losses. Masks come from the model's own attention.
std::vector<SweepRow> masking_sweep(const vit::ViTParams& model, const data::LabeledDataset& forget,
                                    const data::LabeledDataset& retain, const data::LabeledDataset& test,
                                    std::span<const double> ratios, std::span<const masking::MaskType> types,
                                    double gaussian_std = 1.0, std::uint64_t seed = 0);

}  // namespace lethe::eval
