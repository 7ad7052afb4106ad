#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mil/autodiff.hpp"
#include "mil/bagdata.hpp"
#include "mil/models.hpp"

namespace mil {

// -log(max(prob[target], 1e-12)). prob must sum to 1 within 1e-6.
double cross_entropy(std::span<const double> prob, std::size_t target);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(std::span<const Matrix* const> shapes, AdamConfig cfg);
  explicit AdamState(std::span<ad::Parameter* const> params, AdamConfig cfg = {});
};

// Bias-corrected Adam: theta -= lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, AdamState& state);
void adam_step(std::span<ad::Parameter* const> params, AdamState& state);

struct TrainConfig {
  ModelKind model = ModelKind::multi_attention;
  double learning_rate = 1e-4;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  std::size_t hidden = 256;     // H
  std::size_t attention = 128;  // L
  std::vector<std::size_t> minet_widths{256, 128, 64};
  bool shuffle = true;
  double dropout = 0.0;
};

struct EpochStats {
  std::size_t epoch = 0;         // 1-based
  double mean_loss = 0.0;        // mean over the epoch's optimizer steps
  double train_accuracy = 0.0;   // with the parameters at the end of the epoch
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

Model make_model(const TrainConfig& cfg, std::size_t input_dim);

/// One Adam step per bag, bag order reshuffled every epoch from the run seed.
TrainResult train(const BagDataset& ds, std::span<const std::size_t> indices, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});
TrainResult train(const BagDataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Forward passes over the selected bags, fanned out over OpenMP threads;
/// results are stored by position so output order is fixed.
std::vector<Prediction> predict_bags(const Model& model, const BagDataset& ds,
                                     std::span<const std::size_t> indices);
std::vector<Prediction> predict_bags_serial(const Model& model, const BagDataset& ds,
                                            std::span<const std::size_t> indices);

std::vector<std::size_t> all_indices(std::size_t n);

}  // namespace mil
