#include "mil/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "mil/error.hpp"
#include "mil/kernels.hpp"
#include "mil/metrics.hpp"
#include "mil/rng.hpp"

namespace mil {

double cross_entropy(std::span<const double> prob, std::size_t target) {
  if (target >= prob.size()) {
    fail(ErrorKind::validation, "target class " + std::to_string(target) + " out of range");
  }
  const double total = std::accumulate(prob.begin(), prob.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-6) fail(ErrorKind::numeric, "probabilities do not sum to 1");
  return -std::log(std::max(prob[target], ad::kProbFloor));
}

// ---------------------------------------------------------------------------
// Adam

AdamState::AdamState(std::span<const Matrix* const> shapes, AdamConfig cfg) : config(cfg) {
  for (const Matrix* p : shapes) {
    m.emplace_back(p->rows, p->cols);
    v.emplace_back(p->rows, p->cols);
  }
}

AdamState::AdamState(std::span<ad::Parameter* const> params, AdamConfig cfg) : config(cfg) {
  for (const auto* p : params) {
    m.emplace_back(p->value.rows, p->value.cols);
    v.emplace_back(p->value.rows, p->value.cols);
  }
}

void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    fail(ErrorKind::dimension, "adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(state.m[i])) {
      fail(ErrorKind::dimension, "adam_step: tensor " + std::to_string(i) + " has shape " +
                                     shape_str(*params[i]) + " but gradient " + shape_str(*grads[i]));
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    kernels::parallel::adam_update(params[i]->data, grads[i]->data, state.m[i].data, state.v[i].data,
                                   c.learning_rate, c.beta1, c.beta2, c.epsilon, bias1, bias2);
  }
}

void adam_step(std::span<ad::Parameter* const> params, AdamState& state) {
  std::vector<Matrix*> values;
  std::vector<const Matrix*> grads;
  for (auto* p : params) {
    values.push_back(&p->value);
    grads.push_back(&p->grad);
  }
  adam_step(values, grads, state);
}

// ---------------------------------------------------------------------------
// Training loop

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

Model make_model(const TrainConfig& cfg, std::size_t input_dim) {
  switch (cfg.model) {
    case ModelKind::multi_attention: {
      auto p = init_multi_attention({input_dim, cfg.hidden, cfg.attention}, cfg.seed);
      p.dropout = cfg.dropout;
      return Model(std::move(p));
    }
    case ModelKind::minet_max:
      return Model(init_minet({input_dim, cfg.minet_widths}, ad::Reduction::max, cfg.seed));
    case ModelKind::minet_mean:
      return Model(init_minet({input_dim, cfg.minet_widths}, ad::Reduction::mean, cfg.seed));
  }
  fail(ErrorKind::validation, "unknown model kind");
}

namespace {

double accuracy_of(const std::vector<Prediction>& preds, const BagDataset& ds,
                   std::span<const std::size_t> indices) {
  std::vector<double> scores;
  std::vector<int> truth;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    scores.push_back(preds[i].positive());
    truth.push_back(ds.bags[indices[i]].label);
  }
  return metrics::accuracy(metrics::confusion(truth, metrics::threshold_predictions(scores, 0.5)));
}

}  // namespace

TrainResult train(const BagDataset& ds, std::span<const std::size_t> indices, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  if (cfg.epochs == 0) fail(ErrorKind::validation, "epochs must be at least 1");
  if (!(cfg.learning_rate > 0.0)) fail(ErrorKind::validation, "learning rate must be positive");
  if (indices.empty()) fail(ErrorKind::data, "training set is empty");
  const std::size_t dim = ds.bags.at(indices.front()).dim();
  for (std::size_t i : indices) {
    const Bag& b = ds.bags.at(i);
    if (b.dim() != dim) {
      fail(ErrorKind::data, "bag '" + b.id + "' has width " + std::to_string(b.dim()) + ", expected " +
                                std::to_string(dim));
    }
    if (b.size() == 0) fail(ErrorKind::empty_bag, "bag '" + b.id + "' has no instances");
  }

  TrainResult result{make_model(cfg, dim), {}};
  Model& model = result.model;
  auto params = model.parameters();
  AdamState adam(params, AdamConfig{cfg.learning_rate});
  const Rng run(cfg.seed);
  Rng dropout_rng = run.substream("dropout");

  std::vector<std::size_t> order(indices.begin(), indices.end());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      Rng shuffle_rng = run.substream("shuffle", epoch);
      shuffle_rng.shuffle(std::span<std::size_t>(order));
    }
    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const Bag& bag = ds.bags[idx];
      model.zero_grad();
      ad::Graph g;
      ForwardPass fp = forward(g, bag.instances, model, TrainingMode{&dropout_rng});
      ad::Tensor loss = ad::cross_entropy(fp.prob, static_cast<std::size_t>(bag.label));
      g.backward(loss);
      loss_sum += loss.value().data[0];
      adam_step(params, adam);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(order.size());
    stats.train_accuracy = accuracy_of(predict_bags(model, ds, indices), ds, indices);
    result.history.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

TrainResult train(const BagDataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  const auto idx = all_indices(ds.size());
  return train(ds, idx, cfg, on_epoch);
}

std::vector<Prediction> predict_bags(const Model& model, const BagDataset& ds,
                                     std::span<const std::size_t> indices) {
  std::vector<Prediction> out(indices.size());
  const auto n = static_cast<std::ptrdiff_t>(indices.size());
  // Exceptions must not escape an OpenMP region; keep the first by position.
  std::vector<std::exception_ptr> errors(indices.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      out[i] = predict(model, ds.bags.at(indices[i]).instances);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<Prediction> predict_bags_serial(const Model& model, const BagDataset& ds,
                                            std::span<const std::size_t> indices) {
  std::vector<Prediction> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(predict(model, ds.bags.at(i).instances));
  return out;
}

}  // namespace mil
