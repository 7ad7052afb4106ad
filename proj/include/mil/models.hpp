#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mil/autodiff.hpp"
#include "mil/bag.hpp"
#include "mil/matrix.hpp"

namespace mil {

class Rng;

enum class ModelKind : std::uint32_t { multi_attention = 1, minet_max = 2, minet_mean = 3 };

const char* to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Fully connected layer y = x W + b with W stored in-by-out.
struct Linear {
  ad::Parameter weight;  // in x out
  ad::Parameter bias;    // 1 x out

  std::size_t in() const { return weight.value.rows; }
  std::size_t out() const { return weight.value.cols; }
};

/// Attention aggregation parameters: scores w^T tanh(V h^T) per instance.
struct AttentionParams {
  ad::Parameter V;  // L x M
  ad::Parameter w;  // L x 1

  std::size_t hidden() const { return V.value.rows; }  // L
  std::size_t width() const { return V.value.cols; }   // M
};

struct MultiAttentionDims {
  std::size_t input = 0;   // D
  std::size_t hidden = 256;  // H, shared by fc1..fc3 so the pooled vectors add
  std::size_t attention = 128;  // L
};

/// Three FC+attention stages whose pooled vectors are summed (residual
/// accumulation) and fed to a two-logit head. Four FC mappings in total.
struct MultiAttentionParams {
  MultiAttentionDims dims;
  Linear fc1, fc2, fc3;
  AttentionParams att1, att2, att3;
  Linear head;  // H x 2
  // Dropout on the accumulated vector during training; 0 disables it.
  double dropout = 0.0;
};

struct MiNetDims {
  std::size_t input = 0;
  std::vector<std::size_t> widths{256, 128, 64};
};

/// MI-Net baseline: per-instance FC stack, max or mean pooling over
/// instances, then a two-logit head.
struct MiNetParams {
  MiNetDims dims;
  std::vector<Linear> layers;
  Linear head;
  ad::Reduction pool = ad::Reduction::max;
  // ReLU in normal use; identity only in linear-regime test configurations.
  ad::Activation hidden_activation = ad::Activation::relu;
};

/// Per-layer attention weights for one bag, each vector of length K.
struct AttentionRecord {
  std::array<std::vector<double>, 3> layers;
};

class Model {
 public:
  Model() = default;
  explicit Model(MultiAttentionParams p) : params_(std::move(p)) {}
  Model(MiNetParams p) : params_(std::move(p)) {}  // NOLINT

  ModelKind kind() const;
  std::size_t input_dim() const;
  bool has_attention() const { return std::holds_alternative<MultiAttentionParams>(params_); }

  MultiAttentionParams& multi_attention() { return std::get<MultiAttentionParams>(params_); }
  const MultiAttentionParams& multi_attention() const { return std::get<MultiAttentionParams>(params_); }
  MiNetParams& minet() { return std::get<MiNetParams>(params_); }
  const MiNetParams& minet() const { return std::get<MiNetParams>(params_); }

  // Every trainable tensor in the fixed checkpoint order.
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  std::variant<MultiAttentionParams, MiNetParams> params_;
};

// -- initialization ---------------------------------------------------------

// Xavier-uniform weights, bound sqrt(6 / (fan_in + fan_out)); zero biases.
MultiAttentionParams init_multi_attention(const MultiAttentionDims& dims, std::uint64_t seed);
MiNetParams init_minet(const MiNetDims& dims, ad::Reduction pool, std::uint64_t seed);
Model init_model(ModelKind kind, std::size_t input_dim, std::size_t hidden, std::size_t attention,
                 std::uint64_t seed);
double xavier_bound(std::size_t fan_in, std::size_t fan_out);

// -- forward passes ---------------------------------------------------------

struct AttentionPool {
  ad::Tensor z;  // 1 x M
  ad::Tensor a;  // K x 1
};

struct ForwardPass {
  ad::Tensor prob;                      // 1 x 2
  std::vector<ad::Tensor> attention;    // three K x 1 vectors, multi-attention only
};

struct TrainingMode {
  Rng* dropout_rng = nullptr;  // required when dropout > 0
};

// Read-only forward: parameters are bound as views without gradients. Safe to
// call concurrently on distinct graphs sharing one set of parameters.
AttentionPool attention_pool(ad::Graph& g, ad::Tensor h, const AttentionParams& p);
ForwardPass forward_multi_attention(ad::Graph& g, const Matrix& instances, const MultiAttentionParams& p);
ForwardPass forward_minet(ad::Graph& g, const Matrix& instances, const MiNetParams& p);
ForwardPass forward(ad::Graph& g, const Matrix& instances, const Model& model);

// Trainable forward: gradients flow into the parameters' grad buffers.
AttentionPool attention_pool(ad::Graph& g, ad::Tensor h, AttentionParams& p);
ForwardPass forward_multi_attention(ad::Graph& g, const Matrix& instances, MultiAttentionParams& p,
                                    TrainingMode mode = {});
ForwardPass forward_minet(ad::Graph& g, const Matrix& instances, MiNetParams& p);
ForwardPass forward(ad::Graph& g, const Matrix& instances, Model& model, TrainingMode mode = {});

struct Prediction {
  std::array<double, 2> prob{};
  std::optional<AttentionRecord> attention;

  double positive() const { return prob[1]; }
};

Prediction predict(const Model& model, const Matrix& instances);

// -- checkpoints ------------------------------------------------------------

inline constexpr char kCheckpointMagic[9] = "MILCKPT1";

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace mil
