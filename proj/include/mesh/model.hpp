#pragma once

// Three-part network: a tanh (or ReLU) MLP encoder, a linear bottleneck and a
// linear classifier head. Forward keeps everything backward needs, and
// backward returns gradients for the trainable groups and for the input.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mesh/linalg.hpp"

namespace mesh {

enum class Group { encoder, bottleneck, classifier };
enum class Activation { tanh, relu };

std::string to_string(Group g);
std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

/// y = x * weight + bias, weight stored (in x out).
struct DenseLayer {
  Matrix weight;
  Vector bias;

  Eigen::Index in_dim() const { return weight.rows(); }
  Eigen::Index out_dim() const { return weight.cols(); }
  bool operator==(const DenseLayer&) const = default;
};

struct ModelParams {
  std::vector<DenseLayer> encoder;
  DenseLayer bottleneck;
  DenseLayer classifier;
  Activation activation = Activation::tanh;
  std::set<Group> frozen;

  bool is_frozen(Group g) const { return frozen.contains(g); }
  Eigen::Index input_dim() const { return encoder.front().in_dim(); }
  Eigen::Index feature_dim() const { return bottleneck.out_dim(); }
  Eigen::Index num_classes() const { return classifier.out_dim(); }
  /// Layer sizes in the form accepted by init_model.
  std::vector<int> dims() const;

  bool operator==(const ModelParams&) const = default;
};

struct ForwardCache {
  std::vector<int> dims;
  Matrix input;
  std::vector<Matrix> pre_activations;
  // Encoder outputs after activation and dropout; these feed the next layer.
  std::vector<Matrix> outputs;
  // Inverted-dropout masks, entries in {0, 1/(1-rate)}; empty when dropout is off.
  std::vector<Matrix> masks;
  Matrix features;
  Matrix logits;
};

struct LayerGradient {
  Matrix weight;
  Vector bias;
};

struct Gradients {
  // Empty / disengaged for frozen groups.
  std::vector<LayerGradient> encoder;
  std::optional<LayerGradient> bottleneck;
  std::optional<LayerGradient> classifier;
  Matrix input_grad;

  /// Adds parameter gradients of `other`; input gradients are not combined
  /// because they generally belong to different batches.
  Gradients& accumulate(const Gradients& other);
};

struct ForwardResult {
  Matrix logits;
  ForwardCache cache;
};

/// dims = {input, hidden..., bottleneck, classes}; needs at least four entries.
/// Weights are Glorot-uniform, biases zero.
ModelParams init_model(std::span<const int> dims, std::uint64_t seed,
                       Activation activation = Activation::tanh);

ForwardResult forward(const ModelParams& params, const Matrix& x, double dropout_rate = 0.0,
                      bool dropout_on = false, std::uint64_t seed = 0);

/// Bottleneck outputs with dropout off.
Matrix extract_features(const ModelParams& params, const Matrix& x);

/// Softmax of the deterministic forward pass.
Matrix predict_proba(const ModelParams& params, const Matrix& x);

Gradients backward(const ModelParams& params, const ForwardCache& cache, const Matrix& dlogits);

/// Only the input gradient of backward; skips all parameter gradients.
Matrix input_gradient(const ModelParams& params, const ForwardCache& cache, const Matrix& dlogits);

/// Mean of `passes` softmax outputs, each with its own dropout masks.
Matrix mc_dropout_predict(const ModelParams& params, const Matrix& x, int passes,
                          double dropout_rate, std::uint64_t seed);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace mesh
