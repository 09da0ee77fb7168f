#pragma once

#include "lgsid/common.hpp"

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

namespace lgsid {

enum class Activation { identity, relu, tanh, sigmoid };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

/// View of one parameter tensor and its gradient buffer.
struct ParamRef {
  double* value = nullptr;
  double* grad = nullptr;
  std::size_t size = 0;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::identity;
  Matrix grad_weight;
  Vector grad_bias;

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
};

/// Fixed-topology feedforward network with manual backpropagation.
/// Forward passes are const and hand their activations back through an
/// explicit cache, so a frozen net can still propagate gradients to its
/// input.
class DenseNet {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // input of each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
    bool empty() const { return inputs.empty(); }
  };

  DenseNet() = default;
  /// dims = {in, h1, ..., out}; one activation per layer. Glorot-uniform
  /// weights, zero biases.
  DenseNet(const std::vector<int>& dims, const std::vector<Activation>& activations, Rng& rng);

  int input_dim() const;
  int output_dim() const;
  std::size_t layer_count() const { return layers_.size(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  /// Throws FrozenError on a frozen net.
  std::vector<DenseLayer>& mutable_layers();

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;

  /// Accumulates parameter gradients and returns d(loss)/d(input).
  Matrix backward(const Cache& cache, const Matrix& upstream);
  /// Same input gradient as backward() but leaves parameter buffers alone.
  Matrix input_gradient(const Cache& cache, const Matrix& upstream) const;

  void zero_grad();
  std::vector<ParamRef> parameters();
  std::size_t parameter_count() const;

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }
  std::uint64_t parameter_hash() const;

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static DenseNet load(std::istream& in);
  static DenseNet load(const std::filesystem::path& path);
  /// Loads parameters into this net; rejects any shape or activation mismatch.
  void load_parameters(const std::filesystem::path& path);

 private:
  Matrix backprop(const Cache& cache, const Matrix& upstream,
                  std::vector<DenseLayer>* accumulate) const;

  std::vector<DenseLayer> layers_;
  bool frozen_ = false;
};

Matrix apply_activation(Activation a, const Matrix& z);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double decay_factor = 0.9;
  int decay_interval = 500;
};

/// AdamW with a step learning-rate schedule:
/// lr(t) = base * decay_factor^floor(t / decay_interval), t = completed steps.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {});

  /// Applies one update and zeroes the gradients.
  void step(std::span<const ParamRef> params);
  void step(DenseNet& net);

  double current_lr() const;
  std::int64_t steps() const { return steps_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::int64_t steps_ = 0;
  std::vector<Vector> m_;
  std::vector<Vector> v_;
};

}  // namespace lgsid
