#pragma once

#include <random>
#include <string>
#include <vector>

#include "civest/autodiff.hpp"

namespace civest::nn {

using ad::Matrix;

// Named trainable array. grad persists across steps and is zeroed through
// the optimizer, not by backward().
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)),
        grad(Matrix::Zero(value.rows(), value.cols())) {}
};

enum class Activation { identity, leaky_relu, tanh };

inline constexpr double kLeakySlope = 0.01;

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

// Fully connected net, row-major batches: y = act(x W + b) per layer.
// Hidden layers share one activation; the output layer is linear.
class Mlp {
 public:
  Mlp() = default;
  // Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
  Mlp(std::string name, long in_dim, const std::vector<long>& hidden, long out_dim,
      Activation hidden_act, std::mt19937_64& rng);

  // Records the forward pass on the tape. Throws DimMismatchError when the
  // input width disagrees with in_dim.
  ad::Value forward(ad::Tape& tape, ad::Value x);
  // Convenience: plain forward on a constant input.
  Matrix forward(const Matrix& x);

  long in_dim() const { return in_dim_; }
  long out_dim() const { return out_dim_; }
  const std::string& name() const { return name_; }
  std::vector<Param*> params();
  std::vector<const Param*> params() const;

 private:
  struct Layer {
    Param weight;  // [in x out]
    Param bias;    // [1 x out]
    Activation act = Activation::identity;
  };
  std::string name_;
  long in_dim_ = 0;
  long out_dim_ = 0;
  std::vector<Layer> layers_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected adaptive-moment optimizer over a fixed parameter list.
class Adam {
 public:
  explicit Adam(std::vector<Param*> params, AdamConfig cfg = {});

  void zero_grad();
  // One update from the params' current grads. A non-finite gradient aborts
  // the step with a NumericError naming the parameter.
  void step();
  long step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Param*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  AdamConfig cfg_;
  long step_ = 0;
};

}  // namespace civest::nn
