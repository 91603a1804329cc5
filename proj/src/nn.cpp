#include "civest/nn.hpp"

#include <cmath>

namespace civest::nn {

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "tanh") return Activation::tanh;
  throw UsageError("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

Mlp::Mlp(std::string name, long in_dim, const std::vector<long>& hidden, long out_dim,
         Activation hidden_act, std::mt19937_64& rng)
    : name_(std::move(name)), in_dim_(in_dim), out_dim_(out_dim) {
  if (in_dim < 1 || out_dim < 1) {
    throw DimMismatchError("Mlp '" + name_ + "': dims must be positive");
  }
  std::vector<long> dims;
  dims.push_back(in_dim);
  for (long h : hidden) {
    if (h < 1) throw DimMismatchError("Mlp '" + name_ + "': hidden size must be positive");
    dims.push_back(h);
  }
  dims.push_back(out_dim);

  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const long fan_in = dims[l], fan_out = dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix w(fan_in, fan_out);
    for (long i = 0; i < fan_in; ++i)
      for (long j = 0; j < fan_out; ++j) w(i, j) = u(rng);
    Layer layer;
    const std::string tag = name_ + ".layer" + std::to_string(l);
    layer.weight = Param(tag + ".W", std::move(w));
    layer.bias = Param(tag + ".b", Matrix::Zero(1, fan_out));
    layer.act = (l + 2 < dims.size()) ? hidden_act : Activation::identity;
    layers_.push_back(std::move(layer));
  }
}

ad::Value Mlp::forward(ad::Tape& tape, ad::Value x) {
  if (x.cols() != in_dim_) {
    throw DimMismatchError("Mlp '" + name_ + "' input width", in_dim_, x.cols());
  }
  ad::Value h = x;
  for (Layer& layer : layers_) {
    ad::Value w = tape.leaf(layer.weight.value, &layer.weight.grad);
    ad::Value b = tape.leaf(layer.bias.value, &layer.bias.grad);
    h = ad::add_row(ad::matmul(h, w), b);
    switch (layer.act) {
      case Activation::identity: break;
      case Activation::leaky_relu: h = ad::leaky_relu(h, kLeakySlope); break;
      case Activation::tanh: h = ad::tanh(h); break;
    }
  }
  return h;
}

Matrix Mlp::forward(const Matrix& x) {
  ad::Tape tape;
  return forward(tape, tape.constant(x)).data();
}

std::vector<Param*> Mlp::params() {
  std::vector<Param*> out;
  for (Layer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Param*> Mlp::params() const {
  std::vector<const Param*> out;
  for (const Layer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

Adam::Adam(std::vector<Param*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Param* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->grad.setZero();
}

void Adam::step() {
  for (const Param* p : params_) {
    if (!p->grad.allFinite()) {
      throw NumericError("non-finite gradient in parameter '" + p->name +
                         "' at step " + std::to_string(step_ + 1));
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.array().square().matrix();
    const Matrix mhat = m_[i] / bc1;
    const Matrix vhat = v_[i] / bc2;
    p.value.array() -= cfg_.lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
  }
}

}  // namespace civest::nn
