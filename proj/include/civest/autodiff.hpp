#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "civest/error.hpp"

namespace civest::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

// Cheap handle to a node on a Tape. Valid as long as the tape lives and has
// not been cleared.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& data() const;
  const Matrix& grad() const;
  long rows() const { return data().rows(); }
  long cols() const { return data().cols(); }
  // Scalar convenience for 1x1 values.
  double item() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
// order, so the backward pass is a single reverse sweep (Wengert list).
// One tape per forward pass; not thread-safe, but distinct tapes are
// independent and may be used from distinct threads.
class Tape {
 public:
  struct Node {
    Matrix data;
    Matrix grad;  // same shape as data, zeroed on creation and by backward()
    std::function<void(Tape&, Node&)> backprop;  // null for constants/leaves
    Matrix* sink = nullptr;  // leaf gradient destination, accumulated
  };

  // Untracked input; gradient is computed but goes nowhere.
  Value constant(Matrix m);
  // Tracked parameter leaf: backward() accumulates d(loss)/d(leaf) into
  // *grad_sink. Repeated backward() calls keep accumulating; callers that
  // want fresh gradients must zero their sinks first.
  Value leaf(const Matrix& value, Matrix* grad_sink);

  // Runs the reverse sweep from a 1x1 loss node. Internal node gradients are
  // reset at the start of every call, so only the sinks accumulate across
  // calls. Throws DimMismatchError if loss is not scalar.
  void backward(Value loss);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  Value emplace(Matrix data, std::function<void(Tape&, Node&)> backprop);

 private:
  std::vector<Node> nodes_;
};

// ---- elementwise / structural ops ----------------------------------------

Value add(Value a, Value b);            // same shape
Value add_row(Value a, Value row);      // [n x d] + [1 x d], broadcast over rows
Value sub(Value a, Value b);
Value neg(Value a);
Value mul(Value a, Value b);            // Hadamard
Value div(Value a, Value b);            // elementwise
Value matmul(Value a, Value b);
Value scale(Value a, double s);
Value add_scalar(Value a, double s);
Value square(Value a);
Value exp(Value a);
Value log(Value a);
Value tanh(Value a);
Value sigmoid(Value a);
Value leaky_relu(Value a, double slope);
// Clamps values to [lo, hi]; gradient is passed through strictly inside the
// interval and zero outside.
Value clamp(Value a, double lo, double hi);

Value sum_all(Value a);    // -> 1x1
Value mean_all(Value a);   // -> 1x1
Value row_sum(Value a);    // [n x d] -> [n x 1]
Value hcat(const std::vector<Value>& parts);
Value cols(Value a, long start, long count);

}  // namespace civest::ad
