#include "civest/autodiff.hpp"

#include <cmath>
#include <utility>

namespace civest::ad {

namespace {

void check_same_shape(const char* op, const Value& a, const Value& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimMismatchError(std::string(op) + ": shape (" +
                           std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                           ") vs (" + std::to_string(b.rows()) + "x" +
                           std::to_string(b.cols()) + ")");
  }
}

void check_same_tape(const char* op, const Value& a, const Value& b) {
  if (a.tape() != b.tape()) {
    throw NumericError(std::string(op) + ": operands live on different tapes");
  }
}

}  // namespace

const Matrix& Value::data() const { return tape_->node(id_).data; }
const Matrix& Value::grad() const { return tape_->node(id_).grad; }

double Value::item() const {
  const Matrix& m = data();
  if (m.rows() != 1 || m.cols() != 1) {
    throw DimMismatchError("Value::item on non-scalar", 1, m.rows() * m.cols());
  }
  return m(0, 0);
}

Value Tape::emplace(Matrix data, std::function<void(Tape&, Node&)> backprop) {
  Node n;
  n.grad = Matrix::Zero(data.rows(), data.cols());
  n.data = std::move(data);
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Value(this, static_cast<int>(nodes_.size()) - 1);
}

Value Tape::constant(Matrix m) { return emplace(std::move(m), nullptr); }

Value Tape::leaf(const Matrix& value, Matrix* grad_sink) {
  Value v = emplace(value, nullptr);
  nodes_.back().sink = grad_sink;
  return v;
}

void Tape::backward(Value loss) {
  if (loss.tape() != this) {
    throw NumericError("backward: loss does not belong to this tape");
  }
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw DimMismatchError("backward requires a scalar (1x1) loss", 1,
                           loss.rows() * loss.cols());
  }
  for (Node& n : nodes_) n.grad.setZero();
  node(loss.id()).grad(0, 0) = 1.0;
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backprop) n.backprop(*this, n);
  }
  for (Node& n : nodes_) {
    if (n.sink != nullptr) *n.sink += n.grad;
  }
}

Value add(Value a, Value b) {
  check_same_tape("add", a, b);
  check_same_shape("add", a, b);
  Tape& t = *a.tape();
  int ia = a.id(), ib = b.id();
  return t.emplace(a.data() + b.data(), [ia, ib](Tape& tp, Tape::Node& self) {
    tp.node(ia).grad += self.grad;
    tp.node(ib).grad += self.grad;
  });
}

Value add_row(Value a, Value row) {
  check_same_tape("add_row", a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimMismatchError("add_row: row operand", a.cols(), row.cols());
  }
  Tape& t = *a.tape();
  int ia = a.id(), ir = row.id();
  Matrix out = a.data();
  out.rowwise() += row.data().row(0);
  return t.emplace(std::move(out), [ia, ir](Tape& tp, Tape::Node& self) {
    tp.node(ia).grad += self.grad;
    tp.node(ir).grad += self.grad.colwise().sum();
  });
}

Value sub(Value a, Value b) {
  check_same_tape("sub", a, b);
  check_same_shape("sub", a, b);
  Tape& t = *a.tape();
  int ia = a.id(), ib = b.id();
  return t.emplace(a.data() - b.data(), [ia, ib](Tape& tp, Tape::Node& self) {
    tp.node(ia).grad += self.grad;
    tp.node(ib).grad -= self.grad;
  });
}

Value neg(Value a) { return scale(a, -1.0); }

Value mul(Value a, Value b) {
  check_same_tape("mul", a, b);
  check_same_shape("mul", a, b);
  Tape& t = *a.tape();
  int ia = a.id(), ib = b.id();
  return t.emplace(a.data().cwiseProduct(b.data()),
                   [ia, ib](Tape& tp, Tape::Node& self) {
                     tp.node(ia).grad += self.grad.cwiseProduct(tp.node(ib).data);
                     tp.node(ib).grad += self.grad.cwiseProduct(tp.node(ia).data);
                   });
}

Value div(Value a, Value b) {
  check_same_tape("div", a, b);
  check_same_shape("div", a, b);
  Tape& t = *a.tape();
  int ia = a.id(), ib = b.id();
  return t.emplace(a.data().cwiseQuotient(b.data()),
                   [ia, ib](Tape& tp, Tape::Node& self) {
                     const Matrix& bd = tp.node(ib).data;
                     tp.node(ia).grad += self.grad.cwiseQuotient(bd);
                     tp.node(ib).grad -= self.grad.cwiseProduct(self.data).cwiseQuotient(bd);
                   });
}

Value matmul(Value a, Value b) {
  check_same_tape("matmul", a, b);
  if (a.cols() != b.rows()) {
    throw DimMismatchError("matmul: inner dims", a.cols(), b.rows());
  }
  Tape& t = *a.tape();
  int ia = a.id(), ib = b.id();
  return t.emplace(a.data() * b.data(), [ia, ib](Tape& tp, Tape::Node& self) {
    tp.node(ia).grad.noalias() += self.grad * tp.node(ib).data.transpose();
    tp.node(ib).grad.noalias() += tp.node(ia).data.transpose() * self.grad;
  });
}

Value scale(Value a, double s) {
  Tape& t = *a.tape();
  int ia = a.id();
  return t.emplace(a.data() * s, [ia, s](Tape& tp, Tape::Node& self) {
    tp.node(ia).grad += self.grad * s;
  });
}

Value add_scalar(Value a, double s) {
  Tape& t = *a.tape();
  int ia = a.id();
  return t.emplace(a.data().array() + s, [ia](Tape& tp, Tape::Node& self) {
    tp.node(ia).grad += self.grad;
  });
}

Value square(Value a) {
  Tape& t = *a.tape();
  int ia = a.id();
  return t.emplace(a.data().array().square(), [ia](Tape& tp, Tape::Node& self) {
    tp.node(ia).grad += 2.0 * self.grad.cwiseProduct(tp.node(ia).data);
  });
}

Value exp(Value a) {
  Tape& t = *a.tape();
  int ia = a.id();
  return t.emplace(a.data().array().exp(), [ia](Tape& tp, Tape::Node& self) {
    tp.node(ia).grad += self.grad.cwiseProduct(self.data);
  });
}

Value log(Value a) {
  Tape& t = *a.tape();
  int ia = a.id();
  return t.emplace(a.data().array().log(), [ia](Tape& tp, Tape::Node& self) {
    tp.node(ia).grad += self.grad.cwiseQuotient(tp.node(ia).data);
  });
}

Value tanh(Value a) {
  Tape& t = *a.tape();
  int ia = a.id();
  return t.emplace(a.data().array().tanh(), [ia](Tape& tp, Tape::Node& self) {
    tp.node(ia).grad +=
        self.grad.cwiseProduct((1.0 - self.data.array().square()).matrix());
  });
}

Value sigmoid(Value a) {
  Tape& t = *a.tape();
  int ia = a.id();
  Matrix out = (1.0 / (1.0 + (-a.data().array()).exp())).matrix();
  return t.emplace(std::move(out), [ia](Tape& tp, Tape::Node& self) {
    const auto s = self.data.array();
    tp.node(ia).grad += self.grad.cwiseProduct((s * (1.0 - s)).matrix());
  });
}

Value leaky_relu(Value a, double slope) {
  Tape& t = *a.tape();
  int ia = a.id();
  Matrix out = a.data().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return t.emplace(std::move(out), [ia, slope](Tape& tp, Tape::Node& self) {
    const Matrix& x = tp.node(ia).data;
    tp.node(ia).grad += self.grad.cwiseProduct(
        x.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; }));
  });
}

Value clamp(Value a, double lo, double hi) {
  Tape& t = *a.tape();
  int ia = a.id();
  Matrix out = a.data().array().max(lo).min(hi);
  return t.emplace(std::move(out), [ia, lo, hi](Tape& tp, Tape::Node& self) {
    const Matrix& x = tp.node(ia).data;
    tp.node(ia).grad += self.grad.cwiseProduct(x.unaryExpr(
        [lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; }));
  });
}

Value sum_all(Value a) {
  Tape& t = *a.tape();
  int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.data().sum();
  return t.emplace(std::move(out), [ia](Tape& tp, Tape::Node& self) {
    tp.node(ia).grad.array() += self.grad(0, 0);
  });
}

Value mean_all(Value a) {
  Tape& t = *a.tape();
  int ia = a.id();
  const double n = static_cast<double>(a.rows() * a.cols());
  Matrix out(1, 1);
  out(0, 0) = a.data().mean();
  return t.emplace(std::move(out), [ia, n](Tape& tp, Tape::Node& self) {
    tp.node(ia).grad.array() += self.grad(0, 0) / n;
  });
}

Value row_sum(Value a) {
  Tape& t = *a.tape();
  int ia = a.id();
  Matrix out = a.data().rowwise().sum();
  return t.emplace(std::move(out), [ia](Tape& tp, Tape::Node& self) {
    tp.node(ia).grad.colwise() += self.grad.col(0);
  });
}

Value hcat(const std::vector<Value>& parts) {
  if (parts.empty()) throw DimMismatchError("hcat: no operands");
  Tape& t = *parts.front().tape();
  long rows = parts.front().rows();
  long total = 0;
  for (const Value& p : parts) {
    check_same_tape("hcat", parts.front(), p);
    if (p.rows() != rows) throw DimMismatchError("hcat: row count", rows, p.rows());
    total += p.cols();
  }
  Matrix out(rows, total);
  long off = 0;
  std::vector<int> ids;
  std::vector<long> widths;
  ids.reserve(parts.size());
  for (const Value& p : parts) {
    out.middleCols(off, p.cols()) = p.data();
    ids.push_back(p.id());
    widths.push_back(p.cols());
    off += p.cols();
  }
  return t.emplace(std::move(out), [ids, widths](Tape& tp, Tape::Node& self) {
    long off2 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      tp.node(ids[k]).grad += self.grad.middleCols(off2, widths[k]);
      off2 += widths[k];
    }
  });
}

Value cols(Value a, long start, long count) {
  if (start < 0 || count <= 0 || start + count > a.cols()) {
    throw DimMismatchError("cols: slice [" + std::to_string(start) + ", " +
                           std::to_string(start + count) + ") out of range for width " +
                           std::to_string(a.cols()));
  }
  Tape& t = *a.tape();
  int ia = a.id();
  return t.emplace(a.data().middleCols(start, count),
                   [ia, start, count](Tape& tp, Tape::Node& self) {
                     tp.node(ia).grad.middleCols(start, count) += self.grad;
                   });
}

}  // namespace civest::ad
