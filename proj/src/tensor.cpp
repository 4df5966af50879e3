#include "catsr/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace catsr {

int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

static void check_shape_valid(const Shape& s) {
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor: nonpositive extent in shape " + shape_str(s));
  }
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_shape_valid(shape_);
  data_ = std::make_shared<Eigen::ArrayXd>(Eigen::ArrayXd::Zero(shape_size(shape_)));
}

Tensor::Tensor(Shape shape, Eigen::ArrayXd values) : shape_(std::move(shape)) {
  check_shape_valid(shape_);
  if (values.size() != shape_size(shape_)) {
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape_));
  }
  data_ = std::make_shared<Eigen::ArrayXd>(std::move(values));
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), Eigen::Map<const Eigen::ArrayXd>(values.begin(),
                                                                static_cast<int64_t>(values.size()))) {}

Tensor Tensor::full(Shape shape, double v) {
  check_shape_valid(shape);
  int64_t n = shape_size(shape);
  return Tensor(std::move(shape), Eigen::ArrayXd::Constant(n, v));
}

const Eigen::ArrayXd& Tensor::values() const {
  if (!data_) throw TapeError("tensor: reading values of an empty tensor");
  return *data_;
}

Eigen::ArrayXd& Tensor::values_mut() {
  if (!data_) throw TapeError("tensor: mutating an empty tensor");
  if (on_tape()) throw TapeError("tensor: mutating a tensor recorded on a tape");
  if (data_.use_count() > 1) data_ = std::make_shared<Eigen::ArrayXd>(*data_);
  return *data_;
}

double Tensor::value() const {
  if (size() != 1) throw ShapeError("tensor: value() on non-scalar shape " + shape_str(shape_));
  return (*data_)(0);
}

double Tensor::at(int i, int j) const {
  return (*data_)(static_cast<int64_t>(i) * shape_[1] + j);
}
double Tensor::at(int i, int j, int k) const {
  return (*data_)((static_cast<int64_t>(i) * shape_[1] + j) * shape_[2] + k);
}
double Tensor::at(int i, int j, int k, int l) const {
  return (*data_)(((static_cast<int64_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l);
}

Eigen::Map<const RowMat> Tensor::as_matrix(int rows, int cols) const {
  if (static_cast<int64_t>(rows) * cols != size()) {
    throw ShapeError("tensor: cannot view " + shape_str(shape_) + " as " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  return Eigen::Map<const RowMat>(data_->data(), rows, cols);
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

// ---- Tape -------------------------------------------------------------------

Tensor Tape::leaf(const Tensor& value) {
  if (value.on_tape()) throw TapeError("tape: leaf() on a tensor already recorded");
  Tensor t = value;
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{t.shape_, BackwardFn{}});
  return t;
}

Tensor Tape::record(Tensor value, BackwardFn fn) {
  if (value.on_tape()) throw TapeError("tape: record() on a tensor already recorded");
  value.tape_ = this;
  value.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{value.shape_, std::move(fn)});
  return value;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.on_tape() || loss.tape_ != this) {
    throw TapeError("backward: loss is not on this tape");
  }
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (backward_run_) {
    throw TapeError("backward: tape already differentiated; reset() before re-recording");
  }
  backward_run_ = true;
  grads_.resize(nodes_.size());
  for (size_t i = 0; i < nodes_.size(); ++i) {
    grads_[i] = Eigen::ArrayXd::Zero(shape_size(nodes_[i].shape));
  }
  grads_[static_cast<size_t>(loss.node_)](0) = 1.0;
  for (int i = loss.node_; i >= 0; --i) {
    const Node& n = nodes_[static_cast<size_t>(i)];
    if (n.fn) n.fn(*this, grads_[static_cast<size_t>(i)]);
  }
}

Tensor Tape::grad(const Tensor& t) const {
  if (!t.on_tape() || t.tape_ != this) throw TapeError("grad: tensor is not on this tape");
  if (!backward_run_) throw TapeError("grad: backward() has not run");
  return Tensor(t.shape_, grads_[static_cast<size_t>(t.node_)]);
}

void Tape::accumulate(const Tensor& t, const Eigen::ArrayXd& g) {
  if (!t.on_tape()) return;
  if (t.tape_ != this) throw TapeError("accumulate: tensor belongs to another tape");
  Eigen::ArrayXd& slot = grads_[static_cast<size_t>(t.node_)];
  if (slot.size() != g.size()) {
    throw ShapeError("accumulate: gradient size " + std::to_string(g.size()) +
                     " for node of size " + std::to_string(slot.size()));
  }
  slot += g;
}

void Tape::reset() {
  nodes_.clear();
  grads_.clear();
  backward_run_ = false;
}

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tp = nullptr;
  for (const Tensor* t : ts) {
    if (!t->on_tape()) continue;
    if (tp && tp != t->tape()) throw TapeError("op: operands recorded on different tapes");
    tp = t->tape();
  }
  return tp;
}

void backward(const Tensor& loss) {
  if (!loss.on_tape()) throw TapeError("backward: loss is not on a tape");
  loss.tape()->backward(loss);
}

// ---- elementwise ------------------------------------------------------------

static void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out(a.shape(), a.values() + b.values());
  Tape* tp = common_tape({&a, &b});
  if (!tp) return out;
  return tp->record(std::move(out), [a, b](Tape& t, const Eigen::ArrayXd& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out(a.shape(), a.values() - b.values());
  Tape* tp = common_tape({&a, &b});
  if (!tp) return out;
  return tp->record(std::move(out), [a, b](Tape& t, const Eigen::ArrayXd& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out(a.shape(), a.values() * b.values());
  Tape* tp = common_tape({&a, &b});
  if (!tp) return out;
  return tp->record(std::move(out), [a, b](Tape& t, const Eigen::ArrayXd& g) {
    t.accumulate(a, g * b.values());
    t.accumulate(b, g * a.values());
  });
}

Tensor relu(const Tensor& a) {
  Tensor out(a.shape(), a.values().max(0.0));
  Tape* tp = common_tape({&a});
  if (!tp) return out;
  return tp->record(std::move(out), [a](Tape& t, const Eigen::ArrayXd& g) {
    t.accumulate(a, (a.values() > 0.0).select(g, 0.0));
  });
}

static double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& a) {
  Eigen::ArrayXd y = a.values().unaryExpr([](double x) { return stable_sigmoid(x); });
  Tensor out(a.shape(), std::move(y));
  Tape* tp = common_tape({&a});
  if (!tp) return out;
  Eigen::ArrayXd saved = out.values();
  return tp->record(std::move(out), [a, saved](Tape& t, const Eigen::ArrayXd& g) {
    t.accumulate(a, g * saved * (1.0 - saved));
  });
}

Tensor tanh(const Tensor& a) {
  Tensor out(a.shape(), a.values().tanh());
  Tape* tp = common_tape({&a});
  if (!tp) return out;
  Eigen::ArrayXd saved = out.values();
  return tp->record(std::move(out), [a, saved](Tape& t, const Eigen::ArrayXd& g) {
    t.accumulate(a, g * (1.0 - saved.square()));
  });
}

Tensor exp(const Tensor& a) {
  Tensor out(a.shape(), a.values().exp());
  Tape* tp = common_tape({&a});
  if (!tp) return out;
  Eigen::ArrayXd saved = out.values();
  return tp->record(std::move(out), [a, saved](Tape& t, const Eigen::ArrayXd& g) {
    t.accumulate(a, g * saved);
  });
}

Tensor log(const Tensor& a) {
  Tensor out(a.shape(), a.values().log());
  Tape* tp = common_tape({&a});
  if (!tp) return out;
  return tp->record(std::move(out), [a](Tape& t, const Eigen::ArrayXd& g) {
    t.accumulate(a, g / a.values());
  });
}

Tensor negate(const Tensor& a) {
  Tensor out(a.shape(), -a.values());
  Tape* tp = common_tape({&a});
  if (!tp) return out;
  return tp->record(std::move(out), [a](Tape& t, const Eigen::ArrayXd& g) {
    t.accumulate(a, -g);
  });
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape(), a.values() * c);
  Tape* tp = common_tape({&a});
  if (!tp) return out;
  return tp->record(std::move(out), [a, c](Tape& t, const Eigen::ArrayXd& g) {
    t.accumulate(a, g * c);
  });
}

// ---- linear algebra and structure --------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  RowMat prod = a.as_matrix(m, k) * b.as_matrix(k, n);
  Tensor out({m, n}, Eigen::Map<Eigen::ArrayXd>(prod.data(), prod.size()));
  Tape* tp = common_tape({&a, &b});
  if (!tp) return out;
  return tp->record(std::move(out), [a, b, m, k, n](Tape& t, const Eigen::ArrayXd& g) {
    Eigen::Map<const RowMat> gm(g.data(), m, n);
    RowMat ga = gm * b.as_matrix(k, n).transpose();
    RowMat gb = a.as_matrix(m, k).transpose() * gm;
    t.accumulate(a, Eigen::Map<Eigen::ArrayXd>(ga.data(), ga.size()));
    t.accumulate(b, Eigen::Map<Eigen::ArrayXd>(gb.data(), gb.size()));
  });
}

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::scalar(a.values().sum());
  Tape* tp = common_tape({&a});
  if (!tp) return out;
  return tp->record(std::move(out), [a](Tape& t, const Eigen::ArrayXd& g) {
    t.accumulate(a, Eigen::ArrayXd::Constant(a.size(), g(0)));
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to incompatible " + shape_str(shape));
  }
  Tensor out(std::move(shape), a.values());
  Tape* tp = common_tape({&a});
  if (!tp) return out;
  return tp->record(std::move(out), [a](Tape& t, const Eigen::ArrayXd& g) {
    t.accumulate(a, g);
  });
}

Tensor concat0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat0: no parts");
  Shape rest(parts[0].shape().begin() + 1, parts[0].shape().end());
  int total0 = 0;
  for (const Tensor& p : parts) {
    Shape r(p.shape().begin() + 1, p.shape().end());
    if (p.rank() == 0 || r != rest) {
      throw ShapeError("concat0: part shape " + shape_str(p.shape()) +
                       " incompatible with " + shape_str(parts[0].shape()));
    }
    total0 += p.dim(0);
  }
  Shape out_shape = parts[0].shape();
  out_shape[0] = total0;
  Eigen::ArrayXd data(shape_size(out_shape));
  int64_t off = 0;
  for (const Tensor& p : parts) {
    data.segment(off, p.size()) = p.values();
    off += p.size();
  }
  Tensor out(std::move(out_shape), std::move(data));
  Tape* tp = nullptr;
  for (const Tensor& p : parts) {
    if (p.on_tape()) {
      if (tp && tp != p.tape()) throw TapeError("concat0: parts on different tapes");
      tp = p.tape();
    }
  }
  if (!tp) return out;
  std::vector<Tensor> captured = parts;
  return tp->record(std::move(out), [captured](Tape& t, const Eigen::ArrayXd& g) {
    int64_t off = 0;
    for (const Tensor& p : captured) {
      t.accumulate(p, g.segment(off, p.size()));
      off += p.size();
    }
  });
}

Tensor cols(const Tensor& a, int c0, int c1) {
  if (a.rank() != 2) throw ShapeError("cols: expects rank-2, got " + shape_str(a.shape()));
  if (c0 < 0 || c1 > a.dim(1) || c0 >= c1) {
    throw ShapeError("cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") out of " + shape_str(a.shape()));
  }
  const int rows = a.dim(0), w = c1 - c0, full = a.dim(1);
  Eigen::ArrayXd data(static_cast<int64_t>(rows) * w);
  for (int r = 0; r < rows; ++r) {
    data.segment(static_cast<int64_t>(r) * w, w) =
        a.values().segment(static_cast<int64_t>(r) * full + c0, w);
  }
  Tensor out({rows, w}, std::move(data));
  Tape* tp = common_tape({&a});
  if (!tp) return out;
  return tp->record(std::move(out), [a, c0, w, rows, full](Tape& t, const Eigen::ArrayXd& g) {
    Eigen::ArrayXd ga = Eigen::ArrayXd::Zero(a.size());
    for (int r = 0; r < rows; ++r) {
      ga.segment(static_cast<int64_t>(r) * full + c0, w) = g.segment(static_cast<int64_t>(r) * w, w);
    }
    t.accumulate(a, ga);
  });
}

Tensor concat1(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw ShapeError("concat1: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const int rows = a.dim(0), wa = a.dim(1), wb = b.dim(1);
  Eigen::ArrayXd data(static_cast<int64_t>(rows) * (wa + wb));
  for (int r = 0; r < rows; ++r) {
    data.segment(static_cast<int64_t>(r) * (wa + wb), wa) =
        a.values().segment(static_cast<int64_t>(r) * wa, wa);
    data.segment(static_cast<int64_t>(r) * (wa + wb) + wa, wb) =
        b.values().segment(static_cast<int64_t>(r) * wb, wb);
  }
  Tensor out({rows, wa + wb}, std::move(data));
  Tape* tp = common_tape({&a, &b});
  if (!tp) return out;
  return tp->record(std::move(out), [a, b, rows, wa, wb](Tape& t, const Eigen::ArrayXd& g) {
    Eigen::ArrayXd ga(static_cast<int64_t>(rows) * wa), gb(static_cast<int64_t>(rows) * wb);
    for (int r = 0; r < rows; ++r) {
      ga.segment(static_cast<int64_t>(r) * wa, wa) = g.segment(static_cast<int64_t>(r) * (wa + wb), wa);
      gb.segment(static_cast<int64_t>(r) * wb, wb) =
          g.segment(static_cast<int64_t>(r) * (wa + wb) + wa, wb);
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

Tensor slice0(const Tensor& a, int i0, int i1) {
  if (a.rank() < 1 || i0 < 0 || i1 > a.dim(0) || i0 >= i1) {
    throw ShapeError("slice0: range [" + std::to_string(i0) + "," + std::to_string(i1) +
                     ") out of " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[0] = i1 - i0;
  const int64_t stride = a.size() / a.dim(0);
  Tensor out(out_shape, a.values().segment(i0 * stride, (i1 - i0) * stride));
  Tape* tp = common_tape({&a});
  if (!tp) return out;
  return tp->record(std::move(out), [a, i0, stride](Tape& t, const Eigen::ArrayXd& g) {
    Eigen::ArrayXd ga = Eigen::ArrayXd::Zero(a.size());
    ga.segment(i0 * stride, g.size()) = g;
    t.accumulate(a, ga);
  });
}

Tensor segment(const Tensor& a, int64_t offset, int64_t len) {
  if (offset < 0 || len <= 0 || offset + len > a.size()) {
    throw ShapeError("segment: range [" + std::to_string(offset) + "," +
                     std::to_string(offset + len) + ") out of size " + std::to_string(a.size()));
  }
  Tensor out({static_cast<int>(len)}, a.values().segment(offset, len));
  Tape* tp = common_tape({&a});
  if (!tp) return out;
  return tp->record(std::move(out), [a, offset, len](Tape& t, const Eigen::ArrayXd& g) {
    Eigen::ArrayXd ga = Eigen::ArrayXd::Zero(a.size());
    ga.segment(offset, len) = g;
    t.accumulate(a, ga);
  });
}

Tensor mean0(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("mean0: expects rank >= 2, got " + shape_str(a.shape()));
  const int k = a.dim(0);
  const int64_t rest = a.size() / k;
  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(rest);
  for (int i = 0; i < k; ++i) acc += a.values().segment(i * rest, rest);
  acc /= static_cast<double>(k);
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  Tensor out(std::move(out_shape), std::move(acc));
  Tape* tp = common_tape({&a});
  if (!tp) return out;
  return tp->record(std::move(out), [a, k, rest](Tape& t, const Eigen::ArrayXd& g) {
    Eigen::ArrayXd ga(a.size());
    for (int i = 0; i < k; ++i) ga.segment(i * rest, rest) = g / static_cast<double>(k);
    t.accumulate(a, ga);
  });
}

}  // namespace catsr
