#ifndef CATSR_TENSOR_HPP_
#define CATSR_TENSOR_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace catsr {

using Shape = std::vector<int>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct TapeError : std::logic_error {
  using std::logic_error::logic_error;
};

int64_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

// Dense 64-bit tensor, row-major. Data is shared immutably between copies;
// a tensor carrying a node id participates in exactly one tape's recording.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Eigen::ArrayXd values);
  Tensor(Shape shape, std::initializer_list<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return data_ ? data_->size() : 0; }

  const Eigen::ArrayXd& values() const;
  // Copy-on-write detach; only legal off-tape (parameters between steps).
  Eigen::ArrayXd& values_mut();

  double value() const;  // scalar tensors
  double at(int64_t i) const { return values()(i); }
  double at(int i, int j) const;
  double at(int i, int j, int k) const;
  double at(int i, int j, int k, int l) const;

  // Flat row-major view as a rows x cols matrix.
  Eigen::Map<const RowMat> as_matrix(int rows, int cols) const;

  bool on_tape() const { return node_ >= 0; }
  int node() const { return node_; }
  Tape* tape() const { return tape_; }
  // Same data/shape with the tape handle stripped (a constant view).
  Tensor detached() const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<Eigen::ArrayXd> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Recorded reverse-mode tape. Operations append nodes in execution order,
// which is by construction a topological order of the graph.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Eigen::ArrayXd& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a leaf (parameter or input) node; no backward function.
  Tensor leaf(const Tensor& value);
  // Attaches a freshly computed value to the tape with its gradient rule.
  Tensor record(Tensor value, BackwardFn fn);

  void backward(const Tensor& loss);
  // Gradient of the last backward() w.r.t. a tensor on this tape. Nodes the
  // loss does not reach hold zeros.
  Tensor grad(const Tensor& t) const;

  // Gradient accumulation used by backward closures.
  void accumulate(const Tensor& t, const Eigen::ArrayXd& g);

  size_t num_nodes() const { return nodes_.size(); }
  bool backward_run() const { return backward_run_; }
  void reset();

 private:
  struct Node {
    Shape shape;
    BackwardFn fn;  // empty for leaves
  };
  std::vector<Node> nodes_;
  std::vector<Eigen::ArrayXd> grads_;
  bool backward_run_ = false;
};

// The tape shared by a set of operands, null when all are constants.
// Mixing tensors from two live tapes is an error.
Tape* common_tape(std::initializer_list<const Tensor*> ts);

// ---- elementwise operations ------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor negate(const Tensor& a);
Tensor scale(const Tensor& a, double c);

// ---- linear algebra and structure -------------------------------------------

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// Sum of all elements -> scalar [1].
Tensor sum(const Tensor& a);
// Same data, new shape of equal element count.
Tensor reshape(const Tensor& a, Shape shape);
// Concatenation along axis 0; trailing extents must agree.
Tensor concat0(const std::vector<Tensor>& parts);
// Columns [c0, c1) of a rank-2 tensor.
Tensor cols(const Tensor& a, int c0, int c1);
// Column-wise concatenation of two rank-2 tensors with equal row counts.
Tensor concat1(const Tensor& a, const Tensor& b);
// Slice [i0, i1) along axis 0 (contiguous block).
Tensor slice0(const Tensor& a, int i0, int i1);
// Flat segment [offset, offset+len) of the row-major data, as a rank-1 tensor.
Tensor segment(const Tensor& a, int64_t offset, int64_t len);
// Mean over axis 0: [k, rest...] -> [rest...].
Tensor mean0(const Tensor& a);

// Reverse-mode backward entry point; loss must be a scalar on a tape.
void backward(const Tensor& loss);

}  // namespace catsr

#endif  // CATSR_TENSOR_HPP_
