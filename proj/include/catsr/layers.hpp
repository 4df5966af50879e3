#ifndef CATSR_LAYERS_HPP_
#define CATSR_LAYERS_HPP_

#include <string>
#include <vector>

#include "catsr/rng.hpp"
#include "catsr/tensor.hpp"

namespace catsr {

enum class Mode { Train, Infer };

// Learnable tensor with stable name. `value` is the persistent storage the
// optimizer updates; `bound` is the tape leaf for the current step.
struct Param {
  std::string name;
  Tensor value;
  Tensor bound;

  void bind(Tape& tape) { bound = tape.leaf(value); }
  void unbind() { bound = Tensor(); }
  const Tensor& tensor() const { return bound.on_tape() ? bound : value; }
};

Param make_param(std::string name, Tensor value);
// Uniform init with bound sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, int fan_in, int fan_out, Rng& rng);

// 3x3 kernels, stride 1, zero padding 1: spatial size is preserved.
struct Conv2dLayer {
  int in_channels = 0;
  int out_channels = 0;
  Param weight;  // [C_out, C_in, 3, 3]
  Param bias;    // [C_out]

  static Conv2dLayer init(const std::string& prefix, int c_in, int c_out, Rng& rng);
  std::vector<Param*> params() { return {&weight, &bias}; }
};

struct BatchNormLayer {
  int channels = 0;
  double momentum = 0.9;
  double epsilon = 1e-5;
  Param gamma;  // scale
  Param shift;  // the batch-norm beta
  // State, not optimized: refreshed only in Mode::Train. Named so checkpoints
  // can carry them.
  Param running_mean;
  Param running_var;

  static BatchNormLayer init(const std::string& prefix, int channels);
  std::vector<Param*> params() { return {&gamma, &shift}; }
  std::vector<Param*> state() { return {&running_mean, &running_var}; }
};

struct LinearLayer {
  Param weight;  // [d_in, d_out]
  Param bias;    // [d_out]

  static LinearLayer init(const std::string& prefix, int d_in, int d_out, Rng& rng);
  std::vector<Param*> params() { return {&weight, &bias}; }
};

// Concatenated-input form: the four gates (input, forget, cell, output) share
// one [d_in + H, 4H] matrix, sliced in that order.
struct LstmLayer {
  int input_dim = 0;
  int hidden = 0;
  Param weight;
  Param bias;

  static LstmLayer init(const std::string& prefix, int d_in, int hidden, Rng& rng);
  std::vector<Param*> params() { return {&weight, &bias}; }
};

enum class PoolMode { Max, Average };

// [N,C,H,W] -> [N,C_out,H,W]
Tensor conv2d(const Tensor& input, const Conv2dLayer& layer);
// 2x2 window, stride 2, floor semantics: [N,C,H,W] -> [N,C,H/2,W/2].
// Max mode routes the gradient to the first maximal element in row-major order.
Tensor pool2d(const Tensor& input, PoolMode mode);
// [N,C,H,W] -> [N,C]
Tensor global_average_pool(const Tensor& input);
// [N,d_in] x [d_in,d_out] + [d_out] -> [N,d_out]
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);
// Channel axis is dim 1; Mode::Train normalizes by batch statistics (requires
// N >= 2) and refreshes the running estimates, Mode::Infer uses the stored ones.
Tensor batchnorm(const Tensor& input, BatchNormLayer& layer, Mode mode);
// Train mode zeroes with probability `rate` and rescales survivors by
// 1/(1-rate); infer mode and rate 0 are the identity.
Tensor dropout(const Tensor& input, double rate, Mode mode, Rng& rng);
// [T,d_in] -> [T,H], zero initial state.
Tensor lstm_sequence(const Tensor& input, const LstmLayer& layer);
Tensor lstm_sequence(const Tensor& input, const LstmLayer& layer, const Tensor& h0,
                     const Tensor& c0);
// Batched recurrence over time-major input [T,M,d_in] -> [T,M,H].
Tensor lstm_sequence_time_major(const Tensor& input, const LstmLayer& layer, const Tensor& h0,
                                const Tensor& c0);
// Identity forward; backward multiplies the upstream gradient by -beta exactly.
Tensor gradient_reversal(const Tensor& input, double beta);
// Row-wise x / ||x||_2 for a [M,d] tensor; zero rows are an error.
Tensor l2_normalize_rows(const Tensor& input);

// [M,1,T,F] <-> [T,M,F] layout changes for the recurrent path.
Tensor batch_to_time_major(const Tensor& input);
Tensor time_major_to_batch(const Tensor& input);

}  // namespace catsr

#endif  // CATSR_LAYERS_HPP_
