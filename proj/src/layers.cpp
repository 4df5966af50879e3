#include "catsr/layers.hpp"

#include <cmath>

namespace catsr {

Param make_param(std::string name, Tensor value) {
  Param p;
  p.name = std::move(name);
  p.value = std::move(value);
  return p;
}

Tensor glorot_uniform(Shape shape, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Eigen::ArrayXd data(shape_size(shape));
  for (int64_t i = 0; i < data.size(); ++i) data(i) = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(data));
}

Conv2dLayer Conv2dLayer::init(const std::string& prefix, int c_in, int c_out, Rng& rng) {
  Conv2dLayer l;
  l.in_channels = c_in;
  l.out_channels = c_out;
  l.weight = make_param(prefix + ".weight",
                        glorot_uniform({c_out, c_in, 3, 3}, c_in * 9, c_out * 9, rng));
  l.bias = make_param(prefix + ".bias", Tensor::zeros({c_out}));
  return l;
}

BatchNormLayer BatchNormLayer::init(const std::string& prefix, int channels) {
  BatchNormLayer l;
  l.channels = channels;
  l.gamma = make_param(prefix + ".gamma", Tensor::ones({channels}));
  l.shift = make_param(prefix + ".shift", Tensor::zeros({channels}));
  l.running_mean = make_param(prefix + ".running_mean", Tensor::zeros({channels}));
  l.running_var = make_param(prefix + ".running_var", Tensor::ones({channels}));
  return l;
}

LinearLayer LinearLayer::init(const std::string& prefix, int d_in, int d_out, Rng& rng) {
  LinearLayer l;
  l.weight = make_param(prefix + ".weight", glorot_uniform({d_in, d_out}, d_in, d_out, rng));
  l.bias = make_param(prefix + ".bias", Tensor::zeros({d_out}));
  return l;
}

LstmLayer LstmLayer::init(const std::string& prefix, int d_in, int hidden, Rng& rng) {
  LstmLayer l;
  l.input_dim = d_in;
  l.hidden = hidden;
  l.weight = make_param(prefix + ".weight",
                        glorot_uniform({d_in + hidden, 4 * hidden}, d_in + hidden, hidden, rng));
  // Forget gate bias starts at 1 so early training does not flush the cell.
  Eigen::ArrayXd b = Eigen::ArrayXd::Zero(4 * hidden);
  b.segment(hidden, hidden) = 1.0;
  l.bias = make_param(prefix + ".bias", Tensor({4 * hidden}, std::move(b)));
  return l;
}

// ---- conv2d -------------------------------------------------------------------

static void check_rank4(const char* op, const Tensor& t) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(op) + ": expects [N,C,H,W], got " + shape_str(t.shape()));
  }
}

// col is [C*9, H*W] for one sample, zero padding 1.
static void im2col(const double* x, int C, int H, int W, RowMat& col) {
  col.setZero(C * 9, H * W);
  for (int c = 0; c < C; ++c) {
    for (int dy = 0; dy < 3; ++dy) {
      for (int dx = 0; dx < 3; ++dx) {
        const int row = (c * 3 + dy) * 3 + dx;
        for (int y = 0; y < H; ++y) {
          const int sy = y + dy - 1;
          if (sy < 0 || sy >= H) continue;
          for (int xx = 0; xx < W; ++xx) {
            const int sx = xx + dx - 1;
            if (sx < 0 || sx >= W) continue;
            col(row, y * W + xx) = x[(c * H + sy) * W + sx];
          }
        }
      }
    }
  }
}

static void col2im_add(const RowMat& col, int C, int H, int W, double* gx) {
  for (int c = 0; c < C; ++c) {
    for (int dy = 0; dy < 3; ++dy) {
      for (int dx = 0; dx < 3; ++dx) {
        const int row = (c * 3 + dy) * 3 + dx;
        for (int y = 0; y < H; ++y) {
          const int sy = y + dy - 1;
          if (sy < 0 || sy >= H) continue;
          for (int xx = 0; xx < W; ++xx) {
            const int sx = xx + dx - 1;
            if (sx < 0 || sx >= W) continue;
            gx[(c * H + sy) * W + sx] += col(row, y * W + xx);
          }
        }
      }
    }
  }
}

Tensor conv2d(const Tensor& input, const Conv2dLayer& layer) {
  check_rank4("conv2d", input);
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (C != layer.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(C) + " channels, layer expects " +
                     std::to_string(layer.in_channels));
  }
  const Tensor& w = layer.weight.tensor();
  const Tensor& b = layer.bias.tensor();
  const int Co = layer.out_channels;
  const int64_t plane = static_cast<int64_t>(H) * W;

  Eigen::ArrayXd out(static_cast<int64_t>(N) * Co * plane);
  Eigen::Map<const RowMat> wmat(w.values().data(), Co, C * 9);
  RowMat col;
  for (int n = 0; n < N; ++n) {
    im2col(input.values().data() + n * C * plane, C, H, W, col);
    RowMat o = wmat * col;
    o.colwise() += Eigen::Map<const Eigen::VectorXd>(b.values().data(), Co);
    Eigen::Map<RowMat>(out.data() + n * Co * plane, Co, plane) = o;
  }
  Tensor result({N, Co, H, W}, std::move(out));
  Tape* tp = common_tape({&input, &w, &b});
  if (!tp) return result;
  Tensor x = input;
  return tp->record(std::move(result), [x, w, b, N, C, H, W, Co, plane](Tape& t,
                                                                        const Eigen::ArrayXd& g) {
    Eigen::Map<const RowMat> wmat(w.values().data(), Co, C * 9);
    RowMat gw = RowMat::Zero(Co, C * 9);
    Eigen::VectorXd gb = Eigen::VectorXd::Zero(Co);
    Eigen::ArrayXd gx = Eigen::ArrayXd::Zero(x.size());
    RowMat col;
    for (int n = 0; n < N; ++n) {
      im2col(x.values().data() + n * C * plane, C, H, W, col);
      Eigen::Map<const RowMat> gm(g.data() + n * Co * plane, Co, plane);
      gw.noalias() += gm * col.transpose();
      gb += gm.rowwise().sum();
      RowMat gcol = wmat.transpose() * gm;
      col2im_add(gcol, C, H, W, gx.data() + n * C * plane);
    }
    t.accumulate(x, gx);
    t.accumulate(w, Eigen::Map<Eigen::ArrayXd>(gw.data(), gw.size()));
    t.accumulate(b, Eigen::Map<Eigen::ArrayXd>(gb.data(), gb.size()));
  });
}

// ---- pooling ------------------------------------------------------------------

Tensor pool2d(const Tensor& input, PoolMode mode) {
  check_rank4("pool2d", input);
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H < 2 || W < 2) {
    throw ShapeError("pool2d: spatial extents must be >= 2, got " + shape_str(input.shape()));
  }
  const int Ho = H / 2, Wo = W / 2;
  const int64_t in_plane = static_cast<int64_t>(H) * W;
  const int64_t out_plane = static_cast<int64_t>(Ho) * Wo;
  Eigen::ArrayXd out(static_cast<int64_t>(N) * C * out_plane);
  std::vector<int64_t> argmax;
  if (mode == PoolMode::Max) argmax.resize(static_cast<size_t>(out.size()));

  const double* x = input.values().data();
  for (int nc = 0; nc < N * C; ++nc) {
    const double* xp = x + nc * in_plane;
    double* op = out.data() + nc * out_plane;
    for (int y = 0; y < Ho; ++y) {
      for (int xx = 0; xx < Wo; ++xx) {
        const int64_t i00 = static_cast<int64_t>(2 * y) * W + 2 * xx;
        const int64_t idx[4] = {i00, i00 + 1, i00 + W, i00 + W + 1};
        if (mode == PoolMode::Max) {
          int64_t best = idx[0];
          double bv = xp[idx[0]];
          for (int k = 1; k < 4; ++k) {
            if (xp[idx[k]] > bv) {
              bv = xp[idx[k]];
              best = idx[k];
            }
          }
          op[y * Wo + xx] = bv;
          argmax[static_cast<size_t>(nc * out_plane + y * Wo + xx)] = nc * in_plane + best;
        } else {
          op[y * Wo + xx] = 0.25 * (xp[idx[0]] + xp[idx[1]] + xp[idx[2]] + xp[idx[3]]);
        }
      }
    }
  }
  Tensor result({N, C, Ho, Wo}, std::move(out));
  Tape* tp = common_tape({&input});
  if (!tp) return result;
  Tensor xin = input;
  if (mode == PoolMode::Max) {
    return tp->record(std::move(result), [xin, argmax](Tape& t, const Eigen::ArrayXd& g) {
      Eigen::ArrayXd gx = Eigen::ArrayXd::Zero(xin.size());
      for (int64_t i = 0; i < g.size(); ++i) gx(argmax[static_cast<size_t>(i)]) += g(i);
      t.accumulate(xin, gx);
    });
  }
  return tp->record(std::move(result),
                    [xin, N, C, W, Ho, Wo, in_plane, out_plane](Tape& t, const Eigen::ArrayXd& g) {
                      Eigen::ArrayXd gx = Eigen::ArrayXd::Zero(xin.size());
                      for (int nc = 0; nc < N * C; ++nc) {
                        for (int y = 0; y < Ho; ++y) {
                          for (int xx = 0; xx < Wo; ++xx) {
                            const double gv = 0.25 * g(nc * out_plane + y * Wo + xx);
                            const int64_t i00 =
                                nc * in_plane + static_cast<int64_t>(2 * y) * W + 2 * xx;
                            gx(i00) += gv;
                            gx(i00 + 1) += gv;
                            gx(i00 + W) += gv;
                            gx(i00 + W + 1) += gv;
                          }
                        }
                      }
                      t.accumulate(xin, gx);
                    });
}

Tensor global_average_pool(const Tensor& input) {
  check_rank4("global_average_pool", input);
  const int N = input.dim(0), C = input.dim(1);
  const int64_t plane = static_cast<int64_t>(input.dim(2)) * input.dim(3);
  Eigen::ArrayXd out(static_cast<int64_t>(N) * C);
  for (int i = 0; i < N * C; ++i) out(i) = input.values().segment(i * plane, plane).mean();
  Tensor result({N, C}, std::move(out));
  Tape* tp = common_tape({&input});
  if (!tp) return result;
  Tensor x = input;
  return tp->record(std::move(result), [x, plane](Tape& t, const Eigen::ArrayXd& g) {
    Eigen::ArrayXd gx(x.size());
    for (int64_t i = 0; i < g.size(); ++i) {
      gx.segment(i * plane, plane).setConstant(g(i) / static_cast<double>(plane));
    }
    t.accumulate(x, gx);
  });
}

// ---- linear -------------------------------------------------------------------

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.rank() != 2 || weights.rank() != 2 || bias.rank() != 1 ||
      input.dim(1) != weights.dim(0) || weights.dim(1) != bias.dim(0)) {
    throw ShapeError("linear: incompatible shapes " + shape_str(input.shape()) + " x " +
                     shape_str(weights.shape()) + " + " + shape_str(bias.shape()));
  }
  const int N = input.dim(0), di = input.dim(1), dout = weights.dim(1);
  RowMat o = input.as_matrix(N, di) * weights.as_matrix(di, dout);
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), dout);
  Tensor result({N, dout}, Eigen::Map<Eigen::ArrayXd>(o.data(), o.size()));
  Tape* tp = common_tape({&input, &weights, &bias});
  if (!tp) return result;
  Tensor x = input, w = weights, b = bias;
  return tp->record(std::move(result), [x, w, b, N, di, dout](Tape& t, const Eigen::ArrayXd& g) {
    Eigen::Map<const RowMat> gm(g.data(), N, dout);
    RowMat gx = gm * w.as_matrix(di, dout).transpose();
    RowMat gw = x.as_matrix(N, di).transpose() * gm;
    Eigen::VectorXd gb = gm.colwise().sum();
    t.accumulate(x, Eigen::Map<Eigen::ArrayXd>(gx.data(), gx.size()));
    t.accumulate(w, Eigen::Map<Eigen::ArrayXd>(gw.data(), gw.size()));
    t.accumulate(b, Eigen::Map<Eigen::ArrayXd>(gb.data(), gb.size()));
  });
}

// ---- batch normalization --------------------------------------------------------

Tensor batchnorm(const Tensor& input, BatchNormLayer& layer, Mode mode) {
  if (input.rank() < 2) {
    throw ShapeError("batchnorm: expects [N,C,...], got " + shape_str(input.shape()));
  }
  const int N = input.dim(0), C = input.dim(1);
  if (C != layer.channels) {
    throw ShapeError("batchnorm: input has " + std::to_string(C) + " channels, layer expects " +
                     std::to_string(layer.channels));
  }
  const int64_t spatial = input.size() / (static_cast<int64_t>(N) * C);
  const Tensor& gamma = layer.gamma.tensor();
  const Tensor& shift = layer.shift.tensor();

  Eigen::ArrayXd mean(C), var(C);
  if (mode == Mode::Train) {
    if (N < 2) {
      throw ShapeError("batchnorm: train mode requires batch size >= 2, got " + std::to_string(N));
    }
    mean.setZero();
    var.setZero();
    const double count = static_cast<double>(N) * static_cast<double>(spatial);
    const double* x = input.values().data();
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        mean(c) += Eigen::Map<const Eigen::ArrayXd>(x + (static_cast<int64_t>(n) * C + c) * spatial,
                                                    spatial)
                       .sum();
      }
    }
    mean /= count;
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        var(c) += (Eigen::Map<const Eigen::ArrayXd>(x + (static_cast<int64_t>(n) * C + c) * spatial,
                                                    spatial) -
                   mean(c))
                      .square()
                      .sum();
      }
    }
    var /= count;
    const double m = layer.momentum;
    layer.running_mean.value.values_mut() =
        m * layer.running_mean.value.values() + (1.0 - m) * mean;
    layer.running_var.value.values_mut() = m * layer.running_var.value.values() + (1.0 - m) * var;
  } else {
    mean = layer.running_mean.value.values();
    var = layer.running_var.value.values();
  }

  Eigen::ArrayXd inv_std = (var + layer.epsilon).sqrt().inverse();
  Eigen::ArrayXd xhat(input.size());
  Eigen::ArrayXd out(input.size());
  {
    const double* x = input.values().data();
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        const int64_t off = (static_cast<int64_t>(n) * C + c) * spatial;
        auto seg = Eigen::Map<const Eigen::ArrayXd>(x + off, spatial);
        xhat.segment(off, spatial) = (seg - mean(c)) * inv_std(c);
        out.segment(off, spatial) =
            xhat.segment(off, spatial) * gamma.values()(c) + shift.values()(c);
      }
    }
  }
  Tensor result(input.shape(), std::move(out));
  Tape* tp = common_tape({&input, &gamma, &shift});
  if (!tp) return result;
  Tensor x = input;
  const bool train = mode == Mode::Train;
  return tp->record(
      std::move(result),
      [x, gamma, shift, xhat, inv_std, N, C, spatial, train](Tape& t, const Eigen::ArrayXd& g) {
        Eigen::ArrayXd ggamma = Eigen::ArrayXd::Zero(C);
        Eigen::ArrayXd gshift = Eigen::ArrayXd::Zero(C);
        Eigen::ArrayXd gsum = Eigen::ArrayXd::Zero(C);      // per-channel sum of g
        Eigen::ArrayXd gxhat_sum = Eigen::ArrayXd::Zero(C);  // per-channel sum of g*xhat
        for (int n = 0; n < N; ++n) {
          for (int c = 0; c < C; ++c) {
            const int64_t off = (static_cast<int64_t>(n) * C + c) * spatial;
            auto gs = g.segment(off, spatial);
            gsum(c) += gs.sum();
            gxhat_sum(c) += (gs * xhat.segment(off, spatial)).sum();
          }
        }
        ggamma = gxhat_sum;
        gshift = gsum;
        const double count = static_cast<double>(N) * static_cast<double>(spatial);
        Eigen::ArrayXd gx(x.size());
        for (int n = 0; n < N; ++n) {
          for (int c = 0; c < C; ++c) {
            const int64_t off = (static_cast<int64_t>(n) * C + c) * spatial;
            auto gs = g.segment(off, spatial);
            if (train) {
              gx.segment(off, spatial) =
                  gamma.values()(c) * inv_std(c) *
                  (gs - gsum(c) / count - xhat.segment(off, spatial) * (gxhat_sum(c) / count));
            } else {
              gx.segment(off, spatial) = gamma.values()(c) * inv_std(c) * gs;
            }
          }
        }
        t.accumulate(x, gx);
        t.accumulate(gamma, ggamma);
        t.accumulate(shift, gshift);
      });
}

// ---- dropout ------------------------------------------------------------------

Tensor dropout(const Tensor& input, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (mode == Mode::Infer || rate == 0.0) return input;
  const double keep_scale = 1.0 / (1.0 - rate);
  Eigen::ArrayXd mask(input.size());
  for (int64_t i = 0; i < mask.size(); ++i) {
    mask(i) = rng.uniform() < rate ? 0.0 : keep_scale;
  }
  Tensor result(input.shape(), input.values() * mask);
  Tape* tp = common_tape({&input});
  if (!tp) return result;
  Tensor x = input;
  return tp->record(std::move(result), [x, mask](Tape& t, const Eigen::ArrayXd& g) {
    t.accumulate(x, g * mask);
  });
}

// ---- LSTM ---------------------------------------------------------------------

Tensor lstm_sequence_time_major(const Tensor& input, const LstmLayer& layer, const Tensor& h0,
                                const Tensor& c0) {
  if (input.rank() != 3 || input.dim(2) != layer.input_dim) {
    throw ShapeError("lstm: expects [T,M," + std::to_string(layer.input_dim) + "], got " +
                     shape_str(input.shape()));
  }
  const int T = input.dim(0), M = input.dim(1), H = layer.hidden;
  if (h0.shape() != Shape{M, H} || c0.shape() != Shape{M, H}) {
    throw ShapeError("lstm: initial state must be [M,H]=[" + std::to_string(M) + "," +
                     std::to_string(H) + "], got " + shape_str(h0.shape()) + " and " +
                     shape_str(c0.shape()));
  }
  const Tensor& w = layer.weight.tensor();
  const Tensor& b = layer.bias.tensor();
  Tensor h = h0, c = c0;
  std::vector<Tensor> steps;
  steps.reserve(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    Tensor xt = reshape(slice0(input, t, t + 1), {M, layer.input_dim});
    Tensor gates = linear(concat1(xt, h), w, b);
    Tensor gi = sigmoid(cols(gates, 0, H));
    Tensor gf = sigmoid(cols(gates, H, 2 * H));
    Tensor gc = tanh(cols(gates, 2 * H, 3 * H));
    Tensor go = sigmoid(cols(gates, 3 * H, 4 * H));
    c = add(mul(gf, c), mul(gi, gc));
    h = mul(go, tanh(c));
    steps.push_back(reshape(h, {1, M, H}));
  }
  return concat0(steps);
}

Tensor lstm_sequence(const Tensor& input, const LstmLayer& layer, const Tensor& h0,
                     const Tensor& c0) {
  if (input.rank() != 2) {
    throw ShapeError("lstm_sequence: expects [T,d_in], got " + shape_str(input.shape()));
  }
  const int T = input.dim(0), H = layer.hidden;
  Tensor tm = reshape(input, {T, 1, input.dim(1)});
  Tensor out = lstm_sequence_time_major(tm, layer, reshape(h0, {1, H}), reshape(c0, {1, H}));
  return reshape(out, {T, H});
}

Tensor lstm_sequence(const Tensor& input, const LstmLayer& layer) {
  return lstm_sequence(input, layer, Tensor::zeros({layer.hidden}), Tensor::zeros({layer.hidden}));
}

// ---- gradient reversal -----------------------------------------------------------

Tensor gradient_reversal(const Tensor& input, double beta) {
  if (beta < 0.0) {
    throw std::invalid_argument("gradient_reversal: beta must be >= 0, got " +
                                std::to_string(beta));
  }
  Tensor out = input.detached();
  Tape* tp = common_tape({&input});
  if (!tp) return out;
  Tensor x = input;
  return tp->record(std::move(out), [x, beta](Tape& t, const Eigen::ArrayXd& g) {
    t.accumulate(x, (-beta) * g);
  });
}

// ---- row normalization -----------------------------------------------------------

Tensor l2_normalize_rows(const Tensor& input) {
  if (input.rank() != 2) {
    throw ShapeError("l2_normalize_rows: expects [M,d], got " + shape_str(input.shape()));
  }
  const int M = input.dim(0), d = input.dim(1);
  Eigen::ArrayXd norms(M);
  Eigen::ArrayXd out(input.size());
  for (int r = 0; r < M; ++r) {
    auto row = input.values().segment(static_cast<int64_t>(r) * d, d);
    const double n = std::sqrt(row.square().sum());
    if (n == 0.0) {
      throw std::invalid_argument("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    }
    norms(r) = n;
    out.segment(static_cast<int64_t>(r) * d, d) = row / n;
  }
  Tensor result(input.shape(), out);
  Tape* tp = common_tape({&input});
  if (!tp) return result;
  Tensor x = input;
  Eigen::ArrayXd y = result.values();
  return tp->record(std::move(result), [x, y, norms, M, d](Tape& t, const Eigen::ArrayXd& g) {
    Eigen::ArrayXd gx(x.size());
    for (int r = 0; r < M; ++r) {
      const int64_t off = static_cast<int64_t>(r) * d;
      auto yr = y.segment(off, d);
      auto gr = g.segment(off, d);
      const double dot = (yr * gr).sum();
      gx.segment(off, d) = (gr - yr * dot) / norms(r);
    }
    t.accumulate(x, gx);
  });
}

// ---- layout -------------------------------------------------------------------

Tensor batch_to_time_major(const Tensor& input) {
  check_rank4("batch_to_time_major", input);
  if (input.dim(1) != 1) {
    throw ShapeError("batch_to_time_major: expects [M,1,T,F], got " + shape_str(input.shape()));
  }
  const int M = input.dim(0), T = input.dim(2), F = input.dim(3);
  Eigen::ArrayXd out(input.size());
  const double* x = input.values().data();
  for (int m = 0; m < M; ++m) {
    for (int t = 0; t < T; ++t) {
      out.segment((static_cast<int64_t>(t) * M + m) * F, F) =
          Eigen::Map<const Eigen::ArrayXd>(x + (static_cast<int64_t>(m) * T + t) * F, F);
    }
  }
  Tensor result({T, M, F}, std::move(out));
  Tape* tp = common_tape({&input});
  if (!tp) return result;
  Tensor xin = input;
  return tp->record(std::move(result), [xin, M, T, F](Tape& t, const Eigen::ArrayXd& g) {
    Eigen::ArrayXd gx(xin.size());
    for (int m = 0; m < M; ++m) {
      for (int tt = 0; tt < T; ++tt) {
        gx.segment((static_cast<int64_t>(m) * T + tt) * F, F) =
            g.segment((static_cast<int64_t>(tt) * M + m) * F, F);
      }
    }
    t.accumulate(xin, gx);
  });
}

Tensor time_major_to_batch(const Tensor& input) {
  if (input.rank() != 3) {
    throw ShapeError("time_major_to_batch: expects [T,M,F], got " + shape_str(input.shape()));
  }
  const int T = input.dim(0), M = input.dim(1), F = input.dim(2);
  Eigen::ArrayXd out(input.size());
  const double* x = input.values().data();
  for (int t = 0; t < T; ++t) {
    for (int m = 0; m < M; ++m) {
      out.segment((static_cast<int64_t>(m) * T + t) * F, F) =
          Eigen::Map<const Eigen::ArrayXd>(x + (static_cast<int64_t>(t) * M + m) * F, F);
    }
  }
  Tensor result({M, 1, T, F}, std::move(out));
  Tape* tp = common_tape({&input});
  if (!tp) return result;
  Tensor xin = input;
  return tp->record(std::move(result), [xin, M, T, F](Tape& t, const Eigen::ArrayXd& g) {
    Eigen::ArrayXd gx(xin.size());
    for (int tt = 0; tt < T; ++tt) {
      for (int m = 0; m < M; ++m) {
        gx.segment((static_cast<int64_t>(tt) * M + m) * F, F) =
            g.segment((static_cast<int64_t>(m) * T + tt) * F, F);
      }
    }
    t.accumulate(xin, gx);
  });
}

}  // namespace catsr
