#pragma once

#include <vector>

#include "cmr/rng.hpp"
#include "cmr/tensor.hpp"

// Differentiable tensor operations. Every op records itself on the graph
// shared by its tracked inputs; with no tracked input it is a plain forward
// evaluation.
namespace cmr::ops {

// Cross-correlation with zero padding. weight (out_c, in_c, kh, kw); bias is
// (1, out_c, 1, 1) or empty.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 1, int padding = 0);

// Adjoint of conv2d without padding. weight (in_c, out_c, kh, kw).
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 2);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool initialized = false;

  // mean 0, var 1
  static BatchNormState fresh(int channels);
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

// gamma, beta: (1, c, 1, 1). Train mode normalizes with population batch
// statistics over (n, h, w) and updates `state`; eval mode uses `state`.
Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                    double momentum = kBatchNormMomentum, double eps = kBatchNormEps);

// 2x2 window, stride 2. Ties go to the first element in row-major order.
Tensor max_pool2(const Tensor& input);

// Inverted dropout; identity in eval mode or for p == 0.
Tensor dropout(const Tensor& input, double p, Mode mode, RngStream& rng);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// Hadamard product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Channel-wise concatenation, a's channels first.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// (n, c, h, w) -> (n, c, 1, 1)
Tensor global_avg_pool(const Tensor& x);
Tensor global_max_pool(const Tensor& x);
// (n, c, h, w) -> (n, 1, h, w)
Tensor channel_mean_map(const Tensor& x);
Tensor channel_max_map(const Tensor& x);

// x (n, c, h, w) times gate (n, c, 1, 1), broadcast over h, w.
Tensor scale_channels(const Tensor& x, const Tensor& gate);
// x (n, c, h, w) times gate (n, 1, h, w), broadcast over c.
Tensor scale_spatial(const Tensor& x, const Tensor& gate);

// Reductions over every element, returning (1, 1, 1, 1).
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Population variance.
Tensor var(const Tensor& x);

// mean((pred - target)^2) as a scalar tensor.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

} // namespace cmr::ops
