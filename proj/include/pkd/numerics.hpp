#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pkd/tensor.hpp"

namespace pkd {

// ---------------------------------------------------------------------------
// Dense kernels. Every forward has a matching backward that accumulates into
// caller-provided gradient tensors (null pointers skip that gradient).
// ---------------------------------------------------------------------------

/// Temporal convolution whose kernel spans frames t-past .. t+future.
///
/// input  [T x Din], weight [Dout x Din x K] with K = past + future + 1,
/// bias [Dout]. Frames outside [0, T) read as zero. With future == 0 the op
/// is causal.
Tensor conv1d_offset(const Tensor& input, const Tensor& weight, const Tensor& bias, int past,
                     int future);

void conv1d_offset_backward(const Tensor& input, const Tensor& weight, int past, int future,
                            const Tensor& grad_out, Tensor* grad_input, Tensor* grad_weight,
                            Tensor* grad_bias);

/// Per-row affine map: input [T x Din], weight [Dout x Din], bias [Dout].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

void linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                     Tensor* grad_input, Tensor* grad_weight, Tensor* grad_bias);

Tensor relu(const Tensor& x);
/// Subgradient at zero is zero.
Tensor relu_backward(const Tensor& pre_activation, const Tensor& grad_out);

/// Column-wise concatenation of two [T x *] matrices.
Tensor concat_cols(const Tensor& left, const Tensor& right);
/// Inverse of concat_cols for gradients: adds the slices into left/right.
void split_cols_add(const Tensor& joined, Tensor* left, Tensor* right);

/// Row-wise softmax(logits / tau).
Tensor softmax_temp(const Tensor& logits, double tau);
/// Row-wise log softmax(logits / tau).
Tensor log_softmax_temp(const Tensor& logits, double tau);

// ---------------------------------------------------------------------------
// Named parameters and the optimizer.
// ---------------------------------------------------------------------------

/// Ordered name -> tensor map; ordering fixes serialization and update order.
struct ParamSet {
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }

  std::size_t scalar_count() const;
  void zero_grad();
  /// FNV-1a over names, dims and the bit patterns of the data.
  std::uint64_t checksum() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.tensors == b.tensors; }
};

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update using each parameter's gradient buffer.
///
/// Throws std::invalid_argument naming the offending parameter if any gradient
/// is non-finite; in that case nothing is modified.
void adam_step(ParamSet& params, AdamState& state, const AdamConfig& cfg);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.
// ---------------------------------------------------------------------------

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;
using GradFn = std::function<std::vector<Tensor>(std::span<const Tensor>)>;

/// Max over every input entry of |analytic - central| / max(1, |central|).
///
/// `loss` must return a single-element tensor; `grad` returns one tensor per
/// input with matching dims.
double grad_check(const ScalarFn& loss, const GradFn& grad, std::vector<Tensor> inputs,
                  double eps = 1e-4);

}  // namespace pkd
