#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pkd/numerics.hpp"
#include "pkd/tensor.hpp"

namespace testing {

inline pkd::Tensor random_tensor(std::vector<std::size_t> dims, std::mt19937_64& rng,
                                 double scale = 1.0) {
  pkd::Tensor t(std::move(dims));
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.data()) v = n(rng);
  return t;
}

inline double max_abs_diff(const pkd::Tensor& a, const pkd::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline pkd::Tensor grad_of(const pkd::Tensor& t) {
  pkd::Tensor g(t.dims());
  if (t.has_grad())
    for (std::size_t i = 0; i < t.size(); ++i) g[i] = t.grad()[i];
  return g;
}

// ParamSet <-> grad_check input list, in the map's name order.
inline std::vector<pkd::Tensor> unpack(const pkd::ParamSet& p) {
  std::vector<pkd::Tensor> out;
  for (const auto& [_, t] : p.tensors) out.push_back(t);
  return out;
}

inline pkd::ParamSet repack(const pkd::ParamSet& like, std::span<const pkd::Tensor> in,
                            std::size_t offset = 0) {
  pkd::ParamSet p;
  std::size_t i = offset;
  for (const auto& [name, _] : like.tensors) p.tensors[name] = in[i++];
  return p;
}

inline std::vector<pkd::Tensor> grads_of(const pkd::ParamSet& p) {
  std::vector<pkd::Tensor> out;
  for (const auto& [_, t] : p.tensors) out.push_back(grad_of(t));
  return out;
}

}  // namespace testing
