#include "pkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace pkd {
namespace {

std::size_t element_count(const std::vector<std::size_t>& dims) {
  if (dims.empty() || dims.size() > 3) {
    throw std::invalid_argument("tensor rank must be 1..3, got " + std::to_string(dims.size()));
  }
  for (std::size_t d : dims) {
    if (d == 0) throw std::invalid_argument("tensor dims must be positive");
  }
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims, double fill)
    : dims_(std::move(dims)), data_(element_count(dims_), fill) {}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  if (element_count(dims_) != data_.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match dims " + shape_string());
  }
}

void Tensor::zero_grad() {
  grad_.assign(data_.size(), 0.0);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

}  // namespace pkd
