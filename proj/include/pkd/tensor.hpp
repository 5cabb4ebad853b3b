#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pkd {

/// Dense row-major array of rank 1 to 3 with an optional gradient buffer.
///
/// Values are held in double precision; checkpoints narrow them to f32.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);
  Tensor(std::vector<std::size_t> dims, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 helpers.
  std::size_t rows() const { return dims_.at(0); }
  std::size_t cols() const { return dims_.at(1); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }

  std::span<double> row(std::size_t i) {
    const std::size_t w = size() / dims_[0];
    return std::span<double>(data_).subspan(i * w, w);
  }
  std::span<const double> row(std::size_t i) const {
    const std::size_t w = size() / dims_[0];
    return std::span<const double>(data_).subspan(i * w, w);
  }

  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  /// Allocates (or clears) the gradient buffer.
  void zero_grad();
  void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }

  void fill(double v);
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

  std::string shape_string() const;

  /// Bitwise equality of dims and data (grad ignored).
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

}  // namespace pkd
