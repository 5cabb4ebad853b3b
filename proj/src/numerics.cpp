#include "pkd/numerics.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace pkd {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat as_mat(const Tensor& t) {
  return CMapMat(t.raw(), static_cast<Eigen::Index>(t.dim(0)),
                 static_cast<Eigen::Index>(t.size() / t.dim(0)));
}
MapMat as_mat(Tensor& t) {
  return MapMat(t.raw(), static_cast<Eigen::Index>(t.dim(0)),
                static_cast<Eigen::Index>(t.size() / t.dim(0)));
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_conv_shapes(const Tensor& input, const Tensor& weight, int past, int future) {
  require(past >= 0 && future >= 0, "conv1d_offset: past and future must be >= 0");
  require(input.rank() == 2, "conv1d_offset: input must be [T x Din], got " + input.shape_string());
  require(weight.rank() == 3,
          "conv1d_offset: weight must be [Dout x Din x K], got " + weight.shape_string());
  require(weight.dim(1) == input.dim(1),
          "conv1d_offset: weight Din=" + std::to_string(weight.dim(1)) +
              " does not match input Din=" + std::to_string(input.dim(1)));
  require(weight.dim(2) == static_cast<std::size_t>(past + future + 1),
          "conv1d_offset: kernel size K=" + std::to_string(weight.dim(2)) +
              " must equal past+future+1=" + std::to_string(past + future + 1));
}

// Tap j of weight [Dout x Din x K] as a dense [Dout x Din] matrix.
RowMat tap(const Tensor& weight, std::size_t j) {
  const std::size_t dout = weight.dim(0), din = weight.dim(1);
  RowMat w(dout, din);
  for (std::size_t o = 0; o < dout; ++o)
    for (std::size_t i = 0; i < din; ++i) w(o, i) = weight.at(o, i, j);
  return w;
}

// Valid output rows [lo, hi) for a tap with frame offset `off`.
std::pair<Eigen::Index, Eigen::Index> tap_rows(Eigen::Index frames, int off) {
  const Eigen::Index lo = std::max<Eigen::Index>(0, -off);
  const Eigen::Index hi = std::min<Eigen::Index>(frames, frames - off);
  return {lo, hi};
}

}  // namespace

Tensor conv1d_offset(const Tensor& input, const Tensor& weight, const Tensor& bias, int past,
                     int future) {
  check_conv_shapes(input, weight, past, future);
  const std::size_t dout = weight.dim(0);
  require(bias.rank() == 1 && bias.dim(0) == dout,
          "conv1d_offset: bias must be [Dout=" + std::to_string(dout) + "], got " +
              bias.shape_string());

  const auto frames = static_cast<Eigen::Index>(input.dim(0));
  Tensor out = Tensor::matrix(input.dim(0), dout);
  auto y = as_mat(out);
  y.rowwise() = Eigen::Map<const Eigen::RowVectorXd>(bias.raw(), static_cast<Eigen::Index>(dout));
  auto x = as_mat(input);
  for (std::size_t j = 0; j < weight.dim(2); ++j) {
    const int off = static_cast<int>(j) - past;
    const auto [lo, hi] = tap_rows(frames, off);
    if (hi <= lo) continue;
    const RowMat w = tap(weight, j);
    y.middleRows(lo, hi - lo).noalias() += x.middleRows(lo + off, hi - lo) * w.transpose();
  }
  return out;
}

void conv1d_offset_backward(const Tensor& input, const Tensor& weight, int past, int future,
                            const Tensor& grad_out, Tensor* grad_input, Tensor* grad_weight,
                            Tensor* grad_bias) {
  check_conv_shapes(input, weight, past, future);
  require(grad_out.rank() == 2 && grad_out.dim(0) == input.dim(0) &&
              grad_out.dim(1) == weight.dim(0),
          "conv1d_offset_backward: grad_out shape " + grad_out.shape_string() + " mismatch");
  const auto frames = static_cast<Eigen::Index>(input.dim(0));
  auto x = as_mat(input);
  auto gy = as_mat(grad_out);

  if (grad_bias) {
    require(grad_bias->size() == weight.dim(0), "conv1d_offset_backward: grad_bias size");
    Eigen::Map<Eigen::RowVectorXd>(grad_bias->raw(), gy.cols()) += gy.colwise().sum();
  }
  if (grad_input) {
    require(grad_input->same_shape(input), "conv1d_offset_backward: grad_input shape");
  }
  if (grad_weight) {
    require(grad_weight->same_shape(weight), "conv1d_offset_backward: grad_weight shape");
  }
  for (std::size_t j = 0; j < weight.dim(2); ++j) {
    const int off = static_cast<int>(j) - past;
    const auto [lo, hi] = tap_rows(frames, off);
    if (hi <= lo) continue;
    if (grad_input) {
      const RowMat w = tap(weight, j);
      as_mat(*grad_input).middleRows(lo + off, hi - lo).noalias() +=
          gy.middleRows(lo, hi - lo) * w;
    }
    if (grad_weight) {
      const RowMat gw = gy.middleRows(lo, hi - lo).transpose() * x.middleRows(lo + off, hi - lo);
      for (Eigen::Index o = 0; o < gw.rows(); ++o)
        for (Eigen::Index i = 0; i < gw.cols(); ++i)
          grad_weight->at(static_cast<std::size_t>(o), static_cast<std::size_t>(i), j) += gw(o, i);
    }
  }
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(input.rank() == 2 && weight.rank() == 2 && weight.dim(1) == input.dim(1),
          "linear: input " + input.shape_string() + " incompatible with weight " +
              weight.shape_string());
  require(bias.rank() == 1 && bias.dim(0) == weight.dim(0),
          "linear: bias " + bias.shape_string() + " does not match Dout=" +
              std::to_string(weight.dim(0)));
  Tensor out = Tensor::matrix(input.dim(0), weight.dim(0));
  auto y = as_mat(out);
  y.noalias() = as_mat(input) * as_mat(weight).transpose();
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.raw(), y.cols());
  return out;
}

void linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                     Tensor* grad_input, Tensor* grad_weight, Tensor* grad_bias) {
  auto gy = as_mat(grad_out);
  if (grad_input) as_mat(*grad_input).noalias() += gy * as_mat(weight);
  if (grad_weight) as_mat(*grad_weight).noalias() += gy.transpose() * as_mat(input);
  if (grad_bias)
    Eigen::Map<Eigen::RowVectorXd>(grad_bias->raw(), gy.cols()) += gy.colwise().sum();
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& pre_activation, const Tensor& grad_out) {
  require(pre_activation.same_shape(grad_out), "relu_backward: shape mismatch");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(pre_activation[i] > 0.0)) g[i] = 0.0;
  return g;
}

Tensor concat_cols(const Tensor& left, const Tensor& right) {
  require(left.rank() == 2 && right.rank() == 2 && left.rows() == right.rows(),
          "concat_cols: row mismatch " + left.shape_string() + " vs " + right.shape_string());
  Tensor out = Tensor::matrix(left.rows(), left.cols() + right.cols());
  auto y = as_mat(out);
  y.leftCols(static_cast<Eigen::Index>(left.cols())) = as_mat(left);
  y.rightCols(static_cast<Eigen::Index>(right.cols())) = as_mat(right);
  return out;
}

void split_cols_add(const Tensor& joined, Tensor* left, Tensor* right) {
  auto j = as_mat(joined);
  if (left) as_mat(*left) += j.leftCols(static_cast<Eigen::Index>(left->cols()));
  if (right) as_mat(*right) += j.rightCols(static_cast<Eigen::Index>(right->cols()));
}

Tensor log_softmax_temp(const Tensor& logits, double tau) {
  require(tau > 0.0, "softmax_temp: tau must be > 0");
  require(logits.rank() == 2, "softmax_temp: logits must be [T x classes]");
  Tensor out = logits;
  for (std::size_t t = 0; t < out.rows(); ++t) {
    auto r = out.row(t);
    double mx = -INFINITY;
    for (double& v : r) {
      v /= tau;
      mx = std::max(mx, v);
    }
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (double& v : r) v -= lse;
  }
  return out;
}

Tensor softmax_temp(const Tensor& logits, double tau) {
  Tensor out = log_softmax_temp(logits, tau);
  for (double& v : out.data()) v = std::exp(v);
  return out;
}

// ---------------------------------------------------------------------------

Tensor& ParamSet::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::invalid_argument("missing parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::invalid_argument("missing parameter '" + name + "'");
  return it->second;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors) n += t.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [_, t] : tensors) t.zero_grad();
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : tensors) {
    for (char c : name) mix(static_cast<unsigned char>(c));
    for (std::size_t d : t.dims()) mix(d);
    for (double v : t.data()) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

void adam_step(ParamSet& params, AdamState& state, const AdamConfig& cfg) {
  require(cfg.lr >= 0.0, "adam_step: lr must be >= 0");
  for (const auto& [name, p] : params.tensors) {
    require(p.has_grad(), "adam_step: parameter '" + name + "' has no gradient buffer");
    for (double g : p.grad()) {
      require(std::isfinite(g), "adam_step: non-finite gradient in parameter '" + name + "'");
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params.tensors) {
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.size() != p.size()) m.assign(p.size(), 0.0);
    if (v.size() != p.size()) v.assign(p.size(), 0.0);
    auto g = p.grad();
    auto w = p.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------

double grad_check(const ScalarFn& loss, const GradFn& grad, std::vector<Tensor> inputs,
                  double eps) {
  require(eps > 0.0 && eps <= 1e-2, "grad_check: eps must be in (0, 1e-2]");
  auto eval = [&](const std::vector<Tensor>& in) -> long double {
    const Tensor v = loss(in);
    require(v.size() == 1, "grad_check: loss must be scalar, got " + v.shape_string());
    return static_cast<long double>(v[0]);
  };
  (void)eval(inputs);
  const std::vector<Tensor> analytic = grad(inputs);
  require(analytic.size() == inputs.size(), "grad_check: one gradient per input required");

  long double worst = 0.0L;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    require(analytic[k].same_shape(inputs[k]), "grad_check: gradient shape mismatch for input " +
                                                   std::to_string(k));
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + eps;
      const long double up = eval(inputs);
      inputs[k][i] = orig - eps;
      const long double down = eval(inputs);
      inputs[k][i] = orig;
      const long double central = (up - down) / (2.0L * static_cast<long double>(eps));
      const long double err = std::fabs(static_cast<long double>(analytic[k][i]) - central) /
                              std::max(1.0L, std::fabs(central));
      worst = std::max(worst, err);
    }
  }
  return static_cast<double>(worst);
}

}  // namespace pkd
