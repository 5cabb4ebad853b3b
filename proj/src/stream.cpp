#include "pkd/stream.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace pkd {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Appends conv weight [Dout x width x taps] as rows of the flattened layout.
void append_rows(const Tensor& w, std::size_t width, std::vector<double>& out) {
  const std::size_t dout = w.dim(0), taps = w.dim(2);
  for (std::size_t o = 0; o < dout; ++o)
    for (std::size_t j = 0; j < taps; ++j)
      for (std::size_t i = 0; i < width; ++i) out.push_back(w.at(o, i, j));
}

}  // namespace

StreamSession::StreamSession(std::shared_ptr<const Checkpoint> model) : model_(std::move(model)) {
  if (!model_) throw std::invalid_argument("stream: null checkpoint");
  const ModelSpec& s = model_->spec;
  if (s.role != Role::Student)
    throw std::invalid_argument("stream: checkpoint " + s.name() +
                                " is not a causal student; teachers are offline-only");
  s.validate();
  const ParamSet& p = model_->params;
  const auto past = static_cast<std::size_t>(s.past_extent);
  std::size_t widest = 0, tallest = 0;
  for (int l = 1; l <= s.layers; ++l) {
    const std::string base = "layer" + std::to_string(l);
    Layer L;
    L.width = static_cast<std::size_t>(s.input_width(l));
    L.outputs = static_cast<std::size_t>(s.channels + s.aux_width());
    L.rows.assign(past * L.width, 0.0);
    for (const char* branch : {".main", ".aux"}) {
      const Tensor& w = p.at(base + branch + ".weight");
      if (w.dim(1) != L.width || w.dim(2) != past + 1)
        throw std::invalid_argument("stream: " + base + branch + ".weight has shape " +
                                    w.shape_string());
      append_rows(w, L.width, L.weight);
      const Tensor& b = p.at(base + branch + ".bias");
      L.bias.insert(L.bias.end(), b.data().begin(), b.data().end());
    }
    widest = std::max(widest, L.width);
    tallest = std::max(tallest, L.outputs);
    layers_.push_back(std::move(L));
  }
  window_.assign((past + 1) * widest, 0.0);
  input_.reserve(std::max(widest, tallest));
  output_.reserve(tallest);
}

void StreamSession::reset() {
  for (auto& L : layers_) {
    std::fill(L.rows.begin(), L.rows.end(), 0.0);
    L.head = 0;
  }
  frames_ = 0;
}

std::size_t StreamSession::buffer_capacity() const {
  std::size_t n = 0;
  for (const auto& L : layers_) n += L.rows.size();
  return n;
}

std::size_t StreamSession::state_bytes() const { return buffer_capacity() * sizeof(double); }

std::vector<double> StreamSession::push_frame(std::span<const double> frame) {
  const ModelSpec& s = model_->spec;
  if (frame.size() != static_cast<std::size_t>(s.input_dim))
    throw std::invalid_argument("stream: frame has " + std::to_string(frame.size()) +
                                " values, model expects D=" + std::to_string(s.input_dim));
  for (double v : frame)
    if (!std::isfinite(v)) throw std::invalid_argument("stream: non-finite input value");

  const auto past = static_cast<std::size_t>(s.past_extent);
  input_.assign(frame.begin(), frame.end());
  for (Layer& L : layers_) {
    const std::size_t w = L.width;
    for (std::size_t r = 0; r < past; ++r) {
      const std::size_t slot = (L.head + r) % past;
      std::copy_n(&L.rows[slot * w], w, &window_[r * w]);
    }
    std::copy_n(input_.data(), w, &window_[past * w]);
    if (past > 0) {
      std::copy_n(input_.data(), w, &L.rows[L.head * w]);
      L.head = (L.head + 1) % past;
    }
    const auto cols = static_cast<Eigen::Index>((past + 1) * w);
    const auto rows = static_cast<Eigen::Index>(L.outputs);
    Eigen::Map<const RowMajor> W(L.weight.data(), rows, cols);
    Eigen::Map<const Eigen::VectorXd> win(window_.data(), cols);
    Eigen::Map<const Eigen::VectorXd> b(L.bias.data(), rows);
    output_.resize(L.outputs);
    Eigen::Map<Eigen::VectorXd> out(output_.data(), rows);
    out.noalias() = W * win + b;
    out = out.cwiseMax(0.0);
    std::swap(input_, output_);
  }

  const Tensor& wc = model_->params.at("classifier.weight");
  const Tensor& bc = model_->params.at("classifier.bias");
  std::vector<double> logits(wc.dim(0));
  Eigen::Map<const RowMajor> Wc(wc.raw(), static_cast<Eigen::Index>(wc.dim(0)),
                                static_cast<Eigen::Index>(wc.dim(1)));
  Eigen::Map<const Eigen::VectorXd> z(input_.data(), static_cast<Eigen::Index>(input_.size()));
  Eigen::Map<const Eigen::VectorXd> bias(bc.raw(), static_cast<Eigen::Index>(bc.size()));
  Eigen::Map<Eigen::VectorXd>(logits.data(), static_cast<Eigen::Index>(logits.size())).noalias() =
      Wc * z + bias;
  ++frames_;
  return logits;
}

StreamSession create_session(std::shared_ptr<const Checkpoint> model) {
  return StreamSession(std::move(model));
}

}  // namespace pkd
