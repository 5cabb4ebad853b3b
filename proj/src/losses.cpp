#include "pkd/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace pkd {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void axpy(Tensor& dst, double a, const Tensor& src) {
  if (dst.empty()) dst = Tensor(src.dims());
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
}

}  // namespace

void Hyper::validate() const {
  require(tau > 0.0, "hyper: tau must be > 0");
  require(epochs >= 1, "hyper: epochs must be >= 1");
  require(lr >= 0.0, "hyper: lr must be >= 0");
  require(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0,
          "hyper: lr_decay_factor must be in (0, 1]");
  require(patience >= 1, "hyper: patience must be >= 1");
  require(predict_weight >= 0.0, "hyper: predict_weight must be >= 0");
}

double Hyper::lr_at(int epoch) const {
  return epoch >= lr_decay_epoch ? lr * lr_decay_factor : lr;
}

LossGrad loss_cls(const Tensor& logits, std::span<const int> labels) {
  require(logits.rank() == 2, "loss_cls: logits must be [T x (M+1)]");
  require(labels.size() == logits.rows(),
          "loss_cls: " + std::to_string(labels.size()) + " labels for " +
              std::to_string(logits.rows()) + " frames");
  const std::size_t frames = logits.rows(), classes = logits.cols();
  const Tensor logp = log_softmax_temp(logits, 1.0);
  LossGrad out;
  Tensor g(logits.dims());
  const double inv = 1.0 / static_cast<double>(frames);
  double total = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    const int y = labels[t];
    require(y >= 0 && static_cast<std::size_t>(y) < classes,
            "loss_cls: label " + std::to_string(y) + " at frame " + std::to_string(t) +
                " outside [0, " + std::to_string(classes - 1) + "]");
    total -= logp.at(t, static_cast<std::size_t>(y));
    for (std::size_t c = 0; c < classes; ++c) g.at(t, c) = std::exp(logp.at(t, c)) * inv;
    g.at(t, static_cast<std::size_t>(y)) -= inv;
  }
  out.value = total * inv;
  out.grads.push_back(std::move(g));
  return out;
}

LossGrad loss_logit_kd(const Tensor& y_student, const Tensor& y_teacher, double tau,
                       KlTarget target) {
  require(tau > 0.0, "loss_logit_kd: tau must be > 0");
  require(y_student.rank() == 2 && y_student.same_shape(y_teacher),
          "loss_logit_kd: shape mismatch " + y_student.shape_string() + " vs " +
              y_teacher.shape_string());
  // P is the target distribution, Q the one being pulled towards it.
  const Tensor& yp = target == KlTarget::Teacher ? y_teacher : y_student;
  const Tensor& yq = target == KlTarget::Teacher ? y_student : y_teacher;
  const Tensor logp = log_softmax_temp(yp, tau);
  const Tensor logq = log_softmax_temp(yq, tau);
  const std::size_t frames = yp.rows(), classes = yp.cols();
  const double scale = tau * tau / static_cast<double>(frames);

  Tensor gp(yp.dims()), gq(yq.dims());
  double total = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    double kl = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double pc = std::exp(logp.at(t, c));
      kl += pc * (logp.at(t, c) - logq.at(t, c));
    }
    total += kl;
    for (std::size_t c = 0; c < classes; ++c) {
      const double pc = std::exp(logp.at(t, c));
      const double qc = std::exp(logq.at(t, c));
      // d KL / d(yq/tau) = q - p ; d KL / d(yp/tau) = p (log p - log q - KL)
      gq.at(t, c) = scale / tau * (qc - pc);
      gp.at(t, c) = scale / tau * pc * (logp.at(t, c) - logq.at(t, c) - kl);
    }
  }
  LossGrad out;
  out.value = total * scale;
  if (target == KlTarget::Teacher) {
    out.grads.push_back(std::move(gq));
    out.grads.push_back(std::move(gp));
  } else {
    out.grads.push_back(std::move(gp));
    out.grads.push_back(std::move(gq));
  }
  return out;
}

LossGrad loss_an(std::span<const FeaturePair> pairs, int p, WindowMode mode) {
  require(!pairs.empty(), "loss_an: no feature pairs");
  require(p >= 0, "loss_an: window p must be >= 0");
  LossGrad out;
  const std::size_t frames = pairs.front().student->rows();
  for (std::size_t l = 0; l < pairs.size(); ++l) {
    const Tensor& s = *pairs[l].student;
    const Tensor& g = *pairs[l].teacher;
    require(s.rank() == 2 && g.rank() == 2 && s.rows() == frames && g.rows() == frames,
            "loss_an: layer " + std::to_string(l + 1) + " frame count mismatch");
    require(s.cols() == g.cols(), "loss_an: layer " + std::to_string(l + 1) +
                                      " channel mismatch: student " + std::to_string(s.cols()) +
                                      " vs teacher " + std::to_string(g.cols()));
    const std::size_t ch = s.cols();
    const bool final_layer = l + 1 == pairs.size();
    const int window = final_layer ? 0 : p;
    const double norm = 1.0 / (static_cast<double>(frames) * static_cast<double>(ch));

    Tensor gs(s.dims()), gg(g.dims());
    std::vector<double> target(ch);
    double sum = 0.0;
    for (std::size_t t = 0; t < frames; ++t) {
      const std::size_t last = std::min(frames - 1, t + static_cast<std::size_t>(window));
      const double div = mode == WindowMode::ZeroPad ? static_cast<double>(window + 1)
                                                     : static_cast<double>(last - t + 1);
      std::fill(target.begin(), target.end(), 0.0);
      for (std::size_t u = t; u <= last; ++u)
        for (std::size_t c = 0; c < ch; ++c) target[c] += g.at(u, c);
      for (std::size_t c = 0; c < ch; ++c) {
        target[c] /= div;
        const double diff = s.at(t, c) - target[c];
        sum += diff * diff;
        const double d = 2.0 * norm * diff;
        gs.at(t, c) += d;
        for (std::size_t u = t; u <= last; ++u) gg.at(u, c) -= d / div;
      }
    }
    out.value += sum * norm;
    out.grads.push_back(std::move(gs));
    out.grads.push_back(std::move(gg));
  }
  return out;
}

TotalLoss loss_total(const ModelSpec& student_spec, const ForwardTrace& student,
                     const ModelSpec& teacher_spec, const ForwardTrace& teacher,
                     std::span<const int> labels, const Hyper& hyper, int p,
                     const KdOptions& opts) {
  require(student.frames() == teacher.frames(), "loss_total: student/teacher frame mismatch");
  TotalLoss out;
  out.student = TraceGrads::for_layers(student_spec.layers);
  out.teacher = TraceGrads::for_layers(teacher_spec.layers);

  LossGrad cs = loss_cls(student.logits, labels);
  LossGrad ct = loss_cls(teacher.logits, labels);
  out.cls_student = cs.value;
  out.cls_teacher = ct.value;
  out.student.logits = std::move(cs.grads[0]);
  out.teacher.logits = std::move(ct.grads[0]);

  LossGrad kd = loss_logit_kd(student.logits, teacher.logits, hyper.tau, opts.kl_target);
  out.logit_kd = kd.value;
  if (hyper.lambda != 0.0) {
    axpy(out.student.logits, hyper.lambda, kd.grads[0]);
    axpy(out.teacher.logits, hyper.lambda, kd.grads[1]);
  }

  if (student_spec.has_aux()) {
    require(student_spec.layers == teacher_spec.layers,
            "loss_total: auxiliary-node loss needs equal layer counts");
    std::vector<FeaturePair> pairs;
    for (int l = 1; l <= student_spec.layers; ++l) {
      const bool use_main = l == 1 && opts.layer1_main_target;
      pairs.push_back({use_main ? &student.h(l) : &student.aux_target(l), &teacher.g(l)});
    }
    LossGrad an = loss_an(pairs, p, opts.window);
    out.an = an.value;
    if (hyper.alpha != 0.0) {
      for (int l = 1; l <= student_spec.layers; ++l) {
        const auto i = static_cast<std::size_t>(l - 1);
        const bool use_main = l == 1 && opts.layer1_main_target;
        Tensor& sg = use_main ? out.student.main[i] : out.student.aux[i];
        axpy(sg, hyper.alpha, an.grads[2 * i]);
        axpy(out.teacher.main[i], hyper.alpha, an.grads[2 * i + 1]);
      }
    }
  }
  out.value = out.cls_student + out.cls_teacher + hyper.lambda * out.logit_kd + hyper.alpha * out.an;
  return out;
}

LossGrad loss_predict(const Tensor& x_hat, const Tensor& x, int horizon, WindowMode mode) {
  require(horizon >= 1, "loss_predict: P must be >= 1, got " + std::to_string(horizon));
  require(x_hat.rank() == 2 && x_hat.same_shape(x),
          "loss_predict: shape mismatch " + x_hat.shape_string() + " vs " + x.shape_string());
  const std::size_t frames = x.rows(), dim = x.cols();
  const auto P = static_cast<std::size_t>(horizon);

  std::size_t valid = 0;
  for (std::size_t t = 0; t < frames; ++t)
    if (mode == WindowMode::ZeroPad || t + 1 < frames) ++valid;
  LossGrad out;
  Tensor g(x_hat.dims());
  if (valid == 0) {
    out.grads.push_back(std::move(g));
    return out;
  }
  const double norm = 1.0 / (static_cast<double>(valid) * static_cast<double>(dim));
  std::vector<double> target(dim);
  double sum = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    if (mode == WindowMode::Clip && t + 1 >= frames) continue;
    const std::size_t last = std::min(frames - 1, t + P);
    const double div =
        mode == WindowMode::ZeroPad ? static_cast<double>(P) : static_cast<double>(last - t);
    std::fill(target.begin(), target.end(), 0.0);
    for (std::size_t u = t + 1; u <= last; ++u)
      for (std::size_t c = 0; c < dim; ++c) target[c] += x.at(u, c);
    for (std::size_t c = 0; c < dim; ++c) {
      const double diff = x_hat.at(t, c) - target[c] / div;
      sum += diff * diff;
      g.at(t, c) = 2.0 * norm * diff;
    }
  }
  out.value = sum * norm;
  out.grads.push_back(std::move(g));
  return out;
}

}  // namespace pkd
