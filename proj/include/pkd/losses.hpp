#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pkd/models.hpp"

namespace pkd {

/// Training hyperparameters. Defaults are the published full-scale settings.
struct Hyper {
  double tau = 5.0;
  double lambda = 0.4;
  double alpha = 0.01;
  double lr = 5e-4;
  int lr_decay_epoch = 30;
  double lr_decay_factor = 0.1;
  int epochs = 40;
  std::uint64_t seed = 0;
  /// Early stop on held-out metric plateau.
  int patience = 5;
  double min_delta = 0.05;
  /// Weight of the feature-prediction loss in the anticipation baseline.
  double predict_weight = 1.0;

  void validate() const;
  /// Learning rate for a 1-based epoch.
  double lr_at(int epoch) const;
};

/// Which softened distribution is the KL target in the logit distillation loss.
enum class KlTarget { Teacher, Student };

/// How averaging windows that run past the last frame are handled.
enum class WindowMode {
  ZeroPad,  // missing frames count as zeros, divisor fixed
  Clip,     // average only the frames that exist
};

/// A loss value with gradients on its tensor arguments.
struct LossGrad {
  double value = 0.0;
  std::vector<Tensor> grads;
};

/// Mean per-frame cross-entropy; grads = {d/dlogits}.
LossGrad loss_cls(const Tensor& logits, std::span<const int> labels);

/// (1/T) sum_t tau^2 KL(P_t || Q_t); grads = {d/dy_student, d/dy_teacher}.
LossGrad loss_logit_kd(const Tensor& y_student, const Tensor& y_teacher, double tau,
                       KlTarget target = KlTarget::Teacher);

/// Per-layer feature pairs for the auxiliary-node loss.
struct FeaturePair {
  const Tensor* student;  // a^l (or h^l), [T x C]
  const Tensor* teacher;  // g^l, [T x C]
};

/// Final pair compared frame-aligned; every earlier pair compares the student
/// feature at t with the mean teacher feature over t..t+p. Squared error is
/// averaged over channels, then over frames.
/// grads = {d/dstudent_1, d/dteacher_1, ..., d/dstudent_L, d/dteacher_L}.
LossGrad loss_an(std::span<const FeaturePair> pairs, int p,
                 WindowMode mode = WindowMode::ZeroPad);

/// Options shared by the joint objective.
struct KdOptions {
  KlTarget kl_target = KlTarget::Teacher;
  WindowMode window = WindowMode::ZeroPad;
  /// Distill layer-1 teacher features into h^1 instead of a^1.
  bool layer1_main_target = false;
};

struct TotalLoss {
  double value = 0.0;
  double cls_student = 0.0;
  double cls_teacher = 0.0;
  double logit_kd = 0.0;
  double an = 0.0;
  TraceGrads student;
  TraceGrads teacher;
};

/// L = L_cls(S) + L_cls(T) + lambda * L_L + alpha * L_AN with gradients on both
/// traces. L_AN is only formed when the student model carries auxiliary nodes.
TotalLoss loss_total(const ModelSpec& student_spec, const ForwardTrace& student,
                     const ModelSpec& teacher_spec, const ForwardTrace& teacher,
                     std::span<const int> labels, const Hyper& hyper, int p,
                     const KdOptions& opts = {});

/// Squared error (channel mean, frame mean) between x_hat_t and the mean of the
/// next `horizon` frames of x. grads = {d/dx_hat}.
LossGrad loss_predict(const Tensor& x_hat, const Tensor& x, int horizon,
                      WindowMode mode = WindowMode::ZeroPad);

}  // namespace pkd
