#pragma once

#include <span>
#include <string>
#include <vector>

#include "pkd/tensor.hpp"

namespace pkd {

/// Ranked-list AP: frames sorted by descending score (ties by index),
/// AP = (1/P) * sum_k Prec(k) * I(k). Requires at least one positive.
double average_precision(std::span<const double> scores, std::span<const bool> positives);

/// AP with calibrated precision TP / (TP + FP / omega).
double calibrated_ap(std::span<const double> scores, std::span<const bool> positives,
                     double omega);

struct ClassResult {
  int label = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double ap = 0.0;     // [0, 1]
  double cap = 0.0;    // [0, 1]
  double omega = 0.0;  // negatives / positives
};

struct EvalReport {
  std::size_t frames = 0;
  std::vector<ClassResult> classes;   // classes with at least one positive
  std::vector<int> skipped_classes;   // classes absent from the ground truth
  double map = 0.0;   // percent
  double mcap = 0.0;  // percent
  /// Per-portion mcAP in percent; NaN where a bin has no positives.
  std::vector<double> portion_mcap;

  std::string to_json() const;
  std::string to_csv() const;
};

/// frame_scores [F x (M+1)], labels in [0, M]. Per action class m >= 1,
/// positives are frames labelled m and everything else is negative.
EvalReport evaluate(const Tensor& frame_scores, std::span<const int> labels);

/// A maximal run of one non-zero label.
struct Instance {
  std::size_t begin = 0;
  std::size_t length = 0;
  int label = 0;
};

/// Instances in a concatenated label stream. Runs never merge across the
/// boundaries listed in `sequence_starts` (frame offsets of each sequence).
std::vector<Instance> find_instances(std::span<const int> labels,
                                     std::span<const std::size_t> sequence_starts = {});

struct PortionOptions {
  int bins = 10;
  /// Count action frames of other portions as negatives instead of dropping them.
  bool include_other_portions = false;
};

/// mcAP (percent) for each relative-position portion of the action instances.
/// Frame j of an n-frame instance falls in portion floor(j * bins / n).
std::vector<double> portion_eval(const Tensor& frame_scores, std::span<const int> labels,
                                 const PortionOptions& opts = {},
                                 std::span<const std::size_t> sequence_starts = {});

}  // namespace pkd
