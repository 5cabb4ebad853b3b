#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pkd/losses.hpp"
#include "pkd/metrics.hpp"
#include "pkd/models.hpp"
#include "pkd/synthgen.hpp"

namespace pkd {

struct TrainLogRecord {
  std::string stage;
  int epoch = 0;
  double lr = 0.0;
  double loss_cls_s = 0.0;
  double loss_cls_t = 0.0;
  double loss_l = 0.0;
  double loss_an = 0.0;
  double loss_predict = 0.0;
  double holdout_metric = 0.0;  // held-out mAP in percent, NaN without a held-out split
};

struct TrainLog {
  std::vector<TrainLogRecord> records;
  int best_epoch = 0;

  /// One JSON object per epoch.
  std::string to_jsonl() const;
};

/// Softmax scores of a model over every frame of `data`, concatenated.
Tensor predict_scores(const Checkpoint& model, const SequenceSet& data);
EvalReport evaluate_model(const Checkpoint& model, const SequenceSet& data);

struct TrainResult {
  Checkpoint model;
  TrainLog log;
};

/// Adam training of one model under the classification loss.
///
/// Sequences are visited one per step in a seed-derived order per epoch.
/// With a held-out split, training stops after `patience` epochs without a
/// `min_delta` improvement in held-out mAP and the best epoch's weights are
/// returned.
TrainResult train_single(const ModelSpec& spec, const SequenceSet& train,
                         const SequenceSet* holdout, const Hyper& hyper,
                         const std::string& stage = "pretrain");

/// Same loop, starting from existing weights.
TrainResult train_resume(const Checkpoint& init, const SequenceSet& train,
                         const SequenceSet* holdout, const Hyper& hyper,
                         const std::string& stage = "resume");

/// Anticipation baseline: a causal predictor head regresses the mean of the
/// next `horizon` input frames and its output is concatenated with x.
TrainResult train_anticipator(const ModelSpec& spec, const SequenceSet& train,
                              const SequenceSet* holdout, const Hyper& hyper, int horizon,
                              const std::string& stage = "anticipate");

struct StageResult {
  Checkpoint student;
  Checkpoint teacher;
  TrainLog log;
};

/// Joint optimization of student and teacher under the combined objective.
///
/// The student may be the causal student or (for chains that end elsewhere)
/// a teacher with a shorter future reach; feature distillation only applies
/// to models with auxiliary nodes.
StageResult distill_stage(const Checkpoint& student, const Checkpoint& teacher,
                          const SequenceSet& train, const SequenceSet* holdout,
                          const Hyper& hyper, const KdOptions& opts = {},
                          const std::string& stage = "distill");

struct KdPath {
  enum class Direction { Curriculum, Takd };
  /// Model identifiers in written order, e.g. {"S","T1","T2"}.
  std::vector<std::string> models;
  Direction direction = Direction::Curriculum;

  /// Parses "S>T1>T2>T3>T4" or "T4>T2>S" ("->" is accepted as a separator).
  static KdPath parse(const std::string& text);
  std::string str() const;
};

/// Model identifier ("S", "T1".."T4", "A") to its model spec.
ModelSpec spec_for(const std::string& id, int input_dim, int num_classes, int channels,
                   int aux_channels = 0);

struct PathResult {
  Checkpoint student;
  std::vector<TrainLog> logs;
  /// "teacher->student" per executed link.
  std::vector<std::string> links;
};

/// Provides the classification-pretrained checkpoint for an identifier.
using PretrainedProvider = std::function<Checkpoint(const std::string&)>;

/// Runs a distillation path. Curriculum: S is carried from stage to stage,
/// each teacher is loaded fresh from its pretraining. TAKD: each link's
/// product becomes the next link's teacher. Stage i trains with the seed
/// derive_seed(hyper.seed, "stage", i).
PathResult run_path(const KdPath& path, const PretrainedProvider& pretrained,
                    const SequenceSet& train, const SequenceSet* holdout, const Hyper& hyper,
                    const KdOptions& opts = {});

/// Share of the baseline-to-teacher gap recovered, in percent.
double gap_reduction(double baseline, double distilled, double teacher);

}  // namespace pkd
