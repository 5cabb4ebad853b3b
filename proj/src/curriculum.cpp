#include "pkd/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "pkd/rng.hpp"

namespace pkd {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

struct LoopHooks {
  /// One optimization step on one sequence; adds its loss terms to `sums`.
  std::function<void(const Sequence&, double lr, TrainLogRecord& sums)> step;
  std::function<double()> holdout_metric;
  std::function<void()> snapshot;
  std::function<void()> restore;
};

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, "shuffle", static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

TrainLog run_loop(const Hyper& hyper, const std::string& stage, const SequenceSet& train,
                  const LoopHooks& hooks) {
  hyper.validate();
  require(!train.sequences.empty(), "training: empty dataset");
  TrainLog log;
  double best = -INFINITY, plateau_ref = -INFINITY;
  int since = 0;
  const double n = static_cast<double>(train.sequences.size());
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    TrainLogRecord rec;
    rec.stage = stage;
    rec.epoch = epoch;
    rec.lr = hyper.lr_at(epoch);
    for (std::size_t idx : epoch_order(train.sequences.size(), hyper.seed, epoch))
      hooks.step(train.sequences[idx], rec.lr, rec);
    rec.loss_cls_s /= n;
    rec.loss_cls_t /= n;
    rec.loss_l /= n;
    rec.loss_an /= n;
    rec.loss_predict /= n;
    rec.holdout_metric = hooks.holdout_metric ? hooks.holdout_metric() : std::nan("");
    log.records.push_back(rec);
    if (!hooks.holdout_metric) {
      log.best_epoch = epoch;
      continue;
    }
    if (rec.holdout_metric > best) {
      best = rec.holdout_metric;
      log.best_epoch = epoch;
      hooks.snapshot();
    }
    if (rec.holdout_metric > plateau_ref + hyper.min_delta) {
      plateau_ref = rec.holdout_metric;
      since = 0;
    } else if (++since >= hyper.patience) {
      break;
    }
  }
  if (hooks.holdout_metric) hooks.restore();
  return log;
}

double holdout_map(const ModelSpec& spec, const ParamSet& params, const SequenceSet& data) {
  return evaluate_model(Checkpoint{spec, params}, data).map;
}

void check_data(const ModelSpec& spec, const SequenceSet& data, const char* what) {
  require(data.input_dim == spec.input_dim,
          std::string(what) + " data has D=" + std::to_string(data.input_dim) + " but model " +
              spec.name() + " expects D=" + std::to_string(spec.input_dim));
  require(data.num_classes == spec.num_classes,
          std::string(what) + " data has M=" + std::to_string(data.num_classes) + " but model " +
              spec.name() + " expects M=" + std::to_string(spec.num_classes));
}

TrainResult train_classifier(const ModelSpec& spec, ParamSet params, const SequenceSet& train,
                             const SequenceSet* holdout, const Hyper& hyper,
                             const std::string& stage, int horizon) {
  check_data(spec, train, "training");
  if (holdout) check_data(spec, *holdout, "held-out");
  AdamState adam;
  ParamSet best = params;
  LoopHooks hooks;
  hooks.step = [&](const Sequence& seq, double lr, TrainLogRecord& sums) {
    const ForwardTrace tr = forward(params, spec, seq.features);
    LossGrad cls = loss_cls(tr.logits, seq.labels);
    TraceGrads grads = TraceGrads::for_layers(spec.layers);
    grads.logits = std::move(cls.grads[0]);
    sums.loss_cls_s += cls.value;
    if (spec.role == Role::Anticipator) {
      LossGrad pred = loss_predict(tr.predicted, seq.features, horizon);
      sums.loss_predict += pred.value;
      grads.predicted = std::move(pred.grads[0]);
      for (double& g : grads.predicted.data()) g *= hyper.predict_weight;
    }
    params.zero_grad();
    backward(spec, params, tr, grads);
    adam_step(params, adam, AdamConfig{lr});
  };
  if (holdout) {
    hooks.holdout_metric = [&] { return holdout_map(spec, params, *holdout); };
    hooks.snapshot = [&] { best = params; };
    hooks.restore = [&] { params = best; };
  }
  TrainLog log = run_loop(hyper, stage, train, hooks);
  return {Checkpoint::make(spec, std::move(params)), std::move(log)};
}

}  // namespace

std::string TrainLog::to_jsonl() const {
  std::string out;
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  for (const auto& r : records) {
    nlohmann::json j = {{"stage", r.stage},
                        {"epoch", r.epoch},
                        {"lr", r.lr},
                        {"loss_cls_s", r.loss_cls_s},
                        {"loss_cls_t", r.loss_cls_t},
                        {"loss_l", r.loss_l},
                        {"loss_an", r.loss_an},
                        {"holdout_metric", num(r.holdout_metric)}};
    if (r.loss_predict != 0.0) j["loss_predict"] = r.loss_predict;
    out += j.dump() + "\n";
  }
  return out;
}

Tensor predict_scores(const Checkpoint& model, const SequenceSet& data) {
  check_data(model.spec, data, "evaluation");
  Tensor scores = Tensor::matrix(std::max<std::size_t>(1, data.total_frames()),
                                 static_cast<std::size_t>(model.spec.outputs()));
  std::size_t off = 0;
  for (const auto& seq : data.sequences) {
    const ForwardTrace tr = forward(model.params, model.spec, seq.features);
    const Tensor p = softmax_temp(tr.logits, 1.0);
    std::copy(p.data().begin(), p.data().end(), scores.row(off).begin());
    off += p.rows();
  }
  return scores;
}

EvalReport evaluate_model(const Checkpoint& model, const SequenceSet& data) {
  return evaluate(predict_scores(model, data), data.all_labels());
}

TrainResult train_single(const ModelSpec& spec, const SequenceSet& train,
                         const SequenceSet* holdout, const Hyper& hyper, const std::string& stage) {
  require(spec.role != Role::Anticipator, "train_single: use train_anticipator for role A");
  return train_classifier(spec, init_params(spec, hyper.seed), train, holdout, hyper, stage, 0);
}

TrainResult train_resume(const Checkpoint& init, const SequenceSet& train,
                         const SequenceSet* holdout, const Hyper& hyper, const std::string& stage) {
  require(init.spec.role != Role::Anticipator, "train_resume: anticipator checkpoints unsupported");
  return train_classifier(init.spec, init.params, train, holdout, hyper, stage, 0);
}

TrainResult train_anticipator(const ModelSpec& spec, const SequenceSet& train,
                              const SequenceSet* holdout, const Hyper& hyper, int horizon,
                              const std::string& stage) {
  require(spec.role == Role::Anticipator, "train_anticipator: spec must have role A");
  require(horizon >= 1, "train_anticipator: P must be >= 1, got " + std::to_string(horizon));
  return train_classifier(spec, init_params(spec, hyper.seed), train, holdout, hyper, stage,
                          horizon);
}

StageResult distill_stage(const Checkpoint& student, const Checkpoint& teacher,
                          const SequenceSet& train, const SequenceSet* holdout,
                          const Hyper& hyper, const KdOptions& opts, const std::string& stage) {
  const ModelSpec& ss = student.spec;
  const ModelSpec& ts = teacher.spec;
  require(ts.role == Role::Teacher, "distill_stage: teacher checkpoint " + ts.name() +
                                        " does not have the teacher role");
  require(ss.role == Role::Student || (ss.role == Role::Teacher && ss.k != ts.k),
          "distill_stage: cannot distill " + ts.name() + " into " + ss.name());
  require(ss.input_dim == ts.input_dim && ss.num_classes == ts.num_classes,
          "distill_stage: " + ss.name() + " and " + ts.name() + " disagree on D or M");
  if (ss.has_aux()) {
    require(ss.channels == ts.channels && ss.layers == ts.layers,
            "distill_stage: auxiliary nodes of " + ss.name() + " (C=" +
                std::to_string(ss.channels) + ") cannot match " + ts.name() + " features (C=" +
                std::to_string(ts.channels) + ")");
  }
  check_data(ss, train, "training");
  if (holdout) check_data(ss, *holdout, "held-out");

  const int p = alignment_window(ts.k);
  ParamSet sp = student.params, tp = teacher.params;
  ParamSet best_s = sp, best_t = tp;
  AdamState adam_s, adam_t;
  LoopHooks hooks;
  hooks.step = [&](const Sequence& seq, double lr, TrainLogRecord& sums) {
    const ForwardTrace st = forward(sp, ss, seq.features);
    const ForwardTrace tt = forward(tp, ts, seq.features);
    const TotalLoss loss = loss_total(ss, st, ts, tt, seq.labels, hyper, p, opts);
    sums.loss_cls_s += loss.cls_student;
    sums.loss_cls_t += loss.cls_teacher;
    sums.loss_l += loss.logit_kd;
    sums.loss_an += loss.an;
    sp.zero_grad();
    tp.zero_grad();
    backward(ss, sp, st, loss.student);
    backward(ts, tp, tt, loss.teacher);
    adam_step(sp, adam_s, AdamConfig{lr});
    adam_step(tp, adam_t, AdamConfig{lr});
  };
  if (holdout) {
    hooks.holdout_metric = [&] { return holdout_map(ss, sp, *holdout); };
    hooks.snapshot = [&] {
      best_s = sp;
      best_t = tp;
    };
    hooks.restore = [&] {
      sp = best_s;
      tp = best_t;
    };
  }
  TrainLog log = run_loop(hyper, stage, train, hooks);
  return {Checkpoint::make(ss, std::move(sp)), Checkpoint::make(ts, std::move(tp)), std::move(log)};
}

// ---------------------------------------------------------------------------

KdPath KdPath::parse(const std::string& text) {
  std::vector<std::string> tokens;
  std::vector<std::size_t> offsets;
  std::size_t pos = 0;
  while (true) {
    std::size_t sep = text.find('>', pos);
    std::size_t end = sep == std::string::npos ? text.size() : sep;
    std::size_t tok_end = end;
    if (sep != std::string::npos && sep > pos && text[sep - 1] == '-') tok_end = sep - 1;
    std::string tok = text.substr(pos, tok_end - pos);
    const auto b = tok.find_first_not_of(" \t");
    const auto e = tok.find_last_not_of(" \t");
    tok = b == std::string::npos ? "" : tok.substr(b, e - b + 1);
    if (tok.empty())
      throw std::invalid_argument("kd path '" + text + "': empty model name at position " +
                                  std::to_string(tokens.size() + 1) + " (offset " +
                                  std::to_string(pos) + ")");
    const bool known = tok == "S" || tok == "T1" || tok == "T2" || tok == "T3" || tok == "T4";
    if (!known)
      throw std::invalid_argument("kd path '" + text + "': unknown model '" + tok +
                                  "' at position " + std::to_string(tokens.size() + 1) +
                                  " (offset " + std::to_string(pos) + "); expected S or T1..T4");
    tokens.push_back(tok);
    offsets.push_back(pos);
    if (sep == std::string::npos) break;
    pos = sep + 1;
  }
  if (tokens.size() < 2)
    throw std::invalid_argument("kd path '" + text + "': needs at least two models");
  KdPath path;
  path.models = tokens;
  const auto s_count = std::count(tokens.begin(), tokens.end(), "S");
  if (tokens.front() == "S") {
    path.direction = Direction::Curriculum;
  } else if (tokens.back() == "S") {
    path.direction = Direction::Takd;
  } else {
    throw std::invalid_argument("kd path '" + text + "': must start with S (curriculum) or end "
                                "with S (teacher chain)");
  }
  if (s_count != 1) {
    for (std::size_t i = 1; i + 1 < tokens.size(); ++i)
      if (tokens[i] == "S")
        throw std::invalid_argument("kd path '" + text + "': S may only appear at one end (position " +
                                    std::to_string(i + 1) + ", offset " +
                                    std::to_string(offsets[i]) + ")");
    throw std::invalid_argument("kd path '" + text + "': S must appear exactly once");
  }
  for (std::size_t i = 1; i < tokens.size(); ++i)
    if (tokens[i] == tokens[i - 1])
      throw std::invalid_argument("kd path '" + text + "': repeated model '" + tokens[i] +
                                  "' at position " + std::to_string(i + 1) + " (offset " +
                                  std::to_string(offsets[i]) + ")");
  return path;
}

std::string KdPath::str() const {
  std::string s;
  for (std::size_t i = 0; i < models.size(); ++i) s += (i ? ">" : "") + models[i];
  return s;
}

ModelSpec spec_for(const std::string& id, int input_dim, int num_classes, int channels,
                   int aux_channels) {
  if (id == "S") {
    ModelSpec s = ModelSpec::student(input_dim, num_classes, channels);
    s.aux_channels = aux_channels;
    return s;
  }
  if (id == "A") {
    ModelSpec s = ModelSpec::anticipator(input_dim, num_classes, channels);
    s.aux_channels = aux_channels;
    return s;
  }
  if (id.size() == 2 && id[0] == 'T' && id[1] >= '1' && id[1] <= '4')
    return ModelSpec::teacher(id[1] - '0', input_dim, num_classes, channels);
  throw std::invalid_argument("unknown model identifier '" + id + "'");
}

PathResult run_path(const KdPath& path, const PretrainedProvider& pretrained,
                    const SequenceSet& train, const SequenceSet* holdout, const Hyper& hyper,
                    const KdOptions& opts) {
  PathResult out;
  auto stage_hyper = [&](std::size_t i) {
    Hyper h = hyper;
    h.seed = derive_seed(hyper.seed, "stage", i);
    return h;
  };
  if (path.direction == KdPath::Direction::Curriculum) {
    Checkpoint s = pretrained("S");
    for (std::size_t i = 1; i < path.models.size(); ++i) {
      const Checkpoint t = pretrained(path.models[i]);
      const std::string link = path.models[i] + "->S";
      StageResult r = distill_stage(s, t, train, holdout, stage_hyper(i - 1), opts, link);
      s = std::move(r.student);
      out.logs.push_back(std::move(r.log));
      out.links.push_back(link);
    }
    out.student = std::move(s);
  } else {
    Checkpoint teacher = pretrained(path.models.front());
    for (std::size_t i = 1; i < path.models.size(); ++i) {
      const Checkpoint student = pretrained(path.models[i]);
      const std::string link = path.models[i - 1] + "->" + path.models[i];
      StageResult r = distill_stage(student, teacher, train, holdout, stage_hyper(i - 1), opts, link);
      out.logs.push_back(std::move(r.log));
      out.links.push_back(link);
      if (i + 1 == path.models.size()) {
        out.student = std::move(r.student);
      } else {
        teacher = std::move(r.student);
      }
    }
  }
  return out;
}

double gap_reduction(double baseline, double distilled, double teacher) {
  require(teacher > baseline, "gap_reduction: teacher score must exceed baseline");
  return 100.0 * (distilled - baseline) / (teacher - baseline);
}

}  // namespace pkd
