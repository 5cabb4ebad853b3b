#include "pkd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace pkd {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::vector<std::size_t> ranking(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// Shared rank walk; omega == 1 gives plain precision.
double ranked_ap(std::span<const double> scores, std::span<const bool> positives, double omega) {
  require(scores.size() == positives.size(), "average_precision: scores/positives size mismatch");
  const auto total = static_cast<std::size_t>(std::count(positives.begin(), positives.end(), true));
  require(total > 0, "average_precision: no positive frames");
  double tp = 0.0, fp = 0.0, sum = 0.0;
  for (std::size_t idx : ranking(scores)) {
    if (positives[idx]) {
      tp += 1.0;
      sum += tp / (tp + fp / omega);
    } else {
      fp += 1.0;
    }
  }
  return sum / static_cast<double>(total);
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const bool> positives) {
  return ranked_ap(scores, positives, 1.0);
}

double calibrated_ap(std::span<const double> scores, std::span<const bool> positives,
                     double omega) {
  require(omega > 0.0 && std::isfinite(omega), "calibrated_ap: omega must be > 0");
  return ranked_ap(scores, positives, omega);
}

EvalReport evaluate(const Tensor& frame_scores, std::span<const int> labels) {
  require(frame_scores.rank() == 2, "evaluate: scores must be [F x (M+1)]");
  require(frame_scores.rows() == labels.size(),
          "evaluate: " + std::to_string(labels.size()) + " labels for " +
              std::to_string(frame_scores.rows()) + " score rows");
  const std::size_t frames = labels.size();
  const int classes = static_cast<int>(frame_scores.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
  for (std::size_t t = 0; t < frames; ++t) {
    require(labels[t] >= 0 && labels[t] < classes,
            "evaluate: label " + std::to_string(labels[t]) + " at frame " + std::to_string(t) +
                " outside [0, " + std::to_string(classes - 1) + "]");
    ++counts[static_cast<std::size_t>(labels[t])];
  }
  require(frames > counts[0], "evaluate: no action frames in the ground truth");

  EvalReport rep;
  rep.frames = frames;
  std::vector<double> col(frames);
  for (int m = 1; m < classes; ++m) {
    const std::size_t npos = counts[static_cast<std::size_t>(m)];
    if (npos == 0) {
      rep.skipped_classes.push_back(m);
      continue;
    }
    auto pos = std::make_unique<bool[]>(frames);
    for (std::size_t t = 0; t < frames; ++t) {
      col[t] = frame_scores.at(t, static_cast<std::size_t>(m));
      pos[t] = labels[t] == m;
    }
    std::span<const bool> ps(pos.get(), frames);
    ClassResult r;
    r.label = m;
    r.positives = npos;
    r.negatives = frames - npos;
    r.omega = static_cast<double>(r.negatives) / static_cast<double>(npos);
    r.ap = average_precision(col, ps);
    // With no negatives omega is zero and cPrec is 1 at every hit.
    r.cap = r.negatives == 0 ? 1.0 : calibrated_ap(col, ps, r.omega);
    rep.classes.push_back(r);
  }
  double ap_sum = 0.0, cap_sum = 0.0;
  for (const auto& r : rep.classes) {
    ap_sum += r.ap;
    cap_sum += r.cap;
  }
  const auto n = static_cast<double>(rep.classes.size());
  rep.map = 100.0 * ap_sum / n;
  rep.mcap = 100.0 * cap_sum / n;
  return rep;
}

std::vector<Instance> find_instances(std::span<const int> labels,
                                     std::span<const std::size_t> sequence_starts) {
  std::vector<bool> boundary(labels.size() + 1, false);
  for (std::size_t s : sequence_starts)
    if (s < boundary.size()) boundary[s] = true;
  std::vector<Instance> out;
  std::size_t t = 0;
  while (t < labels.size()) {
    if (labels[t] == 0) {
      ++t;
      continue;
    }
    Instance inst{t, 1, labels[t]};
    while (t + inst.length < labels.size() && labels[t + inst.length] == inst.label &&
           !boundary[t + inst.length])
      ++inst.length;
    out.push_back(inst);
    t += inst.length;
  }
  return out;
}

std::vector<double> portion_eval(const Tensor& frame_scores, std::span<const int> labels,
                                 const PortionOptions& opts,
                                 std::span<const std::size_t> sequence_starts) {
  require(opts.bins >= 1, "portion_eval: bins must be >= 1");
  require(frame_scores.rank() == 2 && frame_scores.rows() == labels.size(),
          "portion_eval: scores/labels size mismatch");
  const auto instances = find_instances(labels, sequence_starts);
  require(!instances.empty(), "portion_eval: no action instances");

  const std::size_t frames = labels.size();
  const auto bins = static_cast<std::size_t>(opts.bins);
  std::vector<int> bin_of(frames, -1);
  for (const Instance& inst : instances)
    for (std::size_t j = 0; j < inst.length; ++j)
      bin_of[inst.begin + j] = static_cast<int>(j * bins / inst.length);

  std::vector<double> out;
  for (std::size_t b = 0; b < bins; ++b) {
    std::vector<std::size_t> keep;
    std::vector<int> sub_labels;
    bool any_pos = false;
    for (std::size_t t = 0; t < frames; ++t) {
      const bool in_bin = bin_of[t] == static_cast<int>(b);
      if (labels[t] == 0 || in_bin) {
        keep.push_back(t);
        sub_labels.push_back(labels[t]);
        any_pos |= in_bin;
      } else if (opts.include_other_portions) {
        keep.push_back(t);
        sub_labels.push_back(0);
      }
    }
    if (!any_pos) {
      out.push_back(std::nan(""));
      continue;
    }
    Tensor sub = Tensor::matrix(keep.size(), frame_scores.cols());
    for (std::size_t i = 0; i < keep.size(); ++i) {
      auto src = frame_scores.row(keep[i]);
      std::copy(src.begin(), src.end(), sub.row(i).begin());
    }
    out.push_back(evaluate(sub, sub_labels).mcap);
  }
  return out;
}

std::string EvalReport::to_json() const {
  using nlohmann::json;
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json j;
  j["frames"] = frames;
  j["mAP"] = map;
  j["mcAP"] = mcap;
  j["omega_scope"] = "per-class: (frames not of class m) / (frames of class m)";
  json cls = json::array();
  for (const auto& r : classes) {
    cls.push_back({{"class", r.label},
                   {"positives", r.positives},
                   {"negatives", r.negatives},
                   {"AP", 100.0 * r.ap},
                   {"cAP", 100.0 * r.cap},
                   {"omega", r.omega}});
  }
  j["classes"] = cls;
  j["skipped_classes"] = skipped_classes;
  if (!portion_mcap.empty()) {
    json p = json::array();
    for (double v : portion_mcap) p.push_back(num(v));
    j["portion_mcAP"] = p;
  }
  return j.dump(2);
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "class,AP,cAP,omega\n";
  for (const auto& r : classes)
    os << r.label << ',' << 100.0 * r.ap << ',' << 100.0 * r.cap << ',' << r.omega << '\n';
  os << "mean," << map << ',' << mcap << ",\n";
  for (std::size_t b = 0; b < portion_mcap.size(); ++b)
    os << "portion" << b << ",," << portion_mcap[b] << ",\n";
  return os.str();
}

}  // namespace pkd
