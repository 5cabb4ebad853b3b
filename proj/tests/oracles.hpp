#pragma once

// Brute-force reference implementations of the ranking metrics, shared by the
// unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <vector>

#include "pkd/tensor.hpp"

namespace testing {

// Counts TP/FP afresh at every rank; ties resolved by frame index.
inline double brute_cap(const std::vector<double>& scores, const std::vector<bool>& pos, double omega) {
  const std::size_t F = scores.size();
  std::vector<std::size_t> order;
  std::vector<bool> used(F, false);
  for (std::size_t k = 0; k < F; ++k) {
    std::size_t best = F;
    for (std::size_t i = 0; i < F; ++i)
      if (!used[i] && (best == F || scores[i] > scores[best])) best = i;
    used[best] = true;
    order.push_back(best);
  }
  double total = 0.0;
  std::size_t P = 0;
  for (bool b : pos) P += b;
  for (std::size_t k = 0; k < F; ++k) {
    if (!pos[order[k]]) continue;
    double tp = 0, fp = 0;
    for (std::size_t j = 0; j <= k; ++j) (pos[order[j]] ? tp : fp) += 1;
    total += tp / (tp + fp / omega);
  }
  return total / static_cast<double>(P);
}

struct Brute {
  double map = 0, mcap = 0;
  std::size_t classes = 0;
};

inline Brute brute_eval(const pkd::Tensor& s, const std::vector<int>& labels) {
  Brute b;
  const std::size_t F = labels.size();
  for (std::size_t m = 1; m < s.cols(); ++m) {
    std::vector<double> col(F);
    std::vector<bool> pos(F);
    std::size_t np = 0;
    for (std::size_t t = 0; t < F; ++t) {
      col[t] = s.at(t, m);
      pos[t] = labels[t] == static_cast<int>(m);
      np += pos[t];
    }
    if (np == 0) continue;
    ++b.classes;
    b.map += brute_cap(col, pos, 1.0);
    b.mcap += np == F ? 1.0 : brute_cap(col, pos, static_cast<double>(F - np) / static_cast<double>(np));
  }
  b.map *= 100.0 / static_cast<double>(b.classes);
  b.mcap *= 100.0 / static_cast<double>(b.classes);
  return b;
}

// Per-bin mcAP with the portion membership worked out instance by instance.
inline std::vector<double> brute_portions(const pkd::Tensor& s, const std::vector<int>& labels, int bins,
                                   bool include_other) {
  const std::size_t F = labels.size();
  std::vector<int> bin(F, -1);
  for (std::size_t t = 0; t < F;) {
    if (labels[t] == 0) {
      ++t;
      continue;
    }
    std::size_t e = t;
    while (e < F && labels[e] == labels[t]) ++e;
    const std::size_t n = e - t;
    for (std::size_t j = 0; j < n; ++j) bin[t + j] = static_cast<int>((j * static_cast<std::size_t>(bins)) / n);
    t = e;
  }
  std::vector<double> out;
  for (int b = 0; b < bins; ++b) {
    double sum = 0.0;
    int classes = 0;
    for (std::size_t m = 1; m < s.cols(); ++m) {
      std::vector<double> col;
      std::vector<bool> pos;
      for (std::size_t t = 0; t < F; ++t) {
        const bool action = labels[t] != 0;
        if (action && bin[t] != b && !include_other) continue;
        col.push_back(s.at(t, m));
        pos.push_back(labels[t] == static_cast<int>(m) && bin[t] == b);
      }
      const auto np = static_cast<std::size_t>(std::count(pos.begin(), pos.end(), true));
      if (np == 0) continue;
      ++classes;
      const std::size_t nn = pos.size() - np;
      sum += nn == 0 ? 1.0 : brute_cap(col, pos, static_cast<double>(nn) / static_cast<double>(np));
    }
    out.push_back(classes == 0 ? std::nan("") : 100.0 * sum / classes);
  }
  return out;
}

}  // namespace testing
