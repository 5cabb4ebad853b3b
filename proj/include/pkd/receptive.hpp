#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace pkd {

/// Kernel extent of one offset-convolution layer around frame t.
struct LayerGeom {
  int past = 0;
  int future = 0;

  int kernel_size() const { return past + future + 1; }
  friend bool operator==(const LayerGeom&, const LayerGeom&) = default;
};

/// Closed integer interval of frame indices.
struct Interval {
  int lo = 0;
  int hi = 0;

  bool contains(int t) const { return lo <= t && t <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Input frames that can influence the stack's output at frame t.
Interval receptive_field(std::span<const LayerGeom> layers, int t);

/// Union of receptive fields over all t in [t_lo, t_hi].
Interval set_receptive_field(std::span<const LayerGeom> layers, int t_lo, int t_hi);

/// Number of future teacher frames averaged when aligning a non-final student
/// layer against a teacher whose layers each look `teacher_future` frames ahead.
int alignment_window(int teacher_future);

/// Per-layer geometry of a stack of `layers` identical (past, future) kernels.
std::vector<LayerGeom> uniform_stack(int layers, int past, int future);

}  // namespace pkd
