#include "pkd/receptive.hpp"

#include <string>

namespace pkd {

Interval receptive_field(std::span<const LayerGeom> layers, int t) {
  if (layers.empty()) throw std::invalid_argument("receptive_field: empty layer list");
  Interval r{t, t};
  for (const LayerGeom& g : layers) {
    if (g.past < 0 || g.future < 0)
      throw std::invalid_argument("receptive_field: negative kernel extent");
    r.lo -= g.past;
    r.hi += g.future;
  }
  return r;
}

Interval set_receptive_field(std::span<const LayerGeom> layers, int t_lo, int t_hi) {
  if (t_lo > t_hi)
    throw std::invalid_argument("set_receptive_field: t_lo=" + std::to_string(t_lo) +
                                " > t_hi=" + std::to_string(t_hi));
  // Each per-t field is a translate of the same interval, so the union is
  // contiguous and spans the two extremes.
  return {receptive_field(layers, t_lo).lo, receptive_field(layers, t_hi).hi};
}

int alignment_window(int teacher_future) {
  if (teacher_future < 0) throw std::invalid_argument("alignment_window: k must be >= 0");
  return teacher_future;
}

std::vector<LayerGeom> uniform_stack(int layers, int past, int future) {
  return std::vector<LayerGeom>(static_cast<std::size_t>(layers), LayerGeom{past, future});
}

}  // namespace pkd
