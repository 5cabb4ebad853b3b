#pragma once

#include <memory>
#include <span>
#include <vector>

#include "pkd/models.hpp"

namespace pkd {

/// Frame-by-frame student inference with fixed-size history buffers.
///
/// Layer l keeps the last `past_extent` rows of its input (x for layer 1,
/// [h | a] above); buffers start zeroed, matching the batch zero padding.
class StreamSession {
 public:
  /// Rejects anything but a student checkpoint.
  explicit StreamSession(std::shared_ptr<const Checkpoint> model);

  /// Logits for the next frame.
  std::vector<double> push_frame(std::span<const double> frame);
  void reset();

  std::size_t frames_seen() const { return frames_; }
  const ModelSpec& spec() const { return model_->spec; }
  /// Bytes held by the history buffers.
  std::size_t state_bytes() const;
  /// Total buffer rows; fixed at construction.
  std::size_t buffer_capacity() const;

 private:
  struct Layer {
    std::size_t width = 0;      // input width
    std::size_t outputs = 0;    // C + aux width
    std::size_t head = 0;       // slot of the oldest row
    std::vector<double> rows;   // past_extent * width, ring buffer
    // [h | a] kernels flattened to outputs x ((past_extent + 1) * width),
    // column index = tap * width + channel, oldest tap first.
    std::vector<double> weight;
    std::vector<double> bias;
  };

  std::shared_ptr<const Checkpoint> model_;
  std::vector<Layer> layers_;
  std::size_t frames_ = 0;
  std::vector<double> window_;  // scratch, (past_extent + 1) * max width
  std::vector<double> input_, output_;
};

StreamSession create_session(std::shared_ptr<const Checkpoint> model);

}  // namespace pkd
