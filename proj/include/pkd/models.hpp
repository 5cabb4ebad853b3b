#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "pkd/numerics.hpp"
#include "pkd/receptive.hpp"

namespace pkd {

/// Checkpoint role tags (stored as u32).
enum class Role : std::uint32_t {
  Student = 0,
  Teacher = 1,
  /// Student fed with [predicted future features | x] from a causal predictor head.
  Anticipator = 2,
};

struct ModelSpec {
  Role role = Role::Student;
  int layers = 2;
  int past_extent = 4;
  /// Future frames seen by every teacher layer (0 for causal roles).
  int k = 0;
  int channels = 32;
  int input_dim = 16;
  /// Number of action classes; logits carry one extra background column.
  int num_classes = 6;
  /// Width of the student's auxiliary branch; 0 means "same as channels".
  /// Not part of the checkpoint header: recovered from tensor dims.
  int aux_channels = 0;

  static ModelSpec student(int input_dim, int num_classes, int channels = 32);
  static ModelSpec teacher(int k, int input_dim, int num_classes, int channels = 32);
  static ModelSpec anticipator(int input_dim, int num_classes, int channels = 32);

  bool has_aux() const { return role != Role::Teacher; }
  bool causal() const { return role != Role::Teacher; }
  int future() const { return role == Role::Teacher ? k : 0; }
  int aux_width() const { return aux_channels > 0 ? aux_channels : channels; }
  bool has_aux_map() const { return has_aux() && aux_width() != channels; }
  /// Feature width entering layer l (1-based) and the classifier (l = layers + 1).
  int input_width(int l) const;
  int outputs() const { return num_classes + 1; }
  std::vector<LayerGeom> geometry() const;
  /// "S", "T1".."T4", "A".
  std::string name() const;

  void validate() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Closed-form number of scalars in a ParamSet built for `spec`.
std::size_t param_count(const ModelSpec& spec);

/// Deterministic init: conv and classifier weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// biases zero.
ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

/// Activations for one sequence. Layer vectors are 0-based (index l-1 for layer l).
struct LayerTrace {
  Tensor input;     // z^{l-1}
  Tensor main_pre;  // pre-activation of h^l (student) or g^l (teacher)
  Tensor main;      // h^l or g^l
  Tensor aux_pre;   // student only
  Tensor aux;       // a^l
  Tensor aux_mapped;  // a^l mapped to teacher width (only with an aux map)
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  Tensor top;  // classifier input z^L
  Tensor logits;
  Tensor predicted;  // x-hat (anticipator only)

  std::size_t frames() const { return logits.rows(); }
  const Tensor& h(int l) const { return layers.at(l - 1).main; }
  const Tensor& g(int l) const { return layers.at(l - 1).main; }
  const Tensor& a(int l) const { return layers.at(l - 1).aux; }
  /// The auxiliary feature compared against teacher features (mapped if needed).
  const Tensor& aux_target(int l) const;
};

/// Gradients arriving at a trace's outputs. Empty tensors mean zero.
struct TraceGrads {
  Tensor logits;
  std::vector<Tensor> main;  // on h^l / g^l, indexed l-1
  std::vector<Tensor> aux;   // on aux_target(l), indexed l-1
  Tensor predicted;          // on x-hat

  static TraceGrads for_layers(int layers) {
    TraceGrads g;
    g.main.resize(static_cast<std::size_t>(layers));
    g.aux.resize(static_cast<std::size_t>(layers));
    return g;
  }
};

/// Runs the model for any role.
ForwardTrace forward(const ParamSet& params, const ModelSpec& spec, const Tensor& x);
/// Role-checked entry points.
ForwardTrace student_forward(const ParamSet& params, const ModelSpec& spec, const Tensor& x);
ForwardTrace teacher_forward(const ParamSet& params, const ModelSpec& spec, const Tensor& x);

/// Backpropagates `grads` through `trace`, accumulating into the parameters'
/// gradient buffers (allocated on demand).
void backward(const ModelSpec& spec, ParamSet& params, const ForwardTrace& trace,
              const TraceGrads& grads);

// ---------------------------------------------------------------------------
// Checkpoints: "PKDC" v1 little-endian, f32 data.
// ---------------------------------------------------------------------------

struct Checkpoint {
  ModelSpec spec;
  ParamSet params;

  /// Wraps params after rounding every value through f32, so that the in-memory
  /// model equals what a save/load cycle produces.
  static Checkpoint make(const ModelSpec& spec, ParamSet params);

  std::string encode() const;
  static Checkpoint decode(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);

}  // namespace pkd
