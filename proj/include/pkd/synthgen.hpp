#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pkd/metrics.hpp"
#include "pkd/tensor.hpp"

namespace pkd {

/// Synthetic streaming-action benchmark.
///
/// A hidden chain alternates background and action segments. The first
/// `ambiguity_len` frames of an action emit the shared prototype of the class's
/// confusion group; later frames emit the class's own prototype. Online
/// models therefore cannot separate group members at an onset, while a model
/// that sees a few frames ahead can.
struct GenConfig {
  int num_classes = 6;
  int input_dim = 16;
  int ambiguity_len = 6;
  /// Partition of the action labels 1..num_classes.
  std::vector<std::vector<int>> confusion_groups = {{1, 2}, {3, 4}, {5, 6}};
  double mean_background_len = 24.0;
  /// Mean action length including the ambiguous onset.
  double mean_action_len = 18.0;
  double noise_sigma = 1.0;
  double prototype_separation = 1.0;
  int sequence_length = 256;
  int train_count = 200;
  int val_count = 40;
  int test_count = 60;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static GenConfig from_json(const std::string& text);
  /// 16 hex digits of FNV-1a over the canonical JSON.
  std::string hash() const;
  int group_of(int label) const;
};

struct Sequence {
  Tensor features;  // [T x D]
  std::vector<int> labels;
  friend bool operator==(const Sequence&, const Sequence&) = default;
};

struct SequenceSet {
  std::vector<Sequence> sequences;
  int num_classes = 0;
  int input_dim = 0;
  std::string provenance;  // GenConfig hash

  std::size_t total_frames() const;
  std::vector<int> all_labels() const;
  /// Frame offset of each sequence in the concatenated stream.
  std::vector<std::size_t> starts() const;
  void validate() const;
  friend bool operator==(const SequenceSet&, const SequenceSet&) = default;
};

enum class Split { Train, Val, Test };
const char* split_name(Split s);

/// Discrete latent chain of the generator; also used by the oracle.
struct LatentChain {
  struct Edge {
    int to;
    double prob;
  };
  int states = 0;
  std::vector<std::vector<Edge>> next;  // sparse transition rows
  std::vector<int> label;               // class label emitted by each state
  std::vector<int> emission;            // index into `prototypes`
  std::vector<std::vector<double>> prototypes;
  int initial = 0;
};

LatentChain build_chain(const GenConfig& cfg);

SequenceSet generate(const GenConfig& cfg, Split split);

struct GeneratedData {
  SequenceSet train, val, test;
};
GeneratedData generate_all(const GenConfig& cfg);

struct OracleResult {
  std::vector<Tensor> posteriors;  // per sequence [T x (M+1)]
  Tensor scores;                   // concatenated
  EvalReport report;
};

/// Exact class posterior given frames 0..t+w (w = 0 filters, w >= T smooths).
OracleResult bayes_oracle(const GenConfig& cfg, const SequenceSet& data, int future_window);

// "PKDS" v1 files and the JSON sidecar.
void save_sequence_set(const SequenceSet& set, const std::filesystem::path& path);
SequenceSet load_sequence_set(const std::filesystem::path& path);
std::string encode_sequence_set(const SequenceSet& set);
SequenceSet decode_sequence_set(const std::string& bytes);

}  // namespace pkd
