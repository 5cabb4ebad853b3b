#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pkd/curriculum.hpp"

namespace pkd {

/// 16 hex digits of FNV-1a.
std::string fnv1a_hex(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

/// Training settings for the desk-scale benchmark: the full-scale optimizer
/// values with 12 epochs per phase and the decay moved to epoch 10.
Hyper desk_hyper();

/// Everything a run depends on. Seeds drive both the generated dataset (when
/// no data directory is given) and every training stream.
struct ExperimentConfig {
  GenConfig gen;
  /// Directory with train/val/test.pkds and gen_config.json; empty means the
  /// data is generated in memory from `gen` with gen.seed = run seed.
  std::filesystem::path data_dir;
  std::filesystem::path out_dir = "runs";
  int channels = 32;
  Hyper hyper = desk_hyper();
  std::string path = "S>T1>T2>T3>T4";
  /// Student auxiliary width; 0 keeps it equal to the channel count.
  int aux_channels = 0;
  bool anticipation = false;
  int horizon = 1;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  KdOptions kd;

  void validate() const;
  /// Canonical JSON; the manifest key is its hash.
  std::string to_json() const;
  std::string hash() const;
};

/// Shape of a metric-vs-parameter curve, judged with tolerance `tol`.
enum class CurveShape { RiseThenFall, Plateau, Rising, Falling, Flat };
const char* curve_shape_name(CurveShape s);
CurveShape classify_curve(std::span<const double> values, double tol = 0.5);

/// One line of `manifest.jsonl`: the command, its config hash and the content
/// hash of every artifact it wrote.
void append_manifest(const std::filesystem::path& out_dir, const std::string& command,
                     const ExperimentConfig& cfg,
                     const std::vector<std::filesystem::path>& artifacts);

/// A model's test report as stored next to its checkpoint.
struct ModelReport {
  std::string model;
  std::uint64_t seed = 0;
  EvalReport eval;
  std::optional<double> gap_reduction;

  std::string to_json() const;
  static ModelReport from_json(const std::string& text);
};

/// Data, checkpoints and reports of one seed. With an empty directory all
/// artifacts stay in memory.
class SeedRun {
 public:
  SeedRun(const ExperimentConfig& cfg, std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  const GeneratedData& data() const { return data_; }
  /// Config the data was generated from; absent for foreign data directories.
  const std::optional<GenConfig>& gen() const { return gen_; }
  const std::filesystem::path& dir() const { return dir_; }
  /// Hyper with this run's seed.
  Hyper hyper() const;

  /// Classification-pretrained model, trained on first use and cached.
  /// Ids: S, T1..T4; a student with a non-default auxiliary width is stored as
  /// "S.aux<N>".
  const Checkpoint& pretrained(const std::string& id, int aux_channels = 0);
  /// Runs a distillation path from the pretrained models.
  PathResult distill(const KdPath& path, int aux_channels = 0);
  /// Anticipation baseline with horizon P.
  TrainResult anticipate(int horizon);

  /// Test report; gap reduction is filled in when the S and T4 reports exist.
  ModelReport report(const std::string& name, const Checkpoint& model);
  /// Artifacts written since construction.
  const std::vector<std::filesystem::path>& written() const { return written_; }

  /// Stores checkpoint, log and report under `name` (no-op in memory mode).
  void store(const std::string& name, const Checkpoint& model, const TrainLog* log,
             const ModelReport& rep);

 private:
  ExperimentConfig cfg_;
  std::uint64_t seed_;
  std::filesystem::path dir_;
  GeneratedData data_;
  std::optional<GenConfig> gen_;
  std::map<std::string, Checkpoint> cache_;
  std::map<std::string, double> maps_;
  std::vector<std::filesystem::path> written_;
};

/// File-safe artifact name of a path, e.g. "S>T1>T2" -> "S-T1-T2".
std::string artifact_name(const std::string& path_text, int aux_channels = 0);

/// Reads DIR/{train,val,test}.pkds.
GeneratedData load_data_dir(const std::filesystem::path& dir);
/// Writes the three splits and gen_config.json; refuses to overwrite unless `force`.
std::vector<std::filesystem::path> write_data_dir(const GenConfig& cfg,
                                                  const std::filesystem::path& dir, bool force);

}  // namespace pkd
