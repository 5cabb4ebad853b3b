#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pkd/harness.hpp"

using namespace pkd;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("pkd_harness_" + name);
  fs::remove_all(d);
  return d;
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.gen.num_classes = 4;
  c.gen.input_dim = 6;
  c.gen.ambiguity_len = 2;
  c.gen.confusion_groups = {{1, 2}, {3, 4}};
  c.gen.sequence_length = 60;
  c.gen.train_count = 6;
  c.gen.val_count = 2;
  c.gen.test_count = 4;
  c.channels = 5;
  c.hyper.epochs = 2;
  c.hyper.lr_decay_epoch = 2;
  c.seeds = {4};
  c.out_dir.clear();
  return c;
}

}  // namespace

TEST_CASE("FNV-1a reference values") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("curve shape flags") {
  const std::vector<double> hump = {60.0, 62.0, 63.0, 61.5, 60.5};
  const std::vector<double> plateau = {60.0, 62.5, 63.0, 63.1, 62.9};
  const std::vector<double> rising = {60.0, 60.5, 61.0, 63.0, 65.0};
  const std::vector<double> falling = {63.0, 62.0, 61.0};
  const std::vector<double> flat = {60.0, 60.2, 59.9, 60.1};
  CHECK(classify_curve(hump) == CurveShape::RiseThenFall);
  CHECK(classify_curve(plateau) == CurveShape::Plateau);
  CHECK(classify_curve(rising) == CurveShape::Rising);
  CHECK(classify_curve(falling) == CurveShape::Falling);
  CHECK(classify_curve(flat) == CurveShape::Flat);
  CHECK(std::string(curve_shape_name(CurveShape::RiseThenFall)) == "rise-then-fall");
  CHECK_THROWS_AS(classify_curve(std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("experiment config validation and hashing") {
  ExperimentConfig c = tiny_experiment();
  CHECK_NOTHROW(c.validate());
  const std::string h = c.hash();
  CHECK(h.size() == 16);
  ExperimentConfig d = c;
  d.hyper.alpha = 0.5;
  CHECK(d.hash() != h);

  ExperimentConfig bad = c;
  bad.seeds.clear();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.horizon = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.path = "S>T5";
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.data_dir = scratch_dir("missing");
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("artifact names") {
  CHECK(artifact_name("S>T1>T2>T3>T4") == "S-T1-T2-T3-T4");
  CHECK(artifact_name("T4 -> T2 -> S", 16) == "T4-T2-S.aux16");
}

TEST_CASE("gen-data writes, refuses to overwrite, and hashes differ by seed") {
  const fs::path dir = scratch_dir("gen");
  GenConfig g = tiny_experiment().gen;
  g.seed = 7;
  const auto files = write_data_dir(g, dir, false);
  CHECK(files.size() == 4);
  for (const auto& f : files) CHECK(fs::exists(f));
  CHECK_THROWS_AS(write_data_dir(g, dir, false), std::invalid_argument);
  const std::string before = file_hash(dir / "test.pkds");
  CHECK_NOTHROW(write_data_dir(g, dir, true));
  CHECK(file_hash(dir / "test.pkds") == before);

  const GeneratedData back = load_data_dir(dir);
  CHECK(back.test.provenance == g.hash());
  CHECK(back.test.sequences == generate(g, Split::Test).sequences);

  GenConfig h = g;
  h.seed = 8;
  CHECK(h.hash() != g.hash());
  fs::remove_all(dir);
}

TEST_CASE("the ambiguous onset drives the future-window gain") {
  auto gap = [](double noise, int ambiguity) {
    GenConfig g;
    g.noise_sigma = noise;
    g.ambiguity_len = ambiguity;
    const SequenceSet test = generate(g, Split::Test);
    return bayes_oracle(g, test, 8).report.map - bayes_oracle(g, test, 0).report.map;
  };
  // At the default noise, onsets are also blurred by noise, so removing the
  // ambiguity only halves the gain.
  const double with = gap(1.0, 6), without = gap(1.0, 0);
  MESSAGE("noise 1.0: gap " << with << " with onset ambiguity, " << without << " without");
  CHECK(without < 0.6 * with);
  // With cleaner frames the gain without ambiguity vanishes.
  CHECK(gap(0.4, 0) < 1.0);
  CHECK(gap(0.4, 6) > 5.0);
}

TEST_CASE("model reports round-trip through JSON") {
  ModelReport r;
  r.model = "S-T4";
  r.seed = 3;
  r.eval.frames = 10;
  r.eval.map = 61.5;
  r.eval.mcap = 80.25;
  r.eval.classes.push_back({1, 4, 6, 0.75, 0.8, 1.5});
  r.eval.skipped_classes = {2};
  r.eval.portion_mcap = {50.0, std::nan("")};
  r.gap_reduction = 12.5;
  const ModelReport b = ModelReport::from_json(r.to_json());
  CHECK(b.model == r.model);
  CHECK(b.seed == 3);
  CHECK(b.eval.map == 61.5);
  CHECK(b.eval.classes.size() == 1);
  CHECK(b.eval.classes[0].ap == doctest::Approx(0.75));
  CHECK(b.eval.skipped_classes == std::vector<int>{2});
  CHECK(std::isnan(b.eval.portion_mcap[1]));
  CHECK(*b.gap_reduction == 12.5);
}

TEST_CASE("seed runs are reproducible and write a manifest of artifact hashes") {
  ExperimentConfig c = tiny_experiment();
  c.out_dir = scratch_dir("runs");
  std::string first_hash;
  for (int rep = 0; rep < 2; ++rep) {
    fs::remove_all(c.out_dir);
    SeedRun run(c, 4);
    run.pretrained("S");
    run.pretrained("T2");
    const PathResult r = run.distill(KdPath::parse("S>T2"));
    const ModelReport mr = run.report("S-T2", r.student);
    run.store("S-T2", r.student, nullptr, mr);
    append_manifest(c.out_dir, "test", c, run.written());
    const std::string h = file_hash(run.dir() / "S-T2.pkdc");
    if (rep == 0)
      first_hash = h;
    else
      CHECK(h == first_hash);
  }
  std::ifstream in(c.out_dir / "manifest.jsonl");
  std::string line;
  std::getline(in, line);
  const auto j = nlohmann::json::parse(line);
  CHECK(j.at("config_hash") == c.hash());
  // S and T2 with checkpoint, log and report; S-T2 with checkpoint and report.
  CHECK(j.at("artifacts").size() == 8);
  for (const auto& a : j.at("artifacts")) CHECK(file_hash(a.at("path").get<std::string>()) == a.at("hash"));

  // Cached checkpoints are reused: a fresh run loads them instead of retraining.
  SeedRun again(c, 4);
  CHECK(again.pretrained("S") == Checkpoint::load(again.dir() / "S.pkdc"));
  CHECK(again.written().empty());
  fs::remove_all(c.out_dir);
}

TEST_CASE("in-memory runs leave no files and reject mismatched models") {
  ExperimentConfig c = tiny_experiment();
  SeedRun run(c, 5);
  CHECK(run.dir().empty());
  CHECK(run.gen()->seed == 5);
  const Checkpoint& s = run.pretrained("S");
  CHECK(run.written().empty());
  Checkpoint wrong = s;
  wrong.spec.input_dim = 7;
  CHECK_THROWS_AS(run.report("bad", wrong), std::invalid_argument);
  CHECK_THROWS_AS(run.anticipate(0), std::invalid_argument);
  CHECK_THROWS_AS(run.pretrained("T7"), std::invalid_argument);
}
