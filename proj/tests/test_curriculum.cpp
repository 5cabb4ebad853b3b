#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "pkd/curriculum.hpp"
#include "pkd/rng.hpp"

using namespace pkd;

namespace {

GenConfig tiny_config() {
  GenConfig c;
  c.input_dim = 6;
  c.num_classes = 4;
  c.confusion_groups = {{1, 2}, {3, 4}};
  c.ambiguity_len = 3;
  c.mean_action_len = 10;
  c.mean_background_len = 12;
  c.sequence_length = 64;
  c.train_count = 8;
  c.val_count = 4;
  c.test_count = 4;
  c.seed = 5;
  return c;
}

Hyper quick(int epochs = 2) {
  Hyper h;
  h.epochs = epochs;
  h.lr = 2e-3;
  h.lr_decay_epoch = epochs;
  h.seed = 17;
  return h;
}

const GeneratedData& tiny_data() {
  static const GeneratedData d = generate_all(tiny_config());
  return d;
}

ModelSpec tiny(const std::string& id) { return spec_for(id, 6, 4, 5); }

}  // namespace

TEST_CASE("lr = 0 leaves the parameters at their initialization") {
  SequenceSet one = tiny_data().train;
  one.sequences.resize(1);
  Hyper h = quick(1);
  h.lr = 0.0;
  const TrainResult r = train_single(tiny("S"), one, nullptr, h);
  CHECK(r.model == Checkpoint::make(tiny("S"), init_params(tiny("S"), h.seed)));
  CHECK(r.log.records.size() == 1);
}

TEST_CASE("training loss falls on the default benchmark") {
  GenConfig c;
  c.train_count = 60;
  const SequenceSet train = generate(c, Split::Train);
  Hyper h = quick(4);
  h.lr = 5e-4;
  const TrainResult r = train_single(spec_for("S", c.input_dim, c.num_classes, 32), train, nullptr, h);
  REQUIRE(r.log.records.size() == 4);
  CHECK(r.log.records.back().loss_cls_s < r.log.records.front().loss_cls_s);
}

TEST_CASE("same seed gives bitwise-identical checkpoints") {
  const auto& d = tiny_data();
  const TrainResult a = train_single(tiny("T2"), d.train, &d.val, quick());
  const TrainResult b = train_single(tiny("T2"), d.train, &d.val, quick());
  CHECK(a.model.encode() == b.model.encode());
  CHECK(a.log.to_jsonl() == b.log.to_jsonl());
  Hyper other = quick();
  other.seed = 18;
  CHECK_FALSE(train_single(tiny("T2"), d.train, &d.val, other).model == a.model);
}

TEST_CASE("TrainLog follows the schedule and serializes one record per epoch") {
  const auto& d = tiny_data();
  Hyper h = quick(5);
  h.lr_decay_epoch = 3;
  h.lr_decay_factor = 0.1;
  h.patience = 100;
  const TrainResult r = train_single(tiny("S"), d.train, &d.val, h);
  REQUIRE(r.log.records.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(r.log.records[i].epoch == static_cast<int>(i) + 1);
    CHECK(r.log.records[i].lr == h.lr_at(static_cast<int>(i) + 1));
    if (i > 0) CHECK(r.log.records[i].lr <= r.log.records[i - 1].lr);
  }
  CHECK(r.log.records[2].lr == doctest::Approx(2e-4));
  CHECK(r.log.best_epoch >= 1);
  CHECK(r.log.best_epoch <= 5);
  std::istringstream lines(r.log.to_jsonl());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"stage", "epoch", "lr", "loss_cls_s", "loss_cls_t", "loss_l", "loss_an",
                            "holdout_metric"})
      CHECK(j.contains(key));
    ++n;
  }
  CHECK(n == 5);
}

TEST_CASE("early stopping ends a plateaued run and restores the best epoch") {
  const auto& d = tiny_data();
  Hyper h = quick(30);
  h.lr = 0.0;  // metric never moves
  h.patience = 3;
  const TrainResult r = train_single(tiny("S"), d.train, &d.val, h);
  CHECK(r.log.records.size() == 4);
  CHECK(r.log.best_epoch == 1);
}

TEST_CASE("distillation with lambda = alpha = 0 is plain resumed training") {
  const auto& d = tiny_data();
  const Checkpoint s = train_single(tiny("S"), d.train, nullptr, quick(1)).model;
  const Checkpoint t = train_single(tiny("T4"), d.train, nullptr, quick(1)).model;
  Hyper h = quick(2);
  h.lambda = 0.0;
  h.alpha = 0.0;
  const StageResult kd = distill_stage(s, t, d.train, nullptr, h);
  const TrainResult plain = train_resume(s, d.train, nullptr, h);
  CHECK(kd.student == plain.model);
  CHECK(kd.teacher.params.checksum() != t.params.checksum());
}

TEST_CASE("distill_stage rejects incompatible pairs") {
  const auto& d = tiny_data();
  const auto mk = [](const ModelSpec& s) { return Checkpoint::make(s, init_params(s, 0)); };
  CHECK_THROWS_AS(distill_stage(mk(tiny("S")), mk(tiny("S")), d.train, nullptr, quick()),
                  std::invalid_argument);
  CHECK_THROWS_AS(distill_stage(mk(tiny("S")), mk(spec_for("T4", 6, 4, 7)), d.train, nullptr, quick()),
                  std::invalid_argument);
  CHECK_THROWS_AS(distill_stage(mk(tiny("S")), mk(spec_for("T4", 5, 4, 5)), d.train, nullptr, quick()),
                  std::invalid_argument);
  CHECK_THROWS_AS(distill_stage(mk(tiny("T2")), mk(tiny("T2")), d.train, nullptr, quick()),
                  std::invalid_argument);
}

TEST_CASE("KdPath parsing") {
  const KdPath c = KdPath::parse("S>T1>T2>T3>T4");
  CHECK(c.direction == KdPath::Direction::Curriculum);
  CHECK(c.models == std::vector<std::string>{"S", "T1", "T2", "T3", "T4"});
  CHECK(c.str() == "S>T1>T2>T3>T4");
  const KdPath t = KdPath::parse("T4 -> T3->T2>S");
  CHECK(t.direction == KdPath::Direction::Takd);
  CHECK(t.models == std::vector<std::string>{"T4", "T3", "T2", "S"});
  for (const char* bad : {"", "S", "S>>T4", "S>T5", "T4>T2", "S>T1>S", "S>T1>T1", "s>T1"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(KdPath::parse(bad), std::invalid_argument);
  }
  try {
    KdPath::parse("S>T1>X9");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("position 3") != std::string::npos);
    CHECK(msg.find("offset 5") != std::string::npos);
  }
}

TEST_CASE("run_path structure") {
  const auto& d = tiny_data();
  std::map<std::string, Checkpoint> pre;
  for (const char* id : {"S", "T1", "T2", "T3", "T4"})
    pre.emplace(id, train_single(tiny(id), d.train, nullptr, quick(1)).model);
  std::map<std::string, int> calls;
  const PretrainedProvider provider = [&](const std::string& id) {
    ++calls[id];
    return pre.at(id);
  };
  const Hyper h = quick(1);

  SUBCASE("a single link is one distill stage with the first stage seed") {
    const PathResult r = run_path(KdPath::parse("S>T4"), provider, d.train, &d.val, h);
    Hyper hs = h;
    hs.seed = derive_seed(h.seed, "stage", 0);
    const StageResult direct = distill_stage(pre.at("S"), pre.at("T4"), d.train, &d.val, hs);
    CHECK(r.student == direct.student);
    CHECK(r.links == std::vector<std::string>{"T4->S"});
  }
  SUBCASE("curriculum loads each teacher fresh, once") {
    const PathResult r = run_path(KdPath::parse("S>T1>T2>T3>T4"), provider, d.train, &d.val, h);
    CHECK(r.links == std::vector<std::string>{"T1->S", "T2->S", "T3->S", "T4->S"});
    CHECK(r.logs.size() == 4);
    for (const char* id : {"S", "T1", "T2", "T3", "T4"}) CHECK(calls[id] == 1);
    CHECK(r.student.spec.role == Role::Student);
    CHECK(r.logs[2].records.front().stage == "T3->S");
  }
  SUBCASE("teacher chain hands each product down") {
    const PathResult r = run_path(KdPath::parse("T4>T2>S"), provider, d.train, &d.val, h);
    CHECK(r.links == std::vector<std::string>{"T4->T2", "T2->S"});
    CHECK(r.student.spec.role == Role::Student);
    // The second link's teacher is the distilled T2, not the pretrained one.
    Hyper h0 = h, h1 = h;
    h0.seed = derive_seed(h.seed, "stage", 0);
    h1.seed = derive_seed(h.seed, "stage", 1);
    const StageResult first = distill_stage(pre.at("T2"), pre.at("T4"), d.train, &d.val, h0);
    const StageResult second = distill_stage(pre.at("S"), first.student, d.train, &d.val, h1);
    CHECK(r.student == second.student);
  }
  SUBCASE("paths are deterministic") {
    const PathResult a = run_path(KdPath::parse("S>T2>T4"), provider, d.train, &d.val, h);
    const PathResult b = run_path(KdPath::parse("S>T2>T4"), provider, d.train, &d.val, h);
    CHECK(a.student.encode() == b.student.encode());
  }
}

TEST_CASE("anticipation baseline trains the predictor head") {
  const auto& d = tiny_data();
  const TrainResult r = train_anticipator(spec_for("A", 6, 4, 5), d.train, &d.val, quick(2), 3);
  CHECK(r.model.spec.role == Role::Anticipator);
  CHECK(r.log.records.front().loss_predict > 0.0);
  CHECK(std::isfinite(evaluate_model(r.model, d.test).map));
  CHECK_THROWS_AS(train_anticipator(spec_for("A", 6, 4, 5), d.train, &d.val, quick(1), 0),
                  std::invalid_argument);
}

TEST_CASE("checkpoint files round-trip byte for byte") {
  const auto& d = tiny_data();
  const Checkpoint c = train_single(tiny("S"), d.train, nullptr, quick(1)).model;
  const auto dir = std::filesystem::temp_directory_path() / "pkd_curriculum_test";
  std::filesystem::create_directories(dir);
  c.save(dir / "a.pkdc");
  Checkpoint::load(dir / "a.pkdc").save(dir / "b.pkdc");
  auto bytes = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  CHECK(bytes(dir / "a.pkdc") == bytes(dir / "b.pkdc"));
  CHECK(Checkpoint::load(dir / "a.pkdc") == c);
  std::filesystem::remove_all(dir);
}

TEST_CASE("gap_reduction") {
  CHECK(std::abs(gap_reduction(85.40, 85.98, 87.94) - 22.8) <= 0.1);
  CHECK(std::abs(gap_reduction(61.65, 64.45, 66.91) - 53.2) <= 0.1);
  CHECK(gap_reduction(50.0, 60.0, 60.0) == 100.0);
  CHECK(gap_reduction(50.0, 50.0, 60.0) == 0.0);
  CHECK_THROWS_AS(gap_reduction(60.0, 61.0, 60.0), std::invalid_argument);
  CHECK_THROWS_AS(gap_reduction(60.0, 61.0, 59.0), std::invalid_argument);
}

TEST_CASE("spec_for identifiers") {
  CHECK(spec_for("S", 16, 6, 32).role == Role::Student);
  CHECK(spec_for("T3", 16, 6, 32).k == 3);
  CHECK(spec_for("A", 16, 6, 32).role == Role::Anticipator);
  CHECK(spec_for("S", 16, 6, 32, 64).aux_width() == 64);
  CHECK_THROWS_AS(spec_for("T7", 16, 6, 32), std::invalid_argument);
}
