#include "pkd/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "pkd/rng.hpp"

namespace pkd {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << bytes;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

const char* kl_name(KlTarget t) { return t == KlTarget::Teacher ? "teacher" : "student"; }
const char* window_name(WindowMode w) { return w == WindowMode::ZeroPad ? "zeropad" : "clip"; }

}  // namespace

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const fs::path& path) { return fnv1a_hex(read_file(path)); }

Hyper desk_hyper() {
  Hyper h;
  h.epochs = 12;
  h.lr_decay_epoch = 10;
  return h;
}

void ExperimentConfig::validate() const {
  require(!seeds.empty(), "config: the seed list is empty");
  require(channels >= 1, "config: channels must be >= 1");
  require(aux_channels >= 0, "config: aux_channels must be >= 0");
  require(horizon >= 1, "config: the anticipation horizon P must be >= 1 (got " +
                            std::to_string(horizon) + ")");
  hyper.validate();
  if (data_dir.empty()) {
    gen.validate();
  } else {
    for (const char* split : {"train", "val", "test"})
      require(fs::exists(data_dir / (std::string(split) + ".pkds")),
              "config: " + (data_dir / (std::string(split) + ".pkds")).string() +
                  " does not exist (run gen-data first)");
  }
  KdPath::parse(path);
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["gen"] = json::parse(gen.to_json());
  j["data_dir"] = data_dir.string();
  j["channels"] = channels;
  j["hyper"] = {{"tau", hyper.tau},
                {"lambda", hyper.lambda},
                {"alpha", hyper.alpha},
                {"lr", hyper.lr},
                {"lr_decay_epoch", hyper.lr_decay_epoch},
                {"lr_decay_factor", hyper.lr_decay_factor},
                {"epochs", hyper.epochs},
                {"patience", hyper.patience},
                {"min_delta", hyper.min_delta},
                {"predict_weight", hyper.predict_weight}};
  j["path"] = path;
  j["aux_channels"] = aux_channels;
  j["anticipation"] = anticipation;
  j["horizon"] = horizon;
  j["seeds"] = seeds;
  j["kl_target"] = kl_name(kd.kl_target);
  j["window"] = window_name(kd.window);
  j["layer1_main_target"] = kd.layer1_main_target;
  return j.dump();
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(to_json()); }

const char* curve_shape_name(CurveShape s) {
  switch (s) {
    case CurveShape::RiseThenFall: return "rise-then-fall";
    case CurveShape::Plateau: return "plateau";
    case CurveShape::Rising: return "rising";
    case CurveShape::Falling: return "falling";
    case CurveShape::Flat: return "flat";
  }
  return "?";
}

CurveShape classify_curve(std::span<const double> v, double tol) {
  require(v.size() >= 2, "classify_curve: need at least two points");
  const auto peak_it = std::max_element(v.begin(), v.end());
  const double peak = *peak_it;
  const bool rise = peak - v.front() > tol;
  const bool fall = peak - v.back() > tol;
  if (rise && fall) return CurveShape::RiseThenFall;
  if (!rise && fall) return CurveShape::Falling;
  if (!rise) return CurveShape::Flat;
  // Rises and ends near the peak: a plateau when the second half adds little.
  const double mid = v[(v.size() - 1) / 2];
  return peak - mid <= tol ? CurveShape::Plateau : CurveShape::Rising;
}

void append_manifest(const fs::path& out_dir, const std::string& command,
                     const ExperimentConfig& cfg, const std::vector<fs::path>& artifacts) {
  json j;
  j["command"] = command;
  j["config_hash"] = cfg.hash();
  j["config"] = json::parse(cfg.to_json());
  json arts = json::array();
  for (const auto& a : artifacts) arts.push_back({{"path", a.string()}, {"hash", file_hash(a)}});
  j["artifacts"] = arts;
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "manifest.jsonl", std::ios::app);
  out << j.dump() << '\n';
  if (!out) throw std::runtime_error("cannot append to " + (out_dir / "manifest.jsonl").string());
}

std::string ModelReport::to_json() const {
  json j = json::parse(eval.to_json());
  j["model"] = model;
  j["seed"] = seed;
  if (gap_reduction) j["gap_reduction"] = *gap_reduction;
  return j.dump(2);
}

ModelReport ModelReport::from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelReport r;
  r.model = j.at("model");
  r.seed = j.at("seed");
  r.eval.frames = j.at("frames");
  r.eval.map = j.at("mAP");
  r.eval.mcap = j.at("mcAP");
  for (const auto& c : j.at("classes")) {
    ClassResult cr;
    cr.label = c.at("class");
    cr.positives = c.at("positives");
    cr.negatives = c.at("negatives");
    cr.ap = c.at("AP").get<double>() / 100.0;
    cr.cap = c.at("cAP").get<double>() / 100.0;
    cr.omega = c.at("omega");
    r.eval.classes.push_back(cr);
  }
  r.eval.skipped_classes = j.at("skipped_classes").get<std::vector<int>>();
  if (j.contains("portion_mcAP"))
    for (const auto& v : j["portion_mcAP"])
      r.eval.portion_mcap.push_back(v.is_null() ? std::nan("") : v.get<double>());
  if (j.contains("gap_reduction")) r.gap_reduction = j["gap_reduction"].get<double>();
  return r;
}

std::string artifact_name(const std::string& path_text, int aux_channels) {
  std::string name = KdPath::parse(path_text).str();
  std::replace(name.begin(), name.end(), '>', '-');
  if (aux_channels > 0) name += ".aux" + std::to_string(aux_channels);
  return name;
}

GeneratedData load_data_dir(const fs::path& dir) {
  GeneratedData d;
  d.train = load_sequence_set(dir / "train.pkds");
  d.val = load_sequence_set(dir / "val.pkds");
  d.test = load_sequence_set(dir / "test.pkds");
  // PKDS carries no provenance; the sidecar written next to the splits vouches for them.
  if (const fs::path side = dir / "gen_config.json"; fs::exists(side)) {
    const std::string h = GenConfig::from_json(read_file(side)).hash();
    d.train.provenance = d.val.provenance = d.test.provenance = h;
  }
  require(d.train.input_dim == d.test.input_dim && d.train.num_classes == d.test.num_classes &&
              d.val.input_dim == d.test.input_dim && d.val.num_classes == d.test.num_classes,
          "data directory " + dir.string() + ": splits disagree on input_dim or num_classes");
  return d;
}

std::vector<fs::path> write_data_dir(const GenConfig& cfg, const fs::path& dir, bool force) {
  cfg.validate();
  std::vector<fs::path> files = {dir / "train.pkds", dir / "val.pkds", dir / "test.pkds",
                                 dir / "gen_config.json"};
  if (!force)
    for (const auto& f : files)
      require(!fs::exists(f), f.string() + " exists; pass --force to overwrite");
  fs::create_directories(dir);
  const GeneratedData d = generate_all(cfg);
  save_sequence_set(d.train, files[0]);
  save_sequence_set(d.val, files[1]);
  save_sequence_set(d.test, files[2]);
  json side = json::parse(cfg.to_json());
  side["hash"] = cfg.hash();
  write_file(files[3], side.dump(2) + "\n");
  return files;
}

// ---------------------------------------------------------------------------

SeedRun::SeedRun(const ExperimentConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  if (!cfg_.out_dir.empty()) dir_ = cfg_.out_dir / ("seed_" + std::to_string(seed));
  if (cfg_.data_dir.empty()) {
    GenConfig g = cfg_.gen;
    g.seed = seed;
    data_ = generate_all(g);
    gen_ = g;
  } else {
    data_ = load_data_dir(cfg_.data_dir);
    const fs::path side = cfg_.data_dir / "gen_config.json";
    if (fs::exists(side)) gen_ = GenConfig::from_json(read_file(side));
  }
}

Hyper SeedRun::hyper() const {
  Hyper h = cfg_.hyper;
  h.seed = seed_;
  return h;
}

const Checkpoint& SeedRun::pretrained(const std::string& id, int aux_channels) {
  const std::string name = id == "S" && aux_channels > 0 ? "S.aux" + std::to_string(aux_channels) : id;
  if (auto it = cache_.find(name); it != cache_.end()) return it->second;
  const ModelSpec spec = spec_for(id, data_.train.input_dim, data_.train.num_classes,
                                  cfg_.channels, id == "S" ? aux_channels : 0);
  if (!dir_.empty() && fs::exists(dir_ / (name + ".pkdc"))) {
    Checkpoint ck = Checkpoint::load(dir_ / (name + ".pkdc"));
    require(ck.spec == spec, (dir_ / (name + ".pkdc")).string() +
                                 " does not match the requested model and data dimensions");
    return cache_.emplace(name, std::move(ck)).first->second;
  }
  Hyper h = hyper();
  h.seed = derive_seed(seed_, name, 0);
  TrainResult r = train_single(spec, data_.train, &data_.val, h, "pretrain " + name);
  const ModelReport rep = report(name, r.model);
  store(name, r.model, &r.log, rep);
  return cache_.emplace(name, std::move(r.model)).first->second;
}

PathResult SeedRun::distill(const KdPath& path, int aux_channels) {
  auto provider = [&](const std::string& id) { return pretrained(id, aux_channels); };
  return run_path(path, provider, data_.train, &data_.val, hyper(), cfg_.kd);
}

TrainResult SeedRun::anticipate(int horizon) {
  require(horizon >= 1, "anticipation horizon P must be >= 1 (got " + std::to_string(horizon) + ")");
  const ModelSpec spec =
      spec_for("A", data_.train.input_dim, data_.train.num_classes, cfg_.channels);
  Hyper h = hyper();
  h.seed = derive_seed(seed_, "A", static_cast<std::uint64_t>(horizon));
  return train_anticipator(spec, data_.train, &data_.val, h, horizon);
}

ModelReport SeedRun::report(const std::string& name, const Checkpoint& model) {
  require(model.spec.input_dim == data_.test.input_dim &&
              model.spec.num_classes == data_.test.num_classes,
          "model " + name + " expects D=" + std::to_string(model.spec.input_dim) +
              ", M=" + std::to_string(model.spec.num_classes) + " but the data has D=" +
              std::to_string(data_.test.input_dim) + ", M=" +
              std::to_string(data_.test.num_classes));
  ModelReport r;
  r.model = name;
  r.seed = seed_;
  r.eval = evaluate_model(model, data_.test);
  maps_[name] = r.eval.map;
  auto lookup = [&](const std::string& id) -> std::optional<double> {
    if (auto it = maps_.find(id); it != maps_.end()) return it->second;
    if (!dir_.empty() && fs::exists(dir_ / (id + ".report.json")))
      return ModelReport::from_json(read_file(dir_ / (id + ".report.json"))).eval.map;
    return std::nullopt;
  };
  if (name != "S" && name != "T4") {
    const auto s = lookup("S"), t = lookup("T4");
    if (s && t && *t > *s) r.gap_reduction = gap_reduction(*s, r.eval.map, *t);
  }
  return r;
}

void SeedRun::store(const std::string& name, const Checkpoint& model, const TrainLog* log,
                    const ModelReport& rep) {
  if (dir_.empty()) return;
  fs::create_directories(dir_);
  model.save(dir_ / (name + ".pkdc"));
  written_.push_back(dir_ / (name + ".pkdc"));
  if (log) {
    write_file(dir_ / (name + ".log.jsonl"), log->to_jsonl());
    written_.push_back(dir_ / (name + ".log.jsonl"));
  }
  write_file(dir_ / (name + ".report.json"), rep.to_json() + "\n");
  written_.push_back(dir_ / (name + ".report.json"));
}

}  // namespace pkd
