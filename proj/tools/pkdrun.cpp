// Command-line front end: data generation, training, distillation, evaluation,
// oracle ceilings, streaming inference and the anticipation baseline.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "pkd/harness.hpp"
#include "pkd/numerics.hpp"
#include "pkd/stream.hpp"

namespace fs = std::filesystem;
using namespace pkd;

namespace {

struct Globals {
  ExperimentConfig cfg;
  std::string kl_target = "teacher";
  std::string window = "zeropad";
  bool layer1_main = false;
};

struct GenFlags {
  fs::path dir;
  bool force = false;
  std::string groups;
};

std::vector<std::vector<int>> parse_groups(const std::string& text, int num_classes) {
  std::vector<std::vector<int>> groups;
  if (text.empty()) {
    // Consecutive pairs, a trailing singleton when the count is odd.
    for (int c = 1; c <= num_classes; c += 2) {
      if (c + 1 <= num_classes)
        groups.push_back({c, c + 1});
      else
        groups.push_back({c});
    }
    return groups;
  }
  std::stringstream outer(text);
  std::string part;
  while (std::getline(outer, part, ';')) {
    std::vector<int> g;
    std::stringstream inner(part);
    std::string num;
    while (std::getline(inner, num, ',')) {
      try {
        g.push_back(std::stoi(num));
      } catch (const std::exception&) {
        throw std::invalid_argument("--groups: '" + num + "' is not an integer (format 1,2;3,4)");
      }
    }
    groups.push_back(g);
  }
  return groups;
}

void finalize(Globals& g) {
  if (g.kl_target == "teacher")
    g.cfg.kd.kl_target = KlTarget::Teacher;
  else if (g.kl_target == "student")
    g.cfg.kd.kl_target = KlTarget::Student;
  else
    throw std::invalid_argument("--kl-target must be 'teacher' or 'student'");
  if (g.window == "zeropad")
    g.cfg.kd.window = WindowMode::ZeroPad;
  else if (g.window == "clip")
    g.cfg.kd.window = WindowMode::Clip;
  else
    throw std::invalid_argument("--window must be 'zeropad' or 'clip'");
  g.cfg.kd.layer1_main_target = g.layer1_main;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

// --- train -----------------------------------------------------------------

int cmd_train(const Globals& g, const std::vector<std::string>& models, int aux) {
  for (const auto& m : models)
    if (m != "S" && m != "T1" && m != "T2" && m != "T3" && m != "T4")
      throw std::invalid_argument("--model: unknown model '" + m + "'; expected S or T1..T4");
  std::vector<fs::path> written;
  for (std::uint64_t seed : g.cfg.seeds) {
    SeedRun run(g.cfg, seed);
    for (const auto& m : models) {
      const Checkpoint& ck = run.pretrained(m, m == "S" ? aux : 0);
      const std::string name = m == "S" && aux > 0 ? "S.aux" + std::to_string(aux) : m;
      std::printf("seed %llu  %-8s test mAP %.2f\n", static_cast<unsigned long long>(seed),
                  name.c_str(), run.report(name, ck).eval.map);
    }
    written.insert(written.end(), run.written().begin(), run.written().end());
  }
  append_manifest(g.cfg.out_dir, "train", g.cfg, written);
  return 0;
}

// --- distill ---------------------------------------------------------------

int cmd_distill(const Globals& g, int aux, bool sweep_aux) {
  const KdPath path = KdPath::parse(g.cfg.path);
  std::vector<int> widths = {aux};
  if (sweep_aux) widths = {16, 64, 128, 256, g.cfg.channels};
  std::vector<fs::path> written;
  for (std::uint64_t seed : g.cfg.seeds) {
    SeedRun run(g.cfg, seed);
    for (int w : widths) {
      const int aux_w = w == g.cfg.channels ? 0 : w;
      PathResult r = run.distill(path, aux_w);
      const std::string name = artifact_name(path.str(), aux_w);
      ModelReport rep = run.report(name, r.student);
      TrainLog merged;
      for (const auto& lg : r.logs)
        merged.records.insert(merged.records.end(), lg.records.begin(), lg.records.end());
      run.store(name, r.student, &merged, rep);
      std::printf("seed %llu  %-20s aux %-4d test mAP %.2f", static_cast<unsigned long long>(seed),
                  path.str().c_str(), w == 0 ? g.cfg.channels : w, rep.eval.map);
      if (rep.gap_reduction) std::printf("  gap_reduction %.1f%%", *rep.gap_reduction);
      std::printf("\n");
    }
    written.insert(written.end(), run.written().begin(), run.written().end());
  }
  append_manifest(g.cfg.out_dir, "distill", g.cfg, written);
  return 0;
}

// --- eval ------------------------------------------------------------------

Tensor read_score_csv(const fs::path& p, std::size_t cols) {
  std::ifstream in(p);
  if (!in) throw std::invalid_argument("cannot open " + p.string());
  std::vector<double> values;
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (rows == 0 && values.empty() && !std::isdigit(static_cast<unsigned char>(line[0])) &&
        line[0] != '-' && line[0] != '.')
      continue;  // header
    std::stringstream ss(line);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(std::stod(cell));
      ++n;
    }
    if (n != cols)
      throw std::invalid_argument(p.string() + ": row " + std::to_string(rows + 1) + " has " +
                                  std::to_string(n) + " scores, expected " + std::to_string(cols));
    ++rows;
  }
  return Tensor({rows, cols}, std::move(values));
}

struct EvalFlags {
  fs::path model, pred, data, out;
  std::string format = "json";
  int portions = 0;
  std::string name;
  fs::path baseline, teacher;
};

int cmd_eval(const EvalFlags& f) {
  Tensor scores;
  std::vector<int> labels;
  std::vector<std::size_t> starts;
  if (!f.model.empty()) {
    if (f.data.empty()) throw std::invalid_argument("eval --model needs --data");
    const Checkpoint ck = Checkpoint::load(f.model);
    const SequenceSet data = load_sequence_set(f.data);
    if (ck.spec.input_dim != data.input_dim || ck.spec.num_classes != data.num_classes)
      throw std::invalid_argument("model expects D=" + std::to_string(ck.spec.input_dim) +
                                  ", M=" + std::to_string(ck.spec.num_classes) +
                                  " but the data has D=" + std::to_string(data.input_dim) +
                                  ", M=" + std::to_string(data.num_classes));
    scores = predict_scores(ck, data);
    labels = data.all_labels();
    starts = data.starts();
  } else if (!f.pred.empty()) {
    if (f.pred.extension() == ".pkds") {
      // Predictions stored as PKDS: score rows in place of features.
      const SequenceSet p = load_sequence_set(f.pred);
      scores = Tensor::matrix(p.total_frames(), static_cast<std::size_t>(p.input_dim));
      std::size_t off = 0;
      for (const auto& s : p.sequences)
        for (std::size_t t = 0; t < s.labels.size(); ++t, ++off)
          std::copy(s.features.row(t).begin(), s.features.row(t).end(), scores.row(off).begin());
      labels = p.all_labels();
      starts = p.starts();
    } else {
      if (f.data.empty()) throw std::invalid_argument("eval --pred with CSV scores needs --data for labels");
      const SequenceSet data = load_sequence_set(f.data);
      scores = read_score_csv(f.pred, static_cast<std::size_t>(data.num_classes + 1));
      labels = data.all_labels();
      starts = data.starts();
      if (scores.rows() != labels.size())
        throw std::invalid_argument("prediction rows (" + std::to_string(scores.rows()) +
                                    ") != labelled frames (" + std::to_string(labels.size()) + ")");
    }
  } else {
    throw std::invalid_argument("eval needs --model or --pred");
  }

  ModelReport rep;
  rep.model = f.name.empty() ? (f.model.empty() ? f.pred.stem().string() : f.model.stem().string())
                             : f.name;
  rep.eval = evaluate(scores, labels);
  if (f.portions > 0) {
    PortionOptions po;
    po.bins = f.portions;
    rep.eval.portion_mcap = portion_eval(scores, labels, po, starts);
  }
  if (!f.baseline.empty() && !f.teacher.empty()) {
    const double s = ModelReport::from_json(read_all(f.baseline)).eval.map;
    const double t = ModelReport::from_json(read_all(f.teacher)).eval.map;
    if (t <= s) throw std::invalid_argument("gap_reduction needs a teacher report above the baseline");
    rep.gap_reduction = gap_reduction(s, rep.eval.map, t);
  }
  std::string text;
  if (f.format == "json") {
    text = rep.to_json() + "\n";
  } else if (f.format == "csv") {
    text = rep.eval.to_csv();
    if (rep.gap_reduction) text += "gap_reduction,," + std::to_string(*rep.gap_reduction) + ",\n";
  } else {
    throw std::invalid_argument("--format must be json or csv");
  }
  if (f.out.empty())
    std::cout << text;
  else
    write_text(f.out, text);
  return 0;
}

// --- oracle ----------------------------------------------------------------

int cmd_oracle(const Globals& g, const std::string& split, const std::vector<std::string>& windows) {
  GenConfig gen;
  SequenceSet data;
  if (!g.cfg.data_dir.empty()) {
    const fs::path side = g.cfg.data_dir / "gen_config.json";
    if (!fs::exists(side))
      throw std::invalid_argument(side.string() + " missing: the oracle needs the generating config");
    gen = GenConfig::from_json(read_all(side));
    data = load_sequence_set(g.cfg.data_dir / (split + ".pkds"));
    data.provenance = gen.hash();
  } else {
    gen = g.cfg.gen;
    gen.seed = g.cfg.seeds.front();
    const Split sp = split == "train" ? Split::Train : split == "val" ? Split::Val : Split::Test;
    data = generate(gen, sp);
  }
  nlohmann::json out = nlohmann::json::array();
  std::printf("%-8s %8s %8s\n", "w", "mAP", "mcAP");
  for (const auto& wtext : windows) {
    const int w = wtext == "full" ? gen.sequence_length : std::stoi(wtext);
    if (w < 0) throw std::invalid_argument("oracle window must be >= 0 or 'full'");
    const OracleResult r = bayes_oracle(gen, data, w);
    std::printf("%-8s %8.2f %8.2f\n", wtext.c_str(), r.report.map, r.report.mcap);
    out.push_back({{"w", wtext}, {"mAP", r.report.map}, {"mcAP", r.report.mcap}});
  }
  if (!g.cfg.out_dir.empty()) {
    const fs::path p = g.cfg.out_dir / ("oracle_" + split + ".json");
    write_text(p, out.dump(2) + "\n");
    append_manifest(g.cfg.out_dir, "oracle", g.cfg, {p});
  }
  return 0;
}

// --- stream ----------------------------------------------------------------

int cmd_stream(const fs::path& model_path) {
  auto ck = std::make_shared<const Checkpoint>(Checkpoint::load(model_path));
  StreamSession session(ck);
  const auto d = static_cast<std::size_t>(ck->spec.input_dim);
  const auto k = static_cast<std::size_t>(ck->spec.outputs());
  std::vector<float> buf(d);
  std::vector<double> frame(d);
  std::cout << "idx,argmax";
  for (std::size_t c = 0; c < k; ++c) std::cout << ",p" << c;
  std::cout << '\n' << std::setprecision(8);
  for (std::size_t idx = 0;; ++idx) {
    std::cin.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(d * sizeof(float)));
    const auto got = static_cast<std::size_t>(std::cin.gcount());
    if (got == 0) break;
    if (got != d * sizeof(float))
      throw std::invalid_argument("stdin ended inside frame " + std::to_string(idx) + " (" +
                                  std::to_string(got) + " of " + std::to_string(d * sizeof(float)) +
                                  " bytes)");
    // f32 little-endian on the wire; this build assumes a little-endian host.
    for (std::size_t i = 0; i < d; ++i) frame[i] = buf[i];
    const auto logits = session.push_frame(frame);
    const Tensor p = softmax_temp(Tensor({1, k}, logits), 1.0);
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (p[c] > p[best]) best = c;
    std::cout << idx << ',' << best;
    for (std::size_t c = 0; c < k; ++c) std::cout << ',' << p[c];
    std::cout << '\n';
  }
  return 0;
}

// --- predict-baseline ------------------------------------------------------

int cmd_predict(const Globals& g, int horizon, int sweep_max) {
  if (horizon < 1) throw std::invalid_argument("--P must be >= 1 (got " + std::to_string(horizon) + ")");
  if (sweep_max != 0 && sweep_max < 1)
    throw std::invalid_argument("--sweep must be >= 1 (got " + std::to_string(sweep_max) + ")");
  std::vector<int> ps;
  if (sweep_max > 0)
    for (int p = 1; p <= sweep_max; ++p) ps.push_back(p);
  else
    ps.push_back(horizon);
  std::vector<fs::path> written;
  for (std::uint64_t seed : g.cfg.seeds) {
    SeedRun run(g.cfg, seed);
    std::vector<double> maps;
    std::string csv = "P,mAP,mcAP\n";
    for (int p : ps) {
      TrainResult r = run.anticipate(p);
      const std::string name = "A.P" + std::to_string(p);
      const ModelReport rep = run.report(name, r.model);
      run.store(name, r.model, &r.log, rep);
      maps.push_back(rep.eval.map);
      csv += std::to_string(p) + "," + std::to_string(rep.eval.map) + "," + std::to_string(rep.eval.mcap) + "\n";
      std::printf("seed %llu  P=%d test mAP %.2f\n", static_cast<unsigned long long>(seed), p, rep.eval.map);
    }
    if (ps.size() >= 2) {
      const char* shape = curve_shape_name(classify_curve(maps));
      csv += std::string("# shape,") + shape + "\n";
      std::printf("seed %llu  P-sweep shape: %s\n", static_cast<unsigned long long>(seed), shape);
      if (!run.dir().empty()) {
        write_text(run.dir() / "predict_sweep.csv", csv);
        written.push_back(run.dir() / "predict_sweep.csv");
      }
    }
    written.insert(written.end(), run.written().begin(), run.written().end());
  }
  append_manifest(g.cfg.out_dir, "predict-baseline", g.cfg, written);
  return 0;
}

// --- report ----------------------------------------------------------------

int cmd_report(const Globals& g) {
  const fs::path root = g.cfg.out_dir;
  if (!fs::is_directory(root)) throw std::invalid_argument(root.string() + " is not a directory");
  std::map<std::string, std::map<std::uint64_t, ModelReport>> table;
  std::vector<std::uint64_t> seeds;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory() || entry.path().filename().string().rfind("seed_", 0) != 0) continue;
    for (const auto& f : fs::directory_iterator(entry.path())) {
      const std::string fn = f.path().filename().string();
      if (!fn.ends_with(".report.json")) continue;
      ModelReport r = ModelReport::from_json(read_all(f.path()));
      if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
      table[r.model][r.seed] = std::move(r);
    }
  }
  if (table.empty()) throw std::invalid_argument("no *.report.json under " + root.string());
  std::sort(seeds.begin(), seeds.end());
  std::ostringstream csv;
  csv << std::fixed << std::setprecision(2) << "model";
  for (auto s : seeds) csv << ",seed" << s;
  csv << ",mean_mAP,mean_gap_reduction\n";
  for (const auto& [model, per_seed] : table) {
    csv << model;
    double sum = 0.0, gsum = 0.0;
    int n = 0, gn = 0;
    for (auto s : seeds) {
      csv << ',';
      if (auto it = per_seed.find(s); it != per_seed.end()) {
        csv << it->second.eval.map;
        sum += it->second.eval.map;
        ++n;
        if (it->second.gap_reduction) {
          gsum += *it->second.gap_reduction;
          ++gn;
        }
      }
    }
    csv << ',' << (n ? sum / n : std::nan("")) << ',';
    if (gn) csv << gsum / gn;
    csv << '\n';
  }
  std::cout << csv.str();
  write_text(root / "report.csv", csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Privileged knowledge distillation toolkit for online action detection"};
  app.set_config("--config", "", "Flat key=value file; command-line flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  ExperimentConfig& c = g.cfg;
  std::string data_dir, out_dir = c.out_dir.string();
  app.add_option("--data-dir", data_dir, "Directory written by gen-data (default: generate in memory)");
  app.add_option("--out", out_dir, "Output directory for checkpoints, logs and reports");
  app.add_option("--seeds", c.seeds, "Seed list")->delimiter(',');
  app.add_option("--channels", c.channels, "Convolution channels C");
  app.add_option("--epochs", c.hyper.epochs, "Epochs per training phase");
  app.add_option("--lr", c.hyper.lr, "Adam learning rate");
  app.add_option("--lr-decay-epoch", c.hyper.lr_decay_epoch, "Epoch at which the rate is multiplied by the decay factor");
  app.add_option("--lr-decay-factor", c.hyper.lr_decay_factor);
  app.add_option("--tau", c.hyper.tau, "Distillation temperature");
  app.add_option("--lambda", c.hyper.lambda, "Logit distillation weight");
  app.add_option("--alpha", c.hyper.alpha, "Auxiliary-node loss weight");
  app.add_option("--patience", c.hyper.patience);
  app.add_option("--min-delta", c.hyper.min_delta);
  app.add_option("--kl-target", g.kl_target, "teacher | student");
  app.add_option("--window", g.window, "zeropad | clip");
  app.add_flag("--layer1-main", g.layer1_main, "Distill layer-1 teacher features into h^1");
  // Generator knobs, used by gen-data and by in-memory runs.
  GenConfig& gen = c.gen;
  GenFlags gf;
  app.add_option("--num-classes", gen.num_classes);
  app.add_option("--input-dim", gen.input_dim);
  app.add_option("--ambiguity", gen.ambiguity_len, "Ambiguous onset length d");
  app.add_option("--groups", gf.groups, "Confusion groups, e.g. 1,2;3,4;5,6");
  app.add_option("--noise", gen.noise_sigma);
  app.add_option("--separation", gen.prototype_separation);
  app.add_option("--bg-len", gen.mean_background_len);
  app.add_option("--action-len", gen.mean_action_len);
  app.add_option("--length", gen.sequence_length, "Frames per sequence");
  app.add_option("--train-count", gen.train_count);
  app.add_option("--val-count", gen.val_count);
  app.add_option("--test-count", gen.test_count);

  auto* gen_cmd = app.add_subcommand("gen-data", "Write train/val/test PKDS files and gen_config.json");
  std::uint64_t gen_seed = 0;
  gen_cmd->add_option("--dir", gf.dir, "Target directory")->required();
  gen_cmd->add_option("--seed", gen_seed);
  gen_cmd->add_flag("--force", gf.force, "Overwrite existing files");

  auto* train_cmd = app.add_subcommand("train", "Classification pretraining of S and T1..T4");
  std::vector<std::string> train_models = {"S", "T1", "T2", "T3", "T4"};
  int aux = 0;
  train_cmd->add_option("--model", train_models, "Models to train")->delimiter(',');
  train_cmd->add_option("--aux-channels", aux, "Student auxiliary width");

  auto* distill_cmd = app.add_subcommand("distill", "Run a distillation path");
  bool sweep_aux = false;
  distill_cmd->add_option("--path", c.path, "e.g. S>T1>T2>T3>T4 or T4>T2>S");
  distill_cmd->add_option("--aux-channels", aux, "Student auxiliary width");
  distill_cmd->add_flag("--sweep-aux", sweep_aux, "Iterate auxiliary widths {16,64,128,256,C}");

  auto* eval_cmd = app.add_subcommand("eval", "Per-class AP / cAP report for a model or a prediction file");
  EvalFlags ef;
  eval_cmd->add_option("--model", ef.model, "PKDC checkpoint");
  eval_cmd->add_option("--pred", ef.pred, "Scores as PKDS (labels inside) or CSV (labels from --data)");
  eval_cmd->add_option("--data", ef.data, "PKDS split with labels");
  eval_cmd->add_option("--portions", ef.portions, "Report mcAP per instance portion (e.g. 10)");
  eval_cmd->add_option("--format", ef.format, "json | csv");
  eval_cmd->add_option("--report", ef.out, "Write the report here instead of stdout");
  eval_cmd->add_option("--name", ef.name, "Model name recorded in the report");
  eval_cmd->add_option("--baseline", ef.baseline, "Report of the baseline student, for gap_reduction");
  eval_cmd->add_option("--teacher", ef.teacher, "Report of the teacher, for gap_reduction");

  auto* oracle_cmd = app.add_subcommand("oracle", "Bayes filtering / fixed-lag / smoothing ceilings");
  std::string oracle_split = "test";
  std::vector<std::string> windows = {"0", "1", "2", "4", "6", "8", "full"};
  oracle_cmd->add_option("--split", oracle_split)->check(CLI::IsMember({"train", "val", "test"}));
  oracle_cmd->add_option("--windows", windows, "Future windows w (integers or 'full')")->delimiter(',');

  auto* stream_cmd = app.add_subcommand("stream", "Frame-by-frame inference: f32 LE frames on stdin, CSV on stdout");
  fs::path stream_model;
  stream_cmd->add_option("--model", stream_model)->required();

  auto* predict_cmd = app.add_subcommand("predict-baseline", "Anticipation baseline with horizon P");
  int horizon = 1, sweep_max = 0;
  predict_cmd->add_option("--P", horizon, "Anticipation horizon (>= 1)");
  predict_cmd->add_option("--sweep", sweep_max, "Sweep P = 1..N and write predict_sweep.csv");

  auto* report_cmd = app.add_subcommand("report", "Comparison table over every stored report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    c.data_dir = data_dir;
    c.out_dir = out_dir;
    c.aux_channels = aux;
    gen.confusion_groups = parse_groups(gf.groups, gen.num_classes);
    finalize(g);
    if (*gen_cmd) {
      gen.seed = gen_seed;
      const auto files = write_data_dir(gen, gf.dir, gf.force);
      std::printf("wrote %s (config hash %s)\n", gf.dir.string().c_str(), gen.hash().c_str());
      ExperimentConfig rec = c;
      rec.data_dir.clear();
      append_manifest(gf.dir, "gen-data", rec, files);
      return 0;
    }
    if (*eval_cmd) return cmd_eval(ef);
    if (*stream_cmd) return cmd_stream(stream_model);
    if (*report_cmd) return cmd_report(g);
    c.horizon = horizon;
    c.anticipation = static_cast<bool>(*predict_cmd);
    if (*predict_cmd && horizon < 1)
      throw std::invalid_argument("--P must be >= 1 (got " + std::to_string(horizon) + ")");
    c.validate();
    if (*train_cmd) return cmd_train(g, train_models, aux);
    if (*distill_cmd) return cmd_distill(g, aux, sweep_aux);
    if (*oracle_cmd) return cmd_oracle(g, oracle_split, windows);
    if (*predict_cmd) return cmd_predict(g, horizon, sweep_max);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 2;
  }
  return 0;
}
