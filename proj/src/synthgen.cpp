#include "pkd/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "pkd/binary_io.hpp"
#include "pkd/rng.hpp"

namespace pkd {
namespace {

constexpr std::uint32_t kDatasetVersion = 1;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

nlohmann::json config_json(const GenConfig& c) {
  return {{"num_classes", c.num_classes},
          {"input_dim", c.input_dim},
          {"ambiguity_len", c.ambiguity_len},
          {"confusion_groups", c.confusion_groups},
          {"mean_background_len", c.mean_background_len},
          {"mean_action_len", c.mean_action_len},
          {"noise_sigma", c.noise_sigma},
          {"prototype_separation", c.prototype_separation},
          {"sequence_length", c.sequence_length},
          {"train_count", c.train_count},
          {"val_count", c.val_count},
          {"test_count", c.test_count},
          {"seed", c.seed}};
}

std::uint64_t split_counter(Split s) { return static_cast<std::uint64_t>(s); }

}  // namespace

void GenConfig::validate() const {
  require(num_classes >= 1, "gen config: num_classes must be >= 1");
  require(input_dim >= 1, "gen config: input_dim must be >= 1");
  require(ambiguity_len >= 0, "gen config: ambiguity_len must be >= 0");
  require(noise_sigma > 0.0, "gen config: noise_sigma must be > 0");
  require(prototype_separation > 0.0, "gen config: prototype_separation must be > 0");
  require(mean_background_len >= 1.0, "gen config: mean_background_len must be >= 1");
  require(static_cast<double>(ambiguity_len) + 1.0 <= mean_action_len,
          "gen config: ambiguity_len (" + std::to_string(ambiguity_len) +
              ") must be below mean_action_len by at least one frame");
  require(sequence_length >= 1, "gen config: sequence_length must be >= 1");
  require(train_count >= 0 && val_count >= 0 && test_count >= 0,
          "gen config: split counts must be >= 0");
  std::vector<int> seen(static_cast<std::size_t>(num_classes) + 1, 0);
  for (const auto& g : confusion_groups) {
    require(!g.empty(), "gen config: empty confusion group");
    for (int m : g) {
      require(m >= 1 && m <= num_classes,
              "gen config: confusion group label " + std::to_string(m) + " out of range");
      ++seen[static_cast<std::size_t>(m)];
    }
  }
  for (int m = 1; m <= num_classes; ++m)
    require(seen[static_cast<std::size_t>(m)] == 1,
            "gen config: class " + std::to_string(m) + " must belong to exactly one group");
}

std::string GenConfig::to_json() const { return config_json(*this).dump(); }

GenConfig GenConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  GenConfig c;
  c.num_classes = j.at("num_classes");
  c.input_dim = j.at("input_dim");
  c.ambiguity_len = j.at("ambiguity_len");
  c.confusion_groups = j.at("confusion_groups").get<std::vector<std::vector<int>>>();
  c.mean_background_len = j.at("mean_background_len");
  c.mean_action_len = j.at("mean_action_len");
  c.noise_sigma = j.at("noise_sigma");
  c.prototype_separation = j.at("prototype_separation");
  c.sequence_length = j.at("sequence_length");
  c.train_count = j.at("train_count");
  c.val_count = j.at("val_count");
  c.test_count = j.at("test_count");
  c.seed = j.at("seed");
  c.validate();
  return c;
}

std::string GenConfig::hash() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : to_json()) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int GenConfig::group_of(int label) const {
  for (std::size_t g = 0; g < confusion_groups.size(); ++g)
    if (std::find(confusion_groups[g].begin(), confusion_groups[g].end(), label) !=
        confusion_groups[g].end())
      return static_cast<int>(g);
  throw std::invalid_argument("gen config: label " + std::to_string(label) + " has no group");
}

// ---------------------------------------------------------------------------

std::size_t SequenceSet::total_frames() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.labels.size();
  return n;
}

std::vector<int> SequenceSet::all_labels() const {
  std::vector<int> out;
  out.reserve(total_frames());
  for (const auto& s : sequences) out.insert(out.end(), s.labels.begin(), s.labels.end());
  return out;
}

std::vector<std::size_t> SequenceSet::starts() const {
  std::vector<std::size_t> out;
  std::size_t off = 0;
  for (const auto& s : sequences) {
    out.push_back(off);
    off += s.labels.size();
  }
  return out;
}

void SequenceSet::validate() const {
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& s = sequences[i];
    require(!s.labels.empty(), "sequence set: sequence " + std::to_string(i) + " is empty");
    require(s.features.rank() == 2 && s.features.rows() == s.labels.size() &&
                s.features.cols() == static_cast<std::size_t>(input_dim),
            "sequence set: sequence " + std::to_string(i) + " has features " +
                s.features.shape_string());
    for (int y : s.labels)
      require(y >= 0 && y <= num_classes,
              "sequence set: label " + std::to_string(y) + " outside [0, M]");
  }
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

LatentChain build_chain(const GenConfig& cfg) {
  cfg.validate();
  const int m_count = cfg.num_classes, d = cfg.ambiguity_len;
  const auto groups = static_cast<int>(cfg.confusion_groups.size());
  LatentChain ch;
  ch.states = 1 + m_count * (d + 1);
  ch.next.resize(static_cast<std::size_t>(ch.states));
  ch.label.assign(static_cast<std::size_t>(ch.states), 0);
  ch.emission.assign(static_cast<std::size_t>(ch.states), 0);

  // Emission prototypes: 0 = background, 1..G = groups, G+1..G+M = classes.
  Rng rng = make_rng(cfg.seed, "prototypes");
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = cfg.prototype_separation / std::sqrt(static_cast<double>(cfg.input_dim));
  auto draw = [&] {
    std::vector<double> v(static_cast<std::size_t>(cfg.input_dim));
    for (double& x : v) x = scale * normal(rng);
    return v;
  };
  ch.prototypes.emplace_back(static_cast<std::size_t>(cfg.input_dim), 0.0);
  for (int g = 0; g < groups; ++g) ch.prototypes.push_back(draw());
  for (int m = 1; m <= m_count; ++m) {
    auto offset = draw();
    const auto& base = ch.prototypes[static_cast<std::size_t>(1 + cfg.group_of(m))];
    for (std::size_t i = 0; i < offset.size(); ++i) offset[i] += base[i];
    ch.prototypes.push_back(std::move(offset));
  }

  auto first_state = [&](int m) { return 1 + (m - 1) * (d + 1); };
  const double leave_bg = 1.0 / cfg.mean_background_len;
  const double leave_body = 1.0 / (cfg.mean_action_len - d);
  ch.next[0].push_back({0, 1.0 - leave_bg});
  for (int m = 1; m <= m_count; ++m) ch.next[0].push_back({first_state(m), leave_bg / m_count});
  for (int m = 1; m <= m_count; ++m) {
    const int base = first_state(m);
    for (int i = 0; i <= d; ++i) {
      const auto s = static_cast<std::size_t>(base + i);
      ch.label[s] = m;
      if (i < d) {
        ch.emission[s] = 1 + cfg.group_of(m);
        ch.next[s].push_back({base + i + 1, 1.0});
      } else {
        ch.emission[s] = 1 + groups + (m - 1);
        ch.next[s].push_back({base + i, 1.0 - leave_body});
        ch.next[s].push_back({0, leave_body});
      }
    }
  }
  ch.initial = 0;
  return ch;
}

SequenceSet generate(const GenConfig& cfg, Split split) {
  const LatentChain ch = build_chain(cfg);
  const int count = split == Split::Train ? cfg.train_count
                    : split == Split::Val ? cfg.val_count
                                          : cfg.test_count;
  SequenceSet set;
  set.num_classes = cfg.num_classes;
  set.input_dim = cfg.input_dim;
  set.provenance = cfg.hash();
  const auto frames = static_cast<std::size_t>(cfg.sequence_length);
  const auto dim = static_cast<std::size_t>(cfg.input_dim);
  for (int n = 0; n < count; ++n) {
    const std::uint64_t counter = split_counter(split) * 1000003ULL + static_cast<std::uint64_t>(n);
    Rng chain_rng = make_rng(cfg.seed, "chain", counter);
    Rng noise_rng = make_rng(cfg.seed, "noise", counter);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, cfg.noise_sigma);
    Sequence seq;
    seq.features = Tensor::matrix(frames, dim);
    seq.labels.resize(frames);
    int s = ch.initial;
    for (std::size_t t = 0; t < frames; ++t) {
      if (t > 0) {
        const double u = uni(chain_rng);
        double acc = 0.0;
        const auto& row = ch.next[static_cast<std::size_t>(s)];
        int nxt = row.back().to;
        for (const auto& e : row) {
          acc += e.prob;
          if (u < acc) {
            nxt = e.to;
            break;
          }
        }
        s = nxt;
      }
      seq.labels[t] = ch.label[static_cast<std::size_t>(s)];
      const auto& mu = ch.prototypes[static_cast<std::size_t>(ch.emission[static_cast<std::size_t>(s)])];
      for (std::size_t j = 0; j < dim; ++j)
        seq.features.at(t, j) = static_cast<double>(static_cast<float>(mu[j] + normal(noise_rng)));
    }
    set.sequences.push_back(std::move(seq));
  }
  return set;
}

GeneratedData generate_all(const GenConfig& cfg) {
  return {generate(cfg, Split::Train), generate(cfg, Split::Val), generate(cfg, Split::Test)};
}

// ---------------------------------------------------------------------------

namespace {

// Emission likelihoods scaled per frame by the best state: e[t][s] in (0, 1].
std::vector<std::vector<double>> emission_table(const LatentChain& ch, const GenConfig& cfg,
                                                const Tensor& x) {
  const std::size_t frames = x.rows(), dim = x.cols();
  const double inv2s2 = 1.0 / (2.0 * cfg.noise_sigma * cfg.noise_sigma);
  std::vector<double> proto_ll(ch.prototypes.size());
  std::vector<std::vector<double>> e(frames, std::vector<double>(static_cast<std::size_t>(ch.states)));
  for (std::size_t t = 0; t < frames; ++t) {
    double best = -INFINITY;
    for (std::size_t p = 0; p < ch.prototypes.size(); ++p) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = x.at(t, j) - ch.prototypes[p][j];
        d2 += diff * diff;
      }
      proto_ll[p] = -d2 * inv2s2;
      best = std::max(best, proto_ll[p]);
    }
    for (int s = 0; s < ch.states; ++s)
      e[t][static_cast<std::size_t>(s)] =
          std::exp(proto_ll[static_cast<std::size_t>(ch.emission[static_cast<std::size_t>(s)])] - best);
  }
  return e;
}

void normalize(std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  if (!(s > 0.0)) throw std::runtime_error("bayes_oracle: posterior underflow");
  for (double& x : v) x /= s;
}

// beta_u(s) = sum_s' A(s, s') e_{u+1}(s') beta_{u+1}(s'), normalized.
void backward_step(const LatentChain& ch, const std::vector<double>& e_next,
                   const std::vector<double>& beta_next, std::vector<double>& beta) {
  for (int s = 0; s < ch.states; ++s) {
    double acc = 0.0;
    for (const auto& edge : ch.next[static_cast<std::size_t>(s)]) {
      const auto to = static_cast<std::size_t>(edge.to);
      acc += edge.prob * e_next[to] * beta_next[to];
    }
    beta[static_cast<std::size_t>(s)] = acc;
  }
  normalize(beta);
}

Tensor sequence_posterior(const LatentChain& ch, const GenConfig& cfg, const Tensor& x,
                          int window) {
  const std::size_t frames = x.rows();
  const auto states = static_cast<std::size_t>(ch.states);
  const auto e = emission_table(ch, cfg, x);

  std::vector<std::vector<double>> alpha(frames, std::vector<double>(states, 0.0));
  alpha[0][static_cast<std::size_t>(ch.initial)] = e[0][static_cast<std::size_t>(ch.initial)];
  normalize(alpha[0]);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      const double a = alpha[t - 1][s];
      if (a == 0.0) continue;
      for (const auto& edge : ch.next[s]) alpha[t][static_cast<std::size_t>(edge.to)] += a * edge.prob;
    }
    for (std::size_t s = 0; s < states; ++s) alpha[t][s] *= e[t][s];
    normalize(alpha[t]);
  }

  const bool full = static_cast<std::size_t>(window) + 1 >= frames;
  std::vector<std::vector<double>> full_beta;
  if (full) {
    full_beta.assign(frames, std::vector<double>(states, 1.0));
    normalize(full_beta[frames - 1]);
    for (std::size_t t = frames - 1; t-- > 0;) backward_step(ch, e[t + 1], full_beta[t + 1], full_beta[t]);
  }

  Tensor post = Tensor::matrix(frames, static_cast<std::size_t>(cfg.num_classes + 1));
  std::vector<double> beta(states), tmp(states), gamma(states);
  for (std::size_t t = 0; t < frames; ++t) {
    if (full) {
      beta = full_beta[t];
    } else {
      const std::size_t horizon = std::min(frames - 1, t + static_cast<std::size_t>(window));
      std::fill(beta.begin(), beta.end(), 1.0);
      for (std::size_t u = horizon; u > t; --u) {
        backward_step(ch, e[u], beta, tmp);
        std::swap(beta, tmp);
      }
    }
    for (std::size_t s = 0; s < states; ++s) gamma[s] = alpha[t][s] * beta[s];
    normalize(gamma);
    for (std::size_t s = 0; s < states; ++s) post.at(t, static_cast<std::size_t>(ch.label[s])) += gamma[s];
  }
  return post;
}

}  // namespace

OracleResult bayes_oracle(const GenConfig& cfg, const SequenceSet& data, int future_window) {
  require(future_window >= 0, "bayes_oracle: future window must be >= 0");
  require(data.provenance == cfg.hash(),
          "bayes_oracle: dataset provenance '" + data.provenance +
              "' does not match config hash '" + cfg.hash() + "'");
  const LatentChain ch = build_chain(cfg);
  OracleResult out;
  out.scores = Tensor::matrix(std::max<std::size_t>(1, data.total_frames()),
                              static_cast<std::size_t>(cfg.num_classes + 1));
  std::size_t off = 0;
  for (const auto& seq : data.sequences) {
    Tensor post = sequence_posterior(ch, cfg, seq.features, future_window);
    for (std::size_t t = 0; t < post.rows(); ++t) {
      auto src = post.row(t);
      std::copy(src.begin(), src.end(), out.scores.row(off + t).begin());
    }
    off += post.rows();
    out.posteriors.push_back(std::move(post));
  }
  const auto labels = data.all_labels();
  out.report = evaluate(out.scores, labels);
  return out;
}

// ---------------------------------------------------------------------------

std::string encode_sequence_set(const SequenceSet& set) {
  set.validate();
  std::ostringstream os(std::ios::binary);
  io::put_magic(os, "PKDS");
  io::put_le<std::uint32_t>(os, kDatasetVersion);
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(set.num_classes));
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(set.input_dim));
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(set.sequences.size()));
  for (const auto& s : set.sequences) {
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.labels.size()));
    for (double v : s.features.data()) io::put_f32(os, v);
    for (int y : s.labels) io::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(y));
  }
  return os.str();
}

SequenceSet decode_sequence_set(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  io::expect_magic(is, "PKDS", "dataset");
  const auto version = io::get_le<std::uint32_t>(is, "version");
  if (version != kDatasetVersion)
    throw std::runtime_error("dataset: unsupported version " + std::to_string(version));
  SequenceSet set;
  set.num_classes = static_cast<int>(io::get_le<std::uint32_t>(is, "M"));
  set.input_dim = static_cast<int>(io::get_le<std::uint32_t>(is, "D"));
  const auto count = io::get_le<std::uint32_t>(is, "sequence count");
  for (std::uint32_t n = 0; n < count; ++n) {
    const auto frames = io::get_le<std::uint32_t>(is, "T");
    if (frames == 0) throw std::runtime_error("dataset: empty sequence " + std::to_string(n));
    Sequence s;
    s.features = Tensor::matrix(frames, static_cast<std::size_t>(set.input_dim));
    for (double& v : s.features.data()) v = io::get_f32(is, "features");
    s.labels.resize(frames);
    for (int& y : s.labels) y = io::get_le<std::uint16_t>(is, "labels");
    set.sequences.push_back(std::move(s));
  }
  set.validate();
  return set;
}

void save_sequence_set(const SequenceSet& set, const std::filesystem::path& path) {
  const std::string bytes = encode_sequence_set(set);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os || !os.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
    throw std::runtime_error("cannot write dataset " + path.string());
}

SequenceSet load_sequence_set(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_sequence_set(ss.str());
}

}  // namespace pkd
