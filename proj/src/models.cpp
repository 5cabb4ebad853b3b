#include "pkd/models.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pkd/binary_io.hpp"
#include "pkd/rng.hpp"

namespace pkd {
namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

std::string layer_key(int l, const char* branch, const char* what) {
  return "layer" + std::to_string(l) + "." + branch + "." + what;
}

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void add_grad(Tensor& dst, const Tensor& src) {
  if (src.empty()) return;
  require(dst.same_shape(src), "gradient shape mismatch: " + dst.shape_string() + " vs " +
                                   src.shape_string());
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

struct ParamGrad {
  Tensor weight;
  Tensor bias;
};

ParamGrad fresh(const ParamSet& params, const std::string& w, const std::string& b) {
  return {Tensor(params.at(w).dims()), Tensor(params.at(b).dims())};
}

void fold(ParamSet& params, const std::string& name, const Tensor& g) {
  Tensor& p = params.at(name);
  if (!p.has_grad()) p.zero_grad();
  auto dst = p.grad();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

}  // namespace

ModelSpec ModelSpec::student(int input_dim, int num_classes, int channels) {
  ModelSpec s;
  s.role = Role::Student;
  s.input_dim = input_dim;
  s.num_classes = num_classes;
  s.channels = channels;
  return s;
}

ModelSpec ModelSpec::teacher(int k, int input_dim, int num_classes, int channels) {
  ModelSpec s = student(input_dim, num_classes, channels);
  s.role = Role::Teacher;
  s.k = k;
  return s;
}

ModelSpec ModelSpec::anticipator(int input_dim, int num_classes, int channels) {
  ModelSpec s = student(input_dim, num_classes, channels);
  s.role = Role::Anticipator;
  return s;
}

int ModelSpec::input_width(int l) const {
  if (l == 1) return role == Role::Anticipator ? 2 * input_dim : input_dim;
  return has_aux() ? channels + aux_width() : channels;
}

std::vector<LayerGeom> ModelSpec::geometry() const {
  return uniform_stack(layers, past_extent, future());
}

std::string ModelSpec::name() const {
  switch (role) {
    case Role::Student: return "S";
    case Role::Teacher: return "T" + std::to_string(k);
    case Role::Anticipator: return "A";
  }
  return "?";
}

void ModelSpec::validate() const {
  require(role == Role::Student || role == Role::Teacher || role == Role::Anticipator,
          "model spec: unknown role tag " + std::to_string(static_cast<std::uint32_t>(role)));
  require(layers >= 1, "model spec: layers must be >= 1");
  require(past_extent >= 0, "model spec: past_extent must be >= 0");
  require(channels > 0, "model spec: channels must be > 0");
  require(input_dim > 0, "model spec: input_dim must be > 0");
  require(num_classes >= 1, "model spec: num_classes must be >= 1");
  require(aux_channels >= 0, "model spec: aux_channels must be >= 0");
  if (role == Role::Teacher) {
    require(k >= 1, "model spec: teacher k must be >= 1");
  } else {
    require(k == 0, "model spec: causal models must have k = 0");
  }
}

std::size_t param_count(const ModelSpec& spec) {
  spec.validate();
  const std::size_t kernel = sz(spec.past_extent + spec.future() + 1);
  const std::size_t c = sz(spec.channels);
  std::size_t n = 0;
  for (int l = 1; l <= spec.layers; ++l) {
    const std::size_t in = sz(spec.input_width(l));
    n += c * in * kernel + c;
    if (spec.has_aux()) {
      const std::size_t ca = sz(spec.aux_width());
      n += ca * in * kernel + ca;
      if (spec.has_aux_map()) n += c * ca + c;
    }
  }
  n += sz(spec.outputs()) * sz(spec.input_width(spec.layers + 1)) + sz(spec.outputs());
  if (spec.role == Role::Anticipator) {
    const std::size_t d = sz(spec.input_dim);
    n += d * d * sz(spec.past_extent + 1) + d;
  }
  return n;
}

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamSet ps;
  const std::size_t kernel = sz(spec.past_extent + spec.future() + 1);
  const std::size_t c = sz(spec.channels);
  auto conv = [&](const std::string& base, std::size_t out, std::size_t in, std::size_t k) {
    ps.tensors.emplace(base + ".weight", Tensor({out, in, k}));
    ps.tensors.emplace(base + ".bias", Tensor({out}));
  };
  for (int l = 1; l <= spec.layers; ++l) {
    const std::size_t in = sz(spec.input_width(l));
    conv("layer" + std::to_string(l) + ".main", c, in, kernel);
    if (spec.has_aux()) {
      conv("layer" + std::to_string(l) + ".aux", sz(spec.aux_width()), in, kernel);
      if (spec.has_aux_map()) conv("layer" + std::to_string(l) + ".aux_map", c, sz(spec.aux_width()), 1);
    }
  }
  ps.tensors.emplace("classifier.weight",
                     Tensor({sz(spec.outputs()), sz(spec.input_width(spec.layers + 1))}));
  ps.tensors.emplace("classifier.bias", Tensor({sz(spec.outputs())}));
  if (spec.role == Role::Anticipator) {
    const std::size_t d = sz(spec.input_dim);
    conv("predictor", d, d, sz(spec.past_extent + 1));
  }

  Rng rng = make_rng(seed, "init");
  for (auto& [name, t] : ps.tensors) {
    if (name.ends_with(".bias")) continue;
    const std::size_t fan_in = t.size() / t.dim(0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : t.data()) v = u(rng);
  }
  return ps;
}

const Tensor& ForwardTrace::aux_target(int l) const {
  const LayerTrace& lt = layers.at(l - 1);
  return lt.aux_mapped.empty() ? lt.aux : lt.aux_mapped;
}

ForwardTrace forward(const ParamSet& params, const ModelSpec& spec, const Tensor& x) {
  spec.validate();
  require(x.rank() == 2, "forward: input must be [T x D], got " + x.shape_string());
  require(x.cols() == sz(spec.input_dim),
          "forward: input has D=" + std::to_string(x.cols()) + " but model " + spec.name() +
              " expects D=" + std::to_string(spec.input_dim));
  ForwardTrace tr;
  Tensor z;
  if (spec.role == Role::Anticipator) {
    tr.predicted = conv1d_offset(x, params.at("predictor.weight"), params.at("predictor.bias"),
                                 spec.past_extent, 0);
    z = concat_cols(tr.predicted, x);
  } else {
    z = x;
  }
  const int fut = spec.future();
  for (int l = 1; l <= spec.layers; ++l) {
    LayerTrace lt;
    lt.input = std::move(z);
    lt.main_pre = conv1d_offset(lt.input, params.at(layer_key(l, "main", "weight")),
                                params.at(layer_key(l, "main", "bias")), spec.past_extent, fut);
    lt.main = relu(lt.main_pre);
    if (spec.has_aux()) {
      lt.aux_pre = conv1d_offset(lt.input, params.at(layer_key(l, "aux", "weight")),
                                 params.at(layer_key(l, "aux", "bias")), spec.past_extent, fut);
      lt.aux = relu(lt.aux_pre);
      if (spec.has_aux_map()) {
        lt.aux_mapped = conv1d_offset(lt.aux, params.at(layer_key(l, "aux_map", "weight")),
                                      params.at(layer_key(l, "aux_map", "bias")), 0, 0);
      }
      z = concat_cols(lt.main, lt.aux);
    } else {
      z = lt.main;
    }
    tr.layers.push_back(std::move(lt));
  }
  tr.top = std::move(z);
  tr.logits = linear(tr.top, params.at("classifier.weight"), params.at("classifier.bias"));
  return tr;
}

ForwardTrace student_forward(const ParamSet& params, const ModelSpec& spec, const Tensor& x) {
  require(spec.role == Role::Student, "student_forward: model " + spec.name() + " is not a student");
  return forward(params, spec, x);
}

ForwardTrace teacher_forward(const ParamSet& params, const ModelSpec& spec, const Tensor& x) {
  require(spec.role == Role::Teacher, "teacher_forward: model " + spec.name() + " is not a teacher");
  return forward(params, spec, x);
}

void backward(const ModelSpec& spec, ParamSet& params, const ForwardTrace& trace,
              const TraceGrads& grads) {
  require(trace.layers.size() == sz(spec.layers), "backward: trace/spec layer count mismatch");
  const int fut = spec.future();

  Tensor gz(trace.top.dims());
  if (!grads.logits.empty()) {
    ParamGrad gc = fresh(params, "classifier.weight", "classifier.bias");
    linear_backward(trace.top, params.at("classifier.weight"), grads.logits, &gz, &gc.weight,
                    &gc.bias);
    fold(params, "classifier.weight", gc.weight);
    fold(params, "classifier.bias", gc.bias);
  }

  for (int l = spec.layers; l >= 1; --l) {
    const LayerTrace& lt = trace.layers[sz(l - 1)];
    Tensor gmain(lt.main.dims());
    Tensor gaux;
    if (spec.has_aux()) {
      gaux = Tensor(lt.aux.dims());
      split_cols_add(gz, &gmain, &gaux);
    } else {
      add_grad(gmain, gz);
    }
    if (sz(l - 1) < grads.main.size()) add_grad(gmain, grads.main[sz(l - 1)]);

    const bool need_input = l > 1 || spec.role == Role::Anticipator;
    Tensor gin = need_input ? Tensor(lt.input.dims()) : Tensor();

    auto conv_branch = [&](const char* branch, const Tensor& pre, const Tensor& gout) {
      const std::string wk = layer_key(l, branch, "weight"), bk = layer_key(l, branch, "bias");
      ParamGrad pg = fresh(params, wk, bk);
      const Tensor gpre = relu_backward(pre, gout);
      conv1d_offset_backward(lt.input, params.at(wk), spec.past_extent, fut, gpre,
                             need_input ? &gin : nullptr, &pg.weight, &pg.bias);
      fold(params, wk, pg.weight);
      fold(params, bk, pg.bias);
    };

    conv_branch("main", lt.main_pre, gmain);
    if (spec.has_aux()) {
      if (sz(l - 1) < grads.aux.size() && !grads.aux[sz(l - 1)].empty()) {
        const Tensor& ga = grads.aux[sz(l - 1)];
        if (spec.has_aux_map()) {
          const std::string wk = layer_key(l, "aux_map", "weight"), bk = layer_key(l, "aux_map", "bias");
          ParamGrad pg = fresh(params, wk, bk);
          conv1d_offset_backward(lt.aux, params.at(wk), 0, 0, ga, &gaux, &pg.weight, &pg.bias);
          fold(params, wk, pg.weight);
          fold(params, bk, pg.bias);
        } else {
          add_grad(gaux, ga);
        }
      }
      conv_branch("aux", lt.aux_pre, gaux);
    }
    gz = std::move(gin);
  }

  if (spec.role == Role::Anticipator) {
    // gz now holds the gradient on [x-hat | x].
    Tensor gpred(trace.predicted.dims());
    split_cols_add(gz, &gpred, nullptr);
    add_grad(gpred, grads.predicted);
    const Tensor& x = trace.layers.front().input;
    Tensor xin = Tensor::matrix(x.rows(), sz(spec.input_dim));
    for (std::size_t t = 0; t < x.rows(); ++t)
      for (std::size_t j = 0; j < xin.cols(); ++j) xin.at(t, j) = x.at(t, xin.cols() + j);
    ParamGrad pg = fresh(params, "predictor.weight", "predictor.bias");
    conv1d_offset_backward(xin, params.at("predictor.weight"), spec.past_extent, 0, gpred, nullptr,
                           &pg.weight, &pg.bias);
    fold(params, "predictor.weight", pg.weight);
    fold(params, "predictor.bias", pg.bias);
  }
}

// ---------------------------------------------------------------------------

Checkpoint Checkpoint::make(const ModelSpec& spec, ParamSet params) {
  spec.validate();
  for (auto& [_, t] : params.tensors) {
    t.drop_grad();
    for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  }
  return Checkpoint{spec, std::move(params)};
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  const ModelSpec& s = ckpt.spec;
  io::put_magic(os, "PKDC");
  io::put_le<std::uint32_t>(os, kCheckpointVersion);
  for (std::uint32_t v :
       {static_cast<std::uint32_t>(s.role), static_cast<std::uint32_t>(s.layers),
        static_cast<std::uint32_t>(s.past_extent), static_cast<std::uint32_t>(s.k),
        static_cast<std::uint32_t>(s.channels), static_cast<std::uint32_t>(s.input_dim),
        static_cast<std::uint32_t>(s.num_classes)}) {
    io::put_le<std::uint32_t>(os, v);
  }
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.params.tensors.size()));
  for (const auto& [name, t] : ckpt.params.tensors) {
    require(name.size() <= 0xffff, "checkpoint: tensor name too long");
    io::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.dims()) io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : t.data()) io::put_f32(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& is) {
  io::expect_magic(is, "PKDC", "checkpoint");
  const auto version = io::get_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  ModelSpec s;
  s.role = static_cast<Role>(io::get_le<std::uint32_t>(is, "role"));
  s.layers = static_cast<int>(io::get_le<std::uint32_t>(is, "layers"));
  s.past_extent = static_cast<int>(io::get_le<std::uint32_t>(is, "past_extent"));
  s.k = static_cast<int>(io::get_le<std::uint32_t>(is, "k"));
  s.channels = static_cast<int>(io::get_le<std::uint32_t>(is, "channels"));
  s.input_dim = static_cast<int>(io::get_le<std::uint32_t>(is, "input_dim"));
  s.num_classes = static_cast<int>(io::get_le<std::uint32_t>(is, "num_classes"));

  ParamSet ps;
  const auto count = io::get_le<std::uint32_t>(is, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = io::get_le<std::uint16_t>(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error("truncated file while reading name");
    const auto rank = io::get_le<std::uint8_t>(is, "rank");
    if (rank < 1 || rank > 3) throw std::runtime_error("checkpoint: bad rank for " + name);
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = io::get_le<std::uint32_t>(is, "dims");
    Tensor t(dims);
    for (double& v : t.data()) v = io::get_f32(is, "tensor data");
    ps.tensors.emplace(std::move(name), std::move(t));
  }
  if (s.role != Role::Teacher && ps.contains("layer1.aux.weight")) {
    const int aux = static_cast<int>(ps.at("layer1.aux.weight").dim(0));
    s.aux_channels = aux == s.channels ? 0 : aux;
  }
  s.validate();
  // Structural check against the spec-derived layout.
  const ParamSet expect = init_params(s, 0);
  for (const auto& [name, t] : expect.tensors) {
    auto it = ps.tensors.find(name);
    if (it == ps.tensors.end()) throw std::runtime_error("checkpoint: missing tensor " + name);
    if (!it->second.same_shape(t))
      throw std::runtime_error("checkpoint: tensor " + name + " has dims " +
                               it->second.shape_string() + ", expected " + t.shape_string());
  }
  if (ps.tensors.size() != expect.tensors.size())
    throw std::runtime_error("checkpoint: unexpected extra tensors");
  return Checkpoint{s, std::move(ps)};
}

std::string Checkpoint::encode() const {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, *this);
  return os.str();
}

Checkpoint Checkpoint::decode(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_checkpoint(is);
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(os, *this);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace pkd
