#include "sgt/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>

#include "sgt/random.hpp"
#include "sgt/serialization.hpp"

namespace sgt {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::FullSgt:
      return "full-sgt";
    case Variant::NoCrossAttention:
      return "no-cross-attention";
    case Variant::QrBaseline:
      return "qr-baseline";
  }
  return "unknown";
}

Variant variant_from_string(std::string_view name) {
  if (name == "full-sgt") return Variant::FullSgt;
  if (name == "no-cross-attention") return Variant::NoCrossAttention;
  if (name == "qr-baseline") return Variant::QrBaseline;
  throw std::invalid_argument("unknown variant '" + std::string(name) +
                              "' (expected full-sgt, no-cross-attention or qr-baseline)");
}

void SgtConfig::validate() const {
  if (d_model < 1) throw std::invalid_argument("model.d_model must be positive");
  if (n_layers < 1) throw std::invalid_argument("model.n_layers must be positive");
  if (n_heads < 1) throw std::invalid_argument("model.n_heads must be positive");
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("model.d_model (" + std::to_string(d_model) +
                                ") must be divisible by model.n_heads (" + std::to_string(n_heads) +
                                ")");
  }
  if (ffn_hidden < 1) throw std::invalid_argument("model.ffn_hidden must be positive");
  if (bidirectional_cross && variant != Variant::FullSgt) {
    throw std::invalid_argument("model.bidirectional_cross requires variant full-sgt");
  }
}

int default_heads(int d_model) { return std::max(1, d_model / 16); }

// Construction -------------------------------------------------------------

namespace {

Tensor uniform_param(Index rows, Index cols, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return Tensor::parameter(std::move(m));
}

Linear make_linear(Index in, Index out, Rng& rng) {
  return {uniform_param(in, out, in, rng), Tensor::parameter(Matrix::Zero(1, out))};
}

FeedForward make_ffn(Index in, Index hidden, Index out, Rng& rng) {
  FeedForward f;
  f.in = make_linear(in, hidden, rng);
  f.out = make_linear(hidden, out, rng);
  return f;
}

Norm make_norm(Index d) {
  return {Tensor::parameter(Matrix::Ones(1, d)), Tensor::parameter(Matrix::Zero(1, d))};
}

AttentionWeights make_attention(Index d, Rng& rng) {
  AttentionWeights w;
  w.wq = uniform_param(d, d, d, rng);
  w.wk = uniform_param(d, d, d, rng);
  w.wv = uniform_param(d, d, d, rng);
  w.wo = uniform_param(d, d, d, rng);
  return w;
}

SgtLayer make_layer(const SgtConfig& c, Rng& rng) {
  const Index d = c.d_model, h = c.ffn_hidden;
  SgtLayer l;
  if (c.variant == Variant::FullSgt) {
    l.sym_attn_norm = make_norm(d);
    l.sym_attn = make_attention(d, rng);
  }
  l.lin_attn_norm = make_norm(d);
  l.lin_attn = make_attention(d, rng);
  if (c.variant == Variant::FullSgt) {
    l.cross_query_norm = make_norm(d);
    l.cross_kv_norm = make_norm(d);
    l.cross_attn = make_attention(d, rng);
    if (c.bidirectional_cross) {
      l.reverse_query_norm = make_norm(d);
      l.reverse_kv_norm = make_norm(d);
      l.reverse_attn = make_attention(d, rng);
    }
    l.sym_ffn_norm = make_norm(d);
    l.sym_ffn = make_ffn(d, h, d, rng);
  }
  l.lin_ffn_norm = make_norm(d);
  l.lin_ffn = make_ffn(d, h, d, rng);
  return l;
}

void push(std::vector<NamedTensor>& out, const std::string& name, const Tensor& t) {
  if (t.defined()) out.emplace_back(name, t);
}

void push(std::vector<NamedTensor>& out, const std::string& name, const Linear& l) {
  push(out, name + ".weight", l.weight);
  push(out, name + ".bias", l.bias);
}

void push(std::vector<NamedTensor>& out, const std::string& name, const FeedForward& f) {
  push(out, name + ".in", f.in);
  push(out, name + ".out", f.out);
}

void push(std::vector<NamedTensor>& out, const std::string& name, const Norm& n) {
  push(out, name + ".gain", n.gain);
  push(out, name + ".bias", n.bias);
}

void push(std::vector<NamedTensor>& out, const std::string& name, const AttentionWeights& w) {
  push(out, name + ".wq", w.wq);
  push(out, name + ".wk", w.wk);
  push(out, name + ".wv", w.wv);
  push(out, name + ".wo", w.wo);
}

}  // namespace

Matrix sinusoidal_encoding(Index positions, Index width) {
  Matrix pe(positions, width);
  for (Index p = 0; p < positions; ++p) {
    for (Index i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      pe(p, i) = (i % 2 == 0) ? std::sin(static_cast<double>(p) * rate)
                              : std::cos(static_cast<double>(p) * rate);
    }
  }
  return pe;
}

SgtModel::SgtModel(SgtConfig config, SystemDims dims, int bits_per_dim, std::uint64_t seed)
    : config_(config), dims_(dims), bits_per_dim_(bits_per_dim) {
  config_.validate();
  if (dims.n_t < 1 || dims.n_r < 1) throw std::invalid_argument("SgtModel: dimensions must be >= 1");
  if (bits_per_dim < 1) throw std::invalid_argument("SgtModel: bits_per_dim must be >= 1");
  if (config_.variant == Variant::QrBaseline && dims.n_r < dims.n_t) {
    throw std::invalid_argument("SgtModel: qr-baseline needs n_r >= n_t");
  }
  Rng rng(derive_seed(seed, {0x5347'54ULL}));
  const Index d = config_.d_model;
  const Index rt = dims.real_tx();
  sym_embed = make_ffn(bits_per_dim, d, d, rng);
  lin_embed = make_ffn(rt + 2, d, d, rng);
  if (config_.positional_encoding) {
    sym_pe = sinusoidal_encoding(rt, d);
    lin_pe = sinusoidal_encoding(lin_tokens(), d);
  } else {
    sym_pe = Matrix::Zero(rt, d);
    lin_pe = Matrix::Zero(lin_tokens(), d);
  }
  const int unique_layers = config_.weight_sharing ? 1 : config_.n_layers;
  for (int l = 0; l < unique_layers; ++l) layers.push_back(make_layer(config_, rng));
  if (config_.variant == Variant::NoCrossAttention) {
    compress_norm = make_norm(d);
    compress = uniform_param(rt, dims.real_rx(), dims.real_rx(), rng);
    compress_bias = Tensor::parameter(Matrix::Zero(rt, d));
  }
  out_norm = make_norm(d);
  head = make_ffn(d, d, bits_per_dim, rng);
}

Index SgtModel::lin_tokens() const {
  return config_.variant == Variant::QrBaseline ? dims_.real_tx() : dims_.real_rx();
}

const SgtLayer& SgtModel::layer(int l) const {
  if (l < 0 || l >= config_.n_layers) throw std::out_of_range("SgtModel::layer index");
  return config_.weight_sharing ? layers.front() : layers[static_cast<std::size_t>(l)];
}

std::vector<NamedTensor> SgtModel::parameters() const {
  std::vector<NamedTensor> out;
  push(out, "sym_embed", sym_embed);
  push(out, "lin_embed", lin_embed);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const SgtLayer& L = layers[l];
    push(out, p + "sym_attn_norm", L.sym_attn_norm);
    push(out, p + "sym_attn", L.sym_attn);
    push(out, p + "lin_attn_norm", L.lin_attn_norm);
    push(out, p + "lin_attn", L.lin_attn);
    push(out, p + "cross_query_norm", L.cross_query_norm);
    push(out, p + "cross_kv_norm", L.cross_kv_norm);
    push(out, p + "cross_attn", L.cross_attn);
    push(out, p + "reverse_query_norm", L.reverse_query_norm);
    push(out, p + "reverse_kv_norm", L.reverse_kv_norm);
    push(out, p + "reverse_attn", L.reverse_attn);
    push(out, p + "sym_ffn_norm", L.sym_ffn_norm);
    push(out, p + "sym_ffn", L.sym_ffn);
    push(out, p + "lin_ffn_norm", L.lin_ffn_norm);
    push(out, p + "lin_ffn", L.lin_ffn);
  }
  push(out, "compress_norm", compress_norm);
  push(out, "compress", compress);
  push(out, "compress_bias", compress_bias);
  push(out, "out_norm", out_norm);
  push(out, "head", head);
  return out;
}

std::size_t SgtModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : parameters()) n += static_cast<std::size_t>(t.size());
  return n;
}

SgtModel SgtModel::clone() const {
  SgtModel copy(config_, dims_, bits_per_dim_, 0);
  auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].second.mutable_value() = src[i].second.value();
  return copy;
}

// Forward ------------------------------------------------------------------

TokenBatch stack_tokens(std::span<const TokenSet> sets) {
  if (sets.empty()) throw DimensionError("stack_tokens: empty batch");
  const Index nl = sets.front().lin.rows(), wl = sets.front().lin.cols();
  const Index ns = sets.front().sym.rows(), ws = sets.front().sym.cols();
  TokenBatch b;
  b.count = static_cast<Index>(sets.size());
  b.lin.resize(b.count * nl, wl);
  b.sym.resize(b.count * ns, ws);
  for (Index i = 0; i < b.count; ++i) {
    const TokenSet& t = sets[static_cast<std::size_t>(i)];
    if (t.lin.rows() != nl || t.lin.cols() != wl || t.sym.rows() != ns || t.sym.cols() != ws) {
      throw DimensionError("stack_tokens: token sets of different shapes");
    }
    b.lin.middleRows(i * nl, nl) = t.lin;
    b.sym.middleRows(i * ns, ns) = t.sym;
  }
  return b;
}

TokenBatch prepare_batch(const SgtModel& model, std::span<const MimoInstance> batch,
                         std::span<const std::optional<Matrix>> priors) {
  if (!priors.empty() && priors.size() != batch.size()) {
    throw DimensionError("prepare_batch: " + std::to_string(priors.size()) + " priors for " +
                         std::to_string(batch.size()) + " instances");
  }
  std::vector<TokenSet> sets;
  sets.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const MimoInstance& inst = batch[i];
    if (!(inst.dims() == model.dims())) {
      throw DimensionError("prepare_batch: instance is " + std::to_string(inst.dims().n_r) + "x" +
                           std::to_string(inst.dims().n_t) + ", model expects " +
                           std::to_string(model.dims().n_r) + "x" +
                           std::to_string(model.dims().n_t));
    }
    TokenSet t = tokenize(inst, model.bits_per_dim(), priors.empty() ? std::nullopt : priors[i]);
    if (model.config().variant == Variant::QrBaseline) t.lin = qr_tokens(inst);
    sets.push_back(std::move(t));
  }
  return stack_tokens(sets);
}

Tensor apply_linear(const Linear& l, const Tensor& x) {
  return add_row_bias(matmul(x, l.weight), l.bias);
}

Tensor apply_ffn(const FeedForward& f, const Tensor& x) {
  return apply_linear(f.out, gelu(apply_linear(f.in, x)));
}

Tensor apply_norm(const Norm& n, const Tensor& x) { return layer_norm(x, n.gain, n.bias); }

Embeddings embed(const SgtModel& model, const TokenBatch& tokens) {
  const Index rt = model.sym_tokens();
  const Index nl = model.lin_tokens();
  const Index width = model.dims().real_tx() + 2;
  if (tokens.count < 1 || tokens.sym.rows() != tokens.count * rt ||
      tokens.sym.cols() != model.bits_per_dim()) {
    throw DimensionError("embed: symbol tokens " + shape_string(tokens.sym) + " do not match [" +
                         std::to_string(tokens.count * rt) + ", " +
                         std::to_string(model.bits_per_dim()) + "]");
  }
  if (tokens.lin.rows() != tokens.count * nl || tokens.lin.cols() != width) {
    throw DimensionError("embed: constraint tokens " + shape_string(tokens.lin) +
                         " do not match [" + std::to_string(tokens.count * nl) + ", " +
                         std::to_string(width) + "]");
  }
  MacScope scope("embedding");
  Embeddings e;
  e.sym = apply_ffn(model.sym_embed, Tensor::constant(tokens.sym));
  e.lin = apply_ffn(model.lin_embed, Tensor::constant(tokens.lin));
  // The QR baseline merges both families into one stream, so it takes a single table.
  if (model.config().variant != Variant::QrBaseline) {
    e.sym = e.sym + Tensor::constant(model.sym_pe.replicate(tokens.count, 1));
  }
  e.lin = e.lin + Tensor::constant(model.lin_pe.replicate(tokens.count, 1));
  return e;
}

namespace {

Tensor project(const Tensor& x, const Tensor& w) {
  MacScope scope("projection");
  return matmul(x, w);
}

}  // namespace

Tensor self_attention(const Tensor& t, const Norm& norm, const AttentionWeights& w, Index groups,
                      Index heads, const AttentionObserver* observer) {
  const Tensor x = apply_norm(norm, t);
  const Tensor mixed =
      multi_head_attention(project(x, w.wq), project(x, w.wk), project(x, w.wv), groups, heads,
                           observer);
  return t + project(mixed, w.wo);
}

Tensor cross_attention(const Tensor& queries, const Tensor& keys_values, const Norm& query_norm,
                       const Norm& kv_norm, const AttentionWeights& w, Index groups, Index heads,
                       const AttentionObserver* observer) {
  const Tensor q = apply_norm(query_norm, queries);
  const Tensor kv = apply_norm(kv_norm, keys_values);
  const Tensor mixed = multi_head_attention(project(q, w.wq), project(kv, w.wk), project(kv, w.wv),
                                            groups, heads, observer);
  return queries + project(mixed, w.wo);
}

namespace {

Tensor ffn_sublayer(const Tensor& x, const Norm& norm, const FeedForward& f) {
  MacScope scope("ffn");
  return x + apply_ffn(f, apply_norm(norm, x));
}

std::string sublayer_name(Variant v, int layer) {
  return "layer " + std::to_string(layer) + " (" + to_string(v) + ")";
}

}  // namespace

Tensor forward(const SgtModel& model, const TokenBatch& tokens, const ForwardOptions& opts) {
  const SgtConfig& cfg = model.config();
  const Index groups = tokens.count;
  const Index heads = cfg.n_heads;
  Embeddings e = embed(model, tokens);

  std::optional<AttentionObserver> hook;
  auto observe = [&](int layer, std::string_view name) -> const AttentionObserver* {
    if (!opts.observer) return nullptr;
    hook = [obs = opts.observer, layer, name](Index inst, Index head, const Matrix& w) {
      (*obs)(layer, name, inst, head, w);
    };
    return &*hook;
  };

  Tensor s = e.sym;
  Tensor l = e.lin;
  if (cfg.variant == Variant::QrBaseline) l = l + s;

  for (int i = 0; i < cfg.n_layers; ++i) {
    const SgtLayer& p = model.layer(i);
    try {
      if (cfg.variant == Variant::FullSgt) {
        s = self_attention(s, p.sym_attn_norm, p.sym_attn, groups, heads, observe(i, "sym_self"));
        l = self_attention(l, p.lin_attn_norm, p.lin_attn, groups, heads, observe(i, "lin_self"));
        s = cross_attention(s, l, p.cross_query_norm, p.cross_kv_norm, p.cross_attn, groups, heads,
                            observe(i, "cross"));
        if (cfg.bidirectional_cross) {
          l = cross_attention(l, s, p.reverse_query_norm, p.reverse_kv_norm, p.reverse_attn, groups,
                              heads, observe(i, "reverse_cross"));
        }
        s = ffn_sublayer(s, p.sym_ffn_norm, p.sym_ffn);
        l = ffn_sublayer(l, p.lin_ffn_norm, p.lin_ffn);
      } else {
        l = self_attention(l, p.lin_attn_norm, p.lin_attn, groups, heads, observe(i, "lin_self"));
        l = ffn_sublayer(l, p.lin_ffn_norm, p.lin_ffn);
      }
    } catch (const NonFiniteError& err) {
      throw NonFiniteError(sublayer_name(cfg.variant, i) + ": " + err.what());
    }
  }

  try {
    if (cfg.variant == Variant::NoCrossAttention) {
      MacScope scope("compress");
      Tensor tiled_bias = model.compress_bias;
      if (groups > 1) {
        std::vector<Tensor> copies(static_cast<std::size_t>(groups), model.compress_bias);
        tiled_bias = concat_rows(copies);
      }
      s = group_left_matmul(model.compress, apply_norm(model.compress_norm, l), groups) +
          tiled_bias + e.sym;
    } else if (cfg.variant == Variant::QrBaseline) {
      s = l;
    }
    MacScope scope("head");
    return sigmoid(apply_ffn(model.head, apply_norm(model.out_norm, s)));
  } catch (const NonFiniteError& err) {
    throw NonFiniteError(std::string("output head: ") + err.what());
  }
}

Matrix forward(const SgtModel& model, const MimoInstance& inst, const std::optional<Matrix>& priors) {
  std::optional<Matrix> p[] = {priors};
  return forward(model, prepare_batch(model, std::span(&inst, 1), p)).value();
}

Matrix detect_soft(const SgtModel& model, const MimoInstance& inst,
                   const std::optional<Matrix>& priors) {
  return prob_to_llr(forward(model, inst, priors));
}

std::vector<Matrix> detect_soft_batch(const SgtModel& model, std::span<const MimoInstance> batch,
                                      std::span<const std::optional<Matrix>> priors) {
  if (batch.empty()) return {};
  const Matrix probs = forward(model, prepare_batch(model, batch, priors)).value();
  const Index rt = model.sym_tokens();
  std::vector<Matrix> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.push_back(prob_to_llr(Matrix(probs.middleRows(static_cast<Index>(i) * rt, rt))));
  }
  return out;
}

// Config serialisation -----------------------------------------------------

const nlohmann::json& require_field(const nlohmann::json& j, const std::string& key,
                                    const std::string& path) {
  const std::string full = path.empty() ? key : path + "." + key;
  if (!j.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError("missing config field '" + full + "'");
  return *it;
}

nlohmann::json to_json(const SgtConfig& c) {
  return {{"d_model", c.d_model},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"ffn_hidden", c.ffn_hidden},
          {"variant", to_string(c.variant)},
          {"weight_sharing", c.weight_sharing},
          {"bidirectional_cross", c.bidirectional_cross},
          {"positional_encoding", c.positional_encoding}};
}

SgtConfig sgt_config_from_json(const nlohmann::json& j, const std::string& path) {
  SgtConfig c;
  c.d_model = field<int>(j, "d_model", path);
  c.n_layers = field<int>(j, "n_layers", path);
  c.n_heads = field<int>(j, "n_heads", path);
  c.ffn_hidden = field<int>(j, "ffn_hidden", path);
  c.variant = variant_from_string(field<std::string>(j, "variant", path));
  c.weight_sharing = field<bool>(j, "weight_sharing", path);
  c.bidirectional_cross = field<bool>(j, "bidirectional_cross", path);
  c.positional_encoding = field<bool>(j, "positional_encoding", path);
  return c;
}

std::string config_hash(const nlohmann::json& j) {
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Checkpoints --------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'G', 'T', 'C', 'K', 'P', 'T', '\0'};

void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint64_t read_uint(std::istream& is, int bytes) {
  unsigned char b[8] = {};
  is.read(reinterpret_cast<char*>(b), bytes);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::string read_string(std::istream& is, std::size_t n) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

void save_checkpoint(std::ostream& os, const SgtModel& model) {
  const auto params = model.parameters();
  nlohmann::json header;
  header["config"] = to_json(model.config());
  header["dims"] = {{"n_t", model.dims().n_t}, {"n_r", model.dims().n_r}};
  header["bits_per_dim"] = model.bits_per_dim();
  header["parameters"] = nlohmann::json::array();
  for (const auto& [name, _] : params) header["parameters"].push_back(name);
  const std::string text = header.dump();

  os.write(kMagic, sizeof kMagic);
  write_u32(os, kCheckpointVersion);
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t.rows()));
    write_u32(os, static_cast<std::uint32_t>(t.cols()));
    const Matrix& v = t.value();
    for (Index i = 0; i < v.size(); ++i) write_u64(os, std::bit_cast<std::uint64_t>(v.data()[i]));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

SgtModel load_checkpoint(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, kMagic)) throw std::runtime_error("checkpoint: bad magic");
  const auto version = static_cast<std::uint32_t>(read_uint(is, 4));
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto header_len = read_uint(is, 8);
  if (header_len > (1u << 24)) throw std::runtime_error("checkpoint: header too large");
  const auto header = nlohmann::json::parse(read_string(is, header_len));
  const SgtConfig cfg = sgt_config_from_json(field<nlohmann::json>(header, "config", ""), "config");
  const auto& dims_j = require_field(header, "dims", "");
  const SystemDims dims{field<int>(dims_j, "n_t", "dims"), field<int>(dims_j, "n_r", "dims")};
  SgtModel model(cfg, dims, field<int>(header, "bits_per_dim", ""), 0);

  auto params = model.parameters();
  const auto count = read_uint(is, 4);
  if (count != params.size()) {
    throw std::runtime_error("checkpoint: " + std::to_string(count) + " parameters, model has " +
                             std::to_string(params.size()));
  }
  for (auto& [name, t] : params) {
    const std::string stored = read_string(is, read_uint(is, 4));
    if (stored != name) throw std::runtime_error("checkpoint: expected parameter '" + name + "', found '" + stored + "'");
    const auto rows = static_cast<Index>(read_uint(is, 4));
    const auto cols = static_cast<Index>(read_uint(is, 4));
    if (rows != t.rows() || cols != t.cols()) {
      throw std::runtime_error("checkpoint: parameter '" + name + "' has shape [" +
                               std::to_string(rows) + ", " + std::to_string(cols) + "], expected " +
                               shape_string(t.value()));
    }
    Matrix& v = t.mutable_value();
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = std::bit_cast<double>(read_uint(is, 8));
  }
  return model;
}

void save_checkpoint(const std::string& path, const SgtModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  save_checkpoint(os, model);
}

SgtModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  return load_checkpoint(is);
}

}  // namespace sgt
