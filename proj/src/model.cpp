#include "prodemb/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "prodemb/tokenizer.hpp"

namespace prodemb {

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_ff == 0 || max_len == 0)
    throw std::invalid_argument("model config: all dimensions must be positive");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  if (vocab_size == 0) throw std::invalid_argument("model config: vocab_size must be set");
  if (embed_factor >= d_model && embed_factor != 0)
    throw std::invalid_argument("model config: embed_factor must be < d_model");
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw std::invalid_argument("model config: dropout_p must be in [0, 1)");
}

size_t ModelConfig::param_count() const {
  size_t emb = embed_factor ? vocab_size * embed_factor + embed_factor * d_model
                            : vocab_size * d_model;
  size_t per_layer = 4 * d_model * d_model               // Wq, Wk, Wv, Wo
                     + 2 * d_model * d_ff + d_ff + d_model  // FFN
                     + 4 * d_model;                         // two layer norms
  return emb + max_len * d_model + n_layers * per_layer + 2 * d_model;
}

std::vector<Tensor> TransformerWeights::parameters() const {
  std::vector<Tensor> out;
  out.push_back(token_embedding);
  if (embedding_projection) out.push_back(embedding_projection);
  out.push_back(position_embedding);
  for (const Layer& l : layers) {
    out.push_back(l.ln1_gamma);
    out.push_back(l.ln1_beta);
    out.push_back(l.wq);
    out.push_back(l.wk);
    out.push_back(l.wv);
    out.push_back(l.wo);
    out.push_back(l.ln2_gamma);
    out.push_back(l.ln2_beta);
    out.push_back(l.ffn_w1);
    out.push_back(l.ffn_b1);
    out.push_back(l.ffn_w2);
    out.push_back(l.ffn_b2);
  }
  out.push_back(final_ln_gamma);
  out.push_back(final_ln_beta);
  return out;
}

size_t TransformerWeights::param_count() const {
  size_t n = 0;
  for (const auto& p : parameters()) n += p->numel();
  return n;
}

bool TransformerWeights::all_finite(std::string* offender) const {
  for (const auto& p : parameters()) {
    if (!p->all_finite()) {
      if (offender) *offender = p->name;
      return false;
    }
  }
  return true;
}

namespace {

Tensor init_matrix(Shape shape, Rng& rng, double stddev, const std::string& name) {
  Tensor t = make_tensor(std::move(shape), true, name);
  for (double& v : t->data) v = rng.truncated_normal(stddev);
  return t;
}

Tensor init_const(Shape shape, double value, const std::string& name) {
  Tensor t = make_tensor(std::move(shape), true, name);
  for (double& v : t->data) v = value;
  return t;
}

}  // namespace

TransformerWeights init_weights(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x57));
  constexpr double kStd = 0.02;
  TransformerWeights w;
  size_t emb_dim = cfg.embed_factor ? cfg.embed_factor : cfg.d_model;
  w.token_embedding = init_matrix({cfg.vocab_size, emb_dim}, rng, kStd, "token_embedding");
  if (cfg.embed_factor)
    w.embedding_projection =
        init_matrix({cfg.embed_factor, cfg.d_model}, rng, kStd, "embedding_projection");
  w.position_embedding = init_matrix({cfg.max_len, cfg.d_model}, rng, kStd, "position_embedding");
  for (size_t l = 0; l < cfg.n_layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    TransformerWeights::Layer layer;
    layer.ln1_gamma = init_const({cfg.d_model}, 1.0, p + "ln1_gamma");
    layer.ln1_beta = init_const({cfg.d_model}, 0.0, p + "ln1_beta");
    layer.wq = init_matrix({cfg.d_model, cfg.d_model}, rng, kStd, p + "wq");
    layer.wk = init_matrix({cfg.d_model, cfg.d_model}, rng, kStd, p + "wk");
    layer.wv = init_matrix({cfg.d_model, cfg.d_model}, rng, kStd, p + "wv");
    layer.wo = init_matrix({cfg.d_model, cfg.d_model}, rng, kStd, p + "wo");
    layer.ln2_gamma = init_const({cfg.d_model}, 1.0, p + "ln2_gamma");
    layer.ln2_beta = init_const({cfg.d_model}, 0.0, p + "ln2_beta");
    layer.ffn_w1 = init_matrix({cfg.d_model, cfg.d_ff}, rng, kStd, p + "ffn_w1");
    layer.ffn_b1 = init_const({cfg.d_ff}, 0.0, p + "ffn_b1");
    layer.ffn_w2 = init_matrix({cfg.d_ff, cfg.d_model}, rng, kStd, p + "ffn_w2");
    layer.ffn_b2 = init_const({cfg.d_model}, 0.0, p + "ffn_b2");
    w.layers.push_back(std::move(layer));
  }
  w.final_ln_gamma = init_const({cfg.d_model}, 1.0, "final_ln_gamma");
  w.final_ln_beta = init_const({cfg.d_model}, 0.0, "final_ln_beta");
  return w;
}

void AttentionMask::validate() const {
  for (size_t q = 0; q < t; ++q) {
    bool any = false;
    for (size_t k = 0; k < t && !any; ++k) any = allowed(q, k);
    if (!any)
      throw std::logic_error("attention mask: row " + std::to_string(q) + " is fully denied");
  }
}

AttentionMask AttentionMask::bidirectional(size_t t_total, size_t t_real) {
  if (t_real > t_total || t_real == 0)
    throw std::invalid_argument("attention mask: bad real length");
  AttentionMask m;
  m.t = t_total;
  m.allow.assign(t_total * t_total, 0);
  for (size_t q = 0; q < t_total; ++q) {
    if (q < t_real) {
      for (size_t k = 0; k < t_real; ++k) m.allow[q * t_total + k] = 1;
    } else {
      m.allow[q * t_total + q] = 1;
    }
  }
  return m;
}

AttentionMask AttentionMask::from_permutation(const std::vector<size_t>& order, size_t t_total) {
  size_t t_real = order.size();
  if (t_real == 0 || t_real > t_total)
    throw std::invalid_argument("attention mask: bad permutation length");
  std::vector<size_t> rank(t_real, SIZE_MAX);
  for (size_t r = 0; r < t_real; ++r) {
    if (order[r] >= t_real || rank[order[r]] != SIZE_MAX)
      throw std::invalid_argument("attention mask: order is not a permutation");
    rank[order[r]] = r;
  }
  AttentionMask m;
  m.t = t_total;
  m.allow.assign(t_total * t_total, 0);
  for (size_t q = 0; q < t_total; ++q) {
    if (q >= t_real) {
      m.allow[q * t_total + q] = 1;  // PAD row
      continue;
    }
    for (size_t k = 0; k < t_real; ++k)
      if (rank[k] < rank[q]) m.allow[q * t_total + k] = 1;
    if (rank[q] == 0) m.allow[q * t_total + q] = 1;  // self-only fallback, never scored
  }
  return m;
}

Tensor AttentionMask::bias_tensor() const {
  Tensor b = make_tensor({t, t});
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < t * t; ++i) b->data[i] = allow[i] ? 0.0 : neg_inf;
  return b;
}

namespace {

// Inverted dropout as an elementwise product with a 0 / 1/(1-p) mask.
Tensor apply_dropout(Tape& tape, const Tensor& x, const ForwardOptions& opts) {
  if (opts.dropout_p <= 0.0 || opts.dropout_rng == nullptr) return x;
  Tensor mask = make_tensor(x->shape);
  double keep = 1.0 - opts.dropout_p;
  for (double& v : mask->data)
    v = opts.dropout_rng->uniform01() < keep ? 1.0 / keep : 0.0;
  return tape.mul(x, mask);
}

}  // namespace

ForwardResult forward(const std::vector<int>& ids, const AttentionMask& mask,
                      const TransformerWeights& w, const ModelConfig& cfg, Tape& tape,
                      const ForwardOptions& opts) {
  size_t t = ids.size();
  if (t == 0) throw std::invalid_argument("forward: empty sequence");
  if (t > cfg.max_len)
    throw std::invalid_argument("forward: sequence length " + std::to_string(t) +
                                " exceeds max_len " + std::to_string(cfg.max_len));
  if (mask.t != t) throw std::invalid_argument("forward: mask size does not match sequence");
  for (int id : ids)
    if (id < 0 || static_cast<size_t>(id) >= cfg.vocab_size)
      throw std::out_of_range("forward: token id " + std::to_string(id) + " out of range");

  ForwardResult res;
  Tensor tok = tape.embedding_rows(w.token_embedding, ids);
  if (cfg.embed_factor) tok = tape.matmul(tok, w.embedding_projection);
  std::vector<int> positions(t);
  for (size_t i = 0; i < t; ++i) positions[i] = static_cast<int>(i);
  Tensor pos = tape.embedding_rows(w.position_embedding, positions);
  Tensor h = apply_dropout(tape, tape.add(tok, pos), opts);

  Tensor bias = mask.bias_tensor();
  size_t dh = cfg.head_dim();
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  if (opts.collect_attention) res.attentions.resize(cfg.n_layers);

  for (size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& layer = w.layers[l];
    Tensor a_in = tape.layer_norm(h, layer.ln1_gamma, layer.ln1_beta, 1e-5);
    Tensor q = tape.matmul(a_in, layer.wq);
    Tensor k = tape.matmul(a_in, layer.wk);
    Tensor v = tape.matmul(a_in, layer.wv);
    std::vector<Tensor> head_outs;
    head_outs.reserve(cfg.n_heads);
    if (opts.collect_attention) res.attentions[l].resize(cfg.n_heads);
    for (size_t hd = 0; hd < cfg.n_heads; ++hd) {
      size_t c0 = hd * dh, c1 = c0 + dh;
      Tensor qh = tape.slice_cols(q, c0, c1);
      Tensor kh = tape.slice_cols(k, c0, c1);
      Tensor vh = tape.slice_cols(v, c0, c1);
      Tensor scores = tape.add(tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dh), bias);
      Tensor probs = tape.softmax(scores, -1);
      if (opts.collect_attention) res.attentions[l][hd] = probs->data;
      head_outs.push_back(tape.matmul(probs, vh));
    }
    Tensor attn = tape.matmul(tape.concat_cols(head_outs), layer.wo);
    h = tape.add(h, apply_dropout(tape, attn, opts));

    Tensor f_in = tape.layer_norm(h, layer.ln2_gamma, layer.ln2_beta, 1e-5);
    Tensor f = tape.gelu(tape.add_rowwise(tape.matmul(f_in, layer.ffn_w1), layer.ffn_b1));
    f = tape.add_rowwise(tape.matmul(f, layer.ffn_w2), layer.ffn_b2);
    h = tape.add(h, apply_dropout(tape, f, opts));
  }

  res.hidden = tape.layer_norm(h, w.final_ln_gamma, w.final_ln_beta, 1e-5);
  if (cfg.embed_factor) {
    Tensor projected = tape.matmul_nt(res.hidden, w.embedding_projection);  // [T, E]
    res.logits = tape.matmul_nt(projected, w.token_embedding);              // [T, V]
  } else {
    res.logits = tape.matmul_nt(res.hidden, w.token_embedding);
  }
  return res;
}

AttentionExport export_attention(const std::vector<int>& ids, const TransformerWeights& w,
                                 const ModelConfig& cfg, const BpeVocab& vocab, size_t layer,
                                 size_t head) {
  if (layer >= cfg.n_layers)
    throw std::out_of_range("export_attention: layer " + std::to_string(layer) +
                            " out of range (n_layers " + std::to_string(cfg.n_layers) + ")");
  if (head >= cfg.n_heads)
    throw std::out_of_range("export_attention: head " + std::to_string(head) +
                            " out of range (n_heads " + std::to_string(cfg.n_heads) + ")");
  Tape tape;
  NoGradGuard ng(tape);
  ForwardOptions opts;
  opts.collect_attention = true;
  auto mask = AttentionMask::bidirectional(ids.size(), ids.size());
  auto res = forward(ids, mask, w, cfg, tape, opts);
  AttentionExport out;
  out.t = ids.size();
  out.matrix = res.attentions[layer][head];
  for (int id : ids) out.tokens.push_back(vocab.token_of(id));
  return out;
}

void write_attention_csv(const AttentionExport& exp, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << "token";
  for (const auto& tok : exp.tokens) f << ',' << tok;
  f << '\n';
  char buf[64];
  for (size_t q = 0; q < exp.t; ++q) {
    f << exp.tokens[q];
    for (size_t k = 0; k < exp.t; ++k) {
      std::snprintf(buf, sizeof buf, "%.9g", exp.matrix[q * exp.t + k]);
      f << ',' << buf;
    }
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'E', 'C', 'K', 'P', 'T', '0', '1'};
constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint: unexpected end of file");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  uint32_t n = read_pod<uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: unexpected end of file");
  return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path, bool store_f32) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_pod<uint32_t>(f, kCheckpointVersion);
  write_pod<uint32_t>(f, store_f32 ? 4 : 8);
  write_string(f, ckpt.preset);
  const ModelConfig& c = ckpt.config;
  write_pod<uint32_t>(f, static_cast<uint32_t>(c.n_layers));
  write_pod<uint32_t>(f, static_cast<uint32_t>(c.n_heads));
  write_pod<uint32_t>(f, static_cast<uint32_t>(c.d_model));
  write_pod<uint32_t>(f, static_cast<uint32_t>(c.d_ff));
  write_pod<uint32_t>(f, static_cast<uint32_t>(c.max_len));
  write_pod<uint32_t>(f, static_cast<uint32_t>(c.vocab_size));
  write_pod<uint32_t>(f, static_cast<uint32_t>(c.embed_factor));
  write_pod<double>(f, c.dropout_p);
  write_pod<uint64_t>(f, c.seed);

  std::ofstream mf(path + ".manifest", std::ios::binary);
  if (!mf) throw std::runtime_error("cannot open '" + path + ".manifest' for writing");
  size_t offset = 0;
  for (const auto& p : ckpt.weights.parameters()) {
    mf << p->name << '\t' << shape_str(p->shape) << '\t' << offset << '\t' << p->numel() << '\n';
    offset += p->numel();
    if (store_f32) {
      for (double v : p->data) write_pod<float>(f, static_cast<float>(v));
    } else {
      f.write(reinterpret_cast<const char*>(p->data.data()),
              static_cast<std::streamsize>(p->data.size() * sizeof(double)));
    }
  }
  if (!f || !mf) throw std::runtime_error("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint file '" + path + "'");
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error("'" + path + "' is not a checkpoint file (bad magic)");
  uint32_t version = read_pod<uint32_t>(f);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint version " + std::to_string(version) + " unsupported");
  uint32_t dtype = read_pod<uint32_t>(f);
  if (dtype != 4 && dtype != 8) throw std::runtime_error("checkpoint: bad dtype width");

  Checkpoint ckpt;
  ckpt.preset = read_string(f);
  ckpt.config.n_layers = read_pod<uint32_t>(f);
  ckpt.config.n_heads = read_pod<uint32_t>(f);
  ckpt.config.d_model = read_pod<uint32_t>(f);
  ckpt.config.d_ff = read_pod<uint32_t>(f);
  ckpt.config.max_len = read_pod<uint32_t>(f);
  ckpt.config.vocab_size = read_pod<uint32_t>(f);
  ckpt.config.embed_factor = read_pod<uint32_t>(f);
  ckpt.config.dropout_p = read_pod<double>(f);
  ckpt.config.seed = read_pod<uint64_t>(f);
  ckpt.config.validate();

  ckpt.weights = init_weights(ckpt.config);
  for (const auto& p : ckpt.weights.parameters()) {
    for (double& v : p->data)
      v = dtype == 4 ? static_cast<double>(read_pod<float>(f)) : read_pod<double>(f);
  }
  return ckpt;
}

}  // namespace prodemb
