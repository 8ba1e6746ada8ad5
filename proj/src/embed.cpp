#include "prodemb/embed.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace prodemb {

void EmbeddingStore::insert(const std::string& id, const std::vector<double>& vector) {
  if (dim_ == 0) throw std::logic_error("embedding store: dimension not set");
  if (vector.size() != dim_)
    throw std::invalid_argument("embedding store: vector for '" + id + "' has length " +
                                std::to_string(vector.size()) + ", expected " +
                                std::to_string(dim_));
  if (index_.count(id))
    throw std::invalid_argument("embedding store: duplicate id '" + id + "'");
  for (double x : vector)
    if (!std::isfinite(x))
      throw std::invalid_argument("embedding store: non-finite value for '" + id + "'");
  index_.emplace(id, ids_.size());
  ids_.push_back(id);
  for (double x : vector) data_.push_back(static_cast<float>(x));
}

std::vector<double> EmbeddingStore::vector_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end())
    throw std::out_of_range("embedding store: id '" + id + "' not present");
  const float* row = data_.data() + it->second * dim_;
  return std::vector<double>(row, row + dim_);
}

namespace {

constexpr char kStoreMagic[8] = {'P', 'E', 'M', 'B', 'S', 'T', 'R', '1'};
constexpr uint32_t kStoreVersion = 1;

uint64_t fnv1a64(const char* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  for (size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void append_pod(std::string& buf, T v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("embedding store '" + path + "': unexpected end of file");
  return v;
}

}  // namespace

void EmbeddingStore::write(const std::string& path) const {
  std::string payload;
  payload.reserve(data_.size() * sizeof(float) + ids_.size() * 16);
  for (size_t i = 0; i < ids_.size(); ++i) {
    append_pod<uint32_t>(payload, static_cast<uint32_t>(ids_[i].size()));
    payload.append(ids_[i]);
    payload.append(reinterpret_cast<const char*>(data_.data() + i * dim_), dim_ * sizeof(float));
  }
  uint64_t checksum = fnv1a64(payload.data(), payload.size());

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(kStoreMagic, sizeof kStoreMagic);
  std::string header;
  append_pod<uint32_t>(header, kStoreVersion);
  append_pod<uint32_t>(header, static_cast<uint32_t>(dim_));
  append_pod<uint64_t>(header, static_cast<uint64_t>(ids_.size()));
  append_pod<uint32_t>(header, static_cast<uint32_t>(tag_.size()));
  header.append(tag_);
  append_pod<uint64_t>(header, checksum);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

EmbeddingStore EmbeddingStore::read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open embedding store '" + path + "'");
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kStoreMagic, sizeof magic) != 0)
    throw std::runtime_error("'" + path + "' is not an embedding store (bad magic)");
  uint32_t version = read_pod<uint32_t>(f, path);
  if (version != kStoreVersion)
    throw std::runtime_error("embedding store '" + path + "': unsupported version " +
                             std::to_string(version));
  EmbeddingStore store;
  store.dim_ = read_pod<uint32_t>(f, path);
  uint64_t count = read_pod<uint64_t>(f, path);
  uint32_t tag_len = read_pod<uint32_t>(f, path);
  store.tag_.resize(tag_len);
  f.read(store.tag_.data(), tag_len);
  uint64_t checksum = read_pod<uint64_t>(f, path);

  std::string payload((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (fnv1a64(payload.data(), payload.size()) != checksum)
    throw std::runtime_error("embedding store '" + path + "': checksum mismatch");

  size_t off = 0;
  auto take = [&](void* dst, size_t n) {
    if (off + n > payload.size())
      throw std::runtime_error("embedding store '" + path + "': truncated payload");
    std::memcpy(dst, payload.data() + off, n);
    off += n;
  };
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t id_len = 0;
    take(&id_len, sizeof id_len);
    std::string id(id_len, '\0');
    take(id.data(), id_len);
    std::vector<float> row(store.dim_);
    take(row.data(), store.dim_ * sizeof(float));
    if (store.index_.count(id))
      throw std::runtime_error("embedding store '" + path + "': duplicate id '" + id + "'");
    store.index_.emplace(id, store.ids_.size());
    store.ids_.push_back(std::move(id));
    store.data_.insert(store.data_.end(), row.begin(), row.end());
  }
  if (off != payload.size())
    throw std::runtime_error("embedding store '" + path + "': count does not match records");
  return store;
}

std::vector<double> product_embedding(const TransformerWeights& w, const ModelConfig& cfg,
                                      const BpeVocab& vocab, const Product& p) {
  std::vector<int> ids = encode(product_sentence(p), vocab);
  if (ids.empty())
    throw std::invalid_argument("product '" + p.id + "' tokenizes to an empty sequence");
  if (ids.size() > cfg.max_len) ids.resize(cfg.max_len);
  Tape tape;
  NoGradGuard ng(tape);
  auto mask = AttentionMask::bidirectional(ids.size(), ids.size());
  auto res = forward(ids, mask, w, cfg, tape, {});
  std::vector<double> out(cfg.d_model, 0.0);
  for (size_t t = 0; t < ids.size(); ++t)
    for (size_t j = 0; j < cfg.d_model; ++j) out[j] += res.hidden->data[t * cfg.d_model + j];
  for (double& x : out) x /= static_cast<double>(ids.size());
  return out;
}

namespace {

std::vector<double> w2v_sentence_mean(const Product& p, size_t dim,
                                      const std::function<const std::vector<double>*(
                                          const std::string&)>& lookup) {
  std::istringstream is(product_sentence(p));
  std::string word;
  std::vector<double> out(dim, 0.0);
  size_t used = 0;
  while (is >> word) {
    const std::vector<double>* vec = lookup(word);
    if (!vec) continue;  // OOV words are excluded from the mean
    for (size_t j = 0; j < dim; ++j) out[j] += (*vec)[j];
    ++used;
  }
  if (used == 0)
    throw std::invalid_argument("product '" + p.id + "': every sentence word is out of vocabulary");
  for (double& x : out) x /= static_cast<double>(used);
  return out;
}

}  // namespace

std::vector<double> product_embedding_w2v(const W2VModel& model, const Product& p) {
  return w2v_sentence_mean(p, model.dim, [&](const std::string& w) -> const std::vector<double>* {
    static thread_local std::vector<double> tmp;
    int id = model.vocab.id_of(w);
    if (id < 0) return nullptr;
    const double* row = model.input_row(id);
    tmp.assign(row, row + model.dim);
    return &tmp;
  });
}

std::vector<double> product_embedding_w2v(const LoadedWordVectors& vectors, const Product& p) {
  return w2v_sentence_mean(p, vectors.dim,
                           [&](const std::string& w) -> const std::vector<double>* {
                             auto it = vectors.index.find(w);
                             return it == vectors.index.end()
                                        ? nullptr
                                        : &vectors.vectors[static_cast<size_t>(it->second)];
                           });
}

std::vector<double> mean_vector(const std::vector<std::vector<double>>& vectors) {
  if (vectors.empty()) throw std::invalid_argument("mean_vector: empty input");
  std::vector<double> out(vectors[0].size(), 0.0);
  for (const auto& v : vectors) {
    if (v.size() != out.size()) throw std::invalid_argument("mean_vector: mixed dimensions");
    for (size_t j = 0; j < v.size(); ++j) out[j] += v[j];
  }
  for (double& x : out) x /= static_cast<double>(vectors.size());
  return out;
}

double cosine(const std::vector<double>& u, const std::vector<double>& v, bool* zero_hit) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine: dimension mismatch");
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) {
    if (zero_hit) *zero_hit = true;
    return 0.0;
  }
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

EmbeddingStore extract_transformer_store(const TransformerWeights& w, const ModelConfig& cfg,
                                         const BpeVocab& vocab, const Catalog& catalog,
                                         const std::string& tag, size_t n_threads) {
  const auto& products = catalog.products();
  std::vector<std::vector<double>> rows(products.size());
  n_threads = std::max<size_t>(1, n_threads);
  if (n_threads == 1) {
    for (size_t i = 0; i < products.size(); ++i)
      rows[i] = product_embedding(w, cfg, vocab, products[i]);
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(n_threads);
    for (size_t th = 0; th < n_threads; ++th) {
      workers.emplace_back([&, th]() {
        try {
          for (size_t i = th; i < products.size(); i += n_threads)
            rows[i] = product_embedding(w, cfg, vocab, products[i]);
        } catch (...) {
          errors[th] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  EmbeddingStore store(cfg.d_model, tag);
  for (size_t i = 0; i < products.size(); ++i) store.insert(products[i].id, rows[i]);
  return store;
}

EmbeddingStore extract_w2v_store(const LoadedWordVectors& vectors, const Catalog& catalog,
                                 const std::string& tag) {
  EmbeddingStore store(vectors.dim, tag);
  for (const auto& p : catalog.products())
    store.insert(p.id, product_embedding_w2v(vectors, p));
  return store;
}

}  // namespace prodemb
