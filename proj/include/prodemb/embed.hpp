#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "prodemb/corpus.hpp"
#include "prodemb/model.hpp"
#include "prodemb/tokenizer.hpp"
#include "prodemb/word2vec.hpp"

namespace prodemb {

// Persisted map product-id -> dense vector with model provenance tag.
// Vectors are held and stored at 32-bit precision; composition happens in
// 64-bit and is rounded on insert.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  EmbeddingStore(size_t dim, std::string tag) : dim_(dim), tag_(std::move(tag)) {}

  void insert(const std::string& id, const std::vector<double>& vector);
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  std::vector<double> vector_of(const std::string& id) const;  // throws if absent
  size_t dim() const { return dim_; }
  size_t count() const { return ids_.size(); }
  const std::string& tag() const { return tag_; }
  const std::vector<std::string>& ids() const { return ids_; }

  void write(const std::string& path) const;
  static EmbeddingStore read(const std::string& path);

 private:
  size_t dim_ = 0;
  std::string tag_;
  std::vector<std::string> ids_;
  std::vector<float> data_;  // count x dim
  std::unordered_map<std::string, size_t> index_;
};

// Mean of the last-hidden states over the (un-padded) product sentence run
// with a bidirectional mask.
std::vector<double> product_embedding(const TransformerWeights& w, const ModelConfig& cfg,
                                      const BpeVocab& vocab, const Product& p);

// Mean of in-vocabulary word vectors of the product sentence; OOV words are
// excluded from the mean. Throws when every word is OOV.
std::vector<double> product_embedding_w2v(const W2VModel& model, const Product& p);
std::vector<double> product_embedding_w2v(const LoadedWordVectors& vectors, const Product& p);

// Exact arithmetic means. All throw on empty input.
std::vector<double> mean_vector(const std::vector<std::vector<double>>& vectors);
inline std::vector<double> session_vector(const std::vector<std::vector<double>>& first_n_minus_1) {
  return mean_vector(first_n_minus_1);
}
inline std::vector<double> post_embedding(const std::vector<std::vector<double>>& tagged) {
  return mean_vector(tagged);
}
inline std::vector<double> user_embedding(const std::vector<std::vector<double>>& top_medoids) {
  return mean_vector(top_medoids);
}

// u.v / (|u||v|); a zero vector scores 0 (flagged via zero_hit when given).
double cosine(const std::vector<double>& u, const std::vector<double>& v,
              bool* zero_hit = nullptr);

// Extracts one vector per catalog product. n_threads > 1 parallelizes over
// products; output is identical regardless of thread count.
EmbeddingStore extract_transformer_store(const TransformerWeights& w, const ModelConfig& cfg,
                                         const BpeVocab& vocab, const Catalog& catalog,
                                         const std::string& tag, size_t n_threads = 1);

EmbeddingStore extract_w2v_store(const LoadedWordVectors& vectors, const Catalog& catalog,
                                 const std::string& tag);

}  // namespace prodemb
