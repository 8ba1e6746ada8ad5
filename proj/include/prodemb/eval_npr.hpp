#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prodemb/corpus.hpp"
#include "prodemb/embed.hpp"

namespace prodemb {

// Products of one session sharing category and gender, in timestamp order.
struct EvalSession {
  std::vector<std::string> product_ids;  // >= 3
  std::string category;
  std::string gender;
};

struct NprQuery {
  std::vector<std::string> session_ids;  // first n-1 products
  std::string positive_id;               // the nth product
  std::vector<std::string> negative_ids; // exactly k, same category+gender
};

struct QueryResult {
  size_t session_index = 0;
  std::string positive_id;
  size_t rank = 0;  // 1-based among k+1 candidates
};

struct MrrReport {
  std::vector<QueryResult> queries;
  size_t skipped = 0;  // negative pool too small
  double mrr = 0.0;

  void finalize();  // recomputes mrr from queries
};

// Sorts each session by timestamp, groups by (category, gender), and keeps
// groups of >= 3 products as one EvalSession each, order preserved.
std::vector<EvalSession> build_eval_sessions(const std::vector<Session>& sessions,
                                             const Catalog& catalog);

// Uniform sample without replacement from same-(category, gender) products
// excluding every session member. Returns an empty list when the pool is
// smaller than k (the query is then skipped and counted).
std::vector<std::string> sample_negatives(const std::string& positive_id, const Catalog& catalog,
                                          const std::vector<std::string>& session_ids, size_t k,
                                          uint64_t seed);

// 1-based rank of the positive among positive + negatives by descending
// cosine with the session vector; ties broken by ascending product id.
size_t rank_query(const NprQuery& q, const EmbeddingStore& store);

double mrr(const std::vector<size_t>& ranks);

struct NprOptions {
  size_t k_negatives = 20;
  uint64_t seed = 1;
  size_t n_threads = 1;
};

MrrReport evaluate_npr(const std::vector<Session>& sessions, const Catalog& catalog,
                       const EmbeddingStore& store, const NprOptions& opts);

// Text table plus per-query lines: session_idx<TAB>positive_id<TAB>rank.
void write_mrr_report(const MrrReport& report, const std::string& path);

}  // namespace prodemb
