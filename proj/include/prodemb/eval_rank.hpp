#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prodemb/corpus.hpp"
#include "prodemb/embed.hpp"

namespace prodemb {

struct Post {
  std::string post_id;
  std::vector<std::string> product_ids;  // >= 1
};

struct UserHistory {
  std::string user_id;
  std::vector<std::pair<std::string, uint64_t>> engaged;  // (post_id, timestamp)
  std::vector<std::string> viewed;  // posts in both lists count as engaged
};

struct Merge {
  size_t into;      // surviving cluster label (the smaller of the pair)
  size_t from;      // absorbed cluster label
  double distance;  // Euclidean-scale Ward merge distance
  size_t new_size;
};

struct ClusterSet {
  // Disjoint, union-complete partition; members hold input indices.
  std::vector<std::vector<size_t>> clusters;
  std::vector<Merge> merges;  // non-decreasing distances
};

// Agglomerative Ward clustering via the Lance-Williams recurrence on squared
// Euclidean distances. Merging stops once the minimal candidate merge
// distance (Euclidean scale) exceeds the threshold. Clusters are labelled by
// their smallest original point index; ties pick the smallest (i, j) pair.
ClusterSet ward_cluster(const std::vector<std::vector<double>>& vectors,
                        double distance_threshold);

// Reference implementation that recomputes cluster means from raw points at
// every step. Used by tests and the acceptance suite as an oracle.
ClusterSet ward_cluster_naive(const std::vector<std::vector<double>>& vectors,
                              double distance_threshold);

// Member minimizing the summed Euclidean distance to all other members;
// index ties resolve to the smallest input index.
size_t medoid(const std::vector<std::vector<double>>& member_vectors);

// Medoids of all clusters sorted by engagement timestamp descending (post id
// ascending on ties), truncated to k.
std::vector<std::string> top_k_medoids(
    const ClusterSet& clusters, const std::vector<std::string>& post_ids,
    const std::vector<std::vector<double>>& post_vectors,
    const std::vector<std::pair<std::string, uint64_t>>& engagement, size_t k);

// Descending cosine against the user vector; post id ascending on ties.
std::vector<std::string> rank_posts(
    const std::vector<double>& user_vector,
    const std::vector<std::pair<std::string, std::vector<double>>>& candidates);

// Graded relevance: engaged = 2, viewed = 1; DCG discount log2(rank + 1);
// ideal ordering is engaged-then-viewed.
double ndcg(const std::vector<std::string>& ranked_ids, const UserHistory& history);

struct UserEval {
  std::string user_id;
  double ndcg = 0.0;
};

struct NdcgReport {
  std::vector<UserEval> users;
  size_t skipped = 0;  // users failing preconditions
  double mean_ndcg = 0.0;

  void finalize();
};

// Clusters the user's engaged posts, extracts medoids, averages the top-k
// into a user vector, ranks engaged + viewed posts, and scores NDCG.
// Returns nullopt when the user fails the preconditions (>= 1 engaged with a
// vector, >= 1 viewed).
std::optional<double> evaluate_user(
    const UserHistory& history,
    const std::function<const std::vector<double>*(const std::string&)>& post_vector,
    double distance_threshold, size_t k);

struct RankOptions {
  double distance_threshold = 1.0;
  size_t k = 10;
};

NdcgReport evaluate_posts_ranking(const std::vector<Post>& posts,
                                  const std::vector<UserHistory>& histories,
                                  const EmbeddingStore& product_store, const RankOptions& opts);

// post_id<TAB>product_id,product_id,...
void write_posts(const std::vector<Post>& posts, const std::string& path);
std::vector<Post> read_posts(const std::string& path);

// user_id<TAB>E:post:ts,...<TAB>V:post,...
void write_histories(const std::vector<UserHistory>& histories, const std::string& path);
std::vector<UserHistory> read_histories(const std::string& path);

void write_ndcg_report(const NdcgReport& report, const std::string& path);

// Desk-scale stand-in for the platform's posts/engagement data: posts tag
// archetype-consistent products; users engage mostly within their archetype
// and view mostly outside it.
struct PostsSynthConfig {
  size_t n_posts = 300;
  size_t n_users = 200;
  size_t products_per_post_min = 2;
  size_t products_per_post_max = 6;
  size_t engaged_min = 6;
  size_t engaged_max = 15;
  size_t viewed_min = 5;
  size_t viewed_max = 12;
  double viewed_other_archetype = 0.8;
  uint64_t seed = 1;
};

struct PostsSynthData {
  std::vector<Post> posts;
  std::vector<UserHistory> histories;
};

PostsSynthData generate_synthetic_posts(const SynthConfig& synth_cfg, const Catalog& catalog,
                                        const PostsSynthConfig& cfg);

}  // namespace prodemb
