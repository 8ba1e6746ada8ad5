#include "prodemb/eval_rank.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "prodemb/rng.hpp"

namespace prodemb {

namespace {

double sq_euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void check_vectors(const std::vector<std::vector<double>>& vectors) {
  if (vectors.empty()) throw std::invalid_argument("ward_cluster: no vectors");
  for (const auto& v : vectors)
    if (v.size() != vectors[0].size())
      throw std::invalid_argument("ward_cluster: mixed dimensions");
}

// Shared scaffolding for the Lance-Williams and raw-point implementations:
// active cluster labels are the smallest member point index, merges pick the
// lexicographically smallest (i, j) pair on distance ties.
struct ActiveSet {
  std::vector<std::vector<size_t>> members;
  std::vector<uint8_t> active;

  explicit ActiveSet(size_t n) : members(n), active(n, 1) {
    for (size_t i = 0; i < n; ++i) members[i] = {i};
  }
  size_t count() const {
    size_t c = 0;
    for (uint8_t a : active) c += a;
    return c;
  }
};

ClusterSet finish(ActiveSet& set, std::vector<Merge> merges) {
  ClusterSet out;
  out.merges = std::move(merges);
  for (size_t i = 0; i < set.members.size(); ++i) {
    if (!set.active[i]) continue;
    std::sort(set.members[i].begin(), set.members[i].end());
    out.clusters.push_back(std::move(set.members[i]));
  }
  return out;
}

}  // namespace

ClusterSet ward_cluster(const std::vector<std::vector<double>>& vectors,
                        double distance_threshold) {
  check_vectors(vectors);
  if (distance_threshold <= 0.0)
    throw std::invalid_argument("ward_cluster: distance_threshold must be positive");
  size_t n = vectors.size();
  ActiveSet set(n);
  std::vector<size_t> size(n, 1);
  // Squared Ward distances; for singletons this is the squared Euclidean
  // distance, and sqrt(d2) is the reported merge distance.
  std::vector<double> d2(n * n, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) d2[i * n + j] = d2[j * n + i] = sq_euclid(vectors[i], vectors[j]);

  std::vector<Merge> merges;
  for (size_t remaining = n; remaining > 1; --remaining) {
    size_t bi = 0, bj = 0;
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i) {
      if (!set.active[i]) continue;
      for (size_t j = i + 1; j < n; ++j) {
        if (!set.active[j]) continue;
        if (d2[i * n + j] < best) {
          best = d2[i * n + j];
          bi = i;
          bj = j;
        }
      }
    }
    double dist = std::sqrt(best);
    if (dist > distance_threshold) break;

    size_t ni = size[bi], nj = size[bj];
    for (size_t k = 0; k < n; ++k) {
      if (!set.active[k] || k == bi || k == bj) continue;
      size_t nk = size[k];
      double upd = ((static_cast<double>(ni + nk)) * d2[bi * n + k] +
                    (static_cast<double>(nj + nk)) * d2[bj * n + k] -
                    static_cast<double>(nk) * best) /
                   static_cast<double>(ni + nj + nk);
      d2[bi * n + k] = d2[k * n + bi] = upd;
    }
    size[bi] = ni + nj;
    set.active[bj] = 0;
    set.members[bi].insert(set.members[bi].end(), set.members[bj].begin(), set.members[bj].end());
    set.members[bj].clear();
    merges.push_back({bi, bj, dist, size[bi]});
  }
  return finish(set, std::move(merges));
}

ClusterSet ward_cluster_naive(const std::vector<std::vector<double>>& vectors,
                              double distance_threshold) {
  check_vectors(vectors);
  if (distance_threshold <= 0.0)
    throw std::invalid_argument("ward_cluster_naive: distance_threshold must be positive");
  size_t n = vectors.size();
  size_t dim = vectors[0].size();
  ActiveSet set(n);

  auto centroid = [&](const std::vector<size_t>& members) {
    std::vector<double> mu(dim, 0.0);
    for (size_t m : members)
      for (size_t j = 0; j < dim; ++j) mu[j] += vectors[m][j];
    for (double& x : mu) x /= static_cast<double>(members.size());
    return mu;
  };

  std::vector<Merge> merges;
  for (size_t remaining = n; remaining > 1; --remaining) {
    size_t bi = 0, bj = 0;
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i) {
      if (!set.active[i]) continue;
      auto mu_i = centroid(set.members[i]);
      for (size_t j = i + 1; j < n; ++j) {
        if (!set.active[j]) continue;
        auto mu_j = centroid(set.members[j]);
        double si = static_cast<double>(set.members[i].size());
        double sj = static_cast<double>(set.members[j].size());
        // Ward merge cost from raw points: 2 * si*sj/(si+sj) * ||mu_i-mu_j||^2
        double d2 = 2.0 * si * sj / (si + sj) * sq_euclid(mu_i, mu_j);
        if (d2 < best) {
          best = d2;
          bi = i;
          bj = j;
        }
      }
    }
    double dist = std::sqrt(best);
    if (dist > distance_threshold) break;
    set.members[bi].insert(set.members[bi].end(), set.members[bj].begin(), set.members[bj].end());
    set.members[bj].clear();
    set.active[bj] = 0;
    merges.push_back({bi, bj, dist, set.members[bi].size()});
  }
  return finish(set, std::move(merges));
}

size_t medoid(const std::vector<std::vector<double>>& member_vectors) {
  if (member_vectors.empty()) throw std::invalid_argument("medoid: empty cluster");
  size_t best = 0;
  double best_sum = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < member_vectors.size(); ++i) {
    double s = 0.0;
    for (size_t j = 0; j < member_vectors.size(); ++j) {
      if (i == j) continue;
      s += std::sqrt(sq_euclid(member_vectors[i], member_vectors[j]));
    }
    if (s < best_sum) {
      best_sum = s;
      best = i;
    }
  }
  return best;
}

std::vector<std::string> top_k_medoids(
    const ClusterSet& clusters, const std::vector<std::string>& post_ids,
    const std::vector<std::vector<double>>& post_vectors,
    const std::vector<std::pair<std::string, uint64_t>>& engagement, size_t k) {
  std::unordered_map<std::string, uint64_t> ts;
  for (const auto& [id, t] : engagement) {
    auto it = ts.find(id);
    if (it == ts.end() || it->second < t) ts[id] = t;
  }
  struct Entry {
    std::string id;
    uint64_t t;
  };
  std::vector<Entry> medoids;
  for (const auto& cluster : clusters.clusters) {
    std::vector<std::vector<double>> members;
    for (size_t m : cluster) members.push_back(post_vectors[m]);
    const std::string& id = post_ids[cluster[medoid(members)]];
    auto it = ts.find(id);
    if (it == ts.end())
      throw std::invalid_argument("top_k_medoids: post '" + id + "' has no engagement timestamp");
    medoids.push_back({id, it->second});
  }
  std::sort(medoids.begin(), medoids.end(), [](const Entry& a, const Entry& b) {
    if (a.t != b.t) return a.t > b.t;
    return a.id < b.id;
  });
  if (medoids.size() > k) medoids.resize(k);
  std::vector<std::string> out;
  for (const auto& e : medoids) out.push_back(e.id);
  return out;
}

std::vector<std::string> rank_posts(
    const std::vector<double>& user_vector,
    const std::vector<std::pair<std::string, std::vector<double>>>& candidates) {
  struct Scored {
    double score;
    const std::string* id;
  };
  std::vector<Scored> scored;
  for (const auto& [id, vec] : candidates) scored.push_back({cosine(user_vector, vec), &id});
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return *a.id < *b.id;
  });
  std::vector<std::string> out;
  for (const auto& s : scored) out.push_back(*s.id);
  return out;
}

double ndcg(const std::vector<std::string>& ranked_ids, const UserHistory& history) {
  std::unordered_map<std::string, int> rel;
  for (const auto& v : history.viewed) rel[v] = 1;
  for (const auto& [e, t] : history.engaged) rel[e] = 2;  // engaged wins
  if (ranked_ids.size() != rel.size())
    throw std::invalid_argument("ndcg: ranked list does not cover engaged + viewed posts");

  double dcg = 0.0;
  std::vector<int> gains;
  std::unordered_set<std::string> seen;
  for (size_t r = 0; r < ranked_ids.size(); ++r) {
    auto it = rel.find(ranked_ids[r]);
    if (it == rel.end() || !seen.insert(ranked_ids[r]).second)
      throw std::invalid_argument("ndcg: ranked list is not a permutation of the history");
    double gain = std::pow(2.0, it->second) - 1.0;
    dcg += gain / std::log2(static_cast<double>(r) + 2.0);
    gains.push_back(it->second);
  }
  std::sort(gains.rbegin(), gains.rend());
  double idcg = 0.0;
  for (size_t r = 0; r < gains.size(); ++r)
    idcg += (std::pow(2.0, gains[r]) - 1.0) / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

void NdcgReport::finalize() {
  double sum = 0.0;
  for (const auto& u : users) sum += u.ndcg;
  mean_ndcg = users.empty() ? 0.0 : sum / static_cast<double>(users.size());
}

std::optional<double> evaluate_user(
    const UserHistory& history,
    const std::function<const std::vector<double>*(const std::string&)>& post_vector,
    double distance_threshold, size_t k) {
  // Engaged entries deduplicated by id (latest timestamp wins) and sorted by
  // post id so medoid index ties equal post-id ties.
  std::map<std::string, uint64_t> engaged;
  for (const auto& [id, t] : history.engaged) {
    auto it = engaged.find(id);
    if (it == engaged.end() || it->second < t) engaged[id] = t;
  }
  std::vector<std::string> viewed;
  for (const auto& v : history.viewed)
    if (!engaged.count(v) && std::find(viewed.begin(), viewed.end(), v) == viewed.end())
      viewed.push_back(v);
  if (engaged.empty() || viewed.empty()) return std::nullopt;

  std::vector<std::string> post_ids;
  std::vector<std::vector<double>> vectors;
  std::vector<std::pair<std::string, uint64_t>> engagement;
  for (const auto& [id, t] : engaged) {
    const std::vector<double>* v = post_vector(id);
    if (!v) throw std::out_of_range("evaluate_user: no vector for engaged post '" + id + "'");
    post_ids.push_back(id);
    vectors.push_back(*v);
    engagement.emplace_back(id, t);
  }

  ClusterSet clusters = ward_cluster(vectors, distance_threshold);
  auto top = top_k_medoids(clusters, post_ids, vectors, engagement, k);
  std::vector<std::vector<double>> top_vectors;
  for (const auto& id : top) top_vectors.push_back(*post_vector(id));
  std::vector<double> user_vec = user_embedding(top_vectors);

  std::vector<std::pair<std::string, std::vector<double>>> candidates;
  for (const auto& [id, t] : engaged) candidates.emplace_back(id, *post_vector(id));
  for (const auto& id : viewed) {
    const std::vector<double>* v = post_vector(id);
    if (!v) throw std::out_of_range("evaluate_user: no vector for viewed post '" + id + "'");
    candidates.emplace_back(id, *v);
  }
  UserHistory dedup;
  dedup.user_id = history.user_id;
  for (const auto& [id, t] : engaged) dedup.engaged.emplace_back(id, t);
  dedup.viewed = viewed;
  return ndcg(rank_posts(user_vec, candidates), dedup);
}

NdcgReport evaluate_posts_ranking(const std::vector<Post>& posts,
                                  const std::vector<UserHistory>& histories,
                                  const EmbeddingStore& product_store, const RankOptions& opts) {
  std::unordered_map<std::string, std::vector<double>> post_vectors;
  for (const Post& p : posts) {
    std::vector<std::vector<double>> tagged;
    for (const auto& pid : p.product_ids) tagged.push_back(product_store.vector_of(pid));
    post_vectors.emplace(p.post_id, post_embedding(tagged));
  }
  auto lookup = [&](const std::string& id) -> const std::vector<double>* {
    auto it = post_vectors.find(id);
    return it == post_vectors.end() ? nullptr : &it->second;
  };

  NdcgReport report;
  for (const UserHistory& h : histories) {
    auto score = evaluate_user(h, lookup, opts.distance_threshold, opts.k);
    if (!score) {
      ++report.skipped;
      continue;
    }
    report.users.push_back({h.user_id, *score});
  }
  report.finalize();
  return report;
}

void write_posts(const std::vector<Post>& posts, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const Post& p : posts) {
    f << p.post_id << '\t';
    for (size_t i = 0; i < p.product_ids.size(); ++i) f << (i ? "," : "") << p.product_ids[i];
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

namespace {

std::vector<std::string> split_str(const std::string& s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

[[noreturn]] void parse_fail(const std::string& path, size_t line, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

std::vector<Post> read_posts(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open posts file '" + path + "'");
  std::vector<Post> out;
  std::string line;
  size_t ln = 0;
  while (std::getline(f, line)) {
    ++ln;
    if (line.empty()) continue;
    auto fields = split_str(line, '\t');
    if (fields.size() != 2) parse_fail(path, ln, "expected post_id<TAB>products");
    Post p;
    p.post_id = fields[0];
    for (const auto& id : split_str(fields[1], ','))
      if (!id.empty()) p.product_ids.push_back(id);
    if (p.product_ids.empty()) parse_fail(path, ln, "post has no tagged products");
    out.push_back(std::move(p));
  }
  return out;
}

void write_histories(const std::vector<UserHistory>& histories, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const UserHistory& h : histories) {
    f << h.user_id << '\t';
    for (size_t i = 0; i < h.engaged.size(); ++i)
      f << (i ? "," : "") << "E:" << h.engaged[i].first << ':' << h.engaged[i].second;
    f << '\t';
    for (size_t i = 0; i < h.viewed.size(); ++i) f << (i ? "," : "") << "V:" << h.viewed[i];
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

std::vector<UserHistory> read_histories(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open histories file '" + path + "'");
  std::vector<UserHistory> out;
  std::string line;
  size_t ln = 0;
  while (std::getline(f, line)) {
    ++ln;
    if (line.empty()) continue;
    auto fields = split_str(line, '\t');
    if (fields.size() != 3) parse_fail(path, ln, "expected user_id<TAB>engaged<TAB>viewed");
    UserHistory h;
    h.user_id = fields[0];
    for (const auto& e : split_str(fields[1], ',')) {
      if (e.empty()) continue;
      auto parts = split_str(e, ':');
      if (parts.size() != 3 || parts[0] != "E") parse_fail(path, ln, "bad engaged entry '" + e + "'");
      try {
        h.engaged.emplace_back(parts[1], std::stoull(parts[2]));
      } catch (const std::exception&) {
        parse_fail(path, ln, "bad timestamp in '" + e + "'");
      }
    }
    for (const auto& v : split_str(fields[2], ',')) {
      if (v.empty()) continue;
      auto parts = split_str(v, ':');
      if (parts.size() != 2 || parts[0] != "V") parse_fail(path, ln, "bad viewed entry '" + v + "'");
      h.viewed.push_back(parts[1]);
    }
    out.push_back(std::move(h));
  }
  return out;
}

void write_ndcg_report(const NdcgReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  char buf[128];
  std::snprintf(buf, sizeof buf, "users\t%zu\nskipped\t%zu\nmean_ndcg\t%.9f\n",
                report.users.size(), report.skipped, report.mean_ndcg);
  f << buf << "---\n";
  for (const auto& u : report.users) {
    std::snprintf(buf, sizeof buf, "%s\t%.9f\n", u.user_id.c_str(), u.ndcg);
    f << buf;
  }
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

PostsSynthData generate_synthetic_posts(const SynthConfig& synth_cfg, const Catalog& catalog,
                                        const PostsSynthConfig& cfg) {
  if (cfg.n_posts == 0 || cfg.n_users == 0)
    throw std::invalid_argument("posts synth: counts must be positive");
  auto archetypes = build_archetypes(synth_cfg);
  auto weights = archetype_product_weights(synth_cfg, catalog, archetypes);
  const auto& products = catalog.products();

  PostsSynthData out;
  std::vector<std::vector<size_t>> posts_by_arch(archetypes.size());
  for (size_t i = 0; i < cfg.n_posts; ++i) {
    Rng rng(derive_seed(cfg.seed, 0x90, i));
    size_t a = i % archetypes.size();
    double total = 0.0;
    for (double w : weights[a]) total += w;
    size_t want = static_cast<size_t>(rng.range(
        static_cast<int64_t>(cfg.products_per_post_min),
        static_cast<int64_t>(cfg.products_per_post_max)));
    Post p;
    char idbuf[24];
    std::snprintf(idbuf, sizeof idbuf, "post%05zu", i);
    p.post_id = idbuf;
    std::set<size_t> chosen;
    for (size_t tries = 0; chosen.size() < want && tries < want * 20; ++tries)
      chosen.insert(rng.weighted_index(weights[a], total));
    for (size_t pi : chosen) p.product_ids.push_back(products[pi].id);
    posts_by_arch[a].push_back(out.posts.size());
    out.posts.push_back(std::move(p));
  }

  const uint64_t year = 365ULL * 24 * 3600;
  const uint64_t base_ts = 1600000000;
  for (size_t u = 0; u < cfg.n_users; ++u) {
    Rng rng(derive_seed(cfg.seed, 0x91, u));
    size_t a = u % archetypes.size();
    UserHistory h;
    char idbuf[24];
    std::snprintf(idbuf, sizeof idbuf, "hu%05zu", u);
    h.user_id = idbuf;

    const auto& own = posts_by_arch[a];
    size_t n_eng = std::min<size_t>(own.size(),
        static_cast<size_t>(rng.range(static_cast<int64_t>(cfg.engaged_min),
                                      static_cast<int64_t>(cfg.engaged_max))));
    auto eng_pick = rng.sample_without_replacement(own.size(), n_eng);
    std::unordered_set<std::string> engaged_ids;
    for (size_t idx : eng_pick) {
      const std::string& pid = out.posts[own[idx]].post_id;
      engaged_ids.insert(pid);
      h.engaged.emplace_back(pid, base_ts + rng.below(year));
    }

    size_t n_view = static_cast<size_t>(rng.range(static_cast<int64_t>(cfg.viewed_min),
                                                  static_cast<int64_t>(cfg.viewed_max)));
    for (size_t tries = 0; h.viewed.size() < n_view && tries < n_view * 30; ++tries) {
      size_t arch = a;
      if (archetypes.size() > 1 && rng.uniform01() < cfg.viewed_other_archetype) {
        arch = (a + 1 + rng.below(archetypes.size() - 1)) % archetypes.size();
      }
      const auto& pool = posts_by_arch[arch];
      if (pool.empty()) continue;
      const std::string& pid = out.posts[pool[rng.below(pool.size())]].post_id;
      if (engaged_ids.count(pid)) continue;
      if (std::find(h.viewed.begin(), h.viewed.end(), pid) != h.viewed.end()) continue;
      h.viewed.push_back(pid);
    }
    out.histories.push_back(std::move(h));
  }
  return out;
}

}  // namespace prodemb
