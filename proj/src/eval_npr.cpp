#include "prodemb/eval_npr.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <thread>

#include "prodemb/rng.hpp"

namespace prodemb {

void MrrReport::finalize() {
  double sum = 0.0;
  for (const auto& q : queries) sum += 1.0 / static_cast<double>(q.rank);
  mrr = queries.empty() ? 0.0 : sum / static_cast<double>(queries.size());
}

std::vector<EvalSession> build_eval_sessions(const std::vector<Session>& sessions,
                                             const Catalog& catalog) {
  std::vector<EvalSession> out;
  for (const Session& s : sessions) {
    Session sorted = s;
    sorted.sort_events();
    // (category, gender) -> product ids in timestamp order
    std::map<std::pair<std::string, std::string>, std::vector<std::string>> groups;
    std::vector<std::pair<std::string, std::string>> group_order;
    for (const auto& e : sorted.events) {
      const Product& p = catalog.by_id(e.product_id);
      std::pair<std::string, std::string> key{*p.attribute("category"), *p.attribute("gender")};
      auto [it, inserted] = groups.try_emplace(key);
      if (inserted) group_order.push_back(key);
      it->second.push_back(e.product_id);
    }
    for (const auto& key : group_order) {
      auto& ids = groups[key];
      if (ids.size() < 3) continue;
      EvalSession es;
      es.product_ids = std::move(ids);
      es.category = key.first;
      es.gender = key.second;
      out.push_back(std::move(es));
    }
  }
  return out;
}

std::vector<std::string> sample_negatives(const std::string& positive_id, const Catalog& catalog,
                                          const std::vector<std::string>& session_ids, size_t k,
                                          uint64_t seed) {
  const Product& pos = catalog.by_id(positive_id);
  const std::string cat = *pos.attribute("category");
  const std::string gen = *pos.attribute("gender");
  std::vector<std::string> pool;
  for (const Product& p : catalog.products()) {
    if (*p.attribute("category") != cat || *p.attribute("gender") != gen) continue;
    if (std::find(session_ids.begin(), session_ids.end(), p.id) != session_ids.end()) continue;
    pool.push_back(p.id);
  }
  if (pool.size() < k) return {};
  Rng rng(derive_seed(seed, 0x6e));
  rng.shuffle(pool);
  pool.resize(k);
  return pool;
}

size_t rank_query(const NprQuery& q, const EmbeddingStore& store) {
  std::vector<std::vector<double>> history;
  for (const auto& id : q.session_ids) history.push_back(store.vector_of(id));
  std::vector<double> sv = session_vector(history);

  struct Scored {
    double score;
    const std::string* id;
  };
  std::vector<Scored> cands;
  cands.push_back({cosine(sv, store.vector_of(q.positive_id)), &q.positive_id});
  for (const auto& id : q.negative_ids)
    cands.push_back({cosine(sv, store.vector_of(id)), &id});
  std::sort(cands.begin(), cands.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return *a.id < *b.id;  // documented tie rule
  });
  for (size_t i = 0; i < cands.size(); ++i)
    if (*cands[i].id == q.positive_id) return i + 1;
  throw std::logic_error("rank_query: positive vanished from candidate list");
}

double mrr(const std::vector<size_t>& ranks) {
  if (ranks.empty()) throw std::invalid_argument("mrr: empty rank list");
  double sum = 0.0;
  for (size_t r : ranks) sum += 1.0 / static_cast<double>(r);
  return sum / static_cast<double>(ranks.size());
}

MrrReport evaluate_npr(const std::vector<Session>& sessions, const Catalog& catalog,
                       const EmbeddingStore& store, const NprOptions& opts) {
  auto eval_sessions = build_eval_sessions(sessions, catalog);
  MrrReport report;

  struct Slot {
    QueryResult result;
    bool skipped = false;
    bool present = false;
  };
  std::vector<Slot> slots(eval_sessions.size());

  auto run_one = [&](size_t i) {
    const EvalSession& es = eval_sessions[i];
    NprQuery q;
    q.positive_id = es.product_ids.back();
    q.session_ids.assign(es.product_ids.begin(), es.product_ids.end() - 1);
    q.negative_ids = sample_negatives(q.positive_id, catalog, es.product_ids, opts.k_negatives,
                                      derive_seed(opts.seed, 0x71, i));
    if (q.negative_ids.empty()) {
      slots[i].skipped = true;
      return;
    }
    slots[i].result = {i, q.positive_id, rank_query(q, store)};
    slots[i].present = true;
  };

  size_t n_threads = std::max<size_t>(1, opts.n_threads);
  if (n_threads == 1 || eval_sessions.size() < 2 * n_threads) {
    for (size_t i = 0; i < eval_sessions.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(n_threads);
    for (size_t th = 0; th < n_threads; ++th) {
      workers.emplace_back([&, th]() {
        try {
          for (size_t i = th; i < eval_sessions.size(); i += n_threads) run_one(i);
        } catch (...) {
          errors[th] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  for (auto& s : slots) {
    if (s.skipped) ++report.skipped;
    else if (s.present) report.queries.push_back(std::move(s.result));
  }
  report.finalize();
  return report;
}

void write_mrr_report(const MrrReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  char buf[128];
  std::snprintf(buf, sizeof buf, "queries\t%zu\nskipped\t%zu\nmrr\t%.9f\n",
                report.queries.size(), report.skipped, report.mrr);
  f << buf << "---\n";
  for (const auto& q : report.queries)
    f << q.session_index << '\t' << q.positive_id << '\t' << q.rank << '\n';
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace prodemb
