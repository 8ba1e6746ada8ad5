#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "prodemb/eval_npr.hpp"
#include "prodemb/rng.hpp"

using namespace prodemb;

namespace {

Product make_product(std::string id, std::string category, std::string gender) {
  Product p;
  p.id = std::move(id);
  p.attributes = {{"category", std::move(category)}, {"gender", std::move(gender)}};
  return p;
}

Session make_session(std::vector<std::string> ids) {
  Session s;
  s.user_id = "u";
  uint64_t ts = 100;
  for (auto& id : ids) s.events.push_back({id, ts += 5, EventKind::Browse});
  return s;
}

// Catalog with `n` products per (category, gender) cell.
Catalog grid_catalog(const std::vector<std::pair<std::string, std::string>>& cells, size_t n) {
  Catalog c;
  size_t k = 0;
  for (const auto& [cat, gen] : cells)
    for (size_t i = 0; i < n; ++i)
      c.add(make_product("p" + std::to_string(k++), cat, gen));
  return c;
}

}  // namespace

TEST_CASE("build_eval_sessions groups by category and gender") {
  Catalog c;
  for (int i = 0; i < 5; ++i) c.add(make_product("d" + std::to_string(i), "dress", "women"));
  for (int i = 0; i < 2; ++i) c.add(make_product("s" + std::to_string(i), "shoes", "men"));

  SUBCASE("mixed session keeps only the big group") {
    auto sessions = build_eval_sessions(
        {make_session({"d0", "s0", "d1", "d2", "s1", "d3", "d4"})}, c);
    REQUIRE(sessions.size() == 1);
    CHECK(sessions[0].product_ids == std::vector<std::string>{"d0", "d1", "d2", "d3", "d4"});
    CHECK(sessions[0].category == "dress");
    CHECK(sessions[0].gender == "women");
  }
  SUBCASE("homogeneous three-product session survives") {
    auto sessions = build_eval_sessions({make_session({"d0", "d1", "d2"})}, c);
    CHECK(sessions.size() == 1);
  }
  SUBCASE("all-distinct categories yield nothing") {
    Catalog c2;
    c2.add(make_product("a", "x", "m"));
    c2.add(make_product("b", "y", "m"));
    c2.add(make_product("c", "z", "m"));
    CHECK(build_eval_sessions({make_session({"a", "b", "c"})}, c2).empty());
  }
  SUBCASE("products are sorted by timestamp before grouping") {
    Session s;
    s.user_id = "u";
    s.events = {{"d2", 300, EventKind::Browse},
                {"d0", 100, EventKind::Browse},
                {"d1", 200, EventKind::Browse}};
    auto sessions = build_eval_sessions({s}, c);
    REQUIRE(sessions.size() == 1);
    CHECK(sessions[0].product_ids == std::vector<std::string>{"d0", "d1", "d2"});
  }
}

TEST_CASE("sample_negatives") {
  Catalog c = grid_catalog({{"dress", "women"}}, 25);

  SUBCASE("same category and gender, session ids excluded") {
    std::vector<std::string> session{"p0", "p1", "p2"};
    auto negs = sample_negatives("p2", c, session, 20, 7);
    REQUIRE(negs.size() == 20);
    std::set<std::string> unique(negs.begin(), negs.end());
    CHECK(unique.size() == 20);
    for (const auto& id : negs) {
      CHECK(std::find(session.begin(), session.end(), id) == session.end());
      CHECK(id != "p2");
    }
  }
  SUBCASE("pool of exactly 20 gives those 20 shuffled") {
    std::vector<std::string> session{"p0", "p1", "p2", "p3", "p4"};
    auto negs = sample_negatives("p4", c, session, 20, 3);
    REQUIRE(negs.size() == 20);
    std::set<std::string> got(negs.begin(), negs.end());
    for (size_t i = 5; i < 25; ++i) CHECK(got.count("p" + std::to_string(i)));
  }
  SUBCASE("deterministic by seed") {
    auto a = sample_negatives("p0", c, {"p0"}, 20, 11);
    auto b = sample_negatives("p0", c, {"p0"}, 20, 11);
    CHECK(a == b);
  }
  SUBCASE("pool too small skips the query") {
    Catalog small = grid_catalog({{"dress", "women"}}, 10);
    CHECK(sample_negatives("p0", small, {"p0"}, 20, 1).empty());
  }
}

TEST_CASE("rank_query oracles") {
  EmbeddingStore store(4, "test");
  // session products and positive all share the same vector; negatives orthogonal
  store.insert("s1", {1, 0, 0, 0});
  store.insert("s2", {1, 0, 0, 0});
  store.insert("pos", {1, 0, 0, 0});
  store.insert("neg1", {0, 1, 0, 0});
  store.insert("neg2", {0, 0, 1, 0});

  SUBCASE("positive equal to the session vector ranks first") {
    NprQuery q{{"s1", "s2"}, "pos", {"neg1", "neg2"}};
    CHECK(rank_query(q, store) == 1);
  }
  SUBCASE("positive opposite, negatives equal: positive ranks last") {
    EmbeddingStore st(2, "test");
    st.insert("a", {1, 0});
    st.insert("opp", {-1, 0});
    st.insert("n1", {1, 0});
    st.insert("n2", {1, 0});
    NprQuery q{{"a"}, "opp", {"n1", "n2"}};
    CHECK(rank_query(q, st) == 3);
  }
  SUBCASE("missing embedding is an error") {
    NprQuery q{{"s1"}, "pos", {"ghost"}};
    CHECK_THROWS_AS(rank_query(q, store), std::out_of_range);
  }
  SUBCASE("cosine ties break by ascending product id") {
    EmbeddingStore st(2, "test");
    st.insert("hist", {1, 0});
    st.insert("zz_pos", {0, 1});
    st.insert("aa_neg", {0, 1});
    NprQuery q{{"hist"}, "zz_pos", {"aa_neg"}};
    CHECK(rank_query(q, st) == 2);  // equal scores, "aa_neg" < "zz_pos"
  }
}

TEST_CASE("random embeddings calibrate to the closed-form expected RR") {
  // E[RR] over a uniformly random rank among 21 candidates is H(21)/21.
  double expected = 0.0;
  for (int k = 1; k <= 21; ++k) expected += 1.0 / k;
  expected /= 21.0;
  CHECK(expected == doctest::Approx(0.1736).epsilon(1e-3));

  Rng rng(2024);
  size_t trials = 20000;
  double sum_rr = 0.0;
  for (size_t t = 0; t < trials; ++t) {
    EmbeddingStore store(8, "random");
    auto rand_vec = [&]() {
      std::vector<double> v(8);
      for (double& x : v) x = rng.normal();
      return v;
    };
    store.insert("hist", rand_vec());
    store.insert("pos", rand_vec());
    NprQuery q;
    q.session_ids = {"hist"};
    q.positive_id = "pos";
    for (int n = 0; n < 20; ++n) {
      std::string id = "n" + std::to_string(n);
      store.insert(id, rand_vec());
      q.negative_ids.push_back(id);
    }
    sum_rr += 1.0 / static_cast<double>(rank_query(q, store));
  }
  double mrr_hat = sum_rr / static_cast<double>(trials);
  CHECK(std::abs(mrr_hat - expected) < 0.01);
}

TEST_CASE("mrr") {
  CHECK(mrr({1, 1, 1}) == 1.0);
  CHECK(mrr({1, 2}) == doctest::Approx(0.75));
  CHECK_THROWS_AS(mrr({}), std::invalid_argument);
}

TEST_CASE("evaluate_npr end to end") {
  SUBCASE("identity oracle reaches MRR 1.0 exactly") {
    // each session lives on its own axis; everything else is orthogonal
    EmbeddingStore ident(6, "ident");
    Catalog cat;
    std::vector<Session> sessions;
    for (int s = 0; s < 5; ++s) {
      std::vector<std::string> ids;
      for (int i = 0; i < 3; ++i) {
        std::string id = "q" + std::to_string(s) + "_" + std::to_string(i);
        cat.add(make_product(id, "dress", "women"));
        std::vector<double> v(6, 0.0);
        v[static_cast<size_t>(s)] = 1.0;
        ident.insert(id, v);
        ids.push_back(id);
      }
      sessions.push_back(make_session(ids));
    }
    for (int i = 0; i < 25; ++i) {
      std::string id = "zfill" + std::to_string(i);
      cat.add(make_product(id, "dress", "women"));
      ident.insert(id, {0, 0, 0, 0, 0, 1});
    }
    NprOptions opts;
    opts.k_negatives = 20;
    auto report = evaluate_npr(sessions, cat, ident, opts);
    REQUIRE(report.queries.size() == 5);
    CHECK(report.mrr == 1.0);
  }

  SUBCASE("report is deterministic and scale invariant") {
    Catalog cat = grid_catalog({{"dress", "women"}}, 40);
    Rng rng(5);
    EmbeddingStore s1(6, "r"), s2(6, "r");
    for (const auto& p : cat.products()) {
      std::vector<double> v(6);
      for (double& x : v) x = rng.normal();
      std::vector<double> scaled = v;
      for (double& x : scaled) x *= 3.5;  // positive rescaling
      s1.insert(p.id, v);
      s2.insert(p.id, scaled);
    }
    std::vector<Session> sessions;
    for (int s = 0; s < 8; ++s) {
      std::vector<std::string> ids;
      for (int i = 0; i < 4; ++i) ids.push_back("p" + std::to_string((s * 4 + i) % 40));
      sessions.push_back(make_session(ids));
    }
    NprOptions opts;
    opts.seed = 77;
    auto r1 = evaluate_npr(sessions, cat, s1, opts);
    auto r2 = evaluate_npr(sessions, cat, s2, opts);
    REQUIRE(r1.queries.size() == r2.queries.size());
    for (size_t i = 0; i < r1.queries.size(); ++i) CHECK(r1.queries[i].rank == r2.queries[i].rank);

    opts.n_threads = 4;
    auto r4 = evaluate_npr(sessions, cat, s1, opts);
    write_mrr_report(r1, "/tmp/mrr1.tsv");
    write_mrr_report(r4, "/tmp/mrr4.tsv");
    std::ifstream a("/tmp/mrr1.tsv"), b("/tmp/mrr4.tsv");
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(sa.rfind("queries\t", 0) == 0);
  }

  SUBCASE("small pools are skipped and counted") {
    Catalog cat = grid_catalog({{"dress", "women"}}, 10);  // pool < 20 after exclusions
    EmbeddingStore store(3, "zeros");
    for (const auto& p : cat.products()) store.insert(p.id, {0, 0, 0});
    std::vector<Session> sessions{make_session({"p0", "p1", "p2"})};
    auto report = evaluate_npr(sessions, cat, store, {});
    CHECK(report.queries.empty());
    CHECK(report.skipped == 1);
  }
}
