#include <doctest.h>

#include <cmath>
#include <vector>

#include "prodemb/tensor.hpp"
#include "test_util.hpp"

using namespace prodemb;
using testutil::check_gradients;
using testutil::fill_random;

namespace {

// Triple-loop reference used as the matmul oracle.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 size_t m, size_t k, size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j)
      for (size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

}  // namespace

TEST_CASE("matmul basics") {
  Tape tape;
  Tensor i2 = make_tensor({2, 2}, {1, 0, 0, 1});
  Tensor a = make_tensor({2, 2}, {1, 2, 3, 4});
  CHECK(tape.matmul(i2, a)->data == std::vector<double>{1, 2, 3, 4});

  Tensor b = make_tensor({2, 2}, {5, 6, 7, 8});
  auto c = tape.matmul(a, b);
  CHECK(c->data == naive_matmul(a->data, b->data, 2, 2, 2));
  CHECK(c->data == std::vector<double>{19, 22, 43, 50});

  Tensor z = make_tensor({1, 3});
  Tensor any = make_tensor({3, 4});
  Rng rng(7);
  fill_random(any, rng);
  Tensor zc = tape.matmul(z, any);
  for (double v : zc->data) CHECK(v == 0.0);

  CHECK_THROWS_WITH_AS(tape.matmul(make_tensor({2, 3}), make_tensor({2, 3})),
                       doctest::Contains("[2x3]"), std::invalid_argument);
}

TEST_CASE("matmul matches naive oracle on random shapes") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    size_t m = 1 + rng.below(6), k = 1 + rng.below(6), n = 1 + rng.below(6);
    Tensor a = make_tensor({m, k});
    Tensor b = make_tensor({k, n});
    fill_random(a, rng);
    fill_random(b, rng);
    Tape tape;
    auto c = tape.matmul(a, b);
    auto ref = naive_matmul(a->data, b->data, m, k, n);
    for (size_t i = 0; i < ref.size(); ++i) CHECK(c->data[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("softmax examples") {
  Tape tape;
  auto y = tape.softmax(make_tensor({3}, {0, 0, 0}), -1);
  for (double v : y->data) CHECK(v == doctest::Approx(1.0 / 3));

  auto y2 = tape.softmax(make_tensor({2}, {0.0, std::log(2.0)}), -1);
  CHECK(y2->data[0] == doctest::Approx(1.0 / 3));
  CHECK(y2->data[1] == doctest::Approx(2.0 / 3));

  auto y3 = tape.softmax(make_tensor({2}, {1000.0, 1000.0}), -1);
  CHECK(y3->data[0] == doctest::Approx(0.5));
  CHECK(y3->data[1] == doctest::Approx(0.5));

  CHECK_THROWS_AS(tape.softmax(make_tensor({2, 2}), 2), std::invalid_argument);
}

TEST_CASE("softmax rows sum to one for any finite input") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    size_t rows = 1 + rng.below(4), cols = 1 + rng.below(8);
    Tensor x = make_tensor({rows, cols});
    for (double& v : x->data) v = rng.normal(0, 1) * std::pow(10.0, rng.range(0, 3));
    Tape tape;
    auto y = tape.softmax(x, 1);
    for (size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (size_t c = 0; c < cols; ++c) {
        CHECK(y->data[r * cols + c] >= 0.0);
        s += y->data[r * cols + c];
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("layer_norm examples") {
  Tape tape;
  Tensor g1 = make_tensor({2}, {1, 1});
  Tensor b0 = make_tensor({2}, {0, 0});
  auto y = tape.layer_norm(make_tensor({2}, {1, 3}), g1, b0, 1e-12);
  CHECK(y->data[0] == doctest::Approx(-1.0));
  CHECK(y->data[1] == doctest::Approx(1.0));

  Tensor g3 = make_tensor({3}, {1, 1, 1});
  Tensor b3 = make_tensor({3}, {0, 0, 0});
  auto yc = tape.layer_norm(make_tensor({3}, {5, 5, 5}), g3, b3, 1e-5);
  for (double v : yc->data) CHECK(v == doctest::Approx(0.0));

  Tensor gz = make_tensor({3}, {0, 0, 0});
  auto yz = tape.layer_norm(make_tensor({3}, {-2, 0, 9}), gz, b3, 1e-5);
  for (double v : yz->data) CHECK(v == 0.0);
}

TEST_CASE("cross_entropy examples") {
  Tape tape;
  size_t v = 30000;
  auto loss = tape.cross_entropy(make_tensor({1, v}), {42});
  CHECK(loss->scalar() == doctest::Approx(std::log(30000.0)).epsilon(1e-9));

  Tensor hot = make_tensor({1, 4});
  hot->data[2] = 1e4;  // one-hot magnitude drives the loss to zero
  CHECK(tape.cross_entropy(hot, {2})->scalar() == doctest::Approx(0.0));

  auto l2 = tape.cross_entropy(make_tensor({2, 2}), {0, 1});
  CHECK(l2->scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  CHECK_THROWS_AS(tape.cross_entropy(make_tensor({1, 4}), {4}), std::out_of_range);
  CHECK_THROWS_AS(tape.cross_entropy(make_tensor({1, 4}), {kIgnoreTarget}),
                  std::invalid_argument);
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives all-ones gradient") {
    Tensor x = make_tensor({3, 2}, true, "x");
    Rng rng(5);
    fill_random(x, rng);
    Tape tape;
    tape.backward(tape.sum(x));
    for (double g : x->grad) CHECK(g == 1.0);
  }
  SUBCASE("product of scalars swaps gradients") {
    Tensor x = make_tensor({1}, {3.0}, true, "x");
    Tensor y = make_tensor({1}, {-7.0}, true, "y");
    Tape tape;
    tape.backward(tape.mul(x, y));
    CHECK(x->grad[0] == -7.0);
    CHECK(y->grad[0] == 3.0);
  }
  SUBCASE("fan-out accumulates additively") {
    Tensor x = make_tensor({2}, {1.0, 2.0}, true, "x");
    Tape tape;
    tape.backward(tape.sum(tape.add(x, x)));
    CHECK(x->grad[0] == 2.0);
    CHECK(x->grad[1] == 2.0);
  }
  SUBCASE("non-scalar loss rejected") {
    Tensor x = make_tensor({2}, true, "x");
    Tape tape;
    auto y = tape.add(x, x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  }
  SUBCASE("second backward without reset errors") {
    Tensor x = make_tensor({2}, {1, 2}, true, "x");
    Tape tape;
    auto loss = tape.sum(x);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
  }
}

TEST_CASE("three-layer MLP gradients match finite differences") {
  Rng rng(17);
  Tensor x = make_tensor({4, 8}, true, "x");
  Tensor w1 = make_tensor({8, 16}, true, "w1");
  Tensor b1 = make_tensor({16}, true, "b1");
  Tensor w2 = make_tensor({16, 8}, true, "w2");
  Tensor b2 = make_tensor({8}, true, "b2");
  Tensor w3 = make_tensor({8, 4}, true, "w3");
  for (auto& t : {x, w1, b1, w2, b2, w3}) fill_random(t, rng, 0.5);
  std::vector<int> targets{1, 3, 0, 2};

  auto forward = [&](Tape& tape) {
    Tensor h = tape.gelu(tape.add_rowwise(tape.matmul(x, w1), b1));
    h = tape.gelu(tape.add_rowwise(tape.matmul(h, w2), b2));
    return tape.cross_entropy(tape.matmul(h, w3), targets);
  };
  auto res = check_gradients({x, w1, b1, w2, b2, w3}, forward, rng, 0);
  CAPTURE(res.worst);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("every primitive op passes a finite-difference check") {
  Rng rng(23);
  // Random read-out weights make the scalar loss sensitive to each output.
  auto weighted_sum = [&](Tape& tape, const Tensor& y, const Tensor& r) {
    return tape.sum(tape.mul(y, r));
  };

  for (int trial = 0; trial < 10; ++trial) {
    size_t m = 2 + rng.below(3), k = 2 + rng.below(3), n = 2 + rng.below(3);
    Tensor a = make_tensor({m, k}, true, "a");
    Tensor b = make_tensor({k, n}, true, "b");
    Tensor bt = make_tensor({n, k}, true, "bt");
    Tensor c = make_tensor({m, k}, true, "c");
    Tensor bias = make_tensor({k}, true, "bias");
    Tensor gamma = make_tensor({k}, true, "gamma");
    Tensor beta = make_tensor({k}, true, "beta");
    Tensor rmk = make_tensor({m, k});
    Tensor rmn = make_tensor({m, n});
    for (auto& t : {a, b, bt, c, bias, gamma, beta}) fill_random(t, rng, 0.8);
    fill_random(rmk, rng);
    fill_random(rmn, rng);

    struct Case {
      std::string name;
      std::vector<Tensor> params;
      std::function<Tensor(Tape&)> fn;
    };
    std::vector<Case> cases{
        {"matmul", {a, b}, [&](Tape& t) { return weighted_sum(t, t.matmul(a, b), rmn); }},
        {"matmul_nt", {a, bt}, [&](Tape& t) { return weighted_sum(t, t.matmul_nt(a, bt), rmn); }},
        {"add", {a, c}, [&](Tape& t) { return weighted_sum(t, t.add(a, c), rmk); }},
        {"add_rowwise",
         {a, bias},
         [&](Tape& t) { return weighted_sum(t, t.add_rowwise(a, bias), rmk); }},
        {"mul", {a, c}, [&](Tape& t) { return weighted_sum(t, t.mul(a, c), rmk); }},
        {"scale", {a}, [&](Tape& t) { return weighted_sum(t, t.scale(a, -1.7), rmk); }},
        {"softmax", {a}, [&](Tape& t) { return weighted_sum(t, t.softmax(a, 1), rmk); }},
        {"layer_norm",
         {a, gamma, beta},
         [&](Tape& t) { return weighted_sum(t, t.layer_norm(a, gamma, beta, 1e-5), rmk); }},
        {"gelu", {a}, [&](Tape& t) { return weighted_sum(t, t.gelu(a), rmk); }},
        {"slice_concat",
         {a},
         [&](Tape& t) {
           auto left = t.slice_cols(a, 0, 1);
           auto right = t.slice_cols(a, 1, k);
           return weighted_sum(t, t.concat_cols({left, right}), rmk);
         }},
        {"cross_entropy",
         {a},
         [&](Tape& t) {
           std::vector<int> targets(m);
           for (size_t i = 0; i < m; ++i) targets[i] = static_cast<int>(i % k);
           return t.cross_entropy(a, targets);
         }},
    };
    for (auto& cs : cases) {
      auto res = check_gradients(cs.params, cs.fn, rng, 0);
      CAPTURE(cs.name);
      CAPTURE(res.worst);
      CHECK(res.max_rel_err < 1e-4);
    }
  }

  // embedding_rows: gathered rows get gradient, others stay zero
  Tensor table = make_tensor({5, 3}, true, "table");
  fill_random(table, rng);
  Tensor r = make_tensor({3, 3});
  fill_random(r, rng);
  std::vector<int> ids{4, 0, 4};
  auto res = check_gradients(
      {table},
      [&](Tape& t) { return t.sum(t.mul(t.embedding_rows(table, ids), r)); }, rng, 0);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(make_tensor({2, 3}, {1.0, 2.0}), std::invalid_argument);
  Tensor t = make_tensor({2, 2});
  CHECK(shape_numel(t->shape) == t->numel());
  t->ensure_grad();
  CHECK(t->grad.size() == t->data.size());
}
