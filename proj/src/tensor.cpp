#include "prodemb/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace prodemb {

size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

double TensorNode::scalar() const {
  if (numel() != 1) throw std::invalid_argument("scalar() on tensor of shape " + shape_str(shape));
  return data[0];
}

void TensorNode::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

bool TensorNode::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor make_tensor(Shape shape, bool requires_grad, std::string name) {
  auto t = std::make_shared<TensorNode>();
  t->shape = std::move(shape);
  t->data.assign(shape_numel(t->shape), 0.0);
  t->requires_grad = requires_grad;
  t->name = std::move(name);
  return t;
}

Tensor make_tensor(Shape shape, std::vector<double> data, bool requires_grad, std::string name) {
  if (shape_numel(shape) != data.size())
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  auto t = std::make_shared<TensorNode>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  t->name = std::move(name);
  return t;
}

Tensor scalar_tensor(double v) { return make_tensor({1}, std::vector<double>{v}); }

namespace {

void check_2d(const Tensor& t, const char* who) {
  if (t->shape.size() != 2)
    throw std::invalid_argument(std::string(who) + ": expected 2-D tensor, got " +
                                shape_str(t->shape));
}

bool any_grad(const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    if (t->requires_grad) return true;
  return false;
}

// C[m,n] += A[m,k] * B[k,n], ikj order so the inner loop is contiguous.
void gemm_acc(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt_acc(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn_acc(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (size_t p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace

void Tape::record(Tensor output, const std::vector<Tensor>& inputs, std::function<void()> fn) {
  if (!recording_) return;
  if (!any_grad(inputs)) return;
  output->requires_grad = true;
  ops_.push_back(OpRecord{std::move(output), std::move(fn)});
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  if (a->shape[1] != b->shape[0])
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a->shape) +
                                " vs " + shape_str(b->shape));
  size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  Tensor c = make_tensor({m, n});
  gemm_acc(a->data.data(), b->data.data(), c->data.data(), m, k, n);
  record(c, {a, b}, [a, b, c, m, k, n]() {
    if (a->requires_grad) {
      a->ensure_grad();  // dA += dC * B^T
      gemm_nt_acc(c->grad.data(), b->data.data(), a->grad.data(), m, n, k);
    }
    if (b->requires_grad) {
      b->ensure_grad();  // dB += A^T * dC
      gemm_tn_acc(a->data.data(), c->grad.data(), b->grad.data(), m, k, n);
    }
  });
  return c;
}

Tensor Tape::matmul_nt(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul_nt");
  check_2d(b, "matmul_nt");
  if (a->shape[1] != b->shape[1])
    throw std::invalid_argument("matmul_nt: inner dimensions differ, " + shape_str(a->shape) +
                                " vs " + shape_str(b->shape) + "^T");
  size_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
  Tensor c = make_tensor({m, n});
  gemm_nt_acc(a->data.data(), b->data.data(), c->data.data(), m, k, n);
  record(c, {a, b}, [a, b, c, m, k, n]() {
    if (a->requires_grad) {
      a->ensure_grad();  // dA += dC * B
      gemm_acc(c->grad.data(), b->data.data(), a->grad.data(), m, n, k);
    }
    if (b->requires_grad) {
      b->ensure_grad();  // dB += dC^T * A
      gemm_tn_acc(c->grad.data(), a->data.data(), b->grad.data(), m, n, k);
    }
  });
  return c;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  if (a->shape != b->shape)
    throw std::invalid_argument("add: shape mismatch " + shape_str(a->shape) + " vs " +
                                shape_str(b->shape));
  Tensor c = make_tensor(a->shape);
  for (size_t i = 0; i < c->numel(); ++i) c->data[i] = a->data[i] + b->data[i];
  record(c, {a, b}, [a, b, c]() {
    if (a->requires_grad) {
      a->ensure_grad();
      for (size_t i = 0; i < c->numel(); ++i) a->grad[i] += c->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (size_t i = 0; i < c->numel(); ++i) b->grad[i] += c->grad[i];
    }
  });
  return c;
}

Tensor Tape::add_rowwise(const Tensor& x, const Tensor& bias) {
  check_2d(x, "add_rowwise");
  size_t m = x->shape[0], n = x->shape[1];
  if (bias->numel() != n)
    throw std::invalid_argument("add_rowwise: bias length " + std::to_string(bias->numel()) +
                                " does not match columns " + std::to_string(n));
  Tensor c = make_tensor(x->shape);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) c->data[i * n + j] = x->data[i * n + j] + bias->data[j];
  record(c, {x, bias}, [x, bias, c, m, n]() {
    if (x->requires_grad) {
      x->ensure_grad();
      for (size_t i = 0; i < m * n; ++i) x->grad[i] += c->grad[i];
    }
    if (bias->requires_grad) {
      bias->ensure_grad();
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) bias->grad[j] += c->grad[i * n + j];
    }
  });
  return c;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  if (a->shape != b->shape)
    throw std::invalid_argument("mul: shape mismatch " + shape_str(a->shape) + " vs " +
                                shape_str(b->shape));
  Tensor c = make_tensor(a->shape);
  for (size_t i = 0; i < c->numel(); ++i) c->data[i] = a->data[i] * b->data[i];
  record(c, {a, b}, [a, b, c]() {
    if (a->requires_grad) {
      a->ensure_grad();
      for (size_t i = 0; i < c->numel(); ++i) a->grad[i] += c->grad[i] * b->data[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (size_t i = 0; i < c->numel(); ++i) b->grad[i] += c->grad[i] * a->data[i];
    }
  });
  return c;
}

Tensor Tape::scale(const Tensor& x, double c0) {
  Tensor c = make_tensor(x->shape);
  for (size_t i = 0; i < c->numel(); ++i) c->data[i] = x->data[i] * c0;
  record(c, {x}, [x, c, c0]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < c->numel(); ++i) x->grad[i] += c->grad[i] * c0;
  });
  return c;
}

Tensor Tape::softmax(const Tensor& x, int axis) {
  int nd = static_cast<int>(x->shape.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                " invalid for shape " + shape_str(x->shape));
  size_t ax = x->shape[static_cast<size_t>(axis)];
  size_t inner = 1, outer = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= x->shape[static_cast<size_t>(i)];
  for (int i = 0; i < axis; ++i) outer *= x->shape[static_cast<size_t>(i)];

  Tensor y = make_tensor(x->shape);
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * ax * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t a = 0; a < ax; ++a) mx = std::max(mx, x->data[base + a * inner]);
      double z = 0.0;
      for (size_t a = 0; a < ax; ++a) {
        // exp(-inf - mx) is exactly 0, which keeps denied attention cells at 0
        double e = std::exp(x->data[base + a * inner] - mx);
        y->data[base + a * inner] = e;
        z += e;
      }
      for (size_t a = 0; a < ax; ++a) y->data[base + a * inner] /= z;
    }
  }
  record(y, {x}, [x, y, outer, inner, ax]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t o = 0; o < outer; ++o) {
      for (size_t in = 0; in < inner; ++in) {
        const size_t base = o * ax * inner + in;
        double dot = 0.0;
        for (size_t a = 0; a < ax; ++a) {
          size_t i = base + a * inner;
          dot += y->grad[i] * y->data[i];
        }
        for (size_t a = 0; a < ax; ++a) {
          size_t i = base + a * inner;
          x->grad[i] += (y->grad[i] - dot) * y->data[i];
        }
      }
    }
  });
  return y;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x->shape.empty()) throw std::invalid_argument("layer_norm: scalar input");
  size_t n = x->shape.back();
  if (gamma->numel() != n || beta->numel() != n)
    throw std::invalid_argument("layer_norm: gamma/beta length must match last extent " +
                                std::to_string(n));
  size_t rows = x->numel() / n;
  Tensor y = make_tensor(x->shape);
  // Cache per-row inv std and normalized values for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(x->numel());
  auto istd = std::make_shared<std::vector<double>>(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = x->data.data() + r * n;
    double mean = 0.0;
    for (size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (size_t j = 0; j < n; ++j) {
      double d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    (*istd)[r] = is;
    for (size_t j = 0; j < n; ++j) {
      double h = (xr[j] - mean) * is;
      (*xhat)[r * n + j] = h;
      y->data[r * n + j] = gamma->data[j] * h + beta->data[j];
    }
  }
  record(y, {x, gamma, beta}, [x, gamma, beta, y, xhat, istd, rows, n]() {
    for (size_t r = 0; r < rows; ++r) {
      const double* dy = y->grad.data() + r * n;
      const double* xh = xhat->data() + r * n;
      if (gamma->requires_grad) {
        gamma->ensure_grad();
        for (size_t j = 0; j < n; ++j) gamma->grad[j] += dy[j] * xh[j];
      }
      if (beta->requires_grad) {
        beta->ensure_grad();
        for (size_t j = 0; j < n; ++j) beta->grad[j] += dy[j];
      }
      if (x->requires_grad) {
        x->ensure_grad();
        double sum_g = 0.0, sum_gx = 0.0;
        for (size_t j = 0; j < n; ++j) {
          double g = dy[j] * gamma->data[j];
          sum_g += g;
          sum_gx += g * xh[j];
        }
        double inv_n = 1.0 / static_cast<double>(n);
        for (size_t j = 0; j < n; ++j) {
          double g = dy[j] * gamma->data[j];
          x->grad[r * n + j] += (*istd)[r] * (g - inv_n * sum_g - xh[j] * inv_n * sum_gx);
        }
      }
    }
  });
  return y;
}

Tensor Tape::gelu(const Tensor& x) {
  // tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
  constexpr double kC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor y = make_tensor(x->shape);
  for (size_t i = 0; i < x->numel(); ++i) {
    double v = x->data[i];
    y->data[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  record(y, {x}, [x, y]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < x->numel(); ++i) {
      double v = x->data[i];
      double u = kC * (v + kA * v * v * v);
      double t = std::tanh(u);
      double sech2 = 1.0 - t * t;
      double du = kC * (1.0 + 3.0 * kA * v * v);
      x->grad[i] += y->grad[i] * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du);
    }
  });
  return y;
}

Tensor Tape::embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  check_2d(table, "embedding_rows");
  size_t v = table->shape[0], d = table->shape[1];
  Tensor y = make_tensor({ids.size(), d});
  for (size_t t = 0; t < ids.size(); ++t) {
    int id = ids[t];
    if (id < 0 || static_cast<size_t>(id) >= v)
      throw std::out_of_range("embedding_rows: id " + std::to_string(id) +
                              " out of range for table rows " + std::to_string(v));
    const double* src = table->data.data() + static_cast<size_t>(id) * d;
    std::copy(src, src + d, y->data.data() + t * d);
  }
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  record(y, {table}, [table, y, ids_copy, d]() {
    if (!table->requires_grad) return;
    table->ensure_grad();
    for (size_t t = 0; t < ids_copy->size(); ++t) {
      double* dst = table->grad.data() + static_cast<size_t>((*ids_copy)[t]) * d;
      const double* src = y->grad.data() + t * d;
      for (size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  return y;
}

Tensor Tape::slice_cols(const Tensor& x, size_t c0, size_t c1) {
  check_2d(x, "slice_cols");
  size_t m = x->shape[0], n = x->shape[1];
  if (c0 >= c1 || c1 > n)
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + ", " +
                                std::to_string(c1) + ") for " + std::to_string(n) + " columns");
  size_t w = c1 - c0;
  Tensor y = make_tensor({m, w});
  for (size_t i = 0; i < m; ++i)
    std::copy(x->data.data() + i * n + c0, x->data.data() + i * n + c1, y->data.data() + i * w);
  record(y, {x}, [x, y, m, n, c0, w]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < w; ++j) x->grad[i * n + c0 + j] += y->grad[i * w + j];
  });
  return y;
}

Tensor Tape::concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  size_t m = parts[0]->shape[0];
  size_t total = 0;
  for (const auto& p : parts) {
    check_2d(p, "concat_cols");
    if (p->shape[0] != m) throw std::invalid_argument("concat_cols: row count mismatch");
    total += p->shape[1];
  }
  Tensor y = make_tensor({m, total});
  size_t off = 0;
  for (const auto& p : parts) {
    size_t w = p->shape[1];
    for (size_t i = 0; i < m; ++i)
      std::copy(p->data.data() + i * w, p->data.data() + (i + 1) * w,
                y->data.data() + i * total + off);
    off += w;
  }
  auto parts_copy = std::make_shared<std::vector<Tensor>>(parts);
  record(y, parts, [parts_copy, y, m, total]() {
    size_t off = 0;
    for (const auto& p : *parts_copy) {
      size_t w = p->shape[1];
      if (p->requires_grad) {
        p->ensure_grad();
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < w; ++j) p->grad[i * w + j] += y->grad[i * total + off + j];
      }
      off += w;
    }
  });
  return y;
}

Tensor Tape::cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                           const std::vector<uint8_t>& score_mask, bool mean,
                           size_t* scored_count) {
  check_2d(logits, "cross_entropy");
  size_t n = logits->shape[0], v = logits->shape[1];
  if (targets.size() != n)
    throw std::invalid_argument("cross_entropy: got " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(n) + " rows");
  if (!score_mask.empty() && score_mask.size() != n)
    throw std::invalid_argument("cross_entropy: score_mask length mismatch");

  auto scored = std::make_shared<std::vector<size_t>>();
  for (size_t i = 0; i < n; ++i) {
    if (targets[i] == kIgnoreTarget) continue;
    if (!score_mask.empty() && !score_mask[i]) continue;
    if (targets[i] < 0 || static_cast<size_t>(targets[i]) >= v)
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) +
                              " out of range for vocab " + std::to_string(v));
    scored->push_back(i);
  }
  if (scored->empty()) throw std::invalid_argument("cross_entropy: no scored positions");
  if (scored_count) *scored_count = scored->size();

  double denom = mean ? static_cast<double>(scored->size()) : 1.0;
  double total = 0.0;
  // Per scored row: logsumexp(row) - logit[target], max-shifted for stability.
  auto probs = std::make_shared<std::vector<double>>(scored->size() * v);
  auto tg = std::make_shared<std::vector<int>>(targets);
  for (size_t s = 0; s < scored->size(); ++s) {
    size_t i = (*scored)[s];
    const double* row = logits->data.data() + i * v;
    double mx = row[0];
    for (size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    double lse = mx + std::log(z);
    total += lse - row[static_cast<size_t>(targets[i])];
    for (size_t j = 0; j < v; ++j) (*probs)[s * v + j] = std::exp(row[j] - mx) / z;
  }
  Tensor loss = scalar_tensor(total / denom);
  record(loss, {logits}, [logits, loss, scored, probs, tg, v, denom]() {
    if (!logits->requires_grad) return;
    logits->ensure_grad();
    double up = loss->grad[0] / denom;
    for (size_t s = 0; s < scored->size(); ++s) {
      size_t i = (*scored)[s];
      double* g = logits->grad.data() + i * v;
      const double* p = probs->data() + s * v;
      for (size_t j = 0; j < v; ++j) g[j] += up * p[j];
      g[static_cast<size_t>((*tg)[i])] -= up;
    }
  });
  return loss;
}

Tensor Tape::sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x->data) total += v;
  Tensor y = scalar_tensor(total);
  record(y, {x}, [x, y]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < x->numel(); ++i) x->grad[i] += y->grad[0];
  });
  return y;
}

void Tape::backward(const Tensor& loss) {
  if (loss->numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss->shape));
  if (backward_done_)
    throw std::logic_error("backward: tape already consumed; call reset() first");
  backward_done_ = true;
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // branch not reached from loss
    it->backward_fn();
  }
}

void Tape::reset() {
  ops_.clear();
  backward_done_ = false;
}

}  // namespace prodemb
