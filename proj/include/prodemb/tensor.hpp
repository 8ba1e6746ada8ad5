#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace prodemb {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major array. grad stays empty until backward touches the node.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string name;

  size_t numel() const { return data.size(); }
  size_t rows() const { return shape.size() >= 1 ? shape[0] : 1; }
  size_t cols() const { return shape.size() >= 2 ? shape[1] : 1; }
  double scalar() const;
  void ensure_grad();
  void zero_grad() { grad.assign(grad.size(), 0.0); }
  bool all_finite() const;
};

using Tensor = std::shared_ptr<TensorNode>;

Tensor make_tensor(Shape shape, bool requires_grad = false, std::string name = {});
Tensor make_tensor(Shape shape, std::vector<double> data, bool requires_grad = false,
                   std::string name = {});
Tensor scalar_tensor(double v);

// Ignore marker for cross_entropy targets.
constexpr int kIgnoreTarget = -1;

// Records primitive ops in execution order; backward replays the record once
// in reverse. A Tape is single-writer and must outlive backward().
class Tape {
 public:
  Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
  Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k]^T
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor add_rowwise(const Tensor& x, const Tensor& bias);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& x, double c);
  Tensor softmax(const Tensor& x, int axis);
  Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
  Tensor gelu(const Tensor& x);
  Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
  Tensor slice_cols(const Tensor& x, size_t c0, size_t c1);
  Tensor concat_cols(const std::vector<Tensor>& parts);
  // Mean (or sum) of -log softmax(logits)[target] over scored rows. A row is
  // scored when its target is not kIgnoreTarget and score_mask (if nonempty)
  // is nonzero. scored_count reports how many rows contributed.
  Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                       const std::vector<uint8_t>& score_mask = {}, bool mean = true,
                       size_t* scored_count = nullptr);
  Tensor sum(const Tensor& x);

  // Populates gradients of every requires_grad tensor reachable backward from
  // loss. Throws on a non-scalar loss or a second call without reset().
  void backward(const Tensor& loss);
  void reset();

  void set_recording(bool r) { recording_ = r; }
  bool recording() const { return recording_; }
  size_t size() const { return ops_.size(); }

 private:
  struct OpRecord {
    Tensor output;
    std::function<void()> backward_fn;
  };
  void record(Tensor output, const std::vector<Tensor>& inputs, std::function<void()> fn);
  std::vector<OpRecord> ops_;
  bool recording_ = true;
  bool backward_done_ = false;
};

// Scoped recording toggle for inference-only passes.
struct NoGradGuard {
  explicit NoGradGuard(Tape& t) : tape(t), prev(t.recording()) { tape.set_recording(false); }
  ~NoGradGuard() { tape.set_recording(prev); }
  Tape& tape;
  bool prev;
};

}  // namespace prodemb
