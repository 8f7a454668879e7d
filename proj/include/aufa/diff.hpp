#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "aufa/matrix.hpp"

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every operation in creation order. backward() walks the
// record in exact reverse order; nodes that never received gradient are
// skipped, so subgraphs not reachable from the loss leave parameter
// gradients untouched.
namespace aufa::diff {

// Probabilities are clamped below at this value before any logarithm.
inline constexpr double kProbClamp = 1e-12;

// A named learnable matrix with its gradient accumulator.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

// Handle to a node of a Tape. Cheap to copy; valid while its Tape lives.
class Value {
 public:
  Value() = default;

  const Matrix& data() const;
  // Gradient accumulated by the last backward pass (zeros if untouched).
  Matrix grad() const;
  std::size_t rows() const { return data().rows(); }
  std::size_t cols() const { return data().cols(); }
  double item() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Value(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// The computation record. Single writer; not copyable or movable because
// Values refer back to it.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives gradient.
  Value constant(Matrix m);
  // Leaf whose gradient accumulates on the tape across backward passes.
  Value variable(Matrix m);
  // Leaf bound to external storage: reads p.value, accumulates into p.grad.
  Value param(Parameter& p);

  // Records an op result. inputs determine whether a gradient is needed.
  Value record(Matrix out, std::span<const Value> inputs, BackwardFn fn);

  // Populates gradients of everything that feeds `loss` (must be 1x1).
  // Intermediate gradients are reset first; leaf and parameter gradients
  // accumulate.
  void backward(const Value& loss);

  std::size_t size() const { return nodes_.size(); }

  const Matrix& data(std::size_t id) const;
  Matrix grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient buffer of node `id`, allocated on first use. Only valid during
  // backward for nodes that require gradient.
  Matrix& grad_buffer(std::size_t id);

 private:
  struct Node {
    Matrix value;
    Parameter* external = nullptr;
    Matrix grad;
    BackwardFn backward;
    bool leaf = false;
    bool requires_grad = false;
    bool touched = false;
  };

  Value push(Node node);

  std::deque<Node> nodes_;
};

// ---- primitives -----------------------------------------------------------

Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value scale(const Value& a, double s);
Value hadamard(const Value& a, const Value& b);
Value relu(const Value& x);

// Row-wise softmax of scale * x, stabilized by subtracting each row's max.
Value row_softmax(const Value& x, double scale = 1.0);

// Standardizes each row (biased variance, eps inside the root), then applies
// gain g and offset b (both 1 x n).
Value row_layer_norm(const Value& x, const Value& g, const Value& b, double eps = 1e-5);

// x * W + bias, bias broadcast over rows.
Value affine(const Value& x, const Value& w, const Value& bias);

Value concat_cols(std::span<const Value> xs);
Value concat_rows(std::span<const Value> xs);
Value flatten(const Value& x);
Value sum(const Value& x);
// 1 x n vector of column sums.
Value column_sum(const Value& x);
Value select_rows(const Value& x, std::span<const std::size_t> rows);

// (1 - t) * a + t * b; reproduces a exactly at t = 0 and b exactly at t = 1.
Value lerp(const Value& a, const Value& b, double t);

// Mean over rows of -log softmax(logits)[label]; logits are B x 2.
Value cross_entropy(const Value& logits, std::span<const int> labels);

// Mean over rows of sum_c p log(p / q), both arguments clamped at kProbClamp
// inside the logarithm. Rows must sum to 1 within 1e-6.
Value kl_divergence(const Value& p, const Value& q);

}  // namespace aufa::diff
