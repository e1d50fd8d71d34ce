#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace sgt {

using Index = Eigen::Index;

/// Row-major dense matrix; every tensor in the engine is stored this way.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Thrown on incompatible operand shapes. The message names both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation produces NaN or Inf from finite inputs.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_string(const Matrix& m);

namespace detail {

struct Node;

/// Collects gradient contributions for the inputs of one recorded operation.
class GradSink {
 public:
  virtual ~GradSink() = default;
  virtual void add(std::size_t input, const Matrix& contribution) = 0;
  virtual void add(std::size_t input, Matrix&& contribution) { add(input, static_cast<const Matrix&>(contribution)); }
  /// False when `input` takes no gradient, so its contribution can be skipped.
  virtual bool wants(std::size_t) const { return true; }
};

using BackwardFn = std::function<void(const Matrix& grad_out, GradSink& sink)>;

struct Node {
  Matrix value;
  bool requires_grad = false;
  std::uint64_t sequence = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  const char* op = "leaf";
};

}  // namespace detail

/// Two-dimensional array of doubles that may participate in a reverse-mode
/// computation graph. Scalars are 1x1. Copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;

  /// Leaf that receives gradients.
  static Tensor parameter(Matrix value);
  /// Leaf that never receives gradients.
  static Tensor constant(Matrix value);
  static Tensor scalar(double v);

  const Matrix& value() const { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  double item() const;

  /// Overwrites a leaf value in place (optimizer updates, finite differences).
  Matrix& mutable_value();

  const detail::Node* node() const { return node_.get(); }

  static Tensor from_op(Matrix value, const char* op,
                        std::vector<Tensor> inputs, detail::BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Gradients produced by one backward pass, keyed by leaf.
class Gradients {
 public:
  /// Gradient of the loss with respect to `leaf`; zeros if unreachable.
  Matrix of(const Tensor& leaf) const;
  bool contains(const Tensor& leaf) const;
  std::size_t visited_ops() const { return visited_ops_; }

 private:
  friend Gradients backward(const Tensor& loss);
  std::unordered_map<const detail::Node*, Matrix> leaf_grads_;
  std::size_t visited_ops_ = 0;
};

/// Replays the recorded operations reachable from `loss` in reverse creation
/// order. Contributions from several consumers add up in that fixed order.
/// Throws std::logic_error if `loss` is not 1x1.
Gradients backward(const Tensor& loss);

// Multiply-accumulate accounting ------------------------------------------------

/// Accumulates MACs per category while installed on the current thread.
class MacCounter {
 public:
  void add(const std::string& category, std::uint64_t macs) { counts_[category] += macs; }
  const std::map<std::string, std::uint64_t>& counts() const { return counts_; }
  std::uint64_t total() const;

 private:
  std::map<std::string, std::uint64_t> counts_;
};

/// Installs `counter` as the active counter for this thread and labels matmul
/// MACs with `category` until destroyed. Scopes nest.
class MacScope {
 public:
  MacScope(MacCounter* counter, std::string category);
  explicit MacScope(std::string category);
  ~MacScope();
  MacScope(const MacScope&) = delete;
  MacScope& operator=(const MacScope&) = delete;

 private:
  MacCounter* prev_counter_;
  std::string prev_category_;
};

void count_macs(std::uint64_t macs);
void count_macs(const std::string& category, std::uint64_t macs);

// Primitives ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// x[m,n] + bias[1,n] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
Tensor transpose(const Tensor& a);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, Index begin, Index count);
/// Row-wise normalisation followed by gain[1,n] and bias[1,n].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean binary cross-entropy of probabilities `pred` against `target` in [0,1].
/// Probabilities are clamped to [kProbEps, 1 - kProbEps].
Tensor binary_cross_entropy(const Tensor& pred, const Tensor& target);

/// Applies W[m,n] to each of `groups` stacked row blocks of x[groups*n, d].
Tensor group_left_matmul(const Tensor& w, const Tensor& x, Index groups);

inline constexpr double kProbEps = 1e-12;
/// Sigmoid arguments are clamped to this magnitude.
inline constexpr double kLogitClamp = 30.0;

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

/// Receives softmax weights of one (instance, head) attention block.
using AttentionObserver = std::function<void(Index instance, Index head, const Matrix& weights)>;

/// Batched multi-head scaled dot-product attention. Queries are stacked as
/// `groups` blocks of rows in q, keys/values as `groups` blocks in k and v.
/// Each head attends over its own column slice of width d/heads.
/// MACs are booked under "attention_score" and "value_mix".
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, Index groups,
                            Index heads, const AttentionObserver* observer = nullptr);

}  // namespace sgt
