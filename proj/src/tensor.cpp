#include "sgt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace sgt {

namespace {

std::atomic<std::uint64_t> g_sequence{0};

thread_local MacCounter* t_counter = nullptr;
thread_local std::string t_category = "other";

void require_finite(const Matrix& m, const char* op) {
  // The sum is non-finite whenever an entry is; allFinite() settles overflow.
  if (!std::isfinite(m.sum()) && !m.allFinite()) {
    throw NonFiniteError(std::string("non-finite value produced by ") + op);
  }
}

[[noreturn]] void shape_mismatch(const char* op, const Matrix& a, const Matrix& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                       shape_string(b));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_mismatch(op, a.value(), b.value());
}

}  // namespace

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << '[' << m.rows() << ", " << m.cols() << ']';
  return os.str();
}

// Tensor --------------------------------------------------------------------

Tensor Tensor::parameter(Matrix value) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_string(value()));
  return value()(0, 0);
}

Matrix& Tensor::mutable_value() {
  if (!node_->inputs.empty()) throw std::logic_error("mutable_value() on a non-leaf tensor");
  return node_->value;
}

Tensor Tensor::from_op(Matrix value, const char* op, std::vector<Tensor> inputs,
                       detail::BackwardFn backward) {
  require_finite(value, op);
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->op = op;
  node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// Backward ------------------------------------------------------------------

Matrix Gradients::of(const Tensor& leaf) const {
  auto it = leaf_grads_.find(leaf.node());
  if (it == leaf_grads_.end()) return Matrix::Zero(leaf.rows(), leaf.cols());
  return it->second;
}

bool Gradients::contains(const Tensor& leaf) const {
  return leaf_grads_.count(leaf.node()) != 0;
}

namespace {

class MapSink final : public detail::GradSink {
 public:
  MapSink(std::unordered_map<const detail::Node*, Matrix>& grads, const detail::Node& node)
      : grads_(grads), node_(node) {}

  void add(std::size_t input, const Matrix& contribution) override {
    const detail::Node* target = node_.inputs.at(input).get();
    if (!target->requires_grad) return;
    auto [it, inserted] = grads_.try_emplace(target);
    if (inserted) {
      it->second = contribution;
    } else {
      it->second += contribution;
    }
  }

  void add(std::size_t input, Matrix&& contribution) override {
    const detail::Node* target = node_.inputs.at(input).get();
    if (!target->requires_grad) return;
    auto [it, inserted] = grads_.try_emplace(target);
    if (inserted) {
      it->second = std::move(contribution);
    } else {
      it->second += contribution;
    }
  }

  bool wants(std::size_t input) const override { return node_.inputs.at(input)->requires_grad; }

 private:
  std::unordered_map<const detail::Node*, Matrix>& grads_;
  const detail::Node& node_;
};

}  // namespace

Gradients backward(const Tensor& loss) {
  if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1) {
    throw std::logic_error("backward() requires a scalar loss, got " +
                           (loss.defined() ? shape_string(loss.value()) : std::string("empty")));
  }
  Gradients out;
  if (!loss.requires_grad()) return out;

  // Tape: every node reachable from the loss, replayed newest-first.
  std::vector<const detail::Node*> tape;
  std::unordered_set<const detail::Node*> seen;
  std::vector<const detail::Node*> stack{loss.node()};
  seen.insert(loss.node());
  while (!stack.empty()) {
    const detail::Node* n = stack.back();
    stack.pop_back();
    tape.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(tape.begin(), tape.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->sequence > b->sequence; });

  std::unordered_map<const detail::Node*, Matrix> grads;
  grads.emplace(loss.node(), Matrix::Ones(1, 1));
  for (const detail::Node* n : tape) {
    auto it = grads.find(n);
    if (it == grads.end()) continue;
    if (!n->backward) {
      out.leaf_grads_.emplace(n, std::move(it->second));
      grads.erase(it);
      continue;
    }
    Matrix g = std::move(it->second);
    grads.erase(it);
    MapSink sink(grads, *n);
    n->backward(g, sink);
    ++out.visited_ops_;
  }
  return out;
}

// MAC accounting ------------------------------------------------------------

std::uint64_t MacCounter::total() const {
  std::uint64_t t = 0;
  for (const auto& [_, v] : counts_) t += v;
  return t;
}

MacScope::MacScope(MacCounter* counter, std::string category)
    : prev_counter_(t_counter), prev_category_(std::move(t_category)) {
  t_counter = counter;
  t_category = std::move(category);
}

MacScope::MacScope(std::string category) : MacScope(t_counter, std::move(category)) {}

MacScope::~MacScope() {
  t_counter = prev_counter_;
  t_category = std::move(prev_category_);
}

void count_macs(std::uint64_t macs) {
  if (t_counter) t_counter->add(t_category, macs);
}

void count_macs(const std::string& category, std::uint64_t macs) {
  if (t_counter) t_counter->add(category, macs);
}

// Primitives ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_mismatch("matmul", a.value(), b.value());
  count_macs(static_cast<std::uint64_t>(a.rows() * a.cols() * b.cols()));
  Matrix out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  const Matrix* av = &a.value();
  const Matrix* bv = &b.value();
  return Tensor::from_op(std::move(out), "matmul", {a, b},
                         [av, bv](const Matrix& g, detail::GradSink& sink) {
                           if (sink.wants(0)) {
                             Matrix ga(g.rows(), bv->rows());
                             ga.noalias() = g * bv->transpose();
                             sink.add(0, std::move(ga));
                           }
                           if (sink.wants(1)) {
                             Matrix gb(av->cols(), g.cols());
                             gb.noalias() = av->transpose() * g;
                             sink.add(1, std::move(gb));
                           }
                         });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  return Tensor::from_op(a.value() + b.value(), "add", {a, b},
                         [](const Matrix& g, detail::GradSink& sink) {
                           sink.add(0, g);
                           sink.add(1, g);
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  return Tensor::from_op(a.value() - b.value(), "sub", {a, b},
                         [](const Matrix& g, detail::GradSink& sink) {
                           sink.add(0, g);
                           sink.add(1, -g);
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const Matrix* av = &a.value();
  const Matrix* bv = &b.value();
  return Tensor::from_op(a.value().cwiseProduct(b.value()), "mul", {a, b},
                         [av, bv](const Matrix& g, detail::GradSink& sink) {
                           sink.add(0, g.cwiseProduct(*bv));
                           sink.add(1, g.cwiseProduct(*av));
                         });
}

Tensor scale(const Tensor& a, double s) {
  return Tensor::from_op(a.value() * s, "scale", {a},
                         [s](const Matrix& g, detail::GradSink& sink) { sink.add(0, g * s); });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    shape_mismatch("add_row_bias", x.value(), bias.value());
  }
  Matrix out = x.value().rowwise() + bias.value().row(0);
  return Tensor::from_op(std::move(out), "add_row_bias", {x, bias},
                         [](const Matrix& g, detail::GradSink& sink) {
                           sink.add(0, g);
                           sink.add(1, g.colwise().sum());
                         });
}

Tensor transpose(const Tensor& a) {
  return Tensor::from_op(a.value().transpose(), "transpose", {a},
                         [](const Matrix& g, detail::GradSink& sink) {
                           sink.add(0, g.transpose());
                         });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) shape_mismatch("concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  offsets.reserve(parts.size());
  Index r = 0;
  for (const auto& p : parts) {
    offsets.push_back(r);
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Index> heights;
  for (const auto& p : parts) heights.push_back(p.rows());
  return Tensor::from_op(std::move(out), "concat_rows", {parts.begin(), parts.end()},
                         [offsets, heights](const Matrix& g, detail::GradSink& sink) {
                           for (std::size_t i = 0; i < offsets.size(); ++i) {
                             sink.add(i, g.middleRows(offsets[i], heights[i]));
                           }
                         });
}

Tensor slice_rows(const Tensor& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " +
                         shape_string(a.value()));
  }
  const Index rows = a.rows();
  return Tensor::from_op(a.value().middleRows(begin, count), "slice_rows", {a},
                         [=](const Matrix& g, detail::GradSink& sink) {
                           Matrix full = Matrix::Zero(rows, g.cols());
                           full.middleRows(begin, count) = g;
                           sink.add(0, full);
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n) shape_mismatch("layer_norm", x.value(), gain.value());
  if (bias.rows() != 1 || bias.cols() != n) shape_mismatch("layer_norm", x.value(), bias.value());
  const Matrix& xv = x.value();
  Eigen::VectorXd mean = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mean;
  Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(n)) + eps).rsqrt();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix().rowwise() +
               bias.value().row(0);
  const Matrix* gv = &gain.value();
  return Tensor::from_op(
      std::move(out), "layer_norm", {x, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), gv, n](const Matrix& g,
                                                                     detail::GradSink& sink) {
        Matrix dxhat = g.array().rowwise() * gv->row(0).array();
        Eigen::VectorXd s1 = dxhat.rowwise().sum();
        Eigen::VectorXd s2 = dxhat.cwiseProduct(xhat).rowwise().sum();
        Matrix dx = (static_cast<double>(n) * dxhat.array() - s1.replicate(1, n).array() -
                     xhat.array() * s2.replicate(1, n).array());
        dx = dx.array().colwise() * (inv_std.array() / static_cast<double>(n));
        sink.add(0, dx);
        sink.add(1, g.cwiseProduct(xhat).colwise().sum());
        sink.add(2, g.colwise().sum());
      });
}

Tensor gelu(const Tensor& x) {
  const Matrix& xv = x.value();
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix cdf = xv.unaryExpr([inv_sqrt2](double v) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)); });
  Matrix out = xv.cwiseProduct(cdf);
  const Matrix* xp = &x.value();
  return Tensor::from_op(std::move(out), "gelu", {x},
                         [xp, cdf = std::move(cdf)](const Matrix& g, detail::GradSink& sink) {
                           const double c = 1.0 / std::sqrt(2.0 * std::numbers::pi);
                           Matrix pdf = xp->unaryExpr(
                               [c](double v) { return c * std::exp(-0.5 * v * v); });
                           Matrix d = cdf + xp->cwiseProduct(pdf);
                           sink.add(0, g.cwiseProduct(d));
                         });
}

Tensor relu(const Tensor& x) {
  const Matrix* xp = &x.value();
  return Tensor::from_op(x.value().cwiseMax(0.0), "relu", {x},
                         [xp](const Matrix& g, detail::GradSink& sink) {
                           Matrix mask = (xp->array() > 0.0).cast<double>();
                           sink.add(0, g.cwiseProduct(mask));
                         });
}

Tensor sigmoid(const Tensor& x) {
  Matrix out = x.value().unaryExpr([](double v) {
    const double c = std::clamp(v, -kLogitClamp, kLogitClamp);
    return 1.0 / (1.0 + std::exp(-c));
  });
  const Matrix* xp = &x.value();
  Matrix saved = out;
  return Tensor::from_op(std::move(out), "sigmoid", {x},
                         [xp, saved = std::move(saved)](const Matrix& g, detail::GradSink& sink) {
                           Matrix d = saved.array() * (1.0 - saved.array()) *
                                      (xp->array().abs() <= kLogitClamp).cast<double>();
                           sink.add(0, g.cwiseProduct(d));
                         });
}

namespace {

Matrix softmax_rows_value(const Matrix& x) {
  Matrix out = x.colwise() - x.rowwise().maxCoeff();
  out = out.array().exp();
  Eigen::VectorXd denom = out.rowwise().sum();
  out = out.array().colwise() / denom.array();
  return out;
}

// dS = P .* (dP - rowsum(dP .* P))
Matrix softmax_rows_backward(const Matrix& p, const Matrix& dp) {
  Eigen::VectorXd dot = dp.cwiseProduct(p).rowwise().sum();
  return p.cwiseProduct(dp.colwise() - dot);
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
  Matrix out = softmax_rows_value(x.value());
  Matrix saved = out;
  return Tensor::from_op(std::move(out), "softmax_rows", {x},
                         [saved = std::move(saved)](const Matrix& g, detail::GradSink& sink) {
                           sink.add(0, softmax_rows_backward(saved, g));
                         });
}

Tensor sum(const Tensor& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const Index r = x.rows(), c = x.cols();
  return Tensor::from_op(std::move(out), "sum", {x},
                         [r, c](const Matrix& g, detail::GradSink& sink) {
                           sink.add(0, Matrix::Constant(r, c, g(0, 0)));
                         });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor binary_cross_entropy(const Tensor& pred, const Tensor& target) {
  require_same_shape("binary_cross_entropy", pred, target);
  if (pred.size() == 0) throw DimensionError("binary_cross_entropy of empty tensor");
  const double count = static_cast<double>(pred.size());
  Matrix p = pred.value().cwiseMax(kProbEps).cwiseMin(1.0 - kProbEps);
  const Matrix& t = target.value();
  const double total =
      -(t.array() * p.array().log() + (1.0 - t.array()) * (1.0 - p.array()).log()).sum();
  Matrix out(1, 1);
  out(0, 0) = total / count;
  const Matrix* tp = &target.value();
  return Tensor::from_op(std::move(out), "binary_cross_entropy", {pred, target},
                         [p = std::move(p), tp, count](const Matrix& g, detail::GradSink& sink) {
                           Matrix d = (-(tp->array() / p.array()) +
                                       (1.0 - tp->array()) / (1.0 - p.array())) *
                                      (g(0, 0) / count);
                           sink.add(0, d);
                         });
}

Tensor group_left_matmul(const Tensor& w, const Tensor& x, Index groups) {
  const Index m = w.rows(), n = w.cols();
  if (groups <= 0 || x.rows() != groups * n) shape_mismatch("group_left_matmul", w.value(), x.value());
  const Index d = x.cols();
  count_macs(static_cast<std::uint64_t>(groups * m * n * d));
  Matrix out(groups * m, d);
  for (Index g = 0; g < groups; ++g) {
    out.middleRows(g * m, m).noalias() = w.value() * x.value().middleRows(g * n, n);
  }
  const Matrix* wp = &w.value();
  const Matrix* xp = &x.value();
  return Tensor::from_op(std::move(out), "group_left_matmul", {w, x},
                         [wp, xp, groups, m, n, d](const Matrix& grad, detail::GradSink& sink) {
                           Matrix gw = Matrix::Zero(m, n);
                           Matrix gx(groups * n, d);
                           for (Index g = 0; g < groups; ++g) {
                             const auto go = grad.middleRows(g * m, m);
                             gw.noalias() += go * xp->middleRows(g * n, n).transpose();
                             gx.middleRows(g * n, n).noalias() = wp->transpose() * go;
                           }
                           sink.add(0, std::move(gw));
                           sink.add(1, std::move(gx));
                         });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, Index groups,
                            Index heads, const AttentionObserver* observer) {
  const Index d = q.cols();
  if (k.cols() != d || v.cols() != d) shape_mismatch("multi_head_attention", q.value(), k.value());
  if (k.rows() != v.rows()) shape_mismatch("multi_head_attention", k.value(), v.value());
  if (heads <= 0 || d % heads != 0) {
    throw DimensionError("multi_head_attention: width " + std::to_string(d) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
  if (groups <= 0 || q.rows() % groups != 0 || k.rows() % groups != 0) {
    throw DimensionError("multi_head_attention: " + std::to_string(groups) +
                         " groups do not divide " + shape_string(q.value()) + " and " +
                         shape_string(k.value()));
  }
  const Index nq = q.rows() / groups;
  const Index nk = k.rows() / groups;
  const Index dk = d / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dk));
  count_macs("attention_score", static_cast<std::uint64_t>(groups * nq * nk * d));
  count_macs("value_mix", static_cast<std::uint64_t>(groups * nq * nk * d));

  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  Matrix out(q.rows(), d);
  std::vector<Matrix> probs(static_cast<std::size_t>(groups * heads));
  for (Index g = 0; g < groups; ++g) {
    for (Index h = 0; h < heads; ++h) {
      Matrix scores = s * (qv.block(g * nq, h * dk, nq, dk) * kv.block(g * nk, h * dk, nk, dk).transpose());
      Matrix p = softmax_rows_value(scores);
      out.block(g * nq, h * dk, nq, dk).noalias() = p * vv.block(g * nk, h * dk, nk, dk);
      if (observer) (*observer)(g, h, p);
      probs[static_cast<std::size_t>(g * heads + h)] = std::move(p);
    }
  }
  const Matrix* qp = &q.value();
  const Matrix* kp = &k.value();
  const Matrix* vp = &v.value();
  return Tensor::from_op(
      std::move(out), "multi_head_attention", {q, k, v},
      [=, probs = std::move(probs)](const Matrix& grad, detail::GradSink& sink) {
        Matrix gq(qp->rows(), d), gk(kp->rows(), d), gv(vp->rows(), d);
        for (Index g = 0; g < groups; ++g) {
          for (Index h = 0; h < heads; ++h) {
            const Matrix& p = probs[static_cast<std::size_t>(g * heads + h)];
            const auto go = grad.block(g * nq, h * dk, nq, dk);
            const auto qb = qp->block(g * nq, h * dk, nq, dk);
            const auto kb = kp->block(g * nk, h * dk, nk, dk);
            const auto vb = vp->block(g * nk, h * dk, nk, dk);
            Matrix dp = go * vb.transpose();
            gv.block(g * nk, h * dk, nk, dk).noalias() = p.transpose() * go;
            Matrix ds = softmax_rows_backward(p, dp) * s;
            gq.block(g * nq, h * dk, nq, dk).noalias() = ds * kb;
            gk.block(g * nk, h * dk, nk, dk).noalias() = ds.transpose() * qb;
          }
        }
        sink.add(0, std::move(gq));
        sink.add(1, std::move(gk));
        sink.add(2, std::move(gv));
      });
}

}  // namespace sgt
