#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "d2nn/tensor.hpp"

namespace d2nn {

class Graph;

/// Handle to a node recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
};

/// Position mask: nonzero entries are real tokens/steps, zero entries are padding.
using Mask = std::vector<std::uint8_t>;

/// Reverse-mode tape. Nodes are appended in evaluation order, so the tape
/// order is a topological order and backward is a single reverse sweep.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::span<const double>)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor value, bool requires_grad = false) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return append(std::move(n));
  }

  /// Leaf bound to a parameter: no copy of the value, gradients land in p.grad.
  Var param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = p.trainable;
    Var v = append(std::move(n));
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward, const char* op) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
    Node n;
    n.value = std::move(value);
    for (std::size_t i : inputs) n.requires_grad = n.requires_grad || nodes_.at(i).requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    return append(std::move(n));
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, empty when the node does not need one.
  std::span<double> grad_target(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return {};
    if (n.param) return n.param->grad.data;
    if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
    return n.grad;
  }

  /// Gradient of a non-parameter leaf after backward (zeros if unreached).
  std::vector<double> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.param) return n.param->grad.data;
    if (n.grad.empty()) return std::vector<double>(value(v.id).size(), 0.0);
    return n.grad;
  }

  void backward(Var loss) {
    if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
    if (value(loss.id).size() != 1 || value(loss.id).rank() != 0)
      throw ContractError("backward: loss must be a scalar, got " + shape_str(value(loss.id).shape));
    if (backward_done_) throw ContractError("backward: graph already differentiated; re-run forward");
    backward_done_ = true;
    if (!nodes_[loss.id].requires_grad) return;
    grad_target(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Parameter* param = nullptr;
    bool requires_grad = false;
    std::vector<double> grad;
    BackwardFn backward;
  };

  Var append(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // value() references stay valid as the tape grows
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return graph->value(id); }

namespace detail {

/// `what` is either a message or a callable producing one, so that messages
/// are only built on failure.
template <class Msg>
void require(bool ok, Msg&& what) {
  if (ok) return;
  if constexpr (std::is_invocable_v<Msg>)
    throw DimensionError(std::string(what()));
  else
    throw DimensionError(std::string(what));
}

inline void require_rank(const Var& v, std::size_t rank, const char* op) {
  require(v.value().rank() == rank, [&] {
    return std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(v.shape());
  });
}

inline void require_same(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(),
          [&] { return std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()); });
}

inline void require_mask(const Mask& mask, std::size_t n, const char* op) {
  require(mask.size() == n, [&] {
    return std::string(op) + ": mask length " + std::to_string(mask.size()) + " does not match " + std::to_string(n);
  });
}

template <class F, class G>
Var unary(Var x, const char* op, F fwd, G dfdx_from_out) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const std::size_t xid = x.id;
  const std::size_t self = x.graph->size();
  return x.graph->record(
      std::move(out), {xid},
      [xid, self, dfdx_from_out](Graph& g, std::span<const double> gout) {
        auto gx = g.grad_target(xid);
        if (gx.empty()) return;
        const Tensor& y = g.value(self);
        const Tensor& xin = g.value(xid);
        for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += gout[i] * dfdx_from_out(xin[i], y[i]);
      },
      op);
}

}  // namespace detail

namespace ops {

inline Var add(Var a, Var b) {
  detail::require_same(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(
      std::move(out), {ia, ib},
      [ia, ib](Graph& g, std::span<const double> go) {
        for (std::size_t id : {ia, ib}) {
          auto gx = g.grad_target(id);
          if (gx.empty()) continue;
          for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        }
      },
      "add");
}

inline Var sub(Var a, Var b) {
  detail::require_same(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(
      std::move(out), {ia, ib},
      [ia, ib](Graph& g, std::span<const double> go) {
        if (auto ga = g.grad_target(ia); !ga.empty())
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        if (auto gb = g.grad_target(ib); !gb.empty())
          for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      },
      "sub");
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(
      std::move(out), {ia, ib},
      [ia, ib](Graph& g, std::span<const double> go) {
        const Tensor& av = g.value(ia);
        const Tensor& bv = g.value(ib);
        if (auto ga = g.grad_target(ia); !ga.empty())
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
        if (auto gb = g.grad_target(ib); !gb.empty())
          for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
      },
      "mul");
}

inline Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.data) v *= c;
  const std::size_t ia = a.id;
  return a.graph->record(
      std::move(out), {ia},
      [ia, c](Graph& g, std::span<const double> go) {
        auto ga = g.grad_target(ia);
        if (ga.empty()) return;
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += c * go[i];
      },
      "scale");
}

/// Sum of equally shaped tensors.
inline Var add_n(std::span<const Var> xs) {
  detail::require(!xs.empty(), "add_n: no inputs");
  Tensor out(xs[0].shape());
  std::vector<std::size_t> ids;
  for (const Var& x : xs) {
    detail::require_same(xs[0], x, "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x.value()[i];
    ids.push_back(x.id);
  }
  return xs[0].graph->record(
      std::move(out), ids,
      [ids](Graph& g, std::span<const double> go) {
        for (std::size_t id : ids) {
          auto gx = g.grad_target(id);
          if (gx.empty()) continue;
          for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        }
      },
      "add_n");
}

inline Var tanh(Var x) {
  return detail::unary(x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid_value(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Var sigmoid(Var x) {
  return detail::unary(x, "sigmoid", sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(Var x) {
  return detail::unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// Sum of all elements, as a scalar.
inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data) s += v;
  const std::size_t ix = x.id;
  return x.graph->record(
      Tensor::scalar(s), {ix},
      [ix](Graph& g, std::span<const double> go) {
        auto gx = g.grad_target(ix);
        for (double& v : gx) v += go[0];
      },
      "sum");
}

inline Var dot(Var a, Var b) {
  detail::require_rank(a, 1, "dot");
  detail::require_same(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i] * b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(
      Tensor::scalar(s), {ia, ib},
      [ia, ib](Graph& g, std::span<const double> go) {
        const Tensor& av = g.value(ia);
        const Tensor& bv = g.value(ib);
        if (auto ga = g.grad_target(ia); !ga.empty())
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[0] * bv[i];
        if (auto gb = g.grad_target(ib); !gb.empty())
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[0] * av[i];
      },
      "dot");
}

/// y = W x for W [m x n], x [n].
inline Var matvec(Var w, Var x) {
  detail::require_rank(w, 2, "matvec");
  detail::require_rank(x, 1, "matvec");
  const std::size_t m = w.value().rows(), n = w.value().cols();
  detail::require(x.value().size() == n,
                  [&] { return "matvec: " + shape_str(w.shape()) + " x " + shape_str(x.shape()); });
  Tensor out(Shape{m});
  const Tensor& wv = w.value();
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += wv.at(i, j) * xv[j];
    out[i] = s;
  }
  const std::size_t iw = w.id, ix = x.id;
  return w.graph->record(
      std::move(out), {iw, ix},
      [iw, ix, m, n](Graph& g, std::span<const double> go) {
        const Tensor& wv = g.value(iw);
        const Tensor& xv = g.value(ix);
        if (auto gw = g.grad_target(iw); !gw.empty())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gw[i * n + j] += go[i] * xv[j];
        if (auto gx = g.grad_target(ix); !gx.empty())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gx[j] += wv.at(i, j) * go[i];
      },
      "matvec");
}

/// y = a^T X for a [m], X [m x n]: the attention-weighted sum of rows.
inline Var vecmat(Var a, Var x) {
  detail::require_rank(a, 1, "vecmat");
  detail::require_rank(x, 2, "vecmat");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  detail::require(a.value().size() == m,
                  [&] { return "vecmat: " + shape_str(a.shape()) + " x " + shape_str(x.shape()); });
  Tensor out(Shape{n});
  const Tensor& av = a.value();
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += av[i] * xv.at(i, j);
  const std::size_t ia = a.id, ix = x.id;
  return a.graph->record(
      std::move(out), {ia, ix},
      [ia, ix, m, n](Graph& g, std::span<const double> go) {
        const Tensor& av = g.value(ia);
        const Tensor& xv = g.value(ix);
        if (auto ga = g.grad_target(ia); !ga.empty())
          for (std::size_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += go[j] * xv.at(i, j);
            ga[i] += s;
          }
        if (auto gx = g.grad_target(ix); !gx.empty())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += av[i] * go[j];
      },
      "vecmat");
}

/// C = A B for A [m x k], B [k x n].
inline Var matmul(Var a, Var b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().cols();
  detail::require(b.value().rows() == k,
                  [&] { return "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()); });
  Tensor out(Shape{m, n});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av.at(i, p);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aip * bv.at(p, j);
    }
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(
      std::move(out), {ia, ib},
      [ia, ib, m, k, n](Graph& g, std::span<const double> go) {
        const Tensor& av = g.value(ia);
        const Tensor& bv = g.value(ib);
        if (auto ga = g.grad_target(ia); !ga.empty())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * bv.at(p, j);
              ga[i * k + p] += s;
            }
        if (auto gb = g.grad_target(ib); !gb.empty())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = av.at(i, p);
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * go[i * n + j];
            }
      },
      "matmul");
}

/// C = A B^T for A [m x k], B [n x k]. Row-wise linear map when B is a weight matrix.
inline Var matmul_nt(Var a, Var b) {
  detail::require_rank(a, 2, "matmul_nt");
  detail::require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().rows();
  detail::require(b.value().cols() == k,
                  [&] { return "matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T"; });
  Tensor out(Shape{m, n});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += av.at(i, p) * bv.at(j, p);
      out.at(i, j) = s;
    }
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(
      std::move(out), {ia, ib},
      [ia, ib, m, k, n](Graph& g, std::span<const double> go) {
        const Tensor& av = g.value(ia);
        const Tensor& bv = g.value(ib);
        if (auto ga = g.grad_target(ia); !ga.empty())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const double gij = go[i * n + j];
              if (gij == 0.0) continue;
              for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv.at(j, p);
            }
        if (auto gb = g.grad_target(ib); !gb.empty())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const double gij = go[i * n + j];
              if (gij == 0.0) continue;
              for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * av.at(i, p);
            }
      },
      "matmul_nt");
}

/// Adds b [n] to every row of X [m x n]; with a vector X it is a plain add.
inline Var add_row(Var x, Var b) {
  detail::require_rank(b, 1, "add_row");
  if (x.value().rank() == 1) return add(x, b);
  detail::require_rank(x, 2, "add_row");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  detail::require(b.value().size() == n,
                  [&] { return "add_row: " + shape_str(x.shape()) + " + " + shape_str(b.shape()); });
  Tensor out = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += b.value()[j];
  const std::size_t ix = x.id, ib = b.id;
  return x.graph->record(
      std::move(out), {ix, ib},
      [ix, ib, m, n](Graph& g, std::span<const double> go) {
        if (auto gx = g.grad_target(ix); !gx.empty())
          for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        if (auto gb = g.grad_target(ib); !gb.empty())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
      },
      "add_row");
}

namespace detail_softmax {

inline void forward(std::span<const double> s, const Mask* mask, std::span<double> out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!mask || (*mask)[i]) mx = std::max(mx, s[i]);
  if (mx == -std::numeric_limits<double>::infinity()) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out[i] = (!mask || (*mask)[i]) ? std::exp(s[i] - mx) : 0.0;
    z += out[i];
  }
  for (double& v : out) v /= z;
}

inline void backward(std::span<const double> y, std::span<const double> go, std::span<double> gx) {
  double inner = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) inner += y[i] * go[i];
  for (std::size_t i = 0; i < y.size(); ++i) gx[i] += y[i] * (go[i] - inner);
}

}  // namespace detail_softmax

/// Softmax over positions with nonzero mask; masked positions get exactly 0.
/// An all-masked input yields all zeros.
inline Var masked_softmax(Var s, const Mask& mask) {
  detail::require_rank(s, 1, "softmax");
  detail::require(s.value().size() >= 1, "softmax: empty input");
  detail::require_mask(mask, s.value().size(), "softmax");
  Tensor out(s.shape());
  detail_softmax::forward(s.value().data, &mask, out.data);
  const std::size_t is = s.id;
  const std::size_t self = s.graph->size();
  return s.graph->record(
      std::move(out), {is},
      [is, self](Graph& g, std::span<const double> go) {
        auto gs = g.grad_target(is);
        if (gs.empty()) return;
        detail_softmax::backward(g.value(self).data, go, gs);
      },
      "softmax");
}

inline Var softmax(Var s) {
  detail::require_rank(s, 1, "softmax");
  detail::require(s.value().size() >= 1, "softmax: empty input");
  return masked_softmax(s, Mask(s.value().size(), 1));
}

/// Row-wise softmax of S [m x n], normalising over columns with nonzero mask.
inline Var masked_softmax_rows(Var s, const Mask& col_mask) {
  detail::require_rank(s, 2, "softmax_rows");
  const std::size_t m = s.value().rows(), n = s.value().cols();
  detail::require_mask(col_mask, n, "softmax_rows");
  Tensor out(s.shape());
  for (std::size_t i = 0; i < m; ++i) detail_softmax::forward(s.value().row(i), &col_mask, out.row(i));
  const std::size_t is = s.id;
  const std::size_t self = s.graph->size();
  return s.graph->record(
      std::move(out), {is},
      [is, self, m, n](Graph& g, std::span<const double> go) {
        auto gs = g.grad_target(is);
        if (gs.empty()) return;
        const Tensor& y = g.value(self);
        for (std::size_t i = 0; i < m; ++i)
          detail_softmax::backward(y.row(i), go.subspan(i * n, n), gs.subspan(i * n, n));
      },
      "softmax_rows");
}

/// Unweighted mean over masked rows of X [m x n]; all-masked gives zeros.
inline Var masked_mean_rows(Var x, const Mask& mask) {
  detail::require_rank(x, 2, "mean_rows");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  detail::require_mask(mask, m, "mean_rows");
  std::size_t count = 0;
  for (auto v : mask) count += v ? 1 : 0;
  Tensor out(Shape{n});
  if (count > 0) {
    for (std::size_t i = 0; i < m; ++i)
      if (mask[i])
        for (std::size_t j = 0; j < n; ++j) out[j] += x.value().at(i, j);
    for (double& v : out.data) v /= static_cast<double>(count);
  }
  const std::size_t ix = x.id;
  return x.graph->record(
      std::move(out), {ix},
      [ix, mask, count, m, n](Graph& g, std::span<const double> go) {
        auto gx = g.grad_target(ix);
        if (gx.empty() || count == 0) return;
        const double w = 1.0 / static_cast<double>(count);
        for (std::size_t i = 0; i < m; ++i)
          if (mask[i])
            for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += w * go[j];
      },
      "mean_rows");
}

/// Concatenates vectors end to end.
inline Var concat(std::span<const Var> xs) {
  detail::require(!xs.empty(), "concat: no inputs");
  std::vector<double> data;
  std::vector<std::size_t> ids, offsets;
  for (const Var& x : xs) {
    detail::require_rank(x, 1, "concat");
    offsets.push_back(data.size());
    ids.push_back(x.id);
    data.insert(data.end(), x.value().data.begin(), x.value().data.end());
  }
  return xs[0].graph->record(
      Tensor::vector(std::move(data)), ids,
      [ids, offsets](Graph& g, std::span<const double> go) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          auto gx = g.grad_target(ids[k]);
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[offsets[k] + i];
        }
      },
      "concat");
}

/// Stacks k vectors of length n into a [k x n] matrix.
inline Var stack_rows(std::span<const Var> xs) {
  detail::require(!xs.empty(), "stack_rows: no inputs");
  const std::size_t n = xs[0].value().size();
  std::vector<double> data;
  std::vector<std::size_t> ids;
  for (const Var& x : xs) {
    detail::require_rank(x, 1, "stack_rows");
    detail::require(x.value().size() == n, "stack_rows: ragged rows");
    ids.push_back(x.id);
    data.insert(data.end(), x.value().data.begin(), x.value().data.end());
  }
  return xs[0].graph->record(
      Tensor::matrix(xs.size(), n, std::move(data)), ids,
      [ids, n](Graph& g, std::span<const double> go) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          auto gx = g.grad_target(ids[k]);
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[k * n + i];
        }
      },
      "stack_rows");
}

/// Concatenates [m x n_k] matrices along columns.
inline Var concat_cols(std::span<const Var> xs) {
  detail::require(!xs.empty(), "concat_cols: no inputs");
  const std::size_t m = xs[0].value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, offsets, widths;
  for (const Var& x : xs) {
    detail::require_rank(x, 2, "concat_cols");
    detail::require(x.value().rows() == m, "concat_cols: row count mismatch");
    ids.push_back(x.id);
    offsets.push_back(total);
    widths.push_back(x.value().cols());
    total += x.value().cols();
  }
  Tensor out(Shape{m, total});
  for (std::size_t k = 0; k < xs.size(); ++k)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out.at(i, offsets[k] + j) = xs[k].value().at(i, j);
  return xs[0].graph->record(
      std::move(out), ids,
      [ids, offsets, widths, m, total](Graph& g, std::span<const double> go) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          auto gx = g.grad_target(ids[k]);
          if (gx.empty()) continue;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) gx[i * widths[k] + j] += go[i * total + offsets[k] + j];
        }
      },
      "concat_cols");
}

/// Row i of X [m x n] as a vector.
inline Var row(Var x, std::size_t i) {
  detail::require_rank(x, 2, "row");
  detail::require(i < x.value().rows(), "row: index out of range");
  const std::size_t n = x.value().cols();
  auto r = x.value().row(i);
  const std::size_t ix = x.id;
  return x.graph->record(
      Tensor::vector(std::vector<double>(r.begin(), r.end())), {ix},
      [ix, i, n](Graph& g, std::span<const double> go) {
        auto gx = g.grad_target(ix);
        if (gx.empty()) return;
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += go[j];
      },
      "row");
}

/// Embedding lookup: rows of table [V x D] selected by ids, as [ids.size() x D].
inline Var gather_rows(Var table, const std::vector<std::int32_t>& ids) {
  detail::require_rank(table, 2, "gather_rows");
  const std::size_t v = table.value().rows(), d = table.value().cols();
  Tensor out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < v, [&] {
      return "gather_rows: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(v);
    });
    auto src = table.value().row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const std::size_t it = table.id;
  return table.graph->record(
      std::move(out), {it},
      [it, ids, d](Graph& g, std::span<const double> go) {
        auto gt = g.grad_target(it);
        if (gt.empty()) return;
        for (std::size_t i = 0; i < ids.size(); ++i)
          for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(ids[i]) * d + j] += go[i * d + j];
      },
      "gather_rows");
}

/// 1-D convolution over positions followed by ReLU.
/// input [M x Din], kernel [Nf x (2K+1) x Din], bias [Nf] -> [M x Nf].
/// The input is zero-padded by K positions on both sides.
inline Var conv1d(Var input, Var kernel, Var bias) {
  detail::require_rank(input, 2, "conv1d");
  detail::require_rank(kernel, 3, "conv1d");
  detail::require_rank(bias, 1, "conv1d");
  const Tensor& x = input.value();
  const Tensor& k = kernel.value();
  const std::size_t m = x.rows(), din = x.cols();
  const std::size_t nf = k.shape[0], width = k.shape[1];
  detail::require(m >= 1, "conv1d: empty input");
  detail::require(width % 2 == 1, [&] { return "conv1d: window must be odd, got " + std::to_string(width); });
  detail::require(k.shape[2] == din, [&] {
    return "conv1d: kernel depth " + std::to_string(k.shape[2]) + " does not match input width " + std::to_string(din);
  });
  detail::require(bias.value().size() == nf, "conv1d: bias length does not match filter count");
  const auto half = static_cast<std::ptrdiff_t>(width / 2);
  Tensor out(Shape{m, nf});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t f = 0; f < nf; ++f) {
      double s = bias.value()[f];
      for (std::size_t w = 0; w < width; ++w) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(w) - half;
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(m)) continue;
        const double* kr = &k.data[(f * width + w) * din];
        const double* xr = &x.data[static_cast<std::size_t>(pos) * din];
        for (std::size_t d = 0; d < din; ++d) s += kr[d] * xr[d];
      }
      out.at(i, f) = s > 0.0 ? s : 0.0;
    }
  const std::size_t ix = input.id, ik = kernel.id, ib = bias.id;
  const std::size_t self = input.graph->size();
  return input.graph->record(
      std::move(out), {ix, ik, ib},
      [ix, ik, ib, self, m, din, nf, width, half](Graph& g, std::span<const double> go) {
        const Tensor& y = g.value(self);
        const Tensor& x = g.value(ix);
        const Tensor& k = g.value(ik);
        auto gx = g.grad_target(ix);
        auto gk = g.grad_target(ik);
        auto gb = g.grad_target(ib);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t f = 0; f < nf; ++f) {
            if (y.at(i, f) <= 0.0) continue;
            const double gpre = go[i * nf + f];
            if (gpre == 0.0) continue;
            if (!gb.empty()) gb[f] += gpre;
            for (std::size_t w = 0; w < width; ++w) {
              const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(w) - half;
              if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(m)) continue;
              const std::size_t p = static_cast<std::size_t>(pos);
              const std::size_t kbase = (f * width + w) * din;
              if (!gk.empty())
                for (std::size_t d = 0; d < din; ++d) gk[kbase + d] += gpre * x.data[p * din + d];
              if (!gx.empty())
                for (std::size_t d = 0; d < din; ++d) gx[p * din + d] += gpre * k.data[kbase + d];
            }
          }
      },
      "conv1d");
}

/// Inverted dropout: zeroes entries with probability `rate` and rescales survivors.
inline Var dropout(Var x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor mask(x.shape());
  for (double& v : mask.data) v = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  return mul(x, x.graph->input(std::move(mask)));
}

inline constexpr double kProbClamp = 1e-12;

/// Negative log-likelihood of one Bernoulli observation with probability rho.
/// rho is clamped to [1e-12, 1 - 1e-12] before the log.
inline Var nll(Var rho, int label) {
  detail::require(rho.value().size() == 1, "nll: rho must be a scalar");
  const double r = rho.value().item();
  const double c = std::clamp(r, kProbClamp, 1.0 - kProbClamp);
  const bool inside = c == r;
  const double loss = label == 1 ? -std::log(c) : -std::log(1.0 - c);
  const std::size_t ir = rho.id;
  return rho.graph->record(
      Tensor::scalar(loss), {ir},
      [ir, c, inside, label](Graph& g, std::span<const double> go) {
        auto gr = g.grad_target(ir);
        if (gr.empty() || !inside) return;
        gr[0] += go[0] * (label == 1 ? -1.0 / c : 1.0 / (1.0 - c));
      },
      "nll");
}

}  // namespace ops

/// Max over components of |analytic - numeric| / (|analytic| + |numeric| + 1e-8).
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw DimensionError("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]) / (std::abs(analytic[i]) + std::abs(numeric[i]) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

using TensorFn = std::function<Var(Graph&, Var)>;

/// Compares the tape gradient of a scalar function against central differences.
inline double finite_diff_check(const TensorFn& f, const Tensor& x, double eps) {
  std::vector<double> analytic;
  {
    Graph g;
    Var xv = g.input(x, true);
    g.backward(f(g, xv));
    analytic = g.grad(xv);
  }
  auto eval = [&](const Tensor& at) {
    Graph g;
    return f(g, g.input(at)).value().item();
  };
  std::vector<double> numeric(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor plus = x, minus = x;
    plus[i] += eps;
    minus[i] -= eps;
    numeric[i] = (eval(plus) - eval(minus)) / (2.0 * eps);
  }
  return max_relative_error(analytic, numeric);
}

struct ParamCoord {
  Parameter* param;
  std::size_t index;
};

using LossFn = std::function<Var(Graph&)>;

struct FiniteDiffReport {
  double max_error = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;  // coordinates whose step crossed a ReLU/clamp kink
};

/// Same check over selected scalar coordinates of model parameters. A
/// coordinate whose forward and backward one-sided slopes disagree sits on a
/// non-differentiable point inside the step; it is counted in `kinks` and left
/// out of `max_error`.
inline FiniteDiffReport finite_diff_report(const LossFn& loss, std::span<const ParamCoord> coords, double eps) {
  for (const ParamCoord& c : coords) c.param->zero_grad();
  double mid = 0.0;
  {
    Graph g;
    Var l = loss(g);
    mid = l.value().item();
    g.backward(l);
  }
  std::vector<double> analytic;
  for (const ParamCoord& c : coords) analytic.push_back(c.param->grad[c.index]);
  auto eval = [&] {
    Graph g;
    return loss(g).value().item();
  };
  FiniteDiffReport report;
  std::vector<double> kept_analytic, kept_numeric;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    double& slot = coords[k].param->value[coords[k].index];
    const double saved = slot;
    slot = saved + eps;
    const double up = eval();
    slot = saved - eps;
    const double down = eval();
    slot = saved;
    const double fwd = (up - mid) / eps, bwd = (mid - down) / eps;
    if (std::abs(fwd - bwd) > 1e-2 * (std::abs(fwd) + std::abs(bwd)) + 1e-9) {
      ++report.kinks;
      continue;
    }
    kept_analytic.push_back(analytic[k]);
    kept_numeric.push_back((up - down) / (2.0 * eps));
  }
  report.checked = kept_analytic.size();
  report.max_error = max_relative_error(kept_analytic, kept_numeric);
  return report;
}

inline double finite_diff_check(const LossFn& loss, std::span<const ParamCoord> coords, double eps) {
  return finite_diff_report(loss, coords, eps).max_error;
}

}  // namespace d2nn
