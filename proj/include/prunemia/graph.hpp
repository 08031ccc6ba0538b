#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "prunemia/rng.hpp"
#include "prunemia/tensor.hpp"

namespace prunemia {

class Graph;

// Handle to one node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;
  const Tensor& value() const;
};

// Reverse-mode autodiff tape. Operations execute eagerly and append their
// records in topological order (every input id precedes its consumer), so the
// backward pass is a single reverse sweep over the node list.
class Graph {
 public:
  struct Node {
    const char* op;
    std::vector<int> inputs;
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool grad_ready = false;
    std::string leaf_name;
    std::function<void(Graph&, const Node&)> backward;
  };

  Var input(Tensor value) { return emplace("input", {}, std::move(value), false, nullptr); }

  Var leaf(const std::string& name, Tensor value) {
    Var v = emplace("leaf", {}, std::move(value), true, nullptr);
    nodes_[static_cast<std::size_t>(v.id)].leaf_name = name;
    named_.emplace(name, v.id);
    return v;
  }

  Var emplace(const char* op, std::vector<int> inputs, Tensor value, bool needs_grad,
              std::function<void(Graph&, const Node&)> backward) {
    for (double x : value.vec())
      if (!std::isfinite(x)) throw NumericError(std::string(op) + ": produced non-finite value");
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Tensor& value(int id) const { return node(id).value; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of a node, or nullptr when the node does not require one.
  Tensor* grad_ptr(int id) {
    Node& n = node(id);
    if (!n.needs_grad) return nullptr;
    if (!n.grad_ready) {
      n.grad = Tensor::zeros(n.value.shape());
      n.grad_ready = true;
    }
    return &n.grad;
  }

  // Populates gradients for every needs-grad node reachable from `loss`.
  void backward(Var loss) {
    if (loss.graph != this) throw std::invalid_argument("backward: loss from another graph");
    const Node& ln = node(loss.id);
    if (ln.value.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_str(ln.value.shape()));
    if (!ln.needs_grad) return;
    for (Node& n : nodes_) n.grad_ready = false;
    std::vector<char> reach(nodes_.size(), 0);
    std::vector<int> stack{loss.id};
    reach[static_cast<std::size_t>(loss.id)] = 1;
    while (!stack.empty()) {
      int id = stack.back();
      stack.pop_back();
      for (int in : node(id).inputs)
        if (!reach[static_cast<std::size_t>(in)]) {
          reach[static_cast<std::size_t>(in)] = 1;
          stack.push_back(in);
        }
    }
    (*grad_ptr(loss.id))[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      const Node& n = node(id);
      if (!reach[static_cast<std::size_t>(id)] || !n.needs_grad || !n.backward || !n.grad_ready)
        continue;
      n.backward(*this, n);
    }
  }

  // Gradient of a named leaf after backward(); zero tensor if unreached.
  Tensor leaf_grad(const std::string& name) const {
    auto it = named_.find(name);
    if (it == named_.end()) throw std::invalid_argument("leaf_grad: unknown leaf " + name);
    const Node& n = node(it->second);
    return n.grad_ready ? n.grad : Tensor::zeros(n.value.shape());
  }

  std::map<std::string, Tensor> gradients() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : named_) out.emplace(name, leaf_grad(name));
    return out;
  }

 private:
  std::vector<Node> nodes_;
  std::map<std::string, int> named_;
};

inline const Tensor& Var::value() const { return graph->value(id); }

namespace detail {

inline bool any_needs(const Graph& g, std::initializer_list<int> ids) {
  for (int id : ids)
    if (g.node(id).needs_grad) return true;
  return false;
}

// b broadcasts over a's leading rows iff b's shape equals a's trailing axis.
inline bool trailing_broadcast(const Tensor& a, const Tensor& b) {
  return b.rank() == 1 && b.dim(0) == a.last_dim();
}

inline void accumulate(Tensor& dst, const Tensor& src) {
  for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---- elementwise and broadcast arithmetic ----------------------------------

inline Var add(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  bool bc = detail::trailing_broadcast(av, bv);
  if (!bc && !av.same_shape(bv))
    throw ShapeError("add: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor out = av;
  const std::int64_t d = av.last_dim(), rows = av.lead_rows();
  if (bc) {
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < d; ++c) out[r * d + c] += bv[c];
  } else {
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  }
  return g.emplace("add", {a.id, b.id}, std::move(out), detail::any_needs(g, {a.id, b.id}),
                   [bc, d, rows](Graph& gr, const Graph::Node& n) {
                     if (Tensor* da = gr.grad_ptr(n.inputs[0])) detail::accumulate(*da, n.grad);
                     if (Tensor* db = gr.grad_ptr(n.inputs[1])) {
                       if (bc) {
                         for (std::int64_t r = 0; r < rows; ++r)
                           for (std::int64_t c = 0; c < d; ++c) (*db)[c] += n.grad[r * d + c];
                       } else {
                         detail::accumulate(*db, n.grad);
                       }
                     }
                   });
}

inline Var mul(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  bool bc = detail::trailing_broadcast(av, bv);
  if (!bc && !av.same_shape(bv))
    throw ShapeError("mul: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor out = av;
  const std::int64_t d = av.last_dim(), rows = av.lead_rows();
  if (bc) {
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < d; ++c) out[r * d + c] *= bv[c];
  } else {
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  }
  return g.emplace("mul", {a.id, b.id}, std::move(out), detail::any_needs(g, {a.id, b.id}),
                   [bc, d, rows](Graph& gr, const Graph::Node& n) {
                     const Tensor& av2 = gr.value(n.inputs[0]);
                     const Tensor& bv2 = gr.value(n.inputs[1]);
                     if (Tensor* da = gr.grad_ptr(n.inputs[0])) {
                       if (bc) {
                         for (std::int64_t r = 0; r < rows; ++r)
                           for (std::int64_t c = 0; c < d; ++c)
                             (*da)[r * d + c] += n.grad[r * d + c] * bv2[c];
                       } else {
                         for (std::int64_t i = 0; i < da->numel(); ++i)
                           (*da)[i] += n.grad[i] * bv2[i];
                       }
                     }
                     if (Tensor* db = gr.grad_ptr(n.inputs[1])) {
                       if (bc) {
                         for (std::int64_t r = 0; r < rows; ++r)
                           for (std::int64_t c = 0; c < d; ++c)
                             (*db)[c] += n.grad[r * d + c] * av2[r * d + c];
                       } else {
                         for (std::int64_t i = 0; i < db->numel(); ++i)
                           (*db)[i] += n.grad[i] * av2[i];
                       }
                     }
                   });
}

inline Var scale(Var a, double c) {
  Graph& g = *a.graph;
  Tensor out = a.value();
  for (double& x : out.vec()) x *= c;
  return g.emplace("scale", {a.id}, std::move(out), g.node(a.id).needs_grad,
                   [c](Graph& gr, const Graph::Node& n) {
                     if (Tensor* da = gr.grad_ptr(n.inputs[0]))
                       for (std::int64_t i = 0; i < da->numel(); ++i) (*da)[i] += c * n.grad[i];
                   });
}

inline Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

// ---- unary maps -------------------------------------------------------------

namespace detail {

template <typename Fwd, typename Bwd>
Var unary(const char* op, Var a, Fwd fwd, Bwd bwd) {
  Graph& g = *a.graph;
  Tensor out = a.value();
  for (double& x : out.vec()) x = fwd(x);
  return g.emplace(op, {a.id}, std::move(out), g.node(a.id).needs_grad,
                   [bwd](Graph& gr, const Graph::Node& n) {
                     Tensor* da = gr.grad_ptr(n.inputs[0]);
                     if (!da) return;
                     const Tensor& x = gr.value(n.inputs[0]);
                     for (std::int64_t i = 0; i < da->numel(); ++i)
                       (*da)[i] += n.grad[i] * bwd(x[i]);
                   });
}

}  // namespace detail

inline Var relu(Var a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x) { return x > 0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(Var a, double slope = 0.01) {
  return detail::unary(
      "leaky_relu", a, [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x) { return x > 0 ? 1.0 : slope; });
}

inline Var gelu(Var a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return detail::unary(
      "gelu", a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [=](double x) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
}

inline Var log_op(Var a) {
  return detail::unary(
      "log", a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

inline Var exp_op(Var a) {
  Graph& g = *a.graph;
  Tensor out = a.value();
  for (double& x : out.vec()) x = std::exp(x);
  return g.emplace("exp", {a.id}, std::move(out), g.node(a.id).needs_grad,
                   [](Graph& gr, const Graph::Node& n) {
                     if (Tensor* da = gr.grad_ptr(n.inputs[0]))
                       for (std::int64_t i = 0; i < da->numel(); ++i)
                         (*da)[i] += n.grad[i] * n.value[i];
                   });
}

inline Var abs_op(Var a) {
  return detail::unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

// Gradient is blocked on clamped entries.
inline Var clamp_min(Var a, double lo) {
  Graph& g = *a.graph;
  Tensor out = a.value();
  for (double& x : out.vec()) x = std::max(x, lo);
  return g.emplace("clamp_min", {a.id}, std::move(out), g.node(a.id).needs_grad,
                   [lo](Graph& gr, const Graph::Node& n) {
                     Tensor* da = gr.grad_ptr(n.inputs[0]);
                     if (!da) return;
                     const Tensor& x = gr.value(n.inputs[0]);
                     for (std::int64_t i = 0; i < da->numel(); ++i)
                       if (x[i] >= lo) (*da)[i] += n.grad[i];
                   });
}

// ---- matrix products --------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw ShapeError("matmul: shape mismatch " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  const std::int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  return g.emplace("matmul", {a.id, b.id}, std::move(out), detail::any_needs(g, {a.id, b.id}),
                   [m, k, n](Graph& gr, const Graph::Node& nd) {
                     const Tensor& av2 = gr.value(nd.inputs[0]);
                     const Tensor& bv2 = gr.value(nd.inputs[1]);
                     if (Tensor* da = gr.grad_ptr(nd.inputs[0]))
                       gemm_nt(nd.grad.data(), bv2.data(), da->data(), m, n, k, true);
                     if (Tensor* db = gr.grad_ptr(nd.inputs[1]))
                       gemm_tn(av2.data(), nd.grad.data(), db->data(), k, m, n, true);
                   });
}

// y = x * W^T + b over the last axis; W is [out x in] so row i holds the
// incoming weights of output unit i.
inline Var linear(Var x, Var w, Var b) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (wv.rank() != 2 || xv.last_dim() != wv.dim(1))
    throw ShapeError("linear: input " + shape_str(xv.shape()) + " incompatible with weight " +
                     shape_str(wv.shape()));
  const std::int64_t out_dim = wv.dim(0);
  if (bv.rank() != 1 || bv.dim(0) != out_dim)
    throw ShapeError("linear: bias " + shape_str(bv.shape()) + " incompatible with weight " +
                     shape_str(wv.shape()));
  const std::int64_t rows = xv.lead_rows(), in_dim = xv.last_dim();
  Shape out_shape = xv.shape();
  out_shape.back() = out_dim;
  Tensor out(out_shape);
  gemm_nt(xv.data(), wv.data(), out.data(), rows, in_dim, out_dim);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < out_dim; ++c) out[r * out_dim + c] += bv[c];
  return g.emplace("linear", {x.id, w.id, b.id}, std::move(out),
                   detail::any_needs(g, {x.id, w.id, b.id}),
                   [rows, in_dim, out_dim](Graph& gr, const Graph::Node& n) {
                     const Tensor& xv2 = gr.value(n.inputs[0]);
                     const Tensor& wv2 = gr.value(n.inputs[1]);
                     if (Tensor* dx = gr.grad_ptr(n.inputs[0]))
                       gemm_nn(n.grad.data(), wv2.data(), dx->data(), rows, out_dim, in_dim, true);
                     if (Tensor* dw = gr.grad_ptr(n.inputs[1]))
                       gemm_tn(n.grad.data(), xv2.data(), dw->data(), out_dim, rows, in_dim, true);
                     if (Tensor* db = gr.grad_ptr(n.inputs[2]))
                       for (std::int64_t r = 0; r < rows; ++r)
                         for (std::int64_t c = 0; c < out_dim; ++c)
                           (*db)[c] += n.grad[r * out_dim + c];
                   });
}

// Batched matmul over [B,m,k] x [B,k,n]; transpose_b reads the second factor
// as [B,n,k] and multiplies by its transpose.
inline Var bmm(Var a, Var b, bool transpose_b = false) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) ||
      (transpose_b ? av.dim(2) != bv.dim(2) : av.dim(2) != bv.dim(1)))
    throw ShapeError(std::string("bmm: shape mismatch ") + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  const std::int64_t B = av.dim(0), m = av.dim(1), k = av.dim(2);
  const std::int64_t n = transpose_b ? bv.dim(1) : bv.dim(2);
  Tensor out({B, m, n});
  for (std::int64_t i = 0; i < B; ++i) {
    const double* ap = av.data() + i * m * k;
    const double* bp = bv.data() + i * (transpose_b ? n * k : k * n);
    double* cp = out.data() + i * m * n;
    if (transpose_b)
      gemm_nt(ap, bp, cp, m, k, n);
    else
      gemm_nn(ap, bp, cp, m, k, n);
  }
  return g.emplace(
      "bmm", {a.id, b.id}, std::move(out), detail::any_needs(g, {a.id, b.id}),
      [B, m, k, n, transpose_b](Graph& gr, const Graph::Node& nd) {
        const Tensor& av2 = gr.value(nd.inputs[0]);
        const Tensor& bv2 = gr.value(nd.inputs[1]);
        Tensor* da = gr.grad_ptr(nd.inputs[0]);
        Tensor* db = gr.grad_ptr(nd.inputs[1]);
        for (std::int64_t i = 0; i < B; ++i) {
          const double* gp = nd.grad.data() + i * m * n;
          const double* ap = av2.data() + i * m * k;
          const double* bp = bv2.data() + i * (transpose_b ? n * k : k * n);
          if (transpose_b) {
            // c = a b^T: da += g b, db += g^T a
            if (da) gemm_nn(gp, bp, da->data() + i * m * k, m, n, k, true);
            if (db) gemm_tn(gp, ap, db->data() + i * n * k, n, m, k, true);
          } else {
            // c = a b: da += g b^T, db += a^T g
            if (da) gemm_nt(gp, bp, da->data() + i * m * k, m, n, k, true);
            if (db) gemm_tn(ap, gp, db->data() + i * k * n, k, m, n, true);
          }
        }
      });
}

// ---- softmax family ---------------------------------------------------------

namespace detail {

inline void softmax_rows(const double* x, double* y, std::int64_t rows, std::int64_t d) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    double* yr = y + r * d;
    double mx = xr[0];
    for (std::int64_t c = 1; c < d; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (std::int64_t c = 0; c < d; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    for (std::int64_t c = 0; c < d; ++c) yr[c] /= sum;
  }
}

inline void log_softmax_rows(const double* x, double* y, std::int64_t rows, std::int64_t d) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    double* yr = y + r * d;
    double mx = xr[0];
    for (std::int64_t c = 1; c < d; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (std::int64_t c = 0; c < d; ++c) sum += std::exp(xr[c] - mx);
    const double lse = mx + std::log(sum);
    for (std::int64_t c = 0; c < d; ++c) yr[c] = xr[c] - lse;
  }
}

}  // namespace detail

// Softmax over the last axis, stabilized by max subtraction.
inline Var softmax(Var a) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const std::int64_t rows = av.lead_rows(), d = av.last_dim();
  Tensor out(av.shape());
  detail::softmax_rows(av.data(), out.data(), rows, d);
  return g.emplace("softmax", {a.id}, std::move(out), g.node(a.id).needs_grad,
                   [rows, d](Graph& gr, const Graph::Node& n) {
                     Tensor* da = gr.grad_ptr(n.inputs[0]);
                     if (!da) return;
                     for (std::int64_t r = 0; r < rows; ++r) {
                       const double* y = n.value.data() + r * d;
                       const double* gp = n.grad.data() + r * d;
                       double dot = 0.0;
                       for (std::int64_t c = 0; c < d; ++c) dot += gp[c] * y[c];
                       double* dr = da->data() + r * d;
                       for (std::int64_t c = 0; c < d; ++c) dr[c] += y[c] * (gp[c] - dot);
                     }
                   });
}

inline Var log_softmax(Var a) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const std::int64_t rows = av.lead_rows(), d = av.last_dim();
  Tensor out(av.shape());
  detail::log_softmax_rows(av.data(), out.data(), rows, d);
  return g.emplace("log_softmax", {a.id}, std::move(out), g.node(a.id).needs_grad,
                   [rows, d](Graph& gr, const Graph::Node& n) {
                     Tensor* da = gr.grad_ptr(n.inputs[0]);
                     if (!da) return;
                     for (std::int64_t r = 0; r < rows; ++r) {
                       const double* logp = n.value.data() + r * d;
                       const double* gp = n.grad.data() + r * d;
                       double gsum = 0.0;
                       for (std::int64_t c = 0; c < d; ++c) gsum += gp[c];
                       double* dr = da->data() + r * d;
                       for (std::int64_t c = 0; c < d; ++c)
                         dr[c] += gp[c] - std::exp(logp[c]) * gsum;
                     }
                   });
}

// ---- layer norm, dropout ----------------------------------------------------

// Normalizes the last axis to zero mean / unit variance (population variance),
// then applies the learned affine (gamma, beta).
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  const std::int64_t rows = xv.lead_rows(), d = xv.last_dim();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  if (gv.numel() != d || bv.numel() != d)
    throw ShapeError("layer_norm: affine params must have length " + std::to_string(d));
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mean = 0.0;
    for (std::int64_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    for (std::int64_t c = 0; c < d; ++c) {
      const double xh = (xr[c] - mean) * is;
      xhat[r * d + c] = xh;
      out[r * d + c] = gv[c] * xh + bv[c];
    }
  }
  return g.emplace(
      "layer_norm", {x.id, gamma.id, beta.id}, std::move(out),
      detail::any_needs(g, {x.id, gamma.id, beta.id}),
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr,
                                                                      const Graph::Node& n) {
        const Tensor& gv2 = gr.value(n.inputs[1]);
        Tensor* dx = gr.grad_ptr(n.inputs[0]);
        Tensor* dgamma = gr.grad_ptr(n.inputs[1]);
        Tensor* dbeta = gr.grad_ptr(n.inputs[2]);
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* gp = n.grad.data() + r * d;
          const double* xh = xhat.data() + r * d;
          if (dgamma)
            for (std::int64_t c = 0; c < d; ++c) (*dgamma)[c] += gp[c] * xh[c];
          if (dbeta)
            for (std::int64_t c = 0; c < d; ++c) (*dbeta)[c] += gp[c];
          if (dx) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::int64_t c = 0; c < d; ++c) {
              const double dxh = gp[c] * gv2[c];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xh[c];
            }
            mean_dxhat /= static_cast<double>(d);
            mean_dxhat_xhat /= static_cast<double>(d);
            const double is = inv_std[static_cast<std::size_t>(r)];
            double* dr = dx->data() + r * d;
            for (std::int64_t c = 0; c < d; ++c)
              dr[c] += is * (gp[c] * gv2[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
          }
        }
      });
}

// Inverted dropout: surviving entries are scaled by 1/(1-rate) at train time
// so evaluation is the identity.
inline Var dropout(Var x, double rate, Rng& rng, bool training) {
  if (!training || rate == 0.0) return x;
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  Tensor mask(xv.shape());
  const double keep = 1.0 - rate;
  for (std::int64_t i = 0; i < mask.numel(); ++i)
    mask[i] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  Tensor out = xv;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return g.emplace("dropout", {x.id}, std::move(out), g.node(x.id).needs_grad,
                   [mask = std::move(mask)](Graph& gr, const Graph::Node& n) {
                     if (Tensor* dx = gr.grad_ptr(n.inputs[0]))
                       for (std::int64_t i = 0; i < dx->numel(); ++i)
                         (*dx)[i] += n.grad[i] * mask[i];
                   });
}

// ---- shape ops ---------------------------------------------------------------

inline Var reshape(Var a, Shape s) {
  Graph& g = *a.graph;
  Tensor out = a.value().reshaped(std::move(s));
  return g.emplace("reshape", {a.id}, std::move(out), g.node(a.id).needs_grad,
                   [](Graph& gr, const Graph::Node& n) {
                     if (Tensor* da = gr.grad_ptr(n.inputs[0]))
                       for (std::int64_t i = 0; i < da->numel(); ++i) (*da)[i] += n.grad[i];
                   });
}

// Columns [start, start+len) of the last axis.
inline Var slice_last(Var a, std::int64_t start, std::int64_t len) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const std::int64_t d = av.last_dim(), rows = av.lead_rows();
  if (start < 0 || len <= 0 || start + len > d)
    throw ShapeError("slice_last: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of " + shape_str(av.shape()));
  Shape s = av.shape();
  s.back() = len;
  Tensor out(s);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < len; ++c) out[r * len + c] = av[r * d + start + c];
  return g.emplace("slice_last", {a.id}, std::move(out), g.node(a.id).needs_grad,
                   [start, len, d, rows](Graph& gr, const Graph::Node& n) {
                     if (Tensor* da = gr.grad_ptr(n.inputs[0]))
                       for (std::int64_t r = 0; r < rows; ++r)
                         for (std::int64_t c = 0; c < len; ++c)
                           (*da)[r * d + start + c] += n.grad[r * len + c];
                   });
}

// Concatenate along the last axis.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Graph& g = *parts[0].graph;
  const std::int64_t rows = parts[0].value().lead_rows();
  std::int64_t total = 0;
  std::vector<int> ids;
  std::vector<std::int64_t> widths;
  bool needs = false;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    if (pv.lead_rows() != rows)
      throw ShapeError("concat: leading dims differ, " + shape_str(parts[0].value().shape()) +
                       " vs " + shape_str(pv.shape()));
    widths.push_back(pv.last_dim());
    total += pv.last_dim();
    ids.push_back(p.id);
    needs = needs || g.node(p.id).needs_grad;
  }
  Shape s = parts[0].value().shape();
  s.back() = total;
  Tensor out(s);
  std::int64_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& pv = parts[i].value();
    const std::int64_t w = widths[i];
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < w; ++c) out[r * total + off + c] = pv[r * w + c];
    off += w;
  }
  return g.emplace("concat", ids, std::move(out), needs,
                   [widths, total, rows](Graph& gr, const Graph::Node& n) {
                     std::int64_t o = 0;
                     for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                       const std::int64_t w = widths[i];
                       if (Tensor* dp = gr.grad_ptr(n.inputs[i]))
                         for (std::int64_t r = 0; r < rows; ++r)
                           for (std::int64_t c = 0; c < w; ++c)
                             (*dp)[r * w + c] += n.grad[r * total + o + c];
                       o += w;
                     }
                   });
}

// out[r, j] = a[r, perm[r*d + j]] — a per-row gather over the last axis.
// Used to differentiate through a sort whose order was fixed at forward time.
inline Var gather_last(Var a, std::vector<std::int64_t> perm) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const std::int64_t d = av.last_dim(), rows = av.lead_rows();
  if (static_cast<std::int64_t>(perm.size()) != rows * d)
    throw ShapeError("gather_last: permutation size mismatch");
  Tensor out(av.shape());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < d; ++c) out[r * d + c] = av[r * d + perm[r * d + c]];
  return g.emplace("gather_last", {a.id}, std::move(out), g.node(a.id).needs_grad,
                   [perm = std::move(perm), d, rows](Graph& gr, const Graph::Node& n) {
                     if (Tensor* da = gr.grad_ptr(n.inputs[0]))
                       for (std::int64_t r = 0; r < rows; ++r)
                         for (std::int64_t c = 0; c < d; ++c)
                           (*da)[r * d + perm[r * d + c]] += n.grad[r * d + c];
                   });
}

// out[i] = a[rows[i], :] — row selection with scatter-add backward.
inline Var select_rows(Var a, std::vector<std::int64_t> rows_idx) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const std::int64_t d = av.last_dim(), rows = av.lead_rows();
  for (std::int64_t r : rows_idx)
    if (r < 0 || r >= rows) throw ShapeError("select_rows: row index out of range");
  Tensor out({static_cast<std::int64_t>(rows_idx.size()), d});
  for (std::size_t i = 0; i < rows_idx.size(); ++i)
    for (std::int64_t c = 0; c < d; ++c)
      out[static_cast<std::int64_t>(i) * d + c] = av[rows_idx[i] * d + c];
  return g.emplace("select_rows", {a.id}, std::move(out), g.node(a.id).needs_grad,
                   [rows_idx = std::move(rows_idx), d](Graph& gr, const Graph::Node& n) {
                     if (Tensor* da = gr.grad_ptr(n.inputs[0]))
                       for (std::size_t i = 0; i < rows_idx.size(); ++i)
                         for (std::int64_t c = 0; c < d; ++c)
                           (*da)[rows_idx[i] * d + c] +=
                               n.grad[static_cast<std::int64_t>(i) * d + c];
                   });
}

// out[r] = a[r, labels[r]] — picks one entry per row of a 2-D tensor.
inline Var pick_label(Var a, const std::vector<int>& labels) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("pick_label: expected 2-D, got " + shape_str(av.shape()));
  const std::int64_t rows = av.dim(0), d = av.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != rows)
    throw ShapeError("pick_label: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= d) throw std::invalid_argument("pick_label: label out of range");
  Tensor out({rows});
  for (std::int64_t r = 0; r < rows; ++r) out[r] = av[r * d + labels[static_cast<std::size_t>(r)]];
  return g.emplace("pick_label", {a.id}, std::move(out), g.node(a.id).needs_grad,
                   [labels, d, rows](Graph& gr, const Graph::Node& n) {
                     if (Tensor* da = gr.grad_ptr(n.inputs[0]))
                       for (std::int64_t r = 0; r < rows; ++r)
                         (*da)[r * d + labels[static_cast<std::size_t>(r)]] += n.grad[r];
                   });
}

// ---- reductions --------------------------------------------------------------

namespace detail {

inline Var reduce_axis(const char* op, Var a, std::size_t axis, bool mean) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  if (axis >= av.rank()) throw ShapeError(std::string(op) + ": axis out of range");
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= av.dim(i);
  for (std::size_t i = axis + 1; i < av.rank(); ++i) inner *= av.dim(i);
  const std::int64_t n = av.dim(axis);
  Shape s;
  for (std::size_t i = 0; i < av.rank(); ++i)
    if (i != axis) s.push_back(av.dim(i));
  if (s.empty()) s.push_back(1);
  Tensor out(s);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t i = 0; i < inner; ++i)
        out[o * inner + i] += av[(o * n + j) * inner + i];
  const double k = mean ? 1.0 / static_cast<double>(n) : 1.0;
  if (mean)
    for (double& v : out.vec()) v *= k;
  return g.emplace(op, {a.id}, std::move(out), g.node(a.id).needs_grad,
                   [outer, inner, n, k](Graph& gr, const Graph::Node& nd) {
                     if (Tensor* da = gr.grad_ptr(nd.inputs[0]))
                       for (std::int64_t o = 0; o < outer; ++o)
                         for (std::int64_t j = 0; j < n; ++j)
                           for (std::int64_t i = 0; i < inner; ++i)
                             (*da)[(o * n + j) * inner + i] += k * nd.grad[o * inner + i];
                   });
}

}  // namespace detail

inline Var sum_axis(Var a, std::size_t axis) { return detail::reduce_axis("sum_axis", a, axis, false); }
inline Var mean_axis(Var a, std::size_t axis) { return detail::reduce_axis("mean_axis", a, axis, true); }

inline Var sum_all(Var a) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.vec()) s += v;
  return g.emplace("sum_all", {a.id}, Tensor::scalar(s), g.node(a.id).needs_grad,
                   [](Graph& gr, const Graph::Node& n) {
                     if (Tensor* da = gr.grad_ptr(n.inputs[0]))
                       for (std::int64_t i = 0; i < da->numel(); ++i) (*da)[i] += n.grad[0];
                   });
}

inline Var mean_all(Var a) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const double k = 1.0 / static_cast<double>(av.numel());
  double s = 0.0;
  for (double v : av.vec()) s += v;
  return g.emplace("mean_all", {a.id}, Tensor::scalar(s * k), g.node(a.id).needs_grad,
                   [k](Graph& gr, const Graph::Node& n) {
                     if (Tensor* da = gr.grad_ptr(n.inputs[0]))
                       for (std::int64_t i = 0; i < da->numel(); ++i) (*da)[i] += k * n.grad[0];
                   });
}

// Mean cross-entropy of logits against integer labels.
inline Var cross_entropy(Var logits, const std::vector<int>& labels) {
  return scale(mean_all(pick_label(log_softmax(logits), labels)), -1.0);
}

}  // namespace prunemia
