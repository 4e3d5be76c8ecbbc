#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bsner/rng.hpp"

namespace bsner {

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense n-d tensor with flat row-major storage, templated on scalar.
// The runtime scalar is float; the gradient checker instantiates double.
template <class S>
struct TensorT {
  std::vector<int> shape;
  std::vector<S> data;
  bool requires_grad = false;
  std::vector<S> grad;  // same length as data once allocated

  std::int64_t size() const {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }

  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const {
    if (shape.size() <= 1) return shape.empty() ? 1 : shape[0];
    int c = 1;
    for (std::size_t k = 1; k < shape.size(); ++k) c *= shape[k];
    return c;
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }

  static std::shared_ptr<TensorT<S>> zeros(std::vector<int> shp, bool rg = false) {
    auto t = std::make_shared<TensorT<S>>();
    t->shape = std::move(shp);
    t->data.assign(static_cast<std::size_t>(t->size()), S(0));
    t->requires_grad = rg;
    return t;
  }

  static std::shared_ptr<TensorT<S>> from(std::vector<int> shp, std::vector<S> vals,
                                          bool rg = false) {
    auto t = std::make_shared<TensorT<S>>();
    t->shape = std::move(shp);
    t->data = std::move(vals);
    t->requires_grad = rg;
    if (t->size() != static_cast<std::int64_t>(t->data.size()))
      throw TensorError("TensorT::from: shape does not match data length");
    return t;
  }

  static std::shared_ptr<TensorT<S>> scalar(S v, bool rg = false) {
    return from({1}, {v}, rg);
  }
};

template <class S>
using TensorPtrT = std::shared_ptr<TensorT<S>>;

using Tensor = TensorT<float>;
using TensorPtr = TensorPtrT<float>;

namespace detail {

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <class S>
[[noreturn]] void shape_fail(const char* op, const TensorT<S>& a, const TensorT<S>& b) {
  throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                    shape_str(b.shape));
}

}  // namespace detail

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<MatRM<S>>;
template <class S>
using CMatMap = Eigen::Map<const MatRM<S>>;
template <class S>
using VecMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <class S>
using CVecMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

template <class S>
MatMap<S> as_mat(TensorT<S>& t, int r, int c) {
  return MatMap<S>(t.data.data(), r, c);
}
template <class S>
CMatMap<S> as_mat(const TensorT<S>& t, int r, int c) {
  return CMatMap<S>(t.data.data(), r, c);
}
template <class S>
MatMap<S> grad_mat(TensorT<S>& t, int r, int c) {
  return MatMap<S>(t.grad.data(), r, c);
}

// Reverse-mode tape. Insertion order is the topological order; backward walks
// it in exact reverse. Single-threaded during construction and backward.
template <class S>
class GraphT {
 public:
  TensorPtrT<S> record(TensorPtrT<S> out, const std::vector<TensorPtrT<S>>& inputs,
                       std::function<void()> back) {
    bool needs = false;
    for (const auto& in : inputs)
      if (in && in->requires_grad) needs = true;
    out->requires_grad = needs;
    nodes_.push_back(Node{out, std::move(back), needs});
    return out;
  }

  void backward(const TensorPtrT<S>& root) {
    if (root->size() != 1)
      throw TensorError("backward: root must be a scalar, got shape " +
                        detail::shape_str(root->shape));
    root->ensure_grad();
    root->grad[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->needs) continue;
      if (it->out->grad.size() != it->out->data.size()) continue;  // no gradient arrived
      it->back();
    }
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    TensorPtrT<S> out;
    std::function<void()> back;
    bool needs;
  };
  std::vector<Node> nodes_;
};

using Graph = GraphT<float>;

namespace detail {
template <class S>
void accum(TensorPtrT<S>& t, const S* src, std::int64_t n) {
  if (!t->requires_grad) return;
  t->ensure_grad();
  for (std::int64_t i = 0; i < n; ++i) t->grad[i] += src[i];
}
}  // namespace detail

// ---- operation suite -------------------------------------------------------

// Matrix product. 1-d left operand is treated as a row vector and the output
// stays 1-d.
template <class S>
TensorPtrT<S> matmul(GraphT<S>& g, TensorPtrT<S> a, TensorPtrT<S> b) {
  bool a_vec = a->shape.size() == 1;
  int m = a_vec ? 1 : a->shape[0];
  int k = a_vec ? a->shape[0] : a->shape[1];
  if (b->shape.size() != 2 || b->shape[0] != k) detail::shape_fail("matmul", *a, *b);
  int n = b->shape[1];
  auto out = TensorT<S>::zeros(a_vec ? std::vector<int>{n} : std::vector<int>{m, n});
  as_mat(*out, m, n).noalias() = as_mat(*a, m, k) * as_mat(*b, k, n);
  auto back = [a, b, out, m, k, n]() {
    CMatMap<S> go(out->grad.data(), m, n);
    if (a->requires_grad) {
      a->ensure_grad();
      grad_mat(*a, m, k).noalias() += go * as_mat(*b, k, n).transpose();
    }
    if (b->requires_grad) {
      b->ensure_grad();
      grad_mat(*b, k, n).noalias() += as_mat(*a, m, k).transpose() * go;
    }
  };
  return g.record(out, {a, b}, back);
}

// A * B^T with B stored (n, k).
template <class S>
TensorPtrT<S> matmul_nt(GraphT<S>& g, TensorPtrT<S> a, TensorPtrT<S> b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[1])
    detail::shape_fail("matmul_nt", *a, *b);
  int m = a->shape[0], k = a->shape[1], n = b->shape[0];
  auto out = TensorT<S>::zeros({m, n});
  as_mat(*out, m, n).noalias() = as_mat(*a, m, k) * as_mat(*b, n, k).transpose();
  auto back = [a, b, out, m, k, n]() {
    CMatMap<S> go(out->grad.data(), m, n);
    if (a->requires_grad) {
      a->ensure_grad();
      grad_mat(*a, m, k).noalias() += go * as_mat(*b, n, k);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      grad_mat(*b, n, k).noalias() += go.transpose() * as_mat(*a, m, k);
    }
  };
  return g.record(out, {a, b}, back);
}

template <class S>
TensorPtrT<S> add(GraphT<S>& g, TensorPtrT<S> a, TensorPtrT<S> b) {
  if (a->shape != b->shape) detail::shape_fail("add", *a, *b);
  auto out = TensorT<S>::zeros(a->shape);
  const std::int64_t n = out->size();
  for (std::int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
  auto back = [a, b, out, n]() {
    detail::accum(const_cast<TensorPtrT<S>&>(a), out->grad.data(), n);
    detail::accum(const_cast<TensorPtrT<S>&>(b), out->grad.data(), n);
  };
  return g.record(out, {a, b}, back);
}

// X (m,n) + row vector b (n), broadcast over rows.
template <class S>
TensorPtrT<S> add_rowvec(GraphT<S>& g, TensorPtrT<S> x, TensorPtrT<S> b) {
  if (x->shape.size() != 2 || b->shape.size() != 1 || x->shape[1] != b->shape[0])
    detail::shape_fail("add_rowvec", *x, *b);
  int m = x->shape[0], n = x->shape[1];
  auto out = TensorT<S>::zeros({m, n});
  as_mat(*out, m, n) = as_mat(*x, m, n).rowwise() +
                       CVecMap<S>(b->data.data(), n).transpose();
  auto back = [x, b, out, m, n]() {
    CMatMap<S> go(out->grad.data(), m, n);
    if (x->requires_grad) {
      x->ensure_grad();
      grad_mat(*x, m, n) += go;
    }
    if (b->requires_grad) {
      b->ensure_grad();
      VecMap<S>(b->grad.data(), n) += go.colwise().sum().transpose();
    }
  };
  return g.record(out, {x, b}, back);
}

template <class S>
TensorPtrT<S> mul(GraphT<S>& g, TensorPtrT<S> a, TensorPtrT<S> b) {
  if (a->shape != b->shape) detail::shape_fail("mul", *a, *b);
  auto out = TensorT<S>::zeros(a->shape);
  const std::int64_t n = out->size();
  for (std::int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
  auto back = [a, b, out, n]() {
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * b->data[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) b->grad[i] += out->grad[i] * a->data[i];
    }
  };
  return g.record(out, {a, b}, back);
}

template <class S>
TensorPtrT<S> scale(GraphT<S>& g, TensorPtrT<S> a, S c) {
  auto out = TensorT<S>::zeros(a->shape);
  const std::int64_t n = out->size();
  for (std::int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] * c;
  auto back = [a, out, n, c]() {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * c;
  };
  return g.record(out, {a}, back);
}

template <class S>
TensorPtrT<S> vtanh(GraphT<S>& g, TensorPtrT<S> a) {
  auto out = TensorT<S>::zeros(a->shape);
  const std::int64_t n = out->size();
  for (std::int64_t i = 0; i < n; ++i) out->data[i] = std::tanh(a->data[i]);
  auto back = [a, out, n]() {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) {
      S y = out->data[i];
      a->grad[i] += out->grad[i] * (S(1) - y * y);
    }
  };
  return g.record(out, {a}, back);
}

template <class S>
TensorPtrT<S> vsigmoid(GraphT<S>& g, TensorPtrT<S> a) {
  auto out = TensorT<S>::zeros(a->shape);
  const std::int64_t n = out->size();
  for (std::int64_t i = 0; i < n; ++i) out->data[i] = S(1) / (S(1) + std::exp(-a->data[i]));
  auto back = [a, out, n]() {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) {
      S y = out->data[i];
      a->grad[i] += out->grad[i] * y * (S(1) - y);
    }
  };
  return g.record(out, {a}, back);
}

// Concatenation along the last axis. Accepts all-1-d or all-2-d parts with
// matching leading dimension.
template <class S>
TensorPtrT<S> concat_cols(GraphT<S>& g, const std::vector<TensorPtrT<S>>& parts) {
  if (parts.empty()) throw TensorError("concat_cols: no inputs");
  bool vec = parts[0]->shape.size() == 1;
  int m = vec ? 1 : parts[0]->shape[0];
  int total = 0;
  for (const auto& p : parts) {
    if ((p->shape.size() == 1) != vec || (!vec && p->shape[0] != m))
      detail::shape_fail("concat_cols", *parts[0], *p);
    total += vec ? p->shape[0] : p->shape[1];
  }
  auto out = TensorT<S>::zeros(vec ? std::vector<int>{total} : std::vector<int>{m, total});
  int off = 0;
  for (const auto& p : parts) {
    int w = vec ? p->shape[0] : p->shape[1];
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < w; ++c)
        out->data[static_cast<std::size_t>(r) * total + off + c] =
            p->data[static_cast<std::size_t>(r) * w + c];
    off += w;
  }
  auto inputs = parts;
  auto back = [inputs, out, m, total, vec]() {
    int off = 0;
    for (const auto& p : inputs) {
      int w = vec ? p->shape[0] : p->shape[1];
      if (p->requires_grad) {
        p->ensure_grad();
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < w; ++c)
            p->grad[static_cast<std::size_t>(r) * w + c] +=
                out->grad[static_cast<std::size_t>(r) * total + off + c];
      }
      off += w;
    }
  };
  return g.record(out, parts, back);
}

// Stack 1-d vectors of equal length into a (T, n) matrix.
template <class S>
TensorPtrT<S> stack_rows(GraphT<S>& g, const std::vector<TensorPtrT<S>>& rows) {
  if (rows.empty()) throw TensorError("stack_rows: no inputs");
  int n = rows[0]->shape.back();
  int t_len = static_cast<int>(rows.size());
  for (const auto& r : rows)
    if (r->size() != n) detail::shape_fail("stack_rows", *rows[0], *r);
  auto out = TensorT<S>::zeros({t_len, n});
  for (int t = 0; t < t_len; ++t)
    std::copy(rows[t]->data.begin(), rows[t]->data.end(),
              out->data.begin() + static_cast<std::size_t>(t) * n);
  auto inputs = rows;
  auto back = [inputs, out, n]() {
    for (std::size_t t = 0; t < inputs.size(); ++t)
      detail::accum(const_cast<TensorPtrT<S>&>(inputs[t]), out->grad.data() + t * n, n);
  };
  return g.record(out, rows, back);
}

// Column slice [start, start+len) of a matrix or vector.
template <class S>
TensorPtrT<S> slice_cols(GraphT<S>& g, TensorPtrT<S> x, int start, int len) {
  bool vec = x->shape.size() == 1;
  int m = vec ? 1 : x->shape[0];
  int n = vec ? x->shape[0] : x->shape[1];
  if (start < 0 || len <= 0 || start + len > n)
    throw TensorError("slice_cols: range [" + std::to_string(start) + "," +
                      std::to_string(start + len) + ") out of " + std::to_string(n));
  auto out = TensorT<S>::zeros(vec ? std::vector<int>{len} : std::vector<int>{m, len});
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < len; ++c)
      out->data[static_cast<std::size_t>(r) * len + c] =
          x->data[static_cast<std::size_t>(r) * n + start + c];
  auto back = [x, out, m, n, start, len]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < len; ++c)
        x->grad[static_cast<std::size_t>(r) * n + start + c] +=
            out->grad[static_cast<std::size_t>(r) * len + c];
  };
  return g.record(out, {x}, back);
}

// Row i of a matrix, as a 1-d vector.
template <class S>
TensorPtrT<S> row(GraphT<S>& g, TensorPtrT<S> x, int i) {
  if (x->shape.size() != 2 || i < 0 || i >= x->shape[0])
    throw TensorError("row: index " + std::to_string(i) + " out of " +
                      detail::shape_str(x->shape));
  int n = x->shape[1];
  auto out = TensorT<S>::zeros({n});
  std::copy(x->data.begin() + static_cast<std::size_t>(i) * n,
            x->data.begin() + static_cast<std::size_t>(i + 1) * n, out->data.begin());
  auto back = [x, out, i, n]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int c = 0; c < n; ++c) x->grad[static_cast<std::size_t>(i) * n + c] += out->grad[c];
  };
  return g.record(out, {x}, back);
}

// Embedding lookup: gather rows of table (V, e) by id.
template <class S>
TensorPtrT<S> embedding(GraphT<S>& g, TensorPtrT<S> table, const std::vector<int>& ids) {
  if (table->shape.size() != 2) throw TensorError("embedding: table must be 2-d");
  int v = table->shape[0], e = table->shape[1];
  for (int id : ids)
    if (id < 0 || id >= v)
      throw TensorError("embedding: id " + std::to_string(id) + " out of vocab size " +
                        std::to_string(v));
  int t_len = static_cast<int>(ids.size());
  auto out = TensorT<S>::zeros({t_len, e});
  for (int t = 0; t < t_len; ++t)
    std::copy(table->data.begin() + static_cast<std::size_t>(ids[t]) * e,
              table->data.begin() + static_cast<std::size_t>(ids[t] + 1) * e,
              out->data.begin() + static_cast<std::size_t>(t) * e);
  auto back = [table, out, ids, e]() {
    if (!table->requires_grad) return;
    table->ensure_grad();
    for (std::size_t t = 0; t < ids.size(); ++t)
      for (int c = 0; c < e; ++c)
        table->grad[static_cast<std::size_t>(ids[t]) * e + c] += out->grad[t * e + c];
  };
  return g.record(out, {table}, back);
}

// Softmax over the last axis; rows of a 2-d input, the whole vector for 1-d.
template <class S>
TensorPtrT<S> softmax_rows(GraphT<S>& g, TensorPtrT<S> x) {
  bool vec = x->shape.size() == 1;
  int m = vec ? 1 : x->shape[0];
  int n = vec ? x->shape[0] : x->shape[1];
  for (S v : x->data)
    if (!std::isfinite(v)) throw TensorError("softmax: non-finite input");
  auto out = TensorT<S>::zeros(x->shape);
  for (int r = 0; r < m; ++r) {
    const S* xi = x->data.data() + static_cast<std::size_t>(r) * n;
    S* yi = out->data.data() + static_cast<std::size_t>(r) * n;
    S mx = xi[0];
    for (int c = 1; c < n; ++c) mx = std::max(mx, xi[c]);
    double z = 0;
    for (int c = 0; c < n; ++c) {
      yi[c] = std::exp(xi[c] - mx);
      z += yi[c];
    }
    for (int c = 0; c < n; ++c) yi[c] = static_cast<S>(yi[c] / z);
  }
  auto back = [x, out, m, n]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int r = 0; r < m; ++r) {
      const S* y = out->data.data() + static_cast<std::size_t>(r) * n;
      const S* gy = out->grad.data() + static_cast<std::size_t>(r) * n;
      S* gx = x->grad.data() + static_cast<std::size_t>(r) * n;
      double dot = 0;
      for (int c = 0; c < n; ++c) dot += static_cast<double>(gy[c]) * y[c];
      for (int c = 0; c < n; ++c) gx[c] += y[c] * (gy[c] - static_cast<S>(dot));
    }
  };
  return g.record(out, {x}, back);
}

// Inverted dropout: train mode scales kept activations by 1/keep, eval mode is
// the identity (the input tensor is returned untouched). Consumes one
// bernoulli draw per element from the shared PRNG.
template <class S>
TensorPtrT<S> dropout(GraphT<S>& g, TensorPtrT<S> x, double rate, Rng& rng, bool train) {
  if (rate < 0.0 || rate >= 1.0) throw TensorError("dropout: rate must be in [0,1)");
  if (!train || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  const std::int64_t n = x->size();
  auto mask = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n));
  auto out = TensorT<S>::zeros(x->shape);
  for (std::int64_t i = 0; i < n; ++i) {
    (*mask)[i] = rng.bernoulli(keep) ? static_cast<S>(1.0 / keep) : S(0);
    out->data[i] = x->data[i] * (*mask)[i];
  }
  auto back = [x, out, mask, n]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) x->grad[i] += out->grad[i] * (*mask)[i];
  };
  return g.record(out, {x}, back);
}

// Soft-target cross entropy: -sum t*log(p + 1e-12) over all entries, scalar
// output, double accumulation. Targets are constants.
template <class S>
TensorPtrT<S> cross_entropy(GraphT<S>& g, TensorPtrT<S> probs, TensorPtrT<S> targets) {
  if (probs->shape != targets->shape) detail::shape_fail("cross_entropy", *probs, *targets);
  constexpr double kFloor = 1e-12;
  const std::int64_t n = probs->size();
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i)
    if (targets->data[i] != S(0))
      acc -= static_cast<double>(targets->data[i]) *
             std::log(static_cast<double>(probs->data[i]) + kFloor);
  auto out = TensorT<S>::scalar(static_cast<S>(acc));
  auto back = [probs, targets, out, n]() {
    if (!probs->requires_grad) return;
    probs->ensure_grad();
    S go = out->grad[0];
    for (std::int64_t i = 0; i < n; ++i)
      if (targets->data[i] != S(0))
        probs->grad[i] -= go * targets->data[i] /
                          static_cast<S>(static_cast<double>(probs->data[i]) + kFloor);
  };
  return g.record(out, {probs, targets}, back);
}

template <class S>
TensorPtrT<S> vsum(GraphT<S>& g, TensorPtrT<S> x) {
  const std::int64_t n = x->size();
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) acc += x->data[i];
  auto out = TensorT<S>::scalar(static_cast<S>(acc));
  auto back = [x, out, n]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) x->grad[i] += out->grad[0];
  };
  return g.record(out, {x}, back);
}

template <class S>
TensorPtrT<S> vmean(GraphT<S>& g, TensorPtrT<S> x) {
  const std::int64_t n = x->size();
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) acc += x->data[i];
  auto out = TensorT<S>::scalar(static_cast<S>(acc / static_cast<double>(n)));
  auto back = [x, out, n]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    S inv = static_cast<S>(1.0 / static_cast<double>(n));
    for (std::int64_t i = 0; i < n; ++i) x->grad[i] += out->grad[0] * inv;
  };
  return g.record(out, {x}, back);
}

// Bilinear form x^T U y with U of shape (dx, c, dy); result is a c-vector:
// out[t] = sum_{a,b} x[a] * U[a,t,b] * y[b].
template <class S>
TensorPtrT<S> bilinear(GraphT<S>& g, TensorPtrT<S> x, TensorPtrT<S> u, TensorPtrT<S> y) {
  if (x->shape.size() != 1 || y->shape.size() != 1 || u->shape.size() != 3 ||
      u->shape[0] != x->shape[0] || u->shape[2] != y->shape[0])
    throw TensorError("bilinear: incompatible shapes x" + detail::shape_str(x->shape) +
                      " U" + detail::shape_str(u->shape) + " y" + detail::shape_str(y->shape));
  int dx = x->shape[0], c = u->shape[1], dy = y->shape[0];
  auto out = TensorT<S>::zeros({c});
  for (int t = 0; t < c; ++t) {
    double acc = 0;
    for (int a = 0; a < dx; ++a) {
      const S* urow = u->data.data() + (static_cast<std::size_t>(a) * c + t) * dy;
      double inner = 0;
      for (int b = 0; b < dy; ++b) inner += static_cast<double>(urow[b]) * y->data[b];
      acc += static_cast<double>(x->data[a]) * inner;
    }
    out->data[t] = static_cast<S>(acc);
  }
  auto back = [x, u, y, out, dx, c, dy]() {
    for (int t = 0; t < c; ++t) {
      S go = out->grad[t];
      if (go == S(0)) continue;
      for (int a = 0; a < dx; ++a) {
        const S* urow = u->data.data() + (static_cast<std::size_t>(a) * c + t) * dy;
        if (x->requires_grad) {
          x->ensure_grad();
          S inner = 0;
          for (int b = 0; b < dy; ++b) inner += urow[b] * y->data[b];
          x->grad[a] += go * inner;
        }
        if (u->requires_grad) {
          u->ensure_grad();
          S* gu = u->grad.data() + (static_cast<std::size_t>(a) * c + t) * dy;
          for (int b = 0; b < dy; ++b) gu[b] += go * x->data[a] * y->data[b];
        }
        if (y->requires_grad) {
          y->ensure_grad();
          for (int b = 0; b < dy; ++b) y->grad[b] += go * x->data[a] * urow[b];
        }
      }
    }
  };
  return g.record(out, {x, u, y}, back);
}

// Batched bilinear term of the span scorer: out[t,i,j] = (Hs_i)^T U_t He_j for
// all position pairs; Hs, He are (T, d), U is (d, c, d), output (c, T, T).
template <class S>
TensorPtrT<S> bilinear_scores(GraphT<S>& g, TensorPtrT<S> hs, TensorPtrT<S> u,
                              TensorPtrT<S> he) {
  if (hs->shape.size() != 2 || he->shape.size() != 2 || u->shape.size() != 3 ||
      u->shape[0] != hs->shape[1] || u->shape[2] != he->shape[1] ||
      hs->shape[0] != he->shape[0])
    throw TensorError("bilinear_scores: incompatible shapes Hs" +
                      detail::shape_str(hs->shape) + " U" + detail::shape_str(u->shape) +
                      " He" + detail::shape_str(he->shape));
  int t_len = hs->shape[0], d = hs->shape[1], c = u->shape[1];
  auto out = TensorT<S>::zeros({c, t_len, t_len});
  using Stride = Eigen::OuterStride<>;
  using UMap = Eigen::Map<const MatRM<S>, 0, Stride>;
  // Per type: A_t = Hs * U[:,t,:], S_t = A_t * He^T. A_t is saved for backward.
  auto a_mats = std::make_shared<std::vector<MatRM<S>>>();
  a_mats->reserve(c);
  for (int t = 0; t < c; ++t) {
    UMap ut(u->data.data() + static_cast<std::size_t>(t) * d, d, d,
            Stride(static_cast<Eigen::Index>(c) * d));
    MatRM<S> a = as_mat(*hs, t_len, d) * ut;
    MatMap<S>(out->data.data() + static_cast<std::size_t>(t) * t_len * t_len, t_len, t_len)
        .noalias() = a * as_mat(*he, t_len, d).transpose();
    a_mats->push_back(std::move(a));
  }
  auto back = [hs, u, he, out, a_mats, t_len, d, c]() {
    using GUMap = Eigen::Map<MatRM<S>, 0, Stride>;
    for (int t = 0; t < c; ++t) {
      CMatMap<S> gs(out->grad.data() + static_cast<std::size_t>(t) * t_len * t_len, t_len,
                    t_len);
      UMap ut(u->data.data() + static_cast<std::size_t>(t) * d, d, d,
              Stride(static_cast<Eigen::Index>(c) * d));
      MatRM<S> ga = gs * as_mat(*he, t_len, d);  // dA_t
      if (he->requires_grad) {
        he->ensure_grad();
        grad_mat(*he, t_len, d).noalias() += gs.transpose() * (*a_mats)[t];
      }
      if (hs->requires_grad) {
        hs->ensure_grad();
        grad_mat(*hs, t_len, d).noalias() += ga * ut.transpose();
      }
      if (u->requires_grad) {
        u->ensure_grad();
        GUMap gu(u->grad.data() + static_cast<std::size_t>(t) * d, d, d,
                 Stride(static_cast<Eigen::Index>(c) * d));
        gu.noalias() += as_mat(*hs, t_len, d).transpose() * ga;
      }
    }
  };
  return g.record(out, {hs, u, he}, back);
}

// Span candidates of a sentence, ordered row-major over the upper triangle.
struct SpanIndex {
  int start;
  int end;  // inclusive
};

// Gathers the full span logits r_ij = bil[., i, j] + P[i] + Q[j] + Wd[j-i] + b
// into an (S, c) matrix, one row per candidate span.
template <class S>
TensorPtrT<S> assemble_span_logits(GraphT<S>& g, TensorPtrT<S> bil, TensorPtrT<S> p,
                                   TensorPtrT<S> q, TensorPtrT<S> wd, TensorPtrT<S> bias,
                                   const std::vector<SpanIndex>& spans) {
  int c = bil->shape[0], t_len = bil->shape[1];
  int n_spans = static_cast<int>(spans.size());
  if (p->shape != std::vector<int>{t_len, c} || q->shape != std::vector<int>{t_len, c} ||
      wd->shape[1] != c || bias->shape != std::vector<int>{c})
    throw TensorError("assemble_span_logits: inconsistent component shapes");
  int max_w = wd->shape[0];
  auto out = TensorT<S>::zeros({n_spans, c});
  for (int s = 0; s < n_spans; ++s) {
    int i = spans[s].start, j = spans[s].end, w = j - i;
    if (i < 0 || j < i || j >= t_len || w >= max_w)
      throw TensorError("assemble_span_logits: invalid span (" + std::to_string(i) + "," +
                        std::to_string(j) + ")");
    for (int t = 0; t < c; ++t)
      out->data[static_cast<std::size_t>(s) * c + t] =
          bil->data[(static_cast<std::size_t>(t) * t_len + i) * t_len + j] +
          p->data[static_cast<std::size_t>(i) * c + t] +
          q->data[static_cast<std::size_t>(j) * c + t] +
          wd->data[static_cast<std::size_t>(w) * c + t] + bias->data[t];
  }
  auto back = [bil, p, q, wd, bias, out, spans, c, t_len]() {
    if (bil->requires_grad) bil->ensure_grad();
    if (p->requires_grad) p->ensure_grad();
    if (q->requires_grad) q->ensure_grad();
    if (wd->requires_grad) wd->ensure_grad();
    if (bias->requires_grad) bias->ensure_grad();
    for (std::size_t s = 0; s < spans.size(); ++s) {
      int i = spans[s].start, j = spans[s].end, w = j - i;
      for (int t = 0; t < c; ++t) {
        S go = out->grad[s * c + t];
        if (bil->requires_grad)
          bil->grad[(static_cast<std::size_t>(t) * t_len + i) * t_len + j] += go;
        if (p->requires_grad) p->grad[static_cast<std::size_t>(i) * c + t] += go;
        if (q->requires_grad) q->grad[static_cast<std::size_t>(j) * c + t] += go;
        if (wd->requires_grad) wd->grad[static_cast<std::size_t>(w) * c + t] += go;
        if (bias->requires_grad) bias->grad[t] += go;
      }
    }
  };
  return g.record(out, {bil, p, q, wd, bias}, back);
}

// ---- gradient checking -----------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::vector<GradCheckEntry> per_param;
  bool passed(double tol) const { return max_rel_err < tol; }
};

// Central finite-difference check of an analytic gradient. The loss builder
// must be deterministic (dropout off). Samples up to `coords_per_param`
// coordinates per parameter (all of them for small tensors); the arithmetic
// here is double throughout.
template <class S>
GradCheckReport grad_check(const std::function<TensorPtrT<S>(GraphT<S>&)>& build_loss,
                           const std::vector<std::pair<std::string, TensorPtrT<S>>>& params,
                           double step, Rng& rng, int coords_per_param = 50) {
  if (step < 1e-4 || step > 1e-2)
    throw TensorError("grad_check: step must be in [1e-4, 1e-2]");
  GraphT<S> g;
  auto loss = build_loss(g);
  if (!std::isfinite(static_cast<double>(loss->data[0])))
    throw TensorError("grad_check: non-finite loss");
  for (auto& [name, p] : params) p->zero_grad();
  g.backward(loss);

  auto eval = [&]() -> double {
    GraphT<S> g2;
    auto l = build_loss(g2);
    if (!std::isfinite(static_cast<double>(l->data[0])))
      throw TensorError("grad_check: non-finite loss");
    return static_cast<double>(l->data[0]);
  };

  GradCheckReport report;
  for (auto& [name, p] : params) {
    GradCheckEntry entry{name, 0.0};
    const std::int64_t n = p->size();
    std::vector<std::int64_t> coords;
    if (n <= coords_per_param) {
      for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int k = 0; k < coords_per_param; ++k)
        coords.push_back(static_cast<std::int64_t>(rng.index(static_cast<std::uint64_t>(n))));
    }
    p->ensure_grad();
    for (std::int64_t i : coords) {
      S saved = p->data[i];
      p->data[i] = saved + static_cast<S>(step);
      double f_plus = eval();
      p->data[i] = saved - static_cast<S>(step);
      double f_minus = eval();
      p->data[i] = saved;
      double numeric = (f_plus - f_minus) / (2.0 * step);
      double analytic = static_cast<double>(p->grad[i]);
      double denom = std::max({std::abs(analytic), std::abs(numeric), 1.0});
      entry.max_rel_err = std::max(entry.max_rel_err, std::abs(analytic - numeric) / denom);
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

}  // namespace bsner
