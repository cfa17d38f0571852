// SPDX-License-Identifier: Apache-2.0

#include "vsc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "vsc/exact_sum.hpp"
#include "vsc/rng.hpp"

namespace vsc {

std::int64_t shape_size(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Decomposes a shape around an axis into (pre, n, post) extents.
struct AxisView {
  std::int64_t pre, n, post;
};

AxisView axis_view(const Shape& s, int axis) {
  check(axis >= 0 && axis < static_cast<int>(s.size()),
        "axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  AxisView v{1, s[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) v.pre *= s[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) v.post *= s[static_cast<std::size_t>(i)];
  return v;
}

// c[m x n] (+)= a[m x k] * b[k x n]
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m x n] += a[m x k] * b'[n x k]  (b transposed)
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// c[m x n] += a'[k x m] * b[k x n]  (a transposed)
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const double* ap = a + static_cast<std::size_t>(p) * m;
    const double* bp = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace

Tensor::Tensor(Shape s, double fill)
    : shape(std::move(s)), data(static_cast<std::size_t>(shape_size(shape)), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  check(static_cast<std::int64_t>(data.size()) == shape_size(shape),
        "tensor data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
}

void Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(data.size(), 0.0); }

Tensor Tensor::identity(int n) {
  Tensor t({n, n});
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::fan_in_init(Shape s, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform_init(std::move(s), -bound, bound, rng);
}

Tensor Tensor::uniform_init(Shape s, double lo, double hi, Rng& rng) {
  Tensor t(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// ---------------------------------------------------------------------------
// Graph

int Graph::record(Tensor value, std::vector<int> parents, BackFn back) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.back = std::move(back);
  for (int p : n.parents) {
    if (node(p).needs_grad) {
      n.needs_grad = true;
      break;
    }
  }
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Graph::param(Tensor& t) {
  auto it = leased_.find(&t);
  if (it != leased_.end()) return Var(this, it->second);
  Node n;
  n.value = Tensor(t.shape, t.data);
  n.leased = &t;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  leased_.emplace(&t, id);
  return Var(this, id);
}

Var Graph::constant(const Tensor& t) {
  Node n;
  n.value = Tensor(t.shape, t.data);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::constant(Shape shape, std::vector<double> values) {
  return constant(Tensor(std::move(shape), std::move(values)));
}

Var Graph::scalar(double v) { return constant(Tensor({1}, std::vector<double>{v})); }

const Tensor& Graph::val(Var v) const { return node(v.id).value; }

const std::vector<double>& Graph::adjoint(Var v) const { return node(v.id).adj; }

void Graph::backward(Var loss) {
  check(loss.graph == this && loss.id >= 0, "backward: loss is not a node of this graph");
  check(node(loss.id).value.size() == 1, "backward: loss must be scalar, got shape " +
                                             shape_str(node(loss.id).value.shape));
  for (auto& n : nodes_) n.adj.assign(n.value.data.size(), 0.0);
  node(loss.id).adj[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = node(id);
    if (!n.needs_grad) continue;
    if (n.back) n.back(*this, id);
    if (n.leased) {
      n.leased->ensure_grad();
      for (std::size_t i = 0; i < n.adj.size(); ++i) n.leased->grad[i] += n.adj[i];
    }
  }
}

Var Graph::add(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  check(ta.shape == tb.shape, "add: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] + tb.data[i];
  const int pa = a.id, pb = b.id;
  return Var(this, record(std::move(out), {pa, pb}, [pa, pb](Graph& g, int self) {
               const auto& go = g.adj(self);
               if (g.grad_needed(pa)) {
                 auto& da = g.adj(pa);
                 for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i];
               }
               if (g.grad_needed(pb)) {
                 auto& db = g.adj(pb);
                 for (std::size_t i = 0; i < go.size(); ++i) db[i] += go[i];
               }
             }));
}

Var Graph::sub(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  check(ta.shape == tb.shape, "sub: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] - tb.data[i];
  const int pa = a.id, pb = b.id;
  return Var(this, record(std::move(out), {pa, pb}, [pa, pb](Graph& g, int self) {
               const auto& go = g.adj(self);
               if (g.grad_needed(pa)) {
                 auto& da = g.adj(pa);
                 for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i];
               }
               if (g.grad_needed(pb)) {
                 auto& db = g.adj(pb);
                 for (std::size_t i = 0; i < go.size(); ++i) db[i] -= go[i];
               }
             }));
}

Var Graph::mul(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  check(ta.shape == tb.shape, "mul: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] * tb.data[i];
  const int pa = a.id, pb = b.id;
  return Var(this, record(std::move(out), {pa, pb}, [pa, pb](Graph& g, int self) {
               const auto& go = g.adj(self);
               const auto& va = g.value_of(pa).data;
               const auto& vb = g.value_of(pb).data;
               if (g.grad_needed(pa)) {
                 auto& da = g.adj(pa);
                 for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i] * vb[i];
               }
               if (g.grad_needed(pb)) {
                 auto& db = g.adj(pb);
                 for (std::size_t i = 0; i < go.size(); ++i) db[i] += go[i] * va[i];
               }
             }));
}

Var Graph::affine(Var a, double scale, double shift) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = scale * ta.data[i] + shift;
  const int pa = a.id;
  return Var(this, record(std::move(out), {pa}, [pa, scale](Graph& g, int self) {
               if (!g.grad_needed(pa)) return;
               const auto& go = g.adj(self);
               auto& da = g.adj(pa);
               for (std::size_t i = 0; i < go.size(); ++i) da[i] += scale * go[i];
             }));
}

Var Graph::add_bias(Var mat, Var bias) {
  const Tensor &tm = val(mat), &tb = val(bias);
  check(tm.rank() == 2 && tb.rank() == 1, "add_bias: need matrix and vector, got " +
                                              shape_str(tm.shape) + " and " + shape_str(tb.shape));
  check(tm.cols() == tb.dim(0), "add_bias: width mismatch " + shape_str(tm.shape) + " vs " +
                                    shape_str(tb.shape));
  const int r = tm.rows(), c = tm.cols();
  Tensor out(tm.shape);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(i, j) = tm.at(i, j) + tb.at(j);
  const int pm = mat.id, pb = bias.id;
  return Var(this, record(std::move(out), {pm, pb}, [pm, pb, r, c](Graph& g, int self) {
               const auto& go = g.adj(self);
               if (g.grad_needed(pm)) {
                 auto& dm = g.adj(pm);
                 for (std::size_t i = 0; i < go.size(); ++i) dm[i] += go[i];
               }
               if (g.grad_needed(pb)) {
                 auto& db = g.adj(pb);
                 for (int i = 0; i < r; ++i)
                   for (int j = 0; j < c; ++j) db[static_cast<std::size_t>(j)] += go[static_cast<std::size_t>(i) * c + j];
               }
             }));
}

Var Graph::matmul(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  check(ta.rank() == 2 && tb.rank() == 2,
        "matmul: need rank-2 operands, got " + shape_str(ta.shape) + " and " + shape_str(tb.shape));
  check(ta.cols() == tb.rows(),
        "matmul: inner dimensions disagree, " + shape_str(ta.shape) + " * " + shape_str(tb.shape));
  const int m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out({m, n});
  matmul_nn(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
  const int pa = a.id, pb = b.id;
  return Var(this, record(std::move(out), {pa, pb}, [pa, pb, m, k, n](Graph& g, int self) {
               const auto& go = g.adj(self);
               const auto& va = g.value_of(pa).data;
               const auto& vb = g.value_of(pb).data;
               if (g.grad_needed(pa))
                 matmul_nt(go.data(), vb.data(), g.adj(pa).data(), m, n, k);  // dA = G * B^T
               if (g.grad_needed(pb))
                 matmul_tn(va.data(), go.data(), g.adj(pb).data(), k, m, n);  // dB = A^T * G
             }));
}

Var Graph::transpose(Var a) {
  const Tensor& ta = val(a);
  check(ta.rank() == 2, "transpose: need rank-2, got " + shape_str(ta.shape));
  const int r = ta.rows(), c = ta.cols();
  Tensor out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(j, i) = ta.at(i, j);
  const int pa = a.id;
  return Var(this, record(std::move(out), {pa}, [pa, r, c](Graph& g, int self) {
               if (!g.grad_needed(pa)) return;
               const auto& go = g.adj(self);
               auto& da = g.adj(pa);
               for (int i = 0; i < r; ++i)
                 for (int j = 0; j < c; ++j)
                   da[static_cast<std::size_t>(i) * c + j] += go[static_cast<std::size_t>(j) * r + i];
             }));
}

Var Graph::reshape(Var a, Shape s) {
  const Tensor& ta = val(a);
  check(shape_size(s) == ta.size(),
        "reshape: size mismatch " + shape_str(ta.shape) + " -> " + shape_str(s));
  Tensor out(std::move(s), ta.data);
  const int pa = a.id;
  return Var(this, record(std::move(out), {pa}, [pa](Graph& g, int self) {
               if (!g.grad_needed(pa)) return;
               const auto& go = g.adj(self);
               auto& da = g.adj(pa);
               for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i];
             }));
}

Var Graph::narrow(Var a, int axis, int start, int len) {
  const Tensor& ta = val(a);
  const AxisView v = axis_view(ta.shape, axis);
  check(start >= 0 && len >= 1 && start + len <= v.n,
        "narrow: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
            ") out of bounds for axis of size " + std::to_string(v.n));
  Shape os = ta.shape;
  os[static_cast<std::size_t>(axis)] = len;
  Tensor out(os);
  for (std::int64_t p = 0; p < v.pre; ++p)
    for (int i = 0; i < len; ++i)
      for (std::int64_t q = 0; q < v.post; ++q)
        out.data[static_cast<std::size_t>((p * len + i) * v.post + q)] =
            ta.data[static_cast<std::size_t>((p * v.n + start + i) * v.post + q)];
  const int pa = a.id;
  return Var(this, record(std::move(out), {pa}, [pa, v, start, len](Graph& g, int self) {
               if (!g.grad_needed(pa)) return;
               const auto& go = g.adj(self);
               auto& da = g.adj(pa);
               for (std::int64_t p = 0; p < v.pre; ++p)
                 for (int i = 0; i < len; ++i)
                   for (std::int64_t q = 0; q < v.post; ++q)
                     da[static_cast<std::size_t>((p * v.n + start + i) * v.post + q)] +=
                         go[static_cast<std::size_t>((p * len + i) * v.post + q)];
             }));
}

Var Graph::concat(const std::vector<Var>& xs, int axis) {
  check(!xs.empty(), "concat: no inputs");
  const Shape& first = val(xs[0]).shape;
  Shape os = first;
  std::int64_t total = 0;
  for (const Var& x : xs) {
    const Shape& s = val(x).shape;
    check(static_cast<int>(s.size()) == static_cast<int>(first.size()), "concat: rank mismatch");
    for (int i = 0; i < static_cast<int>(s.size()); ++i)
      if (i != axis)
        check(s[static_cast<std::size_t>(i)] == first[static_cast<std::size_t>(i)],
              "concat: shape mismatch " + shape_str(s) + " vs " + shape_str(first));
    total += s[static_cast<std::size_t>(axis)];
  }
  os[static_cast<std::size_t>(axis)] = static_cast<int>(total);
  const AxisView ov = axis_view(os, axis);
  Tensor out(os);
  std::vector<int> parents;
  std::vector<int> sizes;
  parents.reserve(xs.size());
  for (const Var& x : xs) {
    parents.push_back(x.id);
    sizes.push_back(val(x).shape[static_cast<std::size_t>(axis)]);
  }
  std::int64_t off = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const Tensor& tx = val(xs[t]);
    const std::int64_t n = sizes[t];
    for (std::int64_t p = 0; p < ov.pre; ++p)
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t q = 0; q < ov.post; ++q)
          out.data[static_cast<std::size_t>((p * ov.n + off + i) * ov.post + q)] =
              tx.data[static_cast<std::size_t>((p * n + i) * ov.post + q)];
    off += n;
  }
  return Var(this, record(std::move(out), parents, [parents, sizes, ov](Graph& g, int self) {
               const auto& go = g.adj(self);
               std::int64_t off = 0;
               for (std::size_t t = 0; t < parents.size(); ++t) {
                 const std::int64_t n = sizes[t];
                 if (g.grad_needed(parents[t])) {
                   auto& da = g.adj(parents[t]);
                   for (std::int64_t p = 0; p < ov.pre; ++p)
                     for (std::int64_t i = 0; i < n; ++i)
                       for (std::int64_t q = 0; q < ov.post; ++q)
                         da[static_cast<std::size_t>((p * n + i) * ov.post + q)] +=
                             go[static_cast<std::size_t>((p * ov.n + off + i) * ov.post + q)];
                 }
                 off += n;
               }
             }));
}

Var Graph::sigmoid(Var x) {
  const Tensor& tx = val(x);
  Tensor out(tx.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double v = tx.data[i];
    // branch keeps exp bounded; sigmoid(+inf) is exactly 1, sigmoid(-inf) exactly 0
    out.data[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  const int px = x.id;
  return Var(this, record(std::move(out), {px}, [px](Graph& g, int self) {
               if (!g.grad_needed(px)) return;
               const auto& go = g.adj(self);
               const auto& y = g.value_of(self).data;
               auto& dx = g.adj(px);
               for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i] * y[i] * (1.0 - y[i]);
             }));
}

Var Graph::relu(Var x) {
  const Tensor& tx = val(x);
  Tensor out(tx.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = tx.data[i] > 0.0 ? tx.data[i] : 0.0;
  const int px = x.id;
  return Var(this, record(std::move(out), {px}, [px](Graph& g, int self) {
               if (!g.grad_needed(px)) return;
               const auto& go = g.adj(self);
               const auto& v = g.value_of(px).data;
               auto& dx = g.adj(px);
               for (std::size_t i = 0; i < go.size(); ++i)
                 if (v[i] > 0.0) dx[i] += go[i];
             }));
}

Var Graph::log(Var x) {
  const Tensor& tx = val(x);
  Tensor out(tx.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::log(tx.data[i]);
  const int px = x.id;
  return Var(this, record(std::move(out), {px}, [px](Graph& g, int self) {
               if (!g.grad_needed(px)) return;
               const auto& go = g.adj(self);
               const auto& v = g.value_of(px).data;
               auto& dx = g.adj(px);
               for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i] / v[i];
             }));
}

Var Graph::clamp(Var x, double lo, double hi) {
  check(lo <= hi, "clamp: lo > hi");
  const Tensor& tx = val(x);
  Tensor out(tx.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::min(hi, std::max(lo, tx.data[i]));
  const int px = x.id;
  return Var(this, record(std::move(out), {px}, [px, lo, hi](Graph& g, int self) {
               if (!g.grad_needed(px)) return;
               const auto& go = g.adj(self);
               const auto& v = g.value_of(px).data;
               auto& dx = g.adj(px);
               for (std::size_t i = 0; i < go.size(); ++i)
                 if (v[i] > lo && v[i] < hi) dx[i] += go[i];
             }));
}

Var Graph::softmax(Var x, int axis) {
  const Tensor& tx = val(x);
  const AxisView v = axis_view(tx.shape, axis);
  Tensor out(tx.shape);
  for (std::int64_t p = 0; p < v.pre; ++p)
    for (std::int64_t q = 0; q < v.post; ++q) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t i = 0; i < v.n; ++i)
        mx = std::max(mx, tx.data[static_cast<std::size_t>((p * v.n + i) * v.post + q)]);
      double z = 0.0;
      for (std::int64_t i = 0; i < v.n; ++i) {
        const std::size_t o = static_cast<std::size_t>((p * v.n + i) * v.post + q);
        out.data[o] = std::exp(tx.data[o] - mx);
        z += out.data[o];
      }
      for (std::int64_t i = 0; i < v.n; ++i) out.data[static_cast<std::size_t>((p * v.n + i) * v.post + q)] /= z;
    }
  const int px = x.id;
  return Var(this, record(std::move(out), {px}, [px, v](Graph& g, int self) {
               if (!g.grad_needed(px)) return;
               const auto& go = g.adj(self);
               const auto& y = g.value_of(self).data;
               auto& dx = g.adj(px);
               for (std::int64_t p = 0; p < v.pre; ++p)
                 for (std::int64_t q = 0; q < v.post; ++q) {
                   double dot = 0.0;
                   for (std::int64_t i = 0; i < v.n; ++i) {
                     const std::size_t o = static_cast<std::size_t>((p * v.n + i) * v.post + q);
                     dot += go[o] * y[o];
                   }
                   for (std::int64_t i = 0; i < v.n; ++i) {
                     const std::size_t o = static_cast<std::size_t>((p * v.n + i) * v.post + q);
                     dx[o] += y[o] * (go[o] - dot);
                   }
                 }
             }));
}

Var Graph::l2_normalize(Var x, int axis, double eps) {
  check(eps > 0.0, "l2_normalize: eps must be positive");
  const Tensor& tx = val(x);
  const AxisView v = axis_view(tx.shape, axis);
  Tensor out(tx.shape);
  // per-slice reciprocal divisor and whether the eps clamp was active
  std::vector<double> inv(static_cast<std::size_t>(v.pre * v.post));
  std::vector<char> clamped(static_cast<std::size_t>(v.pre * v.post));
  for (std::int64_t p = 0; p < v.pre; ++p)
    for (std::int64_t q = 0; q < v.post; ++q) {
      double sq = 0.0;
      for (std::int64_t i = 0; i < v.n; ++i) {
        const double e = tx.data[static_cast<std::size_t>((p * v.n + i) * v.post + q)];
        sq += e * e;
      }
      const double norm = std::sqrt(sq);
      const std::size_t s = static_cast<std::size_t>(p * v.post + q);
      clamped[s] = norm < eps;
      const double div = clamped[s] ? eps : norm;
      inv[s] = 1.0 / div;
      for (std::int64_t i = 0; i < v.n; ++i) {
        const std::size_t o = static_cast<std::size_t>((p * v.n + i) * v.post + q);
        out.data[o] = tx.data[o] / div;
      }
    }
  const int px = x.id;
  return Var(this, record(std::move(out), {px},
                          [px, v, inv = std::move(inv), clamped = std::move(clamped)](Graph& g, int self) {
               if (!g.grad_needed(px)) return;
               const auto& go = g.adj(self);
               const auto& y = g.value_of(self).data;
               auto& dx = g.adj(px);
               for (std::int64_t p = 0; p < v.pre; ++p)
                 for (std::int64_t q = 0; q < v.post; ++q) {
                   const std::size_t s = static_cast<std::size_t>(p * v.post + q);
                   if (clamped[s]) {
                     for (std::int64_t i = 0; i < v.n; ++i) {
                       const std::size_t o = static_cast<std::size_t>((p * v.n + i) * v.post + q);
                       dx[o] += go[o] * inv[s];
                     }
                   } else {
                     double dot = 0.0;
                     for (std::int64_t i = 0; i < v.n; ++i) {
                       const std::size_t o = static_cast<std::size_t>((p * v.n + i) * v.post + q);
                       dot += go[o] * y[o];
                     }
                     for (std::int64_t i = 0; i < v.n; ++i) {
                       const std::size_t o = static_cast<std::size_t>((p * v.n + i) * v.post + q);
                       dx[o] += (go[o] - y[o] * dot) * inv[s];
                     }
                   }
                 }
             }));
}

Var Graph::sum(Var x) {
  const Tensor& tx = val(x);
  double acc = 0.0;
  for (double d : tx.data) acc += d;
  const int px = x.id;
  return Var(this, record(Tensor({1}, std::vector<double>{acc}), {px}, [px](Graph& g, int self) {
               if (!g.grad_needed(px)) return;
               const double go = g.adj(self)[0];
               auto& dx = g.adj(px);
               for (auto& d : dx) d += go;
             }));
}

Var Graph::sum_axis(Var x, int axis) {
  const Tensor& tx = val(x);
  const AxisView v = axis_view(tx.shape, axis);
  Shape os;
  for (int i = 0; i < static_cast<int>(tx.shape.size()); ++i)
    if (i != axis) os.push_back(tx.shape[static_cast<std::size_t>(i)]);
  if (os.empty()) os.push_back(1);
  Tensor out(os);
  for (std::int64_t p = 0; p < v.pre; ++p)
    for (std::int64_t q = 0; q < v.post; ++q) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < v.n; ++i)
        acc += tx.data[static_cast<std::size_t>((p * v.n + i) * v.post + q)];
      out.data[static_cast<std::size_t>(p * v.post + q)] = acc;
    }
  const int px = x.id;
  return Var(this, record(std::move(out), {px}, [px, v](Graph& g, int self) {
               if (!g.grad_needed(px)) return;
               const auto& go = g.adj(self);
               auto& dx = g.adj(px);
               for (std::int64_t p = 0; p < v.pre; ++p)
                 for (std::int64_t q = 0; q < v.post; ++q) {
                   const double gv = go[static_cast<std::size_t>(p * v.post + q)];
                   for (std::int64_t i = 0; i < v.n; ++i)
                     dx[static_cast<std::size_t>((p * v.n + i) * v.post + q)] += gv;
                 }
             }));
}

Var Graph::scale_rows(Var mat, Var s) {
  const Tensor &tm = val(mat), &ts = val(s);
  check(tm.rank() == 2 && ts.rank() == 1, "scale_rows: need matrix and vector");
  check(tm.rows() == ts.dim(0), "scale_rows: row count mismatch " + shape_str(tm.shape) + " vs " +
                                    shape_str(ts.shape));
  const int r = tm.rows(), c = tm.cols();
  Tensor out(tm.shape);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(i, j) = tm.at(i, j) * ts.at(i);
  const int pm = mat.id, ps = s.id;
  return Var(this, record(std::move(out), {pm, ps}, [pm, ps, r, c](Graph& g, int self) {
               const auto& go = g.adj(self);
               const auto& vm = g.value_of(pm).data;
               const auto& vs = g.value_of(ps).data;
               if (g.grad_needed(pm)) {
                 auto& dm = g.adj(pm);
                 for (int i = 0; i < r; ++i)
                   for (int j = 0; j < c; ++j)
                     dm[static_cast<std::size_t>(i) * c + j] +=
                         go[static_cast<std::size_t>(i) * c + j] * vs[static_cast<std::size_t>(i)];
               }
               if (g.grad_needed(ps)) {
                 auto& ds = g.adj(ps);
                 for (int i = 0; i < r; ++i) {
                   double acc = 0.0;
                   for (int j = 0; j < c; ++j)
                     acc += go[static_cast<std::size_t>(i) * c + j] * vm[static_cast<std::size_t>(i) * c + j];
                   ds[static_cast<std::size_t>(i)] += acc;
                 }
               }
             }));
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor &tx = val(x), &tg = val(gamma), &tb = val(beta);
  check(tx.rank() == 2 && tg.rank() == 1 && tb.rank() == 1, "layer_norm: need matrix, gamma, beta");
  check(tx.cols() == tg.dim(0) && tx.cols() == tb.dim(0), "layer_norm: width mismatch");
  const int r = tx.rows(), c = tx.cols();
  Tensor out(tx.shape);
  std::vector<double> rstd(static_cast<std::size_t>(r));
  std::vector<double> xhat(static_cast<std::size_t>(r) * c);
  for (int i = 0; i < r; ++i) {
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += tx.at(i, j);
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = tx.at(i, j) - mean;
      var += d * d;
    }
    var /= c;
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(i)] = rs;
    for (int j = 0; j < c; ++j) {
      const double xh = (tx.at(i, j) - mean) * rs;
      xhat[static_cast<std::size_t>(i) * c + j] = xh;
      out.at(i, j) = xh * tg.at(j) + tb.at(j);
    }
  }
  const int px = x.id, pg = gamma.id, pb = beta.id;
  return Var(this, record(std::move(out), {px, pg, pb},
                          [px, pg, pb, r, c, rstd = std::move(rstd), xhat = std::move(xhat)](Graph& g, int self) {
               const auto& go = g.adj(self);
               const auto& vg = g.value_of(pg).data;
               if (g.grad_needed(pg)) {
                 auto& dg = g.adj(pg);
                 for (int i = 0; i < r; ++i)
                   for (int j = 0; j < c; ++j)
                     dg[static_cast<std::size_t>(j)] +=
                         go[static_cast<std::size_t>(i) * c + j] * xhat[static_cast<std::size_t>(i) * c + j];
               }
               if (g.grad_needed(pb)) {
                 auto& db = g.adj(pb);
                 for (int i = 0; i < r; ++i)
                   for (int j = 0; j < c; ++j) db[static_cast<std::size_t>(j)] += go[static_cast<std::size_t>(i) * c + j];
               }
               if (g.grad_needed(px)) {
                 auto& dx = g.adj(px);
                 for (int i = 0; i < r; ++i) {
                   double mean_h = 0.0, mean_hx = 0.0;
                   for (int j = 0; j < c; ++j) {
                     const std::size_t o = static_cast<std::size_t>(i) * c + j;
                     const double h = go[o] * vg[static_cast<std::size_t>(j)];
                     mean_h += h;
                     mean_hx += h * xhat[o];
                   }
                   mean_h /= c;
                   mean_hx /= c;
                   const double rs = rstd[static_cast<std::size_t>(i)];
                   for (int j = 0; j < c; ++j) {
                     const std::size_t o = static_cast<std::size_t>(i) * c + j;
                     const double h = go[o] * vg[static_cast<std::size_t>(j)];
                     dx[o] += rs * (h - mean_h - xhat[o] * mean_hx);
                   }
                 }
               }
             }));
}

Var Graph::aggregate_residuals(Var assign, Var feat, Var centers) {
  const Tensor &ta = val(assign), &tf = val(feat), &tc = val(centers);
  check(ta.rank() == 2 && tf.rank() == 2 && tc.rank() == 2, "aggregate_residuals: need rank-2 inputs");
  check(ta.rows() == tf.rows(), "aggregate_residuals: assignment and feature row counts differ");
  check(ta.cols() == tc.rows() && tf.cols() == tc.cols(),
        "aggregate_residuals: shapes " + shape_str(ta.shape) + ", " + shape_str(tf.shape) + ", " +
            shape_str(tc.shape) + " are inconsistent");
  const int n = ta.rows(), K = ta.cols(), J = tf.cols();
  Tensor out({K, J});
  ExactSum acc;
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < J; ++j) {
      acc.reset();
      const double ckj = tc.at(k, j);
      for (int i = 0; i < n; ++i) acc.add(ta.at(i, k) * (tf.at(i, j) - ckj));
      out.at(k, j) = acc.value();
    }
  const int pa = assign.id, pf = feat.id, pc = centers.id;
  return Var(this, record(std::move(out), {pa, pf, pc}, [pa, pf, pc, n, K, J](Graph& g, int self) {
               const auto& go = g.adj(self);
               const Tensor& va = g.value_of(pa);
               const Tensor& vf = g.value_of(pf);
               const Tensor& vc = g.value_of(pc);
               if (g.grad_needed(pa)) {
                 auto& da = g.adj(pa);
                 for (int i = 0; i < n; ++i)
                   for (int k = 0; k < K; ++k) {
                     double acc = 0.0;
                     for (int j = 0; j < J; ++j)
                       acc += go[static_cast<std::size_t>(k) * J + j] * (vf.at(i, j) - vc.at(k, j));
                     da[static_cast<std::size_t>(i) * K + k] += acc;
                   }
               }
               if (g.grad_needed(pf)) {
                 auto& df = g.adj(pf);
                 for (int i = 0; i < n; ++i)
                   for (int j = 0; j < J; ++j) {
                     double acc = 0.0;
                     for (int k = 0; k < K; ++k)
                       acc += go[static_cast<std::size_t>(k) * J + j] * va.at(i, k);
                     df[static_cast<std::size_t>(i) * J + j] += acc;
                   }
               }
               if (g.grad_needed(pc)) {
                 auto& dc = g.adj(pc);
                 for (int k = 0; k < K; ++k) {
                   double colsum = 0.0;
                   for (int i = 0; i < n; ++i) colsum += va.at(i, k);
                   for (int j = 0; j < J; ++j)
                     dc[static_cast<std::size_t>(k) * J + j] -= go[static_cast<std::size_t>(k) * J + j] * colsum;
                 }
               }
             }));
}

// ---------------------------------------------------------------------------

double grad_check(const std::function<Var(Graph&)>& build_loss, const ParamList& params, double step) {
  for (const auto& p : params) p.tensor->zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    Var loss = build_loss(g);
    g.backward(loss);
  }
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.tensor->grad);

  auto eval = [&]() {
    Graph g;
    Var loss = build_loss(g);
    return g.val(loss).data[0];
  };

  double max_err = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& t = *params[pi].tensor;
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const double orig = t.data[i];
      t.data[i] = orig + step;
      const double fp = eval();
      t.data[i] = orig - step;
      const double fm = eval();
      t.data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[pi][i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      max_err = std::max(max_err, std::abs(a - numeric) / denom);
    }
  }
  return max_err;
}

}  // namespace vsc
