// SPDX-License-Identifier: Apache-2.0
//
// Dense f64 tensors and a dynamic reverse-mode tape.
//
// A Graph records operations as they execute ("define by run"). Leaf nodes
// are either leased parameters (gradients accumulate back into the owning
// Tensor's grad buffer) or constants. backward() walks the tape in reverse
// creation order, which is a valid topological order by construction.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace vsc {

using Shape = std::vector<int>;

std::int64_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

class Rng;

struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until ensure_grad(); same length as data otherwise

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rows() const { return shape[0]; }
  int cols() const { return shape[1]; }

  double& at(int i) { return data[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols() + j]; }

  void ensure_grad();
  void zero_grad();

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, double v) { return Tensor(std::move(s), v); }
  static Tensor identity(int n);
  // Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) fill in row-major order.
  static Tensor fan_in_init(Shape s, int fan_in, Rng& rng);
  static Tensor uniform_init(Shape s, double lo, double hi, Rng& rng);
};

// Named parameter handles for optimizers and checkpoints. Order is stable
// and doubles as the documented initialization stream order.
struct ParamEntry {
  std::string name;
  Tensor* tensor;
};
using ParamList = std::vector<ParamEntry>;

class Graph;

struct Var {
  Var() = default;
  Var(Graph* g, int id) : graph(g), id(id) {}
  Graph* graph = nullptr;
  int id = -1;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leases a parameter into the graph. Repeated leases of the same tensor
  // return the same node. backward() accumulates into t.grad.
  Var param(Tensor& t);
  Var constant(const Tensor& t);
  Var constant(Shape shape, std::vector<double> values);
  Var scalar(double v);

  const Tensor& val(Var v) const;
  // Adjoint buffer of a node; valid after backward().
  const std::vector<double>& adjoint(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }

  // Fills grad buffers of all leased parameters with d(loss)/d(param).
  // loss must be a scalar node. Accumulates: callers zero grads between
  // steps.
  void backward(Var loss);

  // ---- operations -------------------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  // scale * a + shift, elementwise
  Var affine(Var a, double scale, double shift);
  // mat[r x c] + bias[c] broadcast over rows
  Var add_bias(Var mat, Var bias);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var reshape(Var a, Shape s);
  // slice along an axis: elements [start, start+len)
  Var narrow(Var a, int axis, int start, int len);
  Var concat(const std::vector<Var>& xs, int axis);
  Var sigmoid(Var x);
  Var relu(Var x);
  Var log(Var x);
  Var clamp(Var x, double lo, double hi);
  Var softmax(Var x, int axis);
  // slices along `axis` divided by max(l2 norm, eps)
  Var l2_normalize(Var x, int axis, double eps);
  Var sum(Var x);
  Var sum_axis(Var x, int axis);
  // mat[r x c] with row i multiplied by s[i]
  Var scale_rows(Var mat, Var s);
  Var layer_norm(Var x, Var gamma, Var beta, double eps);
  // VLAD-style aggregation: out[k,j] = sum_i assign[i,k] * (feat[i,j] - centers[k,j]).
  // The sum over i is exactly rounded, so the output is invariant under row
  // permutations of (assign, feat).
  Var aggregate_residuals(Var assign, Var feat, Var centers);

 private:
  using BackFn = std::function<void(Graph&, int)>;

  struct Node {
    Tensor value;
    std::vector<double> adj;
    Tensor* leased = nullptr;
    bool needs_grad = false;
    std::vector<int> parents;
    BackFn back;
  };

  int record(Tensor value, std::vector<int> parents, BackFn back);
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::vector<double>& adj(int id) { return nodes_[static_cast<std::size_t>(id)].adj; }
  const Tensor& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool grad_needed(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  // deque keeps val() references stable while the tape grows
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, int> leased_;
};

// Elementwise convenience operators.
inline Var operator+(Var a, Var b) { return a.graph->add(a, b); }
inline Var operator-(Var a, Var b) { return a.graph->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.graph->mul(a, b); }

// Max relative error (with a unit floor in the denominator) between analytic
// gradients of build_loss and central finite differences over all elements
// of params.
double grad_check(const std::function<Var(Graph&)>& build_loss, const ParamList& params,
                  double step = 1e-5);

}  // namespace vsc
