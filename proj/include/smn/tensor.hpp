#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "smn/error.hpp"

namespace smn {

/// Dense shape, rank 1 (column vector) or rank 2 (row-major matrix).
struct Shape {
  uint32_t rows = 0;
  uint32_t cols = 1;
  uint8_t rank = 1;

  static Shape vec(uint32_t n) { return Shape{n, 1, 1}; }
  static Shape mat(uint32_t r, uint32_t c) { return Shape{r, c, 2}; }

  size_t size() const { return static_cast<size_t>(rows) * cols; }
  bool operator==(const Shape& o) const {
    return rows == o.rows && cols == o.cols && rank == o.rank;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }
  std::string str() const;
};

class Graph;

/// Lightweight handle to a node in a Graph. Copyable; values are owned by
/// the graph's arena and stay valid until Graph::clear().
class Tensor {
 public:
  Tensor() = default;
  bool valid() const { return g_ != nullptr; }

  Shape shape() const;
  size_t size() const;
  std::span<const double> value() const;
  /// Gradient of the last backward() pass. Empty span if the node does not
  /// require gradients.
  std::span<const double> grad() const;
  /// Value of a single-element tensor.
  double item() const;
  bool requires_grad() const;

  Graph& graph() const { return *g_; }
  int id() const { return id_; }

 private:
  friend class Graph;
  Tensor(Graph* g, int id) : g_(g), id_(id) {}
  Graph* g_ = nullptr;
  int id_ = -1;
};

/// Named trainable tensor. Lives outside any graph; graphs reference it as a
/// leaf and backward() accumulates into `grad`.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;

  size_t size() const { return value.size(); }
};

/// Ordered collection of parameters. Iteration order is insertion order,
/// which fixes initialization draws and checkpoint layout.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Shape shape);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  size_t count() const;  // total number of scalars
  size_t num_tensors() const { return items_.size(); }
  void zero_grad();

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

/// Append-only computation tape. Nodes are created in topological order by
/// construction; backward() sweeps them exactly once in reverse.
///
/// One graph serves one model instance on one thread. clear() recycles the
/// arenas so per-sample rebuilds do not reallocate.
class Graph {
 public:
  /// grad_enabled=false builds an inference-only tape: no gradient buffers
  /// are allocated and parameters enter as plain constants.
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // --- leaves ---
  Tensor constant(Shape shape, std::span<const double> v);
  Tensor constant(std::initializer_list<double> v);
  Tensor scalar(double v);
  Tensor zeros(Shape shape);
  /// Leaf for a parameter; memoized, so repeated uses of the same parameter
  /// within one graph share a node and gradients accumulate correctly.
  Tensor param(Parameter& p);

  // --- ops ---
  Tensor matmul(Tensor a, Tensor b);
  Tensor add(Tensor a, Tensor b);            // same shape or scalar broadcast
  Tensor sub(Tensor a, Tensor b);            // same shape or scalar broadcast
  Tensor mul(Tensor a, Tensor b);            // elementwise, scalar broadcast
  Tensor add_cols(Tensor m, Tensor bias);    // bias vector added to every column
  Tensor affine_combine(Tensor z, Tensor a, Tensor b);  // z*a + (1-z)*b
  Tensor sigmoid(Tensor x);
  Tensor tanh(Tensor x);
  Tensor concat(std::span<const Tensor> parts, int axis);
  Tensor concat(std::initializer_list<Tensor> parts, int axis) {
    return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
  }
  Tensor softmax(Tensor x);                  // 1-D, max-subtracted
  Tensor sum(Tensor x);                      // all elements -> scalar
  Tensor scale(Tensor x, double c);
  Tensor set_col(Tensor m, uint32_t col, Tensor v);  // replace one column
  Tensor gather_cols(Tensor m, std::span<const uint32_t> cols);
  Tensor reshape(Tensor x, Shape shape);     // aliases storage, no copy

  /// Reverse sweep from a scalar loss. Zeroes node gradients, seeds the loss
  /// with 1, visits nodes in reverse construction order exactly once, then
  /// accumulates leaf gradients into their parameters' grad buffers.
  void backward(Tensor loss);

  /// Drop all nodes but keep arena capacity for reuse.
  void clear();

  size_t num_nodes() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  enum class Op : uint8_t {
    leaf,
    matmul,
    add,
    add_scalar_l,  // scalar lhs broadcast
    add_scalar_r,
    sub,
    sub_scalar_l,
    sub_scalar_r,
    mul,
    mul_scalar_l,
    mul_scalar_r,
    add_cols,
    affine,
    sigmoid,
    tanh_,
    concat0,
    concat1,
    softmax_,
    sum_all,
    scale_,
    set_col_,
    gather,
    reshape_,
  };

  static constexpr size_t kNone = static_cast<size_t>(-1);

  struct Node {
    Op op;
    uint8_t rank;
    bool requires_grad;
    uint32_t rows, cols;
    size_t val;     // offset into vals_
    size_t grad;    // offset into grads_ or kNone
    uint32_t par;   // offset into parents_
    uint32_t npar;
    uint32_t aux;   // offset into aux_ (gather indices, set_col index)
    uint32_t naux;
    double c;       // scalar payload for scale_
  };

  Shape node_shape(const Node& n) const {
    return Shape{n.rows, n.cols, n.rank};
  }
  const Node& at(int id) const { return nodes_[static_cast<size_t>(id)]; }

  int new_node(Op op, Shape shape, std::span<const int> parents,
               std::span<const uint32_t> aux = {}, double c = 0.0);
  double* val_ptr(int id) { return vals_.data() + nodes_[id].val; }
  const double* val_ptr(int id) const { return vals_.data() + nodes_[id].val; }
  double* grad_ptr(int id) {
    return nodes_[id].grad == kNone ? nullptr : grads_.data() + nodes_[id].grad;
  }
  void check_same_graph(Tensor t) const;
  void backward_node(size_t i);

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<double> vals_;
  std::vector<double> grads_;
  std::vector<int> parents_;
  std::vector<uint32_t> aux_;
  std::vector<std::pair<Parameter*, int>> param_nodes_;
  std::unordered_map<Parameter*, int> param_memo_;

  friend class Tensor;
};

// Free-function forms used by most call sites.
inline Tensor matmul(Tensor a, Tensor b) { return a.graph().matmul(a, b); }
inline Tensor add(Tensor a, Tensor b) { return a.graph().add(a, b); }
inline Tensor sub(Tensor a, Tensor b) { return a.graph().sub(a, b); }
inline Tensor mul(Tensor a, Tensor b) { return a.graph().mul(a, b); }
inline Tensor add_cols(Tensor m, Tensor bias) { return m.graph().add_cols(m, bias); }
inline Tensor affine_combine(Tensor z, Tensor a, Tensor b) {
  return z.graph().affine_combine(z, a, b);
}
inline Tensor sigmoid(Tensor x) { return x.graph().sigmoid(x); }
inline Tensor tanh(Tensor x) { return x.graph().tanh(x); }
inline Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw dim_error("concat: no parts");
  return parts[0].graph().concat(parts, axis);
}
inline Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}
inline Tensor softmax(Tensor x) { return x.graph().softmax(x); }
inline Tensor sum(Tensor x) { return x.graph().sum(x); }
inline Tensor scale(Tensor x, double c) { return x.graph().scale(x, c); }
inline Tensor reshape(Tensor x, Shape s) { return x.graph().reshape(x, s); }

}  // namespace smn
