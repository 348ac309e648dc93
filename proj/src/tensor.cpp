#include "smn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace smn {

std::string Shape::str() const {
  if (rank == 1) return "[" + std::to_string(rows) + "]";
  return "[" + std::to_string(rows) + "," + std::to_string(cols) + "]";
}

// ---------------------------------------------------------------------------
// Tensor accessors
// ---------------------------------------------------------------------------

Shape Tensor::shape() const { return g_->node_shape(g_->at(id_)); }
size_t Tensor::size() const { return shape().size(); }

std::span<const double> Tensor::value() const {
  const auto& n = g_->at(id_);
  return {g_->vals_.data() + n.val, g_->node_shape(n).size()};
}

std::span<const double> Tensor::grad() const {
  const auto& n = g_->at(id_);
  if (n.grad == Graph::kNone) return {};
  return {g_->grads_.data() + n.grad, g_->node_shape(n).size()};
}

double Tensor::item() const {
  if (size() != 1) throw contract_error("item(): tensor has " + std::to_string(size()) + " elements");
  return value()[0];
}

bool Tensor::requires_grad() const { return g_->at(id_).requires_grad; }

// ---------------------------------------------------------------------------
// ParameterSet
// ---------------------------------------------------------------------------

Parameter& ParameterSet::add(const std::string& name, Shape shape) {
  if (by_name_.count(name)) throw contract_error("duplicate parameter: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->shape = shape;
  p->value.assign(shape.size(), 0.0);
  p->grad.assign(shape.size(), 0.0);
  Parameter* raw = p.get();
  items_.push_back(std::move(p));
  by_name_[name] = raw;
  return *raw;
}

Parameter* ParameterSet::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

size_t ParameterSet::count() const {
  size_t n = 0;
  for (const auto& p : items_) n += p->size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Graph: node construction
// ---------------------------------------------------------------------------

int Graph::new_node(Op op, Shape shape, std::span<const int> parents,
                    std::span<const uint32_t> aux, double c) {
  Node n;
  n.op = op;
  n.rank = shape.rank;
  n.rows = shape.rows;
  n.cols = shape.cols;
  n.requires_grad = false;
  for (int p : parents) {
    if (nodes_[p].requires_grad) n.requires_grad = true;
  }
  n.par = static_cast<uint32_t>(parents_.size());
  n.npar = static_cast<uint32_t>(parents.size());
  parents_.insert(parents_.end(), parents.begin(), parents.end());
  n.aux = static_cast<uint32_t>(aux_.size());
  n.naux = static_cast<uint32_t>(aux.size());
  aux_.insert(aux_.end(), aux.begin(), aux.end());
  n.c = c;

  if (op == Op::reshape_) {
    // Alias the parent's storage; no copy and no separate gradient buffer.
    n.val = nodes_[parents[0]].val;
    n.grad = nodes_[parents[0]].grad;
  } else {
    n.val = vals_.size();
    vals_.resize(vals_.size() + shape.size(), 0.0);
    if (n.requires_grad && grad_enabled_) {
      n.grad = grads_.size();
      grads_.resize(grads_.size() + shape.size(), 0.0);
    } else {
      n.grad = kNone;
    }
  }
  nodes_.push_back(n);
  return static_cast<int>(nodes_.size()) - 1;
}

void Graph::check_same_graph(Tensor t) const {
  if (!t.valid() || &t.graph() != this)
    throw contract_error("tensor does not belong to this graph");
}

Tensor Graph::constant(Shape shape, std::span<const double> v) {
  if (v.size() != shape.size())
    throw dim_error("constant: data length " + std::to_string(v.size()) +
                    " does not match shape " + shape.str());
  int id = new_node(Op::leaf, shape, {});
  std::copy(v.begin(), v.end(), val_ptr(id));
  return Tensor(this, id);
}

Tensor Graph::constant(std::initializer_list<double> v) {
  std::vector<double> tmp(v);
  return constant(Shape::vec(static_cast<uint32_t>(tmp.size())), tmp);
}

Tensor Graph::scalar(double v) { return constant({v}); }

Tensor Graph::zeros(Shape shape) {
  int id = new_node(Op::leaf, shape, {});
  return Tensor(this, id);
}

Tensor Graph::param(Parameter& p) {
  auto it = param_memo_.find(&p);
  if (it != param_memo_.end()) return Tensor(this, it->second);
  int id = new_node(Op::leaf, p.shape, {});
  std::copy(p.value.begin(), p.value.end(), val_ptr(id));
  if (grad_enabled_) {
    Node& n = nodes_[id];
    n.requires_grad = true;
    n.grad = grads_.size();
    grads_.resize(grads_.size() + p.shape.size(), 0.0);
    param_nodes_.emplace_back(&p, id);
  }
  param_memo_[&p] = id;
  return Tensor(this, id);
}

// ---------------------------------------------------------------------------
// Graph: forward ops
// ---------------------------------------------------------------------------

Tensor Graph::matmul(Tensor a, Tensor b) {
  check_same_graph(a);
  check_same_graph(b);
  Shape sa = a.shape(), sb = b.shape();
  if (sa.rank != 2 || sa.cols != sb.rows)
    throw dim_error("matmul: incompatible shapes " + sa.str() + " x " + sb.str());
  const uint32_t m = sa.rows, k = sa.cols, ncols = sb.cols;
  Shape out = (sb.rank == 1) ? Shape::vec(m) : Shape::mat(m, ncols);
  int parents[2] = {a.id(), b.id()};
  int id = new_node(Op::matmul, out, parents);
  const double* A = val_ptr(parents[0]);
  const double* B = val_ptr(parents[1]);
  double* C = val_ptr(id);
  // ikj order: contiguous access on B and C rows. For a fixed output element
  // the sum over k still runs in ascending k.
  for (uint32_t i = 0; i < m; ++i) {
    double* Ci = C + static_cast<size_t>(i) * ncols;
    const double* Ai = A + static_cast<size_t>(i) * k;
    for (uint32_t kk = 0; kk < k; ++kk) {
      const double aik = Ai[kk];
      const double* Bk = B + static_cast<size_t>(kk) * ncols;
      for (uint32_t j = 0; j < ncols; ++j) Ci[j] += aik * Bk[j];
    }
  }
  return Tensor(this, id);
}

namespace {
bool scalar_like(const Shape& s) { return s.size() == 1; }
}  // namespace

Tensor Graph::add(Tensor a, Tensor b) {
  check_same_graph(a);
  check_same_graph(b);
  Shape sa = a.shape(), sb = b.shape();
  int parents[2] = {a.id(), b.id()};
  if (sa == sb) {
    int id = new_node(Op::add, sa, parents);
    const double* x = val_ptr(a.id());
    const double* y = val_ptr(b.id());
    double* o = val_ptr(id);
    for (size_t i = 0; i < sa.size(); ++i) o[i] = x[i] + y[i];
    return Tensor(this, id);
  }
  if (scalar_like(sa)) {
    int id = new_node(Op::add_scalar_l, sb, parents);
    const double s = val_ptr(a.id())[0];
    const double* y = val_ptr(b.id());
    double* o = val_ptr(id);
    for (size_t i = 0; i < sb.size(); ++i) o[i] = s + y[i];
    return Tensor(this, id);
  }
  if (scalar_like(sb)) {
    int id = new_node(Op::add_scalar_r, sa, parents);
    const double* x = val_ptr(a.id());
    const double s = val_ptr(b.id())[0];
    double* o = val_ptr(id);
    for (size_t i = 0; i < sa.size(); ++i) o[i] = x[i] + s;
    return Tensor(this, id);
  }
  throw dim_error("add: incompatible shapes " + sa.str() + " vs " + sb.str());
}

Tensor Graph::sub(Tensor a, Tensor b) {
  check_same_graph(a);
  check_same_graph(b);
  Shape sa = a.shape(), sb = b.shape();
  int parents[2] = {a.id(), b.id()};
  if (sa == sb) {
    int id = new_node(Op::sub, sa, parents);
    const double* x = val_ptr(a.id());
    const double* y = val_ptr(b.id());
    double* o = val_ptr(id);
    for (size_t i = 0; i < sa.size(); ++i) o[i] = x[i] - y[i];
    return Tensor(this, id);
  }
  if (scalar_like(sa)) {
    int id = new_node(Op::sub_scalar_l, sb, parents);
    const double s = val_ptr(a.id())[0];
    const double* y = val_ptr(b.id());
    double* o = val_ptr(id);
    for (size_t i = 0; i < sb.size(); ++i) o[i] = s - y[i];
    return Tensor(this, id);
  }
  if (scalar_like(sb)) {
    int id = new_node(Op::sub_scalar_r, sa, parents);
    const double* x = val_ptr(a.id());
    const double s = val_ptr(b.id())[0];
    double* o = val_ptr(id);
    for (size_t i = 0; i < sa.size(); ++i) o[i] = x[i] - s;
    return Tensor(this, id);
  }
  throw dim_error("sub: incompatible shapes " + sa.str() + " vs " + sb.str());
}

Tensor Graph::mul(Tensor a, Tensor b) {
  check_same_graph(a);
  check_same_graph(b);
  Shape sa = a.shape(), sb = b.shape();
  int parents[2] = {a.id(), b.id()};
  if (sa == sb) {
    int id = new_node(Op::mul, sa, parents);
    const double* x = val_ptr(a.id());
    const double* y = val_ptr(b.id());
    double* o = val_ptr(id);
    for (size_t i = 0; i < sa.size(); ++i) o[i] = x[i] * y[i];
    return Tensor(this, id);
  }
  if (scalar_like(sa)) {
    int id = new_node(Op::mul_scalar_l, sb, parents);
    const double s = val_ptr(a.id())[0];
    const double* y = val_ptr(b.id());
    double* o = val_ptr(id);
    for (size_t i = 0; i < sb.size(); ++i) o[i] = s * y[i];
    return Tensor(this, id);
  }
  if (scalar_like(sb)) {
    int id = new_node(Op::mul_scalar_r, sa, parents);
    const double* x = val_ptr(a.id());
    const double s = val_ptr(b.id())[0];
    double* o = val_ptr(id);
    for (size_t i = 0; i < sa.size(); ++i) o[i] = x[i] * s;
    return Tensor(this, id);
  }
  throw dim_error("mul: incompatible shapes " + sa.str() + " vs " + sb.str());
}

Tensor Graph::add_cols(Tensor m, Tensor bias) {
  check_same_graph(m);
  check_same_graph(bias);
  Shape sm = m.shape(), sv = bias.shape();
  if (sm.rank != 2 || sv.rank != 1 || sv.rows != sm.rows)
    throw dim_error("add_cols: " + sm.str() + " vs " + sv.str());
  int parents[2] = {m.id(), bias.id()};
  int id = new_node(Op::add_cols, sm, parents);
  const double* x = val_ptr(m.id());
  const double* v = val_ptr(bias.id());
  double* o = val_ptr(id);
  for (uint32_t i = 0; i < sm.rows; ++i) {
    const double bi = v[i];
    const size_t off = static_cast<size_t>(i) * sm.cols;
    for (uint32_t j = 0; j < sm.cols; ++j) o[off + j] = x[off + j] + bi;
  }
  return Tensor(this, id);
}

Tensor Graph::affine_combine(Tensor z, Tensor a, Tensor b) {
  check_same_graph(z);
  check_same_graph(a);
  check_same_graph(b);
  Shape s = z.shape();
  if (a.shape() != s || b.shape() != s)
    throw dim_error("affine_combine: shapes differ " + s.str() + ", " +
                    a.shape().str() + ", " + b.shape().str());
  int parents[3] = {z.id(), a.id(), b.id()};
  int id = new_node(Op::affine, s, parents);
  const double* zp = val_ptr(z.id());
  const double* ap = val_ptr(a.id());
  const double* bp = val_ptr(b.id());
  double* o = val_ptr(id);
  for (size_t i = 0; i < s.size(); ++i) o[i] = zp[i] * ap[i] + (1.0 - zp[i]) * bp[i];
  return Tensor(this, id);
}

Tensor Graph::sigmoid(Tensor x) {
  check_same_graph(x);
  int parents[1] = {x.id()};
  int id = new_node(Op::sigmoid, x.shape(), parents);
  const double* in = val_ptr(x.id());
  double* o = val_ptr(id);
  for (size_t i = 0; i < x.size(); ++i) o[i] = 1.0 / (1.0 + std::exp(-in[i]));
  return Tensor(this, id);
}

Tensor Graph::tanh(Tensor x) {
  check_same_graph(x);
  int parents[1] = {x.id()};
  int id = new_node(Op::tanh_, x.shape(), parents);
  const double* in = val_ptr(x.id());
  double* o = val_ptr(id);
  for (size_t i = 0; i < x.size(); ++i) o[i] = std::tanh(in[i]);
  return Tensor(this, id);
}

Tensor Graph::concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw dim_error("concat: no parts");
  for (Tensor t : parts) check_same_graph(t);
  std::vector<int> parents;
  parents.reserve(parts.size());
  for (Tensor t : parts) parents.push_back(t.id());

  if (axis == 0) {
    // Stack along rows. Vectors stay vectors; matrices must agree on cols.
    const Shape s0 = parts[0].shape();
    uint32_t rows = 0;
    for (Tensor t : parts) {
      Shape s = t.shape();
      if (s.rank != s0.rank || s.cols != s0.cols)
        throw dim_error("concat axis 0: extent mismatch " + s.str() + " vs " + s0.str());
      rows += s.rows;
    }
    Shape out = (s0.rank == 1) ? Shape::vec(rows) : Shape::mat(rows, s0.cols);
    int id = new_node(Op::concat0, out, parents);
    double* o = val_ptr(id);
    size_t off = 0;
    for (Tensor t : parts) {
      auto v = t.value();
      std::copy(v.begin(), v.end(), o + off);
      off += v.size();
    }
    return Tensor(this, id);
  }
  if (axis == 1) {
    // Stack along columns; rank-1 parts are treated as single columns.
    const uint32_t rows = parts[0].shape().rows;
    uint32_t cols = 0;
    for (Tensor t : parts) {
      Shape s = t.shape();
      if (s.rows != rows)
        throw dim_error("concat axis 1: extent mismatch " + s.str());
      cols += (s.rank == 1) ? 1 : s.cols;
    }
    Shape out = Shape::mat(rows, cols);
    int id = new_node(Op::concat1, out, parents);
    double* o = val_ptr(id);
    uint32_t col0 = 0;
    for (Tensor t : parts) {
      Shape s = t.shape();
      const uint32_t pc = (s.rank == 1) ? 1 : s.cols;
      const double* v = val_ptr(t.id());
      for (uint32_t i = 0; i < rows; ++i)
        for (uint32_t j = 0; j < pc; ++j)
          o[static_cast<size_t>(i) * cols + col0 + j] = v[static_cast<size_t>(i) * pc + j];
      col0 += pc;
    }
    return Tensor(this, id);
  }
  throw dim_error("concat: unsupported axis " + std::to_string(axis));
}

Tensor Graph::softmax(Tensor x) {
  check_same_graph(x);
  Shape s = x.shape();
  if (s.rank != 1) throw dim_error("softmax: expects a vector, got " + s.str());
  for (uint32_t i = 0; i < s.rows; ++i)
    if (std::isnan(val_ptr(x.id())[i])) throw numeric_error("softmax: NaN input");
  int parents[1] = {x.id()};
  int id = new_node(Op::softmax_, s, parents);
  const double* in = val_ptr(x.id());
  double* o = val_ptr(id);
  double mx = in[0];
  for (uint32_t i = 1; i < s.rows; ++i) mx = std::max(mx, in[i]);
  double z = 0.0;
  for (uint32_t i = 0; i < s.rows; ++i) {
    o[i] = std::exp(in[i] - mx);
    z += o[i];
  }
  for (uint32_t i = 0; i < s.rows; ++i) o[i] /= z;
  return Tensor(this, id);
}

Tensor Graph::sum(Tensor x) {
  check_same_graph(x);
  int parents[1] = {x.id()};
  int id = new_node(Op::sum_all, Shape::vec(1), parents);
  const double* in = val_ptr(x.id());
  double acc = 0.0;
  for (size_t i = 0; i < x.size(); ++i) acc += in[i];
  val_ptr(id)[0] = acc;
  return Tensor(this, id);
}

Tensor Graph::scale(Tensor x, double c) {
  check_same_graph(x);
  int parents[1] = {x.id()};
  int id = new_node(Op::scale_, x.shape(), parents, {}, c);
  const double* in = val_ptr(x.id());
  double* o = val_ptr(id);
  for (size_t i = 0; i < x.size(); ++i) o[i] = c * in[i];
  return Tensor(this, id);
}

Tensor Graph::set_col(Tensor m, uint32_t col, Tensor v) {
  check_same_graph(m);
  check_same_graph(v);
  Shape sm = m.shape(), sv = v.shape();
  if (sm.rank != 2 || sv.rank != 1 || sv.rows != sm.rows)
    throw dim_error("set_col: " + sm.str() + " vs " + sv.str());
  if (col >= sm.cols)
    throw contract_error("set_col: column " + std::to_string(col) + " out of range [0," +
                         std::to_string(sm.cols) + ")");
  int parents[2] = {m.id(), v.id()};
  uint32_t aux[1] = {col};
  int id = new_node(Op::set_col_, sm, parents, aux);
  const double* x = val_ptr(m.id());
  const double* w = val_ptr(v.id());
  double* o = val_ptr(id);
  std::memcpy(o, x, sm.size() * sizeof(double));
  for (uint32_t i = 0; i < sm.rows; ++i) o[static_cast<size_t>(i) * sm.cols + col] = w[i];
  return Tensor(this, id);
}

Tensor Graph::gather_cols(Tensor m, std::span<const uint32_t> cols) {
  check_same_graph(m);
  Shape sm = m.shape();
  if (sm.rank != 2) throw dim_error("gather_cols: expects a matrix, got " + sm.str());
  for (uint32_t c : cols)
    if (c >= sm.cols) throw contract_error("gather_cols: column out of range");
  int parents[1] = {m.id()};
  Shape out = Shape::mat(sm.rows, static_cast<uint32_t>(cols.size()));
  int id = new_node(Op::gather, out, parents, cols);
  const double* x = val_ptr(m.id());
  double* o = val_ptr(id);
  for (uint32_t i = 0; i < sm.rows; ++i) {
    const double* xi = x + static_cast<size_t>(i) * sm.cols;
    double* oi = o + static_cast<size_t>(i) * cols.size();
    for (size_t j = 0; j < cols.size(); ++j) oi[j] = xi[cols[j]];
  }
  return Tensor(this, id);
}

Tensor Graph::reshape(Tensor x, Shape shape) {
  check_same_graph(x);
  if (shape.size() != x.size())
    throw dim_error("reshape: size mismatch " + x.shape().str() + " -> " + shape.str());
  int parents[1] = {x.id()};
  int id = new_node(Op::reshape_, shape, parents);
  return Tensor(this, id);
}

// ---------------------------------------------------------------------------
// Graph: backward
// ---------------------------------------------------------------------------

void Graph::backward_node(size_t i) {
  const Node& n = nodes_[i];
  const double* g = grads_.data() + n.grad;
  const size_t sz = node_shape(n).size();
  auto pgrad = [&](int pi) -> double* {
    return nodes_[pi].grad == kNone ? nullptr : grads_.data() + nodes_[pi].grad;
  };
  const int* par = parents_.data() + n.par;

  switch (n.op) {
    case Op::leaf:
    case Op::reshape_:
      break;  // reshape shares the parent's gradient buffer

    case Op::matmul: {
      const Node& na = nodes_[par[0]];
      const Node& nb = nodes_[par[1]];
      const uint32_t m = na.rows, k = na.cols;
      const uint32_t N = (n.rank == 1) ? 1 : n.cols;
      const double* A = vals_.data() + na.val;
      const double* B = vals_.data() + nb.val;
      if (double* dA = pgrad(par[0])) {
        // dA[i,k] += sum_j g[i,j] * B[k,j]
        for (uint32_t ii = 0; ii < m; ++ii) {
          const double* gi = g + static_cast<size_t>(ii) * N;
          double* dAi = dA + static_cast<size_t>(ii) * k;
          for (uint32_t kk = 0; kk < k; ++kk) {
            const double* Bk = B + static_cast<size_t>(kk) * N;
            double acc = 0.0;
            for (uint32_t j = 0; j < N; ++j) acc += gi[j] * Bk[j];
            dAi[kk] += acc;
          }
        }
      }
      if (double* dB = pgrad(par[1])) {
        // dB[k,j] += sum_i A[i,k] * g[i,j]
        for (uint32_t ii = 0; ii < m; ++ii) {
          const double* Ai = A + static_cast<size_t>(ii) * k;
          const double* gi = g + static_cast<size_t>(ii) * N;
          for (uint32_t kk = 0; kk < k; ++kk) {
            const double a = Ai[kk];
            double* dBk = dB + static_cast<size_t>(kk) * N;
            for (uint32_t j = 0; j < N; ++j) dBk[j] += a * gi[j];
          }
        }
      }
      break;
    }

    case Op::add: {
      if (double* da = pgrad(par[0]))
        for (size_t j = 0; j < sz; ++j) da[j] += g[j];
      if (double* db = pgrad(par[1]))
        for (size_t j = 0; j < sz; ++j) db[j] += g[j];
      break;
    }
    case Op::add_scalar_l: {
      if (double* da = pgrad(par[0]))
        for (size_t j = 0; j < sz; ++j) da[0] += g[j];
      if (double* db = pgrad(par[1]))
        for (size_t j = 0; j < sz; ++j) db[j] += g[j];
      break;
    }
    case Op::add_scalar_r: {
      if (double* da = pgrad(par[0]))
        for (size_t j = 0; j < sz; ++j) da[j] += g[j];
      if (double* db = pgrad(par[1]))
        for (size_t j = 0; j < sz; ++j) db[0] += g[j];
      break;
    }
    case Op::sub: {
      if (double* da = pgrad(par[0]))
        for (size_t j = 0; j < sz; ++j) da[j] += g[j];
      if (double* db = pgrad(par[1]))
        for (size_t j = 0; j < sz; ++j) db[j] -= g[j];
      break;
    }
    case Op::sub_scalar_l: {
      if (double* da = pgrad(par[0]))
        for (size_t j = 0; j < sz; ++j) da[0] += g[j];
      if (double* db = pgrad(par[1]))
        for (size_t j = 0; j < sz; ++j) db[j] -= g[j];
      break;
    }
    case Op::sub_scalar_r: {
      if (double* da = pgrad(par[0]))
        for (size_t j = 0; j < sz; ++j) da[j] += g[j];
      if (double* db = pgrad(par[1]))
        for (size_t j = 0; j < sz; ++j) db[0] -= g[j];
      break;
    }
    case Op::mul: {
      const double* x = vals_.data() + nodes_[par[0]].val;
      const double* y = vals_.data() + nodes_[par[1]].val;
      if (double* da = pgrad(par[0]))
        for (size_t j = 0; j < sz; ++j) da[j] += g[j] * y[j];
      if (double* db = pgrad(par[1]))
        for (size_t j = 0; j < sz; ++j) db[j] += g[j] * x[j];
      break;
    }
    case Op::mul_scalar_l: {
      const double s = vals_[nodes_[par[0]].val];
      const double* y = vals_.data() + nodes_[par[1]].val;
      if (double* da = pgrad(par[0]))
        for (size_t j = 0; j < sz; ++j) da[0] += g[j] * y[j];
      if (double* db = pgrad(par[1]))
        for (size_t j = 0; j < sz; ++j) db[j] += g[j] * s;
      break;
    }
    case Op::mul_scalar_r: {
      const double* x = vals_.data() + nodes_[par[0]].val;
      const double s = vals_[nodes_[par[1]].val];
      if (double* da = pgrad(par[0]))
        for (size_t j = 0; j < sz; ++j) da[j] += g[j] * s;
      if (double* db = pgrad(par[1]))
        for (size_t j = 0; j < sz; ++j) db[0] += g[j] * x[j];
      break;
    }
    case Op::add_cols: {
      const uint32_t rows = n.rows, cols = n.cols;
      if (double* dm = pgrad(par[0]))
        for (size_t j = 0; j < sz; ++j) dm[j] += g[j];
      if (double* dv = pgrad(par[1])) {
        for (uint32_t r = 0; r < rows; ++r) {
          const double* gr = g + static_cast<size_t>(r) * cols;
          double acc = 0.0;
          for (uint32_t jc = 0; jc < cols; ++jc) acc += gr[jc];
          dv[r] += acc;
        }
      }
      break;
    }
    case Op::affine: {
      const double* z = vals_.data() + nodes_[par[0]].val;
      const double* a = vals_.data() + nodes_[par[1]].val;
      const double* b = vals_.data() + nodes_[par[2]].val;
      if (double* dz = pgrad(par[0]))
        for (size_t j = 0; j < sz; ++j) dz[j] += g[j] * (a[j] - b[j]);
      if (double* da = pgrad(par[1]))
        for (size_t j = 0; j < sz; ++j) da[j] += g[j] * z[j];
      if (double* db = pgrad(par[2]))
        for (size_t j = 0; j < sz; ++j) db[j] += g[j] * (1.0 - z[j]);
      break;
    }
    case Op::sigmoid: {
      const double* y = vals_.data() + n.val;
      if (double* dx = pgrad(par[0]))
        for (size_t j = 0; j < sz; ++j) dx[j] += g[j] * y[j] * (1.0 - y[j]);
      break;
    }
    case Op::tanh_: {
      const double* y = vals_.data() + n.val;
      if (double* dx = pgrad(par[0]))
        for (size_t j = 0; j < sz; ++j) dx[j] += g[j] * (1.0 - y[j] * y[j]);
      break;
    }
    case Op::concat0: {
      size_t off = 0;
      for (uint32_t p = 0; p < n.npar; ++p) {
        const Node& np = nodes_[par[p]];
        const size_t psz = node_shape(np).size();
        if (double* dp = pgrad(par[p]))
          for (size_t j = 0; j < psz; ++j) dp[j] += g[off + j];
        off += psz;
      }
      break;
    }
    case Op::concat1: {
      const uint32_t rows = n.rows, cols = n.cols;
      uint32_t col0 = 0;
      for (uint32_t p = 0; p < n.npar; ++p) {
        const Node& np = nodes_[par[p]];
        const uint32_t pc = (np.rank == 1) ? 1 : np.cols;
        if (double* dp = pgrad(par[p])) {
          for (uint32_t r = 0; r < rows; ++r)
            for (uint32_t jc = 0; jc < pc; ++jc)
              dp[static_cast<size_t>(r) * pc + jc] +=
                  g[static_cast<size_t>(r) * cols + col0 + jc];
        }
        col0 += pc;
      }
      break;
    }
    case Op::softmax_: {
      const double* y = vals_.data() + n.val;
      if (double* dx = pgrad(par[0])) {
        double dot = 0.0;
        for (size_t j = 0; j < sz; ++j) dot += g[j] * y[j];
        for (size_t j = 0; j < sz; ++j) dx[j] += y[j] * (g[j] - dot);
      }
      break;
    }
    case Op::sum_all: {
      const Node& np = nodes_[par[0]];
      const size_t psz = node_shape(np).size();
      if (double* dx = pgrad(par[0]))
        for (size_t j = 0; j < psz; ++j) dx[j] += g[0];
      break;
    }
    case Op::scale_: {
      if (double* dx = pgrad(par[0]))
        for (size_t j = 0; j < sz; ++j) dx[j] += n.c * g[j];
      break;
    }
    case Op::set_col_: {
      const uint32_t col = aux_[n.aux];
      const uint32_t rows = n.rows, cols = n.cols;
      if (double* dm = pgrad(par[0])) {
        for (uint32_t r = 0; r < rows; ++r) {
          const size_t off = static_cast<size_t>(r) * cols;
          for (uint32_t jc = 0; jc < cols; ++jc)
            if (jc != col) dm[off + jc] += g[off + jc];
        }
      }
      if (double* dv = pgrad(par[1]))
        for (uint32_t r = 0; r < rows; ++r) dv[r] += g[static_cast<size_t>(r) * cols + col];
      break;
    }
    case Op::gather: {
      const uint32_t* idx = aux_.data() + n.aux;
      const uint32_t rows = n.rows, k = n.cols;
      const Node& np = nodes_[par[0]];
      if (double* dm = pgrad(par[0])) {
        for (uint32_t r = 0; r < rows; ++r) {
          const double* gr = g + static_cast<size_t>(r) * k;
          double* dmr = dm + static_cast<size_t>(r) * np.cols;
          for (uint32_t j = 0; j < k; ++j) dmr[idx[j]] += gr[j];
        }
      }
      break;
    }
  }
}

void Graph::backward(Tensor loss) {
  check_same_graph(loss);
  if (!grad_enabled_) throw contract_error("backward: graph built with grad disabled");
  if (loss.size() != 1)
    throw contract_error("backward: loss must be scalar, got " + loss.shape().str());
  const Node& ln = at(loss.id());
  if (ln.grad == kNone) {
    // Loss does not depend on any parameter; gradients are all zero.
    return;
  }
  std::fill(grads_.begin(), grads_.end(), 0.0);
  grads_[ln.grad] = 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || n.grad == kNone) continue;
    if (static_cast<int>(i) > loss.id()) continue;  // nodes after the loss cannot influence it
    backward_node(i);
  }
  for (auto& [p, id] : param_nodes_) {
    const Node& n = nodes_[id];
    const double* g = grads_.data() + n.grad;
    for (size_t j = 0; j < p->value.size(); ++j) p->grad[j] += g[j];
  }
}

void Graph::clear() {
  nodes_.clear();
  vals_.clear();
  grads_.clear();
  parents_.clear();
  aux_.clear();
  param_nodes_.clear();
  param_memo_.clear();
}

}  // namespace smn
