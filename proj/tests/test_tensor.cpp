#include <cmath>
#include <vector>

#include "doctest.h"
#include "smn/rng.hpp"
#include "smn/tensor.hpp"
#include "test_util.hpp"

using namespace smn;

namespace {

Tensor random_param(Graph& g, Parameter& p, RandomStream& rs) {
  for (auto& v : p.value) v = rs.uniform(-1.0, 1.0);
  return g.param(p);
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  Graph g;
  std::vector<double> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  Tensor I = g.constant(Shape::mat(3, 3), eye);
  Tensor v = g.constant({2.0, -3.0, 0.5});
  Tensor out = matmul(I, v);
  CHECK(out.shape() == Shape::vec(3));
  CHECK(out.value()[0] == 2.0);
  CHECK(out.value()[1] == -3.0);
  CHECK(out.value()[2] == 0.5);

  std::vector<double> a = {1, 2, 3, 4};
  std::vector<double> b = {1, 1};
  Tensor A = g.constant(Shape::mat(2, 2), a);
  Tensor B = g.constant(Shape::mat(2, 1), b);
  Tensor C = g.matmul(A, B);
  CHECK(C.value()[0] == 3.0);
  CHECK(C.value()[1] == 7.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Graph g;
  Tensor A = g.zeros(Shape::mat(2, 3));
  Tensor v = g.zeros(Shape::vec(2));
  CHECK_THROWS_WITH_AS(g.matmul(A, v), doctest::Contains("[2,3]"), dim_error);
}

TEST_CASE("matmul gradient of sum matches ones * b^T and finite differences") {
  RandomStream rs(42, "test");
  ParameterSet ps;
  Parameter& pa = ps.add("a", Shape::mat(4, 5));
  Parameter& pb = ps.add("b", Shape::mat(5, 2));
  for (auto& v : pa.value) v = rs.uniform(-1, 1);
  for (auto& v : pb.value) v = rs.uniform(-1, 1);

  auto loss_value = [&]() {
    Graph g(false);
    Tensor a = g.param(pa);
    Tensor b = g.param(pb);
    return g.sum(g.matmul(a, b)).item();
  };

  Graph g;
  Tensor a = g.param(pa);
  Tensor b = g.param(pb);
  Tensor loss = g.sum(g.matmul(a, b));
  g.backward(loss);

  // Closed form: d sum(AB) / dA = ones(4,2) * B^T.
  for (int i = 0; i < 4; ++i) {
    for (int k = 0; k < 5; ++k) {
      double expect = 0.0;
      for (int j = 0; j < 2; ++j) expect += pb.value[k * 2 + j];
      CHECK(pa.grad[i * 5 + k] == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  auto rep = test::fd_check(ps, loss_value);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("elementwise basics") {
  Graph g;
  CHECK(g.sigmoid(g.scalar(0.0)).item() == 0.5);
  CHECK(g.tanh(g.scalar(0.0)).item() == 0.0);

  Tensor x = g.constant({1.0, 2.0});
  Tensor y = g.constant({3.0, 5.0});
  Tensor s = g.scalar(2.0);
  CHECK(g.add(x, y).value()[1] == 7.0);
  CHECK(g.sub(y, x).value()[0] == 2.0);
  CHECK(g.mul(x, y).value()[1] == 10.0);
  CHECK(g.mul(s, y).value()[0] == 6.0);   // scalar broadcast
  CHECK(g.add(y, s).value()[1] == 7.0);
  CHECK_THROWS_AS(g.add(x, g.zeros(Shape::vec(3))), dim_error);
}

TEST_CASE("sigmoid derivative matches finite difference at x=1") {
  ParameterSet ps;
  Parameter& px = ps.add("x", Shape::vec(1));
  px.value[0] = 1.0;

  Graph g;
  Tensor loss = g.sigmoid(g.param(px));
  g.backward(g.sum(loss));

  const double h = 1e-6;
  auto f = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  double numeric = (f(1.0 + h) - f(1.0 - h)) / (2 * h);
  CHECK(std::abs(px.grad[0] - numeric) < 1e-7);
}

TEST_CASE("affine_combine gates between inputs") {
  ParameterSet ps;
  Parameter& pz = ps.add("z", Shape::vec(3));
  Parameter& pa = ps.add("a", Shape::vec(3));
  Parameter& pb = ps.add("b", Shape::vec(3));
  RandomStream rs(7, "affine");
  for (auto* p : {&pz, &pa, &pb})
    for (auto& v : p->value) v = rs.uniform(0.1, 0.9);

  auto loss_value = [&]() {
    Graph g(false);
    return g.sum(g.affine_combine(g.param(pz), g.param(pa), g.param(pb))).item();
  };

  Graph g;
  Tensor out = g.affine_combine(g.param(pz), g.param(pa), g.param(pb));
  for (int i = 0; i < 3; ++i) {
    double expect = pz.value[i] * pa.value[i] + (1 - pz.value[i]) * pb.value[i];
    CHECK(out.value()[i] == doctest::Approx(expect));
  }
  g.backward(g.sum(out));
  CHECK(test::fd_check(ps, loss_value).max_rel_err < 1e-7);
}

TEST_CASE("concat: single part, values, and gradient linearity") {
  Graph g;
  Tensor a = g.constant({1.0, 2.0, 3.0});
  Tensor single = g.concat(std::initializer_list<Tensor>{a}, 0);
  CHECK(single.shape() == Shape::vec(3));
  CHECK(single.value()[2] == 3.0);

  Tensor ones = g.constant({1.0, 1.0});
  Tensor zeros = g.zeros(Shape::vec(3));
  Tensor c = g.concat({ones, zeros}, 0);
  std::vector<double> expect = {1, 1, 0, 0, 0};
  for (int i = 0; i < 5; ++i) CHECK(c.value()[i] == expect[i]);

  ParameterSet ps;
  Parameter& pa = ps.add("a", Shape::vec(2));
  Parameter& pb = ps.add("b", Shape::vec(3));
  pa.value = {0.5, -1.0};
  pb.value = {2.0, 0.0, 1.0};
  Graph g2;
  Tensor loss = g2.sum(g2.concat({g2.param(pa), g2.param(pb)}, 0));
  g2.backward(loss);
  for (double v : pa.grad) CHECK(v == 1.0);
  for (double v : pb.grad) CHECK(v == 1.0);

  CHECK_THROWS_AS(g2.concat({g2.zeros(Shape::mat(2, 2)), g2.zeros(Shape::mat(2, 3))}, 0),
                  dim_error);
}

TEST_CASE("concat axis 1 stacks vectors as columns") {
  Graph g;
  Tensor a = g.constant({1.0, 2.0});
  Tensor b = g.constant({3.0, 4.0});
  Tensor m = g.concat({a, b}, 1);
  CHECK(m.shape() == Shape::mat(2, 2));
  CHECK(m.value()[0] == 1.0);  // row 0: [1, 3]
  CHECK(m.value()[1] == 3.0);
  CHECK(m.value()[2] == 2.0);
  CHECK(m.value()[3] == 4.0);
}

TEST_CASE("softmax: symmetry, stability, jacobian vs finite differences") {
  Graph g;
  Tensor u = g.softmax(g.constant({3.7, 3.7, 3.7}));
  for (int i = 0; i < 3; ++i) CHECK(u.value()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  double total = u.value()[0] + u.value()[1] + u.value()[2];
  CHECK(std::abs(total - 1.0) < 1e-12);

  Tensor v = g.softmax(g.constant({1000.0, 0.0}));
  CHECK(v.value()[0] == doctest::Approx(1.0));
  CHECK(v.value()[1] == doctest::Approx(0.0));
  CHECK(std::isfinite(v.value()[0]));

  CHECK_THROWS_AS(g.softmax(g.constant({std::nan(""), 0.0})), numeric_error);

  // Full Jacobian via repeated backward with basis weightings.
  RandomStream rs(3, "softmax");
  ParameterSet ps;
  Parameter& px = ps.add("x", Shape::vec(5));
  for (auto& x : px.value) x = rs.uniform(-2, 2);
  for (int row = 0; row < 5; ++row) {
    ps.zero_grad();
    Graph gr;
    Tensor y = gr.softmax(gr.param(px));
    std::vector<double> pick(5, 0.0);
    pick[row] = 1.0;
    gr.backward(gr.sum(gr.mul(y, gr.constant(Shape::vec(5), pick))));
    auto loss_value = [&]() {
      Graph gv(false);
      Tensor yy = gv.softmax(gv.param(px));
      return yy.value()[row];
    };
    CHECK(test::fd_check(ps, loss_value).max_rel_err < 1e-5);
  }
}

TEST_CASE("backward basics: sum and elementwise square") {
  ParameterSet ps;
  Parameter& w = ps.add("w", Shape::vec(4));
  w.value = {1.0, -2.0, 0.5, 3.0};

  Graph g;
  g.backward(g.sum(g.param(w)));
  for (double v : w.grad) CHECK(v == 1.0);

  ps.zero_grad();
  Graph g2;
  Tensor t = g2.param(w);
  g2.backward(g2.sum(g2.mul(t, t)));
  for (int i = 0; i < 4; ++i) CHECK(w.grad[i] == doctest::Approx(2 * w.value[i]));
}

TEST_CASE("backward requires scalar loss") {
  ParameterSet ps;
  Parameter& w = ps.add("w", Shape::vec(2));
  Graph g;
  Tensor t = g.param(w);
  CHECK_THROWS_AS(g.backward(t), contract_error);
}

TEST_CASE("unreachable parameters keep zero gradient") {
  ParameterSet ps;
  Parameter& used = ps.add("used", Shape::vec(2));
  Parameter& unused = ps.add("unused", Shape::vec(2));
  used.value = {1.0, 2.0};
  unused.value = {5.0, 5.0};
  Graph g;
  Tensor a = g.param(used);
  g.param(unused);  // referenced by the graph but not by the loss
  g.backward(g.sum(a));
  CHECK(used.grad[0] == 1.0);
  CHECK(unused.grad[0] == 0.0);
  CHECK(unused.grad[1] == 0.0);
}

TEST_CASE("graph replay: repeated forward+backward yields identical gradients") {
  RandomStream rs(11, "replay");
  ParameterSet ps;
  Parameter& w = ps.add("w", Shape::mat(3, 3));
  Parameter& x = ps.add("x", Shape::vec(3));
  for (auto& v : w.value) v = rs.uniform(-1, 1);
  for (auto& v : x.value) v = rs.uniform(-1, 1);

  auto run = [&]() {
    ps.zero_grad();
    Graph g;
    Tensor h = g.tanh(g.matmul(g.param(w), g.param(x)));
    g.backward(g.sum(g.mul(h, h)));
    std::vector<double> out = w.grad;
    out.insert(out.end(), x.grad.begin(), x.grad.end());
    return out;
  };
  auto g1 = run();
  auto g2 = run();
  REQUIRE(g1.size() == g2.size());
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);  // bit-identical
}

TEST_CASE("parameter reused twice accumulates both paths") {
  ParameterSet ps;
  Parameter& w = ps.add("w", Shape::vec(2));
  w.value = {3.0, 4.0};
  Graph g;
  Tensor a = g.param(w);
  Tensor b = g.param(w);  // memoized: same node
  CHECK(a.id() == b.id());
  g.backward(g.sum(g.mul(a, b)));  // d/dw sum(w*w) = 2w
  CHECK(w.grad[0] == doctest::Approx(6.0));
  CHECK(w.grad[1] == doctest::Approx(8.0));
}

TEST_CASE("set_col replaces exactly one column and routes gradients") {
  ParameterSet ps;
  Parameter& pm = ps.add("m", Shape::mat(2, 3));
  Parameter& pv = ps.add("v", Shape::vec(2));
  pm.value = {1, 2, 3, 4, 5, 6};
  pv.value = {9, 9};

  Graph g;
  Tensor out = g.set_col(g.param(pm), 1, g.param(pv));
  CHECK(out.value()[0] == 1.0);
  CHECK(out.value()[1] == 9.0);
  CHECK(out.value()[2] == 3.0);
  CHECK(out.value()[4] == 9.0);

  // Loss touching only the written column: memory gradient is zero there.
  std::vector<double> mask = {0, 1, 0, 0, 1, 0};
  g.backward(g.sum(g.mul(out, g.constant(Shape::mat(2, 3), mask))));
  CHECK(pm.grad[1] == 0.0);
  CHECK(pm.grad[4] == 0.0);
  CHECK(pv.grad[0] == 1.0);
  CHECK(pv.grad[1] == 1.0);

  CHECK_THROWS_AS(g.set_col(g.param(pm), 3, g.param(pv)), contract_error);
}

TEST_CASE("gather_cols selects and scatters back") {
  ParameterSet ps;
  Parameter& pm = ps.add("m", Shape::mat(2, 4));
  pm.value = {0, 1, 2, 3, 10, 11, 12, 13};
  Graph g;
  std::vector<uint32_t> idx = {2, 0, 2};
  Tensor out = g.gather_cols(g.param(pm), idx);
  CHECK(out.shape() == Shape::mat(2, 3));
  CHECK(out.value()[0] == 2.0);
  CHECK(out.value()[1] == 0.0);
  CHECK(out.value()[2] == 2.0);
  g.backward(g.sum(out));
  CHECK(pm.grad[0] == 1.0);   // column 0 picked once
  CHECK(pm.grad[2] == 2.0);   // column 2 picked twice
  CHECK(pm.grad[1] == 0.0);
}

TEST_CASE("add_cols broadcasts bias and sums gradient per row") {
  ParameterSet ps;
  Parameter& pm = ps.add("m", Shape::mat(2, 3));
  Parameter& pb = ps.add("b", Shape::vec(2));
  pm.value = {0, 0, 0, 0, 0, 0};
  pb.value = {1.0, -1.0};
  Graph g;
  Tensor out = g.add_cols(g.param(pm), g.param(pb));
  CHECK(out.value()[0] == 1.0);
  CHECK(out.value()[3] == -1.0);
  g.backward(g.sum(out));
  CHECK(pb.grad[0] == 3.0);
  CHECK(pb.grad[1] == 3.0);
}

TEST_CASE("reshape aliases values and passes gradients through") {
  ParameterSet ps;
  Parameter& pm = ps.add("m", Shape::mat(2, 2));
  pm.value = {1, 2, 3, 4};
  Graph g;
  Tensor v = g.reshape(g.param(pm), Shape::vec(4));
  CHECK(v.shape() == Shape::vec(4));
  CHECK(v.value()[3] == 4.0);
  g.backward(g.sum(g.mul(v, v)));
  for (int i = 0; i < 4; ++i) CHECK(pm.grad[i] == doctest::Approx(2 * pm.value[i]));
}

TEST_CASE("composed graph gradient matches finite differences") {
  RandomStream rs(99, "composed");
  ParameterSet ps;
  Parameter& w1 = ps.add("w1", Shape::mat(4, 3));
  Parameter& b1 = ps.add("b1", Shape::vec(4));
  Parameter& w2 = ps.add("w2", Shape::mat(1, 4));
  for (auto* p : {&w1, &b1, &w2})
    for (auto& v : p->value) v = rs.uniform(-0.8, 0.8);

  auto forward = [&](Graph& g) {
    Tensor x = g.constant({0.3, -0.2, 0.9});
    Tensor h = g.tanh(g.add(g.matmul(g.param(w1), x), g.param(b1)));
    Tensor z = g.sigmoid(g.matmul(g.param(w2), h));
    Tensor sm = g.softmax(g.concat({z, g.sum(g.mul(h, h))}, 0));
    return g.sum(g.mul(sm, sm));
  };

  Graph g;
  g.backward(forward(g));
  auto loss_value = [&]() {
    Graph gv(false);
    return forward(gv).item();
  };
  auto rep = test::fd_check(ps, loss_value);
  INFO("worst: ", rep.worst_param, "[", rep.worst_index, "]");
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("graph clear recycles without stale state") {
  ParameterSet ps;
  Parameter& w = ps.add("w", Shape::vec(3));
  w.value = {1, 2, 3};
  Graph g;
  g.backward(g.sum(g.param(w)));
  auto first = w.grad;
  g.clear();
  CHECK(g.num_nodes() == 0);
  ps.zero_grad();
  g.backward(g.sum(g.param(w)));
  for (int i = 0; i < 3; ++i) CHECK(w.grad[i] == first[i]);
}

TEST_CASE("rng substreams are deterministic and label-separated") {
  RandomStream a(123, "data");
  RandomStream b(123, "data");
  RandomStream c(123, "init");
  double va = a.uniform(), vb = b.uniform(), vc = c.uniform();
  CHECK(va == vb);
  CHECK(va != vc);
  CHECK(va >= 0.0);
  CHECK(va < 1.0);

  RandomStream d(5, "shuffle");
  std::vector<int> v1 = {1, 2, 3, 4, 5, 6, 7};
  std::vector<int> v2 = v1;
  RandomStream e(5, "shuffle");
  d.shuffle(v1);
  e.shuffle(v2);
  CHECK(v1 == v2);
}
