#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dacsm/autodiff.hpp"
#include "dacsm/linalg.hpp"
#include "dacsm/reference.hpp"
#include "dacsm/rng.hpp"
#include "dacsm/tensor.hpp"
#include "dacsm/verify.hpp"

using namespace dacsm;

namespace {

Tensor randn(std::vector<int> shape, Rng& rng, double s = 1.0) {
  Tensor t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, s);
  return t;
}

std::vector<double> random_distribution(int n, Rng& rng) {
  std::vector<double> p(static_cast<size_t>(n));
  double mass = 0.0;
  for (double& v : p) {
    v = rng.uniform(0.05, 1.0);
    mass += v;
  }
  for (double& v : p) v /= mass;
  return p;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3});
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  for (int i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);

  t.at(1, 2) = 5.0;
  CHECK(t[5] == 5.0);

  const Tensor r = t.reshaped({3, 2});
  CHECK(r.rank() == 2);
  CHECK(r.at(2, 1) == 5.0);
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK(Tensor::scalar(3.5).size() == 1);
  CHECK(Tensor::scalar(3.5)[0] == 3.5);
  CHECK(Tensor::full({2, 2}, 7.0)[3] == 7.0);
}

TEST_CASE("matmul identity and selector rows") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor r = matmul(eye, a);
  for (int i = 0; i < 4; ++i) CHECK(r[i] == a[i]);

  Tensor sel({1, 2}, {1, 0});
  Tensor col({2, 1}, {2, 5});
  const Tensor picked = matmul(sel, col);
  CHECK(picked.rows() == 1);
  CHECK(picked.cols() == 1);
  CHECK(picked[0] == 2.0);

  CHECK_THROWS_AS(matmul(a, col.reshaped({1, 2})), DimensionError);
}

TEST_CASE("matmul agrees with the serial triple-loop reference") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + rng.uniform_int(5), k = 1 + rng.uniform_int(5), n = 1 + rng.uniform_int(5);
    const Tensor a = randn({m, k}, rng), b = randn({k, n}, rng);
    const Tensor fast = matmul(a, b);
    const Tensor slow = ref::matmul(a, b);
    REQUIRE(fast.same_shape(slow));
    for (int i = 0; i < fast.size(); ++i) CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-13));
  }
}

TEST_CASE("transpose variants match explicit transposition") {
  Rng rng(12);
  const Tensor a = randn({3, 4}, rng), b = randn({5, 4}, rng), c = randn({3, 5}, rng);
  const Tensor nt = matmul_nt(a, b);          // a * b^T
  const Tensor tn = matmul_tn(c, a);          // c^T * a, c is [3 x 5]
  const Tensor nt_ref = ref::matmul(a, transpose(b));
  const Tensor tn_ref = ref::matmul(transpose(c), a);
  REQUIRE(nt.same_shape(nt_ref));
  REQUIRE(tn.same_shape(tn_ref));
  for (int i = 0; i < nt.size(); ++i) CHECK(nt[i] == doctest::Approx(nt_ref[i]).epsilon(1e-13));
  for (int i = 0; i < tn.size(); ++i) CHECK(tn[i] == doctest::Approx(tn_ref[i]).epsilon(1e-13));

  const Tensor v = randn({4}, rng), u = randn({3}, rng);
  const Tensor mv = matvec(a, v);
  const Tensor vm = vecmat(u, a);
  for (int i = 0; i < 3; ++i) {
    double s = 0.0;
    for (int j = 0; j < 4; ++j) s += a.at(i, j) * v[j];
    CHECK(mv[i] == doctest::Approx(s).epsilon(1e-13));
  }
  for (int j = 0; j < 4; ++j) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) s += u[i] * a.at(i, j);
    CHECK(vm[j] == doctest::Approx(s).epsilon(1e-13));
  }
  const Tensor op = outer(u, v);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) CHECK(op.at(i, j) == u[i] * v[j]);
}

TEST_CASE("softmax rows: uniform logits, dominant logit, fixed oracle") {
  Tensor uniform({1, 3}, {0, 0, 0});
  const Tensor u = softmax_rows(uniform);
  for (int i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Tensor dominant({1, 2}, {10, 0});
  const Tensor d = softmax_rows(dominant, 0.01);
  CHECK(std::fabs(d[0] - 1.0) < 1e-8);
  CHECK(std::fabs(d[1]) < 1e-8);

  // softmax([1, 2, 3]) evaluated independently at extended precision.
  Tensor ramp({1, 3}, {1, 2, 3});
  const Tensor r = softmax_rows(ramp);
  CHECK(r[0] == doctest::Approx(0.09003057317038046).epsilon(1e-14));
  CHECK(r[1] == doctest::Approx(0.24472847105479764).epsilon(1e-14));
  CHECK(r[2] == doctest::Approx(0.66524095577482190).epsilon(1e-14));

  CHECK_THROWS_AS(softmax_rows(ramp, 0.0), ParameterError);
  CHECK_THROWS_AS(softmax_rows(ramp, -1.0), ParameterError);
}

TEST_CASE("softmax rows sum to one and ignore per-row shifts") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 1 + rng.uniform_int(4), n = 2 + rng.uniform_int(6);
    const Tensor x = randn({m, n}, rng, 3.0);
    const double tau = rng.uniform(0.2, 3.0);
    const Tensor s = softmax_rows(x, tau);
    Tensor shifted = x;
    for (int i = 0; i < m; ++i) {
      const double c = rng.uniform(-50.0, 50.0);
      for (int j = 0; j < n; ++j) shifted.at(i, j) += c;
    }
    const Tensor s2 = softmax_rows(shifted, tau);
    for (int i = 0; i < m; ++i) {
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        CHECK(s.at(i, j) >= 0.0);
        sum += s.at(i, j);
        CHECK(std::fabs(s.at(i, j) - s2.at(i, j)) < 1e-12);
      }
      CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("channel stats: constants, two-point case, two-pass reference") {
  const ChannelStats flat = channel_stats(Tensor::full({5, 3}, 2.5));
  for (int j = 0; j < 3; ++j) {
    CHECK(flat.mean[static_cast<size_t>(j)] == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(flat.std[static_cast<size_t>(j)] == 0.0);
  }

  Tensor two({2, 1}, {0, 2});
  const ChannelStats ts = channel_stats(two);
  CHECK(ts.mean[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ts.std[0] == doctest::Approx(1.0).epsilon(1e-15));  // population convention

  Rng rng(31);
  const Tensor x = randn({8, 4}, rng);
  const ChannelStats got = channel_stats(x);
  const auto [mean, sd] = ref::channel_stats(x);
  for (int j = 0; j < 4; ++j) {
    CHECK(std::fabs(got.mean[static_cast<size_t>(j)] - mean[static_cast<size_t>(j)]) < 1e-12);
    CHECK(std::fabs(got.std[static_cast<size_t>(j)] - sd[static_cast<size_t>(j)]) < 1e-12);
  }

  CHECK_THROWS_AS(channel_stats(Tensor({1, 3})), DataError);
}

TEST_CASE("smallest singular value on known and constructed matrices") {
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(min_singular_value(eye) == doctest::Approx(1.0).epsilon(1e-12));

  Tensor diag({2, 2}, {2, 0, 0, 0.5});
  CHECK(min_singular_value(diag) == doctest::Approx(0.5).epsilon(1e-10));

  CHECK(min_singular_value(Tensor({3, 2})) == doctest::Approx(0.0));

  // U Sigma V^T with orthogonal U (2-D rotation) and V recovers min(Sigma).
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = rng.uniform(0.0, 6.28), b = rng.uniform(0.0, 6.28);
    const double s1 = rng.uniform(0.5, 3.0), s2 = rng.uniform(0.01, 0.4);
    Tensor u({2, 2}, {std::cos(a), -std::sin(a), std::sin(a), std::cos(a)});
    Tensor vt({2, 2}, {std::cos(b), -std::sin(b), std::sin(b), std::cos(b)});
    Tensor sig({2, 2}, {s1, 0, 0, s2});
    const Tensor m = matmul(matmul(u, sig), vt);
    CHECK(min_singular_value(m) == doctest::Approx(s2).epsilon(1e-8));
  }

  // Gram-matrix eigenvalue oracle on rectangular inputs.
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor m = randn({5, 3}, rng);
    const Tensor gram = matmul_tn(m, m);  // [3 x 3], smaller side
    const std::vector<double> ev = symmetric_eigenvalues(gram);
    const double want = std::sqrt(std::max(0.0, ev.front()));
    CHECK(min_singular_value(m) == doctest::Approx(want).epsilon(1e-8));
  }
}

TEST_CASE("symmetric eigenvalues on a hand-diagonalizable matrix") {
  // [[2, 1], [1, 2]] has eigenvalues 1 and 3.
  Tensor m({2, 2}, {2, 1, 1, 2});
  const std::vector<double> ev = symmetric_eigenvalues(m);
  REQUIRE(ev.size() == 2);
  CHECK(ev[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ev[1] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("kl divergence: zero at equality, closed form, reference agreement") {
  std::vector<double> p = {0.2, 0.3, 0.5};
  CHECK(kl_divergence(p, p) == 0.0);

  CHECK(kl_divergence({1.0, 0.0}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Rng rng(51);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + rng.uniform_int(6);
    const std::vector<double> a = random_distribution(n, rng);
    const std::vector<double> b = random_distribution(n, rng);
    const double got = kl_divergence(a, b);
    CHECK(std::fabs(got - ref::kl_divergence(a, b)) < 1e-12);
    CHECK(got >= 0.0);
    bool equal = true;
    for (int i = 0; i < n; ++i) equal = equal && std::fabs(a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)]) < 1e-15;
    if (!equal) CHECK(got > 1e-12);
  }

  // q must dominate p's support.
  CHECK_THROWS_AS(kl_divergence({0.5, 0.5}, {1.0, 0.0}), NumericError);
  CHECK_THROWS_AS(kl_divergence({0.5, 0.5}, {0.5, 0.5, 0.0}), DimensionError);
}

TEST_CASE("pinsker inequality on random distribution pairs") {
  // KL(p||q) >= ||p-q||_1^2 / 2, i.e. the L1 gap never exceeds sqrt(2 KL).
  Rng rng(61);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + rng.uniform_int(8);
    const std::vector<double> p = random_distribution(n, rng);
    const std::vector<double> q = random_distribution(n, rng);
    double l1 = 0.0;
    for (int i = 0; i < n; ++i) l1 += std::fabs(p[static_cast<size_t>(i)] - q[static_cast<size_t>(i)]);
    CHECK(l1 <= std::sqrt(2.0 * kl_divergence(p, q)) + 1e-12);
  }
}

TEST_CASE("backward: product rule and softmax cross-entropy closed form") {
  Tape tape;
  const NodeId x = tape.leaf(Tensor::scalar(3.0));
  const NodeId y = tape.leaf(Tensor::scalar(5.0));
  // x * y via vecmat on 1-element tensors: [x] * [[y]] -> [x y].
  const NodeId prod = tape.vecmat(tape.reshape(x, {1}), tape.reshape(y, {1, 1}));
  tape.backward(prod);
  CHECK(tape.grad(x)[0] == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(tape.grad(y)[0] == doctest::Approx(3.0).epsilon(1e-15));

  Rng rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = 2 + rng.uniform_int(5);
    Tensor logits({c});
    for (int i = 0; i < c; ++i) logits[i] = rng.normal(0.0, 2.0);
    Tensor hot({c});
    hot[rng.uniform_int(c)] = 1.0;

    Tape t2;
    const NodeId lg = t2.leaf(logits);
    const NodeId ce = t2.cross_entropy(lg, hot);
    t2.backward(ce);
    const Tensor soft = softmax_rows(logits.reshaped({1, c}));
    for (int i = 0; i < c; ++i) CHECK(std::fabs(t2.grad(lg)[i] - (soft[i] - hot[i])) < 1e-10);
  }
}

TEST_CASE("backward accumulates fan-out exactly once per node") {
  // f = <u, u> with u = 2x: df/dx_i = 8 x_i. A double visit of the shared
  // node would inflate the gradient.
  Tape tape;
  Tensor xv({3}, {1.0, -2.0, 0.5});
  const NodeId x = tape.leaf(xv);
  const NodeId u = tape.scale(x, 2.0);
  Tensor wsum({3}, {1, 1, 1});
  const NodeId f = tape.weighted_sum(tape.add(u, u), wsum);  // sum(4x)
  tape.backward(f);
  for (int i = 0; i < 3; ++i) CHECK(tape.grad(x)[i] == doctest::Approx(4.0).epsilon(1e-15));

  CHECK_THROWS_AS(tape.backward(x), ParameterError);  // non-scalar root
}

TEST_CASE("bilinear resize matches the serial reference and preserves constants") {
  Rng rng(81);
  const Tensor img = randn({6, 8, 3}, rng);
  const Tensor up = bilinear_resize(img, 9, 5);
  const Tensor up_ref = ref::bilinear_resize(img, 9, 5);
  REQUIRE(up.same_shape(up_ref));
  for (int i = 0; i < up.size(); ++i) CHECK(std::fabs(up[i] - up_ref[i]) < 1e-12);

  const Tensor flat = bilinear_resize(Tensor::full({4, 4, 2}, 1.25), 7, 3);
  for (int i = 0; i < flat.size(); ++i) CHECK(flat[i] == doctest::Approx(1.25).epsilon(1e-15));

  const Tensor same = bilinear_resize(img, 6, 8);
  for (int i = 0; i < same.size(); ++i) CHECK(same[i] == img[i]);
}

TEST_CASE("gradient verification suite passes every op") {
  for (const PropertyResult& r : verify_suite("gradients")) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
}
