#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "falb/autograd.hpp"
#include "falb/blas.hpp"
#include "falb/fdcheck.hpp"
#include "falb/ops.hpp"
#include "falb/rng.hpp"
#include "falb/tensor.hpp"
#include "support/stats.hpp"
#include "support/testutil.hpp"

using namespace falb;
using namespace falb::testutil;

TEST_CASE("rng: identical stream is identical, distinct keys differ") {
  RngStream a(42, "layer3/Wq"), b(42, "layer3/Wq"), c(42, "layer3/Wk");
  bool all_equal = true, any_equal_c = false;
  for (int i = 0; i < 1000; ++i) {
    uint64_t x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
    all_equal &= (x == y);
    any_equal_c |= (x == z);
  }
  CHECK(all_equal);
  CHECK_FALSE(any_equal_c);
}

TEST_CASE("rng: uniform draws pass a coarse chi-square") {
  RngStream rng(7, "uniformity");
  std::vector<int64_t> counts(128, 0);
  const int64_t total = 1 << 17;
  for (int64_t i = 0; i < total; ++i) counts[rng.next_below(128)]++;
  CHECK(chi_square_uniform(counts, total) < chi2_crit_p01(127));
}

TEST_CASE("gaussian_init: zero std gives zeros; zero extent rejected") {
  RngStream rng(1, "z");
  auto t = gaussian_init<double>({3, 4}, 0.0, rng);
  for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0);
  CHECK_THROWS(gaussian_init<double>({0, 4}, 1.0, rng));
  CHECK_THROWS(gaussian_init<double>({}, 1.0, rng));
}

TEST_CASE("gaussian_init: moments over 10^6 draws") {
  RngStream rng(123, "moments");
  auto t = gaussian_init<double>({1000, 1000}, 1.0, rng);
  double mean = 0;
  for (int64_t i = 0; i < t.numel(); ++i) mean += t[i];
  mean /= static_cast<double>(t.numel());
  double var = 0;
  for (int64_t i = 0; i < t.numel(); ++i) var += (t[i] - mean) * (t[i] - mean);
  var /= static_cast<double>(t.numel() - 1);
  CHECK(std::abs(mean) < 0.004);
  CHECK(std::abs(std::sqrt(var) - 1.0) < 0.01);
}

TEST_CASE("gaussian_init: 1/sqrt(n) weight scaling moments") {
  // W is (n_h x n) with entry std 1/sqrt(n): mean squared row norm is 1,
  // mean squared column norm is n_h/n. Monte-Carlo against those moments.
  const int nh = 64, n = 256;
  RngStream rng(5, "wq");
  auto w = gaussian_init<double>({nh, n}, 1.0 / std::sqrt(static_cast<double>(n)), rng);
  double row_sq = 0, col_sq = 0;
  for (int i = 0; i < nh; ++i)
    for (int j = 0; j < n; ++j) row_sq += w(i, j) * w(i, j);
  col_sq = row_sq;
  row_sq /= nh;  // average over rows
  col_sq /= n;   // average over columns
  CHECK(row_sq == doctest::Approx(1.0).epsilon(0.05));
  CHECK(col_sq == doctest::Approx(static_cast<double>(nh) / n).epsilon(0.05));
}

TEST_CASE("determinism: same seed and key reproduce tensors bitwise") {
  auto a = random_tensor<float>({64, 33}, 99, "det");
  auto b = random_tensor<float>({64, 33}, 99, "det");
  CHECK(bitwise_equal(a, b));
}

TEST_CASE("blas path agrees with naive gemm") {
  auto a = random_tensor<double>({17, 23}, 3, "a");
  auto b = random_tensor<double>({23, 9}, 3, "b");
  Tensor<double> c1({17, 9}), c2({17, 9});
  blas::gemm(false, false, 17, 9, 23, 1.0, a.data(), 23, b.data(), 9, 0.0, c1.data(), 9);
  blas::naive_gemm(false, false, int64_t{17}, int64_t{9}, int64_t{23}, 1.0, a.data(),
                   int64_t{23}, b.data(), int64_t{9}, 0.0, c2.data(), int64_t{9});
  CHECK(max_abs_diff(c1, c2) < 1e-12);

  // transposed operands
  Tensor<double> d1({23, 9}), d2({23, 9});
  auto g = random_tensor<double>({17, 9}, 4, "g");
  blas::gemm(true, false, 23, 9, 17, 1.0, a.data(), 23, g.data(), 9, 0.0, d1.data(), 9);
  blas::naive_gemm(true, false, int64_t{23}, int64_t{9}, int64_t{17}, 1.0, a.data(), int64_t{23},
                   g.data(), int64_t{9}, 0.0, d2.data(), int64_t{9});
  CHECK(max_abs_diff(d1, d2) < 1e-12);
}

TEST_CASE("matmul: identity and hand arithmetic") {
  Tape<double> tape;
  auto x = random_tensor<double>({3, 5}, 11, "x");
  Var xv = tape.leaf(x);
  Var iv = tape.leaf(Tensor<double>::identity(3));
  Var prod = tape.matmul(iv, xv);
  CHECK(max_abs_diff(tape.value(prod), x) == 0.0);

  Var a = tape.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  Var b = tape.leaf(Tensor<double>({2, 1}, {1, 1}));
  Var c = tape.matmul(a, b);
  CHECK(tape.value(c)(0, 0) == 3.0);
  CHECK(tape.value(c)(1, 0) == 7.0);

  Var bad = tape.leaf(Tensor<double>({3, 1}, {1, 1, 1}));
  CHECK_THROWS(tape.matmul(a, bad));
}

TEST_CASE("matmul: gradients match finite differences") {
  auto a = random_tensor<double>({5, 7}, 21, "a");
  auto b = random_tensor<double>({7, 3}, 21, "b");
  // gradient w.r.t. a with b fixed
  double err_a = finite_difference_check<double>(
      [&](Tape<double>& t, Var x) {
        Var bv = t.leaf(b);
        return t.sum(t.matmul(x, bv));
      },
      a, 1e-5);
  CHECK(err_a < 1e-4);
  double err_b = finite_difference_check<double>(
      [&](Tape<double>& t, Var x) {
        Var av = t.leaf(a);
        return t.sum(t.matmul(av, x));
      },
      b, 1e-5);
  CHECK(err_b < 1e-4);
}

TEST_CASE("causal_softmax: single token, uniform case, spike") {
  Tensor<double> one({1, 1}, {5.0});
  auto s1 = causal_softmax(one);
  CHECK(s1(0, 0) == 1.0);

  Tensor<double> z({3, 3});
  auto s3 = causal_softmax(z);
  CHECK(s3(0, 0) == 1.0);
  CHECK(s3(0, 1) == doctest::Approx(0.5));
  CHECK(s3(1, 1) == doctest::Approx(0.5));
  CHECK(s3(0, 2) == doctest::Approx(1.0 / 3));
  CHECK(s3(1, 0) == 0.0);  // masked exactly
  CHECK(s3(2, 1) == 0.0);

  Tensor<double> spike({3, 3});
  spike(1, 2) = 20.0;
  auto sp = causal_softmax(spike);
  CHECK(sp(1, 2) > 0.999);
}

TEST_CASE("causal_softmax: columns sum to 1 over support, mask exact zero") {
  for (int inst = 0; inst < 10; ++inst) {
    auto s = random_tensor<double>({8, 8}, 100 + inst, "scores", 3.0);
    auto a = causal_softmax(s);
    for (int64_t col = 0; col < 8; ++col) {
      double sum = 0;
      for (int64_t row = 0; row < 8; ++row) {
        if (row > col) CHECK(a(row, col) == 0.0);
        sum += a(row, col);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("rms_norm: constant, zero, and random columns") {
  Tape<double> tape;
  const int n = 16;
  Tensor<double> h({n, 3});
  for (int i = 0; i < n; ++i) {
    h(i, 0) = 2.5;   // constant column
    h(i, 1) = 0.0;   // zero column
    h(i, 2) = 0.1 * (i - 7);
  }
  Var gain = tape.leaf(Tensor<double>::full({n}, 1.0));
  Var out = tape.rms_norm(tape.leaf(h), gain);
  const auto& y = tape.value(out);
  for (int i = 0; i < n; ++i) {
    CHECK(y(i, 0) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(y(i, 1) == 0.0);
  }
  double ms = 0;
  for (int i = 0; i < n; ++i) ms += y(i, 2) * y(i, 2);
  CHECK(ms / n == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("rotary: position zero is identity, isometry, relative property") {
  const int heads = 2, dh = 8, rows = heads * dh;
  auto layout1 = SeqLayout::uniform(1, 1);
  auto x0 = random_tensor<double>({rows, 1}, 31, "x0");
  {
    Tape<double> t;
    Var y = t.rotary(t.leaf(x0), heads, layout1);
    CHECK(max_abs_diff(t.value(y), x0) < 1e-12);
  }

  auto layout = SeqLayout::uniform(1, 6);
  auto x = random_tensor<double>({rows, 6}, 32, "x");
  {
    Tape<double> t;
    Var y = t.rotary(t.leaf(x), heads, layout);
    const auto& yv = t.value(y);
    for (int c = 0; c < 6; ++c) {
      double nx = 0, ny = 0;
      for (int r = 0; r < rows; ++r) {
        nx += x(r, c) * x(r, c);
        ny += yv(r, c) * yv(r, c);
      }
      CHECK(std::sqrt(ny) == doctest::Approx(std::sqrt(nx)).epsilon(1e-6));
    }
  }

  // dot(rot(q, a), rot(k, b)) depends only on b - a: shift both by s.
  auto q = random_tensor<double>({rows, 1}, 33, "q");
  auto k = random_tensor<double>({rows, 1}, 34, "k");
  auto rot_at = [&](const Tensor<double>& v, int pos) {
    // place the column at `pos` inside a longer sequence, read it back
    Tape<double> t;
    Tensor<double> padded({rows, pos + 1});
    for (int r = 0; r < rows; ++r) padded(r, pos) = v(r, 0);
    Var y = t.rotary(t.leaf(padded), heads, SeqLayout::uniform(1, pos + 1));
    Tensor<double> col({rows, 1});
    for (int r = 0; r < rows; ++r) col(r, 0) = t.value(y)(r, pos);
    return col;
  };
  auto dot = [&](const Tensor<double>& a, const Tensor<double>& b) {
    double d = 0;
    for (int r = 0; r < rows; ++r) d += a(r, 0) * b(r, 0);
    return d;
  };
  double d1 = dot(rot_at(q, 2), rot_at(k, 5));
  double d2 = dot(rot_at(q, 2 + 3), rot_at(k, 5 + 3));
  CHECK(d1 == doctest::Approx(d2).epsilon(1e-5));
}

TEST_CASE("backward: sum and quadratic") {
  auto x = random_tensor<double>({4, 5}, 41, "x");
  {
    Tape<double> t;
    Var xv = t.leaf(x, true);
    t.backward(t.sum(xv));
    const auto& g = t.grad(xv);
    for (int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 1.0);
  }
  {
    Tape<double> t;
    Var xv = t.leaf(x, true);
    Var loss = t.scale(t.sum(t.hadamard(xv, xv)), 0.5);
    t.backward(loss);
    CHECK(max_abs_diff(t.grad(xv), x) < 1e-12);
  }
}

TEST_CASE("backward: calling twice errors") {
  Tape<double> t;
  Var x = t.leaf(Tensor<double>({2}, {1, 2}), true);
  Var l = t.sum(x);
  t.backward(l);
  CHECK_THROWS(t.backward(l));
}

TEST_CASE("finite_difference_check: sum has zero error") {
  auto x = random_tensor<double>({6, 6}, 51, "x");
  double err = finite_difference_check<double>(
      [](Tape<double>& t, Var v) { return t.sum(v); }, x, 1e-4);
  CHECK(err < 1e-10);
}

TEST_CASE("finite_difference_check: softmax cross-entropy < 1e-6") {
  auto logits = random_tensor<double>({11, 7}, 52, "logits", 2.0);
  std::vector<int32_t> targets = {3, 0, 10, 5, 5, 1, 7};
  std::vector<uint8_t> mask = {1, 1, 0, 1, 1, 1, 1};
  double err = finite_difference_check<double>(
      [&](Tape<double>& t, Var v) { return t.cross_entropy(v, targets, mask); }, logits, 1e-4);
  CHECK(err < 1e-6);
}

TEST_CASE("gradient suite: every op passes fd on 10 random instances") {
  for (int inst = 0; inst < 10; ++inst) {
    uint64_t seed = 500 + inst;
    auto x = random_tensor<double>({12, 9}, seed, "x");

    double err_silu = finite_difference_check<double>(
        [](Tape<double>& t, Var v) { return t.sum(t.silu(v)); }, x, 1e-5);
    CHECK(err_silu < 1e-5);

    auto gain = random_tensor<double>({12}, seed, "gain");
    double err_norm = finite_difference_check<double>(
        [&](Tape<double>& t, Var v) { return t.sum(t.rms_norm(v, t.leaf(gain))); }, x, 1e-5);
    CHECK(err_norm < 1e-5);

    auto layout = SeqLayout::uniform(1, 9);
    double err_rot = finite_difference_check<double>(
        [&](Tape<double>& t, Var v) { return t.sum(t.rotary(v, 2, layout)); }, x, 1e-5);
    CHECK(err_rot < 1e-5);

    // attention wrt each input
    const int heads = 3, dh = 4, len = 5, batch = 2;
    auto layout2 = SeqLayout::ragged({len, len - 2});
    auto q = random_tensor<double>({heads * dh, layout2.total}, seed, "q");
    auto k = random_tensor<double>({heads * dh, layout2.total}, seed, "k");
    auto v = random_tensor<double>({heads * dh, layout2.total}, seed, "v");
    (void)batch;
    auto attn_loss = [&](Tape<double>& t, Var qq, Var kk, Var vv) {
      return t.sum(t.causal_attention(qq, kk, vv, heads, layout2, 0.5));
    };
    double eq = finite_difference_check<double>(
        [&](Tape<double>& t, Var u) { return attn_loss(t, u, t.leaf(k), t.leaf(v)); }, q, 1e-5);
    double ek = finite_difference_check<double>(
        [&](Tape<double>& t, Var u) { return attn_loss(t, t.leaf(q), u, t.leaf(v)); }, k, 1e-5);
    double ev = finite_difference_check<double>(
        [&](Tape<double>& t, Var u) { return attn_loss(t, t.leaf(q), t.leaf(k), u); }, v, 1e-5);
    CHECK(eq < 1e-5);
    CHECK(ek < 1e-5);
    CHECK(ev < 1e-5);
  }
}

TEST_CASE("embed/select_last/add_positional gradients") {
  auto layout = SeqLayout::ragged({3, 5});
  std::vector<int32_t> tokens = {0, 2, 1, 3, 3, 0, 2, 1};
  auto emb = random_tensor<double>({6, 4}, 61, "emb");
  double err = finite_difference_check<double>(
      [&](Tape<double>& t, Var e) { return t.sum(t.select_last(t.embed(e, tokens), layout)); },
      emb, 1e-5);
  CHECK(err < 1e-6);

  auto pos = random_tensor<double>({6, 5}, 62, "pos");
  auto h = random_tensor<double>({6, 8}, 63, "h");
  double errp = finite_difference_check<double>(
      [&](Tape<double>& t, Var p) { return t.sum(t.add_positional(t.leaf(h), p, layout)); }, pos,
      1e-5);
  CHECK(errp < 1e-6);
}

TEST_CASE("embed: out-of-range token errors") {
  Tape<double> t;
  Var emb = t.leaf(random_tensor<double>({4, 3}, 71, "emb"));
  CHECK_THROWS(t.embed(emb, {0, 3}));
  CHECK_THROWS(t.embed(emb, {-1}));
}

TEST_CASE("attention: token 1 output invariant to later tokens (causality)") {
  const int heads = 2, dh = 4, len = 6;
  auto layout = SeqLayout::uniform(1, len);
  auto q = random_tensor<double>({heads * dh, len}, 81, "q");
  auto k = random_tensor<double>({heads * dh, len}, 82, "k");
  auto v = random_tensor<double>({heads * dh, len}, 83, "v");
  Tape<double> t1;
  Var o1 = t1.causal_attention(t1.leaf(q), t1.leaf(k), t1.leaf(v), heads, layout, 0.5);
  // perturb suffix columns of all inputs
  auto q2 = q, k2 = k, v2 = v;
  for (int r = 0; r < heads * dh; ++r)
    for (int c = 1; c < len; ++c) {
      q2(r, c) += 1.7;
      k2(r, c) -= 0.9;
      v2(r, c) *= -2.0;
    }
  Tape<double> t2;
  Var o2 = t2.causal_attention(t2.leaf(q2), t2.leaf(k2), t2.leaf(v2), heads, layout, 0.5);
  for (int r = 0; r < heads * dh; ++r)
    CHECK(t1.value(o1)(r, 0) == t2.value(o2)(r, 0));  // bitwise
}

TEST_CASE("nan detection raises when checks are on") {
  Tape<double> t;
  t.set_check_finite(true);
  Tensor<double> bad({2, 2}, {1.0, std::numeric_limits<double>::infinity(), 0.0, 2.0});
  Var a = t.leaf(random_tensor<double>({2, 2}, 91, "a"));
  CHECK_THROWS(t.add(a, t.leaf(bad)));
}
