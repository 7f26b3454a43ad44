#include <doctest.h>

#include <cmath>

#include "dyne/nn.hpp"
#include "dyne/rng.hpp"
#include "support/gradcheck.hpp"

using namespace dyne;
using nn::Tensor;

namespace {

// Straight-line re-computation of an MLP forward pass, independent of the
// Tensor/Eigen path.
std::vector<double> mlp_reference_forward(const nn::Mlp<double>& m, const std::vector<double>& x) {
  std::vector<double> h = x;
  for (int l = 0; l < m.n_layers(); ++l) {
    int in = m.w[l].rows(), out = m.w[l].cols();
    std::vector<double> y(out);
    for (int j = 0; j < out; ++j) {
      double acc = m.b[l].v[j];
      for (int i = 0; i < in; ++i) acc += h[i] * m.w[l].v[static_cast<long>(i) * out + j];
      y[j] = acc;
    }
    if (l + 1 < m.n_layers())
      for (double& v : y) v = std::max(0.0, v);
    h = std::move(y);
  }
  if (m.out_op == nn::OutputOp::kTanhScale)
    for (double& v : h) v = m.out_scale * std::tanh(v);
  return h;
}

}  // namespace

TEST_CASE("tensor shape invariant") {
  CHECK_THROWS_AS(Tensor<double>({2, 3}, std::vector<double>(5)), std::invalid_argument);
  Tensor<double> t = Tensor<double>::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
}

TEST_CASE("mlp_apply zero weights give zero output") {
  Rng rng(7);
  nn::Mlp<double> m = nn::Mlp<double>::create(3, {5}, 2, rng);
  for (auto& w : m.w) std::fill(w.v.begin(), w.v.end(), 0.0);
  for (auto& b : m.b) std::fill(b.v.begin(), b.v.end(), 0.0);
  Tensor<double> x({2, 3}, {1, -2, 3, 0.5, 4, -1});
  Tensor<double> y = m.forward(x);
  for (double v : y.v) CHECK(v == 0.0);
}

TEST_CASE("mlp_apply identity single layer") {
  Rng rng(7);
  nn::Mlp<double> m = nn::Mlp<double>::create(3, {}, 3, rng);
  std::fill(m.w[0].v.begin(), m.w[0].v.end(), 0.0);
  for (int i = 0; i < 3; ++i) m.w[0].v[i * 3 + i] = 1.0;
  std::fill(m.b[0].v.begin(), m.b[0].v.end(), 0.0);
  Tensor<double> x({1, 3}, {0.3, -1.7, 2.2});
  Tensor<double> y = m.forward(x);
  for (int i = 0; i < 3; ++i) CHECK(y.v[i] == doctest::Approx(x.v[i]).epsilon(1e-15));
}

TEST_CASE("mlp_apply matches straight-line recomputation") {
  Rng rng(123);
  nn::Mlp<double> m = nn::Mlp<double>::create(4, {7, 5}, 3, rng);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> x(4);
    for (double& v : x) v = rng.uniform(-2, 2);
    Tensor<double> y = m.forward(Tensor<double>({1, 4}, x));
    std::vector<double> ref = mlp_reference_forward(m, x);
    for (int j = 0; j < 3; ++j) CHECK(std::abs(y.v[j] - ref[j]) < 1e-12);
  }
}

TEST_CASE("mlp_apply rejects shape mismatch") {
  Rng rng(1);
  nn::Mlp<double> m = nn::Mlp<double>::create(4, {5}, 2, rng);
  CHECK_THROWS_AS(m.forward(Tensor<double>::zeros({1, 3})), std::invalid_argument);
}

TEST_CASE("backward linear cases") {
  // loss = sum(w * x) -> dloss/dw = x
  Tensor<double> w({1, 4}, {0.1, -0.2, 0.3, 0.4});
  Tensor<double> x({1, 4}, {2, -3, 5, 7});
  {
    nn::Tape<double> tape;
    int wid = tape.param(&w);
    int xid = tape.constant(x);
    int loss = tape.sum_all(tape.mul(wid, xid));
    tape.backward(loss);
    for (int i = 0; i < 4; ++i) CHECK(tape.grad(wid).v[i] == doctest::Approx(x.v[i]));
  }
  // loss = ||w||^2 -> dloss/dw = 2w
  {
    nn::Tape<double> tape;
    int wid = tape.param(&w);
    int loss = tape.sum_all(tape.square(wid));
    tape.backward(loss);
    for (int i = 0; i < 4; ++i) CHECK(tape.grad(wid).v[i] == doctest::Approx(2 * w.v[i]));
  }
}

TEST_CASE("backward rejects non-scalar loss") {
  nn::Tape<double> tape;
  Tensor<double> w({1, 2}, {1.0, 2.0});
  int wid = tape.param(&w);
  int sq = tape.square(wid);
  CHECK_THROWS_AS(tape.backward(sq), std::invalid_argument);
}

TEST_CASE("backward mlp mse matches finite differences") {
  Rng rng(42);
  nn::Mlp<double> m = nn::Mlp<double>::create(3, {8, 8}, 2, rng);
  Tensor<double> x = Tensor<double>::zeros({4, 3});
  for (double& v : x.v) v = rng.uniform(-1, 1);
  Tensor<double> target = Tensor<double>::zeros({4, 2});
  for (double& v : target.v) v = rng.uniform(-1, 1);

  auto eval = [&]() {
    Tensor<double> y = m.forward(x);
    double acc = 0;
    for (long i = 0; i < y.numel(); ++i) acc += (y.v[i] - target.v[i]) * (y.v[i] - target.v[i]);
    return acc / y.rows();
  };

  nn::Tape<double> tape;
  std::vector<int> pids;
  int out = m.build(tape, tape.constant(x), &pids);
  int loss = tape.scale(tape.sum_all(tape.square(tape.sub(out, tape.constant(target)))), 1.0 / 4);
  tape.backward(loss);

  std::vector<Tensor<double>> grads;
  for (int id : pids) grads.push_back(tape.grad(id));
  double err = test::max_grad_rel_error(m.params(), grads, eval);
  CHECK(err < 1e-4);
}

TEST_CASE("backward composite ops match finite differences") {
  // exercises tanh, clamp, concat, slice, exp, affine, mul in one graph
  Rng rng(5);
  Tensor<double> a({2, 3}, {0.3, -0.4, 0.8, 0.1, -0.9, 0.5});
  Tensor<double> b({2, 3}, {-0.2, 0.6, 0.4, 0.7, 0.2, -0.3});
  auto build = [&](nn::Tape<double>& tape, std::vector<int>* pids) {
    int aid = tape.param(&a);
    int bid = tape.param(&b);
    if (pids) {
      pids->push_back(aid);
      pids->push_back(bid);
    }
    int cat = tape.concat_cols(tape.tanh_(aid), tape.clamp(bid, -0.5, 0.5));
    int left = tape.slice_cols(cat, 0, 3);
    int right = tape.slice_cols(cat, 3, 6);
    int mixed = tape.mul(tape.exp_(tape.affine(left, 0.5, -0.1)), right);
    return tape.sum_all(tape.square(mixed));
  };
  auto eval = [&]() {
    nn::Tape<double> tape;
    return tape.value(build(tape, nullptr)).v[0];
  };
  nn::Tape<double> tape;
  std::vector<int> pids;
  tape.backward(build(tape, &pids));
  std::vector<Tensor<double>> grads = {tape.grad(pids[0]), tape.grad(pids[1])};
  double err = test::max_grad_rel_error({&a, &b}, grads, eval);
  CHECK(err < 1e-4);
}

TEST_CASE("adam zero gradient leaves params unchanged") {
  Tensor<double> w({3}, {1.0, -2.0, 3.0});
  nn::Adam<double> opt(1e-2);
  opt.init({&w});
  Tensor<double> g = Tensor<double>::zeros({3});
  Tensor<double> before = w;
  opt.step({&w}, {&g});
  for (int i = 0; i < 3; ++i) CHECK(std::abs(w.v[i] - before.v[i]) < 1e-9);
}

TEST_CASE("adam first step follows -lr*sign(g)") {
  Tensor<double> w({3}, {0.0, 0.0, 0.0});
  nn::Adam<double> opt(1e-3);
  opt.init({&w});
  Tensor<double> g({3}, {0.5, -2.0, 1e-3});
  opt.step({&w}, {&g});
  for (int i = 0; i < 3; ++i) {
    double expected = -1e-3 * (g.v[i] > 0 ? 1.0 : -1.0);
    CHECK(w.v[i] == doctest::Approx(expected).epsilon(1e-6));
  }
}

TEST_CASE("adam descends a quadratic") {
  Tensor<double> w({1}, {1.0});
  nn::Adam<double> opt(0.1);
  opt.init({&w});
  for (int t = 0; t < 100; ++t) {
    Tensor<double> g({1}, {2.0 * w.v[0]});
    opt.step({&w}, {&g});
  }
  CHECK(std::abs(w.v[0]) < 0.05);
}

TEST_CASE("adam rejects shape mismatch") {
  Tensor<double> w({3}, {1.0, 2.0, 3.0});
  nn::Adam<double> opt(1e-3);
  opt.init({&w});
  Tensor<double> g = Tensor<double>::zeros({2});
  CHECK_THROWS_AS(opt.step({&w}, {&g}), std::invalid_argument);
}

TEST_CASE("kl_to_std_normal closed forms") {
  using G = nn::GaussianParams<double>;
  CHECK(nn::kl_to_std_normal(G(Tensor<double>({1}, {0.0}), Tensor<double>({1}, {0.0}))) == doctest::Approx(0.0));
  CHECK(nn::kl_to_std_normal(G(Tensor<double>({1}, {1.0}), Tensor<double>({1}, {0.0}))) == doctest::Approx(0.5));
  double lv = 1.0;  // sigma^2 = e
  CHECK(nn::kl_to_std_normal(G(Tensor<double>({1}, {0.0}), Tensor<double>({1}, {lv}))) ==
        doctest::Approx((std::exp(1.0) - 2.0) / 2.0).epsilon(1e-6));
}

TEST_CASE("kl_to_std_normal nonnegative, zero only at standard normal") {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    Tensor<double> mu({4}, {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
    Tensor<double> lv({4}, {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
    double kl = nn::kl_to_std_normal(nn::GaussianParams<double>(mu, lv));
    CHECK(kl >= 0.0);
    bool standard = true;
    for (int i = 0; i < 4; ++i)
      if (mu.v[i] != 0.0 || lv.v[i] != 0.0) standard = false;
    if (!standard) CHECK(kl > 0.0);
  }
  CHECK_THROWS_AS(nn::GaussianParams<double>(Tensor<double>::zeros({3}), Tensor<double>::zeros({4})),
                  std::invalid_argument);
}

TEST_CASE("reparam_sample basics") {
  Tensor<double> mu({3}, {1.0, -2.0, 0.5});
  Tensor<double> lv({3}, {0.3, -0.7, 1.1});
  nn::GaussianParams<double> q(mu, lv);
  Tensor<double> zero_noise = Tensor<double>::zeros({3});
  Tensor<double> z = nn::reparam_sample(q, zero_noise);
  for (int i = 0; i < 3; ++i) CHECK(z.v[i] == doctest::Approx(mu.v[i]));

  nn::GaussianParams<double> std_q(Tensor<double>::zeros({3}), Tensor<double>::zeros({3}));
  Tensor<double> n({3}, {0.4, -1.2, 2.0});
  Tensor<double> z2 = nn::reparam_sample(std_q, n);
  for (int i = 0; i < 3; ++i) CHECK(z2.v[i] == doctest::Approx(n.v[i]));

  CHECK_THROWS_AS(nn::reparam_sample(q, Tensor<double>::zeros({2})), std::invalid_argument);
}

TEST_CASE("reparam_sample monte carlo mean") {
  Rng rng(99);
  Tensor<double> mu({2}, {0.7, -1.3});
  Tensor<double> lv({2}, {0.4, -0.8});
  nn::GaussianParams<double> q(mu, lv);
  const int n = 100000;
  double acc[2] = {0, 0};
  for (int t = 0; t < n; ++t) {
    Tensor<double> noise({2}, {rng.normal(), rng.normal()});
    Tensor<double> z = nn::reparam_sample(q, noise);
    acc[0] += z.v[0];
    acc[1] += z.v[1];
  }
  for (int d = 0; d < 2; ++d) {
    double sigma = std::exp(lv.v[d] / 2);
    double tol = 3 * sigma / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(acc[d] / n - mu.v[d]) < tol);
  }
}

TEST_CASE("conv encoder zero input zero bias gives zero features") {
  Rng rng(3);
  nn::ConvEncoder<double> enc = nn::ConvEncoder<double>::create(10, rng);
  for (auto& b : enc.cb) std::fill(b.v.begin(), b.v.end(), 0.0);
  std::fill(enc.hb.v.begin(), enc.hb.v.end(), 0.0);
  Tensor<double> x = Tensor<double>::zeros({1, enc.input_dim()});
  Tensor<double> y = enc.forward(x);
  CHECK(y.numel() == 10);
  for (double v : y.v) CHECK(v == 0.0);
}

TEST_CASE("conv encoder output length and input validation") {
  Rng rng(3);
  nn::ConvEncoder<double> enc = nn::ConvEncoder<double>::create(16, rng);
  Tensor<double> x = Tensor<double>::zeros({2, enc.input_dim()});
  for (double& v : x.v) v = rng.uniform(0, 1);
  Tensor<double> y = enc.forward(x);
  CHECK(y.rows() == 2);
  CHECK(y.cols() == 16);
  CHECK_THROWS_AS(enc.forward(Tensor<double>::zeros({1, 100})), std::invalid_argument);
}

TEST_CASE("conv encoder gradients match finite differences") {
  // small instance: gradient w.r.t. weights, bias, and input pixels
  Rng rng(17);
  nn::ConvEncoder<double> enc = nn::ConvEncoder<double>::create(3, rng);
  Tensor<double> x = Tensor<double>::zeros({2, enc.input_dim()});
  for (double& v : x.v) v = rng.uniform(0, 1);
  Tensor<double> target({2, 3}, {0.2, -0.1, 0.5, 0.0, 0.3, -0.4});

  auto build = [&](nn::Tape<double>& tape, std::vector<int>* pids, int* x_node) {
    int xid = tape.param(&x);  // treat pixels as trainable to check input grads
    if (x_node) *x_node = xid;
    if (pids) pids->push_back(xid);
    int out = enc.build(tape, xid, pids);
    return tape.sum_all(tape.square(tape.sub(out, tape.constant(target))));
  };
  auto eval = [&]() {
    nn::Tape<double> tape;
    return tape.value(build(tape, nullptr, nullptr)).v[0];
  };

  nn::Tape<double> tape;
  std::vector<int> pids;
  tape.backward(build(tape, &pids, nullptr));

  std::vector<Tensor<double>*> params = {&x};
  for (auto* p : enc.params()) params.push_back(p);
  std::vector<Tensor<double>> grads;
  for (int id : pids) grads.push_back(tape.grad(id));

  // spot check a subset of input pixels with FD (full sweep is slow)
  nn::Tape<double> t2;
  std::vector<int> pids2;
  t2.backward(build(t2, &pids2, nullptr));
  const Tensor<double>& gx = t2.grad(pids2[0]);
  Rng pick(8);
  double worst = 0;
  for (int trial = 0; trial < 24; ++trial) {
    long i = pick.uniform_int(static_cast<int>(x.numel()));
    double keep = x.v[i];
    double h = 1e-5;
    x.v[i] = keep + h;
    double up = eval();
    x.v[i] = keep - h;
    double down = eval();
    x.v[i] = keep;
    double fd = (up - down) / (2 * h);
    double denom = std::max({std::abs(fd), std::abs(gx.v[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - gx.v[i]) / denom);
  }
  CHECK(worst < 1e-3);

  // full FD over conv weights/biases of the (small) head and conv layers
  std::vector<Tensor<double>*> wparams = {&enc.cb[0], &enc.cb[1], &enc.cb[2], &enc.hb};
  std::vector<Tensor<double>> wgrads = {grads[2], grads[4], grads[6], grads[8]};
  double err = test::max_grad_rel_error(wparams, wgrads, eval);
  CHECK(err < 1e-4);
}

TEST_CASE("polyak update") {
  Tensor<double> tgt({2}, {0.0, 0.0});
  Tensor<double> online({2}, {1.0, 1.0});
  SUBCASE("tau=1 copies online") {
    nn::polyak_update<double>({&tgt}, {&online}, 1.0);
    CHECK(tgt.v[0] == 1.0);
  }
  SUBCASE("tau=0.005") {
    nn::polyak_update<double>({&tgt}, {&online}, 0.005);
    CHECK(tgt.v[0] == doctest::Approx(0.005));
  }
  SUBCASE("geometric decay") {
    double tau = 0.1;
    int n = 20;
    for (int i = 0; i < n; ++i) nn::polyak_update<double>({&tgt}, {&online}, tau);
    double expected_gap = std::pow(1 - tau, n) * 1.0;
    CHECK(std::abs(online.v[0] - tgt.v[0]) == doctest::Approx(expected_gap).epsilon(1e-9));
  }
  SUBCASE("rejects bad tau and shapes") {
    CHECK_THROWS_AS(nn::polyak_update<double>({&tgt}, {&online}, 0.0), std::invalid_argument);
    Tensor<double> bad = Tensor<double>::zeros({3});
    CHECK_THROWS_AS(nn::polyak_update<double>({&tgt}, {&bad}, 0.5), std::invalid_argument);
  }
}

TEST_CASE("training step determinism") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    nn::Mlp<double> m = nn::Mlp<double>::create(3, {16}, 2, rng);
    nn::Adam<double> opt(1e-3);
    opt.init(m.params());
    Rng data(seed + 1);
    for (int t = 0; t < 25; ++t) {
      Tensor<double> x = Tensor<double>::zeros({8, 3});
      for (double& v : x.v) v = data.uniform(-1, 1);
      nn::Tape<double> tape;
      std::vector<int> pids;
      int out = m.build(tape, tape.constant(x), &pids);
      int loss = tape.scale(tape.sum_all(tape.square(out)), 1.0 / 8);
      tape.backward(loss);
      nn::ConstParamList<double> grads;
      for (int id : pids) grads.push_back(&tape.grad(id));
      opt.step(m.params(), grads);
    }
    return m;
  };
  nn::Mlp<double> a = run(5);
  nn::Mlp<double> b = run(5);
  for (int l = 0; l < a.n_layers(); ++l)
    for (long i = 0; i < a.w[l].numel(); ++i) CHECK(a.w[l].v[i] == b.w[l].v[i]);
}
