#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "offnadir/optim.hpp"
#include "offnadir/training.hpp"
#include "test_helpers.hpp"

using namespace offnadir;
using namespace testutil;

TEST_CASE("parameter store keeps insertion order and rejects duplicates") {
  ParameterStore ps;
  ps.add("b.w", Tensor({2, 2}), true);
  ps.add("a.w", Tensor({3}), false);
  ps.add("c.w", Tensor({1}), true);
  CHECK(ps.size() == 3);
  CHECK(ps.entry(0).name == "b.w");
  CHECK(ps.entry(1).name == "a.w");
  CHECK(ps.entry(2).name == "c.w");
  CHECK(ps.index_of("a.w") == 1);
  CHECK(ps.contains("c.w"));
  CHECK_FALSE(ps.contains("d.w"));
  CHECK(ps.scalar_count() == 4 + 3 + 1);
  CHECK(ps.entry(0).decay);
  CHECK_FALSE(ps.entry(1).decay);
  CHECK_THROWS_AS(ps.add("a.w", Tensor({1}), false), std::invalid_argument);
  CHECK_THROWS_AS(ps.at("nope"), std::out_of_range);
  CHECK_THROWS_AS(ps.index_of("nope"), std::out_of_range);
  ps.at("a.w")[0] = 5.0f;
  CHECK(ps.entry(1).value[0] == 5.0f);
}

TEST_CASE("init_adam allocates zeroed slots per parameter") {
  ParameterStore ps;
  ps.add("x", rand_tensor_f({2, 3}, RngStream{1}), true);
  ps.add("y", rand_tensor_f({4}, RngStream{2}), false);
  AdamState st = init_adam(ps);
  REQUIRE(st.m.size() == 2);
  REQUIRE(st.v.size() == 2);
  CHECK(st.m[0].shape() == std::vector<int>{2, 3});
  CHECK(st.v[1].shape() == std::vector<int>{4});
  CHECK(st.step == 0);
  for (size_t i = 0; i < st.m[0].size(); ++i) CHECK(st.m[0][i] == 0.0f);
}

TEST_CASE("adam first step has the closed form lr * g / (|g| + eps)") {
  ParameterStore ps;
  Tensor w({3});
  w[0] = 1.0f;
  w[1] = -2.0f;
  w[2] = 0.5f;
  Tensor w0 = w;
  ps.add("w", w, false);
  AdamState st = init_adam(ps);
  Tensor g({3});
  g[0] = 0.3f;
  g[1] = -0.7f;
  g[2] = 1e-3f;
  adam_step(ps, {g}, st, 1e-2, 0.0);
  CHECK(st.step == 1);
  for (int i = 0; i < 3; ++i) {
    double gi = g[static_cast<size_t>(i)];
    // mhat = g, vhat = g^2 after bias correction of the first step
    double want = w0[static_cast<size_t>(i)] - 1e-2 * gi / (std::fabs(gi) + 1e-8);
    CHECK(ps.at("w")[static_cast<size_t>(i)] == doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("adam trajectory matches an independent reference over many steps") {
  const int n = 5, steps = 20;
  RngStream ws{11};
  ParameterStore ps;
  ps.add("decayed", rand_tensor_f({n}, ws), true);
  ps.add("plain", rand_tensor_f({n}, RngStream{12}), false);
  AdamState st = init_adam(ps);

  // reference state in double
  std::vector<double> rw[2], rm[2], rv[2];
  for (int pi = 0; pi < 2; ++pi) {
    rm[pi].assign(n, 0.0);
    rv[pi].assign(n, 0.0);
    for (int i = 0; i < n; ++i)
      rw[pi].push_back(ps.entry(static_cast<size_t>(pi)).value[static_cast<size_t>(i)]);
  }

  const double lr = 3e-3, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int s = 1; s <= steps; ++s) {
    RngStream gs{static_cast<uint64_t>(100 + s)};
    Tensor g1 = rand_tensor_f({n}, gs);
    Tensor g2 = rand_tensor_f({n}, RngStream{static_cast<uint64_t>(200 + s)});
    adam_step(ps, {g1, g2}, st, lr, wd);
    Tensor* gs2[2] = {&g1, &g2};
    for (int pi = 0; pi < 2; ++pi) {
      double use_wd = pi == 0 ? wd : 0.0;
      for (int i = 0; i < n; ++i) {
        double g = (*gs2[pi])[static_cast<size_t>(i)] + use_wd * rw[pi][static_cast<size_t>(i)];
        rm[pi][static_cast<size_t>(i)] = b1 * rm[pi][static_cast<size_t>(i)] + (1 - b1) * g;
        rv[pi][static_cast<size_t>(i)] = b2 * rv[pi][static_cast<size_t>(i)] + (1 - b2) * g * g;
        double mhat = rm[pi][static_cast<size_t>(i)] / (1 - std::pow(b1, s));
        double vhat = rv[pi][static_cast<size_t>(i)] / (1 - std::pow(b2, s));
        rw[pi][static_cast<size_t>(i)] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
  for (int pi = 0; pi < 2; ++pi)
    for (int i = 0; i < n; ++i)
      CHECK(ps.entry(static_cast<size_t>(pi)).value[static_cast<size_t>(i)] ==
            doctest::Approx(rw[pi][static_cast<size_t>(i)]).epsilon(2e-4));
}

TEST_CASE("weight decay applies only to flagged parameters") {
  ParameterStore ps;
  ps.add("decayed", Tensor::full({2}, 4.0f), true);
  ps.add("plain", Tensor::full({2}, 4.0f), false);
  AdamState st = init_adam(ps);
  Tensor zero({2});
  adam_step(ps, {zero, zero}, st, 1e-2, 0.1);
  // zero grads: the plain entry sees g=0 and must not move
  CHECK(ps.at("plain")[0] == 4.0f);
  // the decayed entry sees g = wd*w and shrinks
  CHECK(ps.at("decayed")[0] < 4.0f);
}

TEST_CASE("adam rejects malformed input") {
  ParameterStore ps;
  ps.add("w", Tensor({2}), false);
  AdamState st = init_adam(ps);
  CHECK_THROWS_AS(adam_step(ps, {}, st, 1e-3, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(adam_step(ps, {Tensor({3})}, st, 1e-3, 0.0), std::invalid_argument);

  Tensor g({2});
  g[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(adam_step(ps, {g}, st, 1e-3, 0.0),
                       doctest::Contains("w"), std::runtime_error);
  g[1] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(adam_step(ps, {g}, st, 1e-3, 0.0), std::runtime_error);
}

TEST_CASE("adam with zero lr leaves parameters untouched") {
  ParameterStore ps;
  Tensor w = rand_tensor_f({4}, RngStream{31});
  Tensor w0 = w;
  ps.add("w", w, false);
  AdamState st = init_adam(ps);
  adam_step(ps, {rand_tensor_f({4}, RngStream{32})}, st, 0.0, 0.0);
  CHECK(bitwise_equal(ps.at("w"), w0));
  CHECK(st.step == 1);  // moments still advance
  CHECK(st.m[0][0] != 0.0f);
}

TEST_CASE("learning rate decays linearly to zero") {
  TrainConfig c;
  c.lr0 = 1e-4;
  c.iterations = 1000;
  CHECK(lr_at(c, 0) == doctest::Approx(1e-4));
  CHECK(lr_at(c, 500) == doctest::Approx(5e-5));
  CHECK(lr_at(c, 999) == doctest::Approx(1e-7));
  CHECK(lr_at(c, 1000) == doctest::Approx(0.0));
  // strictly decreasing
  for (int64_t t = 1; t < 1000; t += 97) CHECK(lr_at(c, t) < lr_at(c, t - 1));
}

TEST_CASE("adam descends a simple quadratic") {
  // minimize 0.5*||w - target||^2; gradient is w - target
  ParameterStore ps;
  ps.add("w", Tensor::full({3}, 5.0f), false);
  Tensor target({3});
  target[0] = 1.0f;
  target[1] = -2.0f;
  target[2] = 0.0f;
  AdamState st = init_adam(ps);
  for (int s = 0; s < 4000; ++s) {
    Tensor g({3});
    for (size_t i = 0; i < 3; ++i) g[i] = ps.at("w")[i] - target[i];
    adam_step(ps, {g}, st, 5e-3, 0.0);
  }
  for (size_t i = 0; i < 3; ++i)
    CHECK(ps.at("w")[i] == doctest::Approx(target[i]).epsilon(1e-2));
}
