#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "offnadir/rng.hpp"
#include "offnadir/tensor.hpp"
#include "offnadir/tensor_io.hpp"
#include "test_helpers.hpp"

using namespace offnadir;
using namespace testutil;

TEST_CASE("tensor construction and accessors") {
  Tensor t({2, 3, 4, 5});
  CHECK(t.rank() == 4);
  CHECK(t.size() == 120);
  for (size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0f);

  t.at4(1, 2, 3, 4) = 7.0f;
  CHECK(t[t.size() - 1] == 7.0f);
  t.at4(0, 0, 0, 1) = 3.0f;
  CHECK(t[1] == 3.0f);

  Tensor m({3, 4});
  m.at2(2, 3) = 1.5f;
  CHECK(m[11] == 1.5f);

  Tensor f = Tensor::full({2, 2}, 2.5f);
  CHECK(f[0] == 2.5f);
  CHECK(f[3] == 2.5f);
  f.fill(-1.0f);
  CHECK(f[2] == -1.0f);

  CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({-1}), std::invalid_argument);
}

TEST_CASE("tensor cast preserves values") {
  RngStream s{123};
  TensorD d = rand_tensor({3, 7}, s, -5.0, 5.0);
  Tensor f = d.cast<float>();
  TensorD back = f.cast<double>();
  for (size_t i = 0; i < d.size(); ++i)
    CHECK(back[i] == doctest::Approx(d[i]).epsilon(1e-6));
}

TEST_CASE("shape_str and check_shape") {
  CHECK(shape_str({1, 2, 3}) == "[1,2,3]");
  CHECK(shape_str({}) == "[]");
  Tensor t({2, 2});
  CHECK_NOTHROW(check_shape(t, {2, 2}, "t"));
  CHECK_THROWS_WITH_AS(check_shape(t, {2, 3}, "thing"),
                       doctest::Contains("thing"), std::invalid_argument);
}

TEST_CASE("tensor file round trip") {
  auto dir = temp_dir("ten_io");
  RngStream s{5};

  Tensor f = rand_tensor_f({2, 3, 4}, s, -10.0, 10.0);
  write_tensor(dir / "a.ten", f);
  Tensor f2 = read_tensor_f32(dir / "a.ten");
  CHECK(f2.shape() == f.shape());
  CHECK(bitwise_equal(f, f2));

  TensorD d = rand_tensor({7}, RngStream{9});
  write_tensor(dir / "b.ten", d);
  TensorD d2 = read_tensor_f64(dir / "b.ten");
  CHECK(d2.shape() == d.shape());
  for (size_t i = 0; i < d.size(); ++i) CHECK(d2[i] == d[i]);

  AnyTensor any = read_tensor(dir / "a.ten");
  CHECK(std::holds_alternative<Tensor>(any));
  CHECK(std::holds_alternative<TensorD>(read_tensor(dir / "b.ten")));

  std::filesystem::remove_all(dir);
}

TEST_CASE("tensor header layout is stable") {
  std::ostringstream os(std::ios::binary);
  Tensor t({1, 2});
  t[0] = 1.0f;
  t[1] = -2.0f;
  write_tensor(os, t);
  std::string bytes = os.str();
  REQUIRE(bytes.size() == 4 + 1 + 1 + 2 + 2 * 4 + 2 * 4);
  CHECK(bytes.substr(0, 4) == "TENS");
  CHECK(bytes[4] == 1);  // version
  CHECK(bytes[5] == 0);  // f32
  // u16 rank, little endian
  CHECK(static_cast<unsigned char>(bytes[6]) == 2);
  CHECK(static_cast<unsigned char>(bytes[7]) == 0);
  // dims
  CHECK(static_cast<unsigned char>(bytes[8]) == 1);
  CHECK(static_cast<unsigned char>(bytes[12]) == 2);
}

TEST_CASE("tensor read rejects malformed input") {
  auto dir = temp_dir("ten_bad");
  {
    std::ofstream f(dir / "bad_magic.ten", std::ios::binary);
    f << "NOPE" << std::string(32, '\0');
  }
  CHECK_THROWS(read_tensor(dir / "bad_magic.ten"));

  Tensor t({4});
  {
    std::ostringstream os(std::ios::binary);
    write_tensor(os, t);
    std::string bytes = os.str();
    std::ofstream f(dir / "trunc.ten", std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
  }
  CHECK_THROWS(read_tensor(dir / "trunc.ten"));

  {
    std::ostringstream os(std::ios::binary);
    write_tensor(os, t);
    std::string bytes = os.str();
    bytes[4] = 9;  // unknown version
    std::ofstream f(dir / "ver.ten", std::ios::binary);
    f << bytes;
  }
  CHECK_THROWS(read_tensor(dir / "ver.ten"));

  {
    std::ostringstream os(std::ios::binary);
    write_tensor(os, t);
    std::string bytes = os.str();
    bytes[5] = 7;  // unknown dtype
    std::ofstream f(dir / "dtype.ten", std::ios::binary);
    f << bytes;
  }
  CHECK_THROWS(read_tensor(dir / "dtype.ten"));
  CHECK_THROWS(read_tensor(dir / "missing.ten"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("stream mix matches the published splitmix64 sequence") {
  // splitmix64 with state 0 produces this sequence; raw(i) with key 0 walks the
  // same increments, so raw(1..3) must reproduce it.
  RngStream s{0};
  CHECK(s.raw(1) == 0xE220A8397B1DCDAFULL);
  CHECK(s.raw(2) == 0x6E789E6AA1B965F4ULL);
  CHECK(s.raw(3) == 0x06C45D188009454FULL);
}

TEST_CASE("stream draws are element addressable") {
  RngStream s{987654321};
  double a = s.uniform_at(17);
  double b = s.uniform_at(3);
  // order of access does not matter
  CHECK(s.uniform_at(3) == b);
  CHECK(s.uniform_at(17) == a);
  CHECK(a != b);
  for (uint64_t i = 0; i < 100; ++i) {
    double u = s.uniform_at(i);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("gaussian_at applies Box-Muller to its two slots") {
  RngStream s{42};
  for (uint64_t i = 0; i < 50; ++i) {
    double u1 = static_cast<double>((s.raw(2 * i) >> 11) + 1) * 0x1.0p-53;
    double u2 = static_cast<double>(s.raw(2 * i + 1) >> 11) * 0x1.0p-53;
    double want = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    CHECK(s.gaussian_at(i) == want);
  }
}

TEST_CASE("rng determinism and stream independence") {
  Rng a(77, 3), b(77, 3);
  for (int i = 0; i < 20; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(77, 4);
  bool all_same = true;
  Rng a2(77, 3);
  for (int i = 0; i < 20; ++i)
    if (a2.next_u64() != c.next_u64()) all_same = false;
  CHECK_FALSE(all_same);

  // named streams are unaffected by sequential draws
  Rng d(5);
  RngStream before = d.stream(9);
  d.uniform();
  d.gaussian();
  RngStream after = d.stream(9);
  CHECK(before.key == after.key);

  // sequential streams advance
  Rng e(5);
  RngStream s1 = e.next_stream();
  RngStream s2 = e.next_stream();
  CHECK(s1.key != s2.key);
  Rng e2(5);
  CHECK(e2.next_stream().key == s1.key);
}

TEST_CASE("fork produces stable independent children") {
  Rng root(123);
  Rng f1 = root.fork(1);
  Rng f2 = root.fork(2);
  Rng f1b = root.fork(1);
  CHECK(f1.next_u64() == f1b.next_u64());
  CHECK(f1.seed() == root.seed());

  // children and grandchildren of distinct tags differ
  std::vector<uint64_t> seen;
  for (uint64_t t = 0; t < 50; ++t) {
    seen.push_back(root.fork(t).next_u64());
    seen.push_back(root.fork(t).fork(0).next_u64());
  }
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());

  // forking does not disturb the parent
  Rng p1(9), p2(9);
  p1.fork(4);
  CHECK(p1.next_u64() == p2.next_u64());
}

TEST_CASE("uniform draws match their distribution") {
  const int N = 200000;
  Rng r(2024);
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < N; ++i) {
    double u = r.uniform();
    sum += u;
    sum2 += u * u;
  }
  double mean = sum / N;
  double var = sum2 / N - mean * mean;
  // 3 standard errors
  CHECK(std::fabs(mean - 0.5) < 3.0 * std::sqrt(1.0 / 12.0 / N));
  // Var(sample var) approx (m4 - var^2)/N, uniform m4 about x centered = 1/80
  CHECK(std::fabs(var - 1.0 / 12.0) < 3.0 * std::sqrt((1.0 / 80.0 - 1.0 / 144.0) / N));
}

TEST_CASE("gaussian draws match their distribution") {
  const int N = 100000;
  Rng r(31337);
  double sum = 0.0, sum2 = 0.0, sum3 = 0.0;
  for (int i = 0; i < N; ++i) {
    double g = r.gaussian();
    sum += g;
    sum2 += g * g;
    sum3 += g * g * g;
  }
  double mean = sum / N;
  double var = sum2 / N - mean * mean;
  double skew = sum3 / N;
  CHECK(std::fabs(mean) < 3.0 / std::sqrt(static_cast<double>(N)));
  CHECK(std::fabs(var - 1.0) < 3.0 * std::sqrt(2.0 / N));
  CHECK(std::fabs(skew) < 3.0 * std::sqrt(15.0 / N));
}

TEST_CASE("gaussian_at matches distribution too") {
  RngStream s{777};
  const int N = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < N; ++i) {
    double g = s.gaussian_at(static_cast<uint64_t>(i));
    sum += g;
    sum2 += g * g;
  }
  double mean = sum / N;
  double var = sum2 / N - mean * mean;
  CHECK(std::fabs(mean) < 3.0 / std::sqrt(static_cast<double>(N)));
  CHECK(std::fabs(var - 1.0) < 3.0 * std::sqrt(2.0 / N));
}

TEST_CASE("uniform_index covers buckets uniformly") {
  Rng r(55);
  const uint64_t n = 7;
  const int N = 70000;
  std::vector<int> counts(n, 0);
  for (int i = 0; i < N; ++i) {
    uint64_t k = r.uniform_index(n);
    REQUIRE(k < n);
    counts[k]++;
  }
  double p = 1.0 / n;
  double se = std::sqrt(N * p * (1.0 - p));
  for (uint64_t k = 0; k < n; ++k)
    CHECK(std::fabs(counts[k] - N * p) < 3.0 * se);
}
