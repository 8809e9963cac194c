#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "support/op_cases.hpp"
#include "uniclin/ad/adamw.hpp"
#include "uniclin/ad/checkpoint.hpp"
#include "uniclin/ad/ops.hpp"
#include "uniclin/error.hpp"

using namespace uniclin;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

std::vector<float> values_of(Var v) { return {v.value().begin(), v.value().end()}; }

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected uniclin::Error");
  return ErrorKind::kUsage;
}

}  // namespace

TEST_CASE("matmul examples") {
  Tape t;
  Var eye = t.constant({2, 2}, {1, 0, 0, 1});
  Var m = t.constant({2, 2}, {1, 2, 3, 4});
  CHECK(values_of(ad::matmul(eye, m)) == std::vector<float>{1, 2, 3, 4});

  Var proj = t.constant({2, 2}, {1, 0, 0, 0});
  Var col = t.constant({2, 1}, {5, 7});
  CHECK(values_of(ad::matmul(proj, col)) == std::vector<float>{5, 0});

  CHECK(kind_of([&] { ad::matmul(m, t.constant({3, 1}, {1, 2, 3})); }) == ErrorKind::kShape);
}

TEST_CASE("every op passes the finite-difference check") {
  std::mt19937_64 rng(7);
  for (const auto& name : testing::op_names()) {
    for (int rep = 0; rep < 3; ++rep) {
      auto c = testing::make_op_case(name, rng);
      auto r = testing::grad_check(c.inputs, c.build, rng());
      INFO(name << " rep " << rep << " abs " << r.max_abs_err);
      CHECK(r.max_rel_err < 1e-3);
    }
  }
}

TEST_CASE("softmax_rows") {
  Tape t;
  auto u = values_of(ad::softmax_rows(t.constant({1, 3}, {0, 0, 0})));
  for (float v : u) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-6));

  auto s = values_of(ad::softmax_rows(t.constant({1, 3}, {1000, 0, 0})));
  CHECK(std::abs(s[0] - 1.0f) < 1e-6);
  CHECK(std::abs(s[1]) < 1e-6);

  // 64-bit exp-normalize oracle.
  auto r = values_of(ad::softmax_rows(t.constant({1, 3}, {1, 2, 3})));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(r[i] - std::exp(i + 1.0) / z) < 1e-6);

  CHECK(kind_of([&] { ad::softmax_rows(t.constant({1, 2}, {NAN, 0})); }) == ErrorKind::kNumeric);

  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = testing::random_tensor({4, 9}, rng, 30.0f);
    auto y = values_of(ad::softmax_rows(t.constant(x)));
    for (int row = 0; row < 4; ++row) {
      double acc = 0;
      for (int i = 0; i < 9; ++i) {
        CHECK(y[row * 9 + i] >= 0.0f);
        acc += y[row * 9 + i];
      }
      CHECK(std::abs(acc - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("layernorm") {
  Tape t;
  Var g = t.constant({3}, {1, 1, 1});
  Var b = t.constant({3}, {0, 0, 0});
  for (float v : values_of(ad::layernorm(t.constant({1, 3}, {4, 4, 4}), g, b))) CHECK(v == 0.0f);

  Var g2 = t.constant({2}, {1, 1});
  Var b2 = t.constant({2}, {0, 0});
  auto y = values_of(ad::layernorm(t.constant({1, 2}, {1, 3}), g2, b2));
  CHECK(std::abs(y[0] + 1.0f) < 1e-4);
  CHECK(std::abs(y[1] - 1.0f) < 1e-4);
}

namespace {

// O(T^2) reference with explicit loops in double precision.
std::vector<double> attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v, bool causal) {
  const std::size_t tq = q.dim(0), tk = k.dim(0), h = q.dim(1), dh = q.dim(2);
  std::vector<double> out(tq * h * dh, 0.0);
  for (std::size_t hh = 0; hh < h; ++hh) {
    for (std::size_t i = 0; i < tq; ++i) {
      std::vector<double> w;
      const std::size_t limit = causal ? i + (tk - tq) + 1 : tk;
      double mx = -1e300;
      for (std::size_t j = 0; j < limit; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += double(q[(i * h + hh) * dh + c]) * k[(j * h + hh) * dh + c];
        s /= std::sqrt(double(dh));
        w.push_back(s);
        mx = std::max(mx, s);
      }
      double z = 0;
      for (auto& s : w) z += (s = std::exp(s - mx));
      for (std::size_t j = 0; j < limit; ++j)
        for (std::size_t c = 0; c < dh; ++c)
          out[(i * h + hh) * dh + c] += w[j] / z * v[(j * h + hh) * dh + c];
    }
  }
  return out;
}

}  // namespace

TEST_CASE("causal_attention") {
  std::mt19937_64 rng(11);
  Tape t;
  {
    Tensor q = testing::random_tensor({1, 2, 3}, rng), k = testing::random_tensor({1, 2, 3}, rng),
           v = testing::random_tensor({1, 2, 3}, rng);
    auto o = values_of(ad::causal_attention(t.constant(q), t.constant(k), t.constant(v)));
    for (std::size_t i = 0; i < o.size(); ++i) CHECK(o[i] == doctest::Approx(v[i]).epsilon(1e-6));
  }
  {
    // Identical keys give a uniform average over the visible prefix.
    const std::size_t T = 4;
    Tensor q = testing::random_tensor({T, 1, 2}, rng), v = testing::random_tensor({T, 1, 2}, rng);
    Tensor k({T, 1, 2}, std::vector<float>(T * 2, 0.5f));
    auto o = values_of(ad::causal_attention(t.constant(q), t.constant(k), t.constant(v)));
    for (std::size_t i = 0; i < T; ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        double avg = 0;
        for (std::size_t j = 0; j <= i; ++j) avg += v[j * 2 + c];
        avg /= double(i + 1);
        CHECK(std::abs(o[i * 2 + c] - avg) < 1e-6);
      }
    }
  }
  for (bool causal : {true, false}) {
    Tensor q = testing::random_tensor({3, 2, 4}, rng), k = testing::random_tensor({3, 2, 4}, rng),
           v = testing::random_tensor({3, 2, 4}, rng);
    auto o = values_of(ad::attention(t.constant(q), t.constant(k), t.constant(v), causal));
    auto ref = attention_oracle(q, k, v, causal);
    for (std::size_t i = 0; i < o.size(); ++i) CHECK(std::abs(o[i] - ref[i]) < 1e-5);
  }
  {
    // Output at i is independent of inputs at positions > i.
    const std::size_t T = 5;
    Tensor q = testing::random_tensor({T, 2, 3}, rng), k = testing::random_tensor({T, 2, 3}, rng),
           v = testing::random_tensor({T, 2, 3}, rng);
    auto base = values_of(ad::causal_attention(t.constant(q), t.constant(k), t.constant(v)));
    for (std::size_t pos = 0; pos < T; ++pos) {
      Tensor q2 = q, k2 = k, v2 = v;
      for (std::size_t c = 0; c < 6; ++c) {
        q2[pos * 6 + c] += 1.0f;
        k2[pos * 6 + c] -= 2.0f;
        v2[pos * 6 + c] += 3.0f;
      }
      auto o = values_of(ad::causal_attention(t.constant(q2), t.constant(k2), t.constant(v2)));
      for (std::size_t i = 0; i < pos; ++i)
        for (std::size_t c = 0; c < 6; ++c) CHECK(o[i * 6 + c] == base[i * 6 + c]);
    }
  }
}

TEST_CASE("cross_entropy_at") {
  Tape t;
  std::vector<ad::Target> one{{0, 2}};
  auto l = ad::cross_entropy_at(t.constant({1, 4}, {0, 0, 0, 0}), one);
  CHECK(l.value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-6));

  auto sat = ad::cross_entropy_at(t.constant({1, 4}, {0, 0, 200, 0}), one);
  CHECK(sat.value()[0] < 1e-6);

  CHECK(kind_of([&] { ad::cross_entropy_at(t.constant({1, 4}, {0, 0, 0, 0}), {}); }) ==
        ErrorKind::kUsage);

  // Non-target rows receive exactly zero gradient; the FD oracle agrees.
  std::mt19937_64 rng(5);
  Tensor logits = testing::random_tensor({5, 6}, rng);
  std::vector<ad::Target> targets{{1, 3}, {3, 0}};
  auto r = testing::grad_check({logits}, [&](Tape&, std::vector<Var>& v) {
    return ad::cross_entropy_at(v[0], targets);
  }, 9);
  CHECK(r.max_rel_err < 1e-3);
  logits.set_requires_grad(true);
  Tape t2;
  t2.backward(ad::cross_entropy_at(t2.param(logits), targets));
  for (std::size_t row : {0u, 2u, 4u})
    for (std::size_t c = 0; c < 6; ++c) CHECK(logits.grad()[row * 6 + c] == 0.0f);
}

TEST_CASE("adamw") {
  SUBCASE("zero gradient without decay leaves params") {
    Tensor p({3}, {1, -2, 3}, true);
    ad::AdamW opt({&p}, {.lr = 0.1f});
    p.grad();
    opt.step();
    CHECK(std::vector<float>(p.values().begin(), p.values().end()) == std::vector<float>{1, -2, 3});
  }
  SUBCASE("single step matches the hand-evaluated update") {
    Tensor p({1}, {1.0f}, true);
    ad::AdamW opt({&p}, {.lr = 0.1f});
    p.grad()[0] = 1.0f;
    opt.step();
    CHECK(std::abs(p[0] - 0.9f) < 1e-6);
    CHECK(opt.step_count() == 1);
  }
  SUBCASE("decay only") {
    Tensor p({1}, {2.0f}, true);
    ad::AdamW opt({&p}, {.lr = 0.1f, .weight_decay = 0.1f});
    opt.step();
    CHECK(p[0] == doctest::Approx(2.0f - 0.1f * 0.1f * 2.0f).epsilon(1e-7));
  }
}

TEST_CASE("linear classifier separates a 2-D toy set") {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> noise(0.0f, 0.3f);
  std::vector<float> xs, ys;
  for (int i = 0; i < 64; ++i) {
    const float y = static_cast<float>(i % 2);
    xs.push_back((y ? 1.0f : -1.0f) + noise(rng));
    xs.push_back((y ? -1.0f : 1.0f) + noise(rng));
    ys.push_back(y);
  }
  Tensor w({1, 2}, {0.0f, 0.0f}, true);
  Tensor b({1}, {0.0f}, true);
  ad::AdamW opt({&w, &b}, {.lr = 0.05f});
  int steps = 0;
  auto accuracy = [&] {
    int ok = 0;
    for (int i = 0; i < 64; ++i) {
      const float s = w[0] * xs[2 * i] + w[1] * xs[2 * i + 1] + b[0];
      ok += (s > 0) == (ys[i] > 0.5f);
    }
    return ok / 64.0;
  };
  while (accuracy() < 1.0 && steps < 500) {
    Tape t;
    Var x = t.constant({64, 2}, xs);
    Var logits = ad::add_row(ad::matmul_nt(x, t.param(w)), t.param(b));
    t.backward(ad::bce_with_logits(logits, ys));
    opt.step();
    ++steps;
  }
  CHECK(accuracy() == 1.0);
  CHECK(steps <= 500);
}

TEST_CASE("checkpoint archive round-trips and rejects mismatches") {
  std::mt19937_64 rng(2);
  ad::ParamStore store;
  store.add("w", Tensor::randn({3, 4}, 1.0f, rng));
  store.add("b", Tensor::randn({4}, 1.0f, rng));
  ad::Archive a;
  a.manifest = {{"d_model", 4}, {"seed", 2}};
  a.put("lm", store);
  auto path = std::filesystem::temp_directory_path() / "uniclin_ckpt_test.bin";
  a.save(path);
  auto b = ad::Archive::load(path);
  CHECK(b.manifest == a.manifest);
  CHECK(b.serialize() == a.serialize());

  ad::ParamStore copy;
  copy.add("w", Tensor({3, 4}));
  copy.add("b", Tensor({4}));
  b.get("lm", copy);
  CHECK(ad::fingerprint(copy) == ad::fingerprint(store));

  ad::ParamStore wrong;
  wrong.add("w", Tensor({4, 3}));
  CHECK(kind_of([&] { b.get("lm", wrong); }) == ErrorKind::kSchema);
  std::filesystem::remove(path);
}
