#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <random>

#include "tmn/adam.hpp"
#include "tmn/checkpoint.hpp"
#include "tmn/grad_check.hpp"
#include "tmn/tensor.hpp"

using namespace tmn;

namespace {

Tensor<double> randn64(Shape shape, uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  return Tensor<double>::randn(std::move(shape), rng, stddev);
}

}  // namespace

TEST_CASE("matmul identity and hand-computed 2x2") {
  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto r = matmul(a, eye);
  for (int i = 0; i < 4; ++i) CHECK(r.data()[i] == doctest::Approx(a.data()[i]));

  auto b = Tensor<double>::from({2, 2}, {5, 6, 7, 8});
  auto c = matmul(a, b);
  CHECK(c.data()[0] == doctest::Approx(19));
  CHECK(c.data()[1] == doctest::Approx(22));
  CHECK(c.data()[2] == doctest::Approx(43));
  CHECK(c.data()[3] == doctest::Approx(50));
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), std::invalid_argument);
  try {
    matmul(a, b);
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches central finite differences") {
  auto a = randn64({3, 4}, 11).set_requires_grad(true);
  auto b = randn64({4, 2}, 12).set_requires_grad(true);
  auto report = grad_check({{"a", a}, {"b", b}}, [&] { return sum(matmul(a, b)); });
  CHECK(report.max_rel_err <= 1e-6);
}

TEST_CASE("softmax uniform, shift invariance, independent evaluation") {
  auto z = softmax(Tensor<double>::from({4}, {0, 0, 0, 0}), 0);
  for (int i = 0; i < 4; ++i) CHECK(z.data()[i] == doctest::Approx(0.25).epsilon(1e-12));

  auto x = randn64({6}, 21);
  auto shifted = x.detach();
  for (auto& v : shifted.values()) v += 3.71;
  auto s1 = softmax(x, 0);
  auto s2 = softmax(shifted, 0);
  for (int i = 0; i < 6; ++i) CHECK(std::fabs(s1.data()[i] - s2.data()[i]) <= 1e-12);

  // independent evaluation: plain exp/sum at long double, no max subtraction
  auto y = softmax(Tensor<double>::from({3}, {1, 2, 3}), 0);
  long double e1 = expl(1.0L), e2 = expl(2.0L), e3 = expl(3.0L);
  long double zz = e1 + e2 + e3;
  CHECK(std::fabs(y.data()[0] - static_cast<double>(e1 / zz)) <= 1e-12);
  CHECK(std::fabs(y.data()[1] - static_cast<double>(e2 / zz)) <= 1e-12);
  CHECK(std::fabs(y.data()[2] - static_cast<double>(e3 / zz)) <= 1e-12);
}

TEST_CASE("softmax rows sum to one for |x| <= 50") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = Tensor<double>::zeros({4, 9});
    for (auto& v : x.values()) v = (uniform_real(rng) * 2 - 1) * 50;
    auto s = softmax(x, 1);
    for (int r = 0; r < 4; ++r) {
      double total = 0;
      for (int c = 0; c < 9; ++c) total += s.data()[r * 9 + c];
      CHECK(std::fabs(total - 1.0) <= 1e-12);
    }
  }
  std::mt19937_64 rng32(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = Tensor<float>::zeros({3, 11});
    for (auto& v : x.values()) v = static_cast<float>((uniform_real(rng32) * 2 - 1) * 50);
    auto s = softmax(x, 1);
    for (int r = 0; r < 3; ++r) {
      float total = 0;
      for (int c = 0; c < 11; ++c) total += s.data()[r * 11 + c];
      CHECK(std::fabs(total - 1.0f) <= 1e-6);
    }
  }
}

TEST_CASE("softmax over a middle axis") {
  auto x = randn64({2, 5, 3}, 33);
  auto s = softmax(x, 1);
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 3; ++i) {
      double total = 0;
      for (int a = 0; a < 5; ++a) total += s.data()[(b * 5 + a) * 3 + i];
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("layer_norm constant input and moments") {
  auto gain = Tensor<double>::full({8}, 1.0);
  auto bias = Tensor<double>::zeros({8});
  auto c = Tensor<double>::full({8}, 3.25);
  auto y = layer_norm(c, gain, bias, 1e-5);
  for (int i = 0; i < 8; ++i) CHECK(std::fabs(y.data()[i]) <= 1e-9);

  auto x = randn64({4, 16}, 5);
  auto z = layer_norm(x, Tensor<double>::full({16}, 1.0), Tensor<double>::zeros({16}), 1e-5);
  for (int r = 0; r < 4; ++r) {
    double mean = 0, var = 0;
    for (int j = 0; j < 16; ++j) mean += z.data()[r * 16 + j];
    mean /= 16;
    for (int j = 0; j < 16; ++j) {
      double d = z.data()[r * 16 + j] - mean;
      var += d * d;
    }
    var /= 16;
    CHECK(std::fabs(mean) <= 1e-6);
    CHECK(std::fabs(var - 1.0) <= 1e-4);
  }
}

TEST_CASE("layer_norm gradient matches finite differences") {
  auto x = randn64({3, 10}, 41).set_requires_grad(true);
  auto g = randn64({10}, 42, 0.5).set_requires_grad(true);
  auto b = randn64({10}, 43, 0.5).set_requires_grad(true);
  auto report = grad_check({{"x", x}, {"gain", g}, {"bias", b}},
                           [&] { return sum(mul(layer_norm(x, g, b, 1e-5), layer_norm(x, g, b, 1e-5))); });
  CHECK(report.max_rel_err <= 1e-5);
}

TEST_CASE("cross_entropy analytic values") {
  auto uniform = Tensor<double>::zeros({1, 4});
  CHECK(cross_entropy(uniform, {2}).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  auto confident = Tensor<double>::zeros({1, 4});
  confident.data()[1] = 20.0;
  CHECK(cross_entropy(confident, {1}).item() < 1e-8);

  CHECK_THROWS_AS(cross_entropy(uniform, {4}), std::out_of_range);
  CHECK_THROWS_AS(cross_entropy(uniform, {-1}), std::out_of_range);
}

TEST_CASE("cross_entropy matches independent evaluation on a random batch") {
  auto logits = randn64({5, 7}, 99, 2.0);
  std::vector<int> labels = {3, 0, 6, 2, 5};
  long double total = 0;
  for (int i = 0; i < 5; ++i) {
    long double z = 0;
    for (int j = 0; j < 7; ++j) z += expl(static_cast<long double>(logits.data()[i * 7 + j]));
    total += -logl(expl(static_cast<long double>(logits.data()[i * 7 + labels[static_cast<size_t>(i)]])) / z);
  }
  const double expected = static_cast<double>(total / 5);
  CHECK(std::fabs(cross_entropy(logits, labels).item() - expected) <= 1e-10);
}

TEST_CASE("backward basics") {
  auto x = randn64({5}, 3).set_requires_grad(true);
  sum(x).backward();
  for (int i = 0; i < 5; ++i) CHECK(x.grad()[static_cast<size_t>(i)] == doctest::Approx(1.0));

  auto y = randn64({4}, 4).set_requires_grad(true);
  sum(mul(y, y)).backward();
  for (int i = 0; i < 4; ++i) CHECK(y.grad()[static_cast<size_t>(i)] == doctest::Approx(2 * y.data()[i]));

  CHECK_THROWS_AS(randn64({3}, 1).set_requires_grad(true).backward(), std::invalid_argument);
}

TEST_CASE("backward sums gradients along both paths of a reused tensor") {
  // loss = sum(x*x + x) => dloss/dx = 2x + 1
  auto x = randn64({6}, 8).set_requires_grad(true);
  sum(add(mul(x, x), x)).backward();
  for (int i = 0; i < 6; ++i) CHECK(x.grad()[static_cast<size_t>(i)] == doctest::Approx(2 * x.data()[i] + 1));
}

TEST_CASE("repeated backward without reset accumulates") {
  auto x = randn64({3}, 9).set_requires_grad(true);
  auto run = [&] { sum(x).backward(); };
  run();
  run();
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[static_cast<size_t>(i)] == doctest::Approx(2.0));
}

TEST_CASE("every differentiable op passes finite differences across seeds") {
  GradCheckOptions opt;
  opt.max_coords_per_tensor = 6;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    opt.seed = seed;
    auto x = randn64({3, 4}, seed * 13 + 1).set_requires_grad(true);
    auto y = randn64({3, 4}, seed * 13 + 2).set_requires_grad(true);
    auto b = randn64({4}, seed * 13 + 3).set_requires_grad(true);
    auto w = randn64({4, 5}, seed * 13 + 4).set_requires_grad(true);

    auto weigh = [&](Tensor<double> t) {  // nonlinear scalarization so FD sees curvature
      return sum(mul(t, t));
    };

    std::vector<std::pair<std::string, std::function<Tensor<double>()>>> cases = {
        {"add", [&] { return weigh(add(x, y)); }},
        {"sub", [&] { return weigh(sub(x, y)); }},
        {"mul", [&] { return weigh(mul(x, y)); }},
        {"scale", [&] { return weigh(scale(x, 1.7)); }},
        {"add_bias", [&] { return weigh(add_bias(x, b)); }},
        {"reshape", [&] { return weigh(reshape(x, {4, 3})); }},
        {"slice", [&] { return weigh(slice_axis(x, 1, 1, 2)); }},
        {"concat", [&] { return weigh(concat_axis<double>({x, y}, 0)); }},
        {"permute", [&] { return weigh(permute(x, {1, 0})); }},
        {"mean_axis", [&] { return weigh(mean_axis(x, 0)); }},
        {"matmul", [&] { return weigh(matmul(x, w)); }},
        {"matmul_nt", [&] { return weigh(matmul_nt(x, y)); }},
        {"softmax", [&] { return weigh(softmax(x, 1)); }},
        {"gelu", [&] { return weigh(gelu(x)); }},
        {"layer_norm", [&] { return weigh(layer_norm(x, b, b, 1e-5)); }},
        {"cross_entropy", [&] { return cross_entropy(x, {0, 3, 1}); }},
        {"embedding", [&] { return weigh(embedding(w, {0, 2, 2, 1})); }},
    };
    for (auto& [name, fn] : cases) {
      auto report = grad_check({{"x", x}, {"y", y}, {"b", b}, {"w", w}}, fn, opt);
      INFO("op=" << name << " seed=" << seed);
      CHECK(report.max_rel_err <= 1e-4);
    }
  }
}

TEST_CASE("batched matmul shapes and shared operand") {
  auto a = randn64({2, 3, 4}, 51).set_requires_grad(true);
  auto b = randn64({2, 4, 2}, 52).set_requires_grad(true);
  auto w = randn64({4, 6}, 53).set_requires_grad(true);
  CHECK(matmul(a, b).shape() == Shape{2, 3, 2});
  CHECK(matmul(a, w).shape() == Shape{2, 3, 6});
  auto r1 = grad_check({{"a", a}, {"b", b}}, [&] { return sum(mul(matmul(a, b), matmul(a, b))); });
  CHECK(r1.max_rel_err <= 1e-6);
  auto r2 = grad_check({{"a", a}, {"w", w}}, [&] { return sum(mul(matmul(a, w), matmul(a, w))); });
  CHECK(r2.max_rel_err <= 1e-6);
  // brute-force check of one batched cell against the 2-d kernel
  auto flat0 = slice_axis(a, 0, 0, 1);
  auto cell = matmul(reshape(flat0, {3, 4}), reshape(slice_axis(b, 0, 0, 1), {4, 2}));
  auto full = matmul(a, b);
  for (int i = 0; i < 6; ++i) CHECK(cell.data()[i] == doctest::Approx(full.data()[i]));
}

TEST_CASE("dropout keeps expectation and zeroes deterministically") {
  std::mt19937_64 rng(123);
  auto x = Tensor<float>::full({1000}, 1.0f);
  auto y = dropout(x, 0.25f, rng);
  int zeros = 0;
  double total = 0;
  for (int i = 0; i < 1000; ++i) {
    if (y.data()[i] == 0.0f) ++zeros;
    total += y.data()[i];
  }
  CHECK(zeros > 180);
  CHECK(zeros < 320);
  CHECK(total / 1000.0 == doctest::Approx(1.0).epsilon(0.1));
  std::mt19937_64 rng2(123);
  auto y2 = dropout(x, 0.25f, rng2);
  CHECK(std::memcmp(y.data(), y2.data(), sizeof(float) * 1000) == 0);
}

TEST_CASE("determinism: same seed, same op sequence, identical bytes") {
  auto run = [] {
    std::mt19937_64 rng(2024);
    auto a = Tensor<float>::randn({8, 8}, rng);
    auto b = Tensor<float>::randn({8, 8}, rng);
    auto out = softmax(matmul(gelu(a), b), 1);
    return out.values();
  };
  auto v1 = run();
  auto v2 = run();
  CHECK(std::memcmp(v1.data(), v2.data(), v1.size() * sizeof(float)) == 0);
}

TEST_CASE("adam first-step magnitude and zero-gradient behavior") {
  AdamConfig<double> cfg;
  cfg.lr = 0.05;
  auto w = Tensor<double>::from({3}, {1.0, -2.0, 0.5});
  w.set_requires_grad(true);
  Adam<double> opt({w}, cfg);

  w.grad() = {0.3, -4.0, 1e-12};
  auto before = w.values();
  opt.step();
  // |delta| ~= lr for |g| >> eps, and never exceeds lr at t=1
  CHECK(std::fabs(w.data()[0] - before[0]) == doctest::Approx(cfg.lr).epsilon(1e-6));
  CHECK(std::fabs(w.data()[1] - before[1]) == doctest::Approx(cfg.lr).epsilon(1e-6));
  CHECK(std::fabs(w.data()[0] - before[0]) <= cfg.lr * (1 + 1e-9));
  // sign follows the gradient
  CHECK(w.data()[0] < before[0]);
  CHECK(w.data()[1] > before[1]);

  auto w2 = Tensor<double>::from({2}, {1.0, 2.0});
  w2.set_requires_grad(true);
  Adam<double> opt2({w2});
  w2.grad() = {0.0, 0.0};
  opt2.step();
  CHECK(w2.data()[0] == 1.0);
  CHECK(w2.data()[1] == 2.0);
}

TEST_CASE("adam descends w^2 and matches an independent scalar simulation") {
  AdamConfig<double> cfg;
  cfg.lr = 0.1;
  auto w = Tensor<double>::from({1}, {1.0});
  w.set_requires_grad(true);
  Adam<double> opt({w}, cfg);

  // independent simulation of the same recurrence
  double sw = 1.0, sm = 0.0, sv = 0.0;
  double prev = 1.0;
  for (int t = 1; t <= 3; ++t) {
    w.zero_grad();
    auto loss = mul(w, w);
    reshape(loss, {1}).backward();
    opt.step();

    const double g = 2.0 * sw;
    sm = 0.9 * sm + 0.1 * g;
    sv = 0.999 * sv + 0.001 * g * g;
    const double mhat = sm / (1.0 - std::pow(0.9, t));
    const double vhat = sv / (1.0 - std::pow(0.999, t));
    sw -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);

    CHECK(w.data()[0] == doctest::Approx(sw).epsilon(1e-12));
    CHECK(w.data()[0] < prev);
    prev = w.data()[0];
  }
  CHECK(opt.step_count() == 3);
}

TEST_CASE("grad_check on a small linear layer stays within 1e-6") {
  auto x = randn64({4, 6}, 71);
  auto w = randn64({6, 3}, 72).set_requires_grad(true);
  auto b = randn64({3}, 73).set_requires_grad(true);
  auto report = grad_check({{"w", w}, {"b", b}},
                           [&] { return cross_entropy(linear(x, w, b), {0, 1, 2, 1}); });
  CHECK(report.max_rel_err <= 1e-6);
  CHECK(report.entries.size() == 2);
  CHECK(report.exceeding(1e-6).empty());
}

TEST_CASE("checkpoint round-trips tensors bit-exactly") {
  std::mt19937_64 rng(31);
  Checkpoint ckpt;
  ckpt.meta = R"({"kind":"test","version":1})";
  ckpt.tensors.emplace_back("w", Tensor<float>::randn({3, 5}, rng));
  ckpt.tensors.emplace_back("b", Tensor<float>::randn({5}, rng));
  const std::string path = "test_ckpt.tmn";
  save_checkpoint(path, ckpt);
  auto loaded = load_checkpoint(path);
  CHECK(loaded.meta == ckpt.meta);
  REQUIRE(loaded.tensors.size() == 2);
  CHECK(loaded.get("w").shape() == Shape{3, 5});
  CHECK(std::memcmp(loaded.get("w").data(), ckpt.get("w").data(), sizeof(float) * 15) == 0);
  CHECK(std::memcmp(loaded.get("b").data(), ckpt.get("b").data(), sizeof(float) * 5) == 0);
  CHECK_THROWS_AS(loaded.get("missing"), std::out_of_range);
  std::remove(path.c_str());
}

TEST_CASE("tensor invariants") {
  auto t = Tensor<float>::zeros({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(numel(t.shape()) == static_cast<int64_t>(t.values().size()));
  t.set_requires_grad(true);
  t.grad();
  CHECK(t.grad().size() == t.values().size());
  CHECK_THROWS_AS(Tensor<float>::from({2, 2}, {1.f, 2.f, 3.f}), std::invalid_argument);
}

namespace {

// reference attention route via explicit head splitting, kept as the
// independent oracle for the fused kernel
Tensor<double> attention_reference(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v,
                                   int64_t h) {
  const int64_t b = q.dim(0), t = q.dim(1), d = q.dim(2);
  const int64_t dk = d / h;
  auto split = [&](const Tensor<double>& x) { return permute(reshape(x, {b, t, h, dk}), {0, 2, 1, 3}); };
  auto scores = scale(matmul_nt(split(q), split(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
  auto ctx = matmul(softmax(scores, 3), split(v));
  return reshape(permute(ctx, {0, 2, 1, 3}), {b, t, d});
}

}  // namespace

TEST_CASE("fused attention matches the permute-and-matmul reference route") {
  std::mt19937_64 rng(404);
  auto q = Tensor<double>::randn({2, 5, 8}, rng).set_requires_grad(true);
  auto k = Tensor<double>::randn({2, 5, 8}, rng).set_requires_grad(true);
  auto v = Tensor<double>::randn({2, 5, 8}, rng).set_requires_grad(true);

  std::vector<double> probs;
  auto fused = attention_core(q, k, v, 2, &probs);
  auto ref = attention_reference(q, k, v, 2);
  REQUIRE(fused.shape() == ref.shape());
  for (int64_t i = 0; i < fused.size(); ++i)
    CHECK(fused.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
  // probability rows normalize
  for (size_t r = 0; r < probs.size() / 5; ++r) {
    double total = 0;
    for (int j = 0; j < 5; ++j) total += probs[r * 5 + j];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }

  auto r_weight = Tensor<double>::randn({2, 5, 8}, rng);
  auto report = grad_check({{"q", q}, {"k", k}, {"v", v}},
                           [&] { return sum(mul(attention_core(q, k, v, 2), r_weight)); });
  CHECK(report.max_rel_err <= 1e-6);

  // gradients agree with the reference route too
  q.zero_grad(); k.zero_grad(); v.zero_grad();
  sum(mul(attention_core(q, k, v, 2), r_weight)).backward();
  auto gq = q.grad();
  q.zero_grad(); k.zero_grad(); v.zero_grad();
  sum(mul(attention_reference(q, k, v, 2), r_weight)).backward();
  for (size_t i = 0; i < gq.size(); ++i) CHECK(gq[i] == doctest::Approx(q.grad()[i]).epsilon(1e-10));
}
