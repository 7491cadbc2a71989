#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <random>

#include "tmn/grad_check.hpp"
#include "tmn/transformer.hpp"

using namespace tmn;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 4;
  cfg.d_ff = 32;
  cfg.dropout = 0.0f;
  return cfg;
}

template <typename T>
TokenSequence<T> make_seq(Tensor<T> x) {
  TokenSequence<T> s;
  s.x = std::move(x);
  const auto t = static_cast<size_t>(s.length());
  s.kinds.assign(t, TokenKind::Visual);
  s.segment_ids.assign(t, 0);
  s.positions.assign(t, -1);
  return s;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = small_config();
  cfg.validate();
  cfg.n_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.layers_per_module = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("attention with one token reduces to value/output projection") {
  auto cfg = small_config();
  std::mt19937_64 rng(1);
  auto p = EncoderLayerParams<double>::init(cfg, rng);
  auto seq = make_seq(Tensor<double>::randn({1, 1, cfg.d_model}, rng));
  auto out = multi_head_attention(seq, p, cfg.n_heads);
  auto expected = linear(linear(seq.x, p.wv, p.bv), p.wo, p.bo);
  for (int64_t i = 0; i < out.size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-12));
}

TEST_CASE("attention rows sum to one") {
  auto cfg = small_config();
  std::mt19937_64 rng(2);
  auto p = EncoderLayerParams<float>::init(cfg, rng);
  auto seq = make_seq(Tensor<float>::randn({2, 7, cfg.d_model}, rng));
  ForwardTrace trace;
  multi_head_attention(seq, p, cfg.n_heads, &trace, "probe");
  REQUIRE(trace.records.size() == 1);
  const auto& rec = trace.records[0];
  CHECK(rec.t == 7);
  CHECK(rec.label == "probe");
  for (int64_t r = 0; r < rec.t; ++r) {
    double total = 0;
    for (int64_t c = 0; c < rec.t; ++c) total += rec.head_avg[static_cast<size_t>(r * rec.t + c)];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("attention is permutation-equivariant without positions") {
  auto cfg = small_config();
  std::mt19937_64 rng(3);
  auto p = EncoderLayerParams<double>::init(cfg, rng);
  auto base = Tensor<double>::randn({1, 3, cfg.d_model}, rng);
  auto out_base = multi_head_attention(make_seq(base.detach()), p, cfg.n_heads);

  const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  const int64_t d = cfg.d_model;
  for (const auto& perm : perms) {
    std::vector<double> data(static_cast<size_t>(3 * d));
    for (int i = 0; i < 3; ++i)
      std::copy(base.data() + perm[i] * d, base.data() + (perm[i] + 1) * d, data.begin() + i * d);
    auto out_perm = multi_head_attention(make_seq(Tensor<double>::from({1, 3, d}, data)), p, cfg.n_heads);
    for (int i = 0; i < 3; ++i)
      for (int64_t j = 0; j < d; ++j)
        CHECK(out_perm.data()[i * d + j] == doctest::Approx(out_base.data()[perm[i] * d + j]).epsilon(1e-9));
  }
}

TEST_CASE("attention is not permutation-equivariant once positions are added") {
  auto cfg = small_config();
  std::mt19937_64 rng(4);
  auto p = EncoderLayerParams<double>::init(cfg, rng);
  const int64_t d = cfg.d_model;
  auto content = Tensor<double>::randn({1, 3, d}, rng);
  auto pos = Tensor<double>::randn({1, 3, d}, rng);

  auto out = multi_head_attention(make_seq(add(content, pos)), p, cfg.n_heads);

  // swap the first two tokens' content, keep position information in place
  std::vector<double> swapped(content.values());
  for (int64_t j = 0; j < d; ++j) std::swap(swapped[static_cast<size_t>(j)], swapped[static_cast<size_t>(d + j)]);
  auto out_sw = multi_head_attention(make_seq(add(Tensor<double>::from({1, 3, d}, swapped), pos)), p, cfg.n_heads);

  // the swapped-output rows must not equal a mere swap of the original rows
  double diff = 0;
  for (int64_t j = 0; j < d; ++j) {
    diff += std::fabs(out_sw.data()[j] - out.data()[d + j]);
    diff += std::fabs(out_sw.data()[d + j] - out.data()[j]);
  }
  CHECK(diff > 1e-4);
}

TEST_CASE("encoder layer preserves shape for T in {1, 6, 151}") {
  auto cfg = small_config();
  std::mt19937_64 rng(5);
  auto p = EncoderLayerParams<float>::init(cfg, rng);
  for (int64_t t : {int64_t(1), int64_t(6), int64_t(151)}) {
    auto seq = make_seq(Tensor<float>::randn({1, t, cfg.d_model}, rng));
    ForwardStats stats;
    auto out = encoder_layer(seq, p, cfg, &stats);
    CHECK(out.x.shape() == Shape{1, t, cfg.d_model});
    CHECK(stats.encoder_layers == 1);
  }
}

TEST_CASE("zeroed output projections leave only the normalization path") {
  auto cfg = small_config();
  std::mt19937_64 rng(6);
  auto p = EncoderLayerParams<double>::init(cfg, rng);
  for (auto* t : {&p.wo, &p.bo, &p.w2, &p.b2})
    std::fill(t->values().begin(), t->values().end(), 0.0);
  auto seq = make_seq(Tensor<double>::randn({1, 5, cfg.d_model}, rng));
  auto out = encoder_layer(seq, p, cfg);
  auto ln1 = layer_norm(seq.x, p.ln1_g, p.ln1_b, 1e-5);
  auto expected = layer_norm(ln1, p.ln2_g, p.ln2_b, 1e-5);
  for (int64_t i = 0; i < out.x.size(); ++i)
    CHECK(out.x.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-12));
}

TEST_CASE("single attention head gradients within 1e-4") {
  ModelConfig cfg = small_config();
  cfg.n_heads = 1;
  for (uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(seed + 10);
    auto p = EncoderLayerParams<double>::init(cfg, rng);
    auto seq = make_seq(Tensor<double>::randn({1, 4, cfg.d_model}, rng));
    std::vector<std::pair<std::string, Tensor<double>>> params;
    p.visit("head", [&](const std::string& n, Tensor<double>& t) { params.emplace_back(n, t); });
    GradCheckOptions opt;
    opt.seed = seed;
    auto report = grad_check(
        params, [&] { return sum(mul(multi_head_attention(seq, p, cfg.n_heads), multi_head_attention(seq, p, cfg.n_heads))); },
        opt);
    CHECK(report.max_rel_err <= 1e-4);
  }
}

TEST_CASE("full encoder layer gradients within 1e-3") {
  auto cfg = small_config();
  std::mt19937_64 rng(20);
  auto p = EncoderLayerParams<double>::init(cfg, rng);
  auto seq = make_seq(Tensor<double>::randn({1, 6, cfg.d_model}, rng));
  // fixed random projection: sum(out^2) of a layer-norm output is nearly
  // constant, which starves finite differences of signal
  auto r = Tensor<double>::randn({1, 6, cfg.d_model}, rng);
  std::vector<std::pair<std::string, Tensor<double>>> params;
  p.visit("layer", [&](const std::string& n, Tensor<double>& t) { params.emplace_back(n, t); });
  auto report = grad_check(params, [&] {
    auto out = encoder_layer(seq, p, cfg);
    return sum(mul(out.x, r));
  });
  CHECK(report.max_rel_err <= 1e-3);
}

TEST_CASE("program token embedding is the sum of three lookups") {
  std::mt19937_64 rng(30);
  auto tables = EmbeddingTables<double>::init(12, 8, 16, rng);
  auto e = embed_program_tokens(tables, {3, 3}, {0, 1}, {2, 2});
  // same word, different segment: rows differ by exactly the segment row difference
  for (int64_t j = 0; j < 16; ++j) {
    const double want = tables.segment.data()[j] - tables.segment.data()[16 + j];
    CHECK(e.data()[j] - e.data()[16 + j] == doctest::Approx(want).epsilon(1e-12));
  }
  // definitional recomputation
  auto one = embed_program_tokens(tables, {5}, {1}, {7});
  for (int64_t j = 0; j < 16; ++j) {
    const double want = tables.word.data()[5 * 16 + j] + tables.segment.data()[16 + j] + tables.position.data()[7 * 16 + j];
    CHECK(one.data()[j] == doctest::Approx(want).epsilon(1e-12));
  }
  CHECK_THROWS_AS(embed_program_tokens(tables, {12}, {0}, {0}), std::out_of_range);
  CHECK_THROWS_AS(embed_program_tokens(tables, {0}, {0}, {8}), std::out_of_range);
}

TEST_CASE("grid featurizer shapes, injectivity and row-major order") {
  std::mt19937_64 rng(40);
  auto enc = GridEncoder<double>::init(5, 16, rng);

  auto single = encode_grid_features(enc, Tensor<double>::randn({1, 1, 1, 5}, rng));
  CHECK(single.shape() == Shape{1, 1, 16});

  // identical content, different cells -> different tokens
  std::vector<double> same(2 * 5, 0.0);
  for (int i = 0; i < 5; ++i) same[static_cast<size_t>(i)] = same[static_cast<size_t>(5 + i)] = 0.3 * i;
  auto two = encode_grid_features(enc, Tensor<double>::from({1, 1, 2, 5}, same));
  double diff = 0;
  for (int j = 0; j < 16; ++j) diff += std::fabs(two.data()[j] - two.data()[16 + j]);
  CHECK(diff > 1e-6);

  // 5x5 row-major: a marker at (r,c) moves exactly token r*5+c
  auto base_grid = Tensor<double>::zeros({1, 5, 5, 5});
  auto base_tokens = encode_grid_features(enc, base_grid);
  CHECK(base_tokens.shape() == Shape{1, 25, 16});
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      auto g = Tensor<double>::zeros({1, 5, 5, 5});
      g.data()[(r * 5 + c) * 5 + 2] = 1.0;
      auto tokens = encode_grid_features(enc, g);
      for (int idx = 0; idx < 25; ++idx) {
        double delta = 0;
        for (int j = 0; j < 16; ++j)
          delta += std::fabs(tokens.data()[idx * 16 + j] - base_tokens.data()[idx * 16 + j]);
        if (idx == r * 5 + c)
          CHECK(delta > 1e-6);
        else
          CHECK(delta == 0.0);
      }
    }
}

TEST_CASE("forward is deterministic with dropout zero and varies with dropout on") {
  auto cfg = small_config();
  std::mt19937_64 rng(50);
  auto p = EncoderLayerParams<float>::init(cfg, rng);
  auto seq = make_seq(Tensor<float>::randn({1, 6, cfg.d_model}, rng));
  auto a = encoder_layer(seq, p, cfg);
  auto b = encoder_layer(seq, p, cfg);
  CHECK(std::memcmp(a.x.data(), b.x.data(), sizeof(float) * static_cast<size_t>(a.x.size())) == 0);

  TrainContext<float> ctx(99, 0.5f);
  auto c = encoder_layer(seq, p, cfg, nullptr, nullptr, {}, &ctx);
  bool differs = std::memcmp(a.x.data(), c.x.data(), sizeof(float) * static_cast<size_t>(a.x.size())) != 0;
  CHECK(differs);
}
