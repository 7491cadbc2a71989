#pragma once

// Transformer encoder building blocks shared by the modular and monolithic
// models: multi-head self-attention, post-norm encoder layer, the three
// program-token embedding tables, and the grid-feature tokenizer.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tmn/tensor.hpp"

namespace tmn {

struct ModelConfig {
  int64_t d_model = 64;
  int64_t n_heads = 4;
  int64_t d_ff = 256;
  int64_t n_layers_monolithic = 4;
  int64_t layers_per_module = 1;  // K
  float dropout = 0.1f;

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
      throw std::invalid_argument("config: d_model " + std::to_string(d_model) +
                                  " not divisible by n_heads " + std::to_string(n_heads));
    if (layers_per_module < 1) throw std::invalid_argument("config: K must be >= 1");
    if (n_layers_monolithic < 1) throw std::invalid_argument("config: n_layers_monolithic must be >= 1");
    if (dropout < 0.0f || dropout >= 1.0f) throw std::invalid_argument("config: dropout must lie in [0,1)");
  }
};

enum class TokenKind : uint8_t { Visual, Head, Word };

// A batch of sequences that share layout: same length, token kinds, segment
// and position indices; only the embeddings differ per batch item.
template <typename T>
struct TokenSequence {
  Tensor<T> x;  // [B, T, d_model]
  std::vector<TokenKind> kinds;
  std::vector<int> segment_ids;
  std::vector<int> positions;  // word position; -1 for visual/head tokens

  int64_t batch() const { return x.dim(0); }
  int64_t length() const { return x.dim(1); }
  int64_t width() const { return x.dim(2); }

  void check() const {
    if (x.rank() != 3) throw std::invalid_argument("sequence: embeddings must be [B,T,d]");
    if (static_cast<int64_t>(kinds.size()) != length() ||
        static_cast<int64_t>(segment_ids.size()) != length() ||
        static_cast<int64_t>(positions.size()) != length())
      throw std::invalid_argument("sequence: metadata length does not match token count");
  }

  int64_t count(TokenKind k) const {
    int64_t n = 0;
    for (auto kk : kinds) n += (kk == k);
    return n;
  }
};

struct ForwardStats {
  int64_t encoder_layers = 0;  // incremented once per executed encoder layer
};

struct AttentionRecord {
  std::string label;
  int64_t t = 0;
  std::vector<double> head_avg;  // [t*t], batch item 0, averaged across heads
  std::vector<TokenKind> kinds;
};

struct ForwardTrace {
  std::vector<AttentionRecord> records;
};

// Dropout state for training; forward passes run deterministic eval mode
// when no context is supplied.
template <typename T>
struct TrainContext {
  std::mt19937_64 rng;
  T dropout = T(0);

  explicit TrainContext(uint64_t seed, T p) : rng(seed), dropout(p) {}
};

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, TrainContext<T>* ctx) {
  if (!ctx || ctx->dropout <= T(0)) return x;
  return dropout(x, ctx->dropout, ctx->rng);
}

// ---------------------------------------------------------------------------

template <typename T>
struct EncoderLayerParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln1_g, ln1_b;
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> ln2_g, ln2_b;

  static EncoderLayerParams init(const ModelConfig& cfg, std::mt19937_64& rng) {
    const int64_t d = cfg.d_model, f = cfg.d_ff;
    const T sd = T(0.02);
    EncoderLayerParams p;
    p.wq = Tensor<T>::randn({d, d}, rng, sd).set_requires_grad(true);
    p.bq = Tensor<T>::zeros({d}).set_requires_grad(true);
    p.wk = Tensor<T>::randn({d, d}, rng, sd).set_requires_grad(true);
    p.bk = Tensor<T>::zeros({d}).set_requires_grad(true);
    p.wv = Tensor<T>::randn({d, d}, rng, sd).set_requires_grad(true);
    p.bv = Tensor<T>::zeros({d}).set_requires_grad(true);
    p.wo = Tensor<T>::randn({d, d}, rng, sd).set_requires_grad(true);
    p.bo = Tensor<T>::zeros({d}).set_requires_grad(true);
    p.ln1_g = Tensor<T>::full({d}, T(1)).set_requires_grad(true);
    p.ln1_b = Tensor<T>::zeros({d}).set_requires_grad(true);
    p.w1 = Tensor<T>::randn({d, f}, rng, sd).set_requires_grad(true);
    p.b1 = Tensor<T>::zeros({f}).set_requires_grad(true);
    p.w2 = Tensor<T>::randn({f, d}, rng, sd).set_requires_grad(true);
    p.b2 = Tensor<T>::zeros({d}).set_requires_grad(true);
    p.ln2_g = Tensor<T>::full({d}, T(1)).set_requires_grad(true);
    p.ln2_b = Tensor<T>::zeros({d}).set_requires_grad(true);
    return p;
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".wq", wq);
    fn(prefix + ".bq", bq);
    fn(prefix + ".wk", wk);
    fn(prefix + ".bk", bk);
    fn(prefix + ".wv", wv);
    fn(prefix + ".bv", bv);
    fn(prefix + ".wo", wo);
    fn(prefix + ".bo", bo);
    fn(prefix + ".ln1_g", ln1_g);
    fn(prefix + ".ln1_b", ln1_b);
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
    fn(prefix + ".ln2_g", ln2_g);
    fn(prefix + ".ln2_b", ln2_b);
  }
};

// Full bidirectional attention, no masking. Returns [B, T, d].
template <typename T>
Tensor<T> multi_head_attention(const TokenSequence<T>& seq, const EncoderLayerParams<T>& p, int64_t n_heads,
                               ForwardTrace* trace = nullptr, const std::string& trace_label = {}) {
  seq.check();
  const int64_t t = seq.length(), d = seq.width();
  if (d % n_heads != 0)
    throw std::invalid_argument("attention: width " + std::to_string(d) + " not divisible by " +
                                std::to_string(n_heads) + " heads");

  auto q = linear(seq.x, p.wq, p.bq);
  auto k = linear(seq.x, p.wk, p.bk);
  auto v = linear(seq.x, p.wv, p.bv);

  std::vector<T> probs;
  auto ctx = attention_core(q, k, v, n_heads, trace ? &probs : nullptr);

  if (trace) {
    AttentionRecord rec;
    rec.label = trace_label;
    rec.t = t;
    rec.kinds = seq.kinds;
    rec.head_avg.assign(static_cast<size_t>(t * t), 0.0);
    // batch item 0, averaged across heads
    for (int64_t h = 0; h < n_heads; ++h)
      for (int64_t i = 0; i < t * t; ++i)
        rec.head_avg[static_cast<size_t>(i)] += static_cast<double>(probs[static_cast<size_t>(h * t * t + i)]);
    for (auto& vcell : rec.head_avg) vcell /= static_cast<double>(n_heads);
    trace->records.push_back(std::move(rec));
  }
  return linear(ctx, p.wo, p.bo);
}

// Post-norm encoder layer: LN(x + MHA(x)), then LN(x + FF(x)).
template <typename T>
TokenSequence<T> encoder_layer(const TokenSequence<T>& seq, const EncoderLayerParams<T>& p, const ModelConfig& cfg,
                               ForwardStats* stats = nullptr, ForwardTrace* trace = nullptr,
                               const std::string& trace_label = {}, TrainContext<T>* ctx = nullptr) {
  auto attn_out = multi_head_attention(seq, p, cfg.n_heads, trace, trace_label);
  auto x = layer_norm(add(seq.x, maybe_dropout(attn_out, ctx)), p.ln1_g, p.ln1_b, T(1e-5));
  auto ff = linear(gelu(linear(x, p.w1, p.b1)), p.w2, p.b2);
  auto y = layer_norm(add(x, maybe_dropout(ff, ctx)), p.ln2_g, p.ln2_b, T(1e-5));
  if (stats) stats->encoder_layers += 1;
  TokenSequence<T> out = seq;
  out.x = y;
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
struct EmbeddingTables {
  Tensor<T> word;      // [V, d]
  Tensor<T> segment;   // [2, d]  thread index
  Tensor<T> position;  // [P, d]  word position
  Tensor<T> ln_g, ln_b;  // normalization of the summed embedding

  static EmbeddingTables init(int64_t vocab, int64_t max_pos, int64_t d, std::mt19937_64& rng) {
    EmbeddingTables e;
    e.word = Tensor<T>::randn({vocab, d}, rng, T(0.02)).set_requires_grad(true);
    e.segment = Tensor<T>::randn({2, d}, rng, T(0.02)).set_requires_grad(true);
    e.position = Tensor<T>::randn({max_pos, d}, rng, T(0.02)).set_requires_grad(true);
    e.ln_g = Tensor<T>::full({d}, T(1)).set_requires_grad(true);
    e.ln_b = Tensor<T>::zeros({d}).set_requires_grad(true);
    return e;
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".word", word);
    fn(prefix + ".segment", segment);
    fn(prefix + ".position", position);
    fn(prefix + ".ln_g", ln_g);
    fn(prefix + ".ln_b", ln_b);
  }
};

// Sum of word, segment and position lookups, normalized -> [n, d].
template <typename T>
Tensor<T> embed_program_tokens(const EmbeddingTables<T>& tables, const std::vector<int>& words,
                               const std::vector<int>& segments, const std::vector<int>& positions) {
  if (words.size() != segments.size() || words.size() != positions.size())
    throw std::invalid_argument("embed: ids, segments and positions must have equal length");
  auto summed = add(add(embedding(tables.word, words), embedding(tables.segment, segments)),
                    embedding(tables.position, positions));
  return layer_norm(summed, tables.ln_g, tables.ln_b, T(1e-5));
}

// ---------------------------------------------------------------------------
// Grid featurizer: per-cell linear projection plus a fixed 2-d sinusoidal
// positional encoding, flattened row-major.

template <typename T>
struct GridEncoder {
  Tensor<T> proj_w;  // [d_feat, d_model]
  Tensor<T> proj_b;  // [d_model]
  Tensor<T> ln_g, ln_b;

  static GridEncoder init(int64_t d_feat, int64_t d_model, std::mt19937_64& rng) {
    GridEncoder g;
    g.proj_w = Tensor<T>::randn({d_feat, d_model}, rng, T(0.02)).set_requires_grad(true);
    g.proj_b = Tensor<T>::zeros({d_model}).set_requires_grad(true);
    g.ln_g = Tensor<T>::full({d_model}, T(1)).set_requires_grad(true);
    g.ln_b = Tensor<T>::zeros({d_model}).set_requires_grad(true);
    return g;
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".proj_w", proj_w);
    fn(prefix + ".proj_b", proj_b);
    fn(prefix + ".ln_g", ln_g);
    fn(prefix + ".ln_b", ln_b);
  }
};

// Half the channels encode the row index, half the column index. Amplitude
// sits at the embedding init scale so content and position stay comparable.
template <typename T>
std::vector<T> sinusoidal_grid_encoding(int64_t h, int64_t w, int64_t d, T amplitude = T(0.3)) {
  std::vector<T> pe(static_cast<size_t>(h * w * d), T(0));
  const int64_t half = d / 2;
  auto fill = [&](T* dst, int64_t pos, int64_t span) {
    for (int64_t i = 0; i < span; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i / 2) / static_cast<double>(span));
      const double angle = static_cast<double>(pos) * freq;
      dst[i] = amplitude * static_cast<T>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  };
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      T* cell = pe.data() + (r * w + c) * d;
      fill(cell, r, half);
      fill(cell + half, c, d - half);
    }
  return pe;
}

// grid: [B, H, W, d_feat] -> visual tokens [B, H*W, d_model], row-major.
template <typename T>
Tensor<T> encode_grid_features(const GridEncoder<T>& enc, const Tensor<T>& grid) {
  if (grid.rank() != 4) throw std::invalid_argument("grid: expected [B,H,W,d_feat], got " + shape_str(grid.shape()));
  const int64_t b = grid.dim(0), h = grid.dim(1), w = grid.dim(2), df = grid.dim(3);
  if (df != enc.proj_w.dim(0))
    throw std::invalid_argument("grid: feature width " + std::to_string(df) + " does not match projection " +
                                shape_str(enc.proj_w.shape()));
  const int64_t d = enc.proj_w.dim(1);
  auto flat = reshape(grid, {b, h * w, df});
  auto tokens = linear(flat, enc.proj_w, enc.proj_b);  // [B, H*W, d]
  auto pe_cell = sinusoidal_grid_encoding<T>(h, w, d);
  std::vector<T> pe_batch(static_cast<size_t>(b) * pe_cell.size());
  for (int64_t i = 0; i < b; ++i)
    std::copy(pe_cell.begin(), pe_cell.end(), pe_batch.begin() + static_cast<int64_t>(pe_cell.size()) * i);
  auto located = add(tokens, Tensor<T>::from({b, h * w, d}, std::move(pe_batch)));
  return layer_norm(located, enc.ln_g, enc.ln_b, T(1e-5));
}

}  // namespace tmn
