#pragma once

// The question-specific modular model (TMN-Stack / TMN-Tree) and the
// monolithic baseline family, with batched forward paths. Samples that share
// a program shape execute together; only features and argument words differ
// per batch item.

#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tmn/checkpoint.hpp"
#include "tmn/dataset.hpp"
#include "tmn/generator.hpp"
#include "tmn/library.hpp"
#include "tmn/symbolic.hpp"
#include "tmn/transformer.hpp"

namespace tmn {

enum class ModelKind { TmnStack, TmnTree, Transformer, TransformerPR, TransformerPRVL, TransformerPRVLST };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::TmnStack: return "tmn_stack";
    case ModelKind::TmnTree: return "tmn_tree";
    case ModelKind::Transformer: return "transformer";
    case ModelKind::TransformerPR: return "transformer_pr";
    case ModelKind::TransformerPRVL: return "transformer_pr_vl";
    case ModelKind::TransformerPRVLST: return "transformer_pr_vl_st";
  }
  return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "tmn_stack") return ModelKind::TmnStack;
  if (s == "tmn_tree") return ModelKind::TmnTree;
  if (s == "transformer") return ModelKind::Transformer;
  if (s == "transformer_pr") return ModelKind::TransformerPR;
  if (s == "transformer_pr_vl") return ModelKind::TransformerPRVL;
  if (s == "transformer_pr_vl_st") return ModelKind::TransformerPRVLST;
  throw std::invalid_argument("model: unknown kind '" + s + "'");
}

inline bool is_tmn(ModelKind k) { return k == ModelKind::TmnStack || k == ModelKind::TmnTree; }

struct Lexicon {
  std::vector<std::string> words;
  std::unordered_map<std::string, int> index;

  static Lexicon build(const SubTaskCatalog& catalog = SubTaskCatalog::default26()) {
    Lexicon lex;
    lex.words = build_lexicon(catalog);
    for (size_t i = 0; i < lex.words.size(); ++i) lex.index.emplace(lex.words[i], static_cast<int>(i));
    return lex;
  }
  int id(const std::string& w) const {
    auto it = index.find(w);
    if (it == index.end()) throw std::out_of_range("lexicon: '" + w + "' is out of vocabulary");
    return it->second;
  }
  int64_t size() const { return static_cast<int64_t>(words.size()); }
};

constexpr int64_t kMaxWordPositions = 64;

// ---------------------------------------------------------------------------
// models

template <typename T>
struct TmnModel {
  ModelConfig cfg;
  ModuleLibrary library;
  Lexicon lexicon;
  int n_answers = 0;
  EmbeddingTables<T> emb;
  GridEncoder<T> grid;
  std::vector<std::vector<EncoderLayerParams<T>>> modules;  // [M][K]
  Tensor<T> cls_w, cls_b;

  static TmnModel init(const ModelConfig& cfg, ModuleLibrary library, Lexicon lexicon, int n_answers,
                       uint64_t seed) {
    cfg.validate();
    TmnModel m;
    m.cfg = cfg;
    m.library = std::move(library);
    m.lexicon = std::move(lexicon);
    m.n_answers = n_answers;
    std::mt19937_64 rng(mix_seed(seed, 0x7e11));
    m.emb = EmbeddingTables<T>::init(m.lexicon.size(), kMaxWordPositions, cfg.d_model, rng);
    m.grid = GridEncoder<T>::init(kFeatureDim, cfg.d_model, rng);
    for (int mod = 0; mod < m.library.num_modules; ++mod) {
      std::vector<EncoderLayerParams<T>> stack;
      for (int64_t k = 0; k < cfg.layers_per_module; ++k) stack.push_back(EncoderLayerParams<T>::init(cfg, rng));
      m.modules.push_back(std::move(stack));
    }
    m.cls_w = Tensor<T>::randn({cfg.d_model, n_answers}, rng, T(0.02)).set_requires_grad(true);
    m.cls_b = Tensor<T>::zeros({n_answers}).set_requires_grad(true);
    return m;
  }

  template <typename Fn>
  void visit_params(Fn&& fn) {
    emb.visit("emb", fn);
    grid.visit("grid", fn);
    for (size_t mod = 0; mod < modules.size(); ++mod)
      for (size_t k = 0; k < modules[mod].size(); ++k)
        modules[mod][k].visit("module" + std::to_string(mod) + ".layer" + std::to_string(k), fn);
    fn(std::string("cls.w"), cls_w);
    fn(std::string("cls.b"), cls_b);
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    visit_params([&](const std::string&, Tensor<T>& t) { out.push_back(t); });
    return out;
  }
};

template <typename T>
struct BaselineModel {
  ModelConfig cfg;
  ModelKind kind = ModelKind::TransformerPR;
  Lexicon lexicon;
  int n_answers = 0;
  EmbeddingTables<T> emb;
  GridEncoder<T> grid;
  std::vector<EncoderLayerParams<T>> layers;  // n_layers_monolithic, shared
  Tensor<T> cls_w, cls_b;

  static BaselineModel init(const ModelConfig& cfg, ModelKind kind, Lexicon lexicon, int n_answers, uint64_t seed) {
    cfg.validate();
    if (is_tmn(kind)) throw std::invalid_argument("baseline: " + to_string(kind) + " is not a baseline kind");
    BaselineModel m;
    m.cfg = cfg;
    m.kind = kind;
    m.lexicon = std::move(lexicon);
    m.n_answers = n_answers;
    std::mt19937_64 rng(mix_seed(seed, 0x7e11));
    m.emb = EmbeddingTables<T>::init(m.lexicon.size(), kMaxWordPositions, cfg.d_model, rng);
    m.grid = GridEncoder<T>::init(kFeatureDim, cfg.d_model, rng);
    for (int64_t l = 0; l < cfg.n_layers_monolithic; ++l) m.layers.push_back(EncoderLayerParams<T>::init(cfg, rng));
    m.cls_w = Tensor<T>::randn({cfg.d_model, n_answers}, rng, T(0.02)).set_requires_grad(true);
    m.cls_b = Tensor<T>::zeros({n_answers}).set_requires_grad(true);
    return m;
  }

  template <typename Fn>
  void visit_params(Fn&& fn) {
    emb.visit("emb", fn);
    grid.visit("grid", fn);
    for (size_t l = 0; l < layers.size(); ++l) layers[l].visit("layer" + std::to_string(l), fn);
    fn(std::string("cls.w"), cls_w);
    fn(std::string("cls.b"), cls_b);
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    visit_params([&](const std::string&, Tensor<T>& t) { out.push_back(t); });
    return out;
  }
};

// ---------------------------------------------------------------------------
// batched inputs: one group of samples sharing a program shape

// groups may batch together iff this key matches (module routing, token
// layout and question length all derive from it)
inline std::string program_shape_key(const Program& p) {
  std::string key;
  for (const auto& n : p.nodes) {
    key += n.op;
    key += ';';
  }
  return key;
}

template <typename T>
struct ModelInputs {
  int64_t batch = 1;
  int grid_h = 5, grid_w = 5;
  Tensor<T> features;  // [B, H, W, d_feat]
  Program shape;       // representative program (ops shared across the batch)
  ExecutionPlan plan;
  std::vector<std::vector<int>> step_ids;  // per plan step: [B * n_tokens(step)] word ids
  std::vector<int> question_ids;           // [B * n_question] for the raw-question baseline
  int n_question_tokens = 0;
  std::vector<int> labels;                 // [B] answer ids, empty when unused
};

inline std::vector<std::string> split_words(const std::string& text) {
  std::istringstream ss(text);
  std::vector<std::string> out;
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

template <typename T>
ModelInputs<T> make_inputs(const std::vector<const Sample*>& group, const Lexicon& lexicon,
                           PlanStructure structure, const AnswerVocab& answers = AnswerVocab::standard()) {
  if (group.empty()) throw std::invalid_argument("inputs: empty group");
  ModelInputs<T> in;
  in.batch = static_cast<int64_t>(group.size());
  in.shape = group[0]->program;
  in.plan = plan(in.shape, structure);
  in.grid_h = group[0]->scene.h;
  in.grid_w = group[0]->scene.w;

  const std::string key = program_shape_key(in.shape);
  std::vector<T> feat;
  feat.reserve(static_cast<size_t>(in.batch * in.grid_h * in.grid_w * kFeatureDim));
  for (const Sample* s : group) {
    if (program_shape_key(s->program) != key)
      throw std::invalid_argument("inputs: group mixes program shapes");
    if (s->scene.h != in.grid_h || s->scene.w != in.grid_w)
      throw std::invalid_argument("inputs: group mixes grid sizes");
    auto f = featurize(s->scene);
    for (float v : f) feat.push_back(static_cast<T>(v));
    in.labels.push_back(answers.id(s->answer));
  }
  in.features = Tensor<T>::from({in.batch, in.grid_h, in.grid_w, kFeatureDim}, std::move(feat));

  for (const auto& step : in.plan.steps) {
    const auto& node0 = in.shape.nodes[static_cast<size_t>(step.node)];
    std::vector<int> ids;
    for (const Sample* s : group) {
      const auto& node = s->program.nodes[static_cast<size_t>(step.node)];
      ids.push_back(lexicon.id(node.op));
      if (node0.arg) ids.push_back(lexicon.id(*node.arg));
    }
    in.step_ids.push_back(std::move(ids));
  }

  const auto q0 = split_words(group[0]->question);
  in.n_question_tokens = static_cast<int>(q0.size());
  for (const Sample* s : group) {
    const auto q = split_words(s->question);
    if (static_cast<int>(q.size()) != in.n_question_tokens)
      throw std::invalid_argument("inputs: group mixes question lengths");
    for (const auto& w : q) in.question_ids.push_back(lexicon.id(w));
  }
  return in;
}

// ---------------------------------------------------------------------------
// forward paths

template <typename T>
struct ModuleIO {
  Tensor<T> head;    // [B, 1, d]
  Tensor<T> visual;  // [B, HW, d]
};

// arithmetic mean of the visual tokens
template <typename T>
Tensor<T> init_head(const Tensor<T>& visual) {
  if (visual.rank() != 3 || visual.dim(1) < 1)
    throw std::invalid_argument("head: expected [B, T>=1, d] visual tokens, got " + shape_str(visual.shape()));
  return reshape(mean_axis(visual, 1), {visual.dim(0), 1, visual.dim(2)});
}

namespace detail {

template <typename T>
TokenSequence<T> assemble(const std::vector<Tensor<T>>& parts, const std::vector<TokenKind>& kinds,
                          const std::vector<int>& segments, const std::vector<int>& positions) {
  TokenSequence<T> seq;
  seq.x = concat_axis(parts, 1);
  seq.kinds = kinds;
  seq.segment_ids = segments;
  seq.positions = positions;
  seq.check();
  return seq;
}

template <typename T>
void append_meta(std::vector<TokenKind>& kinds, std::vector<int>& segs, std::vector<int>& poss, TokenKind k,
                 int seg, int pos, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    kinds.push_back(k);
    segs.push_back(seg);
    poss.push_back(pos < 0 ? -1 : pos + static_cast<int>(i));
  }
}

// word tokens for one plan step: [B, n_tokens, d], positions restart at 0
template <typename T, typename M>
Tensor<T> step_words(const M& model, const ModelInputs<T>& in, size_t step_idx, int thread, int64_t* n_tokens) {
  const auto& ids = in.step_ids[step_idx];
  const int64_t n = static_cast<int64_t>(ids.size()) / in.batch;
  *n_tokens = n;
  if (n == 0) return Tensor<T>();
  std::vector<int> segs, poss;
  segs.reserve(ids.size());
  poss.reserve(ids.size());
  for (int64_t b = 0; b < in.batch; ++b)
    for (int64_t i = 0; i < n; ++i) {
      segs.push_back(thread);
      poss.push_back(static_cast<int>(i));
    }
  auto e = embed_program_tokens(model.emb, ids, segs, poss);  // [B*n, d]
  return reshape(e, {in.batch, n, model.cfg.d_model});
}

}  // namespace detail

// One module application: [head, visual..., words...] through K encoder
// layers; word-token outputs are discarded.
template <typename T>
ModuleIO<T> run_module(const TmnModel<T>& model, int module_id, const ModuleIO<T>& io, const Tensor<T>& words,
                       int thread, const std::string& label, ForwardStats* stats = nullptr,
                       ForwardTrace* trace = nullptr, TrainContext<T>* ctx = nullptr) {
  if (module_id < 0 || module_id >= static_cast<int>(model.modules.size()))
    throw std::out_of_range("model: module id " + std::to_string(module_id) + " outside library of " +
                            std::to_string(model.modules.size()));
  const int64_t hw = io.visual.dim(1);
  std::vector<Tensor<T>> parts = {io.head, io.visual};
  std::vector<TokenKind> kinds;
  std::vector<int> segs, poss;
  detail::append_meta<T>(kinds, segs, poss, TokenKind::Head, thread, -1, 1);
  detail::append_meta<T>(kinds, segs, poss, TokenKind::Visual, thread, -1, hw);
  int64_t n_words = words.defined() ? words.dim(1) : 0;
  if (n_words > 0) {
    parts.push_back(words);
    detail::append_meta<T>(kinds, segs, poss, TokenKind::Word, thread, 0, n_words);
  }
  auto seq = detail::assemble(parts, kinds, segs, poss);
  for (const auto& layer : model.modules[static_cast<size_t>(module_id)])
    seq = encoder_layer(seq, layer, model.cfg, stats, trace, label, ctx);
  ModuleIO<T> out;
  out.head = slice_axis(seq.x, 1, 0, 1);
  out.visual = slice_axis(seq.x, 1, 1, hw);
  return out;
}

// Merge module: [head0, visual0..., head1, visual1..., words...] with segment
// embeddings marking the two threads; the transformed first set is returned.
template <typename T>
ModuleIO<T> run_merge(const TmnModel<T>& model, int module_id, const ModuleIO<T>& first, const ModuleIO<T>& second,
                      const Tensor<T>& words, const std::string& label, ForwardStats* stats = nullptr,
                      ForwardTrace* trace = nullptr, TrainContext<T>* ctx = nullptr) {
  if (first.visual.dim(1) != second.visual.dim(1))
    throw std::invalid_argument("merge: visual token counts disagree: " + shape_str(first.visual.shape()) + " vs " +
                                shape_str(second.visual.shape()));
  const int64_t hw = first.visual.dim(1);
  const int64_t d = model.cfg.d_model;
  auto seg0 = reshape(embedding(model.emb.segment, {0}), {d});
  auto seg1 = reshape(embedding(model.emb.segment, {1}), {d});
  std::vector<Tensor<T>> parts = {add_bias(first.head, seg0), add_bias(first.visual, seg0),
                                  add_bias(second.head, seg1), add_bias(second.visual, seg1)};
  std::vector<TokenKind> kinds;
  std::vector<int> segs, poss;
  detail::append_meta<T>(kinds, segs, poss, TokenKind::Head, 0, -1, 1);
  detail::append_meta<T>(kinds, segs, poss, TokenKind::Visual, 0, -1, hw);
  detail::append_meta<T>(kinds, segs, poss, TokenKind::Head, 1, -1, 1);
  detail::append_meta<T>(kinds, segs, poss, TokenKind::Visual, 1, -1, hw);
  int64_t n_words = words.defined() ? words.dim(1) : 0;
  if (n_words > 0) {
    parts.push_back(words);
    detail::append_meta<T>(kinds, segs, poss, TokenKind::Word, 0, 0, n_words);
  }
  auto seq = detail::assemble(parts, kinds, segs, poss);
  for (const auto& layer : model.modules[static_cast<size_t>(module_id)])
    seq = encoder_layer(seq, layer, model.cfg, stats, trace, label, ctx);
  ModuleIO<T> out;
  out.head = slice_axis(seq.x, 1, 0, 1);
  out.visual = slice_axis(seq.x, 1, 1, hw);
  return out;
}

template <typename T>
std::string step_label(const Program& shape, const PlanStep& step) {
  const auto& node = shape.nodes[static_cast<size_t>(step.node)];
  std::string label = "step" + std::to_string(step.node) + "_" + node.op;
  if (node.arg) label += "[" + *node.arg + "]";
  return label;
}

// logits [B, C] for the modular model
template <typename T>
Tensor<T> forward_tmn(const TmnModel<T>& model, const ModelInputs<T>& in, ForwardStats* stats = nullptr,
                      ForwardTrace* trace = nullptr, TrainContext<T>* ctx = nullptr) {
  auto visual = encode_grid_features(model.grid, in.features);
  auto head = init_head(visual);
  ModuleIO<T> threads[2] = {{head, visual}, {head, visual}};

  for (size_t si = 0; si < in.plan.steps.size(); ++si) {
    const auto& step = in.plan.steps[si];
    const auto& node = in.shape.nodes[static_cast<size_t>(step.node)];
    const int module_id = model.library.assign(node.op, step.node);
    int64_t n_words = 0;
    auto words = detail::step_words(model, in, si, step.thread, &n_words);
    const std::string label = step_label<T>(in.shape, step);
    if (step.is_merge) {
      threads[0] = run_merge(model, module_id, threads[0], threads[1], words, label, stats, trace, ctx);
    } else {
      threads[step.thread] = run_module(model, module_id, threads[step.thread], words, step.thread, label,
                                        stats, trace, ctx);
    }
  }
  auto final_head = reshape(threads[0].head, {in.batch, model.cfg.d_model});
  return linear(final_head, model.cls_w, model.cls_b);
}

// logits [B, C] for the monolithic baselines
template <typename T>
Tensor<T> forward_baseline(const BaselineModel<T>& model, const ModelInputs<T>& in, ForwardStats* stats = nullptr,
                           ForwardTrace* trace = nullptr, TrainContext<T>* ctx = nullptr) {
  const int64_t d = model.cfg.d_model;
  auto visual = encode_grid_features(model.grid, in.features);
  auto head = init_head(visual);
  const int64_t hw = visual.dim(1);

  if (model.kind == ModelKind::TransformerPRVLST) {
    // split tokens: layer t sees only step t's program tokens
    ModuleIO<T> io{head, visual};
    for (size_t si = 0; si < in.plan.steps.size(); ++si) {
      const auto& step = in.plan.steps[si];
      int64_t n_words = 0;
      auto words = detail::step_words(model, in, si, step.thread, &n_words);
      std::vector<Tensor<T>> parts = {io.head, io.visual};
      std::vector<TokenKind> kinds;
      std::vector<int> segs, poss;
      detail::append_meta<T>(kinds, segs, poss, TokenKind::Head, 0, -1, 1);
      detail::append_meta<T>(kinds, segs, poss, TokenKind::Visual, 0, -1, hw);
      if (n_words > 0) {
        parts.push_back(words);
        detail::append_meta<T>(kinds, segs, poss, TokenKind::Word, step.thread, 0, n_words);
      }
      auto seq = detail::assemble(parts, kinds, segs, poss);
      const auto& layer = model.layers[si % model.layers.size()];
      seq = encoder_layer(seq, layer, model.cfg, stats, trace, step_label<T>(in.shape, step), ctx);
      io.head = slice_axis(seq.x, 1, 0, 1);
      io.visual = slice_axis(seq.x, 1, 1, hw);
    }
    auto final_head = reshape(io.head, {in.batch, d});
    return linear(final_head, model.cls_w, model.cls_b);
  }

  // one token sequence ran through the shared stack
  std::vector<Tensor<T>> parts = {head, visual};
  std::vector<TokenKind> kinds;
  std::vector<int> segs, poss;
  detail::append_meta<T>(kinds, segs, poss, TokenKind::Head, 0, -1, 1);
  detail::append_meta<T>(kinds, segs, poss, TokenKind::Visual, 0, -1, hw);

  if (model.kind == ModelKind::Transformer) {
    if (in.n_question_tokens > 0) {
      std::vector<int> wsegs, wposs;
      for (int64_t b = 0; b < in.batch; ++b)
        for (int i = 0; i < in.n_question_tokens; ++i) {
          wsegs.push_back(0);
          wposs.push_back(i);
        }
      auto words = reshape(embed_program_tokens(model.emb, in.question_ids, wsegs, wposs),
                           {in.batch, in.n_question_tokens, d});
      parts.push_back(words);
      detail::append_meta<T>(kinds, segs, poss, TokenKind::Word, 0, 0, in.n_question_tokens);
    }
  } else {
    // flattened program tokens, global positions, thread-index segments
    std::vector<int> ids, wsegs, wposs;
    std::vector<int> step_token_counts;
    int total = 0;
    for (size_t si = 0; si < in.plan.steps.size(); ++si) {
      const int n = static_cast<int>(in.step_ids[si].size() / in.batch);
      step_token_counts.push_back(n);
      total += n;
    }
    for (int64_t b = 0; b < in.batch; ++b) {
      int pos = 0;
      for (size_t si = 0; si < in.plan.steps.size(); ++si) {
        const int n = step_token_counts[si];
        for (int i = 0; i < n; ++i) {
          ids.push_back(in.step_ids[si][static_cast<size_t>(b * n + i)]);
          wsegs.push_back(in.plan.steps[si].thread);
          wposs.push_back(pos++);
        }
      }
    }
    if (total > 0) {
      auto words = reshape(embed_program_tokens(model.emb, ids, wsegs, wposs), {in.batch, total, d});
      parts.push_back(words);
      int pos = 0;
      for (size_t si = 0; si < in.plan.steps.size(); ++si)
        for (int i = 0; i < step_token_counts[si]; ++i) {
          kinds.push_back(TokenKind::Word);
          segs.push_back(in.plan.steps[si].thread);
          poss.push_back(pos++);
        }
    }
  }

  auto seq = detail::assemble(parts, kinds, segs, poss);
  const int64_t n_layers = model.kind == ModelKind::TransformerPRVL
                               ? static_cast<int64_t>(in.plan.steps.size())
                               : model.cfg.n_layers_monolithic;
  for (int64_t l = 0; l < n_layers; ++l) {
    const auto& layer = model.layers[static_cast<size_t>(l % static_cast<int64_t>(model.layers.size()))];
    seq = encoder_layer(seq, layer, model.cfg, stats, trace, "layer" + std::to_string(l), ctx);
  }
  auto final_head = reshape(slice_axis(seq.x, 1, 0, 1), {in.batch, d});
  return linear(final_head, model.cls_w, model.cls_b);
}

// encoder layers a forward pass must execute under the layer-budget law
inline int64_t expected_layer_count(ModelKind kind, const ModelConfig& cfg, int64_t program_length) {
  if (is_tmn(kind)) return cfg.layers_per_module * program_length;
  if (kind == ModelKind::TransformerPRVL || kind == ModelKind::TransformerPRVLST) return program_length;
  return cfg.n_layers_monolithic;
}

// argmax with ties broken toward the lowest index
template <typename T>
int predict(const Tensor<T>& logits, int64_t row = 0) {
  const int64_t c = logits.shape().back();
  const T* p = logits.data() + row * c;
  int best = 0;
  for (int64_t j = 1; j < c; ++j)
    if (p[j] > p[best]) best = static_cast<int>(j);
  return best;
}

template <typename T>
std::vector<int> predict_batch(const Tensor<T>& logits) {
  std::vector<int> out;
  for (int64_t b = 0; b < logits.dim(0); ++b) out.push_back(predict(logits, b));
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint round-trip (float models)

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

Checkpoint tmn_to_checkpoint(TmnModel<float>& model, PlanStructure structure);
Checkpoint baseline_to_checkpoint(BaselineModel<float>& model);
TmnModel<float> tmn_from_checkpoint(const Checkpoint& ckpt, const SubTaskCatalog& catalog = SubTaskCatalog::default26());
BaselineModel<float> baseline_from_checkpoint(const Checkpoint& ckpt,
                                              const SubTaskCatalog& catalog = SubTaskCatalog::default26());
ModelKind checkpoint_kind(const Checkpoint& ckpt);

}  // namespace tmn
