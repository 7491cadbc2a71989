#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "tmn/grad_check.hpp"
#include "tmn/model.hpp"

using namespace tmn;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.n_layers_monolithic = 3;
  cfg.layers_per_module = 1;
  cfg.dropout = 0.0f;
  return cfg;
}

Sample make_sample(const std::string& text, Scene scene) {
  Sample s;
  s.program = parse_program(text);
  s.scene = std::move(scene);
  s.answer = exec_program_symbolic(s.program, s.scene);
  s.question = "how many things are there";
  s.family = "test";
  return s;
}

Scene tiny_scene() {
  Scene s(2, 2);
  s.at(0, 0) = Object{ObjShape::Cube, ObjColor::Red, ObjSize::Small, ObjMaterial::Metal};
  s.at(1, 1) = Object{ObjShape::Sphere, ObjColor::Blue, ObjSize::Large, ObjMaterial::Rubber};
  return s;
}

template <typename T>
ModelInputs<T> inputs_for(const Sample& s, const Lexicon& lex, PlanStructure structure = PlanStructure::Stack) {
  return make_inputs<T>({&s}, lex, structure);
}

}  // namespace

TEST_CASE("init_head averages visual tokens") {
  auto one = Tensor<double>::from({1, 1, 3}, {2.0, -1.0, 0.5});
  auto h1 = init_head(one);
  CHECK(h1.shape() == Shape{1, 1, 3});
  for (int i = 0; i < 3; ++i) CHECK(h1.data()[i] == one.data()[i]);

  auto sym = Tensor<double>::from({1, 2, 2}, {1.0, -3.0, -1.0, 3.0});
  auto h2 = init_head(sym);
  CHECK(h2.data()[0] == doctest::Approx(0.0));
  CHECK(h2.data()[1] == doctest::Approx(0.0));

  std::mt19937_64 rng(4);
  auto many = Tensor<double>::randn({1, 25, 8}, rng);
  auto h3 = init_head(many);
  for (int j = 0; j < 8; ++j) {
    double acc = 0;
    for (int t = 0; t < 25; ++t) acc += many.data()[t * 8 + j];
    CHECK(h3.data()[j] == doctest::Approx(acc / 25).epsilon(1e-6));
  }
  CHECK_THROWS_AS(init_head(Tensor<double>::zeros({1, 0, 8})), std::invalid_argument);
}

TEST_CASE("tmn forward runs K*L encoder layers and matches the program length") {
  auto lex = Lexicon::build();
  for (int64_t k : {int64_t(1), int64_t(2)}) {
    auto cfg = tiny_config();
    cfg.layers_per_module = k;
    auto model = TmnModel<float>::init(cfg, build_library(LibraryStrategy::Individual), lex, 22, 7);
    auto s = make_sample("count(filter_color[red](filter_shape[cube](scene())))", tiny_scene());
    auto in = inputs_for<float>(s, lex);
    ForwardStats stats;
    auto logits = forward_tmn(model, in, &stats);
    CHECK(logits.shape() == Shape{1, 22});
    CHECK(stats.encoder_layers == k * s.program.length());
    CHECK(stats.encoder_layers == expected_layer_count(ModelKind::TmnStack, cfg, s.program.length()));
  }
}

TEST_CASE("layer budget holds across many random template programs") {
  auto lex = Lexicon::build();
  auto cfg = tiny_config();
  auto model = TmnModel<float>::init(cfg, build_library(LibraryStrategy::Individual), lex, 22, 7);
  std::mt19937_64 rng(5);
  auto families = train_families();
  int checked = 0;
  while (checked < 60) {
    const auto& fam = families[static_cast<size_t>(uniform_int(rng, static_cast<int64_t>(families.size())))];
    auto support = family_answer_support(fam);
    Scene scene = generate_scene(rng, {}, 3, 3);
    auto cand = generate_candidate(fam, scene, rng, support[static_cast<size_t>(uniform_int(rng, static_cast<int64_t>(support.size())))]);
    if (!cand) continue;
    Sample s;
    s.scene = scene;
    s.program = cand->program;
    s.question = cand->question;
    s.answer = cand->answer;
    auto in = inputs_for<float>(s, lex);
    ForwardStats stats;
    forward_tmn(model, in, &stats);
    CHECK(stats.encoder_layers == cfg.layers_per_module * s.program.length());
    ++checked;
  }
}

TEST_CASE("module with zero output projections preserves shapes through the norm path") {
  auto lex = Lexicon::build();
  auto cfg = tiny_config();
  auto model = TmnModel<double>::init(cfg, build_library(LibraryStrategy::Individual), lex, 22, 3);
  const int module_id = model.library.assign("count", 0);
  for (auto* t : {&model.modules[static_cast<size_t>(module_id)][0].wo, &model.modules[static_cast<size_t>(module_id)][0].bo,
                  &model.modules[static_cast<size_t>(module_id)][0].w2, &model.modules[static_cast<size_t>(module_id)][0].b2})
    std::fill(t->values().begin(), t->values().end(), 0.0);
  std::mt19937_64 rng(9);
  ModuleIO<double> io;
  io.visual = Tensor<double>::randn({1, 4, cfg.d_model}, rng);
  io.head = init_head(io.visual);
  auto out = run_module(model, module_id, io, Tensor<double>(), 0, "probe");
  CHECK(out.head.shape() == Shape{1, 1, cfg.d_model});
  CHECK(out.visual.shape() == Shape{1, 4, cfg.d_model});
  CHECK_THROWS_AS(run_module(model, 999, io, Tensor<double>(), 0, "bad"), std::out_of_range);
}

TEST_CASE("merge consumes two thread states and returns the first set") {
  auto lex = Lexicon::build();
  auto cfg = tiny_config();
  auto model = TmnModel<double>::init(cfg, build_library(LibraryStrategy::Individual), lex, 22, 3);
  const int module_id = model.library.assign("intersect", 0);
  std::mt19937_64 rng(10);
  ModuleIO<double> a, b;
  a.visual = Tensor<double>::randn({1, 4, cfg.d_model}, rng);
  a.head = init_head(a.visual);
  b.visual = Tensor<double>::randn({1, 4, cfg.d_model}, rng);
  b.head = init_head(b.visual);

  auto ab = run_merge(model, module_id, a, b, Tensor<double>(), "m");
  CHECK(ab.head.dim(1) + ab.visual.dim(1) == 1 + 4);  // first set only

  auto ab2 = run_merge(model, module_id, a, b, Tensor<double>(), "m");
  CHECK(std::memcmp(ab.head.data(), ab2.head.data(), sizeof(double) * static_cast<size_t>(ab.head.size())) == 0);

  auto ba = run_merge(model, module_id, b, a, Tensor<double>(), "m");
  double diff = 0;
  for (int64_t i = 0; i < ab.head.size(); ++i) diff += std::fabs(ab.head.data()[i] - ba.head.data()[i]);
  CHECK(diff > 1e-6);

  ModuleIO<double> narrow;
  narrow.visual = Tensor<double>::randn({1, 3, cfg.d_model}, rng);
  narrow.head = init_head(narrow.visual);
  CHECK_THROWS_AS(run_merge(model, module_id, a, narrow, Tensor<double>(), "m"), std::invalid_argument);
}

TEST_CASE("untrained model sits near ln C cross-entropy") {
  auto lex = Lexicon::build();
  auto cfg = tiny_config();
  auto model = TmnModel<float>::init(cfg, build_library(LibraryStrategy::Individual), lex, 22, 11);
  std::mt19937_64 rng(12);
  double total = 0;
  int n = 0;
  for (int i = 0; i < 16; ++i) {
    auto scene = generate_scene(rng, {}, 3, 3);
    std::optional<Candidate> cand;
    for (int attempt = 0; attempt < 30 && !cand; ++attempt)
      cand = generate_candidate("count", scene, rng, family_answer_support("count")[static_cast<size_t>(i) % 4]);
    if (!cand) continue;
    Sample s;
    s.scene = scene;
    s.program = cand->program;
    s.question = cand->question;
    s.answer = cand->answer;
    auto in = inputs_for<float>(s, lex);
    total += cross_entropy(forward_tmn(model, in), {AnswerVocab::standard().id(s.answer)}).item();
    ++n;
  }
  REQUIRE(n > 4);
  CHECK(std::fabs(total / n - std::log(22.0)) < 0.2);
}

TEST_CASE("stack and tree agree bitwise on linear programs and differ structurally on merges") {
  auto lex = Lexicon::build();
  auto cfg = tiny_config();
  auto model = TmnModel<float>::init(cfg, build_library(LibraryStrategy::Individual), lex, 22, 13);

  auto linear = make_sample("count(filter_color[red](scene()))", tiny_scene());
  auto in_stack = inputs_for<float>(linear, lex, PlanStructure::Stack);
  auto in_tree = inputs_for<float>(linear, lex, PlanStructure::Tree);
  auto l1 = forward_tmn(model, in_stack);
  auto l2 = forward_tmn(model, in_tree);
  CHECK(std::memcmp(l1.data(), l2.data(), sizeof(float) * 22) == 0);

  auto branchy = make_sample("exist(intersect(filter_color[red](scene()),filter_shape[sphere](scene())))",
                             tiny_scene());
  auto bs = inputs_for<float>(branchy, lex, PlanStructure::Stack);
  auto bt = inputs_for<float>(branchy, lex, PlanStructure::Tree);
  ForwardStats st1, st2;
  auto lb1 = forward_tmn(model, bs, &st1);
  auto lb2 = forward_tmn(model, bt, &st2);
  CHECK(st1.encoder_layers == st2.encoder_layers);  // same step multiset
  bool same = std::memcmp(lb1.data(), lb2.data(), sizeof(float) * 22) == 0;
  CHECK(!same);  // stack feeds the merge sequentially, tree runs parallel threads
}

TEST_CASE("deterministic logits for a fixed model and input") {
  auto lex = Lexicon::build();
  auto model = TmnModel<float>::init(tiny_config(), build_library(LibraryStrategy::SemanticGroup), lex, 22, 5);
  auto s = make_sample("exist(filter_shape[cube](scene()))", tiny_scene());
  auto in = inputs_for<float>(s, lex);
  auto a = forward_tmn(model, in);
  auto b = forward_tmn(model, in);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * 22) == 0);
}

TEST_CASE("baseline layer budgets: fixed for PR, L for VL, L for VL+ST") {
  auto lex = Lexicon::build();
  auto cfg = tiny_config();
  auto s_short = make_sample("count(scene())", tiny_scene());
  auto s_long = make_sample("count(filter_color[red](filter_size[small](filter_shape[cube](scene()))))",
                            tiny_scene());
  for (auto kind : {ModelKind::TransformerPR, ModelKind::TransformerPRVL, ModelKind::TransformerPRVLST}) {
    auto model = BaselineModel<float>::init(cfg, kind, lex, 22, 3);
    for (const Sample* s : {&s_short, &s_long}) {
      auto in = inputs_for<float>(*s, lex);
      ForwardStats stats;
      forward_baseline(model, in, &stats);
      CHECK(stats.encoder_layers == expected_layer_count(kind, cfg, s->program.length()));
      if (kind == ModelKind::TransformerPR) CHECK(stats.encoder_layers == cfg.n_layers_monolithic);
      else CHECK(stats.encoder_layers == s->program.length());
    }
  }
}

TEST_CASE("raw transformer equals PR baseline when question tokens equal program tokens") {
  auto lex = Lexicon::build();
  auto cfg = tiny_config();
  auto model_q = BaselineModel<float>::init(cfg, ModelKind::Transformer, lex, 22, 21);
  auto model_pr = BaselineModel<float>::init(cfg, ModelKind::TransformerPR, lex, 22, 21);

  auto s = make_sample("count(filter_color[red](scene()))", tiny_scene());
  auto in = inputs_for<float>(s, lex);
  // rewrite the question stream to the flattened program tokens
  std::vector<int> flat;
  for (size_t si = 0; si < in.plan.steps.size(); ++si)
    for (int id : in.step_ids[si]) flat.push_back(id);
  in.question_ids = flat;
  in.n_question_tokens = static_cast<int>(flat.size());

  auto lq = forward_baseline(model_q, in);
  auto lpr = forward_baseline(model_pr, in);
  CHECK(std::memcmp(lq.data(), lpr.data(), sizeof(float) * 22) == 0);
}

TEST_CASE("split-token baseline routes exactly step t's tokens into layer t") {
  auto lex = Lexicon::build();
  auto cfg = tiny_config();
  auto model = BaselineModel<float>::init(cfg, ModelKind::TransformerPRVLST, lex, 22, 8);
  auto s = make_sample("exist(intersect(filter_color[red](scene()),filter_shape[sphere](scene())))", tiny_scene());
  auto in = inputs_for<float>(s, lex);
  ForwardTrace trace;
  forward_baseline(model, in, nullptr, &trace);
  REQUIRE(trace.records.size() == in.plan.steps.size());
  for (size_t si = 0; si < in.plan.steps.size(); ++si) {
    const auto& rec = trace.records[si];
    CHECK(rec.label == step_label<float>(in.shape, in.plan.steps[si]));
    int64_t words = 0;
    for (auto k : rec.kinds) words += k == TokenKind::Word;
    CHECK(words == static_cast<int64_t>(in.step_ids[si].size()));  // batch of one
  }
}

TEST_CASE("predict breaks ties toward the lowest index and ignores shifts") {
  auto one_hot = Tensor<float>::from({1, 4}, {0, 0, 5, 0});
  CHECK(predict(one_hot) == 2);
  auto equal = Tensor<float>::from({1, 4}, {1, 1, 1, 1});
  CHECK(predict(equal) == 0);
  auto shifted = Tensor<float>::from({1, 4}, {3, 3, 8, 3});
  CHECK(predict(shifted) == predict(one_hot));
  auto batch = Tensor<float>::from({2, 3}, {0, 2, 1, 7, 2, 9});
  CHECK(predict_batch(batch) == std::vector<int>{1, 2});
}

TEST_CASE("two-module tmn gradients match finite differences within 1e-3") {
  auto lex = Lexicon::build();
  auto cfg = tiny_config();
  auto model = TmnModel<double>::init(cfg, build_library(LibraryStrategy::Individual), lex, 22, 17);
  Scene scene(2, 3);  // 6 visual tokens
  scene.at(0, 0) = Object{ObjShape::Cube, ObjColor::Red, ObjSize::Small, ObjMaterial::Metal};
  scene.at(1, 2) = Object{ObjShape::Sphere, ObjColor::Red, ObjSize::Large, ObjMaterial::Rubber};
  auto s = make_sample("count(filter_color[red](scene()))", std::move(scene));
  auto in = inputs_for<double>(s, lex);
  const std::vector<int> label = {AnswerVocab::standard().id(s.answer)};

  std::vector<std::pair<std::string, Tensor<double>>> params;
  model.visit_params([&](const std::string& n, Tensor<double>& t) {
    if (n.rfind("module", 0) == 0 || n.rfind("cls", 0) == 0 || n.rfind("emb", 0) == 0 || n.rfind("grid", 0) == 0)
      params.emplace_back(n, t);
  });
  GradCheckOptions opt;
  opt.max_coords_per_tensor = 8;
  auto report = grad_check(params, [&] { return cross_entropy(forward_tmn(model, in), label); }, opt);
  CHECK(report.max_rel_err <= 1e-3);
}

TEST_CASE("checkpoints restore models bit-exactly") {
  namespace fs = std::filesystem;
  auto lex = Lexicon::build();
  auto cfg = tiny_config();
  auto model = TmnModel<float>::init(cfg, build_library(LibraryStrategy::RandomGroup, SubTaskCatalog::default26(), 5),
                                     lex, 22, 19);
  auto s = make_sample("count(filter_color[red](scene()))", tiny_scene());
  auto in = inputs_for<float>(s, lex);
  auto before = forward_tmn(model, in);

  auto ckpt = tmn_to_checkpoint(model, PlanStructure::Stack);
  save_checkpoint("model_test.ckpt", ckpt);
  auto loaded_ckpt = load_checkpoint("model_test.ckpt");
  CHECK(checkpoint_kind(loaded_ckpt) == ModelKind::TmnStack);
  auto restored = tmn_from_checkpoint(loaded_ckpt);
  auto after = forward_tmn(restored, in);
  CHECK(std::memcmp(before.data(), after.data(), sizeof(float) * 22) == 0);
  fs::remove("model_test.ckpt");

  auto base = BaselineModel<float>::init(cfg, ModelKind::TransformerPRVL, lex, 22, 23);
  auto bl = forward_baseline(base, in);
  auto bckpt = baseline_to_checkpoint(base);
  save_checkpoint("base_test.ckpt", bckpt);
  auto base2 = baseline_from_checkpoint(load_checkpoint("base_test.ckpt"));
  auto bl2 = forward_baseline(base2, in);
  CHECK(std::memcmp(bl.data(), bl2.data(), sizeof(float) * 22) == 0);
  fs::remove("base_test.ckpt");
}
