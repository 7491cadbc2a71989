#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tmn/generator.hpp"
#include "tmn/rng.hpp"
#include "tmn/symbolic.hpp"

using namespace tmn;

namespace {

Scene scene_with(std::initializer_list<std::tuple<int, int, Object>> objs, int h = 5, int w = 5) {
  Scene s(h, w);
  for (const auto& [r, c, o] : objs) s.at(r, c) = o;
  return s;
}

Object obj(ObjShape sh, ObjColor co, ObjSize si = ObjSize::Small, ObjMaterial ma = ObjMaterial::Metal) {
  return Object{sh, co, si, ma};
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("condition-a scenes never contain inverted pairs") {
  std::mt19937_64 rng(1);
  auto cond = cogent_condition_a();
  for (int i = 0; i < 10000; ++i) {
    auto s = generate_scene(rng, cond);
    for (const auto& cell : s.cells) {
      if (!cell) continue;
      if (cell->shape == ObjShape::Cube)
        CHECK((cell->color == ObjColor::Red || cell->color == ObjColor::Blue));
      if (cell->shape == ObjShape::Sphere)
        CHECK((cell->color == ObjColor::Green || cell->color == ObjColor::Yellow));
    }
    CHECK(s.object_count() >= 2);
    CHECK(s.object_count() <= 8);
  }
}

TEST_CASE("exact object-count constraint and determinism") {
  SceneConstraints c;
  c.exact_objects = 2;
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) CHECK(generate_scene(rng, c).object_count() == 2);

  std::mt19937_64 a(42), b(42);
  CHECK(generate_scene(a) == generate_scene(b));

  SceneConstraints empty;
  empty.allowed_pairs = {{-1, -1}};
  empty.allowed_pairs.clear();
  SceneConstraints impossible;
  impossible.allowed_pairs.insert({99, 99});
  CHECK_THROWS_AS(generate_scene(rng, impossible), std::invalid_argument);
}

TEST_CASE("oracle counts, exists and compares on constructed scenes") {
  auto s = scene_with({{0, 0, obj(ObjShape::Cube, ObjColor::Red)},
                       {1, 2, obj(ObjShape::Sphere, ObjColor::Red)},
                       {3, 4, obj(ObjShape::Cylinder, ObjColor::Red)},
                       {2, 2, obj(ObjShape::Cube, ObjColor::Blue)}});
  CHECK(exec_program_symbolic(parse_program("count(filter_color[red](scene()))"), s) == "3");
  CHECK(exec_program_symbolic(parse_program("count(scene())"), s) == "4");

  auto spheres = scene_with({{0, 0, obj(ObjShape::Sphere, ObjColor::Green)},
                             {4, 4, obj(ObjShape::Sphere, ObjColor::Blue)}});
  CHECK(exec_program_symbolic(parse_program("exist(filter_shape[cube](scene()))"), spheres) == "no");
  CHECK(exec_program_symbolic(parse_program("exist(filter_shape[sphere](scene()))"), spheres) == "yes");

  auto pair = scene_with({{0, 0, obj(ObjShape::Cube, ObjColor::Yellow)},
                          {2, 3, obj(ObjShape::Sphere, ObjColor::Yellow)},
                          {4, 4, obj(ObjShape::Cylinder, ObjColor::Blue)}});
  CHECK(exec_program_symbolic(
            parse_program("equal_color(unique(filter_shape[cube](scene())),unique(filter_shape[sphere](scene())))"),
            pair) == "yes");
  CHECK(exec_program_symbolic(
            parse_program("equal_color(unique(filter_shape[cube](scene())),unique(filter_shape[cylinder](scene())))"),
            pair) == "no");
}

TEST_CASE("oracle spatial, matching, logical and arithmetic semantics") {
  // grid positions: a(0,0) b(0,3) c(2,1) d(4,3)
  auto s = scene_with({{0, 0, obj(ObjShape::Cube, ObjColor::Red, ObjSize::Small, ObjMaterial::Metal)},
                       {0, 3, obj(ObjShape::Sphere, ObjColor::Blue, ObjSize::Large, ObjMaterial::Metal)},
                       {2, 1, obj(ObjShape::Cylinder, ObjColor::Red, ObjSize::Small, ObjMaterial::Rubber)},
                       {4, 3, obj(ObjShape::Cube, ObjColor::Green, ObjSize::Small, ObjMaterial::Rubber)}});
  // strictly left of the unique sphere: columns < 3 -> cube(0,0) and cylinder(2,1)
  CHECK(exec_program_symbolic(parse_program("count(relate[left](unique(filter_shape[sphere](scene()))))"), s) == "2");
  CHECK(exec_program_symbolic(parse_program("count(relate[above](unique(filter_color[green](scene()))))"), s) == "3");
  CHECK(exec_program_symbolic(parse_program("count(relate[below](unique(filter_shape[sphere](scene()))))"), s) == "2");
  // same size as the blue sphere (large): nothing else is large
  CHECK(exec_program_symbolic(parse_program("count(same_size(unique(filter_color[blue](scene()))))"), s) == "0");
  // same size as the red cube: small cylinder and small green cube, referent excluded
  CHECK(exec_program_symbolic(parse_program("count(same_size(unique(filter_color[red](filter_shape[cube](scene())))))"), s) == "2");
  CHECK(exec_program_symbolic(parse_program("exist(intersect(filter_color[red](scene()),filter_material[rubber](scene())))"), s) == "yes");
  CHECK(exec_program_symbolic(parse_program("count(union(filter_shape[cube](scene()),filter_color[red](scene())))"), s) == "3");
  CHECK(exec_program_symbolic(parse_program("greater_than(count(filter_size[small](scene())),count(filter_size[large](scene())))"), s) == "yes");
  CHECK(exec_program_symbolic(parse_program("less_than(count(scene()),count(filter_color[red](scene())))"), s) == "no");
  CHECK(exec_program_symbolic(parse_program("equal_integer(count(filter_shape[cube](scene())),count(filter_color[red](scene())))"), s) == "yes");
  CHECK(exec_program_symbolic(parse_program("query_material(unique(filter_shape[sphere](scene())))"), s) == "metal");

  CHECK_THROWS_AS(exec_program_symbolic(parse_program("query_color(unique(filter_shape[cube](scene())))"), s),
                  ExecError);
  CHECK_THROWS_AS(exec_program_symbolic(parse_program("count(relate[left](unique(filter_color[yellow](scene()))))"), s),
                  ExecError);
}

TEST_CASE("answer vocabulary has the 22 closed answers") {
  const auto& v = AnswerVocab::standard();
  CHECK(v.size() == 22);
  CHECK(v.id("yes") == 0);
  CHECK(v.id("no") == 1);
  CHECK(v.id("0") == 2);
  CHECK(v.id("8") == 10);
  CHECK(v.name(v.id("rubber")) == "rubber");
  CHECK_THROWS_AS(v.id("maybe"), std::out_of_range);
}

TEST_CASE("featurize is injective over 10000 random scenes") {
  std::mt19937_64 rng(99);
  std::map<uint64_t, Scene> seen;
  for (int i = 0; i < 10000; ++i) {
    auto s = generate_scene(rng);
    auto f = featurize(s);
    const uint64_t h = fnv1a(f.data(), f.size() * sizeof(float));
    auto [it, inserted] = seen.emplace(h, s);
    if (!inserted) CHECK(it->second == s);  // hash collision must mean identical scene
  }
  // and two scenes differing in one attribute featurize differently
  auto a = scene_with({{1, 1, obj(ObjShape::Cube, ObjColor::Red)}});
  auto b = scene_with({{1, 1, obj(ObjShape::Cube, ObjColor::Blue)}});
  CHECK(featurize(a) != featurize(b));
}

TEST_CASE("count family emits chains of length two to four") {
  std::mt19937_64 rng(5);
  int produced = 0;
  int cycle = 0;
  const auto support = family_answer_support("count");
  while (produced < 200) {
    auto scene = generate_scene(rng);
    auto cand = generate_candidate("count", scene, rng, support[static_cast<size_t>(cycle) % support.size()]);
    if (!cand) continue;
    ++produced;
    ++cycle;
    CHECK(cand->program.length() >= 2);
    CHECK(cand->program.length() <= 4);
    CHECK(cand->program.root().op == "count");
    CHECK(validate(cand->program).empty());
  }
}

TEST_CASE("exist answers balance to fifty-fifty under quota cycling") {
  std::mt19937_64 rng(6);
  const auto support = family_answer_support("exist");
  int yes = 0, total = 0, cycle = 0;
  while (total < 2000) {
    auto scene = generate_scene(rng);
    auto cand = generate_candidate("exist", scene, rng, support[static_cast<size_t>(cycle) % support.size()]);
    if (!cand) continue;
    yes += cand->answer == "yes";
    ++total;
    ++cycle;
  }
  const double p = static_cast<double>(yes) / total;
  CHECK(std::fabs(p - 0.5) <= 0.05);
}

TEST_CASE("held-out families recombine constructs and validate cleanly") {
  std::mt19937_64 rng(8);
  for (const auto& family : heldout_families()) {
    const auto support = family_answer_support(family);
    int produced = 0, cycle = 0, guard = 0;
    while (produced < 25 && guard++ < 20000) {
      auto scene = generate_scene(rng);
      auto cand = generate_candidate(family, scene, rng, support[static_cast<size_t>(cycle) % support.size()]);
      if (!cand) continue;
      ++produced;
      ++cycle;
      CHECK(validate(cand->program).empty());
      CHECK(exec_program_symbolic(cand->program, scene) == cand->answer);
      std::set<std::string> ops;
      for (const auto& n : cand->program.nodes) ops.insert(n.op);
      if (family == "query_spatial") CHECK(ops.count("relate"));
      if (family == "and_matching") CHECK(ops.count("intersect"));
      if (family == "compare_spatial") CHECK(ops.count("relate"));
    }
    INFO("family " << family);
    CHECK(produced == 25);
  }
}

TEST_CASE("closure splits pass hygiene and lexicon covers every program") {
  SplitSpec spec;
  spec.kind = "closure";
  spec.seed = 11;
  spec.n_train = 360;
  spec.n_val = 90;
  spec.n_test = 80;
  auto splits = generate_splits(spec);
  CHECK(splits.train.size() == 360);
  CHECK(splits.val.size() == 90);
  CHECK(splits.test.size() == 80);

  std::set<std::string> train_ops, train_fams, test_ops;
  for (const auto& s : splits.train) {
    train_fams.insert(s.family);
    for (const auto& n : s.program.nodes) train_ops.insert(n.op);
  }
  for (const auto& s : splits.test) {
    CHECK(!train_fams.count(s.family));
    for (const auto& n : s.program.nodes) {
      test_ops.insert(n.op);
      CHECK(train_ops.count(n.op));
    }
  }
  CHECK(test_ops.count("relate"));

  // lexicon covers ops, arguments and question words
  auto lex = build_lexicon();
  std::set<std::string> lexset(lex.begin(), lex.end());
  auto covered = [&](const std::vector<Sample>& ss) {
    for (const auto& s : ss) {
      for (const auto& n : s.program.nodes) {
        CHECK(lexset.count(n.op));
        if (n.arg) CHECK(lexset.count(*n.arg));
      }
      std::istringstream qs(s.question);
      std::string word;
      while (qs >> word) CHECK(lexset.count(word));
    }
  };
  covered(splits.train);
  covered(splits.test);
}

TEST_CASE("sgl split emits 50 samples for each of the four held-out types") {
  SplitSpec spec;
  spec.kind = "sgl";
  spec.seed = 3;
  spec.n_train = 120;
  spec.n_val = 40;
  auto splits = generate_splits(spec);
  CHECK(splits.test.size() == 200);
  std::map<std::string, int> per_family;
  for (const auto& s : splits.test) per_family[s.family] += 1;
  CHECK(per_family.size() == 4);
  for (const auto& [fam, n] : per_family) CHECK(n == 50);
}

TEST_CASE("cogent splits invert attribute pairs between train and test") {
  SplitSpec spec;
  spec.kind = "cogent";
  spec.seed = 4;
  spec.n_train = 180;
  spec.n_val = 45;
  spec.n_test = 90;
  auto splits = generate_splits(spec);

  auto a = cogent_condition_a();
  auto b = cogent_condition_b();
  // defining pair sets are disjoint for the constrained shapes
  for (const auto& p : a.allowed_pairs)
    if (p.first != static_cast<int>(ObjShape::Cylinder)) CHECK(!b.allowed_pairs.count(p));

  for (const auto& s : splits.train)
    for (const auto& cell : s.scene.cells)
      if (cell) CHECK(a.allows(cell->shape, cell->color));
  for (const auto& s : splits.test)
    for (const auto& cell : s.scene.cells)
      if (cell) CHECK(b.allows(cell->shape, cell->color));
}

TEST_CASE("dataset files round-trip and rebuild byte-identically from the seed") {
  namespace fs = std::filesystem;
  SplitSpec spec;
  spec.kind = "closure";
  spec.seed = 21;
  spec.n_train = 90;
  spec.n_val = 30;
  spec.n_test = 40;
  const std::string dir1 = "synth_test_out1", dir2 = "synth_test_out2";
  auto f1 = build_splits(spec, dir1);
  auto f2 = build_splits(spec, dir2);

  CHECK(file_bytes(f1.train) == file_bytes(f2.train));
  CHECK(file_bytes(f1.val) == file_bytes(f2.val));
  CHECK(file_bytes(f1.test) == file_bytes(f2.test));

  auto loaded = load_dataset(f1.train);
  CHECK(loaded.size() == 90);
  audit_label_soundness(loaded);
  for (size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].split == "train");
    CHECK(validate(loaded[i].program).empty());
  }

  auto manifest = load_manifest(f1.manifest);
  CHECK(manifest.kind == "closure");
  CHECK(manifest.counts["train"] == 90);
  CHECK(manifest.checksums["train"] == file_checksum(f1.train));

  fs::remove_all(dir1);
  fs::remove_all(dir2);
}
