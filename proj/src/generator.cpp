#include "tmn/generator.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "tmn/rng.hpp"
#include "tmn/symbolic.hpp"

namespace tmn {

namespace {

// ---------------------------------------------------------------------------
// program assembly

struct FilterStep {
  std::string op;   // filter_color, ...
  std::string arg;  // red, ...
};

struct ProgBuilder {
  Program p;
  int add(std::string op, std::optional<std::string> arg, std::vector<int> inputs) {
    p.nodes.push_back({std::move(op), std::move(arg), std::move(inputs)});
    return static_cast<int>(p.nodes.size()) - 1;
  }
  int scene() { return add("scene", std::nullopt, {}); }
  int filters(int below, const std::vector<FilterStep>& chain) {
    int cur = below;
    for (const auto& f : chain) cur = add(f.op, f.arg, {cur});
    return cur;
  }
};

// ---------------------------------------------------------------------------
// attribute helpers

enum class Attr { Color, Shape, Size, Material };
const Attr kAttrs[4] = {Attr::Color, Attr::Shape, Attr::Size, Attr::Material};

std::string filter_op(Attr a) {
  switch (a) {
    case Attr::Color: return "filter_color";
    case Attr::Shape: return "filter_shape";
    case Attr::Size: return "filter_size";
    case Attr::Material: return "filter_material";
  }
  return "?";
}
std::string query_op(Attr a) {
  switch (a) {
    case Attr::Color: return "query_color";
    case Attr::Shape: return "query_shape";
    case Attr::Size: return "query_size";
    case Attr::Material: return "query_material";
  }
  return "?";
}
std::string equal_op(Attr a) {
  switch (a) {
    case Attr::Color: return "equal_color";
    case Attr::Shape: return "equal_shape";
    case Attr::Size: return "equal_size";
    case Attr::Material: return "equal_material";
  }
  return "?";
}
std::string same_op(Attr a) {
  switch (a) {
    case Attr::Color: return "same_color";
    case Attr::Shape: return "same_shape";
    case Attr::Size: return "same_size";
    case Attr::Material: return "same_material";
  }
  return "?";
}
std::string attr_word(Attr a) {
  switch (a) {
    case Attr::Color: return "color";
    case Attr::Shape: return "shape";
    case Attr::Size: return "size";
    case Attr::Material: return "material";
  }
  return "?";
}
const std::vector<std::string>& attr_values(Attr a) {
  static const std::vector<std::string> colors = {"red", "blue", "green", "yellow"};
  static const std::vector<std::string> shapes = {"cube", "sphere", "cylinder"};
  static const std::vector<std::string> sizes = {"small", "large"};
  static const std::vector<std::string> materials = {"metal", "rubber"};
  switch (a) {
    case Attr::Color: return colors;
    case Attr::Shape: return shapes;
    case Attr::Size: return sizes;
    case Attr::Material: return materials;
  }
  return colors;
}

std::optional<Attr> attr_of_value(const std::string& v) {
  for (Attr a : kAttrs)
    for (const auto& w : attr_values(a))
      if (w == v) return a;
  return std::nullopt;
}

int attr_rank(const std::string& filter_op_name) {
  if (filter_op_name == "filter_size") return 0;
  if (filter_op_name == "filter_color") return 1;
  if (filter_op_name == "filter_material") return 2;
  return 3;
}

// canonical order keeps the set of distinct program shapes small: filter
// sets render identically regardless of how they were sampled
void canonicalize(std::vector<FilterStep>& chain) {
  std::stable_sort(chain.begin(), chain.end(),
                   [](const FilterStep& a, const FilterStep& b) { return attr_rank(a.op) > attr_rank(b.op); });
}

template <typename T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& xs) {
  return xs[static_cast<size_t>(uniform_int(rng, static_cast<int64_t>(xs.size())))];
}

template <typename T>
std::vector<T> shuffled(std::mt19937_64& rng, std::vector<T> xs) {
  for (size_t i = xs.size(); i > 1; --i)
    std::swap(xs[i - 1], xs[static_cast<size_t>(uniform_int(rng, static_cast<int64_t>(i)))]);
  return xs;
}

// a blind chain: n distinct attribute types, arguments sampled uniformly
std::vector<FilterStep> random_chain(std::mt19937_64& rng, int n, std::optional<Attr> exclude = std::nullopt) {
  std::vector<Attr> pool;
  for (Attr a : kAttrs)
    if (!exclude || a != *exclude) pool.push_back(a);
  pool = shuffled(rng, pool);
  std::vector<FilterStep> chain;
  for (int i = 0; i < n; ++i)
    chain.push_back({filter_op(pool[static_cast<size_t>(i)]), pick(rng, attr_values(pool[static_cast<size_t>(i)]))});
  canonicalize(chain);
  return chain;
}

int chain_len(std::mt19937_64& rng) { return uniform_int(rng, 10) < 7 ? 1 : 2; }

std::string chain_text(const std::vector<FilterStep>& chain) {
  std::string out;
  for (const auto& f : chain) out += f.op + "[" + f.arg + "]";
  return out;
}

// question fragments: filter args rendered outermost-first
std::string words(const std::vector<FilterStep>& chain) {
  std::string out;
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
    if (!out.empty()) out += " ";
    out += it->arg;
  }
  return out.empty() ? "any" : out;
}

std::string join(std::initializer_list<std::string> parts) {
  std::string out;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    if (!out.empty()) out += " ";
    out += p;
  }
  return out;
}

const std::vector<std::string> kDirections = {"left", "right", "above", "below"};

// ---------------------------------------------------------------------------
// blind program proposers. A proposal never sees a scene: answer balance per
// program comes from resampling scenes against the required answer instead,
// so the question text carries no label signal.

struct Proposal {
  Program program;
  std::string question;
};

using Maybe = std::optional<Proposal>;

Maybe propose_count(std::mt19937_64& rng, const std::string& required) {
  const int want = std::stoi(required);
  const bool bare_ok = want >= 2 && want <= 3;  // bare scenes hold 2..8 objects
  const int nf = (bare_ok && uniform_int(rng, 10) < 1) ? 0 : chain_len(rng);
  auto chain = random_chain(rng, nf);
  ProgBuilder b;
  b.add("count", std::nullopt, {b.filters(b.scene(), chain)});
  return Proposal{std::move(b.p), join({"how many", words(chain), "things are there"})};
}

Maybe propose_exist(std::mt19937_64& rng, const std::string&) {
  auto chain = random_chain(rng, std::max(1, chain_len(rng)));
  ProgBuilder b;
  b.add("exist", std::nullopt, {b.filters(b.scene(), chain)});
  return Proposal{std::move(b.p), join({"is there any", words(chain), "thing"})};
}

Maybe propose_query(std::mt19937_64& rng, const std::string& required) {
  auto attr = attr_of_value(required);
  if (!attr) return std::nullopt;
  auto chain = random_chain(rng, chain_len(rng), *attr);
  ProgBuilder b;
  int u = b.add("unique", std::nullopt, {b.filters(b.scene(), chain)});
  b.add(query_op(*attr), std::nullopt, {u});
  return Proposal{std::move(b.p), join({"what", attr_word(*attr), "is the", words(chain), "thing"})};
}

Maybe propose_compare_attr(std::mt19937_64& rng, const std::string&, int hint) {
  const Attr a = kAttrs[hint % 4];
  auto c1 = random_chain(rng, chain_len(rng), a);
  auto c2 = random_chain(rng, chain_len(rng), a);
  if (chain_text(c1) == chain_text(c2)) return std::nullopt;  // identical referents compare trivially
  ProgBuilder b;
  int u1 = b.add("unique", std::nullopt, {b.filters(b.scene(), c1)});
  int u2 = b.add("unique", std::nullopt, {b.filters(b.scene(), c2)});
  b.add(equal_op(a), std::nullopt, {u1, u2});
  return Proposal{std::move(b.p), join({"does the", words(c1), "thing have the same", attr_word(a), "as the",
                                        words(c2), "thing"})};
}

Maybe propose_compare_count(std::mt19937_64& rng, const std::string&, int hint) {
  static const std::vector<std::string> ops = {"greater_than", "less_than", "equal_integer"};
  const std::string op = ops[static_cast<size_t>(hint) % ops.size()];
  auto c1 = random_chain(rng, 1);
  auto c2 = random_chain(rng, 1);
  if (chain_text(c1) == chain_text(c2)) return std::nullopt;
  ProgBuilder b;
  int k1 = b.add("count", std::nullopt, {b.filters(b.scene(), c1)});
  int k2 = b.add("count", std::nullopt, {b.filters(b.scene(), c2)});
  b.add(op, std::nullopt, {k1, k2});
  const std::string frame = op == "greater_than" ? "are there more" : op == "less_than" ? "are there fewer" : "are there as many";
  const std::string mid = op == "equal_integer" ? "things as" : "things than";
  return Proposal{std::move(b.p), join({frame, words(c1), mid, words(c2), "things"})};
}

Maybe propose_logical(std::mt19937_64& rng, const std::string&, bool conjunction) {
  auto c1 = random_chain(rng, 1);
  auto c2 = random_chain(rng, 1);
  if (c1[0].op == c2[0].op) return std::nullopt;
  if (attr_rank(c1[0].op) > attr_rank(c2[0].op)) std::swap(c1, c2);
  ProgBuilder b;
  int s1 = b.filters(b.scene(), c1);
  int s2 = b.filters(b.scene(), c2);
  int m = b.add(conjunction ? "intersect" : "union", std::nullopt, {s1, s2});
  b.add("exist", std::nullopt, {m});
  const std::string frame = conjunction ? "is there a thing that is both" : "is there a thing that is either";
  return Proposal{std::move(b.p), join({frame, words(c1), conjunction ? "and" : "or", words(c2)})};
}

struct ReferringShape {
  std::vector<FilterStep> ref_chain;
  std::string link_op;   // relate | same_*
  std::string link_arg;  // direction for relate
  std::string link_text;
};

ReferringShape propose_referring_shape(std::mt19937_64& rng, bool spatial, int hint) {
  ReferringShape r;
  r.ref_chain = random_chain(rng, chain_len(rng));
  if (spatial) {
    r.link_op = "relate";
    r.link_arg = kDirections[static_cast<size_t>(hint) % kDirections.size()];
    r.link_text = r.link_arg + " of the";
  } else {
    const Attr a = kAttrs[hint % 4];
    r.link_op = same_op(a);
    r.link_text = "with the same " + attr_word(a) + " as the";
  }
  return r;
}

int build_referring(ProgBuilder& b, const ReferringShape& r) {
  int u = b.add("unique", std::nullopt, {b.filters(b.scene(), r.ref_chain)});
  return b.add(r.link_op, r.link_arg.empty() ? std::nullopt : std::optional<std::string>(r.link_arg), {u});
}

Maybe propose_referring(std::mt19937_64& rng, const std::string& required, bool spatial, int hint) {
  auto r = propose_referring_shape(rng, spatial, hint);
  const bool want_exist = required == "yes" || required == "no";
  std::vector<FilterStep> post;
  if (uniform_int(rng, 2) == 1) post = random_chain(rng, 1);
  ProgBuilder b;
  int top = b.filters(build_referring(b, r), post);
  b.add(want_exist ? "exist" : "count", std::nullopt, {top});
  const std::string q =
      want_exist ? join({"is there a", words(post), "thing", r.link_text, words(r.ref_chain), "thing"})
                 : join({"how many", words(post), "things", r.link_text, words(r.ref_chain), "thing"});
  return Proposal{std::move(b.p), q};
}

Maybe propose_query_referring(std::mt19937_64& rng, const std::string& required, bool spatial, int hint) {
  auto attr = attr_of_value(required);
  if (!attr) return std::nullopt;
  if (!spatial && kAttrs[hint % 4] == *attr) hint += 1;  // linking on the queried attribute gives it away
  auto r = propose_referring_shape(rng, spatial, hint);
  std::vector<FilterStep> post;
  if (uniform_int(rng, 2) == 1) post = random_chain(rng, 1, *attr);
  ProgBuilder b;
  int u = b.add("unique", std::nullopt, {b.filters(build_referring(b, r), post)});
  b.add(query_op(*attr), std::nullopt, {u});
  return Proposal{std::move(b.p), join({"what", attr_word(*attr), "is the", words(post), "thing",
                                        r.link_text, words(r.ref_chain), "thing"})};
}

Maybe propose_and_matching(std::mt19937_64& rng, const std::string&, int hint) {
  auto r = propose_referring_shape(rng, false, hint);
  auto other = random_chain(rng, 1);
  ProgBuilder b;
  int left = build_referring(b, r);
  int right = b.filters(b.scene(), other);
  int m = b.add("intersect", std::nullopt, {left, right});
  b.add("exist", std::nullopt, {m});
  return Proposal{std::move(b.p), join({"is there a", words(other), "thing", r.link_text,
                                        words(r.ref_chain), "thing"})};
}

Maybe propose_compare_spatial(std::mt19937_64& rng, const std::string&, int hint) {
  const Attr a = kAttrs[hint % 4];
  auto r = propose_referring_shape(rng, true, hint / 4);
  std::vector<FilterStep> post;
  if (uniform_int(rng, 2) == 1) post = random_chain(rng, 1, a);
  auto c2 = random_chain(rng, chain_len(rng), a);
  ProgBuilder b;
  int u1 = b.add("unique", std::nullopt, {b.filters(build_referring(b, r), post)});
  int u2 = b.add("unique", std::nullopt, {b.filters(b.scene(), c2)});
  b.add(equal_op(a), std::nullopt, {u1, u2});
  return Proposal{std::move(b.p),
                  join({"does the", words(post), "thing", r.link_text, words(r.ref_chain),
                        "thing have the same", attr_word(a), "as the", words(c2), "thing"})};
}

Maybe propose(const std::string& family, std::mt19937_64& rng, const std::string& required, int hint) {
  if (family == "count") return propose_count(rng, required);
  if (family == "exist") return propose_exist(rng, required);
  if (family == "query") return propose_query(rng, required);
  if (family == "compare_attr") return propose_compare_attr(rng, required, hint);
  if (family == "compare_count") return propose_compare_count(rng, required, hint);
  if (family == "logical_and") return propose_logical(rng, required, true);
  if (family == "logical_or") return propose_logical(rng, required, false);
  if (family == "spatial") return propose_referring(rng, required, true, hint);
  if (family == "matching") return propose_referring(rng, required, false, hint);
  if (family == "query_spatial") return propose_query_referring(rng, required, true, hint);
  if (family == "query_matching") return propose_query_referring(rng, required, false, hint);
  if (family == "and_matching") return propose_and_matching(rng, required, hint);
  if (family == "compare_spatial") return propose_compare_spatial(rng, required, hint);
  throw std::invalid_argument("generator: unknown family '" + family + "'");
}

}  // namespace

std::vector<std::string> train_families() {
  return {"count", "exist", "query", "compare_attr", "compare_count",
          "logical_and", "logical_or", "spatial", "matching"};
}

std::vector<std::string> heldout_families() {
  return {"query_spatial", "query_matching", "and_matching", "compare_spatial"};
}

std::vector<std::string> family_answer_support(const std::string& family) {
  static const std::vector<std::string> yesno = {"yes", "no"};
  static const std::vector<std::string> counts = {"0", "1", "2", "3"};
  static const std::vector<std::string> values = {"red",  "blue",  "green",    "yellow", "cube", "sphere",
                                                  "cylinder", "small", "large", "metal", "rubber"};
  static const std::vector<std::string> mixed = {"yes", "0", "no", "1", "yes", "2", "no"};
  if (family == "count") return counts;
  if (family == "exist" || family == "compare_attr" || family == "compare_count" || family == "logical_and" ||
      family == "logical_or" || family == "and_matching" || family == "compare_spatial")
    return yesno;
  if (family == "query" || family == "query_spatial" || family == "query_matching") return values;
  if (family == "spatial" || family == "matching") return mixed;
  throw std::invalid_argument("generator: unknown family '" + family + "'");
}

std::optional<Candidate> generate_candidate(const std::string& family, const Scene& scene, std::mt19937_64& rng,
                                            const std::string& required_answer, int variant_hint) {
  auto proposal = propose(family, rng, required_answer, variant_hint);
  if (!proposal) return std::nullopt;
  std::string truth;
  try {
    truth = exec_program_symbolic(proposal->program, scene);
  } catch (const ExecError&) {
    return std::nullopt;  // non-unique referent on this scene; try another scene
  }
  if (truth != required_answer) return std::nullopt;
  return Candidate{std::move(proposal->program), std::move(proposal->question), truth};
}

std::vector<std::string> build_lexicon(const SubTaskCatalog& catalog) {
  std::vector<std::string> words;
  std::set<std::string> seen;
  auto put = [&](const std::string& w) {
    if (seen.insert(w).second) words.push_back(w);
  };
  for (const auto& e : catalog.entries()) {
    put(e.name);
    for (const auto& a : e.arg_vocab) put(a);
  }
  static const std::vector<std::string> frames = {
      "how",  "many", "things",  "are",   "there", "is",    "any",   "thing", "what", "color",
      "shape", "size", "material", "the",  "does",  "have",  "same",  "as",    "more", "fewer",
      "than",  "a",    "that",    "both",  "and",   "or",    "either", "of",   "with"};
  for (const auto& w : frames) put(w);
  return words;
}

GeneratedSplits generate_splits(const SplitSpec& spec) {
  if (spec.kind != "cogent" && spec.kind != "closure" && spec.kind != "sgl")
    throw std::invalid_argument("generator: unknown split kind '" + spec.kind + "'");

  const bool cogent = spec.kind == "cogent";
  const auto train_fams = train_families();
  const auto test_fams = cogent ? train_families() : heldout_families();
  SceneConstraints train_cond = cogent ? cogent_condition_a() : SceneConstraints{};
  SceneConstraints test_cond = cogent ? cogent_condition_b() : SceneConstraints{};

  GeneratedSplits out;
  out.manifest.kind = spec.kind;
  out.manifest.seed = spec.seed;
  out.manifest.catalog_hash = SubTaskCatalog::default26().hash();
  out.manifest.train_families = train_fams;
  out.manifest.test_families = test_fams;
  out.manifest.grid_h = spec.grid_h;
  out.manifest.grid_w = spec.grid_w;

  int64_t next_scene_id = 0;
  auto emit = [&](std::vector<Sample>& sink, const std::string& split_name, const std::string& family,
                  Scene&& scene, Proposal&& prop, std::string&& truth) {
    Sample s;
    s.scene_id = next_scene_id++;
    s.scene = std::move(scene);
    s.program = std::move(prop.program);
    s.question = std::move(prop.question);
    s.answer = std::move(truth);
    s.family = family;
    s.split = split_name;
    sink.push_back(std::move(s));
  };

  // program first, then scenes resampled until the oracle yields the required
  // answer: P(answer | program) stays flat, so questions alone carry no label
  auto fill = [&](std::vector<Sample>& sink, const std::string& split_name, const std::vector<std::string>& fams,
                  const SceneConstraints& cond, int total, uint64_t stream) {
    std::mt19937_64 rng(mix_seed(spec.seed, stream));
    std::map<std::string, int> cycle;
    for (int i = 0; i < total; ++i) {
      const std::string& family = fams[static_cast<size_t>(i) % fams.size()];
      const auto support = family_answer_support(family);
      const std::string required = support[static_cast<size_t>(cycle[family]) % support.size()];
      const int hint = cycle[family];

      bool done = false;
      for (int prog_try = 0; prog_try < 6 && !done; ++prog_try) {
        auto proposal = propose(family, rng, required, hint);
        if (!proposal) continue;
        for (int scene_try = 0; scene_try < 150 && !done; ++scene_try) {
          Scene scene = generate_scene(rng, cond, spec.grid_h, spec.grid_w);
          std::string truth;
          try {
            truth = exec_program_symbolic(proposal->program, scene);
          } catch (const ExecError&) {
            continue;
          }
          if (truth != required) continue;
          emit(sink, split_name, family, std::move(scene), std::move(*proposal), std::move(truth));
          done = true;
        }
      }
      if (!done) {
        // quota relaxation: accept the first supported answer a program yields
        out.manifest.relaxed_samples += 1;
        for (int prog_try = 0; prog_try < 6 && !done; ++prog_try) {
          auto proposal = propose(family, rng, required, hint);
          if (!proposal) continue;
          for (int scene_try = 0; scene_try < 200 && !done; ++scene_try) {
            Scene scene = generate_scene(rng, cond, spec.grid_h, spec.grid_w);
            std::string truth;
            try {
              truth = exec_program_symbolic(proposal->program, scene);
            } catch (const ExecError&) {
              continue;
            }
            if (std::find(support.begin(), support.end(), truth) == support.end()) continue;
            emit(sink, split_name, family, std::move(scene), std::move(*proposal), std::move(truth));
            done = true;
          }
        }
      }
      if (!done) throw DataAuditError("generator: family '" + family + "' unsatisfiable even after relaxation");
      cycle[family] += 1;
    }
  };

  fill(out.train, "train", train_fams, train_cond, spec.n_train, 1);
  fill(out.val, "val", train_fams, train_cond, spec.n_val, 2);
  const int n_test = spec.kind == "sgl" ? static_cast<int>(test_fams.size()) * 50 : spec.n_test;
  fill(out.test, "test_sysgen", test_fams, test_cond, n_test, 3);

  out.manifest.counts["train"] = static_cast<int64_t>(out.train.size());
  out.manifest.counts["val"] = static_cast<int64_t>(out.val.size());
  out.manifest.counts["test_sysgen"] = static_cast<int64_t>(out.test.size());

  // hard audits before anything is emitted
  audit_label_soundness(out.train);
  audit_label_soundness(out.val);
  audit_label_soundness(out.test);
  if (cogent) {
    audit_attribute_hygiene(out.train, train_cond, test_cond);
    audit_attribute_hygiene(out.val, train_cond, test_cond);
  } else {
    audit_family_hygiene(out.train, out.test);
  }
  return out;
}

DatasetFiles build_splits(const SplitSpec& spec, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto splits = generate_splits(spec);

  DatasetFiles files;
  files.train = (fs::path(out_dir) / "train.jsonl").string();
  files.val = (fs::path(out_dir) / "val.jsonl").string();
  files.test = (fs::path(out_dir) / "test_sysgen.jsonl").string();
  files.manifest = (fs::path(out_dir) / "manifest.json").string();

  write_dataset(files.train, "train", spec.kind, splits.train);
  write_dataset(files.val, "val", spec.kind, splits.val);
  write_dataset(files.test, "test_sysgen", spec.kind, splits.test);

  splits.manifest.checksums["train"] = file_checksum(files.train);
  splits.manifest.checksums["val"] = file_checksum(files.val);
  splits.manifest.checksums["test_sysgen"] = file_checksum(files.test);
  write_manifest(files.manifest, splits.manifest);
  return files;
}

}  // namespace tmn
