#include "tmn/model.hpp"

namespace tmn {

using nlohmann::json;

json config_to_json(const ModelConfig& cfg) {
  json j;
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["d_ff"] = cfg.d_ff;
  j["n_layers_monolithic"] = cfg.n_layers_monolithic;
  j["layers_per_module"] = cfg.layers_per_module;
  j["dropout"] = cfg.dropout;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.d_model = j.at("d_model").get<int64_t>();
  cfg.n_heads = j.at("n_heads").get<int64_t>();
  cfg.d_ff = j.at("d_ff").get<int64_t>();
  cfg.n_layers_monolithic = j.at("n_layers_monolithic").get<int64_t>();
  cfg.layers_per_module = j.at("layers_per_module").get<int64_t>();
  cfg.dropout = j.at("dropout").get<float>();
  return cfg;
}

namespace {

json meta_common(const ModelConfig& cfg, ModelKind kind, uint64_t catalog_hash, int n_answers) {
  json meta;
  meta["format"] = "tmn-model";
  meta["kind"] = to_string(kind);
  meta["config"] = config_to_json(cfg);
  meta["catalog_hash"] = catalog_hash;
  meta["n_answers"] = n_answers;
  return meta;
}

template <typename M>
void collect_tensors(M& model, Checkpoint& ckpt) {
  // deep copies: a checkpoint must not alias live training parameters
  model.visit_params([&](const std::string& name, Tensor<float>& t) { ckpt.tensors.emplace_back(name, t.detach()); });
}

template <typename M>
void restore_tensors(M& model, const Checkpoint& ckpt) {
  model.visit_params([&](const std::string& name, Tensor<float>& t) {
    const Tensor<float>& src = ckpt.get(name);
    if (src.shape() != t.shape())
      throw std::runtime_error("checkpoint: tensor " + name + " has shape " + shape_str(src.shape()) +
                               ", model expects " + shape_str(t.shape()));
    std::copy(src.data(), src.data() + src.size(), t.data());
  });
}

void verify_catalog(const json& meta, const SubTaskCatalog& catalog) {
  const auto stored = meta.at("catalog_hash").get<uint64_t>();
  if (stored != catalog.hash())
    throw std::runtime_error("checkpoint: catalog hash " + std::to_string(stored) +
                             " does not match the active catalog " + std::to_string(catalog.hash()));
}

}  // namespace

ModelKind checkpoint_kind(const Checkpoint& ckpt) {
  return model_kind_from_string(json::parse(ckpt.meta).at("kind").get<std::string>());
}

Checkpoint tmn_to_checkpoint(TmnModel<float>& model, PlanStructure structure) {
  Checkpoint ckpt;
  json meta = meta_common(model.cfg,
                          structure == PlanStructure::Tree ? ModelKind::TmnTree : ModelKind::TmnStack,
                          model.library.catalog_hash, model.n_answers);
  meta["library"] = {{"strategy", to_string(model.library.strategy)},
                     {"seed", model.library.seed},
                     {"num_modules", model.library.num_modules}};
  ckpt.meta = meta.dump();
  collect_tensors(model, ckpt);
  return ckpt;
}

Checkpoint baseline_to_checkpoint(BaselineModel<float>& model) {
  Checkpoint ckpt;
  json meta = meta_common(model.cfg, model.kind, SubTaskCatalog::default26().hash(), model.n_answers);
  ckpt.meta = meta.dump();
  collect_tensors(model, ckpt);
  return ckpt;
}

TmnModel<float> tmn_from_checkpoint(const Checkpoint& ckpt, const SubTaskCatalog& catalog) {
  json meta = json::parse(ckpt.meta);
  verify_catalog(meta, catalog);
  const ModelConfig cfg = config_from_json(meta.at("config"));
  const auto& lib = meta.at("library");
  auto library = build_library(library_strategy_from_string(lib.at("strategy").get<std::string>()), catalog,
                               lib.at("seed").get<uint64_t>());
  if (library.num_modules != lib.at("num_modules").get<int>())
    throw std::runtime_error("checkpoint: rebuilt library has a different module count");
  auto model = TmnModel<float>::init(cfg, std::move(library), Lexicon::build(catalog),
                                     meta.at("n_answers").get<int>(), 0);
  restore_tensors(model, ckpt);
  return model;
}

BaselineModel<float> baseline_from_checkpoint(const Checkpoint& ckpt, const SubTaskCatalog& catalog) {
  json meta = json::parse(ckpt.meta);
  verify_catalog(meta, catalog);
  const ModelConfig cfg = config_from_json(meta.at("config"));
  auto model = BaselineModel<float>::init(cfg, model_kind_from_string(meta.at("kind").get<std::string>()),
                                          Lexicon::build(catalog), meta.at("n_answers").get<int>(), 0);
  restore_tensors(model, ckpt);
  return model;
}

}  // namespace tmn
