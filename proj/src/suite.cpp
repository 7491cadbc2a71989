#include "tmn/suite.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "tmn/generator.hpp"
#include "tmn/train.hpp"

namespace tmn {

namespace fs = std::filesystem;

std::vector<std::string> suite_names() { return {"main", "specialization", "ablation", "structure"}; }

std::string ensure_dataset(const std::string& kind, const SuiteConfig& cfg) {
  const fs::path dir = fs::path(cfg.data_root.empty() ? cfg.out_dir + "/data" : cfg.data_root) / kind;
  if (!fs::exists(dir / "manifest.json")) {
    SplitSpec spec;
    spec.kind = kind;
    spec.seed = cfg.data_seed;
    spec.n_train = cfg.n_train;
    spec.n_val = cfg.n_val;
    spec.n_test = cfg.n_test;
    build_splits(spec, dir.string());
  }
  return dir.string();
}

namespace {

struct CellSpec {
  std::string name;
  ModelKind kind;
  LibraryStrategy library;
  std::string split_kind;
};

std::vector<CellSpec> cells_for(const std::string& suite) {
  std::vector<CellSpec> cells;
  if (suite == "main") {
    for (auto kind : {ModelKind::Transformer, ModelKind::TransformerPR, ModelKind::TmnStack, ModelKind::TmnTree})
      for (const std::string split : {"cogent", "closure", "sgl"})
        cells.push_back({to_string(kind) + "/" + split, kind, LibraryStrategy::Individual, split});
  } else if (suite == "specialization") {
    for (auto lib : {LibraryStrategy::Individual, LibraryStrategy::SemanticGroup, LibraryStrategy::RandomGroup,
                     LibraryStrategy::Order})
      cells.push_back({"tmn_stack/" + to_string(lib), ModelKind::TmnStack, lib, "closure"});
  } else if (suite == "ablation") {
    for (auto kind : {ModelKind::TransformerPR, ModelKind::TransformerPRVL, ModelKind::TransformerPRVLST,
                      ModelKind::TmnStack})
      cells.push_back({to_string(kind), kind, LibraryStrategy::Individual, "closure"});
  } else if (suite == "structure") {
    for (auto kind : {ModelKind::TmnStack, ModelKind::TmnTree})
      cells.push_back({to_string(kind), kind, LibraryStrategy::Individual, "closure"});
  } else {
    throw std::invalid_argument("suite: unknown suite '" + suite + "' (main, specialization, ablation, structure)");
  }
  return cells;
}

struct Agg {
  std::vector<double> val, test;
  int failures = 0;
};

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

}  // namespace

SuiteResult run_suite(const std::string& name, const SuiteConfig& cfg) {
  const auto cells = cells_for(name);
  fs::create_directories(cfg.out_dir);
  SuiteResult result;

  for (const auto& cell : cells) {
    const std::string data_dir = ensure_dataset(cell.split_kind, cfg);
    for (uint64_t seed : cfg.seeds) {
      SuiteCellResult row;
      row.suite = name;
      row.cell = cell.name;
      row.seed = seed;
      try {
        ExperimentConfig run_cfg = cfg.base;
        run_cfg.model_kind = cell.kind;
        run_cfg.library = cell.library;
        run_cfg.train_path = (fs::path(data_dir) / "train.jsonl").string();
        run_cfg.val_path = (fs::path(data_dir) / "val.jsonl").string();
        run_cfg.test_path = (fs::path(data_dir) / "test_sysgen.jsonl").string();
        run_cfg.seed = seed;
        std::string cell_dir = cell.name;
        for (auto& c : cell_dir)
          if (c == '/') c = '_';
        run_cfg.out_dir = (fs::path(cfg.out_dir) / name / (cell_dir + "_seed" + std::to_string(seed))).string();
        auto trained = train(run_cfg);
        row.val_acc = trained.metrics.best_val_acc;
        row.test_acc = trained.metrics.final_test_acc;
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
      }
      result.rows.push_back(row);
    }
  }

  result.results_csv = (fs::path(cfg.out_dir) / (name + "_results.csv")).string();
  std::ofstream csv(result.results_csv);
  csv << "suite,cell,seed,val_accuracy,test_sysgen_accuracy,status\n";
  for (const auto& row : result.rows) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s,%s,%llu,%.6f,%.6f,%s\n", row.suite.c_str(), row.cell.c_str(),
                  static_cast<unsigned long long>(row.seed), row.val_acc, row.test_acc,
                  row.failed ? ("failed: " + row.error).c_str() : "ok");
    csv << buf;
  }
  csv.close();

  std::map<std::string, Agg> agg;
  for (const auto& row : result.rows) {
    auto& a = agg[row.cell];
    if (row.failed) {
      a.failures += 1;
    } else {
      a.val.push_back(row.val_acc);
      a.test.push_back(row.test_acc);
    }
  }
  result.table_txt = (fs::path(cfg.out_dir) / (name + "_table.txt")).string();
  std::ofstream table(result.table_txt);
  table << "suite: " << name << "\n";
  char header[256];
  std::snprintf(header, sizeof(header), "%-36s %-22s %-22s %s\n", "cell", "in-dist val", "sysgen test", "runs");
  table << header;
  for (const auto& [cell, a] : agg) {
    auto [vm, vs] = mean_std(a.val);
    auto [tm, ts] = mean_std(a.test);
    char line[256];
    std::snprintf(line, sizeof(line), "%-36s %6.2f +/- %-10.2f %6.2f +/- %-10.2f %zu ok, %d failed\n", cell.c_str(),
                  100 * vm, 100 * vs, 100 * tm, 100 * ts, a.val.size(), a.failures);
    table << line;
  }
  return result;
}

}  // namespace tmn
