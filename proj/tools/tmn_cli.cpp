#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tmn/attention_dump.hpp"
#include "tmn/generator.hpp"
#include "tmn/suite.hpp"
#include "tmn/train.hpp"

namespace {

using namespace tmn;

SplitSpec split_spec_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("gen-data: cannot open spec file " + path);
  SplitSpec spec;
  std::string line;
  while (std::getline(in, line)) {
    const size_t eq = line.find('=');
    if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const size_t a = s.find_first_not_of(" \t\r");
      const size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "kind") spec.kind = value;
    else if (key == "seed") spec.seed = std::stoull(value);
    else if (key == "n_train") spec.n_train = std::stoi(value);
    else if (key == "n_val") spec.n_val = std::stoi(value);
    else if (key == "n_test") spec.n_test = std::stoi(value);
    else if (key == "grid_h") spec.grid_h = std::stoi(value);
    else if (key == "grid_w") spec.grid_w = std::stoi(value);
    else throw std::runtime_error("gen-data: unknown spec key '" + key + "'");
  }
  return spec;
}

int run(int argc, char** argv) {
  CLI::App app{"Transformer module networks on synthetic grid-world VQA"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate dataset splits with audits");
  std::string gen_spec_path, gen_out = "data", gen_kind = "closure";
  uint64_t gen_seed = 7;
  int gen_train = 16000, gen_val = 2000, gen_test = 2000;
  gen->add_option("--spec", gen_spec_path, "split spec file (key = value)");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--kind", gen_kind, "cogent | closure | sgl");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--n-train", gen_train, "training samples");
  gen->add_option("--n-val", gen_val, "validation samples");
  gen->add_option("--n-test", gen_test, "held-out samples (sgl fixes 50 per family)");

  auto* tr = app.add_subcommand("train", "train one model from a config file");
  std::string train_config;
  tr->add_option("--config", train_config, "experiment config file")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string eval_ckpt, eval_split;
  ev->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--split", eval_split, "dataset JSONL file")->required();

  auto* da = app.add_subcommand("dump-attn", "export head-averaged attention maps");
  std::string da_ckpt, da_split, da_out = "attn";
  int64_t da_sample = 0;
  da->add_option("--ckpt", da_ckpt, "checkpoint file")->required();
  da->add_option("--split", da_split, "dataset JSONL file holding the sample")->required();
  da->add_option("--sample-id", da_sample, "scene_id of the sample to trace")->required();
  da->add_option("--out", da_out, "output directory");

  auto* su = app.add_subcommand("suite", "run an experiment grid");
  std::string suite_name, suite_out = "suite_out", suite_config;
  su->add_option("--name", suite_name, "main | specialization | ablation | structure")->required();
  su->add_option("--out", suite_out, "output directory");
  su->add_option("--config", suite_config, "base experiment config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (gen->parsed()) {
    SplitSpec spec;
    if (!gen_spec_path.empty()) {
      spec = split_spec_from_file(gen_spec_path);
    } else {
      spec.kind = gen_kind;
      spec.seed = gen_seed;
      spec.n_train = gen_train;
      spec.n_val = gen_val;
      spec.n_test = gen_test;
    }
    auto files = build_splits(spec, gen_out);
    std::printf("wrote %s\n", files.train.c_str());
    std::printf("wrote %s\n", files.val.c_str());
    std::printf("wrote %s\n", files.test.c_str());
    std::printf("wrote %s\n", files.manifest.c_str());
    return 0;
  }

  if (tr->parsed()) {
    auto cfg = ExperimentConfig::from_file(train_config);
    auto result = train(cfg);
    std::printf("best val accuracy %.4f (epoch %d)\n", result.metrics.best_val_acc, result.metrics.best_epoch);
    if (!cfg.test_path.empty()) std::printf("test_sysgen accuracy %.4f\n", result.metrics.final_test_acc);
    std::printf("checkpoint %s\n", result.checkpoint_path.c_str());
    std::printf("metrics %s\n", result.metrics_csv.c_str());
    return 0;
  }

  if (ev->parsed()) {
    auto result = evaluate(load_checkpoint(eval_ckpt), eval_split);
    std::printf("accuracy %.4f over %lld samples\n", result.accuracy, static_cast<long long>(result.n));
    for (const auto& [fam, acc] : result.per_family)
      std::printf("  %-18s %.4f (%lld)\n", fam.c_str(), acc,
                  static_cast<long long>(result.per_family_count.at(fam)));
    std::printf("layer audit: executed %lld, expected %lld\n", static_cast<long long>(result.layers_executed),
                static_cast<long long>(result.layers_expected));
    return 0;
  }

  if (da->parsed()) {
    auto samples = load_dataset(da_split);
    const Sample* found = nullptr;
    for (const auto& s : samples)
      if (s.scene_id == da_sample) {
        found = &s;
        break;
      }
    if (!found) throw std::runtime_error("dump-attn: no sample with scene_id " + std::to_string(da_sample));
    auto result = dump_attention(load_checkpoint(da_ckpt), *found, da_out);
    for (size_t i = 0; i < result.files.size(); ++i)
      std::printf("%s (row_sum %.6f, visual mass %.6f)\n", result.files[i].c_str(), result.head_row_sums[i],
                  result.visual_mass[i]);
    return 0;
  }

  if (su->parsed()) {
    SuiteConfig cfg;
    cfg.out_dir = suite_out;
    if (!suite_config.empty()) cfg.base = ExperimentConfig::from_file(suite_config);
    auto result = run_suite(suite_name, cfg);
    std::ifstream table(result.table_txt);
    std::cout << table.rdbuf();
    std::printf("results %s\n", result.results_csv.c_str());
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const tmn::DataAuditError& e) {
    std::fprintf(stderr, "data audit failure: %s\n", e.what());
    return 2;
  } catch (const tmn::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
