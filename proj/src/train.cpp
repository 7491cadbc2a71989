#include "tmn/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "tmn/adam.hpp"
#include "tmn/rng.hpp"
#include "tmn/symbolic.hpp"

namespace tmn {

namespace fs = std::filesystem;

HarnessModel HarnessModel::build(const ExperimentConfig& cfg, int n_answers) {
  HarnessModel m;
  m.kind = cfg.model_kind;
  auto lexicon = Lexicon::build();
  if (is_tmn(cfg.model_kind)) {
    m.tmn = TmnModel<float>::init(cfg.model, build_library(cfg.library, SubTaskCatalog::default26(), cfg.library_seed),
                                  std::move(lexicon), n_answers, cfg.seed);
  } else {
    m.baseline = BaselineModel<float>::init(cfg.model, cfg.model_kind, std::move(lexicon), n_answers, cfg.seed);
  }
  return m;
}

HarnessModel HarnessModel::from_checkpoint(const Checkpoint& ckpt) {
  HarnessModel m;
  m.kind = checkpoint_kind(ckpt);
  if (is_tmn(m.kind))
    m.tmn = tmn_from_checkpoint(ckpt);
  else
    m.baseline = baseline_from_checkpoint(ckpt);
  return m;
}

std::vector<Tensor<float>> HarnessModel::parameters() { return tmn ? tmn->parameters() : baseline->parameters(); }

Checkpoint HarnessModel::to_checkpoint() {
  return tmn ? tmn_to_checkpoint(*tmn, kind == ModelKind::TmnTree ? PlanStructure::Tree : PlanStructure::Stack)
             : baseline_to_checkpoint(*baseline);
}

Tensor<float> HarnessModel::forward(const ModelInputs<float>& in, ForwardStats* stats, ForwardTrace* trace,
                                    TrainContext<float>* ctx) const {
  return tmn ? forward_tmn(*tmn, in, stats, trace, ctx) : forward_baseline(*baseline, in, stats, trace, ctx);
}

std::vector<std::vector<const Sample*>> group_by_shape(const std::vector<Sample>& samples) {
  std::map<std::string, std::vector<const Sample*>> buckets;
  for (const auto& s : samples) buckets[program_shape_key(s.program)].push_back(&s);
  std::vector<std::vector<const Sample*>> out;
  for (auto& [key, group] : buckets) out.push_back(std::move(group));
  return out;
}

namespace {

int env_threads() {
  const char* v = std::getenv("TMN_THREADS");
  if (!v) return 1;
  const int n = std::atoi(v);
  return n > 0 ? n : 1;
}

struct GroupStats {
  int64_t correct = 0;
  int64_t n = 0;
  std::map<std::string, std::pair<int64_t, int64_t>> per_family;  // correct, count
  int64_t layers_executed = 0;
  int64_t layers_expected = 0;
};

GroupStats eval_group(const HarnessModel& model, const std::vector<const Sample*>& group,
                      PlanStructure structure, int max_batch) {
  GroupStats gs;
  const auto& answers = AnswerVocab::standard();
  for (size_t start = 0; start < group.size(); start += static_cast<size_t>(max_batch)) {
    std::vector<const Sample*> chunk(group.begin() + static_cast<int64_t>(start),
                                     group.begin() + static_cast<int64_t>(std::min(group.size(), start + static_cast<size_t>(max_batch))));
    auto in = make_inputs<float>(chunk, model.lexicon(), structure);
    ForwardStats stats;
    auto logits = model.forward(in, &stats);
    const int64_t expected = expected_layer_count(model.kind, model.config(), in.shape.length());
    gs.layers_executed += stats.encoder_layers;
    gs.layers_expected += expected;
    if (stats.encoder_layers != expected)
      throw NumericalError("layer audit: executed " + std::to_string(stats.encoder_layers) + " layers, law requires " +
                           std::to_string(expected) + " for a length-" + std::to_string(in.shape.length()) +
                           " program under " + to_string(model.kind));
    auto preds = predict_batch(logits);
    for (size_t b = 0; b < chunk.size(); ++b) {
      const bool ok = answers.name(preds[b]) == chunk[b]->answer;
      gs.correct += ok;
      gs.n += 1;
      auto& fam = gs.per_family[chunk[b]->family];
      fam.first += ok;
      fam.second += 1;
    }
  }
  return gs;
}

EvalResult merge_stats(std::vector<GroupStats>& stats) {
  EvalResult r;
  int64_t correct = 0;
  for (const auto& gs : stats) {
    correct += gs.correct;
    r.n += gs.n;
    r.layers_executed += gs.layers_executed;
    r.layers_expected += gs.layers_expected;
    for (const auto& [fam, pc] : gs.per_family) {
      r.per_family[fam] += 0.0;  // ensure key
      r.per_family_count[fam] += pc.second;
    }
  }
  std::map<std::string, int64_t> fam_correct;
  for (const auto& gs : stats)
    for (const auto& [fam, pc] : gs.per_family) fam_correct[fam] += pc.first;
  for (auto& [fam, acc] : r.per_family)
    acc = static_cast<double>(fam_correct[fam]) / static_cast<double>(r.per_family_count[fam]);
  r.accuracy = r.n ? static_cast<double>(correct) / static_cast<double>(r.n) : 0.0;
  return r;
}

}  // namespace

EvalResult evaluate_samples(const HarnessModel& model, const std::vector<Sample>& samples) {
  const PlanStructure structure =
      model.kind == ModelKind::TmnTree ? PlanStructure::Tree : PlanStructure::Stack;
  auto groups = group_by_shape(samples);
  std::vector<GroupStats> stats(groups.size());
  const int threads = std::min<int>(env_threads(), static_cast<int>(groups.size()));
  if (threads <= 1) {
    for (size_t g = 0; g < groups.size(); ++g) stats[g] = eval_group(model, groups[g], structure, 256);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (size_t g = next.fetch_add(1); g < groups.size(); g = next.fetch_add(1))
          stats[g] = eval_group(model, groups[g], structure, 256);
      });
    for (auto& th : pool) th.join();
  }
  return merge_stats(stats);
}

EvalResult evaluate(const Checkpoint& ckpt, const std::string& split_path) {
  auto model = HarnessModel::from_checkpoint(ckpt);
  return evaluate_samples(model, load_dataset(split_path));
}

EvalResult evaluate_oracle_shim(const std::vector<Sample>& samples) {
  EvalResult r;
  int64_t correct = 0;
  for (const auto& s : samples) {
    const bool ok = exec_program_symbolic(s.program, s.scene) == s.answer;
    correct += ok;
    r.n += 1;
    r.per_family_count[s.family] += 1;
    if (ok) r.per_family[s.family] += 1;
  }
  for (auto& [fam, acc] : r.per_family) acc /= static_cast<double>(r.per_family_count[fam]);
  r.accuracy = r.n ? static_cast<double>(correct) / static_cast<double>(r.n) : 0.0;
  return r;
}

EvalResult evaluate_constant_shim(const std::vector<Sample>& samples, const std::string& answer) {
  EvalResult r;
  int64_t correct = 0;
  for (const auto& s : samples) {
    const bool ok = s.answer == answer;
    correct += ok;
    r.n += 1;
    r.per_family_count[s.family] += 1;
    if (ok) r.per_family[s.family] += 1;
  }
  for (auto& [fam, acc] : r.per_family) acc /= static_cast<double>(r.per_family_count[fam]);
  r.accuracy = r.n ? static_cast<double>(correct) / static_cast<double>(r.n) : 0.0;
  return r;
}

std::string majority_answer(const std::vector<Sample>& samples) {
  std::map<std::string, int64_t> counts;
  for (const auto& s : samples) counts[s.answer] += 1;
  std::string best;
  int64_t best_n = -1;
  for (const auto& [ans, n] : counts)
    if (n > best_n) {
      best = ans;
      best_n = n;
    }
  return best;
}

TrainResult train(const ExperimentConfig& cfg) {
  const auto t_start = std::chrono::steady_clock::now();
  auto train_samples = load_dataset(cfg.train_path);
  auto val_samples = load_dataset(cfg.val_path);
  std::vector<Sample> test_samples;
  if (!cfg.test_path.empty()) test_samples = load_dataset(cfg.test_path);
  audit_label_soundness(train_samples);
  audit_label_soundness(val_samples);

  fs::create_directories(cfg.out_dir);
  const auto& answers = AnswerVocab::standard();
  auto model = HarnessModel::build(cfg, answers.size());

  AdamConfig<float> adam_cfg;
  adam_cfg.lr = static_cast<float>(cfg.lr);
  Adam<float> opt(model.parameters(), adam_cfg);
  TrainContext<float> ctx(mix_seed(cfg.seed, 0xD0), cfg.model.dropout);

  // index samples by shape group once; batches draw shuffled sample order
  std::map<std::string, std::vector<int>> shape_members;
  for (size_t i = 0; i < train_samples.size(); ++i)
    shape_members[program_shape_key(train_samples[i].program)].push_back(static_cast<int>(i));

  TrainResult result;
  MetricsRecord& metrics = result.metrics;
  const std::string csv_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
  std::ofstream csv(csv_path);
  csv << "epoch,train_loss,train_accuracy,val_accuracy,test_sysgen_accuracy\n";

  bool first_batch = true;
  Checkpoint best;
  const PlanStructure structure = cfg.structure();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0xE0000 + static_cast<uint64_t>(epoch)));
    std::vector<int> order(train_samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(uniform_int(shuffle_rng, static_cast<int64_t>(i)))]);

    // one optimizer step covers ~batch_size samples; a step may hold several
    // same-shape chunks since shapes fragment the stream
    using Chunk = std::vector<const Sample*>;
    std::vector<std::vector<Chunk>> steps;
    std::map<std::string, Chunk> pending;
    for (int idx : order) {
      const Sample& s = train_samples[static_cast<size_t>(idx)];
      auto& bucket = pending[program_shape_key(s.program)];
      bucket.push_back(&s);
      if (static_cast<int>(bucket.size()) >= cfg.batch_size) {
        steps.push_back({std::move(bucket)});
        bucket.clear();
      }
    }
    {
      std::vector<Chunk> step;
      int in_step = 0;
      for (auto& [key, bucket] : pending) {
        if (bucket.empty()) continue;
        in_step += static_cast<int>(bucket.size());
        step.push_back(std::move(bucket));
        if (in_step >= cfg.batch_size) {
          steps.push_back(std::move(step));
          step.clear();
          in_step = 0;
        }
      }
      if (!step.empty()) steps.push_back(std::move(step));
    }

    double loss_sum = 0.0;
    int64_t seen = 0, correct = 0;
    for (const auto& step : steps) {
      if (cfg.warmup_steps > 0 && opt.step_count() < cfg.warmup_steps)
        opt.set_lr(static_cast<float>(cfg.lr * static_cast<double>(opt.step_count() + 1) / cfg.warmup_steps));
      else
        opt.set_lr(static_cast<float>(cfg.lr));
      int64_t total = 0;
      for (const auto& chunk : step) total += static_cast<int64_t>(chunk.size());
      Tensor<float> loss;
      double step_loss = 0.0;
      for (const auto& chunk : step) {
        auto in = make_inputs<float>(chunk, model.lexicon(), structure);
        auto logits = model.forward(in, nullptr, nullptr, &ctx);
        auto chunk_loss = cross_entropy(logits, in.labels);
        step_loss += chunk_loss.item() * static_cast<double>(chunk.size());
        auto weighted = scale(chunk_loss, static_cast<float>(chunk.size()) / static_cast<float>(total));
        loss = loss.defined() ? add(loss, weighted) : weighted;
        auto preds = predict_batch(logits);
        for (size_t b = 0; b < chunk.size(); ++b)
          correct += answers.name(preds[b]) == chunk[b]->answer;
      }
      const double loss_val = loss.item();
      if (!std::isfinite(loss_val)) {
        double grad_norm = 0.0;
        for (auto& p : model.parameters())
          if (p.has_grad())
            for (float g : p.grad()) grad_norm += static_cast<double>(g) * g;
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + " (lr=" +
                             std::to_string(cfg.lr) + ", last grad norm " + std::to_string(std::sqrt(grad_norm)) + ")");
      }
      if (first_batch) {
        metrics.initial_loss = loss_val;
        first_batch = false;
      }
      loss.backward();
      opt.step();
      opt.zero_grad();
      loss_sum += step_loss;
      seen += total;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(seen);
    em.train_acc = static_cast<double>(correct) / static_cast<double>(seen);

    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      auto val = evaluate_samples(model, val_samples);
      em.val_acc = val.accuracy;
      metrics.layers_executed += val.layers_executed;
      metrics.layers_expected += val.layers_expected;
      if (!test_samples.empty()) {
        auto test = evaluate_samples(model, test_samples);
        em.test_acc = test.accuracy;
        metrics.layers_executed += test.layers_executed;
        metrics.layers_expected += test.layers_expected;
      }
      if (val.accuracy > metrics.best_val_acc) {
        metrics.best_val_acc = val.accuracy;
        metrics.best_epoch = epoch;
        best = model.to_checkpoint();
        metrics.per_family_val = val.per_family;
      }
    }
    char row[256];
    std::snprintf(row, sizeof(row), "%d,%.6f,%.6f,%.6f,%.6f\n", em.epoch, em.train_loss, em.train_acc, em.val_acc,
                  em.test_acc);
    csv << row;
    metrics.epochs.push_back(em);
    if (metrics.best_val_acc >= cfg.early_stop_val_acc) break;
  }
  csv.close();

  if (metrics.best_epoch < 0) best = model.to_checkpoint();
  if (!test_samples.empty()) {
    auto best_model = HarnessModel::from_checkpoint(best);
    auto test = evaluate_samples(best_model, test_samples);
    metrics.final_test_acc = test.accuracy;
    metrics.per_family_test = test.per_family;
  }

  result.best = std::move(best);
  result.metrics_csv = csv_path;
  result.checkpoint_path = (fs::path(cfg.out_dir) / "best.ckpt").string();
  save_checkpoint(result.checkpoint_path, result.best);
  cfg.save((fs::path(cfg.out_dir) / "config.txt").string());
  metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  std::ofstream log((fs::path(cfg.out_dir) / "run.log").string());
  log << "wall_seconds " << metrics.wall_seconds << "\n"
      << "best_epoch " << metrics.best_epoch << "\n"
      << "best_val_acc " << metrics.best_val_acc << "\n"
      << "final_test_acc " << metrics.final_test_acc << "\n"
      << "initial_loss " << metrics.initial_loss << "\n";
  return result;
}

}  // namespace tmn
