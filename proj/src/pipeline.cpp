#include "virel/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "virel/checkpoint.hpp"

namespace virel {

using json = nlohmann::ordered_json;

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse: ") + e.what());
  }
  RunConfig cfg;
  if (doc.contains("task_family")) cfg.task_family = doc["task_family"].get<std::string>();
  cfg.examples_per_task = doc.value("examples_per_task", cfg.examples_per_task);
  cfg.distractors = doc.value("distractors", cfg.distractors);
  if (doc.contains("objective")) {
    std::string o = doc["objective"].get<std::string>();
    if (o == "contrastive") cfg.objective = Objective::Contrastive;
    else if (o == "classify") cfg.objective = Objective::Classify;
    else throw ConfigError("objective must be contrastive|classify, got " + o);
  }
  cfg.ib = doc.value("ib", cfg.ib);
  cfg.seed = doc.value("seed", cfg.seed);
  cfg.epochs = doc.value("epochs", cfg.epochs);
  cfg.patience = doc.value("patience", cfg.patience);
  cfg.k = doc.value("k", cfg.k);
  cfg.group_size = doc.value("group_size", cfg.group_size);
  cfg.top_k = doc.value("top_k", cfg.top_k);
  cfg.threads = doc.value("threads", cfg.threads);
  cfg.max_objects = doc.value("max_objects", cfg.max_objects);
  if (doc.contains("out_dir")) cfg.out_dir = doc["out_dir"].get<std::string>();
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  if (task_family.empty() || !std::filesystem::exists(task_family))
    throw ConfigError("task_family not found: " + task_family.string());
  if (distractors != "0" && distractors != "1" && distractors != "0-2")
    throw ConfigError("distractors must be one of 0 | 1 | 0-2");
  if (examples_per_task < 1) throw ConfigError("examples_per_task < 1");
  if (epochs < 1) throw ConfigError("epochs < 1");
  if (k < 2) throw ConfigError("k < 2");
  if (group_size < 2) throw ConfigError("group_size < 2");
  if (threads < 1) throw ConfigError("threads < 1");
}

namespace {

int draw_distractors(const std::string& policy, Rng& rng) {
  if (policy == "0") return 0;
  if (policy == "1") return 1;
  return rng.uniform_int(0, 2);
}

int relation_label(RelationType r) { return static_cast<int>(r); }

}  // namespace

Observation generate_for_task(const TaskSpec& spec, const std::string& distractors,
                              uint64_t dataset_seed, int obs_id) {
  Rng rng(Rng::mix(dataset_seed, static_cast<uint64_t>(spec.task_id) * 1000003u +
                                     static_cast<uint64_t>(obs_id)));
  int nd = draw_distractors(distractors, rng);
  Observation o = generate_observation(spec, nd, rng);
  o.obs_id = obs_id;
  return o;
}

namespace {

std::vector<Observation> generate_family(const std::vector<TaskSpec>& tasks,
                                         const RunConfig& cfg, uint64_t seed) {
  std::vector<Observation> all(tasks.size() * cfg.examples_per_task);
  auto work = [&](size_t t0, size_t t1) {
    for (size_t t = t0; t < t1; ++t)
      for (int i = 0; i < cfg.examples_per_task; ++i)
        all[t * cfg.examples_per_task + i] =
            generate_for_task(tasks[t], cfg.distractors, seed, i);
  };
  int nthreads = std::min<int>(cfg.threads, static_cast<int>(tasks.size()));
  if (nthreads <= 1) {
    work(0, tasks.size());
  } else {
    std::vector<std::thread> pool;
    size_t per = (tasks.size() + nthreads - 1) / nthreads;
    for (int t = 0; t < nthreads; ++t) {
      size_t lo = t * per, hi = std::min(tasks.size(), lo + per);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  return all;
}

}  // namespace

void cmd_gen(const RunConfig& cfg) {
  auto tasks = read_task_family(cfg.task_family);
  std::filesystem::create_directories(cfg.out_dir);
  write_dataset(generate_family(tasks, cfg, cfg.seed), cfg.out_dir / "train.jsonl");
  write_dataset(generate_family(tasks, cfg, cfg.seed + 1), cfg.out_dir / "val.jsonl");
}

CrGnn<float> build_model(const RunConfig& cfg, int n_tasks) {
  ModelConfig mc;
  mc.ib = cfg.ib;
  mc.n_tasks = cfg.objective == Objective::Classify ? n_tasks : 0;
  mc.max_objects = cfg.max_objects;
  return CrGnn<float>(mc);
}

namespace {

void save_model(const CrGnn<float>& model, Objective objective,
                const std::filesystem::path& ckpt) {
  save_checkpoint(model.params, ckpt);
  json meta;
  meta["schema_version"] = 1;
  meta["ib"] = model.cfg.ib;
  meta["n_tasks"] = model.cfg.n_tasks;
  meta["max_objects"] = model.cfg.max_objects;
  meta["objective"] = objective == Objective::Classify ? "classify" : "contrastive";
  std::ofstream f(ckpt.string() + ".meta.json");
  f << meta.dump(2) << "\n";
}

}  // namespace

CrGnn<float> load_model(const std::filesystem::path& checkpoint) {
  std::ifstream f(checkpoint.string() + ".meta.json");
  if (!f) throw DataError("missing checkpoint meta " + checkpoint.string() + ".meta.json");
  json meta = json::parse(f);
  ModelConfig mc;
  mc.ib = meta.value("ib", false);
  mc.n_tasks = meta.value("n_tasks", 0);
  mc.max_objects = meta.value("max_objects", 6);
  CrGnn<float> model(mc);
  load_checkpoint(model.params, checkpoint);
  return model;
}

// ---- embeddings and evaluation ----

std::vector<PairEmbeddingRow> relation_embeddings(
    const CrGnn<float>& model, const std::vector<Observation>& data) {
  std::vector<PairEmbeddingRow> rows;
  const size_t chunk = 64;
  for (size_t base = 0; base < data.size(); base += chunk) {
    size_t end = std::min(data.size(), base + chunk);
    std::vector<TrainObs> stripped;
    std::vector<const TrainObs*> batch;
    for (size_t i = base; i < end; ++i)
      stripped.push_back(strip_for_training(data[i]));
    for (auto& t : stripped) batch.push_back(&t);
    Tape<float> tp;
    auto w = model.bind(tp, false);
    auto fwd = forward_batch<float>(tp, model, w, batch, nullptr);
    const auto& mean = tp.val(fwd.rel_mean);
    int D = model.cfg.rel_dim;
    for (size_t p = 0; p < fwd.pairs.size(); ++p) {
      const auto& pr = fwd.pairs[p];
      const Observation& o = data[base + pr.obs_index];
      PairEmbeddingRow row;
      row.obs_index = static_cast<int>(base) + pr.obs_index;
      row.obs_id = o.obs_id;
      row.k = pr.k;
      row.l = pr.l;
      row.z.resize(D);
      for (int d = 0; d < D; ++d)
        row.z[d] = static_cast<double>(mean.v[p * D + d]);
      for (const auto& e : o.edges)
        if (e.k == pr.k && e.l == pr.l) row.label = e.rel;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

RelationEval evaluate_relations(const std::vector<PairEmbeddingRow>& rows, int k,
                                uint64_t seed) {
  std::vector<std::vector<double>> points;
  points.reserve(rows.size());
  for (const auto& r : rows) points.push_back(r.z);
  RelationEval ev;
  ev.clusters = fit_kmeans(points, k, seed);
  std::vector<int> pred, truth;
  for (const auto& r : rows) {
    if (!r.label) continue;
    pred.push_back(ev.clusters.assign(r.z));
    truth.push_back(relation_label(*r.label));
  }
  ev.labeled_pairs = static_cast<int>(pred.size());
  auto [acc, assignment] = permutation_accuracy(pred, truth, k);
  ev.accuracy = acc;
  ev.assignment = assignment;
  return ev;
}

RelGraph predict_observation_graph(const Observation& o, const CrGnn<float>& model,
                                   const ClusterModel& clusters,
                                   const std::vector<int>& assignment) {
  auto rows = relation_embeddings(model, {o});
  RelGraph g;
  g.n_nodes = static_cast<int>(o.objects.size());
  for (const auto& r : rows) {
    int label = assignment[clusters.assign(r.z)];
    if (label != relation_label(RelationType::None))
      g.edges.push_back({r.k, r.l, static_cast<RelationType>(label)});
  }
  std::sort(g.edges.begin(), g.edges.end());
  return g;
}

// ---- training ----

namespace {

// Mirrors the scene augmentations on the stripped training view. Colors are
// recovered from the grid so the permutation augmentation stays applicable.
TrainObs augment_train(const TrainObs& t, Rng& rng) {
  Observation o;
  o.grid = t.grid;
  o.task_id = t.task_id;
  o.obs_id = t.obs_id;
  for (const auto& m : t.masks) {
    SceneObject obj;
    obj.mask = m;
    obj.bbox = bbox_of(m);
    obj.color = 1;
    for (int r = 0; r < kGrid && obj.color == 1; ++r)
      for (int c = 0; c < kGrid; ++c)
        if (m[r][c]) {
          obj.color = t.grid[r][c];
          break;
        }
    o.objects.push_back(std::move(obj));
  }
  return strip_for_training(augment_observation(o, rng));
}

struct Batch {
  std::vector<TrainObs> obs;
  std::vector<int> task_index;  // dense task index per observation
};

std::vector<Batch> plan_epoch(const std::vector<TrainObs>& data,
                              const std::vector<int>& task_of,
                              const BatchPlan& plan, Rng& rng, bool augment) {
  // Chunks of obs_per_task per task, shuffled, then grouped tasks_per_batch
  // at a time.
  std::map<int, std::vector<int>> by_task;
  for (size_t i = 0; i < data.size(); ++i) by_task[task_of[i]].push_back(static_cast<int>(i));
  struct Chunk {
    int task;
    std::vector<int> idx;
  };
  std::vector<Chunk> chunks;
  for (auto& [task, idx] : by_task) {
    rng.shuffle(idx);
    for (size_t i = 0; i + 1 < idx.size(); i += plan.obs_per_task) {
      size_t end = std::min(idx.size(), i + plan.obs_per_task);
      chunks.push_back({task, {idx.begin() + i, idx.begin() + end}});
    }
  }
  rng.shuffle(chunks);
  std::vector<Batch> batches;
  for (size_t i = 0; i + 1 < chunks.size(); i += plan.tasks_per_batch) {
    size_t end = std::min(chunks.size(), i + plan.tasks_per_batch);
    bool multi = false;
    for (size_t j = i + 1; j < end; ++j) multi = multi || chunks[j].task != chunks[i].task;
    if (!multi) continue;  // contrastive loss needs at least two tasks
    Batch b;
    for (size_t j = i; j < end; ++j)
      for (int idx : chunks[j].idx) {
        TrainObs t = data[idx];
        if (augment) t = augment_train(t, rng);
        b.obs.push_back(std::move(t));
        b.task_index.push_back(chunks[j].task);
      }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace

TrainResult cmd_train(const RunConfig& cfg) {
  auto tasks = read_task_family(cfg.task_family);
  auto train = read_dataset_for_training(cfg.out_dir / "train.jsonl");
  auto val = read_dataset(cfg.out_dir / "val.jsonl");
  if (train.empty()) throw DataError("empty training dataset");

  // Dense task index.
  std::map<int, int> task_index;
  for (const auto& t : tasks) task_index.emplace(t.task_id, static_cast<int>(task_index.size()));
  std::vector<int> task_of;
  for (const auto& t : train) {
    auto it = task_index.find(t.task_id);
    if (it == task_index.end()) throw DataError("dataset task_id not in family");
    task_of.push_back(it->second);
  }

  CrGnn<float> model = build_model(cfg, static_cast<int>(task_index.size()));
  model.init(Rng::mix(cfg.seed, 0x1715));
  AdamConfig adam;  // lr 1e-4, betas 0.9/0.999, eps 1e-8, no weight decay
  if (const char* e = std::getenv("VIREL_LR")) adam.lr = std::atof(e);  // TEMP experiment hook

  std::ofstream log(cfg.out_dir / "train_log.csv");
  log << "epoch,mode,loss_contrastive,loss_classify,loss_ib,loss_total,"
         "val_relation_accuracy,seed\n";
  std::string mode = std::string(cfg.objective == Objective::Classify
                                     ? "classify"
                                     : "contrastive") + (cfg.ib ? "+ib" : "");

  TrainResult result;
  std::vector<Param<float>> best_params;
  BatchPlan plan;
  LossWeights weights;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng(Rng::mix(cfg.seed, 0xE000 + epoch));
    if (const char* e = std::getenv("VIREL_IB_WARMUP")) {  // TEMP experiment hook
      int warm = std::atoi(e);
      weights.ib = 0.1 * std::min(1.0, (epoch + 1) / static_cast<double>(warm));
    }
    auto batches = plan_epoch(train, task_of, plan, erng, true);
    LossTerms epoch_terms;
    int steps = 0;
    for (auto& batch : batches) {
      Tape<float> tp;
      auto w = model.bind(tp, true);
      std::vector<const TrainObs*> ptrs;
      for (auto& o : batch.obs) ptrs.push_back(&o);
      auto fwd = forward_batch<float>(tp, model, w, ptrs, cfg.ib ? &erng : nullptr);
      auto [loss, terms] = total_loss<float>(tp, model, w, fwd, batch.task_index,
                                             cfg.objective, weights);
      if (!std::isfinite(terms.total))
        throw NumericFailure("non-finite loss at epoch " + std::to_string(epoch));
      tp.backward(loss);
      std::vector<std::vector<float>> grads;
      for (auto id : w) grads.push_back(tp.grad(id));
      adam_step(model.params, grads, adam);
      epoch_terms.contrastive += terms.contrastive;
      epoch_terms.classify += terms.classify;
      epoch_terms.ib += terms.ib;
      epoch_terms.total += terms.total;
      ++steps;
    }
    auto rows = relation_embeddings(model, val);
    auto ev = evaluate_relations(rows, cfg.k, Rng::mix(cfg.seed, 0xC1C0));
    log << epoch << "," << mode << "," << epoch_terms.contrastive / steps << ","
        << epoch_terms.classify / steps << "," << epoch_terms.ib / steps << ","
        << epoch_terms.total / steps << "," << ev.accuracy << "," << cfg.seed
        << "\n";
    log.flush();
    result.epochs_run = epoch + 1;
    if (ev.accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = ev.accuracy;
      result.best_epoch = epoch;
      best_params = model.params.params;
    }
    if (epoch - result.best_epoch >= cfg.patience) break;
  }
  if (!best_params.empty()) model.params.params = best_params;
  save_model(model, cfg.objective, cfg.out_dir / "checkpoint.ckpt");
  return result;
}

EvalReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& dataset) {
  CrGnn<float> model = load_model(checkpoint);
  auto data = read_dataset(dataset);
  auto rows = relation_embeddings(model, data);
  auto ev = evaluate_relations(rows, cfg.k, Rng::mix(cfg.seed, 0xC1C0));
  EvalReport rep;
  rep.accuracy = ev.accuracy;
  rep.assignment = ev.assignment;
  rep.clusters = ev.clusters;
  rep.labeled_pairs = ev.labeled_pairs;
  std::filesystem::create_directories(cfg.out_dir);
  json doc;
  doc["relation_accuracy"] = rep.accuracy;
  doc["labeled_pairs"] = rep.labeled_pairs;
  json assign = json::array();
  for (size_t c = 0; c < rep.assignment.size(); ++c)
    assign.push_back({{"cluster", c},
                      {"relation", to_string(static_cast<RelationType>(rep.assignment[c]))}});
  doc["assignment"] = std::move(assign);
  std::ofstream f(cfg.out_dir / "eval_report.json");
  f << doc.dump(2) << "\n";
  return rep;
}

std::vector<TaskRetrieval> cmd_retrieve(const RunConfig& cfg,
                                        const std::filesystem::path& checkpoint,
                                        const std::filesystem::path& dataset) {
  CrGnn<float> model = load_model(checkpoint);
  auto data = read_dataset(dataset);
  auto rows = relation_embeddings(model, data);
  auto ev = evaluate_relations(rows, cfg.k, Rng::mix(cfg.seed, 0xC1C0));

  // Predicted graph per observation from the already-computed embeddings.
  std::vector<RelGraph> graphs(data.size());
  for (size_t i = 0; i < data.size(); ++i)
    graphs[i].n_nodes = static_cast<int>(data[i].objects.size());
  for (const auto& r : rows) {
    int label = ev.assignment[ev.clusters.assign(r.z)];
    if (label != relation_label(RelationType::None))
      graphs[r.obs_index].edges.push_back({r.k, r.l, static_cast<RelationType>(label)});
  }
  for (auto& g : graphs) std::sort(g.edges.begin(), g.edges.end());

  // Group by task in obs_id order.
  std::map<int, std::vector<std::pair<int, int>>> by_task;  // task -> (obs_id, idx)
  for (size_t i = 0; i < data.size(); ++i)
    by_task[data[i].task_id].emplace_back(data[i].obs_id, static_cast<int>(i));
  std::vector<TaskRetrieval> report;
  for (auto& [task, members] : by_task) {
    std::sort(members.begin(), members.end());
    std::vector<RelGraph> task_graphs;
    for (auto [oid, idx] : members) task_graphs.push_back(graphs[idx]);
    TaskRetrieval tr;
    tr.task_id = task;
    tr.entries = task_mcs_retrieval(task_graphs, cfg.group_size, cfg.top_k);
    report.push_back(std::move(tr));
  }
  std::filesystem::create_directories(cfg.out_dir);
  write_retrieval_report(report, cfg.out_dir / "retrieval.json");
  return report;
}

void write_retrieval_report(const std::vector<TaskRetrieval>& report,
                            const std::filesystem::path& path) {
  json doc;
  json tasks = json::array();
  for (const auto& tr : report) {
    json entries = json::array();
    for (const auto& e : tr.entries) {
      json edges = json::array();
      for (const auto& ed : e.graph.edges)
        edges.push_back(json::array({ed.k, ed.l, to_string(ed.rel)}));
      entries.push_back({{"count", e.count}, {"edges", std::move(edges)}});
    }
    tasks.push_back({{"task_id", tr.task_id}, {"entries", std::move(entries)}});
  }
  doc["tasks"] = std::move(tasks);
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << doc.dump(2) << "\n";
}

void cmd_export(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                const std::filesystem::path& dataset,
                const std::filesystem::path& csv_out) {
  CrGnn<float> model = load_model(checkpoint);
  auto data = read_dataset(dataset);
  auto rows = relation_embeddings(model, data);
  std::ofstream f(csv_out);
  if (!f) throw DataError("cannot write " + csv_out.string());
  f << "obs_id,k,l";
  for (int d = 0; d < model.cfg.rel_dim; ++d) f << ",z" << d;
  f << ",label\n";
  for (const auto& r : rows) {
    f << r.obs_id << "," << r.k << "," << r.l;
    for (double z : r.z) f << "," << z;
    f << "," << (r.label ? to_string(*r.label) : "") << "\n";
  }
  if (!f) throw DataError("write failure on " + csv_out.string());
}

}  // namespace virel
