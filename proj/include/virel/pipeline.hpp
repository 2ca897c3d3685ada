#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "virel/crgnn.hpp"
#include "virel/dataset.hpp"
#include "virel/discovery.hpp"
#include "virel/objectives.hpp"

namespace virel {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m)
      : std::runtime_error("ConfigError: " + m) {}
};
struct NumericFailure : std::runtime_error {
  explicit NumericFailure(const std::string& m)
      : std::runtime_error("NumericFailure: " + m) {}
};

// Exit codes for the CLI.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct RunConfig {
  std::filesystem::path task_family;
  int examples_per_task = 250;
  std::string distractors = "0";  // "0" | "1" | "0-2"
  Objective objective = Objective::Contrastive;
  bool ib = false;
  uint64_t seed = 0;
  int epochs = 100;
  int patience = 15;
  int k = 4;
  int group_size = 5;
  int top_k = 3;
  int threads = 1;
  int max_objects = 6;
  std::filesystem::path out_dir = "out";

  static RunConfig from_file(const std::filesystem::path& path);
  void validate() const;
};

// generate -> out_dir/train.jsonl + out_dir/val.jsonl (val seed = seed + 1)
void cmd_gen(const RunConfig& cfg);

struct TrainResult {
  double best_val_accuracy = 0.0;
  int best_epoch = -1;
  int epochs_run = 0;
};

// train -> out_dir/checkpoint.ckpt (+ .meta.json) and train_log.csv
TrainResult cmd_train(const RunConfig& cfg);

struct EvalReport {
  double accuracy = 0.0;
  std::vector<int> assignment;  // cluster id -> relation label id
  ClusterModel clusters;
  int labeled_pairs = 0;
};

EvalReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& dataset);

struct TaskRetrieval {
  int task_id = 0;
  std::vector<McsTallyEntry> entries;
};

std::vector<TaskRetrieval> cmd_retrieve(const RunConfig& cfg,
                                        const std::filesystem::path& checkpoint,
                                        const std::filesystem::path& dataset);

void cmd_export(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                const std::filesystem::path& dataset,
                const std::filesystem::path& csv_out);

// ---- shared machinery ----

CrGnn<float> build_model(const RunConfig& cfg, int n_tasks);
CrGnn<float> load_model(const std::filesystem::path& checkpoint);

struct PairEmbeddingRow {
  int obs_index = 0;
  int obs_id = 0;
  int k = 0, l = 0;
  std::vector<double> z;                 // relation mean, rel_dim values
  std::optional<RelationType> label;     // ground truth when the pair is labeled
};

std::vector<PairEmbeddingRow> relation_embeddings(
    const CrGnn<float>& model, const std::vector<Observation>& data);

struct RelationEval {
  double accuracy = 0.0;
  std::vector<int> assignment;
  ClusterModel clusters;
  int labeled_pairs = 0;
};

// k-means over all pair embeddings; accuracy over labeled pairs only,
// maximized over cluster->label bijections.
RelationEval evaluate_relations(const std::vector<PairEmbeddingRow>& rows, int k,
                                uint64_t seed);

// Nearest-centroid cluster per pair mapped through the assignment;
// None-labeled pairs are omitted from the edge set.
RelGraph predict_observation_graph(const Observation& o, const CrGnn<float>& model,
                                   const ClusterModel& clusters,
                                   const std::vector<int>& assignment);

Observation generate_for_task(const TaskSpec& spec, const std::string& distractors,
                              uint64_t dataset_seed, int obs_id);

void write_retrieval_report(const std::vector<TaskRetrieval>& report,
                            const std::filesystem::path& path);

}  // namespace virel
