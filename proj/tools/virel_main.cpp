#include <iostream>

#include "CLI11.hpp"
#include "virel/pipeline.hpp"

using namespace virel;

namespace {

struct CliArgs {
  std::string config;
  std::string task_family;
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string objective;
  std::string distractors;
  std::string export_csv = "embeddings.csv";
  int64_t seed = -1;
  int examples = -1, epochs = -1, k = -1, group_size = -1, top = -1, threads = -1;
  bool ib = false;
};

void add_common(CLI::App* cmd, CliArgs& a) {
  cmd->add_option("--config", a.config, "JSON run config");
  cmd->add_option("--task-family", a.task_family, "task family JSON file");
  cmd->add_option("--seed", a.seed, "random seed");
  cmd->add_option("--objective", a.objective, "contrastive|classify");
  cmd->add_flag("--ib", a.ib, "enable the information-bottleneck term");
  cmd->add_option("--distractors", a.distractors, "0 | 1 | 0-2");
  cmd->add_option("--examples-per-task", a.examples, "observations per task");
  cmd->add_option("--epochs", a.epochs, "epoch budget");
  cmd->add_option("--k", a.k, "number of k-means clusters");
  cmd->add_option("--group-size", a.group_size, "MCS group size");
  cmd->add_option("--top", a.top, "top-k tally entries");
  cmd->add_option("--threads", a.threads, "worker cap (default 1)");
  cmd->add_option("--out", a.out, "output directory");
}

RunConfig resolve(const CliArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = RunConfig::from_file(a.config);
  if (!a.task_family.empty()) cfg.task_family = a.task_family;
  if (a.seed >= 0) cfg.seed = static_cast<uint64_t>(a.seed);
  if (!a.objective.empty()) {
    if (a.objective == "contrastive") cfg.objective = Objective::Contrastive;
    else if (a.objective == "classify") cfg.objective = Objective::Classify;
    else throw ConfigError("objective must be contrastive|classify");
  }
  if (a.ib) cfg.ib = true;
  if (!a.distractors.empty()) cfg.distractors = a.distractors;
  if (a.examples > 0) cfg.examples_per_task = a.examples;
  if (a.epochs > 0) cfg.epochs = a.epochs;
  if (a.k > 0) cfg.k = a.k;
  if (a.group_size > 0) cfg.group_size = a.group_size;
  if (a.top > 0) cfg.top_k = a.top;
  if (a.threads > 0) cfg.threads = a.threads;
  if (!a.out.empty()) cfg.out_dir = a.out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BabyARC relation discovery pipeline"};
  app.require_subcommand(1);
  CliArgs a;

  auto* gen = app.add_subcommand("gen", "generate train + validation datasets");
  auto* train = app.add_subcommand("train", "train the CR-GNN");
  auto* eval = app.add_subcommand("eval", "relation accuracy report");
  auto* retrieve = app.add_subcommand("retrieve", "task MCS retrieval report");
  auto* exp = app.add_subcommand("export", "export relation embeddings CSV");
  for (auto* cmd : {gen, train, eval, retrieve, exp}) add_common(cmd, a);
  for (auto* cmd : {eval, retrieve, exp}) {
    cmd->add_option("--checkpoint", a.checkpoint, "trained checkpoint")->required();
    cmd->add_option("--data", a.data, "dataset JSONL (default <out>/val.jsonl)");
  }
  exp->add_option("--csv", a.export_csv, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = resolve(a);
    std::filesystem::path data =
        a.data.empty() ? cfg.out_dir / "val.jsonl" : std::filesystem::path(a.data);
    if (gen->parsed()) {
      cmd_gen(cfg);
      std::cout << "wrote " << (cfg.out_dir / "train.jsonl").string() << " and "
                << (cfg.out_dir / "val.jsonl").string() << "\n";
    } else if (train->parsed()) {
      auto r = cmd_train(cfg);
      std::cout << "best validation relation accuracy " << r.best_val_accuracy
                << " at epoch " << r.best_epoch << " (" << r.epochs_run
                << " epochs run)\n";
    } else if (eval->parsed()) {
      auto r = cmd_eval(cfg, a.checkpoint, data);
      std::cout << "relation accuracy " << r.accuracy << " over "
                << r.labeled_pairs << " labeled pairs\n";
    } else if (retrieve->parsed()) {
      auto r = cmd_retrieve(cfg, a.checkpoint, data);
      for (const auto& tr : r) {
        std::cout << "Task " << tr.task_id << ":\n";
        for (const auto& e : tr.entries)
          std::cout << "  Count: " << e.count << ", MCS: "
                    << format_relgraph(e.graph) << "\n";
      }
    } else if (exp->parsed()) {
      cmd_export(cfg, a.checkpoint, data, a.export_csv);
      std::cout << "wrote " << a.export_csv << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << e.what() << "\n";
    return kExitData;
  } catch (const NumericFailure& e) {
    std::cerr << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
