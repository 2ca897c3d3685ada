#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "virel/scene.hpp"

namespace virel {

struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error("DataError: " + m) {}
};

// JSON Lines, one record per observation.
void write_dataset(const std::vector<Observation>& obs,
                   const std::filesystem::path& path);
std::vector<Observation> read_dataset(const std::filesystem::path& path);

// Training view of a record: grid + masks + task id only. The evaluation-only
// fields (edges, object attributes, core flags) are stripped at load time.
struct TrainObs {
  std::array<std::array<uint8_t, kGrid>, kGrid> grid{};
  std::vector<Mask> masks;
  int task_id = 0;
  int obs_id = 0;
  int n_objects() const { return static_cast<int>(masks.size()); }
};

std::vector<TrainObs> read_dataset_for_training(const std::filesystem::path& path);
TrainObs strip_for_training(const Observation& o);

// Task-family config file: {"tasks":[{"task_id","n_core","relations"}]}.
std::vector<TaskSpec> read_task_family(const std::filesystem::path& path);
void write_task_family(const std::vector<TaskSpec>& tasks,
                       const std::filesystem::path& path);

}  // namespace virel
