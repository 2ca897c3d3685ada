#include "virel/dataset.hpp"

#include <fstream>

#include "json.hpp"

namespace virel {

using json = nlohmann::ordered_json;

namespace {

json grid_to_json(const std::array<std::array<uint8_t, kGrid>, kGrid>& g) {
  json rows = json::array();
  for (int r = 0; r < kGrid; ++r) {
    json row = json::array();
    for (int c = 0; c < kGrid; ++c) row.push_back(static_cast<int>(g[r][c]));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <class G>
void grid_from_json(const json& j, G& g) {
  if (!j.is_array() || j.size() != kGrid) throw DataError("bad grid dimensions");
  for (int r = 0; r < kGrid; ++r)
    for (int c = 0; c < kGrid; ++c)
      g[r][c] = static_cast<uint8_t>(j[r][c].get<int>());
}

json record_to_json(const Observation& o) {
  json rec;
  rec["schema_version"] = 1;
  rec["task_id"] = o.task_id;
  rec["obs_id"] = o.obs_id;
  rec["grid"] = grid_to_json(o.grid);
  json masks = json::array();
  for (const auto& obj : o.objects) masks.push_back(grid_to_json(obj.mask));
  rec["masks"] = std::move(masks);
  json objs = json::array();
  for (const auto& obj : o.objects)
    objs.push_back({{"shape", to_string(obj.shape)},
                    {"color", obj.color},
                    {"is_core", obj.is_core}});
  rec["objects"] = std::move(objs);
  json edges = json::array();
  for (const auto& e : o.edges)
    edges.push_back(json::array({e.k, e.l, to_string(e.rel)}));
  rec["edges"] = std::move(edges);
  return rec;
}

json parse_record(const std::string& line, int lineno) {
  json rec;
  try {
    rec = json::parse(line);
  } catch (const std::exception& e) {
    throw DataError("line " + std::to_string(lineno) + ": " + e.what());
  }
  if (!rec.contains("schema_version") || rec["schema_version"].get<int>() != 1)
    throw DataError("line " + std::to_string(lineno) +
                    ": unsupported schema_version");
  return rec;
}

}  // namespace

void write_dataset(const std::vector<Observation>& obs,
                   const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  for (const auto& o : obs) f << record_to_json(o).dump() << "\n";
  if (!f) throw DataError("write failure on " + path.string());
}

std::vector<Observation> read_dataset(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path.string());
  std::vector<Observation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec = parse_record(line, lineno);
    Observation o;
    o.task_id = rec["task_id"].get<int>();
    o.obs_id = rec["obs_id"].get<int>();
    grid_from_json(rec["grid"], o.grid);
    const auto& masks = rec["masks"];
    const auto& objs = rec["objects"];
    if (masks.size() != objs.size())
      throw DataError("line " + std::to_string(lineno) + ": masks/objects mismatch");
    for (size_t i = 0; i < masks.size(); ++i) {
      SceneObject obj;
      grid_from_json(masks[i], obj.mask);
      obj.bbox = bbox_of(obj.mask);
      obj.shape = shape_from_string(objs[i]["shape"].get<std::string>());
      obj.color = objs[i]["color"].get<int>();
      obj.is_core = objs[i]["is_core"].get<bool>();
      o.objects.push_back(std::move(obj));
    }
    for (const auto& e : rec["edges"])
      o.edges.push_back({e[0].get<int>(), e[1].get<int>(),
                         relation_from_string(e[2].get<std::string>())});
    out.push_back(std::move(o));
  }
  return out;
}

TrainObs strip_for_training(const Observation& o) {
  TrainObs t;
  t.grid = o.grid;
  t.task_id = o.task_id;
  t.obs_id = o.obs_id;
  for (const auto& obj : o.objects) t.masks.push_back(obj.mask);
  return t;
}

std::vector<TrainObs> read_dataset_for_training(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path.string());
  std::vector<TrainObs> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec = parse_record(line, lineno);
    TrainObs t;
    t.task_id = rec["task_id"].get<int>();
    t.obs_id = rec["obs_id"].get<int>();
    grid_from_json(rec["grid"], t.grid);
    for (const auto& m : rec["masks"]) {
      Mask mask;
      grid_from_json(m, mask);
      t.masks.push_back(mask);
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<TaskSpec> read_task_family(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read task family " + path.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const std::exception& e) {
    throw DataError("task family " + path.string() + ": " + e.what());
  }
  if (!doc.contains("tasks")) throw DataError("task family missing 'tasks'");
  std::vector<TaskSpec> out;
  for (const auto& t : doc["tasks"]) {
    TaskSpec spec;
    spec.task_id = t["task_id"].get<int>();
    spec.n_core = t["n_core"].get<int>();
    for (const auto& r : t["relations"]) {
      Edge e;
      e.k = r[0][0].get<int>();
      e.l = r[0][1].get<int>();
      e.rel = relation_from_string(r[1].get<std::string>());
      if (e.k >= spec.n_core || e.l >= spec.n_core)
        throw DataError("task " + std::to_string(spec.task_id) +
                        ": relation index out of range");
      spec.relations.push_back(e);
    }
    out.push_back(std::move(spec));
  }
  return out;
}

void write_task_family(const std::vector<TaskSpec>& tasks,
                       const std::filesystem::path& path) {
  json doc;
  json arr = json::array();
  for (const auto& t : tasks) {
    json rels = json::array();
    for (const auto& e : t.relations)
      rels.push_back(json::array({json::array({e.k, e.l}), to_string(e.rel)}));
    arr.push_back({{"task_id", t.task_id},
                   {"n_core", t.n_core},
                   {"relations", std::move(rels)}});
  }
  doc["tasks"] = std::move(arr);
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << doc.dump(2) << "\n";
}

}  // namespace virel
