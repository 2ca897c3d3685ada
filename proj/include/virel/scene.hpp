#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "virel/rng.hpp"

namespace virel {

constexpr int kGrid = 16;
constexpr int kColors = 9;

enum class ShapeKind { RectSolid, Rect, LShape, Line };
enum class RelationType { None, SameShape, SameColor, Inside };

std::string to_string(ShapeKind k);
std::string to_string(RelationType r);
ShapeKind shape_from_string(const std::string& s);
RelationType relation_from_string(const std::string& s);

using Mask = std::array<std::array<uint8_t, kGrid>, kGrid>;

struct BBox {
  int row = 0, col = 0, height = 0, width = 0;
};

struct SceneObject {
  ShapeKind shape = ShapeKind::RectSolid;
  int color = 1;  // 1..9, 0 is the empty cell
  Mask mask{};
  BBox bbox;
  bool is_core = true;
};

struct Edge {
  int k = 0, l = 0;  // k < l
  RelationType rel = RelationType::None;
  auto operator<=>(const Edge&) const = default;
};

struct Observation {
  std::array<std::array<uint8_t, kGrid>, kGrid> grid{};
  std::vector<SceneObject> objects;
  int task_id = 0;
  int obs_id = 0;
  std::vector<Edge> edges;  // ground truth over core indices, k < l
};

struct TaskSpec {
  int task_id = 0;
  int n_core = 0;
  std::vector<Edge> relations;

  // Relations implied by the listed ones: equal-color and equal-shape
  // constraints are transitive, so e.g. two same-color edges sharing an
  // object force a third. The closure is what the oracle actually sees on a
  // generated scene, with inside > same-color > same-shape precedence.
  std::vector<Edge> closure() const;
};

struct GenerationExhausted : std::runtime_error {
  explicit GenerationExhausted(const std::string& m)
      : std::runtime_error("GenerationExhausted: " + m) {}
};
struct TooManyObjects : std::runtime_error {
  explicit TooManyObjects(int n, int max)
      : std::runtime_error("TooManyObjects: " + std::to_string(n) + " > " +
                           std::to_string(max)) {}
};

RelationType relation_oracle(const SceneObject& a, const SceneObject& b);

Observation generate_observation(const TaskSpec& spec, int n_distractors,
                                 Rng& rng, int max_attempts = 1000);

Observation augment_observation(const Observation& o, Rng& rng);

// Per-object one-hot slabs, [n, 9, 16, 16] flattened row-major; cell covered
// by object k with color c sets (k, c-1, row, col) to 1.
template <class T>
std::vector<T> render_input(const Observation& o, int max_objects) {
  int n = static_cast<int>(o.objects.size());
  if (n > max_objects) throw TooManyObjects(n, max_objects);
  std::vector<T> out(static_cast<size_t>(max_objects) * kColors * kGrid * kGrid,
                     T(0));
  for (int k = 0; k < n; ++k) {
    const auto& obj = o.objects[k];
    int ch = obj.color - 1;
    for (int r = 0; r < kGrid; ++r)
      for (int c = 0; c < kGrid; ++c)
        if (obj.mask[r][c])
          out[((static_cast<size_t>(k) * kColors + ch) * kGrid + r) * kGrid + c] =
              T(1);
  }
  return out;
}

// Helpers shared with tests.
BBox bbox_of(const Mask& m);
bool masks_overlap(const Mask& a, const Mask& b);
// Interior cells of a hollow rectangle (empty for other shapes).
Mask interior_of(const SceneObject& o);

}  // namespace virel
