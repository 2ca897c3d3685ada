#include "virel/scene.hpp"

#include <algorithm>
#include <numeric>

namespace virel {

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::RectSolid: return "rect-solid";
    case ShapeKind::Rect: return "rect";
    case ShapeKind::LShape: return "lshape";
    case ShapeKind::Line: return "line";
  }
  return "?";
}

std::string to_string(RelationType r) {
  switch (r) {
    case RelationType::None: return "none";
    case RelationType::SameShape: return "same-shape";
    case RelationType::SameColor: return "same-color";
    case RelationType::Inside: return "inside";
  }
  return "?";
}

ShapeKind shape_from_string(const std::string& s) {
  if (s == "rect-solid") return ShapeKind::RectSolid;
  if (s == "rect") return ShapeKind::Rect;
  if (s == "lshape") return ShapeKind::LShape;
  if (s == "line") return ShapeKind::Line;
  throw std::runtime_error("unknown shape kind: " + s);
}

RelationType relation_from_string(const std::string& s) {
  if (s == "none") return RelationType::None;
  if (s == "same-shape") return RelationType::SameShape;
  if (s == "same-color") return RelationType::SameColor;
  if (s == "inside") return RelationType::Inside;
  throw std::runtime_error("unknown relation: " + s);
}

BBox bbox_of(const Mask& m) {
  int r0 = kGrid, c0 = kGrid, r1 = -1, c1 = -1;
  for (int r = 0; r < kGrid; ++r)
    for (int c = 0; c < kGrid; ++c)
      if (m[r][c]) {
        r0 = std::min(r0, r);
        c0 = std::min(c0, c);
        r1 = std::max(r1, r);
        c1 = std::max(c1, c);
      }
  if (r1 < 0) return {};
  return {r0, c0, r1 - r0 + 1, c1 - c0 + 1};
}

bool masks_overlap(const Mask& a, const Mask& b) {
  for (int r = 0; r < kGrid; ++r)
    for (int c = 0; c < kGrid; ++c)
      if (a[r][c] && b[r][c]) return true;
  return false;
}

Mask interior_of(const SceneObject& o) {
  Mask m{};
  if (o.shape != ShapeKind::Rect) return m;
  const auto& b = o.bbox;
  for (int r = b.row; r < b.row + b.height; ++r)
    for (int c = b.col; c < b.col + b.width; ++c)
      if (!o.mask[r][c]) m[r][c] = 1;
  return m;
}

namespace {

bool bbox_within(const BBox& inner, const Mask& region) {
  if (inner.height == 0) return false;
  for (int r = inner.row; r < inner.row + inner.height; ++r)
    for (int c = inner.col; c < inner.col + inner.width; ++c)
      if (!region[r][c]) return false;
  return true;
}

bool strictly_inside(const SceneObject& inner, const SceneObject& outer) {
  if (outer.shape != ShapeKind::Rect) return false;
  return bbox_within(inner.bbox, interior_of(outer));
}

// Small union-find for core-pair closure.
struct UnionFind {
  std::vector<int> p;
  explicit UnionFind(int n) : p(n) { std::iota(p.begin(), p.end(), 0); }
  int find(int x) { return p[x] == x ? x : p[x] = find(p[x]); }
  void unite(int a, int b) { p[find(a)] = find(b); }
};

}  // namespace

RelationType relation_oracle(const SceneObject& a, const SceneObject& b) {
  if (strictly_inside(a, b) || strictly_inside(b, a)) return RelationType::Inside;
  if (a.color == b.color) return RelationType::SameColor;
  if (a.shape == b.shape) return RelationType::SameShape;
  return RelationType::None;
}

std::vector<Edge> TaskSpec::closure() const {
  UnionFind colors(n_core), shapes(n_core);
  std::vector<std::pair<int, int>> inside_pairs;
  for (const auto& e : relations) {
    if (e.rel == RelationType::SameColor) colors.unite(e.k, e.l);
    if (e.rel == RelationType::SameShape) shapes.unite(e.k, e.l);
    if (e.rel == RelationType::Inside) inside_pairs.emplace_back(e.k, e.l);
  }
  std::vector<Edge> out;
  for (int k = 0; k < n_core; ++k)
    for (int l = k + 1; l < n_core; ++l) {
      bool ins = std::any_of(inside_pairs.begin(), inside_pairs.end(),
                             [&](auto p) { return p.first == k && p.second == l; });
      if (ins)
        out.push_back({k, l, RelationType::Inside});
      else if (colors.find(k) == colors.find(l))
        out.push_back({k, l, RelationType::SameColor});
      else if (shapes.find(k) == shapes.find(l))
        out.push_back({k, l, RelationType::SameShape});
    }
  return out;
}

namespace {

// Shape masks at a position; returns false if out of bounds.
bool paint_shape(ShapeKind kind, int r0, int c0, int h, int w, int variant,
                 Mask& m) {
  m = Mask{};
  if (r0 < 0 || c0 < 0 || r0 + h > kGrid || c0 + w > kGrid) return false;
  switch (kind) {
    case ShapeKind::RectSolid:
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) m[r0 + r][c0 + c] = 1;
      return true;
    case ShapeKind::Rect:
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          if (r == 0 || r == h - 1 || c == 0 || c == w - 1) m[r0 + r][c0 + c] = 1;
      return true;
    case ShapeKind::LShape:
      // Corner at one of four positions; 1-cell-thick arms spanning the bbox.
      for (int r = 0; r < h; ++r)
        m[r0 + r][variant % 2 ? c0 + w - 1 : c0] = 1;
      for (int c = 0; c < w; ++c)
        m[variant / 2 ? r0 : r0 + h - 1][c0 + c] = 1;
      return true;
    case ShapeKind::Line:
      if (variant % 2) {
        for (int c = 0; c < w; ++c) m[r0][c0 + c] = 1;
      } else {
        for (int r = 0; r < h; ++r) m[r0 + r][c0] = 1;
      }
      return true;
  }
  return false;
}

struct SizeSpec {
  int h = 0, w = 0, variant = 0;
};

int bounded(Rng& rng, int lo, int hi) {
  return rng.uniform_int(lo, std::max(lo, hi));
}

SizeSpec sample_size(ShapeKind kind, Rng& rng, int max_h, int max_w) {
  SizeSpec s;
  switch (kind) {
    case ShapeKind::RectSolid:
    case ShapeKind::Rect:
      s.h = bounded(rng, 3, std::min(8, max_h));
      s.w = bounded(rng, 3, std::min(8, max_w));
      break;
    case ShapeKind::LShape:
      s.h = bounded(rng, 2, std::min(5, max_h));
      s.w = bounded(rng, 2, std::min(5, max_w));
      s.variant = rng.uniform_int(0, 3);
      break;
    case ShapeKind::Line:
      s.variant = rng.uniform_int(0, 1);
      if (s.variant % 2) {
        s.h = 1;
        s.w = bounded(rng, 3, std::min(8, max_w));
      } else {
        s.h = bounded(rng, 3, std::min(8, max_h));
        s.w = 1;
      }
      break;
  }
  return s;
}

int min_side(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::RectSolid:
    case ShapeKind::Rect: return 3;
    case ShapeKind::LShape: return 2;
    case ShapeKind::Line: return 1;
  }
  return 1;
}

void fill_grid(Observation& o) {
  o.grid = {};
  for (const auto& obj : o.objects)
    for (int r = 0; r < kGrid; ++r)
      for (int c = 0; c < kGrid; ++c)
        if (obj.mask[r][c]) o.grid[r][c] = static_cast<uint8_t>(obj.color);
}

}  // namespace

Observation generate_observation(const TaskSpec& spec, int n_distractors,
                                 Rng& rng, int max_attempts) {
  const int n = spec.n_core;
  auto truth = spec.closure();

  // Attribute classes: each same-color component gets one color, each
  // same-shape component one shape kind; distinct classes get distinct values
  // so no unlisted core relation can appear by accident.
  UnionFind colors(n), shapes(n);
  std::vector<std::pair<int, int>> inside_pairs;  // (inner, container)
  for (const auto& e : spec.relations) {
    if (e.rel == RelationType::SameColor) colors.unite(e.k, e.l);
    if (e.rel == RelationType::SameShape) shapes.unite(e.k, e.l);
    if (e.rel == RelationType::Inside) inside_pairs.emplace_back(e.k, e.l);
  }
  std::vector<int> container_of(n, -1);
  for (auto [inner, cont] : inside_pairs) container_of[inner] = cont;

  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    // Color per color class.
    std::vector<int> palette{1, 2, 3, 4, 5, 6, 7, 8, 9};
    rng.shuffle(palette);
    std::vector<int> class_color(n, -1);
    std::vector<int> obj_color(n);
    int next_color = 0;
    for (int i = 0; i < n; ++i) {
      int root = colors.find(i);
      if (class_color[root] < 0) class_color[root] = palette[next_color++];
      obj_color[i] = class_color[root];
    }

    // Shape kind per shape class; containers force their class to Rect.
    std::vector<ShapeKind> pool{ShapeKind::RectSolid, ShapeKind::Rect,
                                ShapeKind::LShape, ShapeKind::Line};
    rng.shuffle(pool);
    std::vector<int> class_kind(n, -1);
    std::vector<bool> kind_used(4, false);
    bool ok = true;
    for (auto [inner, cont] : inside_pairs) {
      int root = shapes.find(cont);
      int want = static_cast<int>(ShapeKind::Rect);
      if (class_kind[root] >= 0 && class_kind[root] != want) ok = false;
      class_kind[root] = want;
      kind_used[want] = true;
    }
    for (int i = 0; i < n && ok; ++i) {
      int root = shapes.find(i);
      if (class_kind[root] >= 0) continue;
      int pick = -1;
      for (auto k : pool)
        if (!kind_used[static_cast<int>(k)]) {
          pick = static_cast<int>(k);
          break;
        }
      if (pick < 0) {
        ok = false;
        break;
      }
      class_kind[root] = pick;
      kind_used[pick] = true;
    }
    if (!ok) continue;
    std::vector<ShapeKind> obj_kind(n);
    for (int i = 0; i < n; ++i)
      obj_kind[i] = static_cast<ShapeKind>(class_kind[shapes.find(i)]);

    // Placement order: containers before their contents.
    std::vector<int> order;
    std::vector<bool> placed_flag(n, false);
    while (static_cast<int>(order.size()) < n) {
      bool progress = false;
      for (int i = 0; i < n; ++i) {
        if (placed_flag[i]) continue;
        if (container_of[i] >= 0 && !placed_flag[container_of[i]]) continue;
        order.push_back(i);
        placed_flag[i] = true;
        progress = true;
      }
      if (!progress)
        throw GenerationExhausted("cyclic inside constraints in task " +
                                  std::to_string(spec.task_id));
    }

    std::vector<SceneObject> objs(n);
    Mask occupied{};    // cells covered by any placed mask
    Mask forbidden{};   // hollow-rect interiors, off limits to later objects
    bool scene_ok = true;

    auto try_place = [&](SceneObject& obj, int owner_idx, int is_core) -> bool {
      const int tries = 60;
      bool is_container = false;
      if (is_core)
        for (auto [inner, cont] : inside_pairs)
          if (cont == owner_idx) is_container = true;
      for (int t = 0; t < tries; ++t) {
        SizeSpec sz;
        int r0, c0;
        if (is_core && container_of[owner_idx] >= 0) {
          // Must land strictly within the container's interior.
          const auto& cont = objs[container_of[owner_idx]];
          Mask inter = interior_of(cont);
          BBox ib = bbox_of(inter);
          if (ib.height < min_side(obj.shape) || ib.width < 1) return false;
          sz = sample_size(obj.shape, rng, ib.height, ib.width);
          if (sz.h > ib.height || sz.w > ib.width) continue;
          r0 = ib.row + rng.uniform_int(0, ib.height - sz.h);
          c0 = ib.col + rng.uniform_int(0, ib.width - sz.w);
        } else {
          int max_h = kGrid, max_w = kGrid;
          if (is_container) {
            // Leave room for an interior of at least 4x4.
            sz.h = rng.uniform_int(6, 8);
            sz.w = rng.uniform_int(6, 8);
          } else {
            sz = sample_size(obj.shape, rng, max_h, max_w);
          }
          r0 = rng.uniform_int(0, kGrid - sz.h);
          c0 = rng.uniform_int(0, kGrid - sz.w);
        }
        Mask m;
        if (!paint_shape(obj.shape, r0, c0, sz.h, sz.w, sz.variant, m)) continue;
        if (masks_overlap(m, occupied)) continue;
        bool inner_target = is_core && container_of[owner_idx] >= 0;
        if (!inner_target && masks_overlap(m, forbidden)) continue;
        if (inner_target) {
          const auto& cont = objs[container_of[owner_idx]];
          SceneObject probe;
          probe.mask = m;
          probe.bbox = bbox_of(m);
          if (!strictly_inside(probe, cont)) continue;
        }
        // A new hollow rect must not swallow anything already placed.
        if (obj.shape == ShapeKind::Rect) {
          SceneObject probe;
          probe.shape = ShapeKind::Rect;
          probe.mask = m;
          probe.bbox = bbox_of(m);
          if (masks_overlap(interior_of(probe), occupied)) continue;
        }
        obj.mask = m;
        obj.bbox = bbox_of(m);
        for (int r = 0; r < kGrid; ++r)
          for (int c = 0; c < kGrid; ++c) occupied[r][c] |= m[r][c];
        if (obj.shape == ShapeKind::Rect && !(is_core && container_of[owner_idx] >= 0)) {
          Mask inter = interior_of(obj);
          bool keep_open = is_container;
          if (!keep_open)
            for (int r = 0; r < kGrid; ++r)
              for (int c = 0; c < kGrid; ++c) forbidden[r][c] |= inter[r][c];
        }
        return true;
      }
      return false;
    };

    for (int idx : order) {
      objs[idx].shape = obj_kind[idx];
      objs[idx].color = obj_color[idx];
      objs[idx].is_core = true;
      if (!try_place(objs[idx], idx, true)) {
        scene_ok = false;
        break;
      }
    }
    if (!scene_ok) continue;

    // Close container interiors that were left open for their inner object.
    for (auto [inner, cont] : inside_pairs) {
      Mask inter = interior_of(objs[cont]);
      for (int r = 0; r < kGrid; ++r)
        for (int c = 0; c < kGrid; ++c) forbidden[r][c] |= inter[r][c];
    }

    for (int d = 0; d < n_distractors && scene_ok; ++d) {
      SceneObject obj;
      obj.shape = static_cast<ShapeKind>(rng.uniform_int(0, 3));
      obj.color = rng.uniform_int(1, 9);
      obj.is_core = false;
      if (!try_place(obj, -1, false)) scene_ok = false;
      else objs.push_back(obj);
    }
    if (!scene_ok) continue;

    // Verify core truth exactly.
    bool exact = true;
    for (int k = 0; k < n && exact; ++k)
      for (int l = k + 1; l < n && exact; ++l) {
        RelationType got = relation_oracle(objs[k], objs[l]);
        RelationType want = RelationType::None;
        for (const auto& e : truth)
          if (e.k == k && e.l == l) want = e.rel;
        if (got != want) exact = false;
      }
    if (!exact) continue;

    // Shuffle object order so index carries no generator signal.
    std::vector<int> perm(objs.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Observation o;
    o.task_id = spec.task_id;
    std::vector<int> new_index(objs.size());
    for (size_t i = 0; i < perm.size(); ++i) {
      o.objects.push_back(objs[perm[i]]);
      new_index[perm[i]] = static_cast<int>(i);
    }
    for (const auto& e : truth) {
      int a = new_index[e.k], b = new_index[e.l];
      if (a > b) std::swap(a, b);
      o.edges.push_back({a, b, e.rel});
    }
    std::sort(o.edges.begin(), o.edges.end());
    fill_grid(o);
    return o;
  }
  throw GenerationExhausted("task " + std::to_string(spec.task_id) + " after " +
                            std::to_string(max_attempts) + " attempts");
}

namespace {

using CellMap = std::pair<int, int> (*)(int, int);

Mask transform_mask(const Mask& m, CellMap f) {
  Mask out{};
  for (int r = 0; r < kGrid; ++r)
    for (int c = 0; c < kGrid; ++c)
      if (m[r][c]) {
        auto [nr, nc] = f(r, c);
        out[nr][nc] = 1;
      }
  return out;
}

void apply_cellmap(Observation& o, CellMap f) {
  for (auto& obj : o.objects) {
    obj.mask = transform_mask(obj.mask, f);
    obj.bbox = bbox_of(obj.mask);
  }
  fill_grid(o);
}

bool try_resize2(Observation& o) {
  // Scale the scene by 2 about its own bounding box; identity if it spills.
  Mask all{};
  for (const auto& obj : o.objects)
    for (int r = 0; r < kGrid; ++r)
      for (int c = 0; c < kGrid; ++c) all[r][c] |= obj.mask[r][c];
  BBox b = bbox_of(all);
  if (b.height == 0 || b.height * 2 > kGrid || b.width * 2 > kGrid) return false;
  for (auto& obj : o.objects) {
    Mask out{};
    for (int r = 0; r < kGrid; ++r)
      for (int c = 0; c < kGrid; ++c)
        if (obj.mask[r][c]) {
          int nr = (r - b.row) * 2, nc = (c - b.col) * 2;
          out[nr][nc] = out[nr + 1][nc] = out[nr][nc + 1] = out[nr + 1][nc + 1] = 1;
        }
    obj.mask = out;
    obj.bbox = bbox_of(out);
  }
  fill_grid(o);
  return true;
}

}  // namespace

Observation augment_observation(const Observation& o, Rng& rng) {
  Observation out = o;
  if (rng.uniform() >= 0.9) return out;
  int kind = rng.uniform_int(0, 6);
  switch (kind) {
    case 0:  // horizontal flip
      apply_cellmap(out, +[](int r, int c) { return std::pair{r, kGrid - 1 - c}; });
      break;
    case 1:  // vertical flip
      apply_cellmap(out, +[](int r, int c) { return std::pair{kGrid - 1 - r, c}; });
      break;
    case 2:  // 90 degrees
      apply_cellmap(out, +[](int r, int c) { return std::pair{c, kGrid - 1 - r}; });
      break;
    case 3:  // 180
      apply_cellmap(out, +[](int r, int c) {
        return std::pair{kGrid - 1 - r, kGrid - 1 - c};
      });
      break;
    case 4:  // 270
      apply_cellmap(out, +[](int r, int c) { return std::pair{kGrid - 1 - c, r}; });
      break;
    case 5:
      try_resize2(out);  // falls back to identity when it does not fit
      break;
    case 6: {  // global color permutation over 1..9
      std::vector<int> perm{1, 2, 3, 4, 5, 6, 7, 8, 9};
      rng.shuffle(perm);
      for (auto& obj : out.objects) obj.color = perm[obj.color - 1];
      fill_grid(out);
      break;
    }
  }
  return out;
}

}  // namespace virel
