#include "tmn/scene.hpp"

#include <stdexcept>

#include "tmn/rng.hpp"

namespace tmn {

std::string to_string(ObjShape s) {
  switch (s) {
    case ObjShape::Cube: return "cube";
    case ObjShape::Sphere: return "sphere";
    case ObjShape::Cylinder: return "cylinder";
  }
  return "?";
}
std::string to_string(ObjColor c) {
  switch (c) {
    case ObjColor::Red: return "red";
    case ObjColor::Blue: return "blue";
    case ObjColor::Green: return "green";
    case ObjColor::Yellow: return "yellow";
  }
  return "?";
}
std::string to_string(ObjSize s) { return s == ObjSize::Small ? "small" : "large"; }
std::string to_string(ObjMaterial m) { return m == ObjMaterial::Metal ? "metal" : "rubber"; }

ObjShape shape_from_string(const std::string& s) {
  if (s == "cube") return ObjShape::Cube;
  if (s == "sphere") return ObjShape::Sphere;
  if (s == "cylinder") return ObjShape::Cylinder;
  throw std::invalid_argument("scene: unknown shape '" + s + "'");
}
ObjColor color_from_string(const std::string& s) {
  if (s == "red") return ObjColor::Red;
  if (s == "blue") return ObjColor::Blue;
  if (s == "green") return ObjColor::Green;
  if (s == "yellow") return ObjColor::Yellow;
  throw std::invalid_argument("scene: unknown color '" + s + "'");
}
ObjSize size_from_string(const std::string& s) {
  if (s == "small") return ObjSize::Small;
  if (s == "large") return ObjSize::Large;
  throw std::invalid_argument("scene: unknown size '" + s + "'");
}
ObjMaterial material_from_string(const std::string& s) {
  if (s == "metal") return ObjMaterial::Metal;
  if (s == "rubber") return ObjMaterial::Rubber;
  throw std::invalid_argument("scene: unknown material '" + s + "'");
}

SceneConstraints cogent_condition_a() {
  SceneConstraints c;
  const int cube = static_cast<int>(ObjShape::Cube);
  const int sphere = static_cast<int>(ObjShape::Sphere);
  const int cylinder = static_cast<int>(ObjShape::Cylinder);
  c.allowed_pairs = {{cube, static_cast<int>(ObjColor::Red)},      {cube, static_cast<int>(ObjColor::Blue)},
                     {sphere, static_cast<int>(ObjColor::Green)},  {sphere, static_cast<int>(ObjColor::Yellow)},
                     {cylinder, static_cast<int>(ObjColor::Red)},  {cylinder, static_cast<int>(ObjColor::Blue)},
                     {cylinder, static_cast<int>(ObjColor::Green)}, {cylinder, static_cast<int>(ObjColor::Yellow)}};
  return c;
}

SceneConstraints cogent_condition_b() {
  SceneConstraints c;
  const int cube = static_cast<int>(ObjShape::Cube);
  const int sphere = static_cast<int>(ObjShape::Sphere);
  const int cylinder = static_cast<int>(ObjShape::Cylinder);
  c.allowed_pairs = {{cube, static_cast<int>(ObjColor::Green)},   {cube, static_cast<int>(ObjColor::Yellow)},
                     {sphere, static_cast<int>(ObjColor::Red)},   {sphere, static_cast<int>(ObjColor::Blue)},
                     {cylinder, static_cast<int>(ObjColor::Red)}, {cylinder, static_cast<int>(ObjColor::Blue)},
                     {cylinder, static_cast<int>(ObjColor::Green)}, {cylinder, static_cast<int>(ObjColor::Yellow)}};
  return c;
}

Scene generate_scene(std::mt19937_64& rng, const SceneConstraints& constraints, int h, int w) {
  if (h < 1 || w < 1) throw std::invalid_argument("scene: grid must be at least 1x1");
  std::vector<std::pair<int, int>> pairs;
  for (int s = 0; s < kNumShapes; ++s)
    for (int c = 0; c < kNumColors; ++c)
      if (constraints.allows(static_cast<ObjShape>(s), static_cast<ObjColor>(c))) pairs.emplace_back(s, c);
  if (pairs.empty()) throw std::invalid_argument("scene: constraints leave no allowed shape/color pair");

  int n_objects = constraints.exact_objects
                      ? *constraints.exact_objects
                      : constraints.min_objects +
                            static_cast<int>(uniform_int(rng, constraints.max_objects - constraints.min_objects + 1));
  n_objects = std::min(n_objects, h * w);

  Scene scene(h, w);
  std::vector<int> slots(static_cast<size_t>(h * w));
  for (size_t i = 0; i < slots.size(); ++i) slots[i] = static_cast<int>(i);
  for (size_t i = slots.size(); i > 1; --i)
    std::swap(slots[i - 1], slots[static_cast<size_t>(uniform_int(rng, static_cast<int64_t>(i)))]);

  for (int k = 0; k < n_objects; ++k) {
    const auto [s, c] = pairs[static_cast<size_t>(uniform_int(rng, static_cast<int64_t>(pairs.size())))];
    Object obj;
    obj.shape = static_cast<ObjShape>(s);
    obj.color = static_cast<ObjColor>(c);
    obj.size = static_cast<ObjSize>(uniform_int(rng, kNumSizes));
    obj.material = static_cast<ObjMaterial>(uniform_int(rng, kNumMaterials));
    scene.cells[static_cast<size_t>(slots[static_cast<size_t>(k)])] = obj;
  }
  return scene;
}

std::vector<float> featurize(const Scene& scene) {
  std::vector<float> out(static_cast<size_t>(scene.h * scene.w * kFeatureDim), 0.0f);
  for (int i = 0; i < scene.h * scene.w; ++i) {
    const auto& cell = scene.cells[static_cast<size_t>(i)];
    if (!cell) continue;
    float* f = out.data() + static_cast<size_t>(i) * kFeatureDim;
    f[static_cast<int>(cell->shape)] = 1.0f;
    f[kNumShapes + static_cast<int>(cell->color)] = 1.0f;
    f[kNumShapes + kNumColors + static_cast<int>(cell->size)] = 1.0f;
    f[kNumShapes + kNumColors + kNumSizes + static_cast<int>(cell->material)] = 1.0f;
    f[kFeatureDim - 1] = 1.0f;  // presence
  }
  return out;
}

}  // namespace tmn
