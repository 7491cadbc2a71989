#pragma once

// Grid-world scenes: each cell is empty or holds one object with four
// attributes. Featurization is a lossless per-cell one-hot stack.

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace tmn {

enum class ObjShape : uint8_t { Cube, Sphere, Cylinder };
enum class ObjColor : uint8_t { Red, Blue, Green, Yellow };
enum class ObjSize : uint8_t { Small, Large };
enum class ObjMaterial : uint8_t { Metal, Rubber };

constexpr int kNumShapes = 3;
constexpr int kNumColors = 4;
constexpr int kNumSizes = 2;
constexpr int kNumMaterials = 2;

std::string to_string(ObjShape s);
std::string to_string(ObjColor c);
std::string to_string(ObjSize s);
std::string to_string(ObjMaterial m);
ObjShape shape_from_string(const std::string& s);
ObjColor color_from_string(const std::string& s);
ObjSize size_from_string(const std::string& s);
ObjMaterial material_from_string(const std::string& s);

struct Object {
  ObjShape shape = ObjShape::Cube;
  ObjColor color = ObjColor::Red;
  ObjSize size = ObjSize::Small;
  ObjMaterial material = ObjMaterial::Metal;

  bool operator==(const Object&) const = default;
};

struct Scene {
  int h = 5;
  int w = 5;
  std::vector<std::optional<Object>> cells;  // h*w, row-major

  Scene() = default;
  Scene(int height, int width) : h(height), w(width), cells(static_cast<size_t>(height * width)) {}

  const std::optional<Object>& at(int r, int c) const { return cells[static_cast<size_t>(r * w + c)]; }
  std::optional<Object>& at(int r, int c) { return cells[static_cast<size_t>(r * w + c)]; }
  int object_count() const {
    int n = 0;
    for (const auto& c : cells) n += c.has_value();
    return n;
  }
  std::vector<int> object_cells() const {
    std::vector<int> out;
    for (size_t i = 0; i < cells.size(); ++i)
      if (cells[i]) out.push_back(static_cast<int>(i));
    return out;
  }
  bool operator==(const Scene&) const = default;
};

struct SceneConstraints {
  // allowed (shape, color) pairs; empty means every combination is allowed
  std::set<std::pair<int, int>> allowed_pairs;
  int min_objects = 2;
  int max_objects = 8;
  std::optional<int> exact_objects;

  bool allows(ObjShape s, ObjColor c) const {
    return allowed_pairs.empty() ||
           allowed_pairs.count({static_cast<int>(s), static_cast<int>(c)}) > 0;
  }
};

// the published-style inverted conditions: cubes and spheres swap color
// halves, cylinders stay unconstrained
SceneConstraints cogent_condition_a();
SceneConstraints cogent_condition_b();

Scene generate_scene(std::mt19937_64& rng, const SceneConstraints& constraints = {}, int h = 5, int w = 5);

constexpr int kFeatureDim = kNumShapes + kNumColors + kNumSizes + kNumMaterials + 1;  // 12

// [h*w*kFeatureDim] row-major; empty cells are all-zero
std::vector<float> featurize(const Scene& scene);

}  // namespace tmn
