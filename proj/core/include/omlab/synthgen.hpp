#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "omlab/array.hpp"
#include "omlab/box.hpp"

namespace omlab {

/// Shape families; subclasses inside a family differ by one continuous
/// parameter whose spacing is the confusability delta.
enum class ShapeKind { kEllipse = 0, kStripedRect = 1, kNotchedDisk = 2 };
inline constexpr std::size_t kShapeKinds = 3;

struct GenConfig {
  std::size_t image_size = 64;
  std::size_t families = 3;
  std::size_t subclasses = 3;
  double delta = 0.08;
  std::size_t min_objects = 0;
  std::size_t max_objects = 6;
  double min_size = 12.0;
  double max_size = 22.0;
  /// Half-width of the uniform parameter jitter, as a fraction of delta.
  double jitter = 0.25;
  double noise_sigma = 0.03;
  /// Mean count of unannotated background blobs per scene.
  double clutter = 4.0;

  std::size_t classes() const noexcept { return families * subclasses; }
  /// Throws ContractError on an infeasible configuration.
  void validate() const;

  nlohmann::json to_json() const;
  /// Rejects unknown keys; missing keys keep their defaults.
  static GenConfig from_json(const nlohmann::json& j);
  /// Family/subclass split for a class count (3 families when divisible).
  static GenConfig for_classes(std::size_t classes);
};

struct Annotation {
  Box box;
  int class_id = 0;
  int family_id = 0;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Scene {
  std::size_t id = 0;
  std::uint64_t seed = 0;
  Array image;  // [3,S,S], values in [0,1]
  std::vector<Annotation> annotations;
};

/// Geometry of one rendered object, kept for diagnostics.
struct ShapeInstance {
  ShapeKind kind;
  double cx, cy, size, param, intensity;
};

struct SceneRender {
  Scene scene;
  std::vector<ShapeInstance> shapes;
  Array coverage;  // [S,S] max object coverage per pixel, noise free
};

SceneRender generate_scene_detailed(std::uint64_t seed, const GenConfig& config);
Scene generate_scene(std::uint64_t seed, const GenConfig& config);

/// Fraction of pixels whose object coverage is at least one half.
double foreground_fraction(const SceneRender& render);

/// Noise-free, jitter-free object of (family, subclass) centred on a blank
/// canvas; used to measure how far apart subclasses are.
Array render_template(std::size_t family, std::size_t subclass, double delta, double size = 20.0,
                      std::size_t canvas = 32);

struct DatasetManifest {
  static constexpr int kFormatVersion = 1;

  int version = kFormatVersion;
  std::uint64_t seed = 0;
  std::size_t first_index = 0;
  std::size_t scene_count = 0;
  GenConfig gen;
  std::string content_hash;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Scene> scenes;
};

/// Scenes first_index .. first_index+count-1 of the stream keyed by `seed`.
Dataset generate_dataset(const GenConfig& config, std::uint64_t seed, std::size_t count,
                         std::size_t first_index = 0);

/// Writes manifest.json, annotations.jsonl and images/scene_NNNNNN.omds.
/// Returns the manifest with content_hash filled in.
DatasetManifest write_dataset(const Dataset& dataset, const std::string& dir);
Dataset read_dataset(const std::string& dir);

}  // namespace omlab
