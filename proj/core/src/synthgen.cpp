#include "omlab/synthgen.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "json_util.hpp"
#include "omlab/error.hpp"
#include "omlab/hash.hpp"
#include "omlab/random.hpp"

namespace omlab {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

void GenConfig::validate() const {
  if (image_size < 8) throw ContractError("gen: image_size must be >= 8");
  if (families < 1 || families > kShapeKinds) {
    throw ContractError("gen: families must be in [1," + std::to_string(kShapeKinds) + "]");
  }
  if (subclasses < 1) throw ContractError("gen: subclasses must be >= 1");
  if (!(delta > 0.0 && delta <= 0.5)) throw ContractError("gen: delta must be in (0, 0.5]");
  if (min_objects > max_objects) throw ContractError("gen: min_objects > max_objects");
  if (!(min_size >= 4.0 && max_size <= 22.0 && min_size <= max_size)) {
    throw ContractError("gen: object size range must lie in [4, 22]");
  }
  if (static_cast<double>(image_size) < max_size + 2.0) throw ContractError("gen: image too small for objects");
  if (!(jitter >= 0.0 && jitter < 0.5)) throw ContractError("gen: jitter must be in [0, 0.5)");
  if (!(noise_sigma >= 0.0) || !(clutter >= 0.0)) throw ContractError("gen: noise and clutter must be >= 0");
}

nlohmann::json GenConfig::to_json() const {
  return {{"image_size", image_size}, {"families", families},   {"subclasses", subclasses},
          {"delta", delta},           {"min_objects", min_objects}, {"max_objects", max_objects},
          {"min_size", min_size},     {"max_size", max_size},   {"jitter", jitter},
          {"noise_sigma", noise_sigma}, {"clutter", clutter}};
}

GenConfig GenConfig::from_json(const nlohmann::json& j) {
  constexpr std::string_view where = "gen";
  jsonutil::check_keys(j,
                       {"image_size", "families", "subclasses", "delta", "min_objects", "max_objects", "min_size",
                        "max_size", "jitter", "noise_sigma", "clutter"},
                       where);
  GenConfig c;
  jsonutil::read_opt(j, "image_size", c.image_size, where);
  jsonutil::read_opt(j, "families", c.families, where);
  jsonutil::read_opt(j, "subclasses", c.subclasses, where);
  jsonutil::read_opt(j, "delta", c.delta, where);
  jsonutil::read_opt(j, "min_objects", c.min_objects, where);
  jsonutil::read_opt(j, "max_objects", c.max_objects, where);
  jsonutil::read_opt(j, "min_size", c.min_size, where);
  jsonutil::read_opt(j, "max_size", c.max_size, where);
  jsonutil::read_opt(j, "jitter", c.jitter, where);
  jsonutil::read_opt(j, "noise_sigma", c.noise_sigma, where);
  jsonutil::read_opt(j, "clutter", c.clutter, where);
  c.validate();
  return c;
}

GenConfig GenConfig::for_classes(std::size_t classes) {
  GenConfig c;
  if (classes == 0) throw ContractError("gen: classes must be positive");
  if (classes < kShapeKinds) {
    c.families = classes;
    c.subclasses = 1;
  } else if (classes % kShapeKinds == 0) {
    c.families = kShapeKinds;
    c.subclasses = classes / kShapeKinds;
  } else {
    throw ContractError("gen: classes must be a multiple of " + std::to_string(kShapeKinds) + " (got " +
                        std::to_string(classes) + ")");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

constexpr int kSuper = 4;  // supersampling per axis

struct Extent {
  double left, top, right, bottom;  // distances from the centre
};

double notch_angle(double param) { return std::min(param, 0.9) * std::numbers::pi; }
double stripe_contrast(double param) { return std::min(1.5 * param, 0.9); }

Extent shape_extent(ShapeKind kind, double size, double param) {
  const double half = size / 2.0;
  switch (kind) {
    case ShapeKind::kEllipse: {
      const double minor = half / (1.0 + param);
      return {half, minor, half, minor};
    }
    case ShapeKind::kStripedRect:
      return {half, 0.35 * size, half, 0.35 * size};
    case ShapeKind::kNotchedDisk:
      return {half, half * std::cos(notch_angle(param) / 2.0), half, half};
  }
  return {half, half, half, half};
}

/// Object value at offset (dx, dy) from the centre, or a negative number outside.
double shape_value(ShapeKind kind, double size, double param, double intensity, double dx, double dy) {
  const double half = size / 2.0;
  switch (kind) {
    case ShapeKind::kEllipse: {
      const double minor = half / (1.0 + param);
      const double r = (dx / half) * (dx / half) + (dy / minor) * (dy / minor);
      return r <= 1.0 ? intensity : -1.0;
    }
    case ShapeKind::kStripedRect: {
      if (std::abs(dx) > half || std::abs(dy) > 0.35 * size) return -1.0;
      return std::abs(dx) <= size / 6.0 ? intensity * (1.0 - stripe_contrast(param)) : intensity;
    }
    case ShapeKind::kNotchedDisk: {
      if (dx * dx + dy * dy > half * half) return -1.0;
      const double angle = std::atan2(dx, -dy);  // 0 points up
      return std::abs(angle) < notch_angle(param) / 2.0 ? -1.0 : intensity;
    }
  }
  return -1.0;
}

Box shape_box(const ShapeInstance& s) {
  const Extent e = shape_extent(s.kind, s.size, s.param);
  return {std::floor(s.cx - e.left), std::floor(s.cy - e.top), std::ceil(s.cx + e.right),
          std::ceil(s.cy + e.bottom)};
}

/// Blends the shape into `canvas` ([S,S]) and records coverage.
void rasterize(const ShapeInstance& s, std::size_t side, std::vector<double>& canvas, std::vector<double>& coverage) {
  const Box b = shape_box(s);
  const auto x0 = static_cast<std::ptrdiff_t>(std::max(0.0, b.x1));
  const auto y0 = static_cast<std::ptrdiff_t>(std::max(0.0, b.y1));
  const auto x1 = static_cast<std::ptrdiff_t>(std::min(static_cast<double>(side), b.x2));
  const auto y1 = static_cast<std::ptrdiff_t>(std::min(static_cast<double>(side), b.y2));
  constexpr double inv = 1.0 / (kSuper * kSuper);
  for (std::ptrdiff_t py = y0; py < y1; ++py) {
    for (std::ptrdiff_t px = x0; px < x1; ++px) {
      double cov = 0.0, val = 0.0;
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx) {
          const double x = static_cast<double>(px) + (sx + 0.5) / kSuper;
          const double y = static_cast<double>(py) + (sy + 0.5) / kSuper;
          const double v = shape_value(s.kind, s.size, s.param, s.intensity, x - s.cx, y - s.cy);
          if (v >= 0.0) {
            cov += inv;
            val += v * inv;
          }
        }
      if (cov <= 0.0) continue;
      const std::size_t idx = static_cast<std::size_t>(py) * side + static_cast<std::size_t>(px);
      canvas[idx] = canvas[idx] * (1.0 - cov) + val;
      coverage[idx] = std::max(coverage[idx], cov);
    }
  }
}

}  // namespace

SceneRender generate_scene_detailed(std::uint64_t seed, const GenConfig& config) {
  config.validate();
  Rng rng(seed);
  const std::size_t side = config.image_size;
  const double fside = static_cast<double>(side);
  std::vector<double> canvas(side * side), coverage(side * side, 0.0);

  // Background: base level, a gentle linear ramp and unannotated blobs.
  const double base = rng.uniform(0.2, 0.3);
  const double gx = rng.uniform(-0.05, 0.05), gy = rng.uniform(-0.05, 0.05);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      canvas[y * side + x] = base + gx * (static_cast<double>(x) / fside - 0.5) +
                             gy * (static_cast<double>(y) / fside - 0.5);
    }
  const auto blobs = rng.uniform_int(0, static_cast<std::int64_t>(std::llround(2.0 * config.clutter)));
  for (std::int64_t i = 0; i < blobs; ++i) {
    const double bx = rng.uniform(0.0, fside), by = rng.uniform(0.0, fside);
    const double sigma = rng.uniform(1.0, 2.5), amp = rng.uniform(-0.12, 0.15);
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - bx, dy = static_cast<double>(y) + 0.5 - by;
        canvas[y * side + x] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
  }

  SceneRender out;
  out.scene.seed = seed;
  const auto count = rng.uniform_int(static_cast<std::int64_t>(config.min_objects),
                                     static_cast<std::int64_t>(config.max_objects));
  constexpr int kPlacementTries = 30;
  for (std::int64_t n = 0; n < count; ++n) {
    const auto class_id = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(config.classes()) - 1));
    const auto family = static_cast<std::size_t>(class_id) / config.subclasses;
    const auto sub = static_cast<std::size_t>(class_id) % config.subclasses;
    ShapeInstance s{};
    s.kind = static_cast<ShapeKind>(family % kShapeKinds);
    s.param = (static_cast<double>(sub) + 1.0 + rng.uniform(-config.jitter, config.jitter)) * config.delta;
    s.size = rng.uniform(config.min_size, config.max_size);
    s.intensity = rng.uniform(0.65, 0.8);
    const Extent e = shape_extent(s.kind, s.size, s.param);
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementTries && !placed; ++attempt) {
      s.cx = rng.uniform(e.left, fside - e.right);
      s.cy = rng.uniform(e.top, fside - e.bottom);
      const Box candidate = shape_box(s);
      placed = std::none_of(out.scene.annotations.begin(), out.scene.annotations.end(),
                            [&](const Annotation& a) {
                              return candidate.x1 < a.box.x2 && a.box.x1 < candidate.x2 &&
                                     candidate.y1 < a.box.y2 && a.box.y1 < candidate.y2;
                            });
    }
    if (!placed) continue;
    out.scene.annotations.push_back({shape_box(s), class_id, static_cast<int>(family)});
    out.shapes.push_back(s);
    rasterize(s, side, canvas, coverage);
  }

  Array image(Shape{3, side, side});
  for (std::size_t i = 0; i < side * side; ++i) {
    double v = canvas[i] + config.noise_sigma * rng.normal();
    v = std::clamp(v, 0.0, 1.0);
    // Stored as float32 on disk; quantize here so memory and disk agree exactly.
    v = static_cast<double>(static_cast<float>(v));
    for (std::size_t c = 0; c < 3; ++c) image[c * side * side + i] = v;
  }
  out.scene.image = std::move(image);
  out.coverage = Array(Shape{side, side}, std::move(coverage));
  return out;
}

Scene generate_scene(std::uint64_t seed, const GenConfig& config) {
  return generate_scene_detailed(seed, config).scene;
}

double foreground_fraction(const SceneRender& render) {
  std::size_t fg = 0;
  for (double c : render.coverage.data) fg += c >= 0.5 ? 1 : 0;
  return static_cast<double>(fg) / static_cast<double>(render.coverage.size());
}

Array render_template(std::size_t family, std::size_t subclass, double delta, double size, std::size_t canvas) {
  ShapeInstance s{};
  s.kind = static_cast<ShapeKind>(family % kShapeKinds);
  s.param = (static_cast<double>(subclass) + 1.0) * delta;
  s.size = size;
  s.intensity = 0.75;
  s.cx = s.cy = static_cast<double>(canvas) / 2.0;
  std::vector<double> pixels(canvas * canvas, 0.0), coverage(canvas * canvas, 0.0);
  rasterize(s, canvas, pixels, coverage);
  return Array(Shape{canvas, canvas}, std::move(pixels));
}

// ---------------------------------------------------------------------------
// Dataset

nlohmann::json DatasetManifest::to_json() const {
  return {{"format", "omds"},
          {"version", version},
          {"seed", seed},
          {"first_index", first_index},
          {"scene_count", scene_count},
          {"classes", gen.classes()},
          {"families", gen.families},
          {"subclasses", gen.subclasses},
          {"delta", gen.delta},
          {"gen", gen.to_json()},
          {"content_hash", content_hash}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    if (j.at("format").get<std::string>() != "omds") {
      throw FormatError(FormatError::Code::kBadMagic, "manifest: not an omds dataset");
    }
    m.version = j.at("version").get<int>();
    if (m.version != kFormatVersion) {
      throw FormatError(FormatError::Code::kVersionMismatch,
                        "manifest: version " + std::to_string(m.version) + ", expected " +
                            std::to_string(kFormatVersion));
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    m.first_index = j.at("first_index").get<std::size_t>();
    m.scene_count = j.at("scene_count").get<std::size_t>();
    m.gen = GenConfig::from_json(j.at("gen"));
    m.content_hash = j.at("content_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Code::kParse, std::string("manifest: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(FormatError::Code::kParse, std::string("manifest: ") + e.what());
  }
  return m;
}

Dataset generate_dataset(const GenConfig& config, std::uint64_t seed, std::size_t count, std::size_t first_index) {
  config.validate();
  Dataset d;
  d.manifest.seed = seed;
  d.manifest.first_index = first_index;
  d.manifest.scene_count = count;
  d.manifest.gen = config;
  d.scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t index = first_index + i;
    Scene s = generate_scene(mix_seed(seed, index), config);
    s.id = index;
    d.scenes.push_back(std::move(s));
  }
  return d;
}

namespace {

constexpr char kImageMagic[] = "OMDS1";
constexpr std::size_t kMagicLen = 5;
constexpr std::size_t kHeaderLen = kMagicLen + 3 * sizeof(std::uint32_t);

std::string image_name(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06zu.omds", id);
  return buf;
}

std::string encode_image(const Array& image) {
  std::string out(kImageMagic, kMagicLen);
  for (std::size_t d : image.shape) binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + image.size() * sizeof(float));
  for (double v : image.data) binio::put<float>(out, static_cast<float>(v));
  return out;
}

Array decode_image(const std::string& bytes, const std::string& path) {
  if (bytes.size() < kHeaderLen) throw FormatError(FormatError::Code::kTruncated, path + ": truncated header");
  if (bytes.compare(0, kMagicLen, kImageMagic) != 0) {
    throw FormatError(FormatError::Code::kBadMagic, path + ": bad magic");
  }
  Shape shape(3);
  for (std::size_t i = 0; i < 3; ++i) shape[i] = binio::get<std::uint32_t>(bytes, kMagicLen + 4 * i);
  const std::size_t count = numel(shape);
  if (bytes.size() < kHeaderLen + count * sizeof(float)) {
    throw FormatError(FormatError::Code::kTruncated, path + ": truncated pixel data");
  }
  if (bytes.size() != kHeaderLen + count * sizeof(float)) {
    throw FormatError(FormatError::Code::kParse, path + ": trailing bytes");
  }
  Array image(shape);
  for (std::size_t i = 0; i < count; ++i) {
    image[i] = static_cast<double>(binio::get<float>(bytes, kHeaderLen + i * sizeof(float)));
  }
  return image;
}

std::string encode_annotations(const Scene& s) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const Annotation& a : s.annotations) boxes.push_back({a.box.x1, a.box.y1, a.box.x2, a.box.y2, a.class_id});
  return nlohmann::json{{"scene_id", s.id}, {"boxes", std::move(boxes)}}.dump();
}

}  // namespace

DatasetManifest write_dataset(const Dataset& dataset, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  Sha256 hash;
  std::string annotations;
  for (const Scene& s : dataset.scenes) {
    const std::string bytes = encode_image(s.image);
    binio::write_file((fs::path(dir) / "images" / image_name(s.id)).string(), bytes);
    hash.update(bytes);
    annotations += encode_annotations(s);
    annotations += '\n';
  }
  binio::write_file((fs::path(dir) / "annotations.jsonl").string(), annotations);
  hash.update(annotations);
  DatasetManifest manifest = dataset.manifest;
  manifest.scene_count = dataset.scenes.size();
  manifest.content_hash = hash.hex_digest();
  binio::write_file((fs::path(dir) / "manifest.json").string(), manifest.to_json().dump(2) + "\n");
  return manifest;
}

Dataset read_dataset(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  nlohmann::json mj;
  try {
    mj = nlohmann::json::parse(binio::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Code::kParse, manifest_path + ": " + e.what());
  }
  Dataset d;
  d.manifest = DatasetManifest::from_json(mj);
  const GenConfig& gen = d.manifest.gen;

  Sha256 hash;
  d.scenes.resize(d.manifest.scene_count);
  for (std::size_t i = 0; i < d.manifest.scene_count; ++i) {
    Scene& s = d.scenes[i];
    s.id = d.manifest.first_index + i;
    s.seed = mix_seed(d.manifest.seed, s.id);
    const std::string path = (fs::path(dir) / "images" / image_name(s.id)).string();
    const std::string bytes = binio::read_file(path);
    s.image = decode_image(bytes, path);
    hash.update(bytes);
  }

  const std::string ann_path = (fs::path(dir) / "annotations.jsonl").string();
  const std::string annotations = binio::read_file(ann_path);
  hash.update(annotations);
  std::istringstream lines(annotations);
  std::string line;
  std::size_t row = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    if (row >= d.scenes.size()) throw FormatError(FormatError::Code::kParse, ann_path + ": too many records");
    try {
      const auto rec = nlohmann::json::parse(line);
      Scene& s = d.scenes[row];
      if (rec.at("scene_id").get<std::size_t>() != s.id) {
        throw FormatError(FormatError::Code::kParse, ann_path + ": scene_id out of order");
      }
      for (const auto& b : rec.at("boxes")) {
        Annotation a;
        a.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
        a.class_id = b.at(4).get<int>();
        if (a.class_id < 0 || static_cast<std::size_t>(a.class_id) >= gen.classes()) {
          throw FormatError(FormatError::Code::kParse, ann_path + ": class id out of range");
        }
        a.family_id = a.class_id / static_cast<int>(gen.subclasses);
        s.annotations.push_back(a);
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(FormatError::Code::kParse, ann_path + ": " + e.what());
    }
    ++row;
  }
  if (row != d.scenes.size()) throw FormatError(FormatError::Code::kTruncated, ann_path + ": missing records");
  if (hash.hex_digest() != d.manifest.content_hash) {
    throw FormatError(FormatError::Code::kChecksum, dir + ": content hash does not match manifest");
  }
  return d;
}

}  // namespace omlab
