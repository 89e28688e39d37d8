#pragma once

// Seeded generators for property tests.

#include <cstdint>
#include <vector>

#include "omlab/array.hpp"
#include "omlab/box.hpp"
#include "omlab/inference.hpp"
#include "omlab/random.hpp"
#include "omlab/synthgen.hpp"

namespace omlab::gen {

inline Array uniform_array(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Array a(std::move(shape));
  for (double& v : a.data) v = rng.uniform(lo, hi);
  return a;
}

/// Values bounded away from zero so relu/abs kinks are not probed.
inline Array away_from_zero(Rng& rng, Shape shape, double margin = 0.05) {
  Array a(std::move(shape));
  for (double& v : a.data) {
    const double m = rng.uniform(margin, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return a;
}

inline Box random_box(Rng& rng, double extent = 64.0, double min_side = 2.0, double max_side = 24.0) {
  const double w = rng.uniform(min_side, max_side), h = rng.uniform(min_side, max_side);
  const double x = rng.uniform(0.0, extent - w), y = rng.uniform(0.0, extent - h);
  return {x, y, x + w, y + h};
}

/// Clustered boxes so that overlaps actually occur.
inline std::vector<Detection> random_detections(Rng& rng, std::size_t count, int classes, double extent = 40.0) {
  std::vector<Detection> out;
  for (std::size_t i = 0; i < count; ++i) {
    Detection d;
    d.box = random_box(rng, extent, 6.0, 18.0);
    d.class_id = static_cast<int>(rng.uniform_int(0, classes - 1));
    // Coarse scores create exact ties.
    d.score = static_cast<double>(rng.uniform_int(1, 10)) / 10.0;
    d.location = i;
    out.push_back(d);
  }
  return out;
}

inline std::vector<Annotation> random_annotations(Rng& rng, std::size_t count, int classes, double extent = 40.0) {
  std::vector<Annotation> out;
  for (std::size_t i = 0; i < count; ++i) {
    const int c = static_cast<int>(rng.uniform_int(0, classes - 1));
    out.push_back({random_box(rng, extent, 6.0, 18.0), c, c / 3});
  }
  return out;
}

}  // namespace omlab::gen
