#pragma once

#include <span>
#include <string>

#include "omlab/detector.hpp"
#include "omlab/training.hpp"

namespace omlab {

/// Model file: "OMMODEL1", uint64 LE header length, JSON header (config,
/// seed, basis, section table, blob digest), then float64 LE sections.
std::string serialize_model(const Detector& model);
Detector deserialize_model(const std::string& bytes);

void save_model(const Detector& model, const std::string& path);
Detector load_model(const std::string& path);

/// One JSON object per line.
void write_training_log(std::span<const EpochLog> log, const std::string& path);

}  // namespace omlab
