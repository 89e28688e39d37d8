#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace omlab::cli {

struct GenDataArgs {
  std::uint64_t seed = 0;
  std::size_t scenes = 0;
  std::size_t first_index = 0;
  std::optional<std::size_t> classes;
  std::optional<double> delta;
  std::string config;
  std::string out;
};

struct TrainArgs {
  std::string config;
  std::optional<std::string> head;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string data;
  std::string out;
};

struct EvalArgs {
  std::string config;
  std::string model;
  std::string data;
  std::string out;
};

struct AbStudyArgs {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string train_data;
  std::string test_data;
  std::string out;
};

struct ExportFeaturesArgs {
  std::string config;
  std::string model;
  std::string data;
  std::string out;
};

struct ExportBasisArgs {
  std::string model;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& args);
int cmd_train(const TrainArgs& args);
int cmd_eval(const EvalArgs& args);
int cmd_ab_study(const AbStudyArgs& args);
int cmd_export_features(const ExportFeaturesArgs& args);
int cmd_export_basis(const ExportBasisArgs& args);

}  // namespace omlab::cli
