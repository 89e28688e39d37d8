#include "omlab/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "binary_io.hpp"
#include "json_util.hpp"
#include "omlab/error.hpp"
#include "omlab/hash.hpp"
#include "omlab/model_io.hpp"

namespace omlab {

namespace fs = std::filesystem;

void ExperimentConfig::validate() const {
  gen.validate();
  detector.validate();
  eval.validate();
  if (gen.classes() != detector.classes) {
    throw ContractError("config: gen produces " + std::to_string(gen.classes()) + " classes but detector.classes=" +
                        std::to_string(detector.classes));
  }
  if (gen.image_size != detector.image_size) throw ContractError("config: gen.image_size != detector.image_size");
  if (data.train_scenes == 0) throw ContractError("config: data.train_scenes must be positive");
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"data", {{"seed", data.seed}, {"train_scenes", data.train_scenes}, {"test_scenes", data.test_scenes}}},
          {"gen", gen.to_json()},
          {"detector", detector.to_json()},
          {"eval", eval.to_json()},
          {"seeds", seeds},
          {"output_dir", output_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  jsonutil::check_keys(j, {"data", "gen", "detector", "eval", "seeds", "output_dir"}, "config");
  ExperimentConfig c;
  if (auto it = j.find("data"); it != j.end()) {
    jsonutil::check_keys(*it, {"seed", "train_scenes", "test_scenes"}, "data");
    jsonutil::read_opt(*it, "seed", c.data.seed, "data");
    jsonutil::read_opt(*it, "train_scenes", c.data.train_scenes, "data");
    jsonutil::read_opt(*it, "test_scenes", c.data.test_scenes, "data");
  }
  if (auto it = j.find("gen"); it != j.end()) c.gen = GenConfig::from_json(*it);
  if (auto it = j.find("detector"); it != j.end()) c.detector = DetectorConfig::from_json(*it);
  if (auto it = j.find("eval"); it != j.end()) c.eval = EvalConfig::from_json(*it);
  jsonutil::read_opt(j, "seeds", c.seeds, "config");
  jsonutil::read_opt(j, "output_dir", c.output_dir, "config");
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  const std::string text = binio::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Code::kParse, path + ": " + e.what());
  }
  return from_json(j);
}

std::string ExperimentConfig::hash() const {
  nlohmann::json j = to_json();
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

void write_resolved_config(const ExperimentConfig& config, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
  binio::write_file((fs::path(dir) / "config.json").string(), config.to_json().dump(2) + "\n");
  binio::write_file((fs::path(dir) / "config.sha256").string(), config.hash() + "\n");
}

Dataset make_train_split(const ExperimentConfig& config) {
  return generate_dataset(config.gen, config.data.seed, config.data.train_scenes, 0);
}

Dataset make_test_split(const ExperimentConfig& config) {
  return generate_dataset(config.gen, config.data.seed, config.data.test_scenes, config.data.train_scenes);
}

nlohmann::json run_metadata(const ExperimentConfig& config, const DetectorConfig& detector, const Dataset& test) {
  return {{"config_hash", config.hash()},
          {"head", to_string(detector.head)},
          {"aux", to_string(detector.aux)},
          {"model_seed", detector.seed},
          {"data_seed", test.manifest.seed},
          {"test_first_index", test.manifest.first_index},
          {"test_scenes", test.scenes.size()}};
}

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

}  // namespace

EvalReport run_eval(const ExperimentConfig& config, const Detector& model, const Dataset& test_set,
                    const std::string& out_dir) {
  EvalArtifacts art = evaluate(model, test_set.scenes, config.eval, config.gen.subclasses,
                               run_metadata(config, model.config(), test_set));
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    binio::write_file((fs::path(out_dir) / "metrics.json").string(), art.report.to_json().dump(2) + "\n");
    binio::write_file((fs::path(out_dir) / "confusion.csv").string(), art.report.confusion.to_csv());
  }
  return std::move(art.report);
}

RunSummary run_single(const ExperimentConfig& config, HeadKind head, std::uint64_t seed, const Dataset& train_set,
                      const Dataset& test_set, const std::string& out_dir,
                      const std::function<void(const EpochLog&)>& on_epoch) {
  ExperimentConfig run_cfg = config;
  run_cfg.detector.head = head;
  run_cfg.detector.seed = seed;
  run_cfg.validate();
  if (!out_dir.empty()) write_resolved_config(run_cfg, out_dir);
  TrainOptions options;
  options.on_epoch = on_epoch;
  TrainResult trained = train(train_set.scenes, run_cfg.detector, options);
  if (!out_dir.empty()) {
    save_model(trained.model, (fs::path(out_dir) / "model.bin").string());
    write_training_log(trained.log, (fs::path(out_dir) / "train_log.jsonl").string());
  }
  RunSummary s;
  s.head = head;
  s.seed = seed;
  s.log = trained.log;
  s.report = run_eval(run_cfg, trained.model, test_set, out_dir);
  s.map = s.report.ap.map;
  // Undefined (fewer than two classes with true positives) stays NaN, never 0.
  s.inter_cos = s.report.orthogonality.has_inter ? s.report.orthogonality.inter_abs_cos
                                                  : std::numeric_limits<double>::quiet_NaN();
  s.family_confusion = s.report.family_confusion;
  return s;
}

nlohmann::json StudyRecord::to_json() const {
  return {{"seed", seed},
          {"map_om", map_om},
          {"map_linear", map_linear},
          {"inter_cos_om", inter_cos_om},
          {"inter_cos_linear", inter_cos_linear},
          {"family_confusion_om", family_confusion_om},
          {"family_confusion_linear", family_confusion_linear}};
}

nlohmann::json StudySummary::to_json() const {
  nlohmann::json recs = nlohmann::json::array();
  double m[6] = {0, 0, 0, 0, 0, 0};
  for (const auto& r : records) {
    recs.push_back(r.to_json());
    const double v[6] = {r.map_om, r.map_linear, r.inter_cos_om, r.inter_cos_linear, r.family_confusion_om,
                         r.family_confusion_linear};
    for (int i = 0; i < 6; ++i) m[i] += v[i];
  }
  const double n = records.empty() ? 1.0 : static_cast<double>(records.size());
  return {{"records", recs},
          {"mean",
           {{"map_om", m[0] / n},
            {"map_linear", m[1] / n},
            {"inter_cos_om", m[2] / n},
            {"inter_cos_linear", m[3] / n},
            {"family_confusion_om", m[4] / n},
            {"family_confusion_linear", m[5] / n}}}};
}

StudySummary ab_study(const ExperimentConfig& config, std::span<const std::uint64_t> seeds, const Dataset& train_set,
                      const Dataset& test_set, const std::string& out_dir,
                      const std::function<void(const std::string&)>& progress) {
  if (seeds.empty()) throw ContractError("ab_study: no seeds");
  StudySummary summary;
  for (std::uint64_t seed : seeds) {
    StudyRecord rec;
    rec.seed = seed;
    for (HeadKind head : {HeadKind::kOm, HeadKind::kLinear}) {
      const std::string dir =
          out_dir.empty() ? std::string() : (fs::path(out_dir) / ("seed_" + std::to_string(seed)) / to_string(head)).string();
      const RunSummary s = run_single(config, head, seed, train_set, test_set, dir);
      if (head == HeadKind::kOm) {
        rec.map_om = s.map;
        rec.inter_cos_om = s.inter_cos;
        rec.family_confusion_om = s.family_confusion;
      } else {
        rec.map_linear = s.map;
        rec.inter_cos_linear = s.inter_cos;
        rec.family_confusion_linear = s.family_confusion;
      }
      if (progress) {
        std::ostringstream os;
        os << "seed " << seed << " head " << to_string(head) << ": mAP=" << s.map << " inter|cos|=" << s.inter_cos
           << " family_confusion=" << s.family_confusion;
        progress(os.str());
      }
    }
    summary.records.push_back(rec);
  }
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_resolved_config(config, out_dir);
    nlohmann::json j = summary.to_json();
    j["config_hash"] = config.hash();
    binio::write_file((fs::path(out_dir) / "summary.json").string(), j.dump(2) + "\n");
  }
  return summary;
}

}  // namespace omlab
