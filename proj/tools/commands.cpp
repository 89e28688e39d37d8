#include "commands.hpp"

#include <filesystem>
#include <iostream>

#include "omlab/error.hpp"
#include "omlab/experiment.hpp"
#include "omlab/model_io.hpp"
#include "omlab/ortho_head.hpp"

namespace omlab::cli {

namespace fs = std::filesystem;

namespace {

ExperimentConfig load_config(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : ExperimentConfig::load(path);
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

}  // namespace

int cmd_gen_data(const GenDataArgs& args) {
  ExperimentConfig cfg = load_config(args.config);
  GenConfig gen = cfg.gen;
  if (args.classes) {
    const GenConfig split = GenConfig::for_classes(*args.classes);
    gen.families = split.families;
    gen.subclasses = split.subclasses;
  }
  if (args.delta) gen.delta = *args.delta;
  gen.validate();
  if (args.scenes == 0) throw ContractError("--scenes must be positive");
  make_dir(args.out);
  const Dataset ds = generate_dataset(gen, args.seed, args.scenes, args.first_index);
  const DatasetManifest m = write_dataset(ds, args.out);
  std::cout << m.to_json().dump(2) << "\n";
  return 0;
}

int cmd_train(const TrainArgs& args) {
  ExperimentConfig cfg = load_config(args.config);
  if (args.head) cfg.detector.head = parse_head_kind(*args.head);
  if (args.seed) cfg.detector.seed = *args.seed;
  if (args.epochs) {
    cfg.detector.optimizer.epochs = *args.epochs;
    std::erase_if(cfg.detector.optimizer.decay_epochs, [&](std::size_t e) { return e >= *args.epochs; });
  }
  const std::string out = args.out.empty() ? cfg.output_dir : args.out;
  cfg.output_dir = out;
  Dataset train_set;
  if (!args.data.empty()) {
    train_set = read_dataset(args.data);
    cfg.gen = train_set.manifest.gen;
  }
  cfg.validate();
  if (args.data.empty()) train_set = make_train_split(cfg);
  make_dir(out);
  write_resolved_config(cfg, out);
  TrainOptions options;
  options.on_epoch = [](const EpochLog& e) { std::cerr << e.to_json().dump() << "\n"; };
  TrainResult trained = train(train_set.scenes, cfg.detector, options);
  save_model(trained.model, (fs::path(out) / "model.bin").string());
  write_training_log(trained.log, (fs::path(out) / "train_log.jsonl").string());
  const EpochLog& last = trained.log.back();
  std::cout << "final losses: cls=" << last.loss_cls << " reg=" << last.loss_reg << " ctr=" << last.loss_ctr
            << " aux=" << last.loss_aux << "\n"
            << "model written to " << (fs::path(out) / "model.bin").string() << "\n";
  return 0;
}

int cmd_eval(const EvalArgs& args) {
  ExperimentConfig cfg = load_config(args.config);
  const Detector model = load_model(args.model);
  cfg.detector = model.config();
  Dataset test_set;
  if (args.data.empty()) {
    test_set = make_test_split(cfg);
  } else {
    test_set = read_dataset(args.data);
    cfg.gen = test_set.manifest.gen;
  }
  const std::string out = args.out.empty() ? cfg.output_dir : args.out;
  cfg.output_dir = out;
  cfg.validate();
  make_dir(out);
  write_resolved_config(cfg, out);
  const EvalReport report = run_eval(cfg, model, test_set, out);
  for (const auto& w : report.ap.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "mAP@0.5 = " << report.ap.map << "\n";
  return 0;
}

int cmd_ab_study(const AbStudyArgs& args) {
  ExperimentConfig cfg = load_config(args.config);
  if (!args.seeds.empty()) cfg.seeds = args.seeds;
  const std::string out = args.out.empty() ? cfg.output_dir : args.out;
  cfg.output_dir = out;
  Dataset train_set = args.train_data.empty() ? Dataset{} : read_dataset(args.train_data);
  Dataset test_set = args.test_data.empty() ? Dataset{} : read_dataset(args.test_data);
  if (!args.train_data.empty()) cfg.gen = train_set.manifest.gen;
  cfg.validate();
  if (args.train_data.empty()) train_set = make_train_split(cfg);
  if (args.test_data.empty()) test_set = make_test_split(cfg);
  make_dir(out);
  const StudySummary s = ab_study(cfg, cfg.seeds, train_set, test_set, out,
                                  [](const std::string& line) { std::cerr << line << "\n"; });
  std::cout << s.to_json().dump(2) << "\n";
  return 0;
}

int cmd_export_features(const ExportFeaturesArgs& args) {
  ExperimentConfig cfg = load_config(args.config);
  const Detector model = load_model(args.model);
  cfg.detector = model.config();
  const Dataset ds = args.data.empty() ? make_test_split(cfg) : read_dataset(args.data);
  const std::size_t rows = export_features(model, ds.scenes, args.out, cfg.eval);
  std::cout << rows << " feature rows written to " << args.out << "\n";
  return 0;
}

int cmd_export_basis(const ExportBasisArgs& args) {
  const Detector model = load_model(args.model);
  if (!model.basis()) throw ContractError("model has head '" + to_string(model.config().head) + "' and no basis");
  write_basis_json(*model.basis(), args.out);
  std::cout << "basis [" << model.basis()->classes() << "x" << model.basis()->dim() << "] written to " << args.out
            << "\n";
  return 0;
}

}  // namespace omlab::cli
