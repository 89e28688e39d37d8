// omlab: data generation, training, evaluation and the om/linear study.
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "omlab/error.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

}  // namespace

int main(int argc, char** argv) {
  using namespace omlab::cli;
  CLI::App app{"Orthogonal-mapping detection lab"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed")->required();
  gen_cmd->add_option("--scenes", gen.scenes, "Number of scenes")->required();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--classes", gen.classes, "Class count (multiple of 3)");
  gen_cmd->add_option("--delta", gen.delta, "Subclass confusability");
  gen_cmd->add_option("--first-index", gen.first_index, "Index of the first scene in the seed's stream");
  gen_cmd->add_option("--config", gen.config, "Experiment config (gen section is used)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a detector");
  train_cmd->add_option("--config", tr.config, "Experiment config file");
  train_cmd->add_option("--head", tr.head, "om | linear | om_softmax | linear_softmax");
  train_cmd->add_option("--seed", tr.seed, "Model seed");
  train_cmd->add_option("--epochs", tr.epochs, "Override the epoch count");
  train_cmd->add_option("--data", tr.data, "Training dataset directory (default: generate from config)");
  train_cmd->add_option("--out", tr.out, "Output directory (default: config output_dir)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained model");
  eval_cmd->add_option("--model", ev.model, "Model file")->required();
  eval_cmd->add_option("--data", ev.data, "Test dataset directory (default: generate from config)");
  eval_cmd->add_option("--config", ev.config, "Experiment config file");
  eval_cmd->add_option("--out", ev.out, "Output directory (default: config output_dir)");

  AbStudyArgs ab;
  auto* ab_cmd = app.add_subcommand("ab-study", "Paired om vs linear study over seeds");
  ab_cmd->add_option("--config", ab.config, "Experiment config file");
  ab_cmd->add_option("--seeds", ab.seeds, "Model seeds")->delimiter(',');
  ab_cmd->add_option("--train-data", ab.train_data, "Training dataset directory");
  ab_cmd->add_option("--test-data", ab.test_data, "Test dataset directory");
  ab_cmd->add_option("--out", ab.out, "Output directory (default: config output_dir)");

  ExportFeaturesArgs ef;
  auto* ef_cmd = app.add_subcommand("export-features", "Write classifier-input features at positive locations");
  ef_cmd->add_option("--model", ef.model, "Model file")->required();
  ef_cmd->add_option("--data", ef.data, "Dataset directory (default: config test split)");
  ef_cmd->add_option("--config", ef.config, "Experiment config file");
  ef_cmd->add_option("--out", ef.out, "CSV path")->required();

  ExportBasisArgs eb;
  auto* eb_cmd = app.add_subcommand("export-basis", "Write the frozen orthogonal basis as JSON");
  eb_cmd->add_option("--model", eb.model, "Model file")->required();
  eb_cmd->add_option("--out", eb.out, "JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen);
    if (train_cmd->parsed()) return cmd_train(tr);
    if (eval_cmd->parsed()) return cmd_eval(ev);
    if (ab_cmd->parsed()) return cmd_ab_study(ab);
    if (ef_cmd->parsed()) return cmd_export_features(ef);
    if (eb_cmd->parsed()) return cmd_export_basis(eb);
  } catch (const omlab::ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const omlab::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const omlab::FormatError& e) {
    std::cerr << "format error (" << omlab::to_string(e.code()) << "): " << e.what() << "\n";
    return kExitIo;
  } catch (const omlab::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const omlab::DegeneracyError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}
